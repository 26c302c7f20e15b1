#pragma once

#include <algorithm>
#include <optional>

#include "frcnet/model.hpp"

namespace frcnet {

struct EmaConfig {
    double decay = 0.99;
    // When set, the effective decay is min(decay, (step+1)/(step+10)).
    bool warmup = true;
};

/// Teacher network maintained as an exponential moving average of the student.
template <typename T>
struct TeacherState {
    FrcModel<T> model;
    EmaConfig ema;
    std::size_t step = 0;
};

template <typename T>
TeacherState<T> init_teacher(const FrcModel<T>& student, EmaConfig ema = {}) {
    if (!(ema.decay >= 0.0 && ema.decay < 1.0)) throw ConfigError("ema: decay must lie in [0, 1)");
    return TeacherState<T>{student, ema, 0};
}

inline double effective_ema_decay(const EmaConfig& ema, std::size_t step, std::optional<double> alpha_override) {
    if (alpha_override) return *alpha_override;
    if (!ema.warmup) return ema.decay;
    return std::min(ema.decay, static_cast<double>(step + 1) / static_cast<double>(step + 10));
}

/// theta_t <- a * theta_t + (1 - a) * theta_s for every parameter, frozen ones included.
template <typename T>
void ema_update(TeacherState<T>& teacher, const ParameterSet<T>& student, std::optional<double> alpha_override = {}) {
    ParameterSet<T>& tp = teacher.model.params();
    if (tp.size() != student.size()) throw Error("ema_update: parameter count mismatch");
    const double a = effective_ema_decay(teacher.ema, teacher.step, alpha_override);
    if (!(a >= 0.0 && a < 1.0 + 1e-12)) throw ConfigError("ema_update: decay out of range");
    const T alpha = static_cast<T>(a);
    const T beta = static_cast<T>(1.0 - a);
    for (std::size_t i = 0; i < tp.size(); ++i) {
        Tensor<T>& t = tp[i].mutable_value();
        const Tensor<T>& s = student[i].value();
        if (t.shape() != s.shape() || tp.entry(i).name != student.entry(i).name)
            throw Error("ema_update: parameter '" + student.entry(i).name + "' layout mismatch");
        for (std::size_t k = 0; k < t.size(); ++k) t[k] = alpha * t[k] + beta * s[k];
    }
    ++teacher.step;
}

/// Teacher inference; outputs carry no graph and act as constants in every loss.
template <typename T>
ModelOutputs<T> teacher_forward(const TeacherState<T>& teacher, const Tensor<T>& images, ForwardOptions opt = {}) {
    NoGradGuard guard;
    return teacher.model.forward(images, opt);
}

} // namespace frcnet
