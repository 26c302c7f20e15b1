#pragma once

// Supervised and consistency losses, the Gaussian warm-up weight, and the
// total objective L = L_sup + lambda * (L_fdc + L_mrsc + L_pix).
//
// Consistency terms use the mean over elements (not the sum) of squared
// differences so their scale does not depend on feature or grid sizes.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "frcnet/ops.hpp"

namespace frcnet {

using LabelMap = Tensor<std::uint8_t>;

struct LossWeights {
    double lambda_max = 1.0;
    std::size_t warmup_steps = 1;
    double smooth_eps = 1e-5;

    void validate() const {
        if (!(lambda_max >= 0)) throw ConfigError("loss: lambda_max must be >= 0");
        if (warmup_steps < 1) throw ConfigError("loss: warmup_steps must be >= 1");
        if (!(smooth_eps > 0)) throw ConfigError("loss: smooth_eps must be > 0");
    }
};

inline constexpr double kProbClampLow = 1e-7;
inline constexpr double kProbClampHigh = 1.0 - 1e-7;

/// Mean per-pixel negative log-likelihood of probabilities P (B,H,W,K) at labels y (B,H,W).
template <typename T>
Var<T> cross_entropy_from_probs(const Var<T>& probs, const LabelMap& labels) {
    require_rank(probs.value(), 4, "cross_entropy");
    const std::size_t K = probs.dim(3);
    const std::size_t pixels = probs.size() / K;
    require_shape(labels, Shape{probs.dim(0), probs.dim(1), probs.dim(2)}, "cross_entropy labels");
    T s{0};
    for (std::size_t i = 0; i < pixels; ++i) {
        if (labels[i] >= K) throw DataError("label " + std::to_string(labels[i]) + " out of range for " + std::to_string(K) + " classes");
        const T p = std::clamp(probs.value()[i * K + labels[i]], static_cast<T>(kProbClampLow), static_cast<T>(kProbClampHigh));
        s -= std::log(p);
    }
    const T inv_n = T{1} / static_cast<T>(pixels);
    return make_result<T>(Tensor<T>::scalar(s * inv_n), {probs}, [labels, K, pixels, inv_n](Node<T>& self) {
        Node<T>& pp = self.parent(0);
        if (!pp.requires_grad) return;
        auto& g = pp.ensure_grad();
        for (std::size_t i = 0; i < pixels; ++i) {
            const std::size_t idx = i * K + labels[i];
            const T p = pp.value[idx];
            if (p < static_cast<T>(kProbClampLow) || p > static_cast<T>(kProbClampHigh)) continue;
            g[idx] -= self.grad[0] * inv_n / p;
        }
    });
}

/// Mean over samples of 1 - (2 sum(p*y) + eps) / (sum(p) + sum(y) + eps) on the foreground channel (class 1).
template <typename T>
Var<T> dice_loss(const Var<T>& probs, const LabelMap& labels, T eps) {
    require_rank(probs.value(), 4, "dice_loss");
    const std::size_t B = probs.dim(0), K = probs.dim(3);
    const std::size_t hw = probs.dim(1) * probs.dim(2);
    if (K < 2) throw ShapeError("dice_loss: need a foreground channel (K >= 2)");
    require_shape(labels, Shape{B, probs.dim(1), probs.dim(2)}, "dice_loss labels");
    std::vector<T> inter(B, T{0}), denom(B, T{0});
    T total{0};
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t i = 0; i < hw; ++i) {
            const T p = probs.value()[(b * hw + i) * K + 1];
            const T y = labels[b * hw + i] == 1 ? T{1} : T{0};
            inter[b] += p * y;
            denom[b] += p + y;
        }
        total += T{1} - (T{2} * inter[b] + eps) / (denom[b] + eps);
    }
    const T inv_b = T{1} / static_cast<T>(B);
    return make_result<T>(Tensor<T>::scalar(total * inv_b), {probs},
                          [labels, B, K, hw, eps, inv_b, inter = std::move(inter), denom = std::move(denom)](Node<T>& self) {
                              Node<T>& pp = self.parent(0);
                              if (!pp.requires_grad) return;
                              auto& g = pp.ensure_grad();
                              for (std::size_t b = 0; b < B; ++b) {
                                  const T d = denom[b] + eps;
                                  const T num = T{2} * inter[b] + eps;
                                  for (std::size_t i = 0; i < hw; ++i) {
                                      const T y = labels[b * hw + i] == 1 ? T{1} : T{0};
                                      const T dl = -(T{2} * y * d - num) / (d * d);
                                      g[(b * hw + i) * K + 1] += self.grad[0] * inv_b * dl;
                                  }
                              }
                          });
}

/// (1/2) * mean over samples of [CE + Dice loss].
template <typename T>
Var<T> supervised_loss(const Var<T>& probs, const LabelMap& labels, T eps = T{1e-5}) {
    return scale(add(cross_entropy_from_probs(probs, labels), dice_loss(probs, labels, eps)), T{0.5});
}

/// MSE between teacher and student enhanced frequency features. Teacher is detached.
template <typename T>
Var<T> fdc_loss(const Var<T>& teacher, const Var<T>& student) {
    if (teacher.shape() != student.shape()) throw Error("fdc_loss: shape mismatch");
    return mse(student, teacher.detach());
}

/// Sum over granularities of the MSE between teacher and student Gram matrices.
template <typename T>
Var<T> mrsc_loss(const std::map<std::size_t, Var<T>>& teacher, const std::map<std::size_t, Var<T>>& student) {
    if (teacher.size() != student.size()) throw Error("mrsc_loss: granularity sets differ");
    Var<T> total(Tensor<T>::scalar(T{0}));
    for (const auto& [g, a_s] : student) {
        auto it = teacher.find(g);
        if (it == teacher.end()) throw Error("mrsc_loss: teacher lacks granularity " + std::to_string(g));
        total = add(total, mse(a_s, it->second.detach()));
    }
    return total;
}

/// MSE between teacher and student probability maps. Teacher is detached.
template <typename T>
Var<T> pixel_consistency_loss(const Var<T>& teacher, const Var<T>& student) {
    if (teacher.shape() != student.shape()) throw Error("pixel_consistency_loss: shape mismatch");
    return mse(student, teacher.detach());
}

/// lambda(t) = lambda_max * exp(-5 (1 - min(t, t_max)/t_max)^2).
inline double lambda_schedule(std::size_t step, const LossWeights& w) {
    const double t_max = static_cast<double>(w.warmup_steps);
    const double phase = 1.0 - std::min(static_cast<double>(step), t_max) / t_max;
    return w.lambda_max * std::exp(-5.0 * phase * phase);
}

struct LossReport {
    double sup = 0;
    double fdc = 0;
    double mrsc = 0;
    double pix = 0;
    double total = 0;
    double lambda_t = 0;
};

template <typename T>
struct LossTerms {
    Var<T> sup;
    Var<T> fdc;  // empty Var means the term is disabled
    Var<T> mrsc;
    Var<T> pix;
};

namespace detail {
inline void require_finite(double v, const char* name) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + name + " loss (" + std::to_string(v) + ")");
}
} // namespace detail

/// Total objective and its report. Disabled terms count as zero.
template <typename T>
std::pair<Var<T>, LossReport> total_loss(const LossTerms<T>& terms, double lambda_t) {
    LossReport rep;
    rep.lambda_t = lambda_t;
    auto value_of = [](const Var<T>& v) { return v.size() ? static_cast<double>(v.item()) : 0.0; };
    rep.sup = value_of(terms.sup);
    rep.fdc = value_of(terms.fdc);
    rep.mrsc = value_of(terms.mrsc);
    rep.pix = value_of(terms.pix);
    detail::require_finite(rep.sup, "sup");
    detail::require_finite(rep.fdc, "fdc");
    detail::require_finite(rep.mrsc, "mrsc");
    detail::require_finite(rep.pix, "pix");

    Var<T> consistency(Tensor<T>::scalar(T{0}));
    for (const Var<T>* v : {&terms.fdc, &terms.mrsc, &terms.pix})
        if (v->size()) consistency = add(consistency, *v);
    Var<T> total = add(terms.sup, scale(consistency, static_cast<T>(lambda_t)));
    rep.total = rep.sup + lambda_t * (rep.fdc + rep.mrsc + rep.pix);
    detail::require_finite(rep.total, "total");
    detail::require_finite(static_cast<double>(total.item()), "total");
    return {total, rep};
}

/// Scalar form of the total objective on already-evaluated components.
inline LossReport total_loss(double sup, double fdc, double mrsc, double pix, double lambda_t) {
    detail::require_finite(sup, "sup");
    detail::require_finite(fdc, "fdc");
    detail::require_finite(mrsc, "mrsc");
    detail::require_finite(pix, "pix");
    LossReport rep{sup, fdc, mrsc, pix, sup + lambda_t * (fdc + mrsc + pix), lambda_t};
    return rep;
}

} // namespace frcnet
