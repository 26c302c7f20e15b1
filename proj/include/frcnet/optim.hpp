#pragma once

#include <cmath>
#include <vector>

#include "frcnet/nn.hpp"

namespace frcnet {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;

    void validate() const {
        if (!(lr > 0)) throw ConfigError("optimizer: lr must be > 0");
        if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("optimizer: betas must lie in [0,1)");
        if (!(weight_decay >= 0)) throw ConfigError("optimizer: weight_decay must be >= 0");
    }
};

/// Adam with decoupled weight decay over a fixed subset of one ParameterSet.
template <typename T>
class AdamW {
public:
    AdamW(ParameterSet<T>& params, std::vector<std::size_t> indices, AdamWConfig cfg)
        : params_(&params), indices_(std::move(indices)), cfg_(cfg) {
        cfg_.validate();
        if (indices_.empty()) throw ConfigError("optimizer: no trainable parameters selected");
        for (std::size_t i : indices_) {
            if (i >= params.size()) throw ConfigError("optimizer: parameter index out of range");
            m_.emplace_back(params[i].shape());
            v_.emplace_back(params[i].shape());
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        const T lr = static_cast<T>(cfg_.lr), wd = static_cast<T>(cfg_.weight_decay), eps = static_cast<T>(cfg_.eps);
        const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
        for (std::size_t k = 0; k < indices_.size(); ++k) {
            Var<T>& p = (*params_)[indices_[k]];
            Tensor<T>& w = p.mutable_value();
            const Tensor<T>& g = p.grad();
            Tensor<T>& m = m_[k];
            Tensor<T>& v = v_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = b1 * m[i] + (T{1} - b1) * g[i];
                v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
                w[i] -= lr * wd * w[i];
                w[i] -= lr * (m[i] * inv_bc1) / (std::sqrt(v[i] * inv_bc2) + eps);
            }
        }
    }

    void zero_grad() { params_->zero_grad(); }

    /// True if any gradient of the managed parameters is non-finite.
    bool has_nonfinite_grad() const {
        for (std::size_t i : indices_)
            for (T g : (*params_)[i].grad().data())
                if (!std::isfinite(static_cast<double>(g))) return true;
        return false;
    }

    const std::vector<std::size_t>& indices() const noexcept { return indices_; }
    /// Graph nodes the optimizer mutates; used to assert the teacher is never among them.
    std::vector<const Node<T>*> managed_nodes() const {
        std::vector<const Node<T>*> out;
        for (std::size_t i : indices_) out.push_back((*params_)[i].node());
        return out;
    }

    AdamWConfig& config() noexcept { return cfg_; }
    std::size_t step_count() const noexcept { return t_; }
    std::vector<Tensor<T>>& first_moments() noexcept { return m_; }
    std::vector<Tensor<T>>& second_moments() noexcept { return v_; }
    const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
    const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }
    void set_step_count(std::size_t t) noexcept { t_ = t; }

private:
    ParameterSet<T>* params_;
    std::vector<std::size_t> indices_;
    AdamWConfig cfg_;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
    std::size_t t_ = 0;
};

} // namespace frcnet
