#pragma once

// Parameter storage and the small layer vocabulary shared by the backbone,
// the frequency enhancement module and the region projection.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "frcnet/ops.hpp"

namespace frcnet {

enum class ParamGroup { encoder_body, adapters, decoder, seg_head, fem, region };

inline constexpr std::array<ParamGroup, 6> kAllParamGroups = {ParamGroup::encoder_body, ParamGroup::adapters,
                                                              ParamGroup::decoder,      ParamGroup::seg_head,
                                                              ParamGroup::fem,          ParamGroup::region};

inline std::string_view to_string(ParamGroup g) {
    switch (g) {
    case ParamGroup::encoder_body: return "encoder_body";
    case ParamGroup::adapters: return "adapters";
    case ParamGroup::decoder: return "decoder";
    case ParamGroup::seg_head: return "seg_head";
    case ParamGroup::fem: return "fem";
    case ParamGroup::region: return "region";
    }
    return "unknown";
}

inline ParamGroup parse_param_group(std::string_view name) {
    for (ParamGroup g : kAllParamGroups)
        if (to_string(g) == name) return g;
    throw ConfigError("unknown parameter group '" + std::string(name) + "'");
}

template <typename T>
struct Parameter {
    std::string name;
    ParamGroup group;
    Var<T> var;
};

/// Ordered, named parameter collection. Copies are deep: a copied set owns
/// fresh leaf nodes, so a teacher copy never aliases student storage.
template <typename T>
class ParameterSet {
public:
    ParameterSet() = default;
    ParameterSet(const ParameterSet& other) : index_(other.index_) {
        params_.reserve(other.params_.size());
        for (const auto& p : other.params_) params_.push_back({p.name, p.group, Var<T>(p.var.value(), true)});
    }
    ParameterSet& operator=(const ParameterSet& other) {
        if (this != &other) {
            ParameterSet copy(other);
            *this = std::move(copy);
        }
        return *this;
    }
    ParameterSet(ParameterSet&&) noexcept = default;
    ParameterSet& operator=(ParameterSet&&) noexcept = default;

    std::size_t add(std::string name, ParamGroup group, Tensor<T> init) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
        index_[name] = params_.size();
        params_.push_back({std::move(name), group, Var<T>(std::move(init), true)});
        return params_.size() - 1;
    }

    const Var<T>& operator[](std::size_t i) const { return params_[i].var; }
    Var<T>& operator[](std::size_t i) { return params_[i].var; }
    const Parameter<T>& entry(std::size_t i) const { return params_[i]; }
    std::size_t size() const noexcept { return params_.size(); }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
        return it->second;
    }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad() {
        for (auto& p : params_) p.var.zero_grad();
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.var.size();
        return n;
    }

private:
    std::vector<Parameter<T>> params_;
    std::map<std::string, std::size_t> index_;
};

using Rng = std::mt19937_64;

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

// Layers hold indices into a ParameterSet so that structurally identical
// models (student/teacher) share layouts but not storage.

struct LinearLayer {
    std::size_t weight = 0;
    std::size_t bias = 0;
};

struct ConvLayer {
    std::size_t weight = 0;
    std::size_t bias = 0;
    Conv2dOptions options;
};

struct NormLayer {
    std::size_t gamma = 0;
    std::size_t beta = 0;
};

enum class LinearInit { normal_002, he, zeros };

template <typename T>
LinearLayer make_linear(ParameterSet<T>& ps, const std::string& name, ParamGroup group, std::size_t in,
                        std::size_t out, LinearInit init, Rng& rng) {
    Tensor<T> w(Shape{in, out});
    if (init == LinearInit::normal_002) w = normal_tensor<T>(Shape{in, out}, 0.02, rng);
    if (init == LinearInit::he) w = normal_tensor<T>(Shape{in, out}, std::sqrt(2.0 / static_cast<double>(in)), rng);
    LinearLayer l;
    l.weight = ps.add(name + ".weight", group, std::move(w));
    l.bias = ps.add(name + ".bias", group, Tensor<T>(Shape{out}));
    return l;
}

template <typename T>
ConvLayer make_conv(ParameterSet<T>& ps, const std::string& name, ParamGroup group, std::size_t kernel,
                    std::size_t in, std::size_t out, Conv2dOptions opt, Rng& rng) {
    const double fan_in = static_cast<double>(kernel * kernel * in);
    ConvLayer c;
    c.weight = ps.add(name + ".weight", group, normal_tensor<T>(Shape{kernel, kernel, in, out}, std::sqrt(2.0 / fan_in), rng));
    c.bias = ps.add(name + ".bias", group, Tensor<T>(Shape{out}));
    c.options = opt;
    return c;
}

template <typename T>
NormLayer make_norm(ParameterSet<T>& ps, const std::string& name, ParamGroup group, std::size_t width) {
    NormLayer n;
    n.gamma = ps.add(name + ".gamma", group, Tensor<T>(Shape{width}, T{1}));
    n.beta = ps.add(name + ".beta", group, Tensor<T>(Shape{width}));
    return n;
}

template <typename T>
Var<T> apply(const LinearLayer& l, const ParameterSet<T>& ps, const Var<T>& x) {
    return linear(x, ps[l.weight], ps[l.bias]);
}

template <typename T>
Var<T> apply(const ConvLayer& c, const ParameterSet<T>& ps, const Var<T>& x) {
    return conv2d(x, ps[c.weight], ps[c.bias], c.options);
}

template <typename T>
Var<T> apply(const NormLayer& n, const ParameterSet<T>& ps, const Var<T>& x) {
    return layer_norm_last(x, ps[n.gamma], ps[n.beta]);
}

/// Pre-norm transformer block: x + MHSA(LN(x)), then x + MLP(LN(x)).
struct TransformerBlockLayer {
    std::size_t width = 0;
    std::size_t heads = 1;
    NormLayer norm1;
    LinearLayer qkv;
    LinearLayer proj;
    NormLayer norm2;
    LinearLayer fc1;
    LinearLayer fc2;
};

template <typename T>
TransformerBlockLayer make_transformer_block(ParameterSet<T>& ps, const std::string& name, ParamGroup group,
                                             std::size_t width, std::size_t heads, std::size_t mlp_ratio, Rng& rng) {
    if (heads == 0 || width % heads != 0)
        throw ConfigError("transformer block '" + name + "': width " + std::to_string(width) +
                          " not divisible by heads " + std::to_string(heads));
    TransformerBlockLayer b;
    b.width = width;
    b.heads = heads;
    b.norm1 = make_norm(ps, name + ".norm1", group, width);
    b.qkv = make_linear(ps, name + ".qkv", group, width, 3 * width, LinearInit::normal_002, rng);
    b.proj = make_linear(ps, name + ".proj", group, width, width, LinearInit::normal_002, rng);
    b.norm2 = make_norm(ps, name + ".norm2", group, width);
    b.fc1 = make_linear(ps, name + ".fc1", group, width, mlp_ratio * width, LinearInit::normal_002, rng);
    b.fc2 = make_linear(ps, name + ".fc2", group, mlp_ratio * width, width, LinearInit::normal_002, rng);
    return b;
}

/// Multi-head self-attention over tokens x: (B, N, C).
template <typename T>
Var<T> self_attention(const TransformerBlockLayer& blk, const ParameterSet<T>& ps, const Var<T>& x) {
    const std::size_t B = x.dim(0), N = x.dim(1), C = x.dim(2);
    const std::size_t H = blk.heads, D = C / H;
    Var<T> qkv = apply(blk.qkv, ps, x);
    auto heads_first = [&](const Var<T>& t) {
        return reshape(permute(reshape(t, Shape{B, N, H, D}), {0, 2, 1, 3}), Shape{B * H, N, D});
    };
    Var<T> q = heads_first(slice_last(qkv, 0, C));
    Var<T> k = heads_first(slice_last(qkv, C, 2 * C));
    Var<T> v = heads_first(slice_last(qkv, 2 * C, 3 * C));
    Var<T> attn = softmax_last(scale(bmm(q, k, true), T{1} / std::sqrt(static_cast<T>(D))));
    Var<T> ctx = bmm(attn, v);
    ctx = reshape(permute(reshape(ctx, Shape{B, H, N, D}), {0, 2, 1, 3}), Shape{B, N, C});
    return apply(blk.proj, ps, ctx);
}

template <typename T>
Var<T> apply(const TransformerBlockLayer& blk, const ParameterSet<T>& ps, const Var<T>& x) {
    if (x.shape().size() != 3 || x.dim(2) != blk.width)
        throw ShapeError("transformer block: expected (B,N," + std::to_string(blk.width) + "), got " + shape_str(x.shape()));
    Var<T> h = add(x, self_attention(blk, ps, apply(blk.norm1, ps, x)));
    Var<T> m = apply(blk.fc2, ps, gelu(apply(blk.fc1, ps, apply(blk.norm2, ps, h))));
    return add(h, m);
}

} // namespace frcnet
