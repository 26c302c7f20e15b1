#pragma once

// Multi-granularity region features and region-similarity (Gram) matrices.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "frcnet/nn.hpp"

namespace frcnet {

enum class RegionProjection { linear, avg_pool, max_pool, conv };

inline std::string_view to_string(RegionProjection p) {
    switch (p) {
    case RegionProjection::linear: return "linear";
    case RegionProjection::avg_pool: return "avgpool";
    case RegionProjection::max_pool: return "maxpool";
    case RegionProjection::conv: return "conv";
    }
    return "unknown";
}

inline RegionProjection parse_region_projection(std::string_view s) {
    for (auto p : {RegionProjection::linear, RegionProjection::avg_pool, RegionProjection::max_pool, RegionProjection::conv})
        if (to_string(p) == s) return p;
    throw ConfigError("unknown region projection '" + std::string(s) + "' (expected linear|avgpool|maxpool|conv)");
}

struct RegionConfig {
    std::vector<std::size_t> granularities{16, 24, 32};
    RegionProjection projection = RegionProjection::linear;
    bool normalize_rows = false;

    /// `feature_size` is the spatial extent h' (= w') of Z.
    void validate(std::size_t feature_size) const {
        for (std::size_t g : granularities) {
            if (g == 0) throw ConfigError("region: granularity must be >= 1");
            if (projection != RegionProjection::linear && g > feature_size)
                throw ConfigError("region: granularity " + std::to_string(g) + " exceeds feature size " +
                                  std::to_string(feature_size) + " for " + std::string(to_string(projection)));
            if (projection == RegionProjection::conv && feature_size % g != 0)
                throw ConfigError("region: conv projection needs feature size " + std::to_string(feature_size) +
                                  " divisible by granularity " + std::to_string(g));
        }
    }
};

/// Trainable kernels of the conv projection, keyed by granularity.
struct RegionLayers {
    std::map<std::size_t, ConvLayer> conv;
};

template <typename T>
RegionLayers build_region(const RegionConfig& cfg, std::size_t feature_size, std::size_t channels, ParameterSet<T>& ps) {
    cfg.validate(feature_size);
    RegionLayers L;
    if (cfg.projection != RegionProjection::conv) return L;
    for (std::size_t g : cfg.granularities) {
        const std::size_t k = feature_size / g;
        // Starts as a per-channel box filter, i.e. average pooling.
        Tensor<T> w(Shape{k, k, channels, channels});
        for (std::size_t y = 0; y < k; ++y)
            for (std::size_t x = 0; x < k; ++x)
                for (std::size_t c = 0; c < channels; ++c) w.at(y, x, c, c) = T{1} / static_cast<T>(k * k);
        ConvLayer layer;
        layer.weight = ps.add("region.conv_g" + std::to_string(g) + ".weight", ParamGroup::region, std::move(w));
        layer.bias = ps.add("region.conv_g" + std::to_string(g) + ".bias", ParamGroup::region, Tensor<T>(Shape{channels}));
        layer.options = {k, 0};
        L.conv[g] = layer;
    }
    return L;
}

/// R = flatten(Psi_g(Z)): (B, h', w', c') -> (B, g*g, c'), rows ordered y*g + x.
template <typename T>
Var<T> project_regions(const Var<T>& z, std::size_t g, RegionProjection projection, const RegionLayers* layers = nullptr,
                       const ParameterSet<T>* ps = nullptr) {
    require_rank(z.value(), 4, "project_regions");
    if (g == 0) throw ConfigError("project_regions: granularity must be >= 1");
    const std::size_t B = z.dim(0), C = z.dim(3);
    Var<T> grid;
    switch (projection) {
    case RegionProjection::linear: grid = resize_bilinear(z, g, g); break;
    case RegionProjection::avg_pool: grid = adaptive_avg_pool(z, g, g); break;
    case RegionProjection::max_pool: grid = adaptive_max_pool(z, g, g); break;
    case RegionProjection::conv: {
        if (!layers || !ps) throw ConfigError("project_regions: conv projection needs its parameters");
        auto it = layers->conv.find(g);
        if (it == layers->conv.end()) throw ConfigError("project_regions: no conv kernel for granularity " + std::to_string(g));
        grid = apply(it->second, *ps, z);
        if (grid.dim(1) != g || grid.dim(2) != g) throw ShapeError("project_regions: conv did not land on g x g");
        break;
    }
    }
    return reshape(grid, Shape{B, g * g, C});
}

/// Row-wise L2 normalization over the last axis.
template <typename T>
Var<T> l2_normalize_rows(const Var<T>& r, T eps = T{1e-12}) {
    const std::size_t width = r.shape().back();
    const std::size_t rows = r.size() / width;
    Tensor<T> out = r.value();
    std::vector<T> norms(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        T s{0};
        for (std::size_t j = 0; j < width; ++j) s += out[i * width + j] * out[i * width + j];
        norms[i] = std::max(std::sqrt(s), eps);
        for (std::size_t j = 0; j < width; ++j) out[i * width + j] /= norms[i];
    }
    return make_result<T>(std::move(out), {r}, [rows, width, norms = std::move(norms)](Node<T>& self) {
        Node<T>& p = self.parent(0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < rows; ++i) {
            const T* y = self.value.ptr() + i * width;
            const T* gy = self.grad.ptr() + i * width;
            T dot{0};
            for (std::size_t j = 0; j < width; ++j) dot += gy[j] * y[j];
            for (std::size_t j = 0; j < width; ++j) g[i * width + j] += (gy[j] - y[j] * dot) / norms[i];
        }
    });
}

/// A = R R^T per batch element: (B, n, c) -> (B, n, n). Exactly symmetric.
template <typename T>
Var<T> region_similarity(const Var<T>& r) {
    require_rank(r.value(), 3, "region_similarity");
    const std::size_t B = r.dim(0), n = r.dim(1), c = r.dim(2);
    Tensor<T> out(Shape{B, n, n});
    for (std::size_t b = 0; b < B; ++b) {
        const T* R = r.value().ptr() + b * n * c;
        T* A = out.ptr() + b * n * n;
        for (std::size_t i = 0; i < n; ++i) {
            const T* ri = R + i * c;
            for (std::size_t j = i; j < n; ++j) {
                const T* rj = R + j * c;
                T s{0};
                for (std::size_t k = 0; k < c; ++k) s += ri[k] * rj[k];
                A[i * n + j] = s;
                A[j * n + i] = s;
            }
        }
    }
    return make_result<T>(std::move(out), {r}, [B, n, c](Node<T>& self) {
        Node<T>& p = self.parent(0);
        if (!p.requires_grad) return;
        // dR = (dA + dA^T) R
        T* G = p.ensure_grad().ptr();
        for (std::size_t b = 0; b < B; ++b) {
            const T* R = p.value.ptr() + b * n * c;
            const T* GA = self.grad.ptr() + b * n * n;
            T* GR = G + b * n * c;
            for (std::size_t i = 0; i < n; ++i) {
                T* gi = GR + i * c;
                for (std::size_t j = 0; j < n; ++j) {
                    const T w = GA[i * n + j] + GA[j * n + i];
                    if (w == T{0}) continue;
                    const T* rj = R + j * c;
                    for (std::size_t k = 0; k < c; ++k) gi[k] += w * rj[k];
                }
            }
        }
    });
}

/// One Gram matrix per granularity in `cfg.granularities`.
template <typename T>
std::map<std::size_t, Var<T>> multi_granularity_similarities(const Var<T>& z, const RegionConfig& cfg,
                                                             const RegionLayers* layers = nullptr,
                                                             const ParameterSet<T>* ps = nullptr) {
    std::map<std::size_t, Var<T>> out;
    for (std::size_t g : cfg.granularities) {
        Var<T> r = project_regions(z, g, cfg.projection, layers, ps);
        if (cfg.normalize_rows) r = l2_normalize_rows(r);
        out[g] = region_similarity(r);
    }
    return out;
}

} // namespace frcnet
