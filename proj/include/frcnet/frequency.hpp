#pragma once

// Block DCT of encoder features and the frequency enhancement module (FEM).
//
// Each non-overlapping p x p patch of every channel is mapped to its
// orthonormal 2-D DCT-II coefficients. Coefficients are ordered by zigzag rank
// (frequency-ascending) and laid out channel-major along the output channel
// axis: out_channel = zigzag_rank * d + in_channel. The first half of the
// channels is the low-frequency component, the second half the high one.

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "frcnet/backbone.hpp"

namespace frcnet {

/// (row, col) frequency pairs of a p x p block in JPEG zigzag order.
inline std::vector<std::pair<std::size_t, std::size_t>> zigzag_order(std::size_t p) {
    std::vector<std::pair<std::size_t, std::size_t>> order;
    order.reserve(p * p);
    for (std::size_t s = 0; s + 1 < 2 * p; ++s) {
        const std::size_t lo = s < p ? 0 : s - p + 1;
        const std::size_t hi = s < p ? s : p - 1;
        if (s % 2 == 1) {
            for (std::size_t r = lo; r <= hi; ++r) order.emplace_back(r, s - r);
        } else {
            for (std::size_t r = hi + 1; r-- > lo;) order.emplace_back(r, s - r);
        }
    }
    return order;
}

/// Orthonormal DCT-II matrix C with C[k][n] = a_k cos(pi (2n+1) k / 2p).
inline std::vector<double> dct_matrix(std::size_t p) {
    std::vector<double> m(p * p);
    for (std::size_t k = 0; k < p; ++k) {
        const double a = k == 0 ? std::sqrt(1.0 / static_cast<double>(p)) : std::sqrt(2.0 / static_cast<double>(p));
        for (std::size_t n = 0; n < p; ++n)
            m[k * p + n] = a * std::cos(std::numbers::pi * (2.0 * static_cast<double>(n) + 1.0) *
                                        static_cast<double>(k) / (2.0 * static_cast<double>(p)));
    }
    return m;
}

namespace detail {

// basis[r][y*p+x] = C[u][y] * C[v][x] for the zigzag pair (u,v) of rank r.
template <typename T>
std::vector<T> zigzag_dct_basis(std::size_t p) {
    const auto c = dct_matrix(p);
    const auto zz = zigzag_order(p);
    std::vector<T> basis(p * p * p * p);
    for (std::size_t r = 0; r < p * p; ++r) {
        const auto [u, v] = zz[r];
        for (std::size_t y = 0; y < p; ++y)
            for (std::size_t x = 0; x < p; ++x)
                basis[r * p * p + y * p + x] = static_cast<T>(c[u * p + y] * c[v * p + x]);
    }
    return basis;
}

} // namespace detail

/// X: (B, h, w, d) -> F_raw: (B, h/p, w/p, p*p*d).
template <typename T>
Var<T> block_dct(const Var<T>& x, std::size_t p) {
    if (x.shape().size() != 4) throw ShapeError("block_dct: expected (B,h,w,d), got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.dim(3);
    if (p == 0 || h % p != 0 || w % p != 0)
        throw ShapeError("block_dct: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by patch size " + std::to_string(p));
    const std::size_t oh = h / p, ow = w / p, pp = p * p, c = pp * d;
    auto basis = detail::zigzag_dct_basis<T>(p);
    Tensor<T> out(Shape{B, oh, ow, c});
    const T* X = x.value().ptr();
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t by = 0; by < oh; ++by)
            for (std::size_t bx = 0; bx < ow; ++bx) {
                T* o = out.ptr() + ((n * oh + by) * ow + bx) * c;
                for (std::size_t r = 0; r < pp; ++r)
                    for (std::size_t y = 0; y < p; ++y)
                        for (std::size_t xx = 0; xx < p; ++xx) {
                            const T bv = basis[r * pp + y * p + xx];
                            const T* src = X + ((n * h + by * p + y) * w + bx * p + xx) * d;
                            T* dst = o + r * d;
                            for (std::size_t ch = 0; ch < d; ++ch) dst[ch] += bv * src[ch];
                        }
            }
    return make_result<T>(std::move(out), {x}, [=, basis = std::move(basis)](Node<T>& self) {
        Node<T>& px = self.parent(0);
        if (!px.requires_grad) return;
        T* G = px.ensure_grad().ptr();
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t by = 0; by < oh; ++by)
                for (std::size_t bx = 0; bx < ow; ++bx) {
                    const T* g = self.grad.ptr() + ((n * oh + by) * ow + bx) * c;
                    for (std::size_t r = 0; r < pp; ++r)
                        for (std::size_t y = 0; y < p; ++y)
                            for (std::size_t xx = 0; xx < p; ++xx) {
                                const T bv = basis[r * pp + y * p + xx];
                                T* dst = G + ((n * h + by * p + y) * w + bx * p + xx) * d;
                                const T* src = g + r * d;
                                for (std::size_t ch = 0; ch < d; ++ch) dst[ch] += bv * src[ch];
                            }
                }
    });
}

/// Splits F_raw along channels into (low, high) halves.
template <typename T>
std::pair<Var<T>, Var<T>> split_low_high(const Var<T>& raw) {
    const std::size_t c = raw.shape().back();
    if (c % 2 != 0) throw ShapeError("split_low_high: odd channel count " + std::to_string(c));
    return {slice_last(raw, 0, c / 2), slice_last(raw, c / 2, c)};
}

// ---------------------------------------------------------------------------
// Frequency enhancement module

struct FemConfig {
    std::size_t patch_size = 2;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
};

struct FemLayers {
    std::size_t grid = 0;  // h/p (= w/p)
    std::size_t width = 0; // c
    std::size_t pos_low = 0;
    std::size_t pos_high = 0;
    TransformerBlockLayer low_block;   // Phi1
    TransformerBlockLayer high_block;  // Phi2
    TransformerBlockLayer fuse_block;  // Phi3
};

/// `feature_size` is h (= w) of X and `channels` its depth d.
template <typename T>
FemLayers build_fem(const FemConfig& cfg, std::size_t feature_size, std::size_t channels, ParameterSet<T>& ps, Rng& rng) {
    const std::size_t p = cfg.patch_size;
    if (p == 0 || feature_size % p != 0)
        throw ConfigError("fem: encoder size " + std::to_string(feature_size) + " not divisible by patch size " +
                          std::to_string(p));
    FemLayers L;
    L.grid = feature_size / p;
    L.width = p * p * channels;
    if (L.width % 2 != 0) throw ConfigError("fem: frequency channel count must be even");
    const std::size_t half = L.width / 2;
    if (half % cfg.heads != 0)
        throw ConfigError("fem: c/2 = " + std::to_string(half) + " not divisible by heads " + std::to_string(cfg.heads));
    L.pos_low = ps.add("fem.pos_low", ParamGroup::fem, normal_tensor<T>(Shape{L.grid, L.grid, half}, 0.02, rng));
    L.pos_high = ps.add("fem.pos_high", ParamGroup::fem, normal_tensor<T>(Shape{L.grid, L.grid, half}, 0.02, rng));
    L.low_block = make_transformer_block(ps, "fem.low", ParamGroup::fem, half, cfg.heads, cfg.mlp_ratio, rng);
    L.high_block = make_transformer_block(ps, "fem.high", ParamGroup::fem, half, cfg.heads, cfg.mlp_ratio, rng);
    L.fuse_block = make_transformer_block(ps, "fem.fuse", ParamGroup::fem, L.width, cfg.heads, cfg.mlp_ratio, rng);
    return L;
}

/// low' = Phi1(F_l + E_l), high' = Phi2(F_h + E_h), F = Phi3([low', high']).
template <typename T>
FrequencyOutputs<T> fem_forward(const Var<T>& low, const Var<T>& high, const FemLayers& L, const ParameterSet<T>& ps) {
    const Shape expected{low.shape().empty() ? 0 : low.dim(0), L.grid, L.grid, L.width / 2};
    if (low.shape() != expected || high.shape() != expected)
        throw ShapeError("fem_forward: expected low/high of shape " + shape_str(expected) + ", got " +
                         shape_str(low.shape()) + " and " + shape_str(high.shape()));
    const std::size_t B = low.dim(0), N = L.grid * L.grid, half = L.width / 2;
    auto tokens = [&](const Var<T>& v, std::size_t width) { return reshape(v, Shape{B, N, width}); };
    auto grid = [&](const Var<T>& v, std::size_t width) { return reshape(v, Shape{B, L.grid, L.grid, width}); };

    FrequencyOutputs<T> out;
    Var<T> lo = apply(L.low_block, ps, tokens(add_trailing(low, ps[L.pos_low]), half));
    Var<T> hi = apply(L.high_block, ps, tokens(add_trailing(high, ps[L.pos_high]), half));
    Var<T> fused = apply(L.fuse_block, ps, concat_last<T>({lo, hi}));
    out.low = grid(lo, half);
    out.high = grid(hi, half);
    out.enhanced = grid(fused, L.width);
    return out;
}

} // namespace frcnet
