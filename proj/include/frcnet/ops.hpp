#pragma once

// Differentiable tensor operations on Var<T>. Spatial ops use NHWC layout.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "frcnet/autograd.hpp"

namespace frcnet {

namespace detail {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename T>
void accumulate(Node<T>& parent, const Tensor<T>& g, T scale = T{1}) {
    if (!parent.requires_grad) return;
    auto& pg = parent.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) pg[i] += scale * g[i];
}

inline std::size_t leading_count(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) n *= s[i];
    return n;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        detail::accumulate(self.parent(0), self.grad);
        detail::accumulate(self.parent(1), self.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        detail::accumulate(self.parent(0), self.grad);
        detail::accumulate(self.parent(1), self.grad, T{-1});
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        Node<T>& pa = self.parent(0);
        Node<T>& pb = self.parent(1);
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a.value();
    for (auto& v : out.data()) v *= s;
    return make_result<T>(std::move(out), {a}, [s](Node<T>& self) { detail::accumulate(self.parent(0), self.grad, s); });
}

/// a + b where b's shape equals the trailing dims of a (bias, position embedding).
template <typename T>
Var<T> add_trailing(const Var<T>& a, const Var<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (bs.size() > as.size() || !std::equal(bs.begin(), bs.end(), as.end() - static_cast<long>(bs.size())))
        throw ShapeError("add_trailing: " + shape_str(bs) + " is not a trailing shape of " + shape_str(as));
    const std::size_t inner = b.size();
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i % inner];
    return make_result<T>(std::move(out), {a, b}, [inner](Node<T>& self) {
        detail::accumulate(self.parent(0), self.grad);
        Node<T>& pb = self.parent(1);
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % inner] += self.grad[i];
        }
    });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.data()) v = v > T{0} ? v : T{0};
    return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
        Node<T>& p = self.parent(0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (p.value[i] > T{0}) g[i] += self.grad[i];
    });
}

/// Exact (erf) GELU.
template <typename T>
Var<T> gelu(const Var<T>& a) {
    const T inv_sqrt2 = T{1} / std::sqrt(T{2});
    Tensor<T> out = a.value();
    for (auto& v : out.data()) v = T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2));
    return make_result<T>(std::move(out), {a}, [inv_sqrt2](Node<T>& self) {
        Node<T>& p = self.parent(0);
        if (!p.requires_grad) return;
        const T inv_sqrt2pi = T{1} / std::sqrt(T{2} * std::numbers::pi_v<T>);
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T x = p.value[i];
            const T d = T{0.5} * (T{1} + std::erf(x * inv_sqrt2)) + x * std::exp(T{-0.5} * x * x) * inv_sqrt2pi;
            g[i] += self.grad[i] * d;
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& a) {
    T s{0};
    for (T v : a.value().data()) s += v;
    return make_result<T>(Tensor<T>::scalar(s), {a}, [](Node<T>& self) {
        Node<T>& p = self.parent(0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (auto& v : g.data()) v += self.grad[0];
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    if (a.size() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

/// mean((a - b)^2) over all elements.
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a, b, "mse");
    if (a.size() == 0) throw ShapeError("mse: empty tensor");
    T s{0};
    for (std::size_t i = 0; i < a.size(); ++i) {
        const T d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    const T inv_n = T{1} / static_cast<T>(a.size());
    return make_result<T>(Tensor<T>::scalar(s * inv_n), {a, b}, [inv_n](Node<T>& self) {
        Node<T>& pa = self.parent(0);
        Node<T>& pb = self.parent(1);
        const T k = T{2} * inv_n * self.grad[0];
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (pa.value[i] - pb.value[i]);
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= k * (pa.value[i] - pb.value[i]);
        }
    });
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    Tensor<T> out = a.value().reshaped(std::move(shape));
    return make_result<T>(std::move(out), {a}, [](Node<T>& self) { detail::accumulate(self.parent(0), self.grad); });
}

/// Generic axis permutation: out.shape[i] = in.shape[axes[i]].
template <typename T>
Var<T> permute(const Var<T>& a, std::vector<std::size_t> axes) {
    const Shape& in = a.shape();
    const std::size_t r = in.size();
    if (axes.size() != r) throw ShapeError("permute: axes rank mismatch");
    Shape out_shape(r);
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
    std::vector<std::size_t> src_stride(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (axes[i] >= r) throw ShapeError("permute: axis out of range");
        out_shape[i] = in[axes[i]];
        src_stride[i] = in_strides[axes[i]];
    }
    // Map from output flat index to input flat index.
    std::vector<std::size_t> src_index(a.size());
    {
        std::vector<std::size_t> counter(r, 0);
        std::size_t src = 0;
        for (std::size_t o = 0; o < src_index.size(); ++o) {
            src_index[o] = src;
            for (std::size_t ax = r; ax-- > 0;) {
                ++counter[ax];
                src += src_stride[ax];
                if (counter[ax] < out_shape[ax]) break;
                src -= src_stride[ax] * counter[ax];
                counter[ax] = 0;
            }
        }
    }
    Tensor<T> out(out_shape);
    for (std::size_t o = 0; o < out.size(); ++o) out[o] = a.value()[src_index[o]];
    return make_result<T>(std::move(out), {a}, [src_index = std::move(src_index)](Node<T>& self) {
        Node<T>& p = self.parent(0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t o = 0; o < src_index.size(); ++o) g[src_index[o]] += self.grad[o];
    });
}

/// Concatenation along the last axis; all other dims must agree.
template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_last: no inputs");
    Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape l(p.shape().begin(), p.shape().end() - 1);
        if (l != lead) throw ShapeError("concat_last: leading shape mismatch");
        widths.push_back(p.shape().back());
        total += p.shape().back();
    }
    const std::size_t rows = shape_numel(lead);
    Shape out_shape = lead;
    out_shape.push_back(total);
    Tensor<T> out(out_shape);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            const T* src = parts[k].value().ptr() + r * widths[k];
            std::copy(src, src + widths[k], out.ptr() + r * total + off);
            off += widths[k];
        }
    }
    return make_result<T>(std::move(out), parts, [widths, rows, total](Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            Node<T>& p = self.parent(k);
            if (p.requires_grad) {
                auto& g = p.ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += self.grad[r * total + off + c];
            }
            off += widths[k];
        }
    });
}

/// Channels [begin, end) of the last axis.
template <typename T>
Var<T> slice_last(const Var<T>& a, std::size_t begin, std::size_t end) {
    const std::size_t width = a.shape().back();
    if (begin >= end || end > width) throw ShapeError("slice_last: bad range");
    const std::size_t rows = a.size() / width;
    const std::size_t w = end - begin;
    Shape out_shape = a.shape();
    out_shape.back() = w;
    Tensor<T> out(out_shape);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy(a.value().ptr() + r * width + begin, a.value().ptr() + r * width + end, out.ptr() + r * w);
    return make_result<T>(std::move(out), {a}, [rows, width, begin, w](Node<T>& self) {
        Node<T>& p = self.parent(0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) g[r * width + begin + c] += self.grad[r * w + c];
    });
}

// ---------------------------------------------------------------------------
// Dense layers

/// y = x W + b over the last axis. W: (in, out); b: (out) or an empty Var.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    if (w.shape().size() != 2 || x.shape().back() != w.dim(0))
        throw ShapeError("linear: x " + shape_str(x.shape()) + " incompatible with W " + shape_str(w.shape()));
    const std::size_t in = w.dim(0), outd = w.dim(1);
    const bool has_bias = b.size() > 0;
    if (has_bias && b.shape() != Shape{outd}) throw ShapeError("linear: bias shape");
    const std::size_t rows = x.size() / in;
    Shape out_shape = x.shape();
    out_shape.back() = outd;
    Tensor<T> out(out_shape);
    const T* W = w.value().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        T* o = out.ptr() + r * outd;
        if (has_bias) std::copy(b.value().ptr(), b.value().ptr() + outd, o);
        const T* xr = x.value().ptr() + r * in;
        for (std::size_t i = 0; i < in; ++i) {
            const T xv = xr[i];
            const T* wr = W + i * outd;
            for (std::size_t j = 0; j < outd; ++j) o[j] += xv * wr[j];
        }
    }
    return make_result<T>(std::move(out), {x, w, b}, [rows, in, outd, has_bias](Node<T>& self) {
        Node<T>& px = self.parent(0);
        Node<T>& pw = self.parent(1);
        Node<T>& pb = self.parent(2);
        const T* gy = self.grad.ptr();
        if (px.requires_grad) {
            auto& gx = px.ensure_grad();
            const T* W = pw.value.ptr();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < in; ++i) {
                    T s{0};
                    const T* wr = W + i * outd;
                    const T* g = gy + r * outd;
                    for (std::size_t j = 0; j < outd; ++j) s += g[j] * wr[j];
                    gx[r * in + i] += s;
                }
        }
        if (pw.requires_grad) {
            auto& gw = pw.ensure_grad();
            const T* X = px.value.ptr();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < in; ++i) {
                    const T xv = X[r * in + i];
                    T* gr = gw.ptr() + i * outd;
                    const T* g = gy + r * outd;
                    for (std::size_t j = 0; j < outd; ++j) gr[j] += xv * g[j];
                }
        }
        if (has_bias && pb.requires_grad) {
            auto& gb = pb.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < outd; ++j) gb[j] += gy[r * outd + j];
        }
    });
}

/// Batched matmul: a (n,m,k) x b (n,k,p) -> (n,m,p); with transpose_b, b is (n,p,k).
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b = false) {
    if (a.shape().size() != 3 || b.shape().size() != 3 || a.dim(0) != b.dim(0))
        throw ShapeError("bmm: expected rank-3 operands with equal batch");
    const std::size_t n = a.dim(0), m = a.dim(1), k = a.dim(2);
    const std::size_t p = transpose_b ? b.dim(1) : b.dim(2);
    if ((transpose_b ? b.dim(2) : b.dim(1)) != k)
        throw ShapeError("bmm: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor<T> out(Shape{n, m, p});
    for (std::size_t bi = 0; bi < n; ++bi) {
        const T* A = a.value().ptr() + bi * m * k;
        const T* B = b.value().ptr() + bi * k * p;
        T* C = out.ptr() + bi * m * p;
        for (std::size_t i = 0; i < m; ++i) {
            if (transpose_b) {
                for (std::size_t j = 0; j < p; ++j) {
                    T s{0};
                    for (std::size_t t = 0; t < k; ++t) s += A[i * k + t] * B[j * k + t];
                    C[i * p + j] = s;
                }
            } else {
                for (std::size_t t = 0; t < k; ++t) {
                    const T av = A[i * k + t];
                    for (std::size_t j = 0; j < p; ++j) C[i * p + j] += av * B[t * p + j];
                }
            }
        }
    }
    return make_result<T>(std::move(out), {a, b}, [n, m, k, p, transpose_b](Node<T>& self) {
        Node<T>& pa = self.parent(0);
        Node<T>& pb = self.parent(1);
        for (std::size_t bi = 0; bi < n; ++bi) {
            const T* G = self.grad.ptr() + bi * m * p;
            const T* A = pa.value.ptr() + bi * m * k;
            const T* B = pb.value.ptr() + bi * k * p;
            if (pa.requires_grad) {
                T* GA = pa.ensure_grad().ptr() + bi * m * k;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < p; ++j) {
                        const T g = G[i * p + j];
                        for (std::size_t t = 0; t < k; ++t)
                            GA[i * k + t] += g * (transpose_b ? B[j * k + t] : B[t * p + j]);
                    }
            }
            if (pb.requires_grad) {
                T* GB = pb.ensure_grad().ptr() + bi * k * p;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < p; ++j) {
                        const T g = G[i * p + j];
                        for (std::size_t t = 0; t < k; ++t) {
                            if (transpose_b)
                                GB[j * k + t] += g * A[i * k + t];
                            else
                                GB[t * p + j] += g * A[i * k + t];
                        }
                    }
            }
        }
    });
}

template <typename T>
Var<T> softmax_last(const Var<T>& a) {
    const std::size_t width = a.shape().back();
    const std::size_t rows = a.size() / width;
    Tensor<T> out = a.value();
    for (std::size_t r = 0; r < rows; ++r) {
        T* row = out.ptr() + r * width;
        const T mx = *std::max_element(row, row + width);
        T s{0};
        for (std::size_t j = 0; j < width; ++j) {
            row[j] = std::exp(row[j] - mx);
            s += row[j];
        }
        for (std::size_t j = 0; j < width; ++j) row[j] /= s;
    }
    return make_result<T>(std::move(out), {a}, [rows, width](Node<T>& self) {
        Node<T>& p = self.parent(0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = self.value.ptr() + r * width;
            const T* gy = self.grad.ptr() + r * width;
            T dot{0};
            for (std::size_t j = 0; j < width; ++j) dot += gy[j] * y[j];
            for (std::size_t j = 0; j < width; ++j) g[r * width + j] += y[j] * (gy[j] - dot);
        }
    });
}

/// Layer normalization over the last axis with affine gamma/beta of shape (width).
template <typename T>
Var<T> layer_norm_last(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T{1e-5}) {
    const std::size_t width = x.shape().back();
    if (gamma.shape() != Shape{width} || beta.shape() != Shape{width}) throw ShapeError("layer_norm: affine shape");
    const std::size_t rows = x.size() / width;
    Tensor<T> out(x.shape());
    Tensor<T> xhat(x.shape());
    std::vector<T> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.value().ptr() + r * width;
        T mu{0};
        for (std::size_t j = 0; j < width; ++j) mu += xr[j];
        mu /= static_cast<T>(width);
        T var{0};
        for (std::size_t j = 0; j < width; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<T>(width);
        inv_std[r] = T{1} / std::sqrt(var + eps);
        for (std::size_t j = 0; j < width; ++j) {
            const T h = (xr[j] - mu) * inv_std[r];
            xhat[r * width + j] = h;
            out[r * width + j] = h * gamma.value()[j] + beta.value()[j];
        }
    }
    return make_result<T>(std::move(out), {x, gamma, beta},
                          [rows, width, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                              Node<T>& px = self.parent(0);
                              Node<T>& pg = self.parent(1);
                              Node<T>& pb = self.parent(2);
                              const T* gy = self.grad.ptr();
                              if (pg.requires_grad) {
                                  auto& gg = pg.ensure_grad();
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < width; ++j)
                                          gg[j] += gy[r * width + j] * xhat[r * width + j];
                              }
                              if (pb.requires_grad) {
                                  auto& gb = pb.ensure_grad();
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < width; ++j) gb[j] += gy[r * width + j];
                              }
                              if (px.requires_grad) {
                                  auto& gx = px.ensure_grad();
                                  const T inv_w = T{1} / static_cast<T>(width);
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      T m1{0}, m2{0};
                                      for (std::size_t j = 0; j < width; ++j) {
                                          const T dh = gy[r * width + j] * pg.value[j];
                                          m1 += dh;
                                          m2 += dh * xhat[r * width + j];
                                      }
                                      m1 *= inv_w;
                                      m2 *= inv_w;
                                      for (std::size_t j = 0; j < width; ++j) {
                                          const T dh = gy[r * width + j] * pg.value[j];
                                          gx[r * width + j] += inv_std[r] * (dh - m1 - xhat[r * width + j] * m2);
                                      }
                                  }
                              }
                          });
}

// ---------------------------------------------------------------------------
// Spatial (NHWC)

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

/// x: (B,H,W,Cin); w: (KH,KW,Cin,Cout); b: (Cout) or empty.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, Conv2dOptions opt = {}) {
    require_rank(x.value(), 4, "conv2d input");
    require_rank(w.value(), 4, "conv2d weight");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
    const std::size_t KH = w.dim(0), KW = w.dim(1), Co = w.dim(3);
    if (w.dim(2) != Ci) throw ShapeError("conv2d: input channels " + std::to_string(Ci) + " vs weight " + shape_str(w.shape()));
    if (opt.stride == 0) throw ConfigError("conv2d: stride must be >= 1");
    if (H + 2 * opt.padding < KH || W + 2 * opt.padding < KW) throw ShapeError("conv2d: kernel larger than input");
    const std::size_t OH = (H + 2 * opt.padding - KH) / opt.stride + 1;
    const std::size_t OW = (W + 2 * opt.padding - KW) / opt.stride + 1;
    const bool has_bias = b.size() > 0;
    if (has_bias && b.shape() != Shape{Co}) throw ShapeError("conv2d: bias shape");
    const long pad = static_cast<long>(opt.padding);
    const std::size_t stride = opt.stride;

    Tensor<T> out(Shape{B, OH, OW, Co});
    const T* X = x.value().ptr();
    const T* Wt = w.value().ptr();
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox) {
                T* o = out.ptr() + ((n * OH + oy) * OW + ox) * Co;
                if (has_bias) std::copy(b.value().ptr(), b.value().ptr() + Co, o);
                for (std::size_t ky = 0; ky < KH; ++ky) {
                    const long iy = static_cast<long>(oy * stride + ky) - pad;
                    if (iy < 0 || iy >= static_cast<long>(H)) continue;
                    for (std::size_t kx = 0; kx < KW; ++kx) {
                        const long ix = static_cast<long>(ox * stride + kx) - pad;
                        if (ix < 0 || ix >= static_cast<long>(W)) continue;
                        const T* xin = X + ((n * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)) * Ci;
                        const T* wk = Wt + (ky * KW + kx) * Ci * Co;
                        for (std::size_t ci = 0; ci < Ci; ++ci) {
                            const T xv = xin[ci];
                            const T* wr = wk + ci * Co;
                            for (std::size_t co = 0; co < Co; ++co) o[co] += xv * wr[co];
                        }
                    }
                }
            }

    return make_result<T>(std::move(out), {x, w, b}, [=](Node<T>& self) {
        Node<T>& px = self.parent(0);
        Node<T>& pw = self.parent(1);
        Node<T>& pb = self.parent(2);
        const T* X = px.value.ptr();
        const T* Wt = pw.value.ptr();
        T* GX = px.requires_grad ? px.ensure_grad().ptr() : nullptr;
        T* GW = pw.requires_grad ? pw.ensure_grad().ptr() : nullptr;
        T* GB = (has_bias && pb.requires_grad) ? pb.ensure_grad().ptr() : nullptr;
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t oy = 0; oy < OH; ++oy)
                for (std::size_t ox = 0; ox < OW; ++ox) {
                    const T* g = self.grad.ptr() + ((n * OH + oy) * OW + ox) * Co;
                    if (GB)
                        for (std::size_t co = 0; co < Co; ++co) GB[co] += g[co];
                    for (std::size_t ky = 0; ky < KH; ++ky) {
                        const long iy = static_cast<long>(oy * stride + ky) - pad;
                        if (iy < 0 || iy >= static_cast<long>(H)) continue;
                        for (std::size_t kx = 0; kx < KW; ++kx) {
                            const long ix = static_cast<long>(ox * stride + kx) - pad;
                            if (ix < 0 || ix >= static_cast<long>(W)) continue;
                            const std::size_t xoff =
                                ((n * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)) * Ci;
                            const std::size_t woff = (ky * KW + kx) * Ci * Co;
                            for (std::size_t ci = 0; ci < Ci; ++ci) {
                                const T* wr = Wt + woff + ci * Co;
                                if (GX) {
                                    T s{0};
                                    for (std::size_t co = 0; co < Co; ++co) s += g[co] * wr[co];
                                    GX[xoff + ci] += s;
                                }
                                if (GW) {
                                    const T xv = X[xoff + ci];
                                    T* gw = GW + woff + ci * Co;
                                    for (std::size_t co = 0; co < Co; ++co) gw[co] += xv * g[co];
                                }
                            }
                        }
                    }
                }
    });
}

namespace detail {

struct LinearTap {
    std::size_t i0, i1;
    double w0, w1;
};

// Half-pixel centers, corners not aligned, edge-clamped (the common "bilinear,
// align_corners=false" convention).
inline std::vector<LinearTap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<LinearTap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        std::size_t i0 = static_cast<std::size_t>(src);
        if (i0 > in - 1) i0 = in - 1;
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        const double l = src - static_cast<double>(i0);
        taps[o] = {i0, i1, 1.0 - l, l};
    }
    return taps;
}

inline std::size_t adaptive_start(std::size_t i, std::size_t in, std::size_t out) { return (i * in) / out; }
inline std::size_t adaptive_end(std::size_t i, std::size_t in, std::size_t out) {
    return ((i + 1) * in + out - 1) / out;
}

} // namespace detail

/// Bilinear resampling of (B,H,W,C) to (B,OH,OW,C). Same-size resampling is an exact copy.
template <typename T>
Var<T> resize_bilinear(const Var<T>& x, std::size_t oh, std::size_t ow) {
    require_rank(x.value(), 4, "resize_bilinear");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (oh == 0 || ow == 0 || H == 0 || W == 0) throw ShapeError("resize_bilinear: zero extent");
    if (oh == H && ow == W) return reshape(x, x.shape());
    const auto ty = detail::bilinear_taps(H, oh);
    const auto tx = detail::bilinear_taps(W, ow);
    Tensor<T> out(Shape{B, oh, ow, C});
    const T* X = x.value().ptr();
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
                const auto& a = ty[y];
                const auto& b = tx[xx];
                const T w00 = static_cast<T>(a.w0 * b.w0), w01 = static_cast<T>(a.w0 * b.w1);
                const T w10 = static_cast<T>(a.w1 * b.w0), w11 = static_cast<T>(a.w1 * b.w1);
                const T* p00 = X + ((n * H + a.i0) * W + b.i0) * C;
                const T* p01 = X + ((n * H + a.i0) * W + b.i1) * C;
                const T* p10 = X + ((n * H + a.i1) * W + b.i0) * C;
                const T* p11 = X + ((n * H + a.i1) * W + b.i1) * C;
                T* o = out.ptr() + ((n * oh + y) * ow + xx) * C;
                for (std::size_t c = 0; c < C; ++c) o[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
            }
    return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
        Node<T>& p = self.parent(0);
        if (!p.requires_grad) return;
        T* G = p.ensure_grad().ptr();
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    const auto& a = ty[y];
                    const auto& b = tx[xx];
                    const T w00 = static_cast<T>(a.w0 * b.w0), w01 = static_cast<T>(a.w0 * b.w1);
                    const T w10 = static_cast<T>(a.w1 * b.w0), w11 = static_cast<T>(a.w1 * b.w1);
                    const T* g = self.grad.ptr() + ((n * oh + y) * ow + xx) * C;
                    T* g00 = G + ((n * H + a.i0) * W + b.i0) * C;
                    T* g01 = G + ((n * H + a.i0) * W + b.i1) * C;
                    T* g10 = G + ((n * H + a.i1) * W + b.i0) * C;
                    T* g11 = G + ((n * H + a.i1) * W + b.i1) * C;
                    for (std::size_t c = 0; c < C; ++c) {
                        g00[c] += w00 * g[c];
                        g01[c] += w01 * g[c];
                        g10[c] += w10 * g[c];
                        g11[c] += w11 * g[c];
                    }
                }
    });
}

/// Adaptive average pooling: window i spans [floor(i*H/OH), ceil((i+1)*H/OH)).
template <typename T>
Var<T> adaptive_avg_pool(const Var<T>& x, std::size_t oh, std::size_t ow) {
    require_rank(x.value(), 4, "adaptive_avg_pool");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (oh == 0 || ow == 0 || oh > H || ow > W)
        throw ConfigError("adaptive_avg_pool: output " + std::to_string(oh) + "x" + std::to_string(ow) +
                          " exceeds input " + std::to_string(H) + "x" + std::to_string(W));
    Tensor<T> out(Shape{B, oh, ow, C});
    const T* X = x.value().ptr();
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                const std::size_t y0 = detail::adaptive_start(i, H, oh), y1 = detail::adaptive_end(i, H, oh);
                const std::size_t x0 = detail::adaptive_start(j, W, ow), x1 = detail::adaptive_end(j, W, ow);
                T* o = out.ptr() + ((n * oh + i) * ow + j) * C;
                for (std::size_t y = y0; y < y1; ++y)
                    for (std::size_t xx = x0; xx < x1; ++xx) {
                        const T* src = X + ((n * H + y) * W + xx) * C;
                        for (std::size_t c = 0; c < C; ++c) o[c] += src[c];
                    }
                const T inv = T{1} / static_cast<T>((y1 - y0) * (x1 - x0));
                for (std::size_t c = 0; c < C; ++c) o[c] *= inv;
            }
    return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
        Node<T>& p = self.parent(0);
        if (!p.requires_grad) return;
        T* G = p.ensure_grad().ptr();
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    const std::size_t y0 = detail::adaptive_start(i, H, oh), y1 = detail::adaptive_end(i, H, oh);
                    const std::size_t x0 = detail::adaptive_start(j, W, ow), x1 = detail::adaptive_end(j, W, ow);
                    const T inv = T{1} / static_cast<T>((y1 - y0) * (x1 - x0));
                    const T* g = self.grad.ptr() + ((n * oh + i) * ow + j) * C;
                    for (std::size_t y = y0; y < y1; ++y)
                        for (std::size_t xx = x0; xx < x1; ++xx) {
                            T* dst = G + ((n * H + y) * W + xx) * C;
                            for (std::size_t c = 0; c < C; ++c) dst[c] += g[c] * inv;
                        }
                }
    });
}

/// Adaptive max pooling with the same windows; the gradient goes to the first maximum.
template <typename T>
Var<T> adaptive_max_pool(const Var<T>& x, std::size_t oh, std::size_t ow) {
    require_rank(x.value(), 4, "adaptive_max_pool");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (oh == 0 || ow == 0 || oh > H || ow > W)
        throw ConfigError("adaptive_max_pool: output " + std::to_string(oh) + "x" + std::to_string(ow) +
                          " exceeds input " + std::to_string(H) + "x" + std::to_string(W));
    Tensor<T> out(Shape{B, oh, ow, C});
    std::vector<std::size_t> argmax(out.size());
    const T* X = x.value().ptr();
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                const std::size_t y0 = detail::adaptive_start(i, H, oh), y1 = detail::adaptive_end(i, H, oh);
                const std::size_t x0 = detail::adaptive_start(j, W, ow), x1 = detail::adaptive_end(j, W, ow);
                const std::size_t obase = ((n * oh + i) * ow + j) * C;
                for (std::size_t c = 0; c < C; ++c) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t y = y0; y < y1; ++y)
                        for (std::size_t xx = x0; xx < x1; ++xx) {
                            const std::size_t idx = ((n * H + y) * W + xx) * C + c;
                            if (X[idx] > best) {
                                best = X[idx];
                                best_idx = idx;
                            }
                        }
                    out[obase + c] = best;
                    argmax[obase + c] = best_idx;
                }
            }
    return make_result<T>(std::move(out), {x}, [argmax = std::move(argmax)](Node<T>& self) {
        Node<T>& p = self.parent(0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
    });
}

} // namespace frcnet
