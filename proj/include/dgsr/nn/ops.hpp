#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "dgsr/nn/autograd.hpp"

namespace dgsr::nn {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

namespace detail {

inline void require_same(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw InputError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
}

inline void require_chw(const Shape& s, const char* op) {
    if (s.size() != 3) throw InputError(std::string(op) + ": expected [C,H,W], got " + shape_str(s));
}

template <typename T>
void accumulate(Node<T>& parent, const Tensor<T>& g) {
    auto& buf = parent.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) buf.data[i] += g.data[i];
}

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D dydx) {
    Tensor<T> out(a->value.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f(a->value.data[i]);
    return make_node<T>(std::move(out), {a}, [dydx](Node<T>& self) {
        auto& in = *self.parents[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g.data[i] += self.grad.data[i] * dydx(in.value.data[i], self.value.data[i]);
        }
    });
}

template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* cols) {
    const int ncol = ho * wo;
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = cols + static_cast<std::size_t>((ch * k + ky) * k + kx) * ncol;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    T* dst = row + oy * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + wo, T(0));
                        continue;
                    }
                    const T* src = x + (static_cast<std::size_t>(ch) * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* cols, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* x) {
    const int ncol = ho * wo;
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = cols + static_cast<std::size_t>((ch * k + ky) * k + kx) * ncol;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = x + (static_cast<std::size_t>(ch) * h + iy) * w;
                    const T* src = row + oy * wo;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

// ---- elementwise -----------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::require_same(a->shape(), b->shape(), "add");
    Tensor<T> out(a->shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] + b->value.data[i];
    return detail::make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
        for (auto& p : self.parents) {
            if (p->requires_grad) detail::accumulate(*p, self.grad);
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::require_same(a->shape(), b->shape(), "sub");
    Tensor<T> out(a->shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] - b->value.data[i];
    return detail::make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
        if (self.parents[0]->requires_grad) detail::accumulate(*self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) {
            auto& g = self.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] -= self.grad.data[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::require_same(a->shape(), b->shape(), "mul");
    Tensor<T> out(a->shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] * b->value.data[i];
    return detail::make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i] * pb.value.data[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i] * pa.value.data[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out(a->shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] * s;
    return detail::make_node<T>(std::move(out), {a}, [s](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i] * s;
    });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
    return detail::unary(
        a,
        [](T x) { return x / (T(1) + std::exp(-x)); },
        [](T x, T) {
            const T s = T(1) / (T(1) + std::exp(-x));
            return s * (T(1) + x * (T(1) - s));
        });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(0.2)) {
    return detail::unary(
        a, [slope](T x) { return x > T(0) ? x : slope * x; },
        [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    return detail::unary(
        a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> sin(const Var<T>& a) {
    return detail::unary(a, [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
}

template <typename T>
Var<T> cos(const Var<T>& a) {
    return detail::unary(a, [](T x) { return std::cos(x); }, [](T x, T) { return -std::sin(x); });
}

// Subgradient 0 at the kink.
template <typename T>
Var<T> abs(const Var<T>& a) {
    return detail::unary(
        a, [](T x) { return std::abs(x); }, [](T x, T) { return x > T(0) ? T(1) : x < T(0) ? T(-1) : T(0); });
}

// ---- shape -----------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    if (numel(shape) != a->value.size()) {
        throw InputError("reshape: cannot view " + shape_str(a->shape()) + " as " + shape_str(shape));
    }
    Tensor<T> out(std::move(shape), a->value.data);
    return detail::make_node<T>(std::move(out), {a}, [](Node<T>& self) {
        detail::accumulate(*self.parents[0], self.grad);
    });
}

// Flat concatenation of two tensors into a vector.
template <typename T>
Var<T> concat(const Var<T>& a, const Var<T>& b) {
    const std::size_t na = a->value.size();
    Tensor<T> out({static_cast<int>(na + b->value.size())});
    std::copy(a->value.data.begin(), a->value.data.end(), out.data.begin());
    std::copy(b->value.data.begin(), b->value.data.end(), out.data.begin() + na);
    return detail::make_node<T>(std::move(out), {a, b}, [na](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < na; ++i) g.data[i] += self.grad.data[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[na + i];
        }
    });
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& a) {
    T s = T(0);
    for (T v : a->value.data) s += v;
    return detail::make_node<T>(Tensor<T>({1}, std::vector<T>{s}), {a}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const T d = self.grad.data[0];
        for (auto& v : g.data) v += d;
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a->value.size()));
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    detail::require_same(a->shape(), b->shape(), "mse");
    const std::size_t n = a->value.size();
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T d = a->value.data[i] - b->value.data[i];
        s += d * d;
    }
    return detail::make_node<T>(
        Tensor<T>({1}, std::vector<T>{s / static_cast<T>(n)}), {a, b}, [n](Node<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const T k = T(2) * self.grad.data[0] / static_cast<T>(n);
            if (pa.requires_grad) {
                auto& g = pa.grad_buffer();
                for (std::size_t i = 0; i < n; ++i) g.data[i] += k * (pa.value.data[i] - pb.value.data[i]);
            }
            if (pb.requires_grad) {
                auto& g = pb.grad_buffer();
                for (std::size_t i = 0; i < n; ++i) g.data[i] -= k * (pa.value.data[i] - pb.value.data[i]);
            }
        });
}

// [C,H,W] -> [C]
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    detail::require_chw(x->shape(), "global_avg_pool");
    const int c = x->value.dim(0);
    const std::size_t hw = static_cast<std::size_t>(x->value.dim(1)) * x->value.dim(2);
    Tensor<T> out({c});
    for (int ch = 0; ch < c; ++ch) {
        T s = T(0);
        const T* p = x->value.ptr() + ch * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
        out.data[ch] = s / static_cast<T>(hw);
    }
    return detail::make_node<T>(std::move(out), {x}, [c, hw](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (int ch = 0; ch < c; ++ch) {
            const T d = self.grad.data[ch] / static_cast<T>(hw);
            T* p = g.ptr() + ch * hw;
            for (std::size_t i = 0; i < hw; ++i) p[i] += d;
        }
    });
}

// [C,H,W] -> [C]; the gradient goes to the first maximum of each channel.
template <typename T>
Var<T> global_max_pool(const Var<T>& x) {
    detail::require_chw(x->shape(), "global_max_pool");
    const int c = x->value.dim(0);
    const std::size_t hw = static_cast<std::size_t>(x->value.dim(1)) * x->value.dim(2);
    Tensor<T> out({c});
    std::vector<std::size_t> arg(c);
    for (int ch = 0; ch < c; ++ch) {
        const T* p = x->value.ptr() + ch * hw;
        arg[ch] = static_cast<std::size_t>(std::max_element(p, p + hw) - p);
        out.data[ch] = p[arg[ch]];
    }
    return detail::make_node<T>(std::move(out), {x}, [arg = std::move(arg), hw](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t ch = 0; ch < arg.size(); ++ch) g.data[ch * hw + arg[ch]] += self.grad.data[ch];
    });
}

// Binary cross-entropy on a single logit, numerically stable form.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logit, T target) {
    if (logit->value.size() != 1) throw InputError("bce_with_logits: expected a scalar logit");
    const T x = logit->value.data[0];
    const T loss = std::max(x, T(0)) - x * target + std::log1p(std::exp(-std::abs(x)));
    return detail::make_node<T>(Tensor<T>({1}, std::vector<T>{loss}), {logit}, [target](Node<T>& self) {
        auto& p = *self.parents[0];
        const T s = T(1) / (T(1) + std::exp(-p.value.data[0]));
        p.grad_buffer().data[0] += self.grad.data[0] * (s - target);
    });
}

// ---- dense -----------------------------------------------------------------

// [m,k] x [k,n] -> [m,n]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0)) {
        throw InputError("matmul: incompatible shapes " + shape_str(a->shape()) + " x " + shape_str(b->shape()));
    }
    const int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    Tensor<T> out({m, n});
    MapR<T>(out.ptr(), m, n).noalias() = CMapR<T>(a->value.ptr(), m, k) * CMapR<T>(b->value.ptr(), k, n);
    return detail::make_node<T>(std::move(out), {a, b}, [m, k, n](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        CMapR<T> dy(self.grad.ptr(), m, n);
        if (pa.requires_grad) {
            MapR<T>(pa.grad_buffer().ptr(), m, k).noalias() += dy * CMapR<T>(pb.value.ptr(), k, n).transpose();
        }
        if (pb.requires_grad) {
            MapR<T>(pb.grad_buffer().ptr(), k, n).noalias() += CMapR<T>(pa.value.ptr(), m, k).transpose() * dy;
        }
    });
}

// y = W x + b, x: [in], W: [out,in], b: [out] (nullable).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    const int out_f = w->value.dim(0), in_f = w->value.dim(1);
    if (static_cast<int>(x->value.size()) != in_f) {
        throw InputError("linear: input of size " + std::to_string(x->value.size()) + " for weight " +
                         shape_str(w->shape()));
    }
    Tensor<T> out({out_f});
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> y(out.ptr(), out_f);
    y.noalias() = CMapR<T>(w->value.ptr(), out_f, in_f) *
                  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(x->value.ptr(), in_f);
    if (b) {
        for (int i = 0; i < out_f; ++i) out.data[i] += b->value.data[i];
    }
    return detail::make_node<T>(std::move(out), {x, w, b}, [out_f, in_f](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        const auto& pb = self.parents[2];
        using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
        Eigen::Map<const Vec> dy(self.grad.ptr(), out_f);
        if (px.requires_grad) {
            Eigen::Map<Vec>(px.grad_buffer().ptr(), in_f).noalias() +=
                CMapR<T>(pw.value.ptr(), out_f, in_f).transpose() * dy;
        }
        if (pw.requires_grad) {
            MapR<T>(pw.grad_buffer().ptr(), out_f, in_f).noalias() +=
                dy * Eigen::Map<const Vec>(px.value.ptr(), in_f).transpose();
        }
        if (pb && pb->requires_grad) {
            auto& g = pb->grad_buffer();
            for (int i = 0; i < out_f; ++i) g.data[i] += self.grad.data[i];
        }
    });
}

// Zero-padded 2-D convolution on one [C,H,W] image. The weight is any tensor
// holding out*C*k*k values, read as the [out, C*k*k] flattened kernel matrix.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int k, int stride, int pad) {
    detail::require_chw(x->shape(), "conv2d");
    const int c = x->value.dim(0), h = x->value.dim(1), wd = x->value.dim(2);
    const int o = w->value.dim(0);
    const int kk = c * k * k;
    if (w->value.size() != static_cast<std::size_t>(o) * kk) {
        throw InputError("conv2d: weight " + shape_str(w->shape()) + " does not fit input " + shape_str(x->shape()) +
                         " with kernel " + std::to_string(k));
    }
    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (wd + 2 * pad - k) / stride + 1;
    if (ho <= 0 || wo <= 0) throw InputError("conv2d: input " + shape_str(x->shape()) + " too small");
    const int ncol = ho * wo;
    const bool direct = (k == 1 && stride == 1 && pad == 0);

    auto cols = std::make_shared<Buffer<T>>();
    const T* colp = x->value.ptr();
    if (!direct) {
        cols->resize(static_cast<std::size_t>(kk) * ncol);
        detail::im2col(x->value.ptr(), c, h, wd, k, stride, pad, ho, wo, cols->data());
        colp = cols->data();
    }
    Tensor<T> out({o, ho, wo});
    MapR<T> y(out.ptr(), o, ncol);
    y.noalias() = CMapR<T>(w->value.ptr(), o, kk) * CMapR<T>(colp, kk, ncol);
    if (b) {
        for (int i = 0; i < o; ++i) y.row(i).array() += b->value.data[i];
    }
    return detail::make_node<T>(
        std::move(out), {x, w, b}, [=](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            const auto& pb = self.parents[2];
            CMapR<T> dy(self.grad.ptr(), o, ncol);
            const T* cp = direct ? px.value.ptr() : cols->data();
            if (pw.requires_grad) {
                MapR<T>(pw.grad_buffer().ptr(), o, kk).noalias() += dy * CMapR<T>(cp, kk, ncol).transpose();
            }
            if (pb && pb->requires_grad) {
                auto& g = pb->grad_buffer();
                for (int i = 0; i < o; ++i) g.data[i] += dy.row(i).sum();
            }
            if (px.requires_grad) {
                if (direct) {
                    MapR<T>(px.grad_buffer().ptr(), kk, ncol).noalias() +=
                        CMapR<T>(pw.value.ptr(), o, kk).transpose() * dy;
                } else {
                    MatR<T> dcols = CMapR<T>(pw.value.ptr(), o, kk).transpose() * dy;
                    detail::col2im(dcols.data(), c, h, wd, k, stride, pad, ho, wo, px.grad_buffer().ptr());
                }
            }
        });
}

// Feature-wise affine modulation: y = x * (1 + gamma_c) + beta_c.
template <typename T>
Var<T> film(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta) {
    detail::require_chw(x->shape(), "film");
    const int c = x->value.dim(0);
    const std::size_t hw = static_cast<std::size_t>(x->value.dim(1)) * x->value.dim(2);
    if (gamma->value.size() != static_cast<std::size_t>(c) || beta->value.size() != static_cast<std::size_t>(c)) {
        throw InputError("film: modulation size does not match channel count");
    }
    Tensor<T> out(x->shape());
    for (int ch = 0; ch < c; ++ch) {
        const T g = T(1) + gamma->value.data[ch];
        const T bt = beta->value.data[ch];
        const T* src = x->value.ptr() + ch * hw;
        T* dst = out.ptr() + ch * hw;
        for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * g + bt;
    }
    return detail::make_node<T>(std::move(out), {x, gamma, beta}, [c, hw](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        for (int ch = 0; ch < c; ++ch) {
            const T* dy = self.grad.ptr() + ch * hw;
            const T* xv = px.value.ptr() + ch * hw;
            if (px.requires_grad) {
                const T g = T(1) + pg.value.data[ch];
                T* dx = px.grad_buffer().ptr() + ch * hw;
                for (std::size_t i = 0; i < hw; ++i) dx[i] += dy[i] * g;
            }
            if (pg.requires_grad || pb.requires_grad) {
                T sg = T(0), sb = T(0);
                for (std::size_t i = 0; i < hw; ++i) {
                    sg += dy[i] * xv[i];
                    sb += dy[i];
                }
                if (pg.requires_grad) pg.grad_buffer().data[ch] += sg;
                if (pb.requires_grad) pb.grad_buffer().data[ch] += sb;
            }
        }
    });
}

// [C,H,W] -> [C*f*f, H/f, W/f]; output channel = c*f*f + dy*f + dx.
template <typename T>
Var<T> pixel_unshuffle(const Var<T>& x, int f) {
    detail::require_chw(x->shape(), "pixel_unshuffle");
    const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    if (h % f || w % f) throw InputError("pixel_unshuffle: spatial size not divisible by factor");
    const int ho = h / f, wo = w / f;
    auto index = [=](int ch, int y, int xx) {
        const int oc = (ch * f + y % f) * f + xx % f;
        return (static_cast<std::size_t>(oc) * ho + y / f) * wo + xx / f;
    };
    Tensor<T> out({c * f * f, ho, wo});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                out.data[index(ch, y, xx)] = x->value.data[(static_cast<std::size_t>(ch) * h + y) * w + xx];
    return detail::make_node<T>(std::move(out), {x}, [=](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    g.data[(static_cast<std::size_t>(ch) * h + y) * w + xx] += self.grad.data[index(ch, y, xx)];
    });
}

// Inverse of pixel_unshuffle: [C*f*f, H, W] -> [C, H*f, W*f].
template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int f) {
    detail::require_chw(x->shape(), "pixel_shuffle");
    const int cin = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    if (cin % (f * f)) throw InputError("pixel_shuffle: channels not divisible by factor^2");
    const int c = cin / (f * f), ho = h * f, wo = w * f;
    auto index = [=](int ch, int y, int xx) {
        const int ic = (ch * f + y % f) * f + xx % f;
        return (static_cast<std::size_t>(ic) * h + y / f) * w + xx / f;
    };
    Tensor<T> out({c, ho, wo});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx)
                out.data[(static_cast<std::size_t>(ch) * ho + y) * wo + xx] = x->value.data[index(ch, y, xx)];
    return detail::make_node<T>(std::move(out), {x}, [=](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < ho; ++y)
                for (int xx = 0; xx < wo; ++xx)
                    g.data[index(ch, y, xx)] += self.grad.data[(static_cast<std::size_t>(ch) * ho + y) * wo + xx];
    });
}

// Nearest-neighbour x2 upsampling of [C,H,W].
template <typename T>
Var<T> upsample2(const Var<T>& x) {
    detail::require_chw(x->shape(), "upsample2");
    const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    Tensor<T> out({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx)
                out.data[(static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w + xx] =
                    x->value.data[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2];
    return detail::make_node<T>(std::move(out), {x}, [c, h, w](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx)
                    g.data[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2] +=
                        self.grad.data[(static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w + xx];
    });
}

// Per-pixel unit normalisation across channels: y = x / sqrt(sum_c x^2 + eps).
template <typename T>
Var<T> channel_unit_norm(const Var<T>& x, T eps = T(1e-10)) {
    detail::require_chw(x->shape(), "channel_unit_norm");
    const int c = x->value.dim(0);
    const std::size_t hw = static_cast<std::size_t>(x->value.dim(1)) * x->value.dim(2);
    auto inv = std::make_shared<std::vector<T>>(hw);
    Tensor<T> out(x->shape());
    for (std::size_t i = 0; i < hw; ++i) {
        T s = eps;
        for (int ch = 0; ch < c; ++ch) {
            const T v = x->value.data[ch * hw + i];
            s += v * v;
        }
        (*inv)[i] = T(1) / std::sqrt(s);
        for (int ch = 0; ch < c; ++ch) out.data[ch * hw + i] = x->value.data[ch * hw + i] * (*inv)[i];
    }
    return detail::make_node<T>(std::move(out), {x}, [c, hw, inv](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < hw; ++i) {
            T dot = T(0);
            for (int ch = 0; ch < c; ++ch) dot += self.grad.data[ch * hw + i] * self.value.data[ch * hw + i];
            const T r = (*inv)[i];
            for (int ch = 0; ch < c; ++ch) {
                g.data[ch * hw + i] += r * (self.grad.data[ch * hw + i] - self.value.data[ch * hw + i] * dot);
            }
        }
    });
}

// Gaussian Fourier features of a length-2 vector d against frozen frequencies
// w (length m): out[j, :] = [sin(2 pi d_j w), cos(2 pi d_j w)], shape [2, 2m].
template <typename T>
Var<T> fourier_features(const Var<T>& d, const Tensor<T>& w) {
    const int n = static_cast<int>(d->value.size());
    const int m = static_cast<int>(w.size());
    constexpr T two_pi = T(2) * std::numbers::pi_v<T>;
    Tensor<T> out({n, 2 * m});
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < m; ++i) {
            const T a = two_pi * d->value.data[j] * w.data[i];
            out.data[j * 2 * m + i] = std::sin(a);
            out.data[j * 2 * m + m + i] = std::cos(a);
        }
    }
    return detail::make_node<T>(std::move(out), {d}, [n, m, w](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (int j = 0; j < n; ++j) {
            T acc = T(0);
            for (int i = 0; i < m; ++i) {
                const T s = self.value.data[j * 2 * m + i];
                const T co = self.value.data[j * 2 * m + m + i];
                acc += two_pi * w.data[i] *
                       (self.grad.data[j * 2 * m + i] * co - self.grad.data[j * 2 * m + m + i] * s);
            }
            g.data[j] += acc;
        }
    });
}

} // namespace dgsr::nn
