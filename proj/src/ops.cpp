#include "profact/ops.hpp"

#include "profact/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace profact::ops {

using detail::grad_target;
using detail::make_result;
using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
    }
}

void require_rank(const Tensor& x, int rank, const char* op) {
    if (x.rank() != rank) {
        throw ShapeMismatch(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                            shape_str(x.shape()));
    }
}

template <class Fwd, class Bwd>
Tensor unary(const Tensor& x, Fwd fwd, Bwd dydx) {
    const auto xs = x.data();
    Buffer out(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        out[i] = fwd(xs[i]);
    }
    NodePtr xn = x.node();
    return make_result(x.shape(), std::move(out), {x}, [xn, dydx](Node& self) {
        double* gx = grad_target(xn);
        if (!gx) {
            return;
        }
        for (size_t i = 0; i < self.grad.size(); ++i) {
            gx[i] += self.grad[i] * dydx(xn->value[i], self.value[i]);
        }
    });
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Buffer out(a.data().begin(), a.data().end());
    const auto bs = b.data();
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] += bs[i];
    }
    NodePtr an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
        for (const NodePtr& n : {an, bn}) {
            if (double* g = grad_target(n)) {
                for (size_t i = 0; i < self.grad.size(); ++i) {
                    g[i] += self.grad[i];
                }
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Buffer out(a.data().begin(), a.data().end());
    const auto bs = b.data();
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] -= bs[i];
    }
    NodePtr an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
        if (double* g = grad_target(an)) {
            for (size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (double* g = grad_target(bn)) {
            for (size_t i = 0; i < self.grad.size(); ++i) {
                g[i] -= self.grad[i];
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto as = a.data();
    const auto bs = b.data();
    Buffer out(as.size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = as[i] * bs[i];
    }
    NodePtr an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
        if (double* g = grad_target(an)) {
            for (size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i] * bn->value[i];
            }
        }
        if (double* g = grad_target(bn)) {
            for (size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i] * an->value[i];
            }
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(
        a, [factor](double v) { return v * factor; },
        [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary(
        a, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor mul_channel_broadcast(const Tensor& x, const Tensor& mask) {
    require_rank(x, 4, "mul_channel_broadcast");
    require_rank(mask, 4, "mul_channel_broadcast");
    const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (mask.dim(0) != n || mask.dim(1) != 1 || mask.dim(2) != x.dim(2) || mask.dim(3) != x.dim(3)) {
        throw ShapeMismatch("mul_channel_broadcast: mask " + shape_str(mask.shape()) +
                            " does not broadcast over " + shape_str(x.shape()));
    }
    const auto xs = x.data();
    const auto ms = mask.data();
    Buffer out(xs.size());
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t ch = 0; ch < c; ++ch) {
            const int64_t base = (b * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) {
                out[base + i] = xs[base + i] * ms[b * hw + i];
            }
        }
    }
    NodePtr xn = x.node(), mn = mask.node();
    return make_result(x.shape(), std::move(out), {x, mask}, [xn, mn, n, c, hw](Node& self) {
        double* gx = grad_target(xn);
        double* gm = grad_target(mn);
        for (int64_t b = 0; b < n; ++b) {
            for (int64_t ch = 0; ch < c; ++ch) {
                const int64_t base = (b * c + ch) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    const double g = self.grad[base + i];
                    if (gx) {
                        gx[base + i] += g * mn->value[b * hw + i];
                    }
                    if (gm) {
                        gm[b * hw + i] += g * xn->value[base + i];
                    }
                }
            }
        }
    });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "maximum");
    const auto as = a.data();
    const auto bs = b.data();
    Buffer out(as.size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = std::max(as[i], bs[i]);
    }
    NodePtr an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
        double* ga = grad_target(an);
        double* gb = grad_target(bn);
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const bool take_a = an->value[i] >= bn->value[i];
            if (take_a && ga) {
                ga[i] += self.grad[i];
            } else if (!take_a && gb) {
                gb[i] += self.grad[i];
            }
        }
    });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary(
        a, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
    return unary(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
        [](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + v * pdf;
        });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x,
        [](double v) {
            if (v >= 0) {
                return 1.0 / (1.0 + std::exp(-v));
            }
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax(const Tensor& x) {
    const int64_t c = x.dim(-1);
    const int64_t rows = x.numel() / std::max<int64_t>(c, 1);
    const auto xs = x.data();
    Buffer out(xs.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* in = xs.data() + r * c;
        double* y = out.data() + r * c;
        const double mx = *std::max_element(in, in + c);
        double total = 0.0;
        for (int64_t i = 0; i < c; ++i) {
            y[i] = std::exp(in[i] - mx);
            total += y[i];
        }
        for (int64_t i = 0; i < c; ++i) {
            y[i] /= total;
        }
    }
    NodePtr xn = x.node();
    return make_result(x.shape(), std::move(out), {x}, [xn, rows, c](Node& self) {
        double* gx = grad_target(xn);
        if (!gx) {
            return;
        }
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * c;
            const double* gy = self.grad.data() + r * c;
            double dot = 0.0;
            for (int64_t i = 0; i < c; ++i) {
                dot += gy[i] * y[i];
            }
            for (int64_t i = 0; i < c; ++i) {
                gx[r * c + i] += y[i] * (gy[i] - dot);
            }
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeMismatch("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    Buffer out(x.data().begin(), x.data().end());
    NodePtr xn = x.node();
    return make_result(std::move(shape), std::move(out), {x}, [xn](Node& self) {
        if (double* gx = grad_target(xn)) {
            for (size_t i = 0; i < self.grad.size(); ++i) {
                gx[i] += self.grad[i];
            }
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(w, 2, "linear");
    const int64_t in = w.dim(1), outc = w.dim(0);
    if (x.rank() < 1 || x.dim(-1) != in) {
        throw ShapeMismatch("linear: input " + shape_str(x.shape()) + " vs weight " +
                            shape_str(w.shape()));
    }
    if (b.defined() && (b.rank() != 1 || b.dim(0) != outc)) {
        throw ShapeMismatch("linear: bias " + shape_str(b.shape()));
    }
    const int64_t rows = x.numel() / in;
    Buffer out(static_cast<size_t>(rows * outc));
    ConstMatMap X(x.data().data(), rows, in);
    ConstMatMap W(w.data().data(), outc, in);
    MatMap Y(out.data(), rows, outc);
    Y.noalias() = X * W.transpose();
    if (b.defined()) {
        Y.rowwise() += ConstVecMap(b.data().data(), outc).transpose();
    }
    Shape shape = x.shape();
    shape.back() = outc;
    NodePtr xn = x.node(), wn = w.node();
    NodePtr bn = b.defined() ? b.node() : nullptr;
    return make_result(std::move(shape), std::move(out), {x, w, b},
                       [xn, wn, bn, rows, in, outc](Node& self) {
                           ConstMatMap G(self.grad.data(), rows, outc);
                           if (double* gx = grad_target(xn)) {
                               MatMap(gx, rows, in).noalias() +=
                                   G * ConstMatMap(wn->value.data(), outc, in);
                           }
                           if (double* gw = grad_target(wn)) {
                               MatMap(gw, outc, in).noalias() +=
                                   G.transpose() * ConstMatMap(xn->value.data(), rows, in);
                           }
                           if (double* gb = grad_target(bn)) {
                               VecMap(gb, outc) += G.colwise().sum().transpose();
                           }
                       });
}

Tensor pointwise(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(x, 4, "pointwise");
    require_rank(w, 2, "pointwise");
    const int64_t n = x.dim(0), cin = x.dim(1), hw = x.dim(2) * x.dim(3), cout = w.dim(0);
    if (w.dim(1) != cin) {
        throw ShapeMismatch("pointwise: input " + shape_str(x.shape()) + " vs weight " +
                            shape_str(w.shape()));
    }
    if (b.defined() && (b.rank() != 1 || b.dim(0) != cout)) {
        throw ShapeMismatch("pointwise: bias " + shape_str(b.shape()));
    }
    Buffer out(static_cast<size_t>(n * cout * hw));
    ConstMatMap W(w.data().data(), cout, cin);
    for (int64_t s = 0; s < n; ++s) {
        MatMap Y(out.data() + s * cout * hw, cout, hw);
        Y.noalias() = W * ConstMatMap(x.data().data() + s * cin * hw, cin, hw);
        if (b.defined()) {
            Y.colwise() += ConstVecMap(b.data().data(), cout);
        }
    }
    NodePtr xn = x.node(), wn = w.node();
    NodePtr bn = b.defined() ? b.node() : nullptr;
    return make_result({n, cout, x.dim(2), x.dim(3)}, std::move(out), {x, w, b},
                       [xn, wn, bn, n, cin, cout, hw](Node& self) {
                           double* gx = grad_target(xn);
                           double* gw = grad_target(wn);
                           double* gb = grad_target(bn);
                           ConstMatMap W(wn->value.data(), cout, cin);
                           for (int64_t s = 0; s < n; ++s) {
                               ConstMatMap G(self.grad.data() + s * cout * hw, cout, hw);
                               if (gx) {
                                   MatMap(gx + s * cin * hw, cin, hw).noalias() += W.transpose() * G;
                               }
                               if (gw) {
                                   MatMap(gw, cout, cin).noalias() +=
                                       G * ConstMatMap(xn->value.data() + s * cin * hw, cin, hw)
                                               .transpose();
                               }
                               if (gb) {
                                   VecMap(gb, cout) += G.rowwise().sum();
                               }
                           }
                       });
}

int64_t conv_out_size(int64_t in, int kernel, const Conv2dOptions& opt) {
    const int64_t eff = static_cast<int64_t>(opt.dilation) * (kernel - 1) + 1;
    return (in + 2 * opt.padding - eff) / opt.stride + 1;
}

namespace {

struct ConvGeometry {
    int64_t cin_g, cout_g, kh, kw, h, w, oh, ow;
    Conv2dOptions opt;

    int64_t col_rows() const { return cin_g * kh * kw; }
    int64_t col_cols() const { return oh * ow; }
    bool is_identity_col() const {
        return kh == 1 && kw == 1 && opt.stride == 1 && opt.padding == 0;
    }
};

// Unfolds one channel group of one sample into [cin_g*kh*kw, oh*ow].
void im2col(const double* x, const ConvGeometry& g, double* col) {
    const int s = g.opt.stride, p = g.opt.padding, d = g.opt.dilation;
    for (int64_t c = 0; c < g.cin_g; ++c) {
        const double* plane = x + c * g.h * g.w;
        for (int64_t ky = 0; ky < g.kh; ++ky) {
            for (int64_t kx = 0; kx < g.kw; ++kx) {
                double* row = col + ((c * g.kh + ky) * g.kw + kx) * g.col_cols();
                for (int64_t oy = 0; oy < g.oh; ++oy) {
                    const int64_t iy = oy * s - p + ky * d;
                    double* dst = row + oy * g.ow;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.ow, 0.0);
                        continue;
                    }
                    const double* src = plane + iy * g.w;
                    for (int64_t ox = 0; ox < g.ow; ++ox) {
                        const int64_t ix = ox * s - p + kx * d;
                        dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* col, const ConvGeometry& g, double* x) {
    const int s = g.opt.stride, p = g.opt.padding, d = g.opt.dilation;
    for (int64_t c = 0; c < g.cin_g; ++c) {
        double* plane = x + c * g.h * g.w;
        for (int64_t ky = 0; ky < g.kh; ++ky) {
            for (int64_t kx = 0; kx < g.kw; ++kx) {
                const double* row = col + ((c * g.kh + ky) * g.kw + kx) * g.col_cols();
                for (int64_t oy = 0; oy < g.oh; ++oy) {
                    const int64_t iy = oy * s - p + ky * d;
                    if (iy < 0 || iy >= g.h) {
                        continue;
                    }
                    double* dst = plane + iy * g.w;
                    const double* src = row + oy * g.ow;
                    for (int64_t ox = 0; ox < g.ow; ++ox) {
                        const int64_t ix = ox * s - p + kx * d;
                        if (ix >= 0 && ix < g.w) {
                            dst[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dOptions& opt) {
    require_rank(x, 4, "conv2d");
    require_rank(w, 4, "conv2d weight");
    if (opt.stride < 1 || opt.dilation < 1 || opt.groups < 1 || opt.padding < 0) {
        throw ShapeMismatch("conv2d: invalid options");
    }
    const int64_t n = x.dim(0), cin = x.dim(1), cout = w.dim(0);
    const int groups = opt.groups;
    if (cin % groups != 0 || cout % groups != 0 || w.dim(1) != cin / groups) {
        throw ShapeMismatch("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                            shape_str(w.shape()) + " and groups " + std::to_string(groups));
    }
    if (b.defined() && (b.rank() != 1 || b.dim(0) != cout)) {
        throw ShapeMismatch("conv2d: bias " + shape_str(b.shape()));
    }
    ConvGeometry g{cin / groups, cout / groups, w.dim(2), w.dim(3), x.dim(2), x.dim(3), 0, 0, opt};
    g.oh = conv_out_size(g.h, static_cast<int>(g.kh), opt);
    g.ow = conv_out_size(g.w, static_cast<int>(g.kw), opt);
    if (g.oh <= 0 || g.ow <= 0) {
        throw ShapeMismatch("conv2d: kernel larger than padded input " + shape_str(x.shape()));
    }
    const int64_t K = g.col_rows(), P = g.col_cols();
    Buffer out(static_cast<size_t>(n * cout * P));
    Buffer col;
    if (!g.is_identity_col()) {
        col.resize(static_cast<size_t>(K * P));
    }
    for (int64_t s = 0; s < n; ++s) {
        for (int gi = 0; gi < groups; ++gi) {
            const double* xin = x.data().data() + (s * cin + gi * g.cin_g) * g.h * g.w;
            const double* colp = xin;
            if (!g.is_identity_col()) {
                im2col(xin, g, col.data());
                colp = col.data();
            }
            ConstMatMap Wg(w.data().data() + gi * g.cout_g * K, g.cout_g, K);
            MatMap Y(out.data() + (s * cout + gi * g.cout_g) * P, g.cout_g, P);
            Y.noalias() = Wg * ConstMatMap(colp, K, P);
            if (b.defined()) {
                Y.colwise() += ConstVecMap(b.data().data() + gi * g.cout_g, g.cout_g);
            }
        }
    }
    NodePtr xn = x.node(), wn = w.node();
    NodePtr bn = b.defined() ? b.node() : nullptr;
    return make_result({n, cout, g.oh, g.ow}, std::move(out), {x, w, b},
                       [xn, wn, bn, g, n, cin, cout, groups](Node& self) {
                           double* gx = grad_target(xn);
                           double* gw = grad_target(wn);
                           double* gb = grad_target(bn);
                           const int64_t K = g.col_rows(), P = g.col_cols();
                           Buffer col, dcol;
                           if (!g.is_identity_col()) {
                               col.resize(static_cast<size_t>(K * P));
                               dcol.resize(static_cast<size_t>(K * P));
                           }
                           for (int64_t s = 0; s < n; ++s) {
                               for (int gi = 0; gi < groups; ++gi) {
                                   const int64_t xoff = (s * cin + gi * g.cin_g) * g.h * g.w;
                                   ConstMatMap G(self.grad.data() + (s * cout + gi * g.cout_g) * P,
                                                 g.cout_g, P);
                                   if (gw) {
                                       const double* colp = xn->value.data() + xoff;
                                       if (!g.is_identity_col()) {
                                           im2col(colp, g, col.data());
                                           colp = col.data();
                                       }
                                       MatMap(gw + gi * g.cout_g * K, g.cout_g, K).noalias() +=
                                           G * ConstMatMap(colp, K, P).transpose();
                                   }
                                   if (gx) {
                                       ConstMatMap Wg(wn->value.data() + gi * g.cout_g * K,
                                                      g.cout_g, K);
                                       if (g.is_identity_col()) {
                                           MatMap(gx + xoff, K, P).noalias() += Wg.transpose() * G;
                                       } else {
                                           MatMap(dcol.data(), K, P).noalias() = Wg.transpose() * G;
                                           col2im(dcol.data(), g, gx + xoff);
                                       }
                                   }
                                   if (gb) {
                                       VecMap(gb + gi * g.cout_g, g.cout_g) += G.rowwise().sum();
                                   }
                               }
                           }
                       });
}

Tensor max_pool2d(const Tensor& x, int kernel, int padding) {
    require_rank(x, 4, "max_pool2d");
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t oh = h + 2 * padding - kernel + 1, ow = w + 2 * padding - kernel + 1;
    if (oh <= 0 || ow <= 0) {
        throw ShapeMismatch("max_pool2d: kernel larger than input");
    }
    Buffer out(static_cast<size_t>(n * c * oh * ow));
    std::vector<int64_t> arg(out.size());
    const auto xs = x.data();
    for (int64_t p = 0; p < n * c; ++p) {
        const double* plane = xs.data() + p * h * w;
        for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
                double best = -std::numeric_limits<double>::infinity();
                int64_t best_i = -1;
                for (int ky = 0; ky < kernel; ++ky) {
                    const int64_t iy = oy - padding + ky;
                    if (iy < 0 || iy >= h) {
                        continue;
                    }
                    for (int kx = 0; kx < kernel; ++kx) {
                        const int64_t ix = ox - padding + kx;
                        if (ix < 0 || ix >= w) {
                            continue;
                        }
                        if (plane[iy * w + ix] > best) {
                            best = plane[iy * w + ix];
                            best_i = iy * w + ix;
                        }
                    }
                }
                const int64_t o = p * oh * ow + oy * ow + ox;
                out[o] = best;
                arg[o] = p * h * w + best_i;
            }
        }
    }
    NodePtr xn = x.node();
    return make_result({n, c, oh, ow}, std::move(out), {x}, [xn, arg = std::move(arg)](Node& self) {
        if (double* gx = grad_target(xn)) {
            for (size_t i = 0; i < self.grad.size(); ++i) {
                gx[arg[i]] += self.grad[i];
            }
        }
    });
}

namespace {

// Normalizes x viewed as [outer, C, inner] over the C axis.
Tensor layer_norm_strided(const Tensor& x, const Tensor& gamma, const Tensor& beta, int64_t outer,
                          int64_t c, int64_t inner, double eps) {
    if (gamma.numel() != c || beta.numel() != c) {
        throw ShapeMismatch("layer_norm: affine params must have " + std::to_string(c) + " entries");
    }
    const auto xs = x.data();
    const auto gs = gamma.data();
    const auto bs = beta.data();
    Buffer out(xs.size());
    Buffer xhat(xs.size());
    Buffer rstd(static_cast<size_t>(outer * inner));
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
            const int64_t base = o * c * inner + i;
            double mu = 0.0;
            for (int64_t k = 0; k < c; ++k) {
                mu += xs[base + k * inner];
            }
            mu /= static_cast<double>(c);
            double var = 0.0;
            for (int64_t k = 0; k < c; ++k) {
                const double dlt = xs[base + k * inner] - mu;
                var += dlt * dlt;
            }
            var /= static_cast<double>(c);
            const double r = 1.0 / std::sqrt(var + eps);
            rstd[o * inner + i] = r;
            for (int64_t k = 0; k < c; ++k) {
                const int64_t idx = base + k * inner;
                xhat[idx] = (xs[idx] - mu) * r;
                out[idx] = xhat[idx] * gs[k] + bs[k];
            }
        }
    }
    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
    return make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [xn, gn, bn, outer, c, inner, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
            double* gx = grad_target(xn);
            double* gg = grad_target(gn);
            double* gb = grad_target(bn);
            const double inv_c = 1.0 / static_cast<double>(c);
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t i = 0; i < inner; ++i) {
                    const int64_t base = o * c * inner + i;
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (int64_t k = 0; k < c; ++k) {
                        const int64_t idx = base + k * inner;
                        const double dy = self.grad[idx];
                        if (gg) {
                            gg[k] += dy * xhat[idx];
                        }
                        if (gb) {
                            gb[k] += dy;
                        }
                        const double dxh = dy * gn->value[k];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[idx];
                    }
                    if (!gx) {
                        continue;
                    }
                    mean_dxhat *= inv_c;
                    mean_dxhat_xhat *= inv_c;
                    const double r = rstd[o * inner + i];
                    for (int64_t k = 0; k < c; ++k) {
                        const int64_t idx = base + k * inner;
                        const double dxh = self.grad[idx] * gn->value[k];
                        gx[idx] += r * (dxh - mean_dxhat - xhat[idx] * mean_dxhat_xhat);
                    }
                }
            }
        });
}

} // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int64_t c = x.dim(-1);
    return layer_norm_strided(x, gamma, beta, x.numel() / c, c, 1, eps);
}

Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(x, 4, "layer_norm_channels");
    return layer_norm_strided(x, gamma, beta, x.dim(0), x.dim(1), x.dim(2) * x.dim(3), eps);
}

namespace {

// out[b, j, i] = in[b, i, j] for in viewed as [batch, rows, cols].
Tensor batched_transpose(const Tensor& x, int64_t batch, int64_t rows, int64_t cols, Shape shape) {
    Buffer out(x.data().size());
    const auto xs = x.data();
    for (int64_t b = 0; b < batch; ++b) {
        ConstMatMap in(xs.data() + b * rows * cols, rows, cols);
        MatMap(out.data() + b * rows * cols, cols, rows) = in.transpose();
    }
    NodePtr xn = x.node();
    return make_result(std::move(shape), std::move(out), {x}, [xn, batch, rows, cols](Node& self) {
        if (double* gx = grad_target(xn)) {
            for (int64_t b = 0; b < batch; ++b) {
                MatMap(gx + b * rows * cols, rows, cols) +=
                    ConstMatMap(self.grad.data() + b * rows * cols, cols, rows).transpose();
            }
        }
    });
}

} // namespace

Tensor to_tokens(const Tensor& x) {
    require_rank(x, 4, "to_tokens");
    const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    return batched_transpose(x, n, c, hw, {n, hw, c});
}

Tensor from_tokens(const Tensor& t, int64_t h, int64_t w) {
    require_rank(t, 3, "from_tokens");
    const int64_t n = t.dim(0), l = t.dim(1), c = t.dim(2);
    if (l != h * w) {
        throw ShapeMismatch("from_tokens: " + std::to_string(l) + " tokens cannot form " +
                            std::to_string(h) + "x" + std::to_string(w));
    }
    return batched_transpose(t, n, l, c, {n, c, h, w});
}

Tensor split_heads(const Tensor& t, int heads) {
    require_rank(t, 3, "split_heads");
    const int64_t n = t.dim(0), l = t.dim(1), c = t.dim(2);
    if (heads < 1 || c % heads != 0) {
        throw ShapeMismatch("split_heads: " + std::to_string(c) + " channels not divisible by " +
                            std::to_string(heads) + " heads");
    }
    const int64_t d = c / heads;
    Buffer out(t.data().size());
    const auto ts = t.data();
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t i = 0; i < l; ++i) {
            for (int64_t hh = 0; hh < heads; ++hh) {
                const double* src = ts.data() + (b * l + i) * c + hh * d;
                std::copy(src, src + d, out.data() + ((b * heads + hh) * l + i) * d);
            }
        }
    }
    NodePtr tn = t.node();
    return make_result({n * heads, l, d}, std::move(out), {t}, [tn, n, l, c, d, heads](Node& self) {
        if (double* gt = grad_target(tn)) {
            for (int64_t b = 0; b < n; ++b) {
                for (int64_t i = 0; i < l; ++i) {
                    for (int64_t hh = 0; hh < heads; ++hh) {
                        const double* src = self.grad.data() + ((b * heads + hh) * l + i) * d;
                        double* dst = gt + (b * l + i) * c + hh * d;
                        for (int64_t j = 0; j < d; ++j) {
                            dst[j] += src[j];
                        }
                    }
                }
            }
        }
    });
}

Tensor merge_heads(const Tensor& t, int heads) {
    require_rank(t, 3, "merge_heads");
    if (heads < 1 || t.dim(0) % heads != 0) {
        throw ShapeMismatch("merge_heads: batch not divisible by heads");
    }
    const int64_t n = t.dim(0) / heads, l = t.dim(1), d = t.dim(2), c = d * heads;
    Buffer out(t.data().size());
    const auto ts = t.data();
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t hh = 0; hh < heads; ++hh) {
            for (int64_t i = 0; i < l; ++i) {
                const double* src = ts.data() + ((b * heads + hh) * l + i) * d;
                std::copy(src, src + d, out.data() + (b * l + i) * c + hh * d);
            }
        }
    }
    NodePtr tn = t.node();
    return make_result({n, l, c}, std::move(out), {t}, [tn, n, l, c, d, heads](Node& self) {
        if (double* gt = grad_target(tn)) {
            for (int64_t b = 0; b < n; ++b) {
                for (int64_t hh = 0; hh < heads; ++hh) {
                    for (int64_t i = 0; i < l; ++i) {
                        const double* src = self.grad.data() + (b * l + i) * c + hh * d;
                        double* dst = gt + ((b * heads + hh) * l + i) * d;
                        for (int64_t j = 0; j < d; ++j) {
                            dst[j] += src[j];
                        }
                    }
                }
            }
        }
    });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    const int64_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
    if (b.dim(0) != B || b.dim(1) != K) {
        throw ShapeMismatch("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Buffer out(static_cast<size_t>(B * M * N));
    for (int64_t i = 0; i < B; ++i) {
        MatMap(out.data() + i * M * N, M, N).noalias() =
            ConstMatMap(a.data().data() + i * M * K, M, K) *
            ConstMatMap(b.data().data() + i * K * N, K, N);
    }
    NodePtr an = a.node(), bn = b.node();
    return make_result({B, M, N}, std::move(out), {a, b}, [an, bn, B, M, K, N](Node& self) {
        double* ga = grad_target(an);
        double* gb = grad_target(bn);
        for (int64_t i = 0; i < B; ++i) {
            ConstMatMap G(self.grad.data() + i * M * N, M, N);
            if (ga) {
                MatMap(ga + i * M * K, M, K).noalias() +=
                    G * ConstMatMap(bn->value.data() + i * K * N, K, N).transpose();
            }
            if (gb) {
                MatMap(gb + i * K * N, K, N).noalias() +=
                    ConstMatMap(an->value.data() + i * M * K, M, K).transpose() * G;
            }
        }
    });
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
    require_rank(a, 3, "bmm_nt");
    require_rank(b, 3, "bmm_nt");
    const int64_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(1);
    if (b.dim(0) != B || b.dim(2) != K) {
        throw ShapeMismatch("bmm_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    }
    Buffer out(static_cast<size_t>(B * M * N));
    for (int64_t i = 0; i < B; ++i) {
        MatMap(out.data() + i * M * N, M, N).noalias() =
            ConstMatMap(a.data().data() + i * M * K, M, K) *
            ConstMatMap(b.data().data() + i * N * K, N, K).transpose();
    }
    NodePtr an = a.node(), bn = b.node();
    return make_result({B, M, N}, std::move(out), {a, b}, [an, bn, B, M, K, N](Node& self) {
        double* ga = grad_target(an);
        double* gb = grad_target(bn);
        for (int64_t i = 0; i < B; ++i) {
            ConstMatMap G(self.grad.data() + i * M * N, M, N);
            if (ga) {
                MatMap(ga + i * M * K, M, K).noalias() +=
                    G * ConstMatMap(bn->value.data() + i * N * K, N, K);
            }
            if (gb) {
                MatMap(gb + i * N * K, N, K).noalias() +=
                    G.transpose() * ConstMatMap(an->value.data() + i * M * K, M, K);
            }
        }
    });
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
    if (xs.empty()) {
        throw ShapeMismatch("concat_channels: no inputs");
    }
    const int64_t n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3), hw = h * w;
    int64_t total = 0;
    std::vector<int64_t> chans;
    for (const Tensor& t : xs) {
        require_rank(t, 4, "concat_channels");
        if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w) {
            throw ShapeMismatch("concat_channels: " + shape_str(t.shape()) + " vs " +
                                shape_str(xs[0].shape()));
        }
        chans.push_back(t.dim(1));
        total += t.dim(1);
    }
    Buffer out(static_cast<size_t>(n * total * hw));
    for (int64_t b = 0; b < n; ++b) {
        int64_t offset = 0;
        for (size_t k = 0; k < xs.size(); ++k) {
            const double* src = xs[k].data().data() + b * chans[k] * hw;
            std::copy(src, src + chans[k] * hw, out.data() + (b * total + offset) * hw);
            offset += chans[k];
        }
    }
    std::vector<NodePtr> nodes;
    for (const Tensor& t : xs) {
        nodes.push_back(t.node());
    }
    return make_result({n, total, h, w}, std::move(out), xs,
                       [nodes, chans, n, total, hw](Node& self) {
                           for (int64_t b = 0; b < n; ++b) {
                               int64_t offset = 0;
                               for (size_t k = 0; k < nodes.size(); ++k) {
                                   if (double* g = grad_target(nodes[k])) {
                                       const double* src =
                                           self.grad.data() + (b * total + offset) * hw;
                                       double* dst = g + b * chans[k] * hw;
                                       for (int64_t i = 0; i < chans[k] * hw; ++i) {
                                           dst[i] += src[i];
                                       }
                                   }
                                   offset += chans[k];
                               }
                           }
                       });
}

Tensor slice_channels(const Tensor& x, int64_t begin, int64_t end) {
    require_rank(x, 4, "slice_channels");
    const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (begin < 0 || end > c || begin >= end) {
        throw ShapeMismatch("slice_channels: bad range");
    }
    const int64_t k = end - begin;
    Buffer out(static_cast<size_t>(n * k * hw));
    for (int64_t b = 0; b < n; ++b) {
        const double* src = x.data().data() + (b * c + begin) * hw;
        std::copy(src, src + k * hw, out.data() + b * k * hw);
    }
    NodePtr xn = x.node();
    return make_result({n, k, x.dim(2), x.dim(3)}, std::move(out), {x},
                       [xn, n, c, hw, begin, k](Node& self) {
                           if (double* g = grad_target(xn)) {
                               for (int64_t b = 0; b < n; ++b) {
                                   double* dst = g + (b * c + begin) * hw;
                                   const double* src = self.grad.data() + b * k * hw;
                                   for (int64_t i = 0; i < k * hw; ++i) {
                                       dst[i] += src[i];
                                   }
                               }
                           }
                       });
}

Tensor slice_batch(const Tensor& x, int64_t begin, int64_t end) {
    const int64_t n = x.dim(0);
    if (begin < 0 || end > n || begin >= end) {
        throw ShapeMismatch("slice_batch: bad range");
    }
    const int64_t per = x.numel() / n;
    Buffer out(x.data().begin() + begin * per, x.data().begin() + end * per);
    Shape shape = x.shape();
    shape[0] = end - begin;
    NodePtr xn = x.node();
    return make_result(std::move(shape), std::move(out), {x}, [xn, begin, per](Node& self) {
        if (double* g = grad_target(xn)) {
            for (size_t i = 0; i < self.grad.size(); ++i) {
                g[begin * per + static_cast<int64_t>(i)] += self.grad[i];
            }
        }
    });
}

namespace {

struct AxisWeights {
    std::vector<int64_t> i0, i1;
    Buffer l1;
};

AxisWeights bilinear_axis(int64_t in, int64_t out) {
    AxisWeights a;
    a.i0.resize(out);
    a.i1.resize(out);
    a.l1.resize(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        src = std::max(src, 0.0);
        int64_t lo = std::min(static_cast<int64_t>(src), in - 1);
        a.i0[o] = lo;
        a.i1[o] = std::min(lo + 1, in - 1);
        a.l1[o] = src - static_cast<double>(lo);
    }
    return a;
}

} // namespace

Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w) {
    require_rank(x, 4, "resize_bilinear");
    if (out_h < 1 || out_w < 1) {
        throw ShapeMismatch("resize_bilinear: empty target");
    }
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h == out_h && w == out_w) {
        return reshape(x, x.shape());
    }
    const AxisWeights ay = bilinear_axis(h, out_h), ax = bilinear_axis(w, out_w);
    Buffer out(static_cast<size_t>(n * c * out_h * out_w));
    const auto xs = x.data();
    for (int64_t p = 0; p < n * c; ++p) {
        const double* plane = xs.data() + p * h * w;
        double* dst = out.data() + p * out_h * out_w;
        for (int64_t oy = 0; oy < out_h; ++oy) {
            const double ly = ay.l1[oy];
            const double* r0 = plane + ay.i0[oy] * w;
            const double* r1 = plane + ay.i1[oy] * w;
            for (int64_t ox = 0; ox < out_w; ++ox) {
                const double lx = ax.l1[ox];
                const int64_t x0 = ax.i0[ox], x1 = ax.i1[ox];
                dst[oy * out_w + ox] = (1 - ly) * ((1 - lx) * r0[x0] + lx * r0[x1]) +
                                       ly * ((1 - lx) * r1[x0] + lx * r1[x1]);
            }
        }
    }
    NodePtr xn = x.node();
    return make_result({n, c, out_h, out_w}, std::move(out), {x},
                       [xn, ay, ax, n, c, h, w, out_h, out_w](Node& self) {
                           double* gx = grad_target(xn);
                           if (!gx) {
                               return;
                           }
                           for (int64_t p = 0; p < n * c; ++p) {
                               double* plane = gx + p * h * w;
                               const double* g = self.grad.data() + p * out_h * out_w;
                               for (int64_t oy = 0; oy < out_h; ++oy) {
                                   const double ly = ay.l1[oy];
                                   double* r0 = plane + ay.i0[oy] * w;
                                   double* r1 = plane + ay.i1[oy] * w;
                                   for (int64_t ox = 0; ox < out_w; ++ox) {
                                       const double lx = ax.l1[ox];
                                       const double v = g[oy * out_w + ox];
                                       r0[ax.i0[ox]] += (1 - ly) * (1 - lx) * v;
                                       r0[ax.i1[ox]] += (1 - ly) * lx * v;
                                       r1[ax.i0[ox]] += ly * (1 - lx) * v;
                                       r1[ax.i1[ox]] += ly * lx * v;
                                   }
                               }
                           }
                       });
}

Tensor crop(const Tensor& x, int64_t out_h, int64_t out_w) {
    require_rank(x, 4, "crop");
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (out_h > h || out_w > w || out_h < 1 || out_w < 1) {
        throw ShapeMismatch("crop: target larger than input " + shape_str(x.shape()));
    }
    if (out_h == h && out_w == w) {
        return reshape(x, x.shape());
    }
    Buffer out(static_cast<size_t>(n * c * out_h * out_w));
    for (int64_t p = 0; p < n * c; ++p) {
        for (int64_t y = 0; y < out_h; ++y) {
            const double* src = x.data().data() + p * h * w + y * w;
            std::copy(src, src + out_w, out.data() + (p * out_h + y) * out_w);
        }
    }
    NodePtr xn = x.node();
    return make_result({n, c, out_h, out_w}, std::move(out), {x},
                       [xn, n, c, h, w, out_h, out_w](Node& self) {
                           if (double* gx = grad_target(xn)) {
                               for (int64_t p = 0; p < n * c; ++p) {
                                   for (int64_t y = 0; y < out_h; ++y) {
                                       const double* src =
                                           self.grad.data() + (p * out_h + y) * out_w;
                                       double* dst = gx + p * h * w + y * w;
                                       for (int64_t i = 0; i < out_w; ++i) {
                                           dst[i] += src[i];
                                       }
                                   }
                               }
                           }
                       });
}

Tensor normalize_by_max(const Tensor& x) {
    const int64_t n = x.dim(0);
    const int64_t per = x.numel() / n;
    const auto xs = x.data();
    Buffer out(xs.begin(), xs.end());
    std::vector<int64_t> argmax(n, -1);
    Buffer maxima(n, 0.0);
    for (int64_t b = 0; b < n; ++b) {
        const double* begin = xs.data() + b * per;
        const auto it = std::max_element(begin, begin + per);
        if (*it > 0.0) {
            argmax[b] = it - begin;
            maxima[b] = *it;
            for (int64_t i = 0; i < per; ++i) {
                out[b * per + i] /= *it;
            }
        }
    }
    NodePtr xn = x.node();
    return make_result(x.shape(), std::move(out), {x}, [xn, n, per, argmax, maxima](Node& self) {
        double* gx = grad_target(xn);
        if (!gx) {
            return;
        }
        for (int64_t b = 0; b < n; ++b) {
            const double* g = self.grad.data() + b * per;
            if (argmax[b] < 0) {
                for (int64_t i = 0; i < per; ++i) {
                    gx[b * per + i] += g[i];
                }
                continue;
            }
            const double m = maxima[b];
            double dot = 0.0;
            for (int64_t i = 0; i < per; ++i) {
                gx[b * per + i] += g[i] / m;
                dot += g[i] * xn->value[b * per + i];
            }
            gx[b * per + argmax[b]] -= dot / (m * m);
        }
    });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) {
        total += v;
    }
    NodePtr xn = x.node();
    return make_result({}, {total}, {x}, [xn](Node& self) {
        if (double* gx = grad_target(xn)) {
            for (size_t i = 0; i < xn->value.size(); ++i) {
                gx[i] += self.grad[0];
            }
        }
    });
}

Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(std::max<int64_t>(x.numel(), 1)));
}

} // namespace profact::ops
