#pragma once

// Differentiable operators over Tensor<S>. Convolutions lower to im2col +
// Eigen GEMM, blocked so the column buffer stays bounded; everything else
// is straightforward elementwise or reduction code. Each op validates its
// shapes up front and registers a backprop closure when gradients are on.

#include <Eigen/Dense>

#include <array>
#include <cstring>
#include <utility>

#include "ebus3d/tensor.hpp"

namespace ebus3d {

// Kernel/stride/pad are per spatial axis; 3 axes (t,h,w) for the 3D path,
// 2 axes (h,w) for the 2D path.
struct ConvSpec {
    int in_channels = 1;
    int out_channels = 1;
    std::vector<int> kernel;
    std::vector<int> stride;
    std::vector<int> pad;

    static ConvSpec cube3d(int in_ch, int out_ch, int k, int s, int p) {
        return {in_ch, out_ch, {k, k, k}, {s, s, s}, {p, p, p}};
    }
    static ConvSpec square2d(int in_ch, int out_ch, int k, int s, int p) {
        return {in_ch, out_ch, {k, k}, {s, s}, {p, p}};
    }
    int spatial_dims() const { return static_cast<int>(kernel.size()); }
};

inline std::int64_t conv_out_extent(std::int64_t in, int kernel, int stride, int pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

// Shape inference for conv: input [N,C,spatial...] -> [N,Cout,spatial'...].
// Throws when an output extent would be non-positive, naming the axis.
inline Shape conv_output_shape(const ConvSpec& spec, const Shape& input) {
    const int d = spec.spatial_dims();
    if (static_cast<int>(input.size()) != d + 2) {
        throw std::invalid_argument("conv: input rank " + std::to_string(input.size()) +
                                    " does not match spec with " + std::to_string(d) +
                                    " spatial axes");
    }
    if (input[1] != spec.in_channels) {
        throw std::invalid_argument("conv: channel axis mismatch: input has " +
                                    std::to_string(input[1]) + " channels, spec expects " +
                                    std::to_string(spec.in_channels));
    }
    Shape out{input[0], spec.out_channels};
    static const char* axis_names3[] = {"T", "H", "W"};
    static const char* axis_names2[] = {"H", "W"};
    const char** names = (d == 3) ? axis_names3 : axis_names2;
    for (int a = 0; a < d; ++a) {
        std::int64_t e = conv_out_extent(input[2 + a], spec.kernel[a], spec.stride[a], spec.pad[a]);
        if (e <= 0) {
            throw std::invalid_argument(std::string("conv: output extent on axis ") + names[a] +
                                        " is " + std::to_string(e) + " (input " +
                                        std::to_string(input[2 + a]) + ", kernel " +
                                        std::to_string(spec.kernel[a]) + ", stride " +
                                        std::to_string(spec.stride[a]) + ", pad " +
                                        std::to_string(spec.pad[a]) + ")");
        }
        out.push_back(e);
    }
    return out;
}

namespace detail {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using RowMajorMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Geometry of one 3D convolution, normalized so the 2D path is T=1.
struct ConvGeom {
    std::int64_t n, cin, cout;
    std::int64_t it, ih, iw;           // input extents
    std::int64_t ot, oh, ow;           // output extents
    int kt, kh, kw, st, sh, sw, pt, ph, pw;
    std::int64_t cols() const { return cin * kt * kh * kw; }
};

inline ConvGeom make_geom(const ConvSpec& spec, const Shape& in, const Shape& out) {
    ConvGeom g{};
    g.n = in[0];
    g.cin = spec.in_channels;
    g.cout = spec.out_channels;
    const bool is3d = spec.spatial_dims() == 3;
    g.it = is3d ? in[2] : 1;
    g.ih = in[is3d ? 3 : 2];
    g.iw = in[is3d ? 4 : 3];
    g.ot = is3d ? out[2] : 1;
    g.oh = out[is3d ? 3 : 2];
    g.ow = out[is3d ? 4 : 3];
    g.kt = is3d ? spec.kernel[0] : 1;
    g.kh = spec.kernel[is3d ? 1 : 0];
    g.kw = spec.kernel[is3d ? 2 : 1];
    g.st = is3d ? spec.stride[0] : 1;
    g.sh = spec.stride[is3d ? 1 : 0];
    g.sw = spec.stride[is3d ? 2 : 1];
    g.pt = is3d ? spec.pad[0] : 0;
    g.ph = spec.pad[is3d ? 1 : 0];
    g.pw = spec.pad[is3d ? 2 : 1];
    return g;
}

// Fill one column block of the patch matrix. colT is (rows*ow) x K,
// column-major; block covers output rows [y0,y1) at fixed output t.
template <typename S>
void im2col_block(const ConvGeom& g, const S* x, std::int64_t sample, std::int64_t t,
                  std::int64_t y0, std::int64_t y1, MatX<S>& colT) {
    const std::int64_t pcount = (y1 - y0) * g.ow;
    const std::int64_t in_plane = g.ih * g.iw;
    const std::int64_t in_chan = g.it * in_plane;
    const S* xs = x + sample * g.cin * in_chan;

    std::int64_t k = 0;
    for (std::int64_t c = 0; c < g.cin; ++c) {
        for (int dt = 0; dt < g.kt; ++dt) {
            const std::int64_t t_in = t * g.st - g.pt + dt;
            const bool t_ok = t_in >= 0 && t_in < g.it;
            for (int dy = 0; dy < g.kh; ++dy) {
                for (int dx = 0; dx < g.kw; ++dx, ++k) {
                    S* col = colT.data() + k * colT.rows();
                    if (!t_ok) {
                        std::fill(col, col + pcount, S(0));
                        continue;
                    }
                    const S* plane = xs + c * in_chan + t_in * in_plane;
                    for (std::int64_t y = y0; y < y1; ++y) {
                        S* row = col + (y - y0) * g.ow;
                        const std::int64_t y_in = y * g.sh - g.ph + dy;
                        if (y_in < 0 || y_in >= g.ih) {
                            std::fill(row, row + g.ow, S(0));
                            continue;
                        }
                        // in-bounds output x range for this kernel offset
                        std::int64_t lo = 0;
                        if (g.pw > dx) lo = (g.pw - dx + g.sw - 1) / g.sw;
                        std::int64_t hi = (g.iw - 1 + g.pw - dx) / g.sw;  // inclusive
                        if (hi > g.ow - 1) hi = g.ow - 1;
                        std::fill(row, row + std::min(lo, g.ow), S(0));
                        if (lo <= hi) {
                            const S* src = plane + y_in * g.iw + (lo * g.sw - g.pw + dx);
                            if (g.sw == 1) {
                                std::memcpy(row + lo, src, sizeof(S) * (hi - lo + 1));
                            } else {
                                for (std::int64_t xo = lo; xo <= hi; ++xo)
                                    row[xo] = src[(xo - lo) * g.sw];
                            }
                        }
                        if (hi + 1 < g.ow) std::fill(row + hi + 1, row + g.ow, S(0));
                    }
                }
            }
        }
    }
}

// Scatter-add of the column-gradient block back into dx (reverse of im2col).
template <typename S>
void col2im_block(const ConvGeom& g, S* dx, std::int64_t sample, std::int64_t t, std::int64_t y0,
                  std::int64_t y1, const MatX<S>& dcolT) {
    const std::int64_t in_plane = g.ih * g.iw;
    const std::int64_t in_chan = g.it * in_plane;
    S* xs = dx + sample * g.cin * in_chan;

    std::int64_t k = 0;
    for (std::int64_t c = 0; c < g.cin; ++c) {
        for (int dt = 0; dt < g.kt; ++dt) {
            const std::int64_t t_in = t * g.st - g.pt + dt;
            if (t_in < 0 || t_in >= g.it) {
                k += g.kh * g.kw;
                continue;
            }
            S* plane = xs + c * in_chan + t_in * in_plane;
            for (int dy = 0; dy < g.kh; ++dy) {
                for (int dx_ = 0; dx_ < g.kw; ++dx_, ++k) {
                    const S* col = dcolT.data() + k * dcolT.rows();
                    for (std::int64_t y = y0; y < y1; ++y) {
                        const std::int64_t y_in = y * g.sh - g.ph + dy;
                        if (y_in < 0 || y_in >= g.ih) continue;
                        const S* row = col + (y - y0) * g.ow;
                        std::int64_t lo = 0;
                        if (g.pw > dx_) lo = (g.pw - dx_ + g.sw - 1) / g.sw;
                        std::int64_t hi = (g.iw - 1 + g.pw - dx_) / g.sw;
                        if (hi > g.ow - 1) hi = g.ow - 1;
                        if (lo > hi) continue;
                        S* dst = plane + y_in * g.iw + (lo * g.sw - g.pw + dx_);
                        if (g.sw == 1) {
                            for (std::int64_t xo = lo; xo <= hi; ++xo) dst[xo - lo] += row[xo];
                        } else {
                            for (std::int64_t xo = lo; xo <= hi; ++xo)
                                dst[(xo - lo) * g.sw] += row[xo];
                        }
                    }
                }
            }
        }
    }
}

// Column-buffer budget; blocks of output rows are sized to stay under it.
constexpr std::int64_t kConvColBudgetBytes = 64ll << 20;

inline std::int64_t conv_rows_per_block(const ConvGeom& g, std::size_t scalar_bytes) {
    std::int64_t rows = kConvColBudgetBytes /
                        std::max<std::int64_t>(1, g.cols() * g.ow * static_cast<std::int64_t>(scalar_bytes));
    return std::clamp<std::int64_t>(rows, 1, g.oh);
}

template <typename S>
void conv_forward(const ConvGeom& g, const S* x, const S* w, const S* b, S* out) {
    const std::int64_t K = g.cols();
    const std::int64_t rows_per = conv_rows_per_block(g, sizeof(S));
    const std::int64_t pmax = rows_per * g.ow;
    MatX<S> colT(pmax, K);
    MatX<S> outB(pmax, g.cout);
    ConstRowMajorMap<S> wmat(w, g.cout, K);
    const std::int64_t out_plane = g.oh * g.ow;
    const std::int64_t out_chan = g.ot * out_plane;

    for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t t = 0; t < g.ot; ++t) {
            for (std::int64_t y0 = 0; y0 < g.oh; y0 += rows_per) {
                const std::int64_t y1 = std::min(g.oh, y0 + rows_per);
                const std::int64_t p = (y1 - y0) * g.ow;
                auto colV = colT.topRows(p);
                im2col_block(g, x, n, t, y0, y1, colT);
                outB.topRows(p).noalias() = colV * wmat.transpose();
                for (std::int64_t co = 0; co < g.cout; ++co) {
                    S* dst = out + ((n * g.cout + co) * out_chan) + t * out_plane + y0 * g.ow;
                    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>(dst, p) =
                        outB.col(co).head(p).array() + b[co];
                }
            }
        }
    }
}

template <typename S>
void conv_backward(const ConvGeom& g, const S* x, const S* w, const S* dout, S* dx, S* dw, S* db) {
    const std::int64_t K = g.cols();
    const std::int64_t rows_per = conv_rows_per_block(g, sizeof(S));
    const std::int64_t pmax = rows_per * g.ow;
    MatX<S> colT(pmax, K);
    MatX<S> doutB(pmax, g.cout);
    MatX<S> dcolT;
    if (dx) dcolT.resize(pmax, K);
    ConstRowMajorMap<S> wmat(w, g.cout, K);
    RowMajorMap<S> dwmat(dw ? dw : const_cast<S*>(w), g.cout, K);  // unused when dw null
    const std::int64_t out_plane = g.oh * g.ow;
    const std::int64_t out_chan = g.ot * out_plane;

    for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t t = 0; t < g.ot; ++t) {
            for (std::int64_t y0 = 0; y0 < g.oh; y0 += rows_per) {
                const std::int64_t y1 = std::min(g.oh, y0 + rows_per);
                const std::int64_t p = (y1 - y0) * g.ow;
                for (std::int64_t co = 0; co < g.cout; ++co) {
                    const S* src = dout + ((n * g.cout + co) * out_chan) + t * out_plane + y0 * g.ow;
                    doutB.col(co).head(p) = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(src, p);
                }
                if (dw || db) {
                    if (dw) {
                        im2col_block(g, x, n, t, y0, y1, colT);
                        dwmat.noalias() += doutB.topRows(p).transpose() * colT.topRows(p);
                    }
                    if (db) {
                        for (std::int64_t co = 0; co < g.cout; ++co)
                            db[co] += doutB.col(co).head(p).sum();
                    }
                }
                if (dx) {
                    dcolT.topRows(p).noalias() = doutB.topRows(p) * wmat;
                    col2im_block(g, dx, n, t, y0, y1, dcolT);
                }
            }
        }
    }
}

template <typename S>
void check_conv_args(const ConvSpec& spec, const Tensor<S>& x, const Tensor<S>& w,
                     const Tensor<S>& b, const char* name) {
    const int d = spec.spatial_dims();
    Shape expect_w{spec.out_channels, spec.in_channels};
    for (int a = 0; a < d; ++a) expect_w.push_back(spec.kernel[a]);
    if (w.shape() != expect_w) {
        throw std::invalid_argument(std::string(name) + ": weight shape " + shape_str(w.shape()) +
                                    " does not match spec, expected " + shape_str(expect_w));
    }
    if (b.shape() != Shape{spec.out_channels}) {
        throw std::invalid_argument(std::string(name) + ": bias shape " + shape_str(b.shape()) +
                                    " does not match out_channels " +
                                    std::to_string(spec.out_channels));
    }
    (void)x;
}

template <typename S>
Tensor<S> conv_impl(const Tensor<S>& x, const ConvSpec& spec, const Tensor<S>& w,
                    const Tensor<S>& b, const char* name) {
    check_conv_args(spec, x, w, b, name);
    Shape out_shape = conv_output_shape(spec, x.shape());
    ConvGeom g = make_geom(spec, x.shape(), out_shape);

    Tensor<S> out(out_shape);
    conv_forward(g, x.data_ptr(), w.data_ptr(), b.data_ptr(), out.data_ptr());

    if (grad_enabled() && (x.requires_grad() || w.requires_grad() || b.requires_grad())) {
        auto xn = x.node();
        auto wn = w.node();
        auto bn = b.node();
        out.set_requires_grad(true);
        out.node()->parents = {xn, wn, bn};
        out.node()->backprop = [g, xn, wn, bn](TensorNode<S>& self) {
            S* dx = nullptr;
            S* dw = nullptr;
            S* db = nullptr;
            if (xn->requires_grad) {
                xn->ensure_grad();
                dx = xn->grad.data();
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                dw = wn->grad.data();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                db = bn->grad.data();
            }
            if (dx || dw || db)
                conv_backward(g, xn->value.data(), wn->value.data(), self.grad.data(), dx, dw, db);
        };
    }
    return out;
}

}  // namespace detail

template <typename S>
Tensor<S> conv3d(const Tensor<S>& x, const ConvSpec& spec, const Tensor<S>& w, const Tensor<S>& b) {
    if (spec.spatial_dims() != 3)
        throw std::invalid_argument("conv3d: spec must have 3 spatial axes");
    if (x.dim() != 5)
        throw std::invalid_argument("conv3d: input must be rank 5 (NxCxTxHxW), got " +
                                    shape_str(x.shape()));
    return detail::conv_impl(x, spec, w, b, "conv3d");
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const ConvSpec& spec, const Tensor<S>& w, const Tensor<S>& b) {
    if (spec.spatial_dims() != 2)
        throw std::invalid_argument("conv2d: spec must have 2 spatial axes");
    if (x.dim() != 4)
        throw std::invalid_argument("conv2d: input must be rank 4 (NxCxHxW), got " +
                                    shape_str(x.shape()));
    return detail::conv_impl(x, spec, w, b, "conv2d");
}

// --- batch normalization ---------------------------------------------------

template <typename S>
struct BatchNormState {
    std::vector<S> running_mean;
    std::vector<S> running_var;
    S momentum = S(0.1);
    S eps = static_cast<S>(1e-5);

    explicit BatchNormState(std::int64_t channels = 0)
        : running_mean(static_cast<std::size_t>(channels), S(0)),
          running_var(static_cast<std::size_t>(channels), S(1)) {}
    std::int64_t channels() const { return static_cast<std::int64_t>(running_mean.size()); }
};

// Normalizes per channel (axis 1) over batch and spatial axes. In training
// mode uses batch statistics (biased variance) and, when update_running is
// set, folds them into the running estimates; in eval mode uses the stored
// running statistics.
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     BatchNormState<S>& state, bool training, bool update_running = true) {
    if (x.dim() < 2)
        throw std::invalid_argument("batch_norm: input must have rank >= 2, got " +
                                    shape_str(x.shape()));
    const std::int64_t n = x.extent(0);
    const std::int64_t c = x.extent(1);
    std::int64_t spatial = 1;
    for (std::int64_t a = 2; a < x.dim(); ++a) spatial *= x.extent(a);
    if (gamma.size() != c || beta.size() != c || state.channels() != c) {
        throw std::invalid_argument("batch_norm: channel mismatch: input has " + std::to_string(c) +
                                    " channels, scale " + std::to_string(gamma.size()) +
                                    ", shift " + std::to_string(beta.size()) + ", running stats " +
                                    std::to_string(state.channels()));
    }

    const std::int64_t m = n * spatial;     // reduction size per channel
    std::vector<S> mean(c), invstd(c);
    if (training) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const S* p = x.data_ptr() + (i * c + ch) * spatial;
                for (std::int64_t s = 0; s < spatial; ++s) acc += p[s];
            }
            const double mu = acc / static_cast<double>(m);
            double var = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const S* p = x.data_ptr() + (i * c + ch) * spatial;
                for (std::int64_t s = 0; s < spatial; ++s) {
                    const double d = p[s] - mu;
                    var += d * d;
                }
            }
            var /= static_cast<double>(m);
            mean[ch] = static_cast<S>(mu);
            invstd[ch] = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(state.eps)));
            if (update_running) {
                state.running_mean[ch] =
                    (S(1) - state.momentum) * state.running_mean[ch] + state.momentum * static_cast<S>(mu);
                state.running_var[ch] =
                    (S(1) - state.momentum) * state.running_var[ch] + state.momentum * static_cast<S>(var);
            }
        }
    } else {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            mean[ch] = state.running_mean[ch];
            invstd[ch] =
                static_cast<S>(1.0 / std::sqrt(static_cast<double>(state.running_var[ch]) +
                                               static_cast<double>(state.eps)));
        }
    }

    Tensor<S> out(x.shape());
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const S* p = x.data_ptr() + (i * c + ch) * spatial;
            S* q = out.data_ptr() + (i * c + ch) * spatial;
            const S mu = mean[ch], is = invstd[ch], g = gamma[ch], bshift = beta[ch];
            for (std::int64_t s = 0; s < spatial; ++s) q[s] = (p[s] - mu) * is * g + bshift;
        }
    }

    if (grad_enabled() && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
        auto xn = x.node();
        auto gn = gamma.node();
        auto bn = beta.node();
        out.set_requires_grad(true);
        out.node()->parents = {xn, gn, bn};
        out.node()->backprop = [xn, gn, bn, mean, invstd, n, c, spatial, m,
                                training](TensorNode<S>& self) {
            const S* dy = self.grad.data();
            const S* xv = xn->value.data();
            // per-channel sums of dy and dy*xhat
            std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const S* d = dy + (i * c + ch) * spatial;
                    const S* p = xv + (i * c + ch) * spatial;
                    const double mu = mean[ch], is = invstd[ch];
                    double s0 = 0.0, s1 = 0.0;
                    for (std::int64_t s = 0; s < spatial; ++s) {
                        s0 += d[s];
                        s1 += d[s] * (p[s] - mu) * is;
                    }
                    sum_dy[ch] += s0;
                    sum_dy_xhat[ch] += s1;
                }
            }
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (std::int64_t ch = 0; ch < c; ++ch)
                    gn->grad[ch] += static_cast<S>(sum_dy_xhat[ch]);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::int64_t ch = 0; ch < c; ++ch) bn->grad[ch] += static_cast<S>(sum_dy[ch]);
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                S* dx = xn->grad.data();
                for (std::int64_t i = 0; i < n; ++i) {
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        const S* d = dy + (i * c + ch) * spatial;
                        const S* p = xv + (i * c + ch) * spatial;
                        S* o = dx + (i * c + ch) * spatial;
                        const double mu = mean[ch], is = invstd[ch], g = gn->value[ch];
                        if (training) {
                            const double mdy = sum_dy[ch] / m;
                            const double mdyx = sum_dy_xhat[ch] / m;
                            for (std::int64_t s = 0; s < spatial; ++s) {
                                const double xhat = (p[s] - mu) * is;
                                o[s] += static_cast<S>(g * is * (d[s] - mdy - xhat * mdyx));
                            }
                        } else {
                            for (std::int64_t s = 0; s < spatial; ++s)
                                o[s] += static_cast<S>(g * is * d[s]);
                        }
                    }
                }
            }
        };
    }
    return out;
}

// --- elementwise -----------------------------------------------------------

namespace detail {

template <typename S, typename Fwd, typename MakeBack>
Tensor<S> unary_op(const Tensor<S>& x, Fwd&& fwd, MakeBack&& make_back) {
    Tensor<S> out(x.shape());
    fwd(x.data(), out.data());
    if (grad_enabled() && x.requires_grad()) {
        auto xn = x.node();
        out.set_requires_grad(true);
        out.node()->parents = {xn};
        out.node()->backprop = make_back(xn, out.node());
    }
    return out;
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* name) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

}  // namespace detail

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
    return detail::unary_op(
        x,
        [](const std::vector<S>& in, std::vector<S>& out) {
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > S(0) ? in[i] : S(0);
        },
        [](std::shared_ptr<TensorNode<S>> xn, std::shared_ptr<TensorNode<S>>) {
            return [xn](TensorNode<S>& self) {
                if (!xn->requires_grad) return;
                xn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    if (xn->value[i] > S(0)) xn->grad[i] += self.grad[i];
            };
        });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    return detail::unary_op(
        x,
        [](const std::vector<S>& in, std::vector<S>& out) {
            for (std::size_t i = 0; i < in.size(); ++i)
                out[i] = static_cast<S>(1.0 / (1.0 + std::exp(-static_cast<double>(in[i]))));
        },
        [](std::shared_ptr<TensorNode<S>> xn, std::shared_ptr<TensorNode<S>> on) {
            return [xn, on](TensorNode<S>& self) {
                if (!xn->requires_grad) return;
                xn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    const S p = on->value[i];
                    xn->grad[i] += self.grad[i] * p * (S(1) - p);
                }
            };
        });
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<S> out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
        auto an = a.node();
        auto bn = b.node();
        out.set_requires_grad(true);
        out.node()->parents = {an, bn};
        out.node()->backprop = [an, bn](TensorNode<S>& self) {
            for (auto& pn : {an, bn}) {
                if (!pn->requires_grad) continue;
                pn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pn->grad[i] += self.grad[i];
            }
        };
    }
    return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<S> out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
        auto an = a.node();
        auto bn = b.node();
        out.set_requires_grad(true);
        out.node()->parents = {an, bn};
        out.node()->backprop = [an, bn](TensorNode<S>& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    an->grad[i] += self.grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    bn->grad[i] += self.grad[i] * an->value[i];
            }
        };
    }
    return out;
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& x, S c) {
    return detail::unary_op(
        x,
        [c](const std::vector<S>& in, std::vector<S>& out) {
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * c;
        },
        [c](std::shared_ptr<TensorNode<S>> xn, std::shared_ptr<TensorNode<S>>) {
            return [xn, c](TensorNode<S>& self) {
                if (!xn->requires_grad) return;
                xn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    xn->grad[i] += self.grad[i] * c;
            };
        });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) acc += x[i];
    Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc));
    if (grad_enabled() && x.requires_grad()) {
        auto xn = x.node();
        out.set_requires_grad(true);
        out.node()->parents = {xn};
        out.node()->backprop = [xn](TensorNode<S>& self) {
            xn->ensure_grad();
            const S g = self.grad[0];
            for (auto& v : xn->grad) v += g;
        };
    }
    return out;
}

// --- pooling / linear --------------------------------------------------------

// Mean over every non-batch, non-channel axis: [N,C,...] -> [N,C].
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
    if (x.dim() < 3)
        throw std::invalid_argument("global_avg_pool: input must have rank >= 3, got " +
                                    shape_str(x.shape()));
    const std::int64_t n = x.extent(0), c = x.extent(1);
    std::int64_t spatial = 1;
    for (std::int64_t a = 2; a < x.dim(); ++a) spatial *= x.extent(a);

    Tensor<S> out({n, c});
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const S* p = x.data_ptr() + (i * c + ch) * spatial;
            double acc = 0.0;
            for (std::int64_t s = 0; s < spatial; ++s) acc += p[s];
            out[i * c + ch] = static_cast<S>(acc / static_cast<double>(spatial));
        }
    }
    if (grad_enabled() && x.requires_grad()) {
        auto xn = x.node();
        out.set_requires_grad(true);
        out.node()->parents = {xn};
        out.node()->backprop = [xn, n, c, spatial](TensorNode<S>& self) {
            xn->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const S g = self.grad[i * c + ch] / static_cast<S>(spatial);
                    S* d = xn->grad.data() + (i * c + ch) * spatial;
                    for (std::int64_t s = 0; s < spatial; ++s) d[s] += g;
                }
            }
        };
    }
    return out;
}

// Affine map: x [N,Fin], w [Fout,Fin], b [Fout] -> [N,Fout].
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    if (x.dim() != 2)
        throw std::invalid_argument("linear: input must be rank 2 (NxF), got " + shape_str(x.shape()));
    if (w.dim() != 2)
        throw std::invalid_argument("linear: weight must be rank 2, got " + shape_str(w.shape()));
    const std::int64_t n = x.extent(0), fin = x.extent(1);
    const std::int64_t fout = w.extent(0);
    if (w.extent(1) != fin)
        throw std::invalid_argument("linear: dimension mismatch: input features " +
                                    std::to_string(fin) + ", weight expects " +
                                    std::to_string(w.extent(1)));
    if (b.shape() != Shape{fout})
        throw std::invalid_argument("linear: bias shape " + shape_str(b.shape()) +
                                    " does not match out features " + std::to_string(fout));

    Tensor<S> out({n, fout});
    detail::ConstRowMajorMap<S> xm(x.data_ptr(), n, fin);
    detail::ConstRowMajorMap<S> wm(w.data_ptr(), fout, fin);
    detail::RowMajorMap<S> ym(out.data_ptr(), n, fout);
    ym.noalias() = xm * wm.transpose();
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < fout; ++j) out[i * fout + j] += b[j];

    if (grad_enabled() && (x.requires_grad() || w.requires_grad() || b.requires_grad())) {
        auto xn = x.node();
        auto wn = w.node();
        auto bn = b.node();
        out.set_requires_grad(true);
        out.node()->parents = {xn, wn, bn};
        out.node()->backprop = [xn, wn, bn, n, fin, fout](TensorNode<S>& self) {
            detail::ConstRowMajorMap<S> dy(self.grad.data(), n, fout);
            if (xn->requires_grad) {
                xn->ensure_grad();
                detail::RowMajorMap<S> dx(xn->grad.data(), n, fin);
                detail::ConstRowMajorMap<S> wm(wn->value.data(), fout, fin);
                dx.noalias() += dy * wm;
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                detail::RowMajorMap<S> dw(wn->grad.data(), fout, fin);
                detail::ConstRowMajorMap<S> xm(xn->value.data(), n, fin);
                dw.noalias() += dy.transpose() * xm;
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < fout; ++j) bn->grad[j] += self.grad[i * fout + j];
            }
        };
    }
    return out;
}

// --- loss -------------------------------------------------------------------

// Binary cross entropy of a single score against a {0,1} label. The score is
// clamped to [1e-7, 1-1e-7] before the logs; gradient is zero outside the
// clamp window.
template <typename S>
Tensor<S> bce_loss(const Tensor<S>& score, S label) {
    if (score.size() != 1)
        throw std::invalid_argument("bce_loss: score must be a single value, got shape " +
                                    shape_str(score.shape()));
    if (label != S(0) && label != S(1))
        throw std::invalid_argument("bce_loss: label must be 0 or 1");

    constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
    const double raw = static_cast<double>(score[0]);
    const double p = std::clamp(raw, lo, hi);
    const double y = static_cast<double>(label);
    const double l = -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    Tensor<S> out = Tensor<S>::scalar(static_cast<S>(l));

    if (grad_enabled() && score.requires_grad()) {
        auto sn = score.node();
        out.set_requires_grad(true);
        out.node()->parents = {sn};
        out.node()->backprop = [sn, p, y, raw](TensorNode<S>& self) {
            sn->ensure_grad();
            if (raw > lo && raw < hi) {
                sn->grad[0] += self.grad[0] * static_cast<S>((p - y) / (p * (1.0 - p)));
            }
        };
    }
    return out;
}

}  // namespace ebus3d
