#include "ventseg/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include <Eigen/Core>

namespace ventseg {

namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Rows are (in_channel, kz, ky, kx); columns are output voxels.
void im2col(const Real* x, const ConvGeometry& g, const Extent3& in, const Extent3& out, Real* col) {
    const auto out_vox = out.voxels();
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
        const Real* xc = x + ci * in.voxels();
        for (std::int64_t kz = 0; kz < g.kernel.d; ++kz)
            for (std::int64_t ky = 0; ky < g.kernel.h; ++ky)
                for (std::int64_t kx = 0; kx < g.kernel.w; ++kx, ++row) {
                    Real* dst = col + row * out_vox;
                    for (std::int64_t oz = 0; oz < out.d; ++oz) {
                        const auto iz = oz * g.stride.d - g.padding.d + kz;
                        for (std::int64_t oy = 0; oy < out.h; ++oy) {
                            Real* drow = dst + (oz * out.h + oy) * out.w;
                            const auto iy = oy * g.stride.h - g.padding.h + ky;
                            if (iz < 0 || iz >= in.d || iy < 0 || iy >= in.h) {
                                std::fill(drow, drow + out.w, Real(0));
                                continue;
                            }
                            const Real* srow = xc + (iz * in.h + iy) * in.w;
                            for (std::int64_t ox = 0; ox < out.w; ++ox) {
                                const auto ix = ox * g.stride.w - g.padding.w + kx;
                                drow[ox] = (ix >= 0 && ix < in.w) ? srow[ix] : Real(0);
                            }
                        }
                    }
                }
    }
}

void col2im(const Real* col, const ConvGeometry& g, const Extent3& in, const Extent3& out, Real* dx) {
    const auto out_vox = out.voxels();
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
        Real* xc = dx + ci * in.voxels();
        for (std::int64_t kz = 0; kz < g.kernel.d; ++kz)
            for (std::int64_t ky = 0; ky < g.kernel.h; ++ky)
                for (std::int64_t kx = 0; kx < g.kernel.w; ++kx, ++row) {
                    const Real* src = col + row * out_vox;
                    for (std::int64_t oz = 0; oz < out.d; ++oz) {
                        const auto iz = oz * g.stride.d - g.padding.d + kz;
                        if (iz < 0 || iz >= in.d) continue;
                        for (std::int64_t oy = 0; oy < out.h; ++oy) {
                            const auto iy = oy * g.stride.h - g.padding.h + ky;
                            if (iy < 0 || iy >= in.h) continue;
                            const Real* srow = src + (oz * out.h + oy) * out.w;
                            Real* drow = xc + (iz * in.h + iy) * in.w;
                            for (std::int64_t ox = 0; ox < out.w; ++ox) {
                                const auto ix = ox * g.stride.w - g.padding.w + kx;
                                if (ix >= 0 && ix < in.w) drow[ix] += srow[ox];
                            }
                        }
                    }
                }
    }
}

bool is_pointwise(const ConvGeometry& g) {
    return g.kernel == Extent3{1, 1, 1} && g.stride == Extent3{1, 1, 1} && g.padding == Extent3{0, 0, 0};
}

}  // namespace

Extent3 ConvGeometry::output_extent(const Extent3& in) const {
    if (transposed) return {in.d * stride.d, in.h * stride.h, in.w * stride.w};
    auto axis = [](std::int64_t i, std::int64_t k, std::int64_t s, std::int64_t p) {
        const auto span = i + 2 * p - k;
        if (span < 0 || span % s != 0)
            throw std::invalid_argument("convolution does not tile input of size " + std::to_string(i));
        return span / s + 1;
    };
    return {axis(in.d, kernel.d, stride.d, padding.d), axis(in.h, kernel.h, stride.h, padding.h),
            axis(in.w, kernel.w, stride.w, padding.w)};
}

ConvLayer::ConvLayer(ParameterStore& store, const std::string& name, ConvGeometry geometry)
    : geom_(geometry) {
    const auto k = geom_.kernel;
    if (geom_.transposed) {
        if (!(geom_.kernel == geom_.stride) || !(geom_.padding == Extent3{0, 0, 0}))
            throw std::invalid_argument("deconvolution requires kernel == stride and no padding");
        weight_ = store.add(name + ".weight", {geom_.in_channels, geom_.out_channels, k.d, k.h, k.w}, 0);
    } else {
        weight_ = store.add(name + ".weight", {geom_.out_channels, geom_.in_channels, k.d, k.h, k.w}, 0);
    }
    bias_ = store.add(name + ".bias", {geom_.out_channels}, 0);
}

std::int64_t ConvLayer::fan_in() const { return geom_.in_channels * geom_.kernel_volume(); }
std::int64_t ConvLayer::fan_out() const { return geom_.out_channels * geom_.kernel_volume(); }

Tensor ConvLayer::forward(const ParameterStore& store, const Tensor& x) const {
    if (x.c() != geom_.in_channels)
        throw std::invalid_argument("convolution expects " + std::to_string(geom_.in_channels) +
                                    " channels, got " + x.shape_string());
    return geom_.transposed ? forward_transposed(store, x) : forward_direct(store, x);
}

Tensor ConvLayer::backward(ParameterStore& store, const Tensor& x, const Tensor& dy) const {
    return geom_.transposed ? backward_transposed(store, x, dy) : backward_direct(store, x, dy);
}

Tensor ConvLayer::forward_direct(const ParameterStore& store, const Tensor& x) const {
    const auto out_ext = geom_.output_extent(x.extent());
    Tensor y(x.n(), geom_.out_channels, out_ext);
    const auto rows = geom_.in_channels * geom_.kernel_volume();
    const auto cols = out_ext.voxels();
    ConstMatrixMap w(store[weight_].value.data(), geom_.out_channels, rows);
    const Real* bias = store[bias_].value.data();
    if (is_pointwise(geom_)) {
        // Fixed per-voxel operation order.
        const Real* wv = store[weight_].value.data();
        for (std::int64_t b = 0; b < x.n(); ++b)
            for (std::int64_t co = 0; co < geom_.out_channels; ++co) {
                Real* out = y.plane(b, co);
                std::fill(out, out + cols, bias[co]);
                for (std::int64_t ci = 0; ci < rows; ++ci) {
                    const Real wc = wv[co * rows + ci];
                    const Real* in = x.plane(b, ci);
                    for (std::int64_t i = 0; i < cols; ++i) out[i] += wc * in[i];
                }
            }
        return y;
    }
    std::vector<Real> col(static_cast<std::size_t>(rows * cols));
    for (std::int64_t b = 0; b < x.n(); ++b) {
        im2col(x.plane(b, 0), geom_, x.extent(), out_ext, col.data());
        const Real* src = col.data();
        MatrixMap out(y.plane(b, 0), geom_.out_channels, cols);
        out.noalias() = w * ConstMatrixMap(src, rows, cols);
        for (std::int64_t co = 0; co < geom_.out_channels; ++co) out.row(co).array() += bias[co];
    }
    return y;
}

Tensor ConvLayer::backward_direct(ParameterStore& store, const Tensor& x, const Tensor& dy) const {
    const auto out_ext = dy.extent();
    const auto rows = geom_.in_channels * geom_.kernel_volume();
    const auto cols = out_ext.voxels();
    ConstMatrixMap w(store[weight_].value.data(), geom_.out_channels, rows);
    MatrixMap dw(store[weight_].grad.data(), geom_.out_channels, rows);
    Real* db = store[bias_].grad.data();
    const bool pointwise = is_pointwise(geom_);
    Tensor dx(x.n(), x.c(), x.extent());
    std::vector<Real> col(pointwise ? 0 : static_cast<std::size_t>(rows * cols));
    std::vector<Real> dcol(pointwise ? 0 : static_cast<std::size_t>(rows * cols));
    for (std::int64_t b = 0; b < x.n(); ++b) {
        ConstMatrixMap g(dy.plane(b, 0), geom_.out_channels, cols);
        for (std::int64_t co = 0; co < geom_.out_channels; ++co) {
            // Summation order independent of buffer alignment.
            const Real* gr = dy.plane(b, co);
            double sum = 0;
            for (std::int64_t i = 0; i < cols; ++i) sum += gr[i];
            db[co] += static_cast<Real>(sum);
        }
        if (pointwise) {
            ConstMatrixMap in(x.plane(b, 0), rows, cols);
            dw.noalias() += g * in.transpose();
            MatrixMap(dx.plane(b, 0), rows, cols).noalias() = w.transpose() * g;
        } else {
            im2col(x.plane(b, 0), geom_, x.extent(), out_ext, col.data());
            dw.noalias() += g * ConstMatrixMap(col.data(), rows, cols).transpose();
            MatrixMap(dcol.data(), rows, cols).noalias() = w.transpose() * g;
            col2im(dcol.data(), geom_, x.extent(), out_ext, dx.plane(b, 0));
        }
    }
    return dx;
}

// y[co, s*i + a] = sum_ci W[ci, co, a] x[ci, i] + bias[co]
Tensor ConvLayer::forward_transposed(const ParameterStore& store, const Tensor& x) const {
    const auto in_ext = x.extent();
    const auto out_ext = geom_.output_extent(in_ext);
    const auto kv = geom_.kernel_volume();
    const auto k = geom_.kernel;
    const auto s_in = in_ext.voxels();
    Tensor y(x.n(), geom_.out_channels, out_ext);
    ConstMatrixMap w(store[weight_].value.data(), geom_.in_channels, geom_.out_channels * kv);
    const Real* bias = store[bias_].value.data();
    RowMatrix ycol(geom_.out_channels * kv, s_in);
    for (std::int64_t b = 0; b < x.n(); ++b) {
        ycol.noalias() = w.transpose() * ConstMatrixMap(x.plane(b, 0), geom_.in_channels, s_in);
        for (std::int64_t co = 0; co < geom_.out_channels; ++co) {
            Real* dst = y.plane(b, co);
            std::int64_t a = 0;
            for (std::int64_t kz = 0; kz < k.d; ++kz)
                for (std::int64_t ky = 0; ky < k.h; ++ky)
                    for (std::int64_t kx = 0; kx < k.w; ++kx, ++a) {
                        const Real* src = ycol.data() + (co * kv + a) * s_in;
                        for (std::int64_t z = 0; z < in_ext.d; ++z)
                            for (std::int64_t yy = 0; yy < in_ext.h; ++yy) {
                                const Real* srow = src + (z * in_ext.h + yy) * in_ext.w;
                                Real* drow = dst + ((z * k.d + kz) * out_ext.h + yy * k.h + ky) * out_ext.w + kx;
                                for (std::int64_t xx = 0; xx < in_ext.w; ++xx)
                                    drow[xx * k.w] = srow[xx] + bias[co];
                            }
                    }
        }
    }
    return y;
}

Tensor ConvLayer::backward_transposed(ParameterStore& store, const Tensor& x, const Tensor& dy) const {
    const auto in_ext = x.extent();
    const auto out_ext = dy.extent();
    const auto kv = geom_.kernel_volume();
    const auto k = geom_.kernel;
    const auto s_in = in_ext.voxels();
    ConstMatrixMap w(store[weight_].value.data(), geom_.in_channels, geom_.out_channels * kv);
    MatrixMap dw(store[weight_].grad.data(), geom_.in_channels, geom_.out_channels * kv);
    Real* db = store[bias_].grad.data();
    Tensor dx(x.n(), x.c(), in_ext);
    RowMatrix gcol(geom_.out_channels * kv, s_in);
    for (std::int64_t b = 0; b < x.n(); ++b) {
        for (std::int64_t co = 0; co < geom_.out_channels; ++co) {
            const Real* src = dy.plane(b, co);
            double sum = 0;
            for (std::int64_t i = 0; i < out_ext.voxels(); ++i) sum += src[i];
            db[co] += static_cast<Real>(sum);
            std::int64_t a = 0;
            for (std::int64_t kz = 0; kz < k.d; ++kz)
                for (std::int64_t ky = 0; ky < k.h; ++ky)
                    for (std::int64_t kx = 0; kx < k.w; ++kx, ++a) {
                        Real* dst = gcol.data() + (co * kv + a) * s_in;
                        for (std::int64_t z = 0; z < in_ext.d; ++z)
                            for (std::int64_t yy = 0; yy < in_ext.h; ++yy) {
                                Real* drow = dst + (z * in_ext.h + yy) * in_ext.w;
                                const Real* srow =
                                    src + ((z * k.d + kz) * out_ext.h + yy * k.h + ky) * out_ext.w + kx;
                                for (std::int64_t xx = 0; xx < in_ext.w; ++xx) drow[xx] = srow[xx * k.w];
                            }
                    }
        }
        ConstMatrixMap in(x.plane(b, 0), geom_.in_channels, s_in);
        dw.noalias() += in * gcol.transpose();
        MatrixMap(dx.plane(b, 0), geom_.in_channels, s_in).noalias() = w * gcol;
    }
    return dx;
}

BatchNormLayer::BatchNormLayer(ParameterStore& store, const std::string& name, std::int64_t channels)
    : channels_(channels), name_(name) {
    gamma_ = store.add(name + ".gamma", {channels}, 1);
    beta_ = store.add(name + ".beta", {channels}, 0);
    mean_ = store.add(name + ".running_mean", {channels}, 0, false);
    var_ = store.add(name + ".running_var", {channels}, 1, false);
    ready_ = store.add(name + ".ready", {1}, 0, false);
}

bool BatchNormLayer::ready(const ParameterStore& store) const { return store[ready_].value[0] != Real(0); }
void BatchNormLayer::mark_ready(ParameterStore& store) const { store[ready_].value[0] = 1; }

Tensor BatchNormLayer::forward_train(ParameterStore& store, const Tensor& x, BatchNormCache& cache) const {
    const auto s = x.spatial();
    const auto m = static_cast<double>(x.n() * s);
    Tensor y(x.n(), x.c(), x.extent());
    cache.normalized = Tensor(x.n(), x.c(), x.extent());
    cache.inv_std.assign(static_cast<std::size_t>(channels_), 0);
    const Real* gamma = store[gamma_].value.data();
    const Real* beta = store[beta_].value.data();
    Real* rmean = store[mean_].value.data();
    Real* rvar = store[var_].value.data();
    for (std::int64_t c = 0; c < channels_; ++c) {
        double sum = 0;
        for (std::int64_t b = 0; b < x.n(); ++b) {
            const Real* p = x.plane(b, c);
            for (std::int64_t i = 0; i < s; ++i) sum += p[i];
        }
        const double mean = sum / m;
        double sq = 0;
        for (std::int64_t b = 0; b < x.n(); ++b) {
            const Real* p = x.plane(b, c);
            for (std::int64_t i = 0; i < s; ++i) sq += (p[i] - mean) * (p[i] - mean);
        }
        const double var = sq / m;
        const double inv = 1.0 / std::sqrt(var + kEpsilon);
        cache.inv_std[static_cast<std::size_t>(c)] = static_cast<Real>(inv);
        for (std::int64_t b = 0; b < x.n(); ++b) {
            const Real* p = x.plane(b, c);
            Real* xh = cache.normalized.plane(b, c);
            Real* out = y.plane(b, c);
            for (std::int64_t i = 0; i < s; ++i) {
                xh[i] = static_cast<Real>((p[i] - mean) * inv);
                out[i] = gamma[c] * xh[i] + beta[c];
            }
        }
        const double unbiased = m > 1 ? sq / (m - 1) : var;
        rmean[c] = static_cast<Real>(kMomentum * rmean[c] + (1 - kMomentum) * mean);
        rvar[c] = static_cast<Real>(kMomentum * rvar[c] + (1 - kMomentum) * unbiased);
    }
    mark_ready(store);
    return y;
}

Tensor BatchNormLayer::forward_eval(const ParameterStore& store, const Tensor& x) const {
    if (!ready(store))
        throw std::logic_error("batch normalization '" + name_ + "' has no running statistics");
    const auto s = x.spatial();
    Tensor y(x.n(), x.c(), x.extent());
    const Real* gamma = store[gamma_].value.data();
    const Real* beta = store[beta_].value.data();
    const Real* rmean = store[mean_].value.data();
    const Real* rvar = store[var_].value.data();
    for (std::int64_t c = 0; c < channels_; ++c) {
        const Real scale = gamma[c] / std::sqrt(rvar[c] + kEpsilon);
        const Real shift = beta[c] - scale * rmean[c];
        for (std::int64_t b = 0; b < x.n(); ++b) {
            const Real* p = x.plane(b, c);
            Real* out = y.plane(b, c);
            for (std::int64_t i = 0; i < s; ++i) out[i] = scale * p[i] + shift;
        }
    }
    return y;
}

Tensor BatchNormLayer::backward(ParameterStore& store, const BatchNormCache& cache, const Tensor& dy) const {
    const auto s = dy.spatial();
    const auto m = static_cast<double>(dy.n() * s);
    Tensor dx(dy.n(), dy.c(), dy.extent());
    const Real* gamma = store[gamma_].value.data();
    Real* dgamma = store[gamma_].grad.data();
    Real* dbeta = store[beta_].grad.data();
    for (std::int64_t c = 0; c < channels_; ++c) {
        double sum_dy = 0, sum_dy_xh = 0;
        for (std::int64_t b = 0; b < dy.n(); ++b) {
            const Real* g = dy.plane(b, c);
            const Real* xh = cache.normalized.plane(b, c);
            for (std::int64_t i = 0; i < s; ++i) {
                sum_dy += g[i];
                sum_dy_xh += static_cast<double>(g[i]) * xh[i];
            }
        }
        dgamma[c] += static_cast<Real>(sum_dy_xh);
        dbeta[c] += static_cast<Real>(sum_dy);
        const double k = gamma[c] * cache.inv_std[static_cast<std::size_t>(c)] / m;
        for (std::int64_t b = 0; b < dy.n(); ++b) {
            const Real* g = dy.plane(b, c);
            const Real* xh = cache.normalized.plane(b, c);
            Real* out = dx.plane(b, c);
            for (std::int64_t i = 0; i < s; ++i)
                out[i] = static_cast<Real>(k * (m * g[i] - sum_dy - xh[i] * sum_dy_xh));
        }
    }
    return dx;
}

void xavier_init(ParameterStore& store, const ConvLayer& layer, std::mt19937_64& rng, Real bias) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.fan_in() + layer.fan_out()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& w : store[layer.weight_index()].value) w = static_cast<Real>(dist(rng));
    for (auto& b : store[layer.bias_index()].value) b = bias;
}

void relu_inplace(Tensor& x) {
    for (auto& v : x.values()) v = v > 0 ? v : Real(0);
}

void relu_backward_inplace(const Tensor& y, Tensor& dy) {
    auto yv = y.values();
    auto g = dy.values();
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!(yv[i] > 0)) g[i] = 0;
}

Tensor max_pool(const Tensor& x, Extent3 win, PoolCache* cache) {
    const auto in = x.extent();
    if (in.d % win.d || in.h % win.h || in.w % win.w)
        throw std::invalid_argument("max_pool: extent " + to_string(in) + " not divisible by window");
    const Extent3 out{in.d / win.d, in.h / win.h, in.w / win.w};
    Tensor y(x.n(), x.c(), out);
    if (cache) {
        cache->input = in;
        cache->argmax.assign(y.size(), 0);
    }
    std::size_t o = 0;
    for (std::int64_t b = 0; b < x.n(); ++b)
        for (std::int64_t c = 0; c < x.c(); ++c) {
            const Real* p = x.plane(b, c);
            Real* q = y.plane(b, c);
            for (std::int64_t z = 0; z < out.d; ++z)
                for (std::int64_t yy = 0; yy < out.h; ++yy)
                    for (std::int64_t xx = 0; xx < out.w; ++xx, ++o) {
                        Real best = -std::numeric_limits<Real>::infinity();
                        std::int64_t arg = 0;
                        for (std::int64_t a = 0; a < win.d; ++a)
                            for (std::int64_t bb = 0; bb < win.h; ++bb)
                                for (std::int64_t cc = 0; cc < win.w; ++cc) {
                                    const auto idx =
                                        ((z * win.d + a) * in.h + yy * win.h + bb) * in.w + xx * win.w + cc;
                                    if (p[idx] > best) {
                                        best = p[idx];
                                        arg = idx;
                                    }
                                }
                        q[(z * out.h + yy) * out.w + xx] = best;
                        if (cache) cache->argmax[o] = arg;
                    }
        }
    return y;
}

Tensor max_pool_backward(const Tensor& dy, const PoolCache& cache, std::int64_t n, std::int64_t c) {
    Tensor dx(n, c, cache.input);
    std::size_t o = 0;
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const Real* g = dy.plane(b, ch);
            Real* d = dx.plane(b, ch);
            for (std::int64_t i = 0; i < dy.spatial(); ++i, ++o) d[cache.argmax[o]] += g[i];
        }
    return dx;
}

Tensor softmax_channels(const Tensor& logits) {
    Tensor p(logits.n(), logits.c(), logits.extent());
    const auto s = logits.spatial();
    for (std::int64_t b = 0; b < logits.n(); ++b)
        for (std::int64_t i = 0; i < s; ++i) {
            Real mx = -std::numeric_limits<Real>::infinity();
            for (std::int64_t c = 0; c < logits.c(); ++c) mx = std::max(mx, logits.plane(b, c)[i]);
            Real sum = 0;
            for (std::int64_t c = 0; c < logits.c(); ++c) {
                const Real e = std::exp(logits.plane(b, c)[i] - mx);
                p.plane(b, c)[i] = e;
                sum += e;
            }
            for (std::int64_t c = 0; c < logits.c(); ++c) p.plane(b, c)[i] /= sum;
        }
    return p;
}

Tensor softmax_backward(const Tensor& probs, const Tensor& dprobs) {
    Tensor dz(probs.n(), probs.c(), probs.extent());
    const auto s = probs.spatial();
    for (std::int64_t b = 0; b < probs.n(); ++b)
        for (std::int64_t i = 0; i < s; ++i) {
            Real dot = 0;
            for (std::int64_t c = 0; c < probs.c(); ++c) dot += probs.plane(b, c)[i] * dprobs.plane(b, c)[i];
            for (std::int64_t c = 0; c < probs.c(); ++c)
                dz.plane(b, c)[i] = probs.plane(b, c)[i] * (dprobs.plane(b, c)[i] - dot);
        }
    return dz;
}

}  // namespace ventseg
