#include "sglab/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sglab::kernels {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

// Patch matrix [Ho*Wo, k*k*C] for one HWC image.
template <typename T>
void im2col(const T* img, std::size_t h, std::size_t w, std::size_t c, ConvGeometry g, std::size_t ho,
            std::size_t wo, T* cols) {
    const int k = g.kernel, pad = g.pad();
    const std::size_t row_len = static_cast<std::size_t>(k * k) * c;
    for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
            T* row = cols + (oy * wo + ox) * row_len;
            for (int ky = 0; ky < k; ++ky) {
                const long iy = static_cast<long>(oy) * g.stride - pad + ky;
                for (int kx = 0; kx < k; ++kx) {
                    const long ix = static_cast<long>(ox) * g.stride - pad + kx;
                    T* dst = row + static_cast<std::size_t>(ky * k + kx) * c;
                    if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) {
                        std::fill_n(dst, c, T{0});
                    } else {
                        std::copy_n(img + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c,
                                    c, dst);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add patch rows back into an HWC image.
template <typename T>
void col2im(const T* cols, std::size_t h, std::size_t w, std::size_t c, ConvGeometry g, std::size_t ho,
            std::size_t wo, T* img) {
    const int k = g.kernel, pad = g.pad();
    const std::size_t row_len = static_cast<std::size_t>(k * k) * c;
    std::fill_n(img, h * w * c, T{0});
    for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
            const T* row = cols + (oy * wo + ox) * row_len;
            for (int ky = 0; ky < k; ++ky) {
                const long iy = static_cast<long>(oy) * g.stride - pad + ky;
                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const long ix = static_cast<long>(ox) * g.stride - pad + kx;
                    if (ix < 0 || ix >= static_cast<long>(w)) continue;
                    const T* src = row + static_cast<std::size_t>(ky * k + kx) * c;
                    T* dst = img + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                }
            }
        }
    }
}

bool is_pointwise(ConvGeometry g) { return g.kernel == 1 && g.stride == 1; }

template <typename T>
void add_bias_rows(T* y, std::size_t rows, const Tensor<T>& bias) {
    const std::size_t n = bias.size();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) y[r * n + j] += bias[j];
}

template <typename T>
void accumulate_bias_grad(const Tensor<T>& dy, Tensor<T>& dbias) {
    const std::size_t n = dbias.size();
    const std::size_t rows = dy.size() / n;
    std::vector<double> acc(n, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) acc[j] += dy[r * n + j];
    for (std::size_t j = 0; j < n; ++j) dbias[j] += static_cast<T>(acc[j]);
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias, ConvGeometry g) {
    require(x.rank() == 4, "conv2d expects NHWC input, got " + shape_string(x.shape()));
    const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
    const std::size_t k = static_cast<std::size_t>(g.kernel);
    require(weight.shape() == Shape({k, k, cin, weight.dim(3)}),
            "conv2d weight " + shape_string(weight.shape()) + " incompatible with input " +
                shape_string(x.shape()));
    const std::size_t cout = weight.dim(3);
    const std::size_t ho = g.out_extent(h), wo = g.out_extent(w);
    const std::size_t kk = k * k * cin;
    Tensor<T> y({b, ho, wo, cout});
    std::vector<T> cols(is_pointwise(g) ? 0 : ho * wo * kk);
    ConstMatMap<T> wm(weight.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(cout));
    for (std::size_t n = 0; n < b; ++n) {
        const T* img = x.data() + n * h * w * cin;
        const T* patch = img;
        if (!is_pointwise(g)) {
            im2col(img, h, w, cin, g, ho, wo, cols.data());
            patch = cols.data();
        }
        ConstMatMap<T> cm(patch, static_cast<Eigen::Index>(ho * wo), static_cast<Eigen::Index>(kk));
        MatMap<T> ym(y.data() + n * ho * wo * cout, static_cast<Eigen::Index>(ho * wo),
                     static_cast<Eigen::Index>(cout));
        ym.noalias() = cm * wm;
        if (bias) add_bias_rows(ym.data(), ho * wo, *bias);
    }
    return y;
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& weight, const Shape& input_shape,
                                ConvGeometry g) {
    const std::size_t b = input_shape[0], h = input_shape[1], w = input_shape[2], cin = input_shape[3];
    const std::size_t k = static_cast<std::size_t>(g.kernel);
    const std::size_t cout = weight.dim(3);
    const std::size_t ho = g.out_extent(h), wo = g.out_extent(w);
    require(dy.shape() == Shape({b, ho, wo, cout}), "conv2d backward: gradient shape mismatch");
    const std::size_t kk = k * k * cin;
    Tensor<T> dx(input_shape);
    std::vector<T> cols(ho * wo * kk);
    ConstMatMap<T> wm(weight.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(cout));
    for (std::size_t n = 0; n < b; ++n) {
        ConstMatMap<T> dym(dy.data() + n * ho * wo * cout, static_cast<Eigen::Index>(ho * wo),
                           static_cast<Eigen::Index>(cout));
        T* dimg = dx.data() + n * h * w * cin;
        if (is_pointwise(g)) {
            MatMap<T> dm(dimg, static_cast<Eigen::Index>(ho * wo), static_cast<Eigen::Index>(kk));
            dm.noalias() = dym * wm.transpose();
        } else {
            MatMap<T> cm(cols.data(), static_cast<Eigen::Index>(ho * wo), static_cast<Eigen::Index>(kk));
            cm.noalias() = dym * wm.transpose();
            col2im(cols.data(), h, w, cin, g, ho, wo, dimg);
        }
    }
    return dx;
}

template <typename T>
void conv2d_backward_params(const Tensor<T>& x, const Tensor<T>& dy, ConvGeometry g, Tensor<T>& dweight,
                            Tensor<T>* dbias) {
    const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
    const std::size_t k = static_cast<std::size_t>(g.kernel);
    const std::size_t cout = dweight.dim(3);
    const std::size_t ho = g.out_extent(h), wo = g.out_extent(w);
    const std::size_t kk = k * k * cin;
    std::vector<T> cols(is_pointwise(g) ? 0 : ho * wo * kk);
    MatMap<T> dwm(dweight.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(cout));
    for (std::size_t n = 0; n < b; ++n) {
        const T* img = x.data() + n * h * w * cin;
        const T* patch = img;
        if (!is_pointwise(g)) {
            im2col(img, h, w, cin, g, ho, wo, cols.data());
            patch = cols.data();
        }
        ConstMatMap<T> cm(patch, static_cast<Eigen::Index>(ho * wo), static_cast<Eigen::Index>(kk));
        ConstMatMap<T> dym(dy.data() + n * ho * wo * cout, static_cast<Eigen::Index>(ho * wo),
                           static_cast<Eigen::Index>(cout));
        dwm.noalias() += cm.transpose() * dym;
    }
    if (dbias) accumulate_bias_grad(dy, *dbias);
}

template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias, int kernel) {
    require(x.rank() == 4, "deconv2d expects NHWC input");
    const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
    const std::size_t k = static_cast<std::size_t>(kernel);
    require(weight.rank() == 4 && weight.dim(0) == k && weight.dim(1) == k && weight.dim(3) == cin,
            "deconv2d weight " + shape_string(weight.shape()) + " incompatible with input " +
                shape_string(x.shape()));
    const std::size_t cout = weight.dim(2);
    const std::size_t kk = k * k * cout;
    const ConvGeometry g{kernel, 1};
    Tensor<T> y({b, h, w, cout});
    std::vector<T> cols(h * w * kk);
    ConstMatMap<T> wm(weight.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(cin));
    for (std::size_t n = 0; n < b; ++n) {
        ConstMatMap<T> xm(x.data() + n * h * w * cin, static_cast<Eigen::Index>(h * w),
                          static_cast<Eigen::Index>(cin));
        MatMap<T> cm(cols.data(), static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(kk));
        cm.noalias() = xm * wm.transpose();
        T* out = y.data() + n * h * w * cout;
        col2im(cols.data(), h, w, cout, g, h, w, out);
        if (bias) add_bias_rows(out, h * w, *bias);
    }
    return y;
}

template <typename T>
Tensor<T> deconv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& weight, int kernel) {
    const std::size_t b = dy.dim(0), h = dy.dim(1), w = dy.dim(2), cout = dy.dim(3);
    const std::size_t k = static_cast<std::size_t>(kernel);
    const std::size_t cin = weight.dim(3);
    const std::size_t kk = k * k * cout;
    const ConvGeometry g{kernel, 1};
    Tensor<T> dx({b, h, w, cin});
    std::vector<T> cols(h * w * kk);
    ConstMatMap<T> wm(weight.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(cin));
    for (std::size_t n = 0; n < b; ++n) {
        im2col(dy.data() + n * h * w * cout, h, w, cout, g, h, w, cols.data());
        ConstMatMap<T> cm(cols.data(), static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(kk));
        MatMap<T> dxm(dx.data() + n * h * w * cin, static_cast<Eigen::Index>(h * w),
                      static_cast<Eigen::Index>(cin));
        dxm.noalias() = cm * wm;
    }
    return dx;
}

template <typename T>
void deconv2d_backward_params(const Tensor<T>& x, const Tensor<T>& dy, int kernel, Tensor<T>& dweight,
                              Tensor<T>* dbias) {
    const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
    const std::size_t cout = dy.dim(3);
    const std::size_t k = static_cast<std::size_t>(kernel);
    const std::size_t kk = k * k * cout;
    const ConvGeometry g{kernel, 1};
    std::vector<T> cols(h * w * kk);
    MatMap<T> dwm(dweight.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(cin));
    for (std::size_t n = 0; n < b; ++n) {
        im2col(dy.data() + n * h * w * cout, h, w, cout, g, h, w, cols.data());
        ConstMatMap<T> cm(cols.data(), static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(kk));
        ConstMatMap<T> xm(x.data() + n * h * w * cin, static_cast<Eigen::Index>(h * w),
                          static_cast<Eigen::Index>(cin));
        dwm.noalias() += cm.transpose() * xm;
    }
    if (dbias) accumulate_bias_grad(dy, *dbias);
}

template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                           BatchStats<T>& stats) {
    const std::size_t c = x.shape().back();
    require(scale.size() == c && shift.size() == c, "batch_norm: channel mismatch");
    const std::size_t m = x.size() / c;
    std::vector<double> sum(c, 0.0), sq(c, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) sum[j] += x[i * c + j];
    stats.mean.assign(c, T{0});
    stats.var.assign(c, T{0});
    stats.inv_std.assign(c, T{0});
    stats.count = m;
    std::vector<double> mean(c);
    for (std::size_t j = 0; j < c; ++j) mean[j] = sum[j] / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double d = x[i * c + j] - mean[j];
            sq[j] += d * d;
        }
    for (std::size_t j = 0; j < c; ++j) {
        const double var = sq[j] / static_cast<double>(m);
        stats.mean[j] = static_cast<T>(mean[j]);
        stats.var[j] = static_cast<T>(var);
        stats.inv_std[j] = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
    }
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j)
            y[i * c + j] = scale[j] * (x[i * c + j] - stats.mean[j]) * stats.inv_std[j] + shift[j];
    return y;
}

template <typename T>
Tensor<T> batch_norm_infer(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                           const Tensor<T>& running_mean, const Tensor<T>& running_var) {
    const std::size_t c = x.shape().back();
    require(scale.size() == c && running_mean.size() == c, "batch_norm: channel mismatch");
    std::vector<T> a(c), bias(c);
    for (std::size_t j = 0; j < c; ++j) {
        const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[j]) + kBatchNormEps));
        a[j] = scale[j] * inv;
        bias[j] = shift[j] - a[j] * running_mean[j];
    }
    Tensor<T> y(x.shape());
    const std::size_t m = x.size() / c;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) y[i * c + j] = a[j] * x[i * c + j] + bias[j];
    return y;
}

template <typename T>
Tensor<T> batch_norm_train_backward(const Tensor<T>& x, const Tensor<T>& dy, const Tensor<T>& scale,
                                    const BatchStats<T>& stats, Tensor<T>* dscale, Tensor<T>* dshift) {
    const std::size_t c = x.shape().back();
    const std::size_t m = x.size() / c;
    std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double xhat = (x[i * c + j] - stats.mean[j]) * static_cast<double>(stats.inv_std[j]);
            sum_dy[j] += dy[i * c + j];
            sum_dy_xhat[j] += dy[i * c + j] * xhat;
        }
    if (dscale)
        for (std::size_t j = 0; j < c; ++j) (*dscale)[j] += static_cast<T>(sum_dy_xhat[j]);
    if (dshift)
        for (std::size_t j = 0; j < c; ++j) (*dshift)[j] += static_cast<T>(sum_dy[j]);
    Tensor<T> dx(x.shape());
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double xhat = (x[i * c + j] - stats.mean[j]) * static_cast<double>(stats.inv_std[j]);
            const double g = static_cast<double>(scale[j]) * stats.inv_std[j] *
                             (dy[i * c + j] - sum_dy[j] * inv_m - xhat * sum_dy_xhat[j] * inv_m);
            dx[i * c + j] = static_cast<T>(g);
        }
    return dx;
}

template <typename T>
Tensor<T> batch_norm_infer_backward(const Tensor<T>& x, const Tensor<T>& dy, const Tensor<T>& scale,
                                    const Tensor<T>& running_mean, const Tensor<T>& running_var,
                                    Tensor<T>* dscale, Tensor<T>* dshift) {
    const std::size_t c = x.shape().back();
    const std::size_t m = x.size() / c;
    std::vector<double> inv(c);
    for (std::size_t j = 0; j < c; ++j)
        inv[j] = 1.0 / std::sqrt(static_cast<double>(running_var[j]) + kBatchNormEps);
    std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double xhat = (x[i * c + j] - running_mean[j]) * inv[j];
            sum_dy[j] += dy[i * c + j];
            sum_dy_xhat[j] += dy[i * c + j] * xhat;
            dx[i * c + j] = static_cast<T>(dy[i * c + j] * scale[j] * inv[j]);
        }
    if (dscale)
        for (std::size_t j = 0; j < c; ++j) (*dscale)[j] += static_cast<T>(sum_dy_xhat[j]);
    if (dshift)
        for (std::size_t j = 0; j < c; ++j) (*dshift)[j] += static_cast<T>(sum_dy[j]);
    return dx;
}

namespace {

// Source taps for output index o of a 2x half-pixel upsample over n inputs.
struct Taps {
    std::size_t i0, i1;
    double w0, w1;
};

Taps up2_taps(std::size_t o, std::size_t n) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > n - 1) i0 = n - 1;
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    const double w1 = src - static_cast<double>(i0);
    return {i0, i1, 1.0 - w1, w1};
}

}  // namespace

template <typename T>
Tensor<T> bilinear_up2(const Tensor<T>& x) {
    require(x.rank() == 4, "bilinear_up2 expects NHWC input");
    const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    Tensor<T> y({b, 2 * h, 2 * w, c});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t oy = 0; oy < 2 * h; ++oy) {
            const Taps ty = up2_taps(oy, h);
            for (std::size_t ox = 0; ox < 2 * w; ++ox) {
                const Taps tx = up2_taps(ox, w);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double v = ty.w0 * (tx.w0 * x(n, ty.i0, tx.i0, ch) + tx.w1 * x(n, ty.i0, tx.i1, ch)) +
                                     ty.w1 * (tx.w0 * x(n, ty.i1, tx.i0, ch) + tx.w1 * x(n, ty.i1, tx.i1, ch));
                    y(n, oy, ox, ch) = static_cast<T>(v);
                }
            }
        }
    return y;
}

template <typename T>
Tensor<T> bilinear_up2_backward(const Tensor<T>& dy) {
    const std::size_t b = dy.dim(0), h = dy.dim(1) / 2, w = dy.dim(2) / 2, c = dy.dim(3);
    Tensor<T> dx({b, h, w, c});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t oy = 0; oy < 2 * h; ++oy) {
            const Taps ty = up2_taps(oy, h);
            for (std::size_t ox = 0; ox < 2 * w; ++ox) {
                const Taps tx = up2_taps(ox, w);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double g = dy(n, oy, ox, ch);
                    dx(n, ty.i0, tx.i0, ch) += static_cast<T>(ty.w0 * tx.w0 * g);
                    dx(n, ty.i0, tx.i1, ch) += static_cast<T>(ty.w0 * tx.w1 * g);
                    dx(n, ty.i1, tx.i0, ch) += static_cast<T>(ty.w1 * tx.w0 * g);
                    dx(n, ty.i1, tx.i1, ch) += static_cast<T>(ty.w1 * tx.w1 * g);
                }
            }
        }
    return dx;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
    return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{0} ? dy[i] : T{0};
    return dx;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    constexpr T lo = std::numeric_limits<T>::min();
    const T hi = std::nextafter(T{1}, T{0});
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T v = T{1} / (T{1} + std::exp(-x[i]));
        y[i] = std::clamp(v, lo, hi);
    }
    return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
    Tensor<T> dx(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * y[i] * (T{1} - y[i]);
    return dx;
}

template <typename T>
Tensor<T> global_average_pool(const Tensor<T>& x) {
    const std::size_t b = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
    Tensor<T> y({b, c});
    for (std::size_t n = 0; n < b; ++n) {
        std::vector<double> acc(c, 0.0);
        const T* img = x.data() + n * hw * c;
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += img[p * c + ch];
        for (std::size_t ch = 0; ch < c; ++ch) y[n * c + ch] = static_cast<T>(acc[ch] / static_cast<double>(hw));
    }
    return y;
}

template <typename T>
Tensor<T> global_average_pool_backward(const Tensor<T>& dy, const Shape& input_shape) {
    const std::size_t b = input_shape[0], hw = input_shape[1] * input_shape[2], c = input_shape[3];
    Tensor<T> dx(input_shape);
    const T inv = T{1} / static_cast<T>(hw);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t ch = 0; ch < c; ++ch) dx[(n * hw + p) * c + ch] = dy[n * c + ch] * inv;
    return dx;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    const std::size_t b = x.dim(0), k = x.dim(1);
    Tensor<T> p(x.shape());
    for (std::size_t n = 0; n < b; ++n) {
        const T* row = x.data() + n * k;
        const T mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - mx));
        for (std::size_t j = 0; j < k; ++j)
            p[n * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / z);
    }
    return p;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& p, const Tensor<T>& dp) {
    const std::size_t b = p.dim(0), k = p.dim(1);
    Tensor<T> dx(p.shape());
    for (std::size_t n = 0; n < b; ++n) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += static_cast<double>(dp[n * k + j]) * p[n * k + j];
        for (std::size_t j = 0; j < k; ++j)
            dx[n * k + j] = static_cast<T>(p[n * k + j] * (dp[n * k + j] - dot));
    }
    return dx;
}

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    const std::size_t b = x.dim(0), d = x.size() / b, out = weight.dim(1);
    require(weight.dim(0) == d, "fully_connected: input width " + std::to_string(d) + " vs weight " +
                                    shape_string(weight.shape()));
    Tensor<T> y({b, out});
    ConstMatMap<T> wm(weight.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(out));
    for (std::size_t n = 0; n < b; ++n) {
        ConstMatMap<T> xm(x.data() + n * d, 1, static_cast<Eigen::Index>(d));
        MatMap<T> ym(y.data() + n * out, 1, static_cast<Eigen::Index>(out));
        ym.noalias() = xm * wm;
        for (std::size_t j = 0; j < out; ++j) ym(0, static_cast<Eigen::Index>(j)) += bias[j];
    }
    return y;
}

template <typename T>
Tensor<T> fully_connected_backward_input(const Tensor<T>& dy, const Tensor<T>& weight, const Shape& input_shape) {
    const std::size_t b = dy.dim(0), out = dy.dim(1), d = weight.dim(0);
    Tensor<T> dx(input_shape);
    ConstMatMap<T> wm(weight.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(out));
    ConstMatMap<T> dym(dy.data(), static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(out));
    MatMap<T> dxm(dx.data(), static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(d));
    dxm.noalias() = dym * wm.transpose();
    return dx;
}

template <typename T>
void fully_connected_backward_params(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dweight,
                                     Tensor<T>& dbias) {
    const std::size_t b = dy.dim(0), out = dy.dim(1), d = dweight.dim(0);
    ConstMatMap<T> xm(x.data(), static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(d));
    ConstMatMap<T> dym(dy.data(), static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(out));
    MatMap<T> dwm(dweight.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(out));
    dwm.noalias() += xm.transpose() * dym;
    accumulate_bias_grad(dy, dbias);
}

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x) {
    require(acc.shape() == x.shape(), "add_inplace: shape mismatch " + shape_string(acc.shape()) + " vs " +
                                          shape_string(x.shape()));
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

#define SGLAB_INSTANTIATE_KERNELS(T)                                                                            \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, ConvGeometry);              \
    template Tensor<T> conv2d_backward_input(const Tensor<T>&, const Tensor<T>&, const Shape&, ConvGeometry);   \
    template void conv2d_backward_params(const Tensor<T>&, const Tensor<T>&, ConvGeometry, Tensor<T>&,          \
                                         Tensor<T>*);                                                           \
    template Tensor<T> deconv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int);                     \
    template Tensor<T> deconv2d_backward_input(const Tensor<T>&, const Tensor<T>&, int);                        \
    template void deconv2d_backward_params(const Tensor<T>&, const Tensor<T>&, int, Tensor<T>&, Tensor<T>*);    \
    template Tensor<T> batch_norm_train(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchStats<T>&);  \
    template Tensor<T> batch_norm_infer(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                        const Tensor<T>&);                                                      \
    template Tensor<T> batch_norm_train_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                                 const BatchStats<T>&, Tensor<T>*, Tensor<T>*);                 \
    template Tensor<T> batch_norm_infer_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                                 const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*);   \
    template Tensor<T> bilinear_up2(const Tensor<T>&);                                                          \
    template Tensor<T> bilinear_up2_backward(const Tensor<T>&);                                                 \
    template Tensor<T> relu(const Tensor<T>&);                                                                  \
    template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                               \
    template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> global_average_pool(const Tensor<T>&);                                                   \
    template Tensor<T> global_average_pool_backward(const Tensor<T>&, const Shape&);                            \
    template Tensor<T> softmax(const Tensor<T>&);                                                               \
    template Tensor<T> softmax_backward(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> fully_connected(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> fully_connected_backward_input(const Tensor<T>&, const Tensor<T>&, const Shape&);        \
    template void fully_connected_backward_params(const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&);  \
    template void add_inplace(Tensor<T>&, const Tensor<T>&);

SGLAB_INSTANTIATE_KERNELS(float)
SGLAB_INSTANTIATE_KERNELS(double)

#undef SGLAB_INSTANTIATE_KERNELS

}  // namespace sglab::kernels
