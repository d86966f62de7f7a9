#pragma once

// Forward and backward primitives for the layer vocabulary. All image tensors
// are NHWC. Convolutions run one GEMM per batch item so a sample's result
// never depends on what else is in the batch.

#include <vector>

#include "sglab/tensor.hpp"

namespace sglab::kernels {

struct ConvGeometry {
    int kernel = 3;
    int stride = 1;
    int pad() const { return (kernel - 1) / 2; }
    std::size_t out_extent(std::size_t in) const {
        return (in + 2 * static_cast<std::size_t>(pad()) - static_cast<std::size_t>(kernel)) /
                   static_cast<std::size_t>(stride) +
               1;
    }
};

// conv weights: [k, k, Cin, Cout]; bias: [Cout] or null.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias, ConvGeometry g);
template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& weight, const Shape& input_shape,
                                ConvGeometry g);
// Accumulates into dweight / dbias.
template <typename T>
void conv2d_backward_params(const Tensor<T>& x, const Tensor<T>& dy, ConvGeometry g, Tensor<T>& dweight,
                            Tensor<T>* dbias);

// Stride-1, size-preserving transposed convolution. weight: [k, k, Cout, Cin].
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias, int kernel);
template <typename T>
Tensor<T> deconv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& weight, int kernel);
template <typename T>
void deconv2d_backward_params(const Tensor<T>& x, const Tensor<T>& dy, int kernel, Tensor<T>& dweight,
                              Tensor<T>* dbias);

/// Per-channel batch statistics captured by a training-mode forward pass.
template <typename T>
struct BatchStats {
    std::vector<T> mean;
    std::vector<T> var;      // biased
    std::vector<T> inv_std;  // 1 / sqrt(var + eps)
    std::size_t count = 0;   // elements per channel
};

inline constexpr double kBatchNormEps = 1e-5;

template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                           BatchStats<T>& stats);
template <typename T>
Tensor<T> batch_norm_infer(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                           const Tensor<T>& running_mean, const Tensor<T>& running_var);
template <typename T>
Tensor<T> batch_norm_train_backward(const Tensor<T>& x, const Tensor<T>& dy, const Tensor<T>& scale,
                                    const BatchStats<T>& stats, Tensor<T>* dscale, Tensor<T>* dshift);
template <typename T>
Tensor<T> batch_norm_infer_backward(const Tensor<T>& x, const Tensor<T>& dy, const Tensor<T>& scale,
                                    const Tensor<T>& running_mean, const Tensor<T>& running_var,
                                    Tensor<T>* dscale, Tensor<T>* dshift);

// Bilinear 2x upsampling with half-pixel centers and edge clamping.
template <typename T>
Tensor<T> bilinear_up2(const Tensor<T>& x);
template <typename T>
Tensor<T> bilinear_up2_backward(const Tensor<T>& dy);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy);

// Output is clamped into the open interval (0, 1).
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy);

// [b, H, W, C] -> [b, C]
template <typename T>
Tensor<T> global_average_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> global_average_pool_backward(const Tensor<T>& dy, const Shape& input_shape);

// Row-wise softmax over [b, K].
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& p, const Tensor<T>& dp);

// x: [b, ...] flattened per row; weight: [D, out]; bias: [out].
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T>
Tensor<T> fully_connected_backward_input(const Tensor<T>& dy, const Tensor<T>& weight, const Shape& input_shape);
template <typename T>
void fully_connected_backward_params(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dweight,
                                     Tensor<T>& dbias);

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x);

}  // namespace sglab::kernels
