#pragma once

#include <functional>
#include <span>
#include <string>

#include "sglab/nets.hpp"
#include "sglab/tensor.hpp"

namespace sglab {

/// Scalar loss with gradients keyed by the name of the input they belong to
/// ("f1", "d_fake", "sr", ...). Gradient tensors have the input's shape.
template <typename T>
struct LossValue {
    T value{};
    TensorMap<T> grads;

    const Tensor<T>& grad(const std::string& name) const;
};

/// Scores are clamped to [kScoreEps, 1 - kScoreEps] before any logarithm.
inline constexpr double kScoreEps = 1e-7;
inline constexpr double kDefaultMargin = 0.5;

/// E_w: L1 distance between two feature vectors.
template <typename T>
T contrastive_energy(std::span<const T> f1, std::span<const T> f2);

/// (1-y) * 1/2 max(0, m - E_w)^2 + y * 1/2 E_w^2, with gradients "f1", "f2".
template <typename T>
LossValue<T> contrastive_loss(std::span<const T> f1, std::span<const T> f2, int y, T margin = T(kDefaultMargin));

/// Batch mean of contrastive_loss over rows of [b, D] feature tensors.
template <typename T>
LossValue<T> contrastive_loss_batch(const Tensor<T>& f1, const Tensor<T>& f2, std::span<const int> y,
                                    T margin = T(kDefaultMargin));

/// -(1/b) sum [ln d_real + ln(1 - d_fake)]; gradients "d_real", "d_fake".
template <typename T>
LossValue<T> gan_discriminator_loss(std::span<const T> d_real, std::span<const T> d_fake);

/// saturating: (1/b) sum ln(1 - d_fake); otherwise -(1/b) sum ln d_fake.
template <typename T>
LossValue<T> gan_generator_loss(std::span<const T> d_fake, bool saturating = true);

/// Batch mean of per-image L1 norms; gradient "sr".
template <typename T>
LossValue<T> reconstruction_l1(const Tensor<T>& sr, const Tensor<T>& hr);

/// -(1/b) sum ln d_fake (realism: every hallucination should be judged real).
template <typename T>
LossValue<T> realism_loss(std::span<const T> d_fake);

enum class WeightCheck { strict, relaxed };

/// gamma * L_Real + beta * L_Rec + (1 - gamma - beta) * L_GAN over 4-channel
/// (RGB + identity) images. `relaxed` admits gamma + beta == 1.
template <typename T>
LossValue<T> gie_total_loss(std::span<const T> d_fake, const Tensor<T>& sr4, const Tensor<T>& hr4, T gamma, T beta,
                            bool saturating = true, WeightCheck check = WeightCheck::strict);

/// Batch mean of -ln p[target] over [b, K] probability rows; gradient "class_probs".
template <typename T>
LossValue<T> class_cross_entropy(const Tensor<T>& class_probs, std::span<const int> targets);

/// (1/b) sum {(1 - gamma) [-y . ln y_hat] + gamma ||sr - hr||_1}; gradients
/// "class_probs" and "sr".
template <typename T>
LossValue<T> die_reconstruction_loss(const Tensor<T>& class_probs, const Tensor<T>& y_onehot, const Tensor<T>& sr,
                                     const Tensor<T>& hr, T gamma);

/// Loss on a network's outputs. Receives the forward output and features and
/// returns gradients keyed "output" and/or "features".
template <typename T>
using OutputLoss = std::function<LossValue<T>(const ForwardOutput<T>&)>;

template <typename T>
struct Differentiated {
    T value{};
    TensorMap<T> param_grads;
    Tensor<T> input_grad;
};

/// Forward pass, loss, and reverse pass in one call: gradient of the scalar
/// loss with respect to every trainable tensor of `spec`. Throws naming the
/// tensor if a gradient is non-finite.
template <typename T>
Differentiated<T> differentiate(const ModelSpec& spec, const ParameterSet<T>& params, const Tensor<T>& input,
                                const OutputLoss<T>& loss, Mode mode = Mode::train);

}  // namespace sglab
