#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "sglab/kernels.hpp"
#include "sglab/tensor.hpp"

namespace sglab {

using Rng = std::mt19937_64;

template <typename T>
using TensorMap = std::map<std::string, Tensor<T>>;

enum class Variant { sigan, giegan, diegan };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

enum class LayerKind {
    conv,
    deconv,
    batch_norm,
    relu,
    sigmoid,
    residual_block,
    upsampler,
    fully_connected,
    average_pool,
    softmax,
};

std::string_view to_string(LayerKind kind);

struct LayerDescriptor {
    LayerKind kind = LayerKind::conv;
    std::string name;  // parameter prefix
    int kernel = 0;
    int in_channels = 0;
    int out_channels = 0;
    int stride = 1;
    bool bias = false;
};

enum class NetRole { generator, realfake, multiclass };

struct OutputContract {
    int spatial = 0;
    int channels = 0;
    friend bool operator==(const OutputContract&, const OutputContract&) = default;
};

enum class ParamRole { weight, bias, scale, shift, running_mean, running_var };

struct ParamSpec {
    std::string name;
    Shape shape;
    ParamRole role;
    std::size_t fan_in = 0;
};

/// Declarative layer graph. `perceptual_tap` indexes the layer whose output
/// feeds the fully connected `head`.
struct ModelSpec {
    NetRole role = NetRole::generator;
    std::vector<LayerDescriptor> layers;
    int input_size = 0;
    int input_channels = 0;
    OutputContract output;
    std::optional<std::size_t> perceptual_tap;
    std::optional<LayerDescriptor> head;

    /// Composes the per-layer shape rules from the input contract. Throws
    /// std::invalid_argument if a layer is malformed or the result disagrees
    /// with `output`.
    OutputContract validate() const;
    std::vector<ParamSpec> parameters() const;
    std::vector<std::string> parameter_names() const;
};

struct GeneratorOptions {
    int trunk_channels = 64;
    int tail_channels = 32;
    int blocks_before_upsampling = 2;
    int blocks_between_upsamplers = 1;
    int feature_dim = 128;
};

struct DiscriminatorOptions {
    int base_channels = 64;
    int max_channels = 512;
};

enum class DiscriminatorKind { realfake, multiclass };

inline constexpr int kUpscaleFactor = 4;

/// sigan and diegan share the 3-channel generator; giegan takes and emits
/// an extra identity-label channel and requires `num_classes`.
ModelSpec build_generator(Variant variant, int lr_size, std::optional<int> num_classes = std::nullopt,
                          const GeneratorOptions& options = {});

/// realfake: 7 convs ending in one logit channel, average pool, sigmoid.
/// multiclass: 10 convs ending in C+1 channels, average pool, softmax
/// (class C is "fake"). Stride 2 on every other conv, starting with the first.
ModelSpec build_discriminator(DiscriminatorKind kind, int input_size, std::optional<int> num_classes = std::nullopt,
                              int input_channels = 3, const DiscriminatorOptions& options = {});

bool is_trainable(std::string_view param_name);

template <typename T>
class ParameterSet {
public:
    ParameterSet() = default;
    explicit ParameterSet(TensorMap<T> tensors) : tensors_(std::move(tensors)) {}

    void set(const std::string& name, Tensor<T> value) { tensors_[name] = std::move(value); }
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    const Tensor<T>& at(const std::string& name) const;
    Tensor<T>& at(const std::string& name);
    const TensorMap<T>& tensors() const noexcept { return tensors_; }
    std::vector<std::string> names() const;
    std::size_t scalar_count() const;

    /// Throws std::runtime_error naming the first tensor with a non-finite value.
    void check_finite() const;

    template <typename U>
    ParameterSet<U> cast() const {
        TensorMap<U> out;
        for (const auto& [name, t] : tensors_) out.emplace(name, t.template cast<U>());
        return ParameterSet<U>(std::move(out));
    }

    friend bool operator==(const ParameterSet& a, const ParameterSet& b) { return a.tensors_ == b.tensors_; }

private:
    TensorMap<T> tensors_;
};

/// Gaussian He initialization (std = sqrt(2 / fan_in)) for weights, zero
/// biases and shifts, unit scales and running variances.
template <typename T>
ParameterSet<T> init_parameters(const ModelSpec& spec, Rng& rng);

/// Zero gradients for every trainable tensor of `spec`.
template <typename T>
TensorMap<T> zero_gradients(const ModelSpec& spec);

enum class Mode { train, inference };

inline constexpr double kRunningStatMomentum = 0.1;

struct ForwardOptions {
    Mode mode = Mode::inference;
    bool features_only = false;  // stop after the perceptual head
};

template <typename T>
struct LayerRecord {
    Tensor<T> input;
    Tensor<T> output;
    std::vector<Tensor<T>> saved;
    std::vector<kernels::BatchStats<T>> stats;
};

/// Everything a backward pass needs from the matching forward pass.
template <typename T>
struct Trace {
    Mode mode = Mode::inference;
    bool features_only = false;
    std::vector<LayerRecord<T>> layers;
    Tensor<T> tap_activation;
};

template <typename T>
struct ForwardOutput {
    Tensor<T> output;    // generator: [b, 4N, 4N, c]; realfake: [b, 1]; multiclass: [b, C+1]
    Tensor<T> features;  // [b, feature_dim] when the model has a perceptual head
    TensorMap<T> running_stats;  // training mode only: updated running means/variances
};

/// Pure forward pass. Throws std::runtime_error naming the layer if any
/// activation becomes non-finite.
template <typename T>
ForwardOutput<T> forward(const ModelSpec& spec, const ParameterSet<T>& params, const Tensor<T>& input,
                         ForwardOptions options = {}, Trace<T>* trace = nullptr);

template <typename T>
struct BackwardResult {
    TensorMap<T> param_grads;
    Tensor<T> input_grad;
};

/// Reverse pass over a recorded trace. Either upstream gradient may be null.
template <typename T>
BackwardResult<T> backward(const ModelSpec& spec, const ParameterSet<T>& params, const Trace<T>& trace,
                           const Tensor<T>* d_output, const Tensor<T>* d_features, bool want_param_grads = true);

template <typename T>
struct GeneratorOutput {
    Tensor<T> sr;
    Tensor<T> features;
};

template <typename T>
GeneratorOutput<T> generator_forward(const ModelSpec& spec, const ParameterSet<T>& params, const Tensor<T>& lr_batch,
                                     Mode mode = Mode::inference);

/// realfake: [b] scores in (0,1); multiclass: [b, C+1] rows on the simplex.
/// A 4-channel (label-conditioned) discriminator requires `label_plane`
/// ([b, H, W, 1]), which is appended to the image channels.
template <typename T>
Tensor<T> discriminator_forward(const ModelSpec& spec, const ParameterSet<T>& params, const Tensor<T>& hr_batch,
                                const Tensor<T>* label_plane = nullptr, Mode mode = Mode::inference);

/// Writes `running_stats` from a training-mode forward pass into `params`.
template <typename T>
void apply_running_stats(ParameterSet<T>& params, const TensorMap<T>& running_stats);

}  // namespace sglab
