#include "sglab/nets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sglab {

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::sigan: return "sigan";
        case Variant::giegan: return "giegan";
        case Variant::diegan: return "diegan";
    }
    return "unknown";
}

Variant parse_variant(std::string_view text) {
    if (text == "sigan") return Variant::sigan;
    if (text == "giegan") return Variant::giegan;
    if (text == "diegan") return Variant::diegan;
    throw std::invalid_argument("unknown variant '" + std::string(text) + "' (expected sigan, giegan or diegan)");
}

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv: return "conv";
        case LayerKind::deconv: return "deconv";
        case LayerKind::batch_norm: return "batch_norm";
        case LayerKind::relu: return "relu";
        case LayerKind::sigmoid: return "sigmoid";
        case LayerKind::residual_block: return "residual_block";
        case LayerKind::upsampler: return "upsampler";
        case LayerKind::fully_connected: return "fully_connected";
        case LayerKind::average_pool: return "average_pool";
        case LayerKind::softmax: return "softmax";
    }
    return "unknown";
}

namespace {

void fail(const std::string& what) { throw std::invalid_argument(what); }

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

LayerDescriptor conv_layer(std::string name, int kernel, int in, int out, int stride, bool bias) {
    return {LayerKind::conv, std::move(name), kernel, in, out, stride, bias};
}

LayerDescriptor simple(LayerKind kind, int channels = 0, std::string name = {}) {
    return {kind, std::move(name), 0, channels, channels, 1, false};
}

void push_bn_params(std::vector<ParamSpec>& out, const std::string& prefix, int channels) {
    const Shape s{sz(channels)};
    out.push_back({prefix + ".scale", s, ParamRole::scale, 0});
    out.push_back({prefix + ".shift", s, ParamRole::shift, 0});
    out.push_back({prefix + ".running_mean", s, ParamRole::running_mean, 0});
    out.push_back({prefix + ".running_var", s, ParamRole::running_var, 0});
}

void push_conv_params(std::vector<ParamSpec>& out, const std::string& prefix, int kernel, int in, int out_ch,
                      bool bias) {
    out.push_back({prefix + ".weight", {sz(kernel), sz(kernel), sz(in), sz(out_ch)}, ParamRole::weight,
                   sz(kernel * kernel * in)});
    if (bias) out.push_back({prefix + ".bias", {sz(out_ch)}, ParamRole::bias, 0});
}

void layer_params(std::vector<ParamSpec>& out, const LayerDescriptor& l) {
    switch (l.kind) {
        case LayerKind::conv: push_conv_params(out, l.name, l.kernel, l.in_channels, l.out_channels, l.bias); break;
        case LayerKind::deconv:
            out.push_back({l.name + ".weight", {sz(l.kernel), sz(l.kernel), sz(l.out_channels), sz(l.in_channels)},
                           ParamRole::weight, sz(l.kernel * l.kernel * l.in_channels)});
            if (l.bias) out.push_back({l.name + ".bias", {sz(l.out_channels)}, ParamRole::bias, 0});
            break;
        case LayerKind::batch_norm: push_bn_params(out, l.name, l.in_channels); break;
        case LayerKind::residual_block:
            push_conv_params(out, l.name + ".conv1", l.kernel, l.in_channels, l.out_channels, false);
            push_bn_params(out, l.name + ".bn1", l.out_channels);
            push_conv_params(out, l.name + ".conv2", l.kernel, l.out_channels, l.out_channels, false);
            push_bn_params(out, l.name + ".bn2", l.out_channels);
            if (l.in_channels != l.out_channels)
                push_conv_params(out, l.name + ".proj", 1, l.in_channels, l.out_channels, false);
            break;
        case LayerKind::upsampler:
            push_bn_params(out, l.name + ".bn", l.in_channels);
            out.push_back({l.name + ".deconv.weight", {sz(l.kernel), sz(l.kernel), sz(l.out_channels), sz(l.in_channels)},
                           ParamRole::weight, sz(l.kernel * l.kernel * l.in_channels)});
            out.push_back({l.name + ".deconv.bias", {sz(l.out_channels)}, ParamRole::bias, 0});
            break;
        case LayerKind::fully_connected:
            out.push_back({l.name + ".weight", {sz(l.in_channels), sz(l.out_channels)}, ParamRole::weight,
                           sz(l.in_channels)});
            out.push_back({l.name + ".bias", {sz(l.out_channels)}, ParamRole::bias, 0});
            break;
        default: break;
    }
}

struct ShapeState {
    int spatial;
    int channels;
    bool pooled = false;
};

void check_descriptor(const LayerDescriptor& l) {
    const bool has_kernel = l.kind == LayerKind::conv || l.kind == LayerKind::deconv ||
                            l.kind == LayerKind::residual_block || l.kind == LayerKind::upsampler;
    if (has_kernel && (l.kernel < 1 || l.kernel % 2 == 0))
        fail("layer '" + l.name + "': kernel size must be odd and positive, got " + std::to_string(l.kernel));
    if (l.stride < 1) fail("layer '" + l.name + "': stride must be >= 1");
    if ((has_kernel || l.kind == LayerKind::fully_connected || l.kind == LayerKind::batch_norm) &&
        (l.in_channels < 1 || l.out_channels < 1))
        fail("layer '" + l.name + "': channel counts must be >= 1");
}

void apply_shape_rule(const LayerDescriptor& l, ShapeState& s) {
    check_descriptor(l);
    auto expect_channels = [&](int c) {
        if (c != s.channels)
            fail("layer '" + l.name + "' (" + std::string(to_string(l.kind)) + ") expects " + std::to_string(c) +
                 " input channels but receives " + std::to_string(s.channels));
    };
    switch (l.kind) {
        case LayerKind::conv:
            expect_channels(l.in_channels);
            if (s.spatial % l.stride != 0 || s.spatial < l.stride)
                fail("layer '" + l.name + "': spatial size " + std::to_string(s.spatial) +
                     " not divisible by stride " + std::to_string(l.stride));
            s.spatial /= l.stride;
            s.channels = l.out_channels;
            break;
        case LayerKind::deconv:
        case LayerKind::residual_block:
            expect_channels(l.in_channels);
            if (l.stride != 1) fail("layer '" + l.name + "': only stride 1 is supported");
            s.channels = l.out_channels;
            break;
        case LayerKind::upsampler:
            expect_channels(l.in_channels);
            s.spatial *= 2;
            s.channels = l.out_channels;
            break;
        case LayerKind::batch_norm: expect_channels(l.in_channels); break;
        case LayerKind::average_pool:
            s.spatial = 1;
            s.pooled = true;
            break;
        case LayerKind::fully_connected: fail("fully_connected layers are only supported as the perceptual head");
        case LayerKind::relu:
        case LayerKind::sigmoid:
        case LayerKind::softmax: break;
    }
}

}  // namespace

OutputContract ModelSpec::validate() const {
    if (input_size < 1 || input_channels < 1) fail("model spec: invalid input contract");
    ShapeState s{input_size, input_channels};
    for (std::size_t i = 0; i < layers.size(); ++i) {
        apply_shape_rule(layers[i], s);
        if (perceptual_tap && *perceptual_tap == i) {
            if (!head) fail("model spec: perceptual tap without a head");
            const int flat = s.spatial * s.spatial * s.channels;
            if (head->in_channels != flat)
                fail("perceptual head expects " + std::to_string(head->in_channels) + " inputs but tap provides " +
                     std::to_string(flat));
        }
    }
    if (perceptual_tap && *perceptual_tap >= layers.size()) fail("model spec: perceptual tap out of range");
    OutputContract got{s.spatial, s.channels};
    if (!(got == output))
        fail("model spec: layers produce " + std::to_string(got.spatial) + "x" + std::to_string(got.spatial) + "x" +
             std::to_string(got.channels) + " but the declared contract is " + std::to_string(output.spatial) + "x" +
             std::to_string(output.spatial) + "x" + std::to_string(output.channels));
    return got;
}

std::vector<ParamSpec> ModelSpec::parameters() const {
    std::vector<ParamSpec> out;
    for (const auto& l : layers) layer_params(out, l);
    if (head) layer_params(out, *head);
    return out;
}

std::vector<std::string> ModelSpec::parameter_names() const {
    std::vector<std::string> names;
    for (const auto& p : parameters()) names.push_back(p.name);
    return names;
}

ModelSpec build_generator(Variant variant, int lr_size, std::optional<int> num_classes,
                          const GeneratorOptions& options) {
    if (lr_size < 4) fail("generator input size must be >= 4, got " + std::to_string(lr_size));
    if (variant == Variant::giegan && (!num_classes || *num_classes < 1))
        fail("giegan generator requires the number of identities C >= 1");
    if (options.blocks_before_upsampling < 1) fail("generator needs at least one residual block before upsampling");
    const int image_channels = variant == Variant::giegan ? 4 : 3;
    const int trunk = options.trunk_channels;
    const int tail = options.tail_channels;

    ModelSpec spec;
    spec.role = NetRole::generator;
    spec.input_size = lr_size;
    spec.input_channels = image_channels;
    spec.output = {kUpscaleFactor * lr_size, image_channels};

    int channels = image_channels;
    for (int i = 0; i < options.blocks_before_upsampling; ++i) {
        spec.layers.push_back({LayerKind::residual_block, "gen.res" + std::to_string(i), 3, channels, trunk, 1, false});
        channels = trunk;
    }
    spec.perceptual_tap = spec.layers.size() - 1;
    spec.head = LayerDescriptor{LayerKind::fully_connected, "gen.head", 0, lr_size * lr_size * trunk,
                                options.feature_dim, 1, true};

    spec.layers.push_back({LayerKind::upsampler, "gen.up0", 3, trunk, trunk, 1, true});
    for (int i = 0; i < options.blocks_between_upsamplers; ++i)
        spec.layers.push_back({LayerKind::residual_block,
                               "gen.res" + std::to_string(options.blocks_before_upsampling + i), 3, trunk, trunk, 1,
                               false});
    spec.layers.push_back({LayerKind::upsampler, "gen.up1", 3, trunk, tail, 1, true});
    for (int i = 0; i < 3; ++i) {
        spec.layers.push_back(conv_layer("gen.tail" + std::to_string(i), 3, tail, tail, 1, true));
        spec.layers.push_back(simple(LayerKind::relu, tail));
    }
    spec.layers.push_back(conv_layer("gen.out", 1, tail, image_channels, 1, true));
    spec.layers.push_back(simple(LayerKind::sigmoid, image_channels));
    spec.validate();
    return spec;
}

ModelSpec build_discriminator(DiscriminatorKind kind, int input_size, std::optional<int> num_classes,
                              int input_channels, const DiscriminatorOptions& options) {
    const bool multiclass = kind == DiscriminatorKind::multiclass;
    if (multiclass && (!num_classes || *num_classes < 1))
        fail("multiclass discriminator requires the number of identities C >= 1");
    const int depth = multiclass ? 10 : 7;
    const int classes = multiclass ? *num_classes + 1 : 1;

    int reduction = 1;
    for (int i = 0; i < depth; ++i)
        if (i % 2 == 0) reduction *= 2;
    if (input_size < reduction || input_size % reduction != 0)
        fail("discriminator input size " + std::to_string(input_size) + " too small for its stride pyramid (needs a "
             "multiple of " + std::to_string(reduction) + ")");

    ModelSpec spec;
    spec.role = multiclass ? NetRole::multiclass : NetRole::realfake;
    spec.input_size = input_size;
    spec.input_channels = input_channels;
    spec.output = {1, classes};

    int channels = input_channels;
    for (int i = 0; i < depth; ++i) {
        const int stride = i % 2 == 0 ? 2 : 1;
        const std::string name = "disc.conv" + std::to_string(i);
        if (i == depth - 1) {
            spec.layers.push_back(conv_layer(name, 3, channels, classes, stride, true));
            break;
        }
        const int width = std::min(options.base_channels << (i / 2), options.max_channels);
        const bool normalized = i > 0;
        spec.layers.push_back(conv_layer(name, 3, channels, width, stride, !normalized));
        if (normalized) spec.layers.push_back(simple(LayerKind::batch_norm, width, "disc.bn" + std::to_string(i)));
        spec.layers.push_back(simple(LayerKind::relu, width));
        channels = width;
    }
    spec.layers.push_back(simple(LayerKind::average_pool, classes));
    spec.layers.push_back(simple(multiclass ? LayerKind::softmax : LayerKind::sigmoid, classes));
    spec.validate();
    return spec;
}

bool is_trainable(std::string_view name) {
    return !(name.ends_with(".running_mean") || name.ends_with(".running_var"));
}

template <typename T>
const Tensor<T>& ParameterSet<T>::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("parameter set has no tensor '" + name + "'");
    return it->second;
}

template <typename T>
Tensor<T>& ParameterSet<T>::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("parameter set has no tensor '" + name + "'");
    return it->second;
}

template <typename T>
std::vector<std::string> ParameterSet<T>::names() const {
    std::vector<std::string> out;
    for (const auto& kv : tensors_) out.push_back(kv.first);
    return out;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
    std::size_t n = 0;
    for (const auto& kv : tensors_) n += kv.second.size();
    return n;
}

template <typename T>
void ParameterSet<T>::check_finite() const {
    for (const auto& [name, t] : tensors_)
        if (!t.all_finite()) throw std::runtime_error("non-finite value in tensor '" + name + "'");
}

template <typename T>
ParameterSet<T> init_parameters(const ModelSpec& spec, Rng& rng) {
    ParameterSet<T> params;
    for (const auto& p : spec.parameters()) {
        Tensor<T> t(p.shape);
        switch (p.role) {
            case ParamRole::weight: {
                std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(p.fan_in)));
                for (auto& v : t.values()) v = static_cast<T>(dist(rng));
                break;
            }
            case ParamRole::scale:
            case ParamRole::running_var: t.fill(T{1}); break;
            default: break;
        }
        params.set(p.name, std::move(t));
    }
    return params;
}

template <typename T>
TensorMap<T> zero_gradients(const ModelSpec& spec) {
    TensorMap<T> grads;
    for (const auto& p : spec.parameters())
        if (is_trainable(p.name)) grads.emplace(p.name, Tensor<T>(p.shape));
    return grads;
}

namespace {

template <typename T>
void require_finite(const Tensor<T>& t, const std::string& where) {
    if (!t.all_finite()) throw std::runtime_error("non-finite activation in layer '" + where + "'");
}

template <typename T>
struct Executor {
    const ModelSpec& spec;
    const ParameterSet<T>& params;
    Mode mode;
    TensorMap<T>* running;

    const Tensor<T>& p(const std::string& name) const { return params.at(name); }

    Tensor<T> conv(const Tensor<T>& x, const std::string& prefix, int kernel, int stride, bool bias) const {
        const Tensor<T>* b = bias ? &p(prefix + ".bias") : nullptr;
        return kernels::conv2d(x, p(prefix + ".weight"), b, {kernel, stride});
    }

    Tensor<T> bn(const Tensor<T>& x, const std::string& prefix, kernels::BatchStats<T>& stats) const {
        const auto& scale = p(prefix + ".scale");
        const auto& shift = p(prefix + ".shift");
        if (mode == Mode::inference)
            return kernels::batch_norm_infer(x, scale, shift, p(prefix + ".running_mean"), p(prefix + ".running_var"));
        Tensor<T> y = kernels::batch_norm_train(x, scale, shift, stats);
        if (running) {
            const auto& rm = p(prefix + ".running_mean");
            const auto& rv = p(prefix + ".running_var");
            Tensor<T> new_mean(rm.shape()), new_var(rv.shape());
            const double m = static_cast<double>(stats.count);
            const double unbias = m > 1 ? m / (m - 1) : 1.0;
            for (std::size_t j = 0; j < rm.size(); ++j) {
                new_mean[j] = static_cast<T>((1 - kRunningStatMomentum) * rm[j] + kRunningStatMomentum * stats.mean[j]);
                new_var[j] = static_cast<T>((1 - kRunningStatMomentum) * rv[j] +
                                            kRunningStatMomentum * stats.var[j] * unbias);
            }
            (*running)[prefix + ".running_mean"] = std::move(new_mean);
            (*running)[prefix + ".running_var"] = std::move(new_var);
        }
        return y;
    }

    Tensor<T> run(const LayerDescriptor& l, const Tensor<T>& x, LayerRecord<T>& rec) const {
        switch (l.kind) {
            case LayerKind::conv: return conv(x, l.name, l.kernel, l.stride, l.bias);
            case LayerKind::deconv: {
                const Tensor<T>* b = l.bias ? &p(l.name + ".bias") : nullptr;
                return kernels::deconv2d(x, p(l.name + ".weight"), b, l.kernel);
            }
            case LayerKind::batch_norm:
                rec.stats.resize(1);
                return bn(x, l.name, rec.stats[0]);
            case LayerKind::relu: return kernels::relu(x);
            case LayerKind::sigmoid: return kernels::sigmoid(x);
            case LayerKind::average_pool: return kernels::global_average_pool(x);
            case LayerKind::softmax: return kernels::softmax(x);
            case LayerKind::residual_block: {
                rec.stats.resize(2);
                Tensor<T> a = conv(x, l.name + ".conv1", l.kernel, 1, false);
                Tensor<T> n1 = bn(a, l.name + ".bn1", rec.stats[0]);
                Tensor<T> r = kernels::relu(n1);
                Tensor<T> c = conv(r, l.name + ".conv2", l.kernel, 1, false);
                Tensor<T> y = bn(c, l.name + ".bn2", rec.stats[1]);
                if (l.in_channels != l.out_channels)
                    kernels::add_inplace(y, conv(x, l.name + ".proj", 1, 1, false));
                else
                    kernels::add_inplace(y, x);
                rec.saved = {std::move(a), std::move(n1), std::move(r), std::move(c)};
                return y;
            }
            case LayerKind::upsampler: {
                rec.stats.resize(1);
                Tensor<T> u = kernels::bilinear_up2(x);
                Tensor<T> n = bn(u, l.name + ".bn", rec.stats[0]);
                Tensor<T> r = kernels::relu(n);
                Tensor<T> y = kernels::deconv2d(r, p(l.name + ".deconv.weight"), &p(l.name + ".deconv.bias"), l.kernel);
                rec.saved = {std::move(u), std::move(n), std::move(r)};
                return y;
            }
            case LayerKind::fully_connected:
                return kernels::fully_connected(x, p(l.name + ".weight"), p(l.name + ".bias"));
        }
        throw std::logic_error("unhandled layer kind");
    }
};

template <typename T>
void check_input(const ModelSpec& spec, const Tensor<T>& input) {
    const Shape expected{0, static_cast<std::size_t>(spec.input_size), static_cast<std::size_t>(spec.input_size),
                         static_cast<std::size_t>(spec.input_channels)};
    if (input.rank() != 4 || input.dim(0) == 0 || input.dim(1) != expected[1] || input.dim(2) != expected[2] ||
        input.dim(3) != expected[3])
        throw std::invalid_argument("input " + shape_string(input.shape()) + " does not match the model contract b x " +
                                    std::to_string(spec.input_size) + " x " + std::to_string(spec.input_size) + " x " +
                                    std::to_string(spec.input_channels));
}

}  // namespace

template <typename T>
ForwardOutput<T> forward(const ModelSpec& spec, const ParameterSet<T>& params, const Tensor<T>& input,
                         ForwardOptions options, Trace<T>* trace) {
    check_input(spec, input);
    if (options.features_only && !spec.head) throw std::invalid_argument("features_only forward needs a perceptual head");
    ForwardOutput<T> out;
    Executor<T> ex{spec, params, options.mode, options.mode == Mode::train ? &out.running_stats : nullptr};
    if (trace) {
        trace->mode = options.mode;
        trace->features_only = options.features_only;
        trace->layers.clear();
    }
    Tensor<T> x = input;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        LayerRecord<T> rec;
        Tensor<T> y = ex.run(l, x, rec);
        require_finite(y, l.name.empty() ? std::string(to_string(l.kind)) + "#" + std::to_string(i) : l.name);
        if (trace) {
            rec.input = std::move(x);
            if (l.kind == LayerKind::sigmoid || l.kind == LayerKind::softmax) rec.output = y;
            trace->layers.push_back(std::move(rec));
        }
        x = std::move(y);
        if (spec.perceptual_tap && *spec.perceptual_tap == i) {
            LayerRecord<T> head_rec;
            out.features = ex.run(*spec.head, x, head_rec);
            require_finite(out.features, spec.head->name);
            if (trace) trace->tap_activation = x;
            if (options.features_only) return out;
        }
    }
    out.output = std::move(x);
    return out;
}

namespace {

template <typename T>
struct BackExecutor {
    const ParameterSet<T>& params;
    Mode mode;
    TensorMap<T>* grads;

    const Tensor<T>& p(const std::string& name) const { return params.at(name); }
    Tensor<T>* g(const std::string& name) const {
        if (!grads) return nullptr;
        return &grads->at(name);
    }

    Tensor<T> conv_back(const Tensor<T>& x, const Tensor<T>& dy, const std::string& prefix, int kernel, int stride,
                        bool bias) const {
        const kernels::ConvGeometry geo{kernel, stride};
        if (grads) kernels::conv2d_backward_params(x, dy, geo, *g(prefix + ".weight"), bias ? g(prefix + ".bias") : nullptr);
        return kernels::conv2d_backward_input(dy, p(prefix + ".weight"), x.shape(), geo);
    }

    Tensor<T> bn_back(const Tensor<T>& x, const Tensor<T>& dy, const std::string& prefix,
                      const kernels::BatchStats<T>& stats) const {
        Tensor<T>* dscale = g(prefix + ".scale");
        Tensor<T>* dshift = g(prefix + ".shift");
        if (mode == Mode::inference)
            return kernels::batch_norm_infer_backward(x, dy, p(prefix + ".scale"), p(prefix + ".running_mean"),
                                                      p(prefix + ".running_var"), dscale, dshift);
        return kernels::batch_norm_train_backward(x, dy, p(prefix + ".scale"), stats, dscale, dshift);
    }

    Tensor<T> run(const LayerDescriptor& l, const LayerRecord<T>& rec, const Tensor<T>& dy) const {
        switch (l.kind) {
            case LayerKind::conv: return conv_back(rec.input, dy, l.name, l.kernel, l.stride, l.bias);
            case LayerKind::deconv:
                if (grads)
                    kernels::deconv2d_backward_params(rec.input, dy, l.kernel, *g(l.name + ".weight"),
                                                      l.bias ? g(l.name + ".bias") : nullptr);
                return kernels::deconv2d_backward_input(dy, p(l.name + ".weight"), l.kernel);
            case LayerKind::batch_norm: return bn_back(rec.input, dy, l.name, rec.stats.empty() ? kernels::BatchStats<T>{} : rec.stats[0]);
            case LayerKind::relu: return kernels::relu_backward(rec.input, dy);
            case LayerKind::sigmoid: return kernels::sigmoid_backward(rec.output, dy);
            case LayerKind::average_pool: return kernels::global_average_pool_backward(dy, rec.input.shape());
            case LayerKind::softmax: return kernels::softmax_backward(rec.output, dy);
            case LayerKind::residual_block: {
                const auto& a = rec.saved[0];
                const auto& n1 = rec.saved[1];
                const auto& r = rec.saved[2];
                const auto& c = rec.saved[3];
                const kernels::BatchStats<T> none{};
                const auto& s1 = mode == Mode::train ? rec.stats[0] : none;
                const auto& s2 = mode == Mode::train ? rec.stats[1] : none;
                Tensor<T> dc = bn_back(c, dy, l.name + ".bn2", s2);
                Tensor<T> dr = conv_back(r, dc, l.name + ".conv2", l.kernel, 1, false);
                Tensor<T> dn1 = kernels::relu_backward(n1, dr);
                Tensor<T> da = bn_back(a, dn1, l.name + ".bn1", s1);
                Tensor<T> dx = conv_back(rec.input, da, l.name + ".conv1", l.kernel, 1, false);
                if (l.in_channels != l.out_channels)
                    kernels::add_inplace(dx, conv_back(rec.input, dy, l.name + ".proj", 1, 1, false));
                else
                    kernels::add_inplace(dx, dy);
                return dx;
            }
            case LayerKind::upsampler: {
                const auto& u = rec.saved[0];
                const auto& n = rec.saved[1];
                const auto& r = rec.saved[2];
                if (grads)
                    kernels::deconv2d_backward_params(r, dy, l.kernel, *g(l.name + ".deconv.weight"),
                                                      g(l.name + ".deconv.bias"));
                Tensor<T> dr = kernels::deconv2d_backward_input(dy, p(l.name + ".deconv.weight"), l.kernel);
                Tensor<T> dn = kernels::relu_backward(n, dr);
                const kernels::BatchStats<T> none{};
                Tensor<T> du = bn_back(u, dn, l.name + ".bn", mode == Mode::train ? rec.stats[0] : none);
                return kernels::bilinear_up2_backward(du);
            }
            case LayerKind::fully_connected: break;
        }
        throw std::logic_error("unhandled layer kind in backward");
    }
};

}  // namespace

template <typename T>
BackwardResult<T> backward(const ModelSpec& spec, const ParameterSet<T>& params, const Trace<T>& trace,
                           const Tensor<T>* d_output, const Tensor<T>* d_features, bool want_param_grads) {
    BackwardResult<T> result;
    if (want_param_grads) result.param_grads = zero_gradients<T>(spec);
    BackExecutor<T> ex{params, trace.mode, want_param_grads ? &result.param_grads : nullptr};

    std::size_t last = trace.layers.size();
    if (last == 0) throw std::invalid_argument("backward: empty trace");
    if (trace.features_only && d_output) throw std::invalid_argument("backward: trace stopped at the perceptual tap");

    Tensor<T> dx;
    if (d_output) dx = *d_output;
    for (std::size_t i = last; i-- > 0;) {
        if (spec.perceptual_tap && *spec.perceptual_tap == i && d_features) {
            const auto& head = *spec.head;
            const auto& tap = trace.tap_activation;
            if (want_param_grads)
                kernels::fully_connected_backward_params(tap, *d_features, result.param_grads.at(head.name + ".weight"),
                                                         result.param_grads.at(head.name + ".bias"));
            Tensor<T> dtap = kernels::fully_connected_backward_input(*d_features, params.at(head.name + ".weight"),
                                                                      tap.shape());
            if (dx.empty())
                dx = std::move(dtap);
            else
                kernels::add_inplace(dx, dtap);
        }
        if (dx.empty()) continue;  // nothing flows back through layers past the tap yet
        const auto& l = spec.layers[i];
        const std::string where = l.name.empty() ? std::string(to_string(l.kind)) : l.name;
        dx = ex.run(l, trace.layers[i], dx);
        if (!dx.all_finite()) throw std::runtime_error("non-finite gradient flowing out of layer '" + where + "'");
    }
    if (want_param_grads)
        for (const auto& [name, grad] : result.param_grads)
            if (!grad.all_finite()) throw std::runtime_error("non-finite gradient for tensor '" + name + "'");
    result.input_grad = std::move(dx);
    return result;
}

template <typename T>
GeneratorOutput<T> generator_forward(const ModelSpec& spec, const ParameterSet<T>& params, const Tensor<T>& lr_batch,
                                     Mode mode) {
    if (spec.role != NetRole::generator) throw std::invalid_argument("generator_forward needs a generator spec");
    auto out = forward(spec, params, lr_batch, {mode, false});
    return {std::move(out.output), std::move(out.features)};
}

template <typename T>
Tensor<T> discriminator_forward(const ModelSpec& spec, const ParameterSet<T>& params, const Tensor<T>& hr_batch,
                                const Tensor<T>* label_plane, Mode mode) {
    if (spec.role == NetRole::generator) throw std::invalid_argument("discriminator_forward needs a discriminator spec");
    Tensor<T> input;
    if (hr_batch.rank() == 4 && static_cast<int>(hr_batch.dim(3)) + 1 == spec.input_channels) {
        if (!label_plane) throw std::invalid_argument("discriminator expects a label channel but none was given");
        input = concat_channels(hr_batch, *label_plane);
    } else {
        if (label_plane) throw std::invalid_argument("discriminator does not take a label channel");
        input = hr_batch;
    }
    auto out = forward(spec, params, input, {mode, false});
    if (spec.role == NetRole::realfake) return out.output.reshaped({out.output.dim(0)});
    return std::move(out.output);
}

template <typename T>
void apply_running_stats(ParameterSet<T>& params, const TensorMap<T>& running_stats) {
    for (const auto& [name, value] : running_stats) params.at(name) = value;
}

#define SGLAB_INSTANTIATE_NETS(T)                                                                                 \
    template class ParameterSet<T>;                                                                               \
    template ParameterSet<T> init_parameters<T>(const ModelSpec&, Rng&);                                          \
    template TensorMap<T> zero_gradients<T>(const ModelSpec&);                                                    \
    template ForwardOutput<T> forward(const ModelSpec&, const ParameterSet<T>&, const Tensor<T>&, ForwardOptions, \
                                      Trace<T>*);                                                                 \
    template BackwardResult<T> backward(const ModelSpec&, const ParameterSet<T>&, const Trace<T>&,                \
                                        const Tensor<T>*, const Tensor<T>*, bool);                                \
    template GeneratorOutput<T> generator_forward(const ModelSpec&, const ParameterSet<T>&, const Tensor<T>&,     \
                                                  Mode);                                                          \
    template Tensor<T> discriminator_forward(const ModelSpec&, const ParameterSet<T>&, const Tensor<T>&,          \
                                             const Tensor<T>*, Mode);                                             \
    template void apply_running_stats(ParameterSet<T>&, const TensorMap<T>&);

SGLAB_INSTANTIATE_NETS(float)
SGLAB_INSTANTIATE_NETS(double)

#undef SGLAB_INSTANTIATE_NETS

}  // namespace sglab
