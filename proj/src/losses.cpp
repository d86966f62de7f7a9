#include "sglab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sglab {

template <typename T>
const Tensor<T>& LossValue<T>::grad(const std::string& name) const {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::out_of_range("loss has no gradient for '" + name + "'");
    return it->second;
}

namespace {

template <typename T>
Tensor<T> vector_tensor(std::size_t n) {
    return Tensor<T>({n});
}

template <typename T>
void check_scores(std::span<const T> scores, const char* what) {
    if (scores.empty()) throw std::invalid_argument(std::string(what) + ": empty score batch");
    for (T s : scores)
        if (!(s > T{0} && s < T{1}))
            throw std::invalid_argument(std::string(what) + ": score " + std::to_string(static_cast<double>(s)) +
                                        " outside (0,1)");
}

// Clamped score and d(clamp)/ds.
template <typename T>
std::pair<double, double> clamp_score(T s) {
    const double lo = kScoreEps, hi = 1.0 - kScoreEps;
    const double v = static_cast<double>(s);
    if (v < lo) return {lo, 0.0};
    if (v > hi) return {hi, 0.0};
    return {v, 1.0};
}

double sign(double v) { return (v > 0) - (v < 0); }

}  // namespace

template <typename T>
T contrastive_energy(std::span<const T> f1, std::span<const T> f2) {
    if (f1.size() != f2.size()) throw std::invalid_argument("contrastive_energy: feature dimensions differ");
    double e = 0.0;
    for (std::size_t i = 0; i < f1.size(); ++i) e += std::abs(static_cast<double>(f1[i]) - f2[i]);
    return static_cast<T>(e);
}

template <typename T>
LossValue<T> contrastive_loss(std::span<const T> f1, std::span<const T> f2, int y, T margin) {
    if (!(margin > T{0})) throw std::invalid_argument("contrastive_loss: margin must be > 0");
    if (y != 0 && y != 1) throw std::invalid_argument("contrastive_loss: label must be 0 or 1");
    const double e = contrastive_energy(f1, f2);
    const double m = margin;
    double value = 0.0, de = 0.0;
    if (y == 1) {
        value = 0.5 * e * e;
        de = e;
    } else if (e < m) {
        value = 0.5 * (m - e) * (m - e);
        de = -(m - e);
    }
    LossValue<T> out;
    out.value = static_cast<T>(value);
    Tensor<T> g1 = vector_tensor<T>(f1.size()), g2 = vector_tensor<T>(f2.size());
    for (std::size_t i = 0; i < f1.size(); ++i) {
        const double s = sign(static_cast<double>(f1[i]) - f2[i]);
        g1[i] = static_cast<T>(de * s);
        g2[i] = static_cast<T>(-de * s);
    }
    out.grads.emplace("f1", std::move(g1));
    out.grads.emplace("f2", std::move(g2));
    return out;
}

template <typename T>
LossValue<T> contrastive_loss_batch(const Tensor<T>& f1, const Tensor<T>& f2, std::span<const int> y, T margin) {
    if (f1.shape() != f2.shape() || f1.rank() != 2 || f1.dim(0) != y.size())
        throw std::invalid_argument("contrastive_loss_batch: expected two [b, D] tensors and b labels");
    const std::size_t b = f1.dim(0), d = f1.dim(1);
    LossValue<T> out;
    Tensor<T> g1(f1.shape()), g2(f2.shape());
    double total = 0.0;
    for (std::size_t n = 0; n < b; ++n) {
        std::span<const T> r1(f1.data() + n * d, d), r2(f2.data() + n * d, d);
        auto l = contrastive_loss(r1, r2, y[n], margin);
        total += l.value;
        const auto& a = l.grads.at("f1");
        const auto& c = l.grads.at("f2");
        for (std::size_t i = 0; i < d; ++i) {
            g1[n * d + i] = a[i] / static_cast<T>(b);
            g2[n * d + i] = c[i] / static_cast<T>(b);
        }
    }
    out.value = static_cast<T>(total / static_cast<double>(b));
    out.grads.emplace("f1", std::move(g1));
    out.grads.emplace("f2", std::move(g2));
    return out;
}

template <typename T>
LossValue<T> gan_discriminator_loss(std::span<const T> d_real, std::span<const T> d_fake) {
    check_scores(d_real, "gan_discriminator_loss");
    check_scores(d_fake, "gan_discriminator_loss");
    if (d_real.size() != d_fake.size())
        throw std::invalid_argument("gan_discriminator_loss: real and fake batches differ in size");
    const double b = static_cast<double>(d_real.size());
    double total = 0.0;
    Tensor<T> gr = vector_tensor<T>(d_real.size()), gf = vector_tensor<T>(d_fake.size());
    for (std::size_t i = 0; i < d_real.size(); ++i) {
        const auto [r, dr] = clamp_score(d_real[i]);
        const auto [f, df] = clamp_score(d_fake[i]);
        total += std::log(r) + std::log(1.0 - f);
        gr[i] = static_cast<T>(-dr / (b * r));
        gf[i] = static_cast<T>(df / (b * (1.0 - f)));
    }
    LossValue<T> out;
    out.value = static_cast<T>(-total / b);
    out.grads.emplace("d_real", std::move(gr));
    out.grads.emplace("d_fake", std::move(gf));
    return out;
}

template <typename T>
LossValue<T> gan_generator_loss(std::span<const T> d_fake, bool saturating) {
    check_scores(d_fake, "gan_generator_loss");
    const double b = static_cast<double>(d_fake.size());
    double total = 0.0;
    Tensor<T> gf = vector_tensor<T>(d_fake.size());
    for (std::size_t i = 0; i < d_fake.size(); ++i) {
        const auto [f, df] = clamp_score(d_fake[i]);
        if (saturating) {
            total += std::log(1.0 - f);
            gf[i] = static_cast<T>(-df / (b * (1.0 - f)));
        } else {
            total -= std::log(f);
            gf[i] = static_cast<T>(-df / (b * f));
        }
    }
    LossValue<T> out;
    out.value = static_cast<T>(total / b);
    out.grads.emplace("d_fake", std::move(gf));
    return out;
}

template <typename T>
LossValue<T> reconstruction_l1(const Tensor<T>& sr, const Tensor<T>& hr) {
    if (sr.shape() != hr.shape() || sr.rank() < 1 || sr.empty())
        throw std::invalid_argument("reconstruction_l1: shape mismatch " + shape_string(sr.shape()) + " vs " +
                                    shape_string(hr.shape()));
    const double b = static_cast<double>(sr.dim(0));
    double total = 0.0;
    Tensor<T> g(sr.shape());
    for (std::size_t i = 0; i < sr.size(); ++i) {
        const double d = static_cast<double>(sr[i]) - hr[i];
        total += std::abs(d);
        g[i] = static_cast<T>(sign(d) / b);
    }
    LossValue<T> out;
    out.value = static_cast<T>(total / b);
    out.grads.emplace("sr", std::move(g));
    return out;
}

template <typename T>
LossValue<T> realism_loss(std::span<const T> d_fake) {
    check_scores(d_fake, "realism_loss");
    const double b = static_cast<double>(d_fake.size());
    double total = 0.0;
    Tensor<T> gf = vector_tensor<T>(d_fake.size());
    for (std::size_t i = 0; i < d_fake.size(); ++i) {
        const auto [f, df] = clamp_score(d_fake[i]);
        total -= std::log(f);
        gf[i] = static_cast<T>(-df / (b * f));
    }
    LossValue<T> out;
    out.value = static_cast<T>(total / b);
    out.grads.emplace("d_fake", std::move(gf));
    return out;
}

template <typename T>
LossValue<T> gie_total_loss(std::span<const T> d_fake, const Tensor<T>& sr4, const Tensor<T>& hr4, T gamma, T beta,
                            bool saturating, WeightCheck check) {
    if (gamma < T{0} || beta < T{0}) throw std::invalid_argument("gamma and beta must be >= 0");
    const bool ok = check == WeightCheck::strict ? gamma + beta < T{1} : gamma + beta <= T{1};
    if (!ok) throw std::invalid_argument("gamma+beta must be < 1");
    if (sr4.rank() != 4 || sr4.dim(3) != 4)
        throw std::invalid_argument("gie_total_loss expects 4-channel images, got " + shape_string(sr4.shape()));
    const auto real = realism_loss(d_fake);
    const auto rec = reconstruction_l1(sr4, hr4);
    const auto gan = gan_generator_loss(d_fake, saturating);
    const T w_gan = T{1} - gamma - beta;

    LossValue<T> out;
    out.value = gamma * real.value + beta * rec.value + w_gan * gan.value;
    Tensor<T> gd = vector_tensor<T>(d_fake.size());
    for (std::size_t i = 0; i < d_fake.size(); ++i)
        gd[i] = gamma * real.grads.at("d_fake")[i] + w_gan * gan.grads.at("d_fake")[i];
    Tensor<T> gs(sr4.shape());
    for (std::size_t i = 0; i < sr4.size(); ++i) gs[i] = beta * rec.grads.at("sr")[i];
    out.grads.emplace("d_fake", std::move(gd));
    out.grads.emplace("sr", std::move(gs));
    return out;
}

template <typename T>
LossValue<T> class_cross_entropy(const Tensor<T>& class_probs, std::span<const int> targets) {
    if (class_probs.rank() != 2 || class_probs.dim(0) != targets.size())
        throw std::invalid_argument("class_cross_entropy: expected [b, K] probabilities and b targets");
    const std::size_t b = class_probs.dim(0), k = class_probs.dim(1);
    double total = 0.0;
    Tensor<T> g(class_probs.shape());
    for (std::size_t n = 0; n < b; ++n) {
        const int t = targets[n];
        if (t < 0 || static_cast<std::size_t>(t) >= k)
            throw std::invalid_argument("class_cross_entropy: target " + std::to_string(t) + " outside [0, " +
                                        std::to_string(k) + ")");
        const double p = class_probs[n * k + static_cast<std::size_t>(t)];
        const double pc = std::max(p, kScoreEps);
        total -= std::log(pc);
        g[n * k + static_cast<std::size_t>(t)] = p >= kScoreEps ? static_cast<T>(-1.0 / (static_cast<double>(b) * pc)) : T{0};
    }
    LossValue<T> out;
    out.value = static_cast<T>(total / static_cast<double>(b));
    out.grads.emplace("class_probs", std::move(g));
    return out;
}

template <typename T>
LossValue<T> die_reconstruction_loss(const Tensor<T>& class_probs, const Tensor<T>& y_onehot, const Tensor<T>& sr,
                                     const Tensor<T>& hr, T gamma) {
    if (class_probs.shape() != y_onehot.shape() || class_probs.rank() != 2)
        throw std::invalid_argument("die_reconstruction_loss: probabilities and one-hot labels differ in shape");
    const std::size_t b = class_probs.dim(0), k = class_probs.dim(1);
    if (sr.rank() < 1 || sr.dim(0) != b) throw std::invalid_argument("die_reconstruction_loss: batch size mismatch");
    std::vector<int> targets(b);
    for (std::size_t n = 0; n < b; ++n) {
        int hot = -1;
        for (std::size_t j = 0; j < k; ++j) {
            const T v = y_onehot[n * k + j];
            if (v == T{1} && hot < 0)
                hot = static_cast<int>(j);
            else if (v != T{0})
                throw std::invalid_argument("die_reconstruction_loss: row " + std::to_string(n) + " is not one-hot");
        }
        if (hot < 0) throw std::invalid_argument("die_reconstruction_loss: row " + std::to_string(n) + " is not one-hot");
        targets[n] = hot;
    }
    const auto ce = class_cross_entropy(class_probs, std::span<const int>(targets));
    const auto rec = reconstruction_l1(sr, hr);

    LossValue<T> out;
    out.value = (T{1} - gamma) * ce.value + gamma * rec.value;
    Tensor<T> gp(class_probs.shape());
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] = (T{1} - gamma) * ce.grads.at("class_probs")[i];
    Tensor<T> gs(sr.shape());
    for (std::size_t i = 0; i < gs.size(); ++i) gs[i] = gamma * rec.grads.at("sr")[i];
    out.grads.emplace("class_probs", std::move(gp));
    out.grads.emplace("sr", std::move(gs));
    return out;
}

template <typename T>
Differentiated<T> differentiate(const ModelSpec& spec, const ParameterSet<T>& params, const Tensor<T>& input,
                                const OutputLoss<T>& loss, Mode mode) {
    Trace<T> trace;
    const auto out = forward(spec, params, input, {mode, false}, &trace);
    const LossValue<T> l = loss(out);
    if (!std::isfinite(static_cast<double>(l.value))) throw std::runtime_error("differentiate: loss is non-finite");
    const auto d_out = l.grads.find("output");
    const auto d_feat = l.grads.find("features");
    const Tensor<T>* dy = d_out == l.grads.end() ? nullptr : &d_out->second;
    const Tensor<T>* df = d_feat == l.grads.end() ? nullptr : &d_feat->second;

    Differentiated<T> result;
    result.value = l.value;
    if (!dy && !df) {
        result.param_grads = zero_gradients<T>(spec);
        result.input_grad = Tensor<T>(input.shape());
        return result;
    }
    auto back = backward(spec, params, trace, dy, df, true);
    result.param_grads = std::move(back.param_grads);
    result.input_grad = std::move(back.input_grad);
    return result;
}

#define SGLAB_INSTANTIATE_LOSSES(T)                                                                                  \
    template struct LossValue<T>;                                                                                    \
    template T contrastive_energy(std::span<const T>, std::span<const T>);                                           \
    template LossValue<T> contrastive_loss(std::span<const T>, std::span<const T>, int, T);                          \
    template LossValue<T> contrastive_loss_batch(const Tensor<T>&, const Tensor<T>&, std::span<const int>, T);       \
    template LossValue<T> gan_discriminator_loss(std::span<const T>, std::span<const T>);                            \
    template LossValue<T> gan_generator_loss(std::span<const T>, bool);                                              \
    template LossValue<T> reconstruction_l1(const Tensor<T>&, const Tensor<T>&);                                     \
    template LossValue<T> realism_loss(std::span<const T>);                                                          \
    template LossValue<T> gie_total_loss(std::span<const T>, const Tensor<T>&, const Tensor<T>&, T, T, bool,         \
                                         WeightCheck);                                                               \
    template LossValue<T> class_cross_entropy(const Tensor<T>&, std::span<const int>);                               \
    template LossValue<T> die_reconstruction_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                                                  const Tensor<T>&, T);                                              \
    template Differentiated<T> differentiate(const ModelSpec&, const ParameterSet<T>&, const Tensor<T>&,             \
                                             const OutputLoss<T>&, Mode);

SGLAB_INSTANTIATE_LOSSES(float)
SGLAB_INSTANTIATE_LOSSES(double)

#undef SGLAB_INSTANTIATE_LOSSES

}  // namespace sglab
