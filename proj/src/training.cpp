#include "sglab/training.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include "sglab/checkpoint.hpp"
#include "sglab/hash.hpp"
#include "sglab/losses.hpp"

namespace sglab {

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw std::invalid_argument(what);
    };
    require(lr_size >= 4, "lr_size must be >= 4");
    require(batch >= 2, "batch must be >= 2");
    require(lr_d > 0 && lr_g > 0 && lr_c > 0, "learning rates must be > 0");
    require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1, "Adam betas must lie in [0,1)");
    require(adam_eps > 0, "adam_eps must be > 0");
    require(margin > 0, "margin must be > 0");
    require(gamma >= 0 && beta >= 0, "gamma and beta must be >= 0");
    require(gamma + beta < 1, "gamma+beta must be < 1");
    require(lambda_r >= 0, "lambda_r must be >= 0");
    require(lambda_c >= 0, "lambda_c must be >= 0");
    require(genuine_fraction >= 0 && genuine_fraction <= 1, "genuine_fraction must lie in [0,1]");
}

std::string TrainConfig::to_text() const {
    std::map<std::string, std::string> kv{
        {"variant", std::string(to_string(variant))},
        {"lr_size", fmt::format("{}", lr_size)},
        {"batch", fmt::format("{}", batch)},
        {"iterations", fmt::format("{}", iterations)},
        {"lr_d", fmt::format("{}", lr_d)},
        {"lr_g", fmt::format("{}", lr_g)},
        {"lr_c", fmt::format("{}", lr_c)},
        {"adam_beta1", fmt::format("{}", adam_beta1)},
        {"adam_beta2", fmt::format("{}", adam_beta2)},
        {"adam_eps", fmt::format("{}", adam_eps)},
        {"margin", fmt::format("{}", margin)},
        {"gamma", fmt::format("{}", gamma)},
        {"beta", fmt::format("{}", beta)},
        {"lambda_r", fmt::format("{}", lambda_r)},
        {"lambda_c", fmt::format("{}", lambda_c)},
        {"genuine_fraction", fmt::format("{}", genuine_fraction)},
        {"saturating", saturating ? "true" : "false"},
        {"seed", fmt::format("{}", seed)},
        {"checkpoint_every", fmt::format("{}", checkpoint_every)},
        {"gen_channels", fmt::format("{}", generator.trunk_channels)},
        {"tail_channels", fmt::format("{}", generator.tail_channels)},
        {"blocks_before", fmt::format("{}", generator.blocks_before_upsampling)},
        {"blocks_between", fmt::format("{}", generator.blocks_between_upsamplers)},
        {"feature_dim", fmt::format("{}", generator.feature_dim)},
        {"disc_channels", fmt::format("{}", discriminator.base_channels)},
        {"disc_max_channels", fmt::format("{}", discriminator.max_channels)},
        {"data_root", data_root},
        {"out_dir", out_dir},
    };
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

std::uint64_t TrainConfig::digest() const { return fnv1a64(to_text()); }

Architecture TrainConfig::architecture(std::optional<int> num_identities) const {
    Architecture a;
    a.variant = variant;
    a.lr_size = lr_size;
    if (variant != Variant::sigan) {
        if (!num_identities) throw std::invalid_argument(std::string(to_string(variant)) + " needs num_identities");
        a.num_identities = num_identities;
    }
    a.generator_options = generator;
    a.discriminator_options = discriminator;
    return a;
}

TrainingError::TrainingError(std::uint64_t it, std::string step, std::string loss)
    : std::runtime_error(fmt::format("non-finite {} at iteration {} ({} step)", loss, it, step)),
      iteration(it),
      sub_step(std::move(step)),
      loss_name(std::move(loss)) {}

TrainState init_train_state(const TrainConfig& config, std::optional<int> num_identities) {
    TrainState s{config,
                 config.architecture(num_identities),
                 {},
                 {},
                 {},
                 {},
                 Adam<float>({config.lr_d, config.adam_beta1, config.adam_beta2, config.adam_eps}),
                 Adam<float>({config.lr_g, config.adam_beta1, config.adam_beta2, config.adam_eps}),
                 Adam<float>({config.lr_c, config.adam_beta1, config.adam_beta2, config.adam_eps}),
                 0,
                 Rng(config.seed)};
    s.generator_spec = s.arch.generator();
    s.discriminator_spec = s.arch.discriminator();
    s.generator = init_parameters<float>(s.generator_spec, s.rng);
    s.discriminator = init_parameters<float>(s.discriminator_spec, s.rng);
    return s;
}

Tensor<float> label_plane(const std::vector<int>& labels, int num_identities, std::size_t size) {
    Tensor<float> plane({labels.size(), size, size, 1});
    const std::size_t per = size * size;
    for (std::size_t n = 0; n < labels.size(); ++n)
        std::fill_n(plane.data() + n * per, per, static_cast<float>(normalized_label(labels[n], num_identities)));
    return plane;
}

namespace {

using Clock = std::chrono::steady_clock;

struct Pass {
    ForwardOutput<float> out;
    Trace<float> trace;
};

Pass run(const ModelSpec& spec, const ParameterSet<float>& params, const Tensor<float>& input,
         bool features_only = false) {
    Pass p;
    p.out = forward(spec, params, input, {Mode::train, features_only}, &p.trace);
    return p;
}

void accumulate(TensorMap<float>& acc, const TensorMap<float>& x) {
    for (const auto& [name, g] : x) {
        auto [it, fresh] = acc.try_emplace(name, g);
        if (!fresh) kernels::add_inplace(it->second, g);
    }
}

TensorMap<float> without_head(TensorMap<float> grads) {
    std::erase_if(grads, [](const auto& kv) { return kv.first.starts_with("gen.head."); });
    return grads;
}

void check_loss(double value, std::uint64_t iteration, const char* step, const char* loss) {
    if (!std::isfinite(value)) throw TrainingError(iteration, step, loss);
}

Tensor<float> as_column(const Tensor<float>& scores) { return scores.reshaped({scores.size(), 1}); }

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Discriminator update on separate real and fake passes. Running statistics
// are folded in after each pass.
template <typename LossFn>
double discriminator_step(TrainState& s, const Tensor<float>& real, const Tensor<float>& fake, LossFn loss_fn) {
    Pass dr = run(s.discriminator_spec, s.discriminator, real);
    apply_running_stats(s.discriminator, dr.out.running_stats);
    Pass df = run(s.discriminator_spec, s.discriminator, fake);
    apply_running_stats(s.discriminator, df.out.running_stats);

    auto [value, d_real, d_fake] = loss_fn(dr.out.output, df.out.output);
    check_loss(value, s.iteration + 1, "discriminator", "discriminator loss");
    auto grads = backward<float>(s.discriminator_spec, s.discriminator, dr.trace, &d_real, nullptr).param_grads;
    accumulate(grads, backward<float>(s.discriminator_spec, s.discriminator, df.trace, &d_fake, nullptr).param_grads);
    s.opt_d.step(s.discriminator, grads);
    return value;
}

void require_variant(const TrainState& s, Variant v) {
    if (s.arch.variant != v)
        throw std::invalid_argument(fmt::format("{} step called on a {} state", to_string(v), to_string(s.arch.variant)));
}

}  // namespace

StepMetrics sigan_train_step(TrainState& s, const PairBatch& batch) {
    require_variant(s, Variant::sigan);
    const auto start = Clock::now();
    const std::uint64_t it = s.iteration + 1;
    const std::size_t b = batch.y.size();
    const auto& gspec = s.generator_spec;
    const auto& dspec = s.discriminator_spec;
    StepMetrics m;
    m.iteration = it;

    // Both branches read the same generator parameters.
    Pass g1 = run(gspec, s.generator, batch.lr1);
    ParameterSet<float> branch2 = s.generator;
    apply_running_stats(branch2, g1.out.running_stats);
    Pass g2 = run(gspec, branch2, batch.lr2);
    const Tensor<float> sr = concat_batch(g1.out.output, g2.out.output);
    const Tensor<float> hr = concat_batch(batch.hr1, batch.hr2);

    // (1) discriminator on both pair sides.
    m.loss_d = discriminator_step(s, hr, sr, [](const Tensor<float>& real, const Tensor<float>& fake) {
        auto l = gan_discriminator_loss<float>(real.values(), fake.values());
        return std::tuple{static_cast<double>(l.value), as_column(l.grad("d_real")), as_column(l.grad("d_fake"))};
    });

    // (2) generator: adversarial + lambda_r * L1. The generator has not changed
    // since the forward passes above, so their traces are reused.
    {
        Pass dg = run(dspec, s.discriminator, sr);
        const auto gan = gan_generator_loss<float>(dg.out.output.values(), s.config.saturating);
        const auto rec = reconstruction_l1(sr, hr);
        m.recon_l1 = rec.value;
        m.loss_g = static_cast<double>(gan.value) + s.config.lambda_r * rec.value;
        check_loss(m.loss_g, it, "generator", "gan_generator_loss + reconstruction_l1");
        const Tensor<float> d_scores = as_column(gan.grad("d_fake"));
        Tensor<float> d_sr = backward<float>(dspec, s.discriminator, dg.trace, &d_scores, nullptr, false).input_grad;
        const auto lambda_r = static_cast<float>(s.config.lambda_r);
        const Tensor<float>& d_rec = rec.grad("sr");
        for (std::size_t i = 0; i < d_sr.size(); ++i) d_sr[i] += lambda_r * d_rec[i];
        const Tensor<float> d1 = slice_batch(d_sr, 0, b), d2 = slice_batch(d_sr, b, b);
        auto grads = backward<float>(gspec, s.generator, g1.trace, &d1, nullptr).param_grads;
        accumulate(grads, backward<float>(gspec, s.generator, g2.trace, &d2, nullptr).param_grads);
        s.opt_g.step(s.generator, without_head(std::move(grads)));
        // g2's statistics already build on g1's.
        apply_running_stats(s.generator, g2.out.running_stats);
    }

    // (3) contrastive loss on the two branches' perceptual features.
    {
        Pass c1 = run(gspec, s.generator, batch.lr1, true);
        Pass c2 = run(gspec, s.generator, batch.lr2, true);
        const auto l = contrastive_loss_batch(c1.out.features, c2.out.features, std::span<const int>(batch.y),
                                              static_cast<float>(s.config.margin));
        m.loss_c = l.value;
        check_loss(m.loss_c, it, "contrastive", "contrastive_loss");
        if (s.config.lambda_c > 0) {
            const auto w = static_cast<float>(s.config.lambda_c);
            Tensor<float> f1 = l.grad("f1"), f2 = l.grad("f2");
            for (auto& v : f1.values()) v *= w;
            for (auto& v : f2.values()) v *= w;
            auto grads = backward<float>(gspec, s.generator, c1.trace, nullptr, &f1).param_grads;
            accumulate(grads, backward<float>(gspec, s.generator, c2.trace, nullptr, &f2).param_grads);
            s.opt_c.step(s.generator, grads);
        }
    }

    s.iteration = it;
    m.wall_ms = elapsed_ms(start);
    return m;
}

StepMetrics giegan_train_step(TrainState& s, const LabeledBatch& batch) {
    require_variant(s, Variant::giegan);
    const auto start = Clock::now();
    const std::uint64_t it = s.iteration + 1;
    const int c = *s.arch.num_identities;
    const auto n = static_cast<std::size_t>(s.arch.lr_size);
    const auto& gspec = s.generator_spec;
    const auto& dspec = s.discriminator_spec;
    StepMetrics m;
    m.iteration = it;

    const Tensor<float> plane_lr = label_plane(batch.labels, c, n);
    const Tensor<float> plane_hr = label_plane(batch.labels, c, n * kUpscaleFactor);
    Pass g = run(gspec, s.generator, concat_channels(batch.lr, plane_lr));
    const Tensor<float>& sr4 = g.out.output;
    const Tensor<float> fake = concat_channels(slice_channels(sr4, 0, 3), plane_hr);
    const Tensor<float> real = concat_channels(batch.hr, plane_hr);

    m.loss_d = discriminator_step(s, real, fake, [](const Tensor<float>& r, const Tensor<float>& f) {
        auto l = gan_discriminator_loss<float>(r.values(), f.values());
        return std::tuple{static_cast<double>(l.value), as_column(l.grad("d_real")), as_column(l.grad("d_fake"))};
    });

    Pass dg = run(dspec, s.discriminator, fake);
    const auto scores = dg.out.output.values();
    const auto total = gie_total_loss<float>(scores, sr4, real, static_cast<float>(s.config.gamma),
                                             static_cast<float>(s.config.beta), s.config.saturating);
    m.loss_g = total.value;
    m.loss_c = realism_loss<float>(scores).value;
    m.recon_l1 = reconstruction_l1(slice_channels(sr4, 0, 3), batch.hr).value;
    check_loss(m.loss_g, it, "generator", "gie_total_loss");

    const Tensor<float> d_scores = as_column(total.grad("d_fake"));
    const Tensor<float> d_fake = backward<float>(dspec, s.discriminator, dg.trace, &d_scores, nullptr, false).input_grad;
    Tensor<float> d_sr = total.grad("sr");
    const std::size_t pixels = d_sr.size() / 4;
    for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t ch = 0; ch < 3; ++ch) d_sr[p * 4 + ch] += d_fake[p * 4 + ch];
    auto grads = backward<float>(gspec, s.generator, g.trace, &d_sr, nullptr).param_grads;
    s.opt_g.step(s.generator, without_head(std::move(grads)));
    apply_running_stats(s.generator, g.out.running_stats);

    s.iteration = it;
    m.wall_ms = elapsed_ms(start);
    return m;
}

StepMetrics diegan_train_step(TrainState& s, const LabeledBatch& batch) {
    require_variant(s, Variant::diegan);
    const auto start = Clock::now();
    const std::uint64_t it = s.iteration + 1;
    const int c = *s.arch.num_identities;
    const std::size_t b = batch.labels.size();
    const auto& gspec = s.generator_spec;
    const auto& dspec = s.discriminator_spec;
    for (int label : batch.labels)
        if (label < 0 || label >= c)
            throw std::invalid_argument(fmt::format("label {} outside [0, {})", label, c));
    StepMetrics m;
    m.iteration = it;

    Pass g = run(gspec, s.generator, batch.lr);
    const Tensor<float>& sr = g.out.output;
    const std::vector<int> fake_class(b, c);
    double identity_ce = 0;
    m.loss_d = discriminator_step(s, batch.hr, sr, [&](const Tensor<float>& real, const Tensor<float>& fake) {
        auto lr = class_cross_entropy(real, std::span<const int>(batch.labels));
        auto lf = class_cross_entropy(fake, std::span<const int>(fake_class));
        identity_ce = lr.value;
        return std::tuple{static_cast<double>(lr.value) + lf.value, lr.grad("class_probs"), lf.grad("class_probs")};
    });
    m.loss_c = identity_ce;

    Pass dg = run(dspec, s.discriminator, sr);
    const Tensor<float>& probs = dg.out.output;
    Tensor<float> onehot(probs.shape());
    for (std::size_t i = 0; i < b; ++i) onehot[i * probs.dim(1) + static_cast<std::size_t>(batch.labels[i])] = 1.0f;
    const auto rec = die_reconstruction_loss(probs, onehot, sr, batch.hr, static_cast<float>(s.config.gamma));
    const auto gan = class_cross_entropy(probs, std::span<const int>(batch.labels));
    m.loss_g = static_cast<double>(rec.value) + gan.value;
    m.recon_l1 = reconstruction_l1(sr, batch.hr).value;
    check_loss(m.loss_g, it, "generator", "die_reconstruction_loss + identity GAN term");

    Tensor<float> d_probs = rec.grad("class_probs");
    kernels::add_inplace(d_probs, gan.grad("class_probs"));
    Tensor<float> d_sr = backward<float>(dspec, s.discriminator, dg.trace, &d_probs, nullptr, false).input_grad;
    kernels::add_inplace(d_sr, rec.grad("sr"));
    auto grads = backward<float>(gspec, s.generator, g.trace, &d_sr, nullptr).param_grads;
    s.opt_g.step(s.generator, without_head(std::move(grads)));
    apply_running_stats(s.generator, g.out.running_stats);

    s.iteration = it;
    m.wall_ms = elapsed_ms(start);
    return m;
}

StepMetrics train_step(TrainState& s, const IdentityCatalog& catalog) {
    switch (s.arch.variant) {
    case Variant::sigan:
        return sigan_train_step(s, sample_pair_batch(catalog, s.config.batch, s.config.genuine_fraction, s.rng));
    case Variant::giegan:
        return giegan_train_step(s, sample_labeled_batch(catalog, s.config.batch, s.rng));
    case Variant::diegan:
        return diegan_train_step(s, sample_labeled_batch(catalog, s.config.batch, s.rng));
    }
    throw std::invalid_argument("unknown variant");
}

std::string metrics_csv_row(const StepMetrics& m) {
    return fmt::format("{},{:.9g},{:.9g},{:.9g},{:.3f}", m.iteration, m.loss_d, m.loss_g, m.loss_c, m.wall_ms);
}

TrainResult train(const TrainConfig& config, const IdentityCatalog& catalog,
                  const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(const StepMetrics&)>& on_step) {
    config.validate();
    if (catalog.hr_size != config.lr_size * kUpscaleFactor)
        throw std::invalid_argument(fmt::format("catalog hr_size {} does not match lr_size {} x {}", catalog.hr_size,
                                                config.lr_size, kUpscaleFactor));
    const std::optional<int> classes =
        config.variant == Variant::sigan ? std::nullopt : std::optional<int>(catalog.num_identities);
    TrainResult result{init_train_state(config, classes), {}};
    TrainState& s = result.state;

    std::ofstream csv;
    if (out_dir) {
        std::filesystem::create_directories(*out_dir);
        csv.open(*out_dir / "metrics.csv", std::ios::trunc);
        if (!csv) throw std::runtime_error("cannot write " + (*out_dir / "metrics.csv").string());
    }
    for (std::size_t step = 0; step < config.iterations; ++step) {
        const StepMetrics m = train_step(s, catalog);
        result.metrics.push_back(m);
        if (on_step) on_step(m);
        if (csv.is_open()) {
            csv << metrics_csv_row(m) << '\n';
            csv.flush();
            if (!csv) throw std::runtime_error("failed writing metrics.csv");
        }
        if (m.iteration % 50 == 0 || m.iteration == 1)
            spdlog::info("iter {} loss_d={:.4f} loss_g={:.4f} loss_c={:.4f} l1={:.4f}", m.iteration, m.loss_d,
                         m.loss_g, m.loss_c, m.recon_l1);
        if (out_dir && config.checkpoint_every > 0 && m.iteration % config.checkpoint_every == 0)
            save_checkpoint(make_checkpoint(s), *out_dir / fmt::format("checkpoint-{:06d}.sgck", m.iteration));
    }
    if (out_dir) save_checkpoint(make_checkpoint(s), *out_dir / "final.sgck");
    return result;
}

}  // namespace sglab
