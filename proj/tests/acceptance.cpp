// Runs every primary acceptance criterion and prints one PASS/FAIL line each.
// Exit status is non-zero if any criterion fails.

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>

#include <unistd.h>

#include "sglab/checkpoint.hpp"
#include "sglab/gradcheck.hpp"
#include "sglab/inference.hpp"
#include "sglab/losses.hpp"
#include "sglab/evaluation.hpp"
#include "sglab/toy_faces.hpp"
#include "sglab/training.hpp"

using namespace sglab;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// Collects failed sub-checks so one line can summarize a criterion.
struct Checks {
    int total = 0;
    std::vector<std::string> failures;
    void expect(bool ok, const std::string& what) {
        ++total;
        if (!ok) failures.push_back(what);
    }
    void near(double got, double want, double tol, const std::string& what) {
        expect(std::abs(got - want) <= tol, fmt::format("{}: got {:.17g}, want {:.17g}", what, got, want));
    }
    Outcome outcome(std::string detail) const {
        if (failures.empty()) return {true, fmt::format("{} checks, {}", total, detail)};
        return {false, fmt::format("{}/{} checks failed, first: {}", failures.size(), total, failures.front())};
    }
};

using V = std::vector<double>;
std::span<const double> sp(const V& v) { return v; }

Outcome loss_oracles() {
    Checks c;
    constexpr double tol = 1e-10;

    // contrastive: 0.5 E^2 for genuine, 0.5 max(0, m-E)^2 for impostors.
    const V z{0, 0, 0};
    c.near(contrastive_loss(sp(z), sp(z), 0, 0.5).value, 0.125, tol, "impostor at zero, m=0.5");
    c.near(contrastive_loss(sp(z), sp(z), 1, 0.5).value, 0.0, tol, "genuine at zero");
    const V a{0.5, -0.25, 1.0}, b{0.25, 0.25, 0.5};  // E = 0.25 + 0.5 + 0.5 = 1.25
    c.near(contrastive_loss(sp(a), sp(b), 1, 0.5).value, 0.78125, tol, "genuine E=1.25");
    c.near(contrastive_loss(sp(a), sp(b), 0, 2.0).value, 0.28125, tol, "impostor E=1.25 m=2");
    c.near(contrastive_loss(sp(a), sp(b), 0, 0.5).value, 0.0, tol, "impostor beyond margin");
    const V d{0.1, 0.0, 0.0};
    c.near(contrastive_loss(sp(d), sp(z), 0, 0.5).value, 0.08, tol, "impostor E=0.1 m=0.5");

    // discriminator: -(1/b) sum [ln d_real + ln(1 - d_fake)]
    c.near(gan_discriminator_loss(sp(V{0.5}), sp(V{0.5})).value, 2 * std::log(2.0), tol, "D loss at 0.5");
    c.near(gan_discriminator_loss(sp(V{0.9, 0.8}), sp(V{0.1, 0.4})).value,
           -(std::log(0.9) + std::log(0.9) + std::log(0.8) + std::log(0.6)) / 2, tol, "D loss batch");
    c.near(gan_discriminator_loss(sp(V{0.25}), sp(V{0.75})).value, 2 * std::log(4.0), tol, "D loss 0.25/0.75");
    c.near(gan_generator_loss(sp(V{0.5}), true).value, -std::log(2.0), tol, "saturating G at 0.5");
    c.near(gan_generator_loss(sp(V{0.75}), true).value, std::log(0.25), tol, "saturating G at 0.75");
    c.near(gan_generator_loss(sp(V{0.25}), false).value, std::log(4.0), tol, "non-saturating G at 0.25");
    c.near(gan_generator_loss(sp(V{0.2, 0.8}), false).value, -(std::log(0.2) + std::log(0.8)) / 2, tol,
           "non-saturating G batch");
    c.near(realism_loss(sp(V{0.5, 0.25})).value, (std::log(2.0) + std::log(4.0)) / 2, tol, "realism batch");

    // reconstruction_l1: batch mean of per-image L1 sums
    auto img = [](std::vector<double> v) {
        const std::size_t pixels = v.size() / 3;
        return Tensor<double>({1, 1, pixels, 3}, std::move(v));
    };
    c.near(reconstruction_l1(img({0, 0, 0}), img({0, 0, 0})).value, 0.0, tol, "L1 identical");
    c.near(reconstruction_l1(img({1, 0, 0.5}), img({0, 0, 0})).value, 1.5, tol, "L1 single image");
    c.near(reconstruction_l1(img({0.2, 0.4, 0.6, 0.8, 1.0, 0.0}), img({0.0, 0.5, 0.5, 1.0, 0.0, 0.25})).value,
           0.2 + 0.1 + 0.1 + 0.2 + 1.0 + 0.25, tol, "L1 two pixels");
    Tensor<double> s2({2, 1, 1, 3}, std::vector<double>{1, 1, 1, 0, 0, 0});
    Tensor<double> h2({2, 1, 1, 3}, 0.5);
    c.near(reconstruction_l1(s2, h2).value, 1.5, tol, "L1 batch of two");
    Tensor<double> s3({1, 2, 2, 3}, 0.75), h3({1, 2, 2, 3}, 0.25);
    c.near(reconstruction_l1(s3, h3).value, 6.0, tol, "L1 2x2 image");

    // gie_total_loss: gamma (-ln d) + beta L1 + (1-gamma-beta) ln(1-d) on 4-channel images
    Tensor<double> g_sr({1, 1, 1, 4}, std::vector<double>{0.5, 0.5, 0.5, 0.0});
    Tensor<double> g_hr({1, 1, 1, 4}, std::vector<double>{0.0, 0.5, 1.0, 0.5});  // L1 = 1.5
    auto gie = [&](V dfake, double gamma, double beta) {
        return gie_total_loss(sp(dfake), g_sr, g_hr, gamma, beta).value;
    };
    c.near(gie({0.5}, 0.25, 0.5), 0.25 * std::log(2.0) + 0.75 + 0.25 * -std::log(2.0), tol, "gie d=0.5");
    c.near(gie({0.25}, 0.0, 0.0), std::log(0.75), tol, "gie pure GAN");
    c.near(gie({0.25}, 0.5, 0.0), 0.5 * std::log(4.0) + 0.5 * std::log(0.75), tol, "gie realism+GAN");
    c.near(gie({0.8}, 0.0, 0.9), 0.9 * 1.5 + 0.1 * std::log(0.2), tol, "gie mostly L1");
    c.near(gie({0.1}, 0.3, 0.3), 0.3 * std::log(10.0) + 0.45 + 0.4 * std::log(0.9), tol, "gie mixed");

    // die_reconstruction_loss: (1-gamma) CE + gamma L1; uniform over C+1 classes gives ln(C+1)
    Tensor<double> px({1, 1, 1, 3}, 0.5), hx({1, 1, 1, 3}, 0.5);
    for (int classes : {1, 2, 9, 99}) {
        const std::size_t k = std::size_t(classes) + 1;
        Tensor<double> probs({1, k}, 1.0 / double(k)), onehot({1, k});
        onehot[0] = 1;
        c.near(die_reconstruction_loss(probs, onehot, px, hx, 0.0).value, std::log(double(k)), tol,
               fmt::format("uniform CE, C={}", classes));
        const std::vector<int> t{classes - 1};
        c.near(class_cross_entropy(probs, std::span<const int>(t)).value, std::log(double(k)), tol,
               fmt::format("class CE uniform, C={}", classes));
    }
    Tensor<double> p3({1, 3}, std::vector<double>{0.2, 0.5, 0.3}), y3({1, 3}, std::vector<double>{0, 0, 1});
    Tensor<double> sr3({1, 1, 1, 3}, std::vector<double>{0.0, 0.0, 0.0}), hr3({1, 1, 1, 3}, std::vector<double>{1, 0, 0});
    c.near(die_reconstruction_loss(p3, y3, sr3, hr3, 0.5).value, 0.5 * -std::log(0.3) + 0.5, tol, "die mixed");
    c.near(die_reconstruction_loss(p3, y3, sr3, hr3, 1.0).value, 1.0, tol, "die pure L1");
    return c.outcome("tolerance 1e-10");
}

Outcome gradient_suite() {
    const auto report = run_gradcheck_suite(1);
    double worst_loss = 0, worst_net = 0;
    std::string failed;
    for (const auto& item : report.items) {
        (item.tolerance == kLossTolerance ? worst_loss : worst_net) =
            std::max(item.tolerance == kLossTolerance ? worst_loss : worst_net, item.max_rel_error);
        if (!item.passed() && failed.empty()) failed = item.name;
    }
    return {report.passed(), fmt::format("{} items; worst loss rel err {:.2e} (< 1e-4), worst network {:.2e} (< 1e-3){}",
                                         report.items.size(), worst_loss, worst_net,
                                         failed.empty() ? "" : "; failed: " + failed)};
}

Outcome shape_contract() {
    Checks c;
    for (int n : {8, 16})
        for (Variant v : {Variant::sigan, Variant::giegan, Variant::diegan}) {
            const std::optional<int> classes = v == Variant::sigan ? std::nullopt : std::optional<int>(10);
            const auto spec = build_generator(v, n, classes);
            Rng rng(1);
            const auto params = init_parameters<float>(spec, rng);
            const auto ch = static_cast<std::size_t>(spec.input_channels);
            const Tensor<float> x({1, std::size_t(n), std::size_t(n), ch}, 0.5f);
            const auto y = forward(spec, params, x).output;
            c.expect(y.dim(1) == std::size_t(4 * n) && y.dim(2) == std::size_t(4 * n) && y.dim(3) == ch,
                     fmt::format("{} {}x{} -> {}", to_string(v), n, n, shape_string(y.shape())));
        }
    return c.outcome("8x8->32x32 and 16x16->64x64 for sigan, giegan, diegan");
}

struct SmokeRun {
    std::vector<StepMetrics> metrics;
    TrainState state;
};

// 8 identities with 8 toy images each: images 0-3 train, 4-7 are held out.
std::pair<IdentityCatalog, IdentityCatalog> smoke_catalogs() {
    const auto all = make_toy_catalog({8, 8, 32, 7});
    IdentityCatalog train_cat = all, held = all;
    train_cat.records.clear();
    held.records.clear();
    for (std::size_t i = 0; i < all.records.size(); ++i)
        (i % 8 < 4 ? train_cat : held).records.push_back(all.records[i]);
    return {train_cat, held};
}

SmokeRun smoke_run(double lambda_c) {
    TrainConfig config;
    config.lambda_c = lambda_c;
    auto result = train(config, smoke_catalogs().first);
    return {std::move(result.metrics), std::move(result.state)};
}

double mean_energy(const TrainState& s, const IdentityCatalog& held, double genuine_fraction, std::uint64_t seed) {
    Rng rng(seed);
    const auto b = sample_pair_batch(held, 100, genuine_fraction, rng);
    const auto f1 = forward(s.generator_spec, s.generator, b.lr1, {Mode::inference, true}).features;
    const auto f2 = forward(s.generator_spec, s.generator, b.lr2, {Mode::inference, true}).features;
    const std::size_t d = f1.dim(1);
    double total = 0;
    for (std::size_t i = 0; i < 100; ++i)
        total += contrastive_energy<float>(f1.values().subspan(i * d, d), f2.values().subspan(i * d, d));
    return total / 100;
}

double separation_ratio(const TrainState& s) {
    const auto held = smoke_catalogs().second;
    return mean_energy(s, held, 1.0, 11) / mean_energy(s, held, 0.0, 12);
}

Outcome overfit_smoke(const SmokeRun& run, double secs) {
    std::size_t non_finite = 0;
    for (const auto& m : run.metrics)
        for (double v : {m.loss_d, m.loss_g, m.loss_c, m.recon_l1}) non_finite += !std::isfinite(v);
    const double first = run.metrics.front().recon_l1, last = run.metrics.back().recon_l1;
    const bool ok = run.metrics.size() == 500 && non_finite == 0 && last <= 0.5 * first && secs < 600;
    return {ok, fmt::format("L1 {:.2f} -> {:.2f} (ratio {:.3f} <= 0.5), {} non-finite losses, {:.0f} s", first, last,
                            last / first, non_finite, secs)};
}

Outcome contrastive_separation(const SmokeRun& with, const SmokeRun& without) {
    const double r = separation_ratio(with.state), r0 = separation_ratio(without.state);
    const bool ablation_ok = r0 > 0.8 || r0 > r;
    return {r <= 0.8 && ablation_ok,
            fmt::format("genuine/impostor energy ratio {:.3f} (<= 0.8); lambda_c=0 ablation {:.3f}", r, r0)};
}

Outcome label_search() {
    Checks c;
    TrainConfig config;
    config.variant = Variant::giegan;
    const auto model = LoadedModel::from_checkpoint(make_checkpoint(init_train_state(config, 100)));
    Rng rng(3);
    std::uniform_real_distribution<float> u(0, 1);
    Tensor<float> lr({8, 8, 3});
    for (auto& v : lr.values()) v = u(rng);

    LabelSearch search(model);
    for (int classes : {1, 10, 100}) {
        search.reset_evaluations();
        const auto r = search.run(lr, classes);
        c.expect(search.evaluations() == std::uint64_t(classes) && r.per_label_scores.size() == std::size_t(classes),
                 fmt::format("C={} took {} evaluations", classes, search.evaluations()));
    }

    // Planted argmax: the scorer peaks at the label whose plane value matches.
    TrainConfig small = config;
    small.lr_size = 4;
    small.generator = {16, 8, 1, 1, 128};
    small.discriminator = {8, 32};
    const auto tiny = LoadedModel::from_checkpoint(make_checkpoint(init_train_state(small, 100)));
    Tensor<float> lr4({4, 4, 3}, 0.5f);
    std::uniform_int_distribution<int> pick(0, 99);
    int recovered = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int planted = pick(rng);
        const double target = normalized_label(planted, 100);
        const LabelSearch rigged(tiny, [target](const Tensor<float>& x) { return -std::abs(x[3] - target); });
        recovered += rigged.run(lr4, 100).best_label == planted;
    }
    c.expect(recovered == 100, fmt::format("planted label recovered {}/100", recovered));

    // Wall time against C.
    std::vector<double> xs, ys;
    for (int classes : {10, 50, 100, 500}) {
        double best = 1e300;
        for (int rep = 0; rep < 2; ++rep) {
            const auto t = Clock::now();
            search.run(lr, classes);
            best = std::min(best, seconds_since(t));
        }
        xs.push_back(classes);
        ys.push_back(best);
    }
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / 4, my = std::accumulate(ys.begin(), ys.end(), 0.0) / 4;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    const double r2 = sxy * sxy / (sxx * syy);
    c.expect(r2 > 0.95, fmt::format("time vs C R^2 {:.4f}", r2));
    return c.outcome(fmt::format("planted {}/100, R^2 {:.4f}, {:.1f} ms per label", recovered, r2,
                                 1000 * sxy / sxx));
}

Outcome auc_oracle() {
    Checks c;
    Rng rng(9);
    std::uniform_int_distribution<int> level(0, 40);
    double worst = 0, worst_swap = 0;
    for (int instance = 0; instance < 50; ++instance) {
        std::vector<double> s(100);
        std::vector<int> y(100);
        for (std::size_t i = 0; i < 100; ++i) {
            s[i] = level(rng) / 40.0;  // coarse levels force ties
            y[i] = std::bernoulli_distribution(0.4)(rng);
        }
        y[0] = 1;
        y[1] = 0;
        double num = 0, den = 0;
        for (std::size_t i = 0; i < 100; ++i)
            for (std::size_t j = 0; j < 100; ++j)
                if (y[i] == 1 && y[j] == 0) {
                    num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
                    den += 1;
                }
        const double auc = verification_auc(s, y);
        worst = std::max(worst, std::abs(auc - num / den));
        std::vector<int> flipped(y);
        for (auto& v : flipped) v = 1 - v;
        worst_swap = std::max(worst_swap, std::abs(verification_auc(s, flipped) - (1.0 - auc)));
    }
    c.expect(worst <= 1e-12, fmt::format("max oracle gap {:.3e}", worst));
    // Both sides are exact counts of half-units; only the final division rounds.
    c.expect(worst_swap <= std::numeric_limits<double>::epsilon(), fmt::format("swap gap {:.3e}", worst_swap));
    return c.outcome(fmt::format("50 instances n=100, max gap {:.1e}, swap gap {:.1e}", worst, worst_swap));
}

Outcome determinism_persistence() {
    Checks c;
    const auto catalog = make_toy_catalog({8, 4, 32, 7});
    TrainConfig config;
    config.iterations = 10;
    const auto a = train(config, catalog), b = train(config, catalog);
    const std::string bytes_a = serialize_checkpoint(make_checkpoint(a.state));
    c.expect(bytes_a == serialize_checkpoint(make_checkpoint(b.state)), "checkpoints after 10 steps differ");

    const auto path = std::filesystem::temp_directory_path() / fmt::format("sglab-acceptance-{}.sgck", ::getpid());
    save_checkpoint(make_checkpoint(a.state), path);
    const auto loaded = LoadedModel::load(path);
    std::filesystem::remove(path);
    const auto direct = LoadedModel::from_checkpoint(make_checkpoint(a.state));
    const Tensor<float> lr = batch_item(synthesize_lr(catalog.records[3].image.reshaped({1, 32, 32, 3})), 0);
    c.expect(hallucinate(loaded, lr) == hallucinate(direct, lr), "save/load/forward not bit exact");

    auto rejected = [](std::string_view bytes) {
        try {
            parse_checkpoint(bytes);
            return false;
        } catch (const CheckpointError&) {
            return true;
        }
    };
    std::string magic = bytes_a, version = bytes_a, shape = bytes_a;
    magic[1] ^= 0x5a;
    version[4] ^= 0x07;
    c.expect(rejected(magic), "bad magic accepted");
    c.expect(rejected(version), "bad version accepted");
    c.expect(rejected(std::string_view(bytes_a).substr(0, bytes_a.size() - 4)), "truncated file accepted");
    c.expect(rejected(bytes_a + std::string(8, '\0')), "trailing bytes accepted");
    c.expect(rejected(std::string_view(bytes_a).substr(0, 40)), "header-only file accepted");
    return c.outcome("byte-identical replay, bit-exact reload, corruption rejected");
}

Outcome pairing_audit() {
    Checks c;
    const auto catalog = make_toy_catalog({8, 4, 16, 7});
    Rng rng(2024);
    std::size_t pairs = 0, inconsistent = 0, bad_batches = 0;
    const double fractions[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (std::size_t batch = 0; pairs < 10000; ++batch) {
        const double f = fractions[batch % 5];
        const auto b = sample_pair_batch(catalog, 16, f, rng);
        const auto genuine = std::count(b.y.begin(), b.y.end(), 1);
        bad_batches += genuine != std::lround(16 * f);
        for (std::size_t i = 0; i < 16; ++i, ++pairs) {
            const int i1 = catalog.records[b.record1[i]].identity, i2 = catalog.records[b.record2[i]].identity;
            const bool ok = i1 == b.id1[i] && i2 == b.id2[i] && (b.y[i] == 1) == (i1 == i2) &&
                            (b.y[i] == 0 || b.record1[i] != b.record2[i]) &&
                            batch_item(b.hr1, i) == catalog.records[b.record1[i]].image;
            inconsistent += !ok;
        }
    }
    c.expect(inconsistent == 0, fmt::format("{} inconsistent pairs", inconsistent));
    c.expect(bad_batches == 0, fmt::format("{} batches missed the genuine fraction", bad_batches));
    return c.outcome(fmt::format("{} pairs, {} inconsistent, {} off-fraction batches", pairs, inconsistent, bad_batches));
}

}  // namespace

// An optional argument runs only the criteria whose name contains it.
int main(int argc, char** argv) {
    spdlog::set_level(spdlog::level::warn);
    const std::string filter = argc > 1 ? argv[1] : "";
    int failed = 0;
    auto report = [&](const char* name, double limit_s, const std::function<Outcome()>& fn) {
        if (std::string(name).find(filter) == std::string::npos) return;
        const auto t = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = seconds_since(t);
        if (limit_s > 0 && secs >= limit_s) {
            o.passed = false;
            o.detail += fmt::format("; exceeded {:.0f} s budget", limit_s);
        }
        failed += !o.passed;
        std::printf("%s %s: %s [%.1f s]\n", o.passed ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
        std::fflush(stdout);
    };

    report("loss-formula oracles", 5, loss_oracles);
    report("gradient suite", 120, gradient_suite);
    report("shape contract", 10, shape_contract);

    std::optional<SmokeRun> with, without;
    double smoke_secs = 0;
    report("overfit smoke test", 0, [&] {
        const auto t = Clock::now();
        with = smoke_run(1.0);
        smoke_secs = seconds_since(t);
        return overfit_smoke(*with, smoke_secs);
    });
    report("contrastive separation", 0, [&] {
        if (!with) throw std::runtime_error("smoke run unavailable");
        without = smoke_run(0.0);
        return contrastive_separation(*with, *without);
    });
    report("label search", 0, label_search);
    report("AUC oracle equivalence", 0, auc_oracle);
    report("determinism and persistence", 0, determinism_persistence);
    report("pairing audit", 0, pairing_audit);

    std::printf("%s: %d failed\n", failed ? "FAILED" : "ALL PASSED", failed);
    return failed ? 1 : 0;
}
