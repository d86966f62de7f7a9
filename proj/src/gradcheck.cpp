#include "sglab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "sglab/losses.hpp"

namespace sglab {

bool GradcheckReport::passed() const {
    return !items.empty() && std::all_of(items.begin(), items.end(), [](const auto& i) { return i.passed(); });
}

double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
}

namespace {

using D = Tensor<double>;
constexpr double kH = kFiniteDifferenceStep;
// Gradients that a later batch norm cancels exactly are zero analytically but
// carry ~1e-8 of roundoff numerically.
constexpr double kNetworkFloor = 1e-4;

D uniform(Shape shape, Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    D t(std::move(shape));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

// Keeps every element of `b` at least 0.01 away from `a`, so no |.| kink sits
// within a finite-difference step.
D offset_from(const D& a, Rng& rng) {
    std::uniform_real_distribution<double> mag(0.01, 0.3);
    std::bernoulli_distribution sign(0.5);
    D b(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) b[i] = a[i] + (sign(rng) ? mag(rng) : -mag(rng));
    return b;
}

// Compares `analytic` with central differences of `loss` over every element of `x`.
double check_all(D& x, const D& analytic, const std::function<double()>& loss, std::size_t& checked) {
    double worst = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        x[i] = v + kH;
        const double lp = loss();
        x[i] = v - kH;
        const double lm = loss();
        x[i] = v;
        worst = std::max(worst, relative_error(analytic[i], (lp - lm) / (2 * kH)));
        ++checked;
    }
    return worst;
}

void add_item(GradcheckReport& report, std::string name, double worst, std::size_t checked, double tolerance) {
    report.items.push_back({std::move(name), checked, 0, worst, tolerance});
}

void check_losses(GradcheckReport& report, Rng& rng) {
    const std::size_t dim = 16, b = 4;

    // contrastive, genuine and impostor-inside-margin.
    for (int y : {1, 0}) {
        D f1 = uniform({dim}, rng, -1, 1);
        D f2 = offset_from(f1, rng);
        const double e = contrastive_energy<double>(f1.values(), f2.values());
        const double m = y == 1 ? 0.5 : e + 0.5;
        auto loss = [&] { return contrastive_loss<double>(f1.values(), f2.values(), y, m).value; };
        const auto l = contrastive_loss<double>(f1.values(), f2.values(), y, m);
        std::size_t n = 0;
        double worst = check_all(f1, l.grad("f1"), loss, n);
        worst = std::max(worst, check_all(f2, l.grad("f2"), loss, n));
        add_item(report, y ? "contrastive_loss (genuine)" : "contrastive_loss (impostor)", worst, n, kLossTolerance);
    }
    {
        D f1 = uniform({b, dim}, rng, -1, 1);
        D f2 = offset_from(f1, rng);
        const std::vector<int> y{1, 0, 1, 0};
        auto loss = [&] { return contrastive_loss_batch<double>(f1, f2, y, 20.0).value; };
        const auto l = contrastive_loss_batch<double>(f1, f2, y, 20.0);
        std::size_t n = 0;
        double worst = check_all(f1, l.grad("f1"), loss, n);
        worst = std::max(worst, check_all(f2, l.grad("f2"), loss, n));
        add_item(report, "contrastive_loss_batch", worst, n, kLossTolerance);
    }
    {
        D real = uniform({b}, rng, 0.05, 0.95), fake = uniform({b}, rng, 0.05, 0.95);
        auto loss = [&] { return gan_discriminator_loss<double>(real.values(), fake.values()).value; };
        const auto l = gan_discriminator_loss<double>(real.values(), fake.values());
        std::size_t n = 0;
        double worst = check_all(real, l.grad("d_real"), loss, n);
        worst = std::max(worst, check_all(fake, l.grad("d_fake"), loss, n));
        add_item(report, "gan_discriminator_loss", worst, n, kLossTolerance);
    }
    for (bool saturating : {true, false}) {
        D fake = uniform({b}, rng, 0.05, 0.95);
        auto loss = [&] { return gan_generator_loss<double>(fake.values(), saturating).value; };
        std::size_t n = 0;
        const double worst = check_all(fake, gan_generator_loss<double>(fake.values(), saturating).grad("d_fake"), loss, n);
        add_item(report, saturating ? "gan_generator_loss (saturating)" : "gan_generator_loss (non-saturating)", worst,
                 n, kLossTolerance);
    }
    {
        D fake = uniform({b}, rng, 0.05, 0.95);
        auto loss = [&] { return realism_loss<double>(fake.values()).value; };
        std::size_t n = 0;
        const double worst = check_all(fake, realism_loss<double>(fake.values()).grad("d_fake"), loss, n);
        add_item(report, "realism_loss", worst, n, kLossTolerance);
    }
    {
        D hr = uniform({2, 4, 4, 3}, rng, 0.1, 0.9);
        D sr = offset_from(hr, rng);
        auto loss = [&] { return reconstruction_l1<double>(sr, hr).value; };
        std::size_t n = 0;
        const double worst = check_all(sr, reconstruction_l1<double>(sr, hr).grad("sr"), loss, n);
        add_item(report, "reconstruction_l1", worst, n, kLossTolerance);
    }
    {
        D fake = uniform({2}, rng, 0.05, 0.95);
        D hr = uniform({2, 4, 4, 4}, rng, 0.1, 0.9);
        D sr = offset_from(hr, rng);
        auto loss = [&] { return gie_total_loss<double>(fake.values(), sr, hr, 0.25, 0.5).value; };
        const auto l = gie_total_loss<double>(fake.values(), sr, hr, 0.25, 0.5);
        std::size_t n = 0;
        double worst = check_all(fake, l.grad("d_fake"), loss, n);
        worst = std::max(worst, check_all(sr, l.grad("sr"), loss, n));
        add_item(report, "gie_total_loss", worst, n, kLossTolerance);
    }
    {
        const std::size_t k = 5;
        D probs = uniform({b, k}, rng, 0.05, 1.0);
        for (std::size_t r = 0; r < b; ++r) {
            double s = 0;
            for (std::size_t j = 0; j < k; ++j) s += probs[r * k + j];
            for (std::size_t j = 0; j < k; ++j) probs[r * k + j] /= s;
        }
        const std::vector<int> targets{0, 3, 4, 1};
        D onehot({b, k});
        for (std::size_t r = 0; r < b; ++r) onehot[r * k + static_cast<std::size_t>(targets[r])] = 1;
        D hr = uniform({b, 4, 4, 3}, rng, 0.1, 0.9);
        D sr = offset_from(hr, rng);
        {
            auto loss = [&] { return class_cross_entropy<double>(probs, targets).value; };
            std::size_t n = 0;
            const double worst = check_all(probs, class_cross_entropy<double>(probs, targets).grad("class_probs"), loss, n);
            add_item(report, "class_cross_entropy", worst, n, kLossTolerance);
        }
        auto loss = [&] { return die_reconstruction_loss<double>(probs, onehot, sr, hr, 0.25).value; };
        const auto l = die_reconstruction_loss<double>(probs, onehot, sr, hr, 0.25);
        std::size_t n = 0;
        double worst = check_all(probs, l.grad("class_probs"), loss, n);
        worst = std::max(worst, check_all(sr, l.grad("sr"), loss, n));
        add_item(report, "die_reconstruction_loss", worst, n, kLossTolerance);
    }
}

// Samples parameters (uniform tensor, then uniform element) and compares the
// reverse-mode gradient of `loss` against central differences.
void check_network(GradcheckReport& report, const std::string& name, const ModelSpec& spec, const D& input,
                   const OutputLoss<double>& loss, std::size_t samples, Rng& rng) {
    ParameterSet<double> params = init_parameters<double>(spec, rng);
    const auto diff = differentiate(spec, params, input, loss, Mode::train);
    std::vector<std::string> names;
    for (const auto& [n, g] : diff.param_grads) names.push_back(n);
    std::uniform_int_distribution<std::size_t> pick_tensor(0, names.size() - 1);

    auto value = [&] { return loss(forward(spec, params, input, {Mode::train, false})).value; };
    const double base = value();
    double worst = 0;
    std::size_t kinks = 0;
    for (std::size_t s = 0; s < samples;) {
        const std::string& tensor = names[pick_tensor(rng)];
        Tensor<double>& p = params.at(tensor);
        const std::size_t i = std::uniform_int_distribution<std::size_t>(0, p.size() - 1)(rng);
        const double v = p[i];
        p[i] = v + kH;
        const double lp = value();
        p[i] = v - kH;
        const double lm = value();
        p[i] = v;
        const double forward_diff = (lp - base) / kH, backward_diff = (base - lm) / kH;
        if (relative_error(forward_diff, backward_diff, kNetworkFloor) > kNetworkTolerance) {
            if (++kinks > 10 * samples) throw std::runtime_error("gradcheck: too many kinks in " + name);
            continue;
        }
        worst = std::max(worst, relative_error(diff.param_grads.at(tensor)[i], (lp - lm) / (2 * kH), kNetworkFloor));
        ++s;
    }
    add_item(report, name, worst, samples, kNetworkTolerance);
    report.items.back().kinks_skipped = kinks;
}

}  // namespace

GradcheckReport run_gradcheck_suite(std::uint64_t seed, std::size_t network_samples) {
    GradcheckReport report;
    Rng rng(seed);
    check_losses(report, rng);

    {
        const ModelSpec gen = build_generator(Variant::sigan, 4);
        const D lr = uniform({2, 4, 4, 3}, rng, 0, 1);
        const D hr = uniform({2, 16, 16, 3}, rng, 0, 1);
        const OutputLoss<double> l1 = [&](const ForwardOutput<double>& out) {
            auto l = reconstruction_l1(out.output, hr);
            LossValue<double> r{l.value, {}};
            r.grads.emplace("output", l.grad("sr"));
            return r;
        };
        check_network(report, "generator + reconstruction_l1", gen, lr, l1, network_samples, rng);
    }
    {
        const ModelSpec disc = build_discriminator(DiscriminatorKind::realfake, 16);
        const D hr = uniform({2, 16, 16, 3}, rng, 0, 1);
        const OutputLoss<double> adv = [](const ForwardOutput<double>& out) {
            auto l = gan_generator_loss<double>(out.output.values(), false);
            LossValue<double> r{l.value, {}};
            r.grads.emplace("output", l.grad("d_fake").reshaped(out.output.shape()));
            return r;
        };
        check_network(report, "real/fake discriminator + gan_generator_loss", disc, hr, adv, network_samples, rng);
    }
    {
        const int classes = 3;
        const ModelSpec disc = build_discriminator(DiscriminatorKind::multiclass, 32, classes);
        const D hr = uniform({2, 32, 32, 3}, rng, 0, 1);
        const std::vector<int> targets{1, 3};
        const OutputLoss<double> ce = [&](const ForwardOutput<double>& out) {
            auto l = class_cross_entropy<double>(out.output, targets);
            LossValue<double> r{l.value, {}};
            r.grads.emplace("output", l.grad("class_probs"));
            return r;
        };
        check_network(report, "multiclass discriminator + class_cross_entropy", disc, hr, ce, network_samples, rng);
    }
    return report;
}

}  // namespace sglab
