#include <doctest.h>

#include <fstream>

#include "sglab/checkpoint.hpp"
#include "sglab/toy_faces.hpp"
#include "sglab/training.hpp"
#include "test_util.hpp"

using namespace sglab;
using sglab::testing::small_config;
using sglab::testing::TempDir;

namespace {

ParameterSet<float> trainable(const ParameterSet<float>& p) {
    ParameterSet<float> out;
    for (const auto& [name, t] : p.tensors())
        if (is_trainable(name)) out.set(name, t);
    return out;
}

void freeze(Adam<float>& opt) { opt = Adam<float>({0.0, 0.5, 0.999, 1e-8}); }

bool same_prefix_tensors(const ParameterSet<float>& a, const ParameterSet<float>& b, const std::string& prefix) {
    for (const auto& [name, t] : a.tensors())
        if (name.rfind(prefix, 0) == 0 && is_trainable(name) && !(t == b.at(name))) return false;
    return true;
}

struct SiganFixture {
    IdentityCatalog catalog = make_toy_catalog({4, 3, 16, 3});
    TrainConfig config = small_config(Variant::sigan, 4);
    PairBatch batch;
    SiganFixture() {
        Rng rng(5);
        batch = sample_pair_batch(catalog, 4, 0.5, rng);
    }
};

}  // namespace

TEST_SUITE("training") {
    TEST_CASE("config validation and digest") {
        TrainConfig c;
        CHECK_NOTHROW(c.validate());
        CHECK(c.digest() == TrainConfig{}.digest());
        TrainConfig d = c;
        d.seed = 2;
        CHECK(d.digest() != c.digest());
        c.gamma = 0.5;
        c.beta = 0.5;
        c.variant = Variant::giegan;
        CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("gamma+beta must be < 1"), std::invalid_argument);
    }

    TEST_CASE("zero learning rates leave trainable parameters untouched") {
        SiganFixture f;
        TrainState s = init_train_state(f.config);
        const auto g0 = trainable(s.generator), d0 = trainable(s.discriminator);
        freeze(s.opt_d);
        freeze(s.opt_g);
        freeze(s.opt_c);
        for (int i = 0; i < 2; ++i) sigan_train_step(s, f.batch);
        CHECK(trainable(s.generator) == g0);
        CHECK(trainable(s.discriminator) == d0);
        CHECK(s.iteration == 2);
    }

    TEST_CASE("sub-steps only update their own parameters") {
        SiganFixture f;
        const TrainState init = init_train_state(f.config);

        SUBCASE("discriminator update is independent of later sub-steps") {
            TrainState a = init, b = init;
            freeze(b.opt_g);
            freeze(b.opt_c);
            sigan_train_step(a, f.batch);
            sigan_train_step(b, f.batch);
            CHECK(a.discriminator == b.discriminator);
            CHECK_FALSE(trainable(a.discriminator) == trainable(init.discriminator));
            CHECK(trainable(b.generator) == trainable(init.generator));
        }
        SUBCASE("zero contrastive rate equals skipping the contrastive step") {
            TrainState a = init, b = init;
            freeze(a.opt_c);
            b.config.lambda_c = 0;
            sigan_train_step(a, f.batch);
            sigan_train_step(b, f.batch);
            CHECK(a.generator == b.generator);
            CHECK(same_prefix_tensors(a.generator, init.generator, "gen.head."));
        }
        SUBCASE("contrastive step changes only layers feeding the perceptual head") {
            TrainState s = init;
            freeze(s.opt_d);
            freeze(s.opt_g);
            sigan_train_step(s, f.batch);
            CHECK(trainable(s.discriminator) == trainable(init.discriminator));
            CHECK_FALSE(same_prefix_tensors(s.generator, init.generator, "gen.head."));
            const auto& layers = s.generator_spec.layers;
            for (std::size_t i = *s.generator_spec.perceptual_tap + 1; i < layers.size(); ++i)
                CHECK(same_prefix_tensors(s.generator, init.generator, layers[i].name + "."));
            CHECK_FALSE(same_prefix_tensors(s.generator, init.generator, layers.front().name + "."));
        }
    }

    TEST_CASE("training is deterministic for a fixed seed") {
        const auto catalog = make_toy_catalog({3, 3, 16, 4});
        auto config = small_config(Variant::sigan, 4);
        config.iterations = 10;
        const auto a = train(config, catalog);
        const auto b = train(config, catalog);
        CHECK(serialize_checkpoint(make_checkpoint(a.state)) == serialize_checkpoint(make_checkpoint(b.state)));
        REQUIRE(a.metrics.size() == 10);
        for (std::size_t i = 0; i < 10; ++i) CHECK(a.metrics[i].loss_g == b.metrics[i].loss_g);
        config.seed = 2;
        const auto c = train(config, catalog);
        CHECK_FALSE(c.state.generator == a.state.generator);
    }

    TEST_CASE("GieGAN step with a single identity uses a constant zero plane") {
        const auto plane = label_plane({0, 0}, 1, 4);
        for (float v : plane.values()) CHECK(v == 0.0f);
        const auto ends = label_plane({0, 4}, 5, 2);
        CHECK(ends[0] == 0.0f);
        CHECK(ends[7] == 1.0f);
        CHECK_THROWS_AS(label_plane({5}, 5, 2), std::invalid_argument);

        const auto catalog = make_toy_catalog({2, 2, 16, 1});
        auto config = small_config(Variant::giegan, 4);
        TrainState s = init_train_state(config, 1);
        CHECK(s.generator_spec.input_channels == 4);
        CHECK(s.discriminator_spec.input_channels == 4);
        LabeledBatch b;
        std::vector<Tensor<float>> hr;
        for (std::size_t i = 0; i < 2; ++i) {
            hr.push_back(catalog.records[i].image);
            b.labels.push_back(0);
            b.records.push_back(i);
        }
        b.hr = stack(hr);
        b.lr = synthesize_lr(b.hr);
        const auto m = giegan_train_step(s, b);
        CHECK(std::isfinite(m.loss_g));
        CHECK(std::isfinite(m.loss_d));
        b.labels[1] = 1;
        CHECK_THROWS(giegan_train_step(s, b));
    }

    TEST_CASE("variant step functions reject other variants") {
        SiganFixture f;
        TrainState s = init_train_state(f.config);
        Rng rng(1);
        CHECK_THROWS_AS(giegan_train_step(s, sample_labeled_batch(f.catalog, 2, rng)), std::invalid_argument);
        CHECK_THROWS_AS(init_train_state(small_config(Variant::diegan, 8)), std::invalid_argument);
    }

    TEST_CASE("DieGAN discriminator learns identities above chance") {
        const auto catalog = make_toy_catalog({3, 4, 32, 2});
        auto config = small_config(Variant::diegan, 8);
        config.iterations = 200;
        config.lr_d = 1e-3;
        const auto result = train(config, catalog);
        for (const auto& m : result.metrics) REQUIRE(std::isfinite(m.loss_d));
        const auto& s = result.state;
        std::vector<Tensor<float>> imgs;
        for (const auto& r : catalog.records) imgs.push_back(r.image);
        const auto probs = discriminator_forward(s.discriminator_spec, s.discriminator, stack(imgs));
        int correct = 0;
        for (std::size_t r = 0; r < catalog.records.size(); ++r) {
            double sum = 0;
            for (std::size_t j = 0; j < 4; ++j) sum += probs[r * 4 + j];
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
            const auto row = probs.values().subspan(r * 4, 3);
            const auto best = std::max_element(row.begin(), row.end()) - row.begin();
            correct += best == catalog.records[r].identity;
        }
        MESSAGE("DieGAN identity accuracy " << correct << "/12");
        CHECK(correct > 4);
    }

    TEST_CASE("long toy run stays finite") {
        const auto catalog = make_toy_catalog({4, 4, 16, 6});
        auto config = small_config(Variant::sigan, 4);
        config.iterations = 1000;
        std::size_t seen = 0;
        train(config, catalog, std::nullopt, [&](const StepMetrics& m) {
            ++seen;
            REQUIRE(std::isfinite(m.loss_d));
            REQUIRE(std::isfinite(m.loss_g));
            REQUIRE(std::isfinite(m.loss_c));
        });
        CHECK(seen == 1000);
    }

    TEST_CASE("train writes metrics and checkpoints") {
        TempDir dir;
        const auto catalog = make_toy_catalog({3, 2, 16, 4});
        auto config = small_config(Variant::sigan, 4);
        config.iterations = 3;
        config.checkpoint_every = 2;
        const auto result = train(config, catalog, dir.path());
        CHECK(std::filesystem::exists(dir / "checkpoint-000002.sgck"));
        CHECK_FALSE(std::filesystem::exists(dir / "checkpoint-000003.sgck"));
        std::ifstream csv(dir / "metrics.csv");
        std::string line;
        std::size_t rows = 0;
        while (std::getline(csv, line)) {
            ++rows;
            CHECK(std::count(line.begin(), line.end(), ',') == 4);
        }
        CHECK(rows == 3);
        const auto final_ck = load_checkpoint(dir / "final.sgck");
        CHECK(final_ck.iteration == 3);
        CHECK(final_ck.generator == result.state.generator);

        auto bad = config;
        bad.lr_size = 8;
        CHECK_THROWS_AS(train(bad, catalog), std::invalid_argument);
    }

    TEST_CASE("zero iterations yield the initialization") {
        TempDir dir;
        const auto catalog = make_toy_catalog({3, 2, 16, 4});
        auto config = small_config(Variant::sigan, 4);
        config.iterations = 0;
        const auto result = train(config, catalog, dir.path());
        CHECK(result.metrics.empty());
        const auto init = init_train_state(config);
        CHECK(load_checkpoint(dir / "final.sgck").generator == init.generator);
        CHECK(std::filesystem::file_size(dir / "metrics.csv") == 0);
    }
}
