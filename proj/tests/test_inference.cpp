#include <doctest.h>

#include <cmath>
#include <fstream>

#include "sglab/checkpoint.hpp"
#include "sglab/image_io.hpp"
#include "sglab/inference.hpp"
#include "test_util.hpp"

using namespace sglab;
using sglab::testing::random_tensor;
using sglab::testing::small_config;
using sglab::testing::TempDir;

namespace {

LoadedModel model_for(Variant v, int lr, std::optional<int> classes = std::nullopt, std::uint64_t seed = 1) {
    auto config = small_config(v, lr);
    config.seed = seed;
    return LoadedModel::from_checkpoint(make_checkpoint(init_train_state(config, classes)));
}

// The label a scorer sees is the constant value of the plane channel.
double plane_value(const Tensor<float>& d_input) { return d_input[3]; }

}  // namespace

TEST_SUITE("inference") {
    TEST_CASE("hallucinate maps N to 4N") {
        for (int n : {4, 8}) {
            const auto model = model_for(Variant::sigan, n);
            const auto lr = random_tensor<float>({std::size_t(n), std::size_t(n), 3}, 2);
            const auto sr = hallucinate(model, lr);
            CHECK(sr.shape() == Shape{std::size_t(4 * n), std::size_t(4 * n), 3});
            for (float v : sr.values()) {
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
            }
            CHECK(hallucinate(model, lr) == sr);
        }
        const auto diegan = model_for(Variant::diegan, 8, 3);
        CHECK(hallucinate(diegan, random_tensor<float>({8, 8, 3}, 1)).shape() == Shape{32, 32, 3});
    }

    TEST_CASE("hallucinate rejects wrong sizes and GieGAN models") {
        const auto model = model_for(Variant::sigan, 4);
        CHECK_THROWS_AS(hallucinate(model, Tensor<float>({8, 8, 3})), std::invalid_argument);
        CHECK_THROWS_AS(hallucinate(model, Tensor<float>({4, 4, 1})), std::invalid_argument);
        const auto gie = model_for(Variant::giegan, 4, 3);
        CHECK_THROWS_WITH_AS(hallucinate(gie, Tensor<float>({4, 4, 3})), doctest::Contains("variant mismatch"),
                             VariantMismatch);
        CHECK_THROWS_AS(LabelSearch{model}, VariantMismatch);
    }

    TEST_CASE("label search evaluates each label exactly once") {
        const auto model = model_for(Variant::giegan, 4, 10);
        LabelSearch search(model);
        const auto lr = random_tensor<float>({4, 4, 3}, 3);
        for (int c : {1, 10, 37}) {
            search.reset_evaluations();
            const auto r = search.run(lr, c);
            CHECK(search.evaluations() == std::uint64_t(c));
            CHECK(r.per_label_scores.size() == std::size_t(c));
            CHECK(r.sr_image.shape() == Shape{16, 16, 3});
        }
        CHECK_THROWS_AS(search.run(lr, 0), std::invalid_argument);
    }

    TEST_CASE("label search returns the planted argmax") {
        const auto model = model_for(Variant::giegan, 4, 5);
        const int c = 20;
        for (int target : {0, 7, 19}) {
            const double want = normalized_label(target, c);
            const LabelSearch search(model, [want](const Tensor<float>& x) { return -std::abs(plane_value(x) - want); });
            CHECK(search.run(random_tensor<float>({4, 4, 3}, 4), c).best_label == target);
        }
        const LabelSearch ties(model, [](const Tensor<float>&) { return 0.5; });
        CHECK(ties.run(random_tensor<float>({4, 4, 3}, 4), 6).best_label == 0);
    }

    TEST_CASE("search agrees with a serial loop and with monotone rescoring") {
        const auto model = model_for(Variant::giegan, 4, 8, 3);
        const auto lr = random_tensor<float>({4, 4, 3}, 5);
        LabelSearch search(model);
        const auto r = search.run(lr, 8);
        for (int i = 0; i < 8; ++i) CHECK(search.score_label(lr, i, 8) == r.per_label_scores[std::size_t(i)]);
        Tensor<float> sr;
        search.score_label(lr, r.best_label, 8, &sr);
        CHECK(sr == r.sr_image);

        const LabelSearch stretched(model, [&model](const Tensor<float>& x) {
            const double d = forward(model.discriminator_spec, model.discriminator, x).output[0];
            return std::exp(5.0 * d) - 3.0;
        });
        CHECK(stretched.run(lr, 8).best_label == r.best_label);

        const LabelSearch literal(model, SearchScoring::literal_lr);
        CHECK(literal.run(lr, 8).per_label_scores.size() == 8);
    }

    TEST_CASE("batch hallucination writes one image per input and a manifest") {
        TempDir in, out;
        const auto model = model_for(Variant::sigan, 4);
        std::filesystem::create_directories(in / "sub");
        write_png(in / "a.png", random_tensor<float>({4, 4, 3}, 1));
        write_png(in / "sub" / "b.png", random_tensor<float>({4, 4, 3}, 2));
        std::ofstream(in / "notes.txt") << "ignored";

        const auto m = batch_hallucinate(model, in.path(), out.path());
        REQUIRE(m.size() == 2);
        CHECK(std::filesystem::exists(out / "a.sr.png"));
        CHECK(std::filesystem::exists(out / "sub" / "b.sr.png"));
        CHECK(read_png(out / "a.sr.png").shape() == Shape{16, 16, 3});
        std::ifstream csv(out / "manifest.csv");
        std::string text((std::istreambuf_iterator<char>(csv)), {});
        CHECK(std::count(text.begin(), text.end(), '\n') == 2);

        TempDir again;
        batch_hallucinate(model, in.path(), again.path());
        CHECK(read_png(again / "a.sr.png") == read_png(out / "a.sr.png"));

        TempDir empty, out2;
        CHECK(batch_hallucinate(model, empty.path(), out2.path()).empty());
        CHECK(std::filesystem::exists(out2 / "manifest.csv"));

        std::ofstream(out / "blocker") << "file";
        CHECK_THROWS_WITH_AS(batch_hallucinate(model, in.path(), out / "blocker" / "x"),
                             doctest::Contains("not writable"), std::runtime_error);
    }

    TEST_CASE("batch hallucination runs label search for GieGAN") {
        TempDir in, out;
        const auto model = model_for(Variant::giegan, 4, 3);
        write_png(in / "a.png", random_tensor<float>({4, 4, 3}, 1));
        CHECK(batch_hallucinate(model, in / "a.png", out.path()).size() == 1);
        CHECK(std::filesystem::exists(out / "a.sr.png"));
    }
}
