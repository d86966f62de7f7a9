#include <doctest.h>

#include <cstring>
#include <fstream>

#include "sglab/checkpoint.hpp"
#include "sglab/inference.hpp"
#include "sglab/toy_faces.hpp"
#include "test_util.hpp"

using namespace sglab;
using sglab::testing::random_tensor;
using sglab::testing::small_config;
using sglab::testing::TempDir;

namespace {

Checkpoint trained(Variant v, int lr, std::optional<int> classes) {
    TrainState s = init_train_state(small_config(v, lr), classes);
    s.iteration = 17;
    return make_checkpoint(s);
}

void put_u32(std::string& bytes, std::size_t at, std::uint32_t v) { std::memcpy(bytes.data() + at, &v, 4); }

}  // namespace

TEST_SUITE("checkpoint") {
    TEST_CASE("round trip is bit exact for every variant") {
        TempDir dir;
        for (auto [v, lr, c] : {std::tuple{Variant::sigan, 4, std::optional<int>()},
                                std::tuple{Variant::giegan, 4, std::optional<int>(3)},
                                std::tuple{Variant::diegan, 8, std::optional<int>(3)}}) {
            CAPTURE(to_string(v));
            const auto ck = trained(v, lr, c);
            save_checkpoint(ck, dir / "a.sgck");
            const auto back = load_checkpoint(dir / "a.sgck");
            CHECK(back.arch == ck.arch);
            CHECK(back.iteration == 17);
            CHECK(back.config_digest == ck.config_digest);
            CHECK(back.rng_state == ck.rng_state);
            CHECK(back.generator == ck.generator);
            CHECK(back.discriminator == ck.discriminator);
            CHECK(serialize_checkpoint(back) == serialize_checkpoint(ck));
            for (const auto& e : std::filesystem::directory_iterator(dir.path()))
                CHECK(e.path().extension() != ".tmp");
        }
    }

    TEST_CASE("reloaded model hallucinates identically") {
        TempDir dir;
        const auto ck = trained(Variant::sigan, 4, std::nullopt);
        save_checkpoint(ck, dir / "m.sgck");
        const auto model = LoadedModel::load(dir / "m.sgck");
        const auto direct = LoadedModel::from_checkpoint(ck);
        const auto lr = random_tensor<float>({4, 4, 3}, 3);
        CHECK(hallucinate(model, lr) == hallucinate(direct, lr));
    }

    TEST_CASE("the stored tensor set is exactly the architecture's") {
        const auto ck = trained(Variant::giegan, 4, 2);
        auto sorted = [](std::vector<std::string> v) {
            std::sort(v.begin(), v.end());
            return v;
        };
        CHECK(sorted(ck.generator.names()) == sorted(ck.arch.generator().parameter_names()));
        CHECK(sorted(ck.discriminator.names()) == sorted(ck.arch.discriminator().parameter_names()));
        Checkpoint extra = ck;
        extra.generator.set("gen.bogus", Tensor<float>({1}));
        CHECK_THROWS_AS(parse_checkpoint(serialize_checkpoint(extra)), CheckpointError);
        Checkpoint reshaped = ck;
        reshaped.generator.set("gen.out.bias", Tensor<float>({7}));
        CHECK_THROWS_AS(parse_checkpoint(serialize_checkpoint(reshaped)), CheckpointError);
    }

    TEST_CASE("damaged files are rejected") {
        const std::string good = serialize_checkpoint(trained(Variant::sigan, 4, std::nullopt));
        CHECK_NOTHROW(parse_checkpoint(good));
        for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{20}, good.size() / 2, good.size() - 1}) {
            CAPTURE(cut);
            CHECK_THROWS_WITH_AS(parse_checkpoint(std::string_view(good).substr(0, cut)),
                                 doctest::Contains("corrupt checkpoint"), CheckpointError);
        }
        std::string magic = good;
        magic[0] = 'X';
        CHECK_THROWS_AS(parse_checkpoint(magic), CheckpointError);
        std::string version = good;
        put_u32(version, 4, kCheckpointVersion + 1);
        CHECK_THROWS_AS(parse_checkpoint(version), CheckpointError);
        CHECK_THROWS_AS(parse_checkpoint(good + "x"), CheckpointError);
        CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.sgck"), std::runtime_error);
    }

    TEST_CASE("replaying a run reproduces the checkpoint bytes") {
        TempDir a, b;
        const auto catalog = make_toy_catalog({3, 2, 16, 9});
        auto config = small_config(Variant::sigan, 4);
        config.iterations = 4;
        train(config, catalog, a.path());
        train(config, catalog, b.path());
        auto bytes = [](const std::filesystem::path& p) {
            std::ifstream in(p, std::ios::binary);
            return std::string(std::istreambuf_iterator<char>(in), {});
        };
        CHECK(bytes(a / "final.sgck") == bytes(b / "final.sgck"));
        const auto ck = load_checkpoint(a / "final.sgck");
        CHECK(ck.config_digest == config.digest());
    }
}
