#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "sglab/data.hpp"
#include "sglab/image_io.hpp"
#include "sglab/toy_faces.hpp"
#include "test_util.hpp"

using namespace sglab;
using sglab::testing::random_tensor;
using sglab::testing::TempDir;

namespace {

Tensor<float> quantized(Shape shape, std::uint64_t seed) {
    auto t = random_tensor<float>(std::move(shape), seed);
    for (auto& v : t.values()) v = std::round(v * 255.0f) / 255.0f;
    return t;
}

// Independent block mean over an H×W×C image.
Tensor<double> block_mean(const Tensor<double>& hr, std::size_t f) {
    const std::size_t h = hr.dim(0) / f, w = hr.dim(1) / f, c = hr.dim(2);
    Tensor<double> out({h, w, c});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t k = 0; k < c; ++k) {
                double s = 0;
                for (std::size_t dy = 0; dy < f; ++dy)
                    for (std::size_t dx = 0; dx < f; ++dx) s += hr[((y * f + dy) * hr.dim(1) + x * f + dx) * c + k];
                out[(y * w + x) * c + k] = s / double(f * f);
            }
    return out;
}

IdentityCatalog toy(int ids, int per, int size = 16) { return make_toy_catalog({ids, per, size, 5}); }

}  // namespace

TEST_SUITE("data") {
    TEST_CASE("png round trip within one quantization step") {
        TempDir dir;
        const auto img = quantized({5, 7, 3}, 1);
        write_png(dir / "a.png", img);
        const auto back = read_png(dir / "a.png");
        REQUIRE(back.shape() == img.shape());
        for (std::size_t i = 0; i < img.size(); ++i) CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-6));
        CHECK_THROWS_AS(read_png(dir / "missing.png"), std::runtime_error);
    }

    TEST_CASE("resize averages blocks when shrinking and keeps constants when enlarging") {
        const auto img = random_tensor<float>({8, 8, 3}, 2);
        const auto small = resize_square(img, 4);
        const auto oracle = block_mean(img.cast<double>(), 2);
        for (std::size_t i = 0; i < small.size(); ++i) CHECK(small[i] == doctest::Approx(oracle[i]).epsilon(1e-5));
        const Tensor<float> flat({3, 3, 3}, 0.25f);
        const auto big = resize_square(flat, 10);
        for (float v : big.values()) CHECK(v == doctest::Approx(0.25f));
        CHECK(center_crop_square(Tensor<float>({6, 10, 3})).shape() == Shape{6, 6, 3});
    }

    TEST_CASE("ingest numbers identities lexicographically and skips bad inputs") {
        TempDir dir;
        for (const char* id : {"bob", "alice", "carol"}) std::filesystem::create_directories(dir / id);
        write_png(dir / "bob" / "1.png", quantized({40, 30, 3}, 3));
        write_png(dir / "bob" / "2.png", quantized({16, 16, 3}, 4));
        write_png(dir / "alice" / "x.png", quantized({16, 16, 3}, 5));
        write_png(dir / "alice" / "y.png", quantized({16, 16, 3}, 6));
        std::ofstream(dir / "alice" / "broken.png") << "not a png";
        write_png(dir / "carol" / "only.png", quantized({16, 16, 3}, 7));

        const auto cat = ingest_dataset(dir.path(), 16);
        CHECK(cat.num_identities == 2);
        CHECK(cat.identity_names == std::vector<std::string>{"alice", "bob"});
        CHECK(cat.records.size() == 4);
        for (const auto& r : cat.records) CHECK(r.image.shape() == Shape{16, 16, 3});
        CHECK_NOTHROW(cat.validate());
        const auto groups = cat.by_identity();
        CHECK(groups[0].size() == 2);
        CHECK(groups[1].size() == 2);
        std::ostringstream manifest;
        write_manifest(manifest, cat);
        const std::string text = manifest.str();
        CHECK(std::count(text.begin(), text.end(), '\n') == 4);
    }

    TEST_CASE("ingest failures") {
        TempDir empty;
        CHECK_THROWS_WITH_AS(ingest_dataset(empty.path(), 16), doctest::Contains("no identities"), std::runtime_error);
        TempDir one;
        std::filesystem::create_directories(one / "a");
        write_png(one / "a" / "1.png", quantized({8, 8, 3}, 1));
        write_png(one / "a" / "2.png", quantized({8, 8, 3}, 2));
        CHECK_THROWS_WITH_AS(ingest_dataset(one.path(), 16), doctest::Contains("at least 2 identities"),
                             std::runtime_error);
        CHECK_THROWS_AS(ingest_dataset(one.path(), 18), std::invalid_argument);
    }

    TEST_CASE("synthesize_lr is a block mean") {
        const Tensor<float> flat({8, 8, 3}, 0.4f);
        const auto flat_lr = synthesize_lr(flat);
        for (float v : flat_lr.values()) CHECK(v == doctest::Approx(0.4f));

        Tensor<float> checker({8, 8, 1});
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 8; ++x) checker[y * 8 + x] = float((x + y) % 2);
        const auto checker_lr = synthesize_lr(checker);
        for (float v : checker_lr.values()) CHECK(v == 0.5f);

        const auto hr = random_tensor<double>({16, 12, 3}, 9);
        const auto lr = synthesize_lr(hr);
        const auto oracle = block_mean(hr, 4);
        REQUIRE(lr.shape() == oracle.shape());
        for (std::size_t i = 0; i < lr.size(); ++i) CHECK(lr[i] == doctest::Approx(oracle[i]).epsilon(1e-12));

        // Replicating an LR image 4x and downsampling recovers it.
        const auto small = random_tensor<double>({3, 3, 2}, 10);
        Tensor<double> up({12, 12, 2});
        for (std::size_t y = 0; y < 12; ++y)
            for (std::size_t x = 0; x < 12; ++x)
                for (std::size_t c = 0; c < 2; ++c) up[(y * 12 + x) * 2 + c] = small[((y / 4) * 3 + x / 4) * 2 + c];
        const auto down = synthesize_lr(up);
        REQUIRE(down.shape() == small.shape());
        for (std::size_t i = 0; i < small.size(); ++i) CHECK(down[i] == doctest::Approx(small[i]).epsilon(1e-15));

        const auto batch = random_tensor<float>({2, 8, 8, 3}, 11);
        const auto lb = synthesize_lr(batch);
        CHECK(lb.shape() == Shape{2, 2, 2, 3});
        CHECK(batch_item(lb, 1) == synthesize_lr(batch_item(batch, 1)));
        CHECK_THROWS_AS(synthesize_lr(Tensor<float>({10, 8, 3})), std::invalid_argument);
    }

    TEST_CASE("pair batches honor the genuine fraction and pairing rules") {
        const auto cat = toy(4, 3);
        Rng rng(1);
        for (double f : {0.0, 0.25, 0.5, 1.0}) {
            const auto b = sample_pair_batch(cat, 8, f, rng);
            CHECK(std::count(b.y.begin(), b.y.end(), 1) == std::lround(8 * f));
            CHECK(b.lr1.shape() == Shape{8, 4, 4, 3});
            CHECK(b.hr2.shape() == Shape{8, 16, 16, 3});
            for (std::size_t i = 0; i < 8; ++i) {
                CHECK(cat.records[b.record1[i]].identity == b.id1[i]);
                if (b.y[i]) {
                    CHECK(b.id1[i] == b.id2[i]);
                    CHECK(b.record1[i] != b.record2[i]);
                } else {
                    CHECK(b.id1[i] != b.id2[i]);
                }
                CHECK(batch_item(b.hr1, i) == cat.records[b.record1[i]].image);
            }
            CHECK(b.lr2 == synthesize_lr(b.hr2));
        }
        Rng a(9), c(9);
        const auto x = sample_pair_batch(cat, 8, 0.5, a);
        const auto y = sample_pair_batch(cat, 8, 0.5, c);
        CHECK(x.record1 == y.record1);
        CHECK(x.record2 == y.record2);
        CHECK(x.y == y.y);
        CHECK_THROWS_AS(sample_pair_batch(cat, 8, 1.5, a), std::invalid_argument);
    }

    TEST_CASE("labeled batches carry record identities") {
        const auto cat = toy(3, 2);
        Rng rng(2);
        const auto b = sample_labeled_batch(cat, 5, rng);
        REQUIRE(b.labels.size() == 5);
        for (std::size_t i = 0; i < 5; ++i) CHECK(cat.records[b.records[i]].identity == b.labels[i]);
        CHECK(b.lr == synthesize_lr(b.hr));
    }

    TEST_CASE("split keeps every identity on the training side") {
        const auto cat = toy(3, 10);
        Rng a(4), b(4);
        const auto [train, test] = split_catalog(cat, 0.2, a);
        CHECK(train.records.size() == 24);
        CHECK(test.records.size() == 6);
        std::set<std::string> tr, te;
        for (const auto& r : train.records) tr.insert(r.source_id);
        for (const auto& r : test.records) te.insert(r.source_id);
        for (const auto& s : te) CHECK(tr.count(s) == 0);
        CHECK(tr.size() + te.size() == 30);
        const auto again = split_catalog(cat, 0.2, b);
        CHECK(again.second.records.size() == 6);
        for (std::size_t i = 0; i < 6; ++i) CHECK(again.second.records[i].source_id == test.records[i].source_id);

        const auto pairs = toy(2, 2);
        Rng c(1);
        const auto [tr2, te2] = split_catalog(pairs, 0.9, c);
        CHECK(tr2.records.size() == 2);
        CHECK(te2.records.size() == 2);
        CHECK_THROWS_AS(split_catalog(cat, 1.0, c), std::invalid_argument);
    }

    TEST_CASE("toy dataset on disk matches the in-memory catalog") {
        TempDir dir;
        const ToyFaceOptions opt{3, 2, 16, 8};
        write_toy_dataset(dir.path(), opt);
        const auto disk = ingest_dataset(dir.path(), 16);
        const auto mem = make_toy_catalog(opt);
        REQUIRE(disk.records.size() == mem.records.size());
        for (std::size_t i = 0; i < mem.records.size(); ++i) {
            CHECK(disk.records[i].identity == mem.records[i].identity);
            for (std::size_t k = 0; k < mem.records[i].image.size(); ++k)
                REQUIRE(disk.records[i].image[k] == doctest::Approx(mem.records[i].image[k]).epsilon(1e-6));
        }
    }
}
