#include "sglab/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "sglab/image_io.hpp"

namespace sglab {

namespace fs = std::filesystem;

std::vector<std::vector<std::size_t>> IdentityCatalog::by_identity() const {
    std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(num_identities));
    for (std::size_t i = 0; i < records.size(); ++i) {
        const int id = records[i].identity;
        if (id < 0 || id >= num_identities)
            throw std::invalid_argument("record " + records[i].source_id + " has identity " + std::to_string(id) +
                                        " outside [0, " + std::to_string(num_identities) + ")");
        groups[static_cast<std::size_t>(id)].push_back(i);
    }
    return groups;
}

void IdentityCatalog::validate() const {
    if (num_identities < 2) throw std::invalid_argument("catalog needs at least 2 identities");
    if (hr_size <= 0 || hr_size % kUpscaleFactor != 0)
        throw std::invalid_argument("hr_size must be a positive multiple of " + std::to_string(kUpscaleFactor));
    const auto groups = by_identity();
    for (std::size_t id = 0; id < groups.size(); ++id)
        if (groups[id].size() < 2)
            throw std::invalid_argument("identity " + std::to_string(id) + " has fewer than 2 records");
    const auto side = static_cast<std::size_t>(hr_size);
    for (const auto& r : records) {
        if (r.image.shape() != Shape{side, side, 3})
            throw std::invalid_argument("record " + r.source_id + " has shape " + shape_string(r.image.shape()));
        for (float v : r.image.values())
            if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("record " + r.source_id + " leaves [0,1]");
    }
}

IdentityCatalog ingest_dataset(const fs::path& root, int hr_size) {
    if (hr_size <= 0 || hr_size % kUpscaleFactor != 0)
        throw std::invalid_argument("hr_size must be a positive multiple of " + std::to_string(kUpscaleFactor));
    if (!fs::is_directory(root)) throw std::runtime_error("data root " + root.string() + " is not a directory");

    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw std::runtime_error("no identities under " + root.string());

    IdentityCatalog catalog;
    catalog.hr_size = hr_size;
    for (const auto& dir : dirs) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file()) files.push_back(entry.path());
        std::sort(files.begin(), files.end());

        std::vector<FaceRecord> usable;
        const std::string name = dir.filename().string();
        for (const auto& file : files) {
            try {
                Tensor<float> img = read_png(file);
                usable.push_back({resize_square(center_crop_square(img), static_cast<std::size_t>(hr_size)),
                                  catalog.num_identities, name + "/" + file.filename().string()});
            } catch (const std::exception& e) {
                spdlog::warn("skipping {}: {}", file.string(), e.what());
            }
        }
        if (usable.size() < 2) {
            spdlog::warn("excluding identity '{}': {} usable image(s), need 2", name, usable.size());
            continue;
        }
        for (auto& r : usable) catalog.records.push_back(std::move(r));
        catalog.identity_names.push_back(name);
        ++catalog.num_identities;
    }
    if (catalog.num_identities == 0) throw std::runtime_error("no identities with at least 2 usable images");
    if (catalog.num_identities < 2)
        throw std::runtime_error("need at least 2 identities, found " + std::to_string(catalog.num_identities));
    return catalog;
}

template <typename T>
Tensor<T> synthesize_lr(const Tensor<T>& hr, int factor) {
    if (factor < 1) throw std::invalid_argument("downscale factor must be >= 1");
    const bool batched = hr.rank() == 4;
    if (!batched && hr.rank() != 3)
        throw std::invalid_argument("synthesize_lr expects HWC or NHWC, got " + shape_string(hr.shape()));
    const std::size_t b = batched ? hr.dim(0) : 1;
    const std::size_t h = hr.dim(batched ? 1 : 0), w = hr.dim(batched ? 2 : 1), c = hr.dim(batched ? 3 : 2);
    const auto f = static_cast<std::size_t>(factor);
    if (h % f != 0 || w % f != 0)
        throw std::invalid_argument("image " + std::to_string(h) + "x" + std::to_string(w) +
                                    " is not divisible by " + std::to_string(factor));
    const std::size_t oh = h / f, ow = w / f;
    Tensor<T> out(batched ? Shape{b, oh, ow, c} : Shape{oh, ow, c});
    const double inv = 1.0 / static_cast<double>(f * f);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (std::size_t dy = 0; dy < f; ++dy)
                        for (std::size_t dx = 0; dx < f; ++dx)
                            acc += hr[((n * h + oy * f + dy) * w + ox * f + dx) * c + ch];
                    out[((n * oh + oy) * ow + ox) * c + ch] = static_cast<T>(acc * inv);
                }
    return out;
}

template Tensor<float> synthesize_lr(const Tensor<float>&, int);
template Tensor<double> synthesize_lr(const Tensor<double>&, int);

namespace {

std::size_t pick(std::size_t n, Rng& rng) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::vector<std::size_t> populated(const std::vector<std::vector<std::size_t>>& groups) {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < groups.size(); ++i)
        if (!groups[i].empty()) ids.push_back(i);
    return ids;
}

Tensor<float> gather(const IdentityCatalog& catalog, const std::vector<std::size_t>& indices) {
    std::vector<Tensor<float>> images;
    images.reserve(indices.size());
    for (auto i : indices) images.push_back(catalog.records[i].image);
    return stack(images);
}

}  // namespace

PairBatch sample_pair_batch(const IdentityCatalog& catalog, std::size_t b, double genuine_fraction, Rng& rng) {
    if (b == 0) throw std::invalid_argument("batch size must be >= 1");
    if (!(genuine_fraction >= 0.0 && genuine_fraction <= 1.0))
        throw std::invalid_argument("genuine_fraction must lie in [0,1]");
    const auto groups = catalog.by_identity();
    const auto ids = populated(groups);
    const auto genuine = static_cast<std::size_t>(std::lround(static_cast<double>(b) * genuine_fraction));
    if (genuine < b && ids.size() < 2) throw std::invalid_argument("impostor pairs need at least 2 identities");
    if (ids.empty()) throw std::invalid_argument("catalog has no records");

    PairBatch batch;
    batch.y.assign(b, 0);
    std::fill_n(batch.y.begin(), genuine, 1);
    std::shuffle(batch.y.begin(), batch.y.end(), rng);

    for (std::size_t i = 0; i < b; ++i) {
        std::size_t r1, r2;
        if (batch.y[i]) {
            const auto& pool = groups[ids[pick(ids.size(), rng)]];
            if (pool.size() >= 2) {
                const std::size_t a = pick(pool.size(), rng);
                std::size_t c = pick(pool.size() - 1, rng);
                if (c >= a) ++c;
                r1 = pool[a];
                r2 = pool[c];
            } else {
                r1 = r2 = pool.front();
            }
        } else {
            const std::size_t a = pick(ids.size(), rng);
            std::size_t c = pick(ids.size() - 1, rng);
            if (c >= a) ++c;
            const auto& p1 = groups[ids[a]];
            const auto& p2 = groups[ids[c]];
            r1 = p1[pick(p1.size(), rng)];
            r2 = p2[pick(p2.size(), rng)];
        }
        batch.record1.push_back(r1);
        batch.record2.push_back(r2);
        batch.id1.push_back(catalog.records[r1].identity);
        batch.id2.push_back(catalog.records[r2].identity);
    }
    batch.hr1 = gather(catalog, batch.record1);
    batch.hr2 = gather(catalog, batch.record2);
    batch.lr1 = synthesize_lr(batch.hr1);
    batch.lr2 = synthesize_lr(batch.hr2);
    return batch;
}

LabeledBatch sample_labeled_batch(const IdentityCatalog& catalog, std::size_t b, Rng& rng) {
    if (b == 0) throw std::invalid_argument("batch size must be >= 1");
    if (catalog.records.empty()) throw std::invalid_argument("catalog has no records");
    LabeledBatch batch;
    for (std::size_t i = 0; i < b; ++i) {
        const std::size_t r = pick(catalog.records.size(), rng);
        batch.records.push_back(r);
        batch.labels.push_back(catalog.records[r].identity);
    }
    batch.hr = gather(catalog, batch.records);
    batch.lr = synthesize_lr(batch.hr);
    return batch;
}

std::pair<IdentityCatalog, IdentityCatalog> split_catalog(const IdentityCatalog& catalog, double holdout_fraction,
                                                          Rng& rng) {
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
        throw std::invalid_argument("holdout_fraction must lie in (0,1)");
    IdentityCatalog train, test;
    for (auto* part : {&train, &test}) {
        part->num_identities = catalog.num_identities;
        part->hr_size = catalog.hr_size;
        part->identity_names = catalog.identity_names;
    }
    std::vector<bool> held(catalog.records.size(), false);
    for (auto pool : catalog.by_identity()) {
        const std::size_t n = pool.size();
        if (n < 2) continue;  // a lone record stays on the training side
        auto n_test = static_cast<std::size_t>(std::lround(static_cast<double>(n) * holdout_fraction));
        n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
        std::shuffle(pool.begin(), pool.end(), rng);
        for (std::size_t i = 0; i < n_test; ++i) held[pool[i]] = true;
    }
    for (std::size_t i = 0; i < catalog.records.size(); ++i)
        (held[i] ? test : train).records.push_back(catalog.records[i]);
    return {std::move(train), std::move(test)};
}

void write_manifest(std::ostream& out, const IdentityCatalog& catalog) {
    for (const auto& r : catalog.records)
        out << r.source_id << ',' << r.identity << ',' << shape_string(r.image.shape()) << '\n';
}

}  // namespace sglab
