#include "sglab/inference.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>

#include "sglab/image_io.hpp"
#include "sglab/parallel.hpp"

namespace sglab {

namespace fs = std::filesystem;

LoadedModel LoadedModel::from_checkpoint(const Checkpoint& c) {
    LoadedModel m{c.arch, c.arch.generator(), c.arch.discriminator(), c.generator, c.discriminator, c.config_digest};
    return m;
}

LoadedModel LoadedModel::load(const fs::path& path) { return from_checkpoint(load_checkpoint(path)); }

namespace {

void check_lr(const LoadedModel& model, const Tensor<float>& lr) {
    const auto n = static_cast<std::size_t>(model.arch.lr_size);
    if (lr.shape() != Shape{n, n, 3})
        throw std::invalid_argument("input is " + shape_string(lr.shape()) + ", checkpoint expects " +
                                    shape_string({n, n, 3}));
}

Tensor<float> as_batch(const Tensor<float>& image) {
    Shape s = image.shape();
    s.insert(s.begin(), 1);
    return image.reshaped(s);
}

Tensor<float> constant_plane(std::size_t size, float value) { return Tensor<float>({1, size, size, 1}, value); }

Tensor<float> nearest_up(const Tensor<float>& x, std::size_t factor) {
    const std::size_t h = x.dim(1), w = x.dim(2), c = x.dim(3);
    Tensor<float> out({1, h * factor, w * factor, c});
    for (std::size_t y = 0; y < h * factor; ++y)
        for (std::size_t xx = 0; xx < w * factor; ++xx)
            for (std::size_t ch = 0; ch < c; ++ch) out(0, y, xx, ch) = x(0, y / factor, xx / factor, ch);
    return out;
}

}  // namespace

Tensor<float> hallucinate(const LoadedModel& model, const Tensor<float>& lr_image) {
    if (model.arch.variant == Variant::giegan)
        throw VariantMismatch("hallucinate needs a sigan or diegan checkpoint; use label search for giegan");
    check_lr(model, lr_image);
    auto out = generator_forward(model.generator_spec, model.generator, as_batch(lr_image), Mode::inference);
    return batch_item(out.sr, 0);
}

LabelSearch::LabelSearch(const LoadedModel& model, SearchScoring scoring)
    : LabelSearch(model, Scorer{}, scoring) {}

LabelSearch::LabelSearch(const LoadedModel& model, Scorer scorer, SearchScoring scoring)
    : model_(model), scorer_(std::move(scorer)), scoring_(scoring) {
    if (model.arch.variant != Variant::giegan)
        throw VariantMismatch("label search needs a giegan checkpoint, got " + std::string(to_string(model.arch.variant)));
    if (!scorer_)
        scorer_ = [&m = model_](const Tensor<float>& input) {
            return static_cast<double>(
                forward(m.discriminator_spec, m.discriminator, input, {Mode::inference, false}).output[0]);
        };
}

double LabelSearch::score_label(const Tensor<float>& lr_image, int label, int num_identities,
                                Tensor<float>* sr_out) const {
    check_lr(model_, lr_image);
    const auto n = static_cast<std::size_t>(model_.arch.lr_size);
    const auto value = static_cast<float>(normalized_label(label, num_identities));
    const Tensor<float> lr = as_batch(lr_image);
    const Tensor<float> sr4 =
        forward(model_.generator_spec, model_.generator, concat_channels(lr, constant_plane(n, value)),
                {Mode::inference, false})
            .output;
    const Tensor<float> rgb = scoring_ == SearchScoring::hallucinated ? slice_channels(sr4, 0, 3)
                                                                      : nearest_up(lr, kUpscaleFactor);
    const double score = scorer_(concat_channels(rgb, constant_plane(n * kUpscaleFactor, value)));
    ++evaluations_;
    if (sr_out) *sr_out = batch_item(slice_channels(sr4, 0, 3), 0);
    return score;
}

SearchResult LabelSearch::run(const Tensor<float>& lr_image, int num_identities) const {
    if (num_identities < 1) throw std::invalid_argument("label search needs at least one identity");
    check_lr(model_, lr_image);
    const auto c = static_cast<std::size_t>(num_identities);
    SearchResult result;
    result.per_label_scores.assign(c, 0.0);
    std::vector<Tensor<float>> images(c);
    parallel_for(c, [&](std::size_t i) {
        result.per_label_scores[i] = score_label(lr_image, static_cast<int>(i), num_identities, &images[i]);
    });
    const auto best = std::max_element(result.per_label_scores.begin(), result.per_label_scores.end());
    result.best_label = static_cast<int>(best - result.per_label_scores.begin());
    result.confidence = *best;
    result.sr_image = std::move(images[static_cast<std::size_t>(result.best_label)]);
    return result;
}

std::vector<ManifestEntry> batch_hallucinate(const LoadedModel& model, const fs::path& input, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    {
        const fs::path probe = out_dir / ".write-probe";
        std::ofstream f(probe);
        if (ec || !f) throw std::runtime_error("output directory " + out_dir.string() + " is not writable");
        f.close();
        fs::remove(probe, ec);
    }

    std::vector<fs::path> files;
    fs::path base;
    if (fs::is_directory(input)) {
        base = input;
        for (const auto& e : fs::recursive_directory_iterator(input))
            if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
        std::sort(files.begin(), files.end());
    } else if (fs::is_regular_file(input)) {
        base = input.parent_path();
        files.push_back(input);
    } else {
        throw std::runtime_error("input " + input.string() + " does not exist");
    }

    std::vector<ManifestEntry> manifest;
    std::unique_ptr<LabelSearch> search;
    if (model.arch.variant == Variant::giegan) search = std::make_unique<LabelSearch>(model);
    for (const auto& file : files) {
        const Tensor<float> lr = read_png(file);
        Tensor<float> sr;
        if (search) {
            const auto r = search->run(lr, *model.arch.num_identities);
            spdlog::info("{}: best label {} (score {:.6f})", file.string(), r.best_label, r.confidence);
            sr = r.sr_image;
        } else {
            sr = hallucinate(model, lr);
        }
        fs::path rel = fs::relative(file, base);
        rel.replace_extension();
        fs::path out = out_dir / rel;
        out += ".sr.png";
        fs::create_directories(out.parent_path());
        write_png(out, sr);
        manifest.push_back({file.string(), out.string()});
    }

    std::ofstream csv(out_dir / "manifest.csv", std::ios::trunc);
    for (const auto& e : manifest) csv << e.input_path << ',' << e.output_path << '\n';
    if (!csv) throw std::runtime_error("cannot write manifest in " + out_dir.string());
    return manifest;
}

}  // namespace sglab
