#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sglab/checkpoint.hpp"

namespace sglab {

/// A checkpoint's networks, ready for inference.
struct LoadedModel {
    Architecture arch;
    ModelSpec generator_spec;
    ModelSpec discriminator_spec;
    ParameterSet<float> generator;
    ParameterSet<float> discriminator;
    std::uint64_t config_digest = 0;

    static LoadedModel from_checkpoint(const Checkpoint& checkpoint);
    static LoadedModel load(const std::filesystem::path& checkpoint_path);
};

/// The checkpoint's variant cannot serve the requested operation.
class VariantMismatch : public std::invalid_argument {
public:
    explicit VariantMismatch(const std::string& detail) : std::invalid_argument("variant mismatch: " + detail) {}
};

/// N×N×3 -> 4N×4N×3 with frozen normalization statistics. sigan and diegan only.
Tensor<float> hallucinate(const LoadedModel& model, const Tensor<float>& lr_image);

struct SearchResult {
    int best_label = 0;
    double confidence = 0;
    std::vector<double> per_label_scores;
    Tensor<float> sr_image;  // first three channels for best_label
};

enum class SearchScoring {
    hallucinated,  // score D(G(x | y), y): the generated face under each label
    literal_lr,    // score D(upsample(x), y): the LR input itself, nearest-upsampled
};

/// Exhaustive GieGAN label search: one generator and one discriminator
/// evaluation per candidate label, argmax of the discriminator score, ties to
/// the lowest label.
class LabelSearch {
public:
    /// Scores a [1, 4N, 4N, 4] discriminator input (RGB + label plane).
    using Scorer = std::function<double(const Tensor<float>&)>;

    explicit LabelSearch(const LoadedModel& model, SearchScoring scoring = SearchScoring::hallucinated);
    LabelSearch(const LoadedModel& model, Scorer scorer, SearchScoring scoring = SearchScoring::hallucinated);

    /// Labels are normalized as id / max(C-1, 1) for the given C.
    SearchResult run(const Tensor<float>& lr_image, int num_identities) const;

    /// Evaluates a single candidate label (counts as one evaluation).
    double score_label(const Tensor<float>& lr_image, int label, int num_identities,
                       Tensor<float>* sr_out = nullptr) const;

    std::uint64_t evaluations() const noexcept { return evaluations_.load(); }
    void reset_evaluations() noexcept { evaluations_ = 0; }

private:
    const LoadedModel& model_;
    Scorer scorer_;
    SearchScoring scoring_;
    mutable std::atomic<std::uint64_t> evaluations_{0};
};

struct ManifestEntry {
    std::string input_path;
    std::string output_path;
};

/// Hallucinates one PNG or every PNG below a directory into
/// out_dir/<relative path without extension>.sr.png and writes
/// out_dir/manifest.csv. GieGAN checkpoints go through label search.
/// Fails before any work if out_dir is not writable.
std::vector<ManifestEntry> batch_hallucinate(const LoadedModel& model, const std::filesystem::path& input,
                                             const std::filesystem::path& out_dir);

}  // namespace sglab
