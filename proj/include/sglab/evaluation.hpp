#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sglab/data.hpp"
#include "sglab/inference.hpp"

namespace sglab {

/// Perceptual-head feature of an N×N×3 image (4N×4N×3 inputs are block-averaged
/// first). GieGAN models see a zero label plane.
std::vector<float> embed(const LoadedModel& model, const Tensor<float>& image);

struct Embedded {
    std::vector<float> vector;
    int identity = 0;
};

double l1_distance(std::span<const float> a, std::span<const float> b);

/// Fraction of probes whose identity is among the k closest gallery
/// identities, where an identity's distance is its nearest gallery vector (L1).
std::map<int, double> identify_topk(const std::vector<Embedded>& gallery, const std::vector<Embedded>& probes,
                                    const std::vector<int>& ks);

/// P(genuine score > impostor score) + P(tie) / 2 via midranks. labels: 1 = genuine.
double verification_auc(std::span<const double> scores, std::span<const int> labels);

struct Fidelity {
    double mean_l1 = 0;
    double psnr_db = 0;
};

inline constexpr double kPsnrCap = 99.0;

Fidelity fidelity_metrics(const Tensor<float>& sr, const Tensor<float>& hr);

struct MethodRow {
    std::string method;
    double top1 = 0, top5 = 0, top10 = 0, auc = 0;
};

struct EvalReport {
    double top1 = 0, top5 = 0, top10 = 0;
    double auc = 0;
    double l1 = 0;
    double psnr = 0;
    std::size_t gallery_size = 0;
    std::size_t probe_count = 0;
    std::size_t pair_count = 0;
    std::uint64_t config_digest = 0;
    std::vector<MethodRow> table;
};

/// key=value lines (six decimals), a blank line, then `method,top1,top5,top10,auc`
/// and one row per method.
std::string format_report(const EvalReport& report);
EvalReport parse_report(std::string_view text);
void emit_report(const EvalReport& report, const std::filesystem::path& path);

struct VerificationPair {
    std::size_t a = 0, b = 0;  // indices into the probe list
    int label = 0;
};

struct EvalOptions {
    double gallery_fraction = 0.5;   // records per identity that become probes
    std::size_t max_pairs = 2000;
    std::uint64_t seed = 1;
    std::optional<std::filesystem::path> pairs_file;  // lines: path1,path2,label
};

/// Splits the catalog into gallery and probes, then reports identification
/// rates, verification AUC over probe pairs (or the pairs file) and the
/// fidelity of hallucinated probes.
EvalReport evaluate(const LoadedModel& model, const IdentityCatalog& data, const EvalOptions& options = {});

}  // namespace sglab
