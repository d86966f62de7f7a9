#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "sglab/nets.hpp"
#include "sglab/tensor.hpp"

namespace sglab {

struct FaceRecord {
    Tensor<float> image;  // hr×hr×3, values in [0,1]
    int identity = 0;
    std::string source_id;
};

struct IdentityCatalog {
    std::vector<FaceRecord> records;
    int num_identities = 0;
    int hr_size = 0;
    std::vector<std::string> identity_names;  // index = identity

    /// Record indices grouped by identity.
    std::vector<std::vector<std::size_t>> by_identity() const;

    /// Full catalog invariants: C >= 2, contiguous identities, >= 2 records each,
    /// square images of hr_size divisible by the upscale factor, values in [0,1].
    void validate() const;
};

struct PairBatch {
    Tensor<float> lr1, lr2;  // [b, N, N, 3]
    Tensor<float> hr1, hr2;  // [b, 4N, 4N, 3]
    std::vector<int> y;      // 1 = genuine
    std::vector<int> id1, id2;
    std::vector<std::size_t> record1, record2;  // catalog indices
};

struct LabeledBatch {
    Tensor<float> lr, hr;
    std::vector<int> labels;
    std::vector<std::size_t> records;
};

/// Loads root/<identity>/<image>.png. Identities are numbered in lexicographic
/// directory order after dropping folders with fewer than two readable images.
IdentityCatalog ingest_dataset(const std::filesystem::path& root, int hr_size);

/// Block-mean downsampling of an H×W×C image or a [b, H, W, C] batch.
template <typename T>
Tensor<T> synthesize_lr(const Tensor<T>& hr, int factor = kUpscaleFactor);

/// Exactly round(b * genuine_fraction) genuine pairs at random positions.
PairBatch sample_pair_batch(const IdentityCatalog& catalog, std::size_t b, double genuine_fraction, Rng& rng);

/// b records drawn uniformly with their identity labels.
LabeledBatch sample_labeled_batch(const IdentityCatalog& catalog, std::size_t b, Rng& rng);

/// Per-identity record split; each identity keeps at least one record on the
/// training side.
std::pair<IdentityCatalog, IdentityCatalog> split_catalog(const IdentityCatalog& catalog, double holdout_fraction,
                                                          Rng& rng);

/// One line per record: source_id,identity,HxWxC
void write_manifest(std::ostream& out, const IdentityCatalog& catalog);

}  // namespace sglab
