#pragma once

#include <cstdint>
#include <filesystem>

#include "sglab/data.hpp"

namespace sglab {

/// Procedural face-like images: every identity has its own skin, hair and
/// background colors and facial geometry; each image adds small shifts,
/// lighting changes and pixel noise.
struct ToyFaceOptions {
    int identities = 8;
    int images_per_identity = 4;
    int size = 32;
    std::uint64_t seed = 7;
};

/// Values are quantized to 8 bits so the catalog matches what ingest_dataset
/// reads back from write_toy_dataset.
IdentityCatalog make_toy_catalog(const ToyFaceOptions& options);

/// Writes root/id_XXX/img_YYY.png.
void write_toy_dataset(const std::filesystem::path& root, const ToyFaceOptions& options);

}  // namespace sglab
