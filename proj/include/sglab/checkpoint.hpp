#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "sglab/architecture.hpp"
#include "sglab/training.hpp"

namespace sglab {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Bad magic, unsupported version, truncation or a tensor table that does not
/// match the architecture. The message always starts with "corrupt checkpoint".
class CheckpointError : public std::runtime_error {
public:
    explicit CheckpointError(const std::string& detail) : std::runtime_error("corrupt checkpoint: " + detail) {}
};

struct Checkpoint {
    Architecture arch;
    std::uint64_t iteration = 0;
    std::uint64_t config_digest = 0;
    std::string rng_state;  // textual std::mt19937_64 state
    ParameterSet<float> generator;
    ParameterSet<float> discriminator;
};

Checkpoint make_checkpoint(const TrainState& state);

/// Layout (little-endian): "SGCK", u32 version, u32 variant, u64 iteration,
/// u64 config digest, u32 + rng text, u32 + architecture text, u32 tensor
/// count, then per tensor (sorted by name): u32 name length, name, u32 rank,
/// u32 dims, u8 dtype (1 = float32), raw data.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view bytes);

/// Writes to a temporary file in the same directory and renames it into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sglab
