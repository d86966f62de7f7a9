#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sglab/training.hpp"

namespace sglab {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Strict key=value parser: '#' starts a comment, blank lines are ignored,
/// unknown or repeated keys and malformed values are errors naming the key and
/// line. Keys left out keep their defaults and are listed in `defaulted`.
TrainConfig parse_config_text(std::string_view text, std::vector<std::string>* defaulted = nullptr);

/// Reads a config file and logs every applied default.
TrainConfig parse_config(const std::filesystem::path& path);

}  // namespace sglab
