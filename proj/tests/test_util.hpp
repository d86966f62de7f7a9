#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "sglab/tensor.hpp"
#include "sglab/training.hpp"

namespace sglab::testing {

class TempDir {
public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "sglab-test-XXXXXX").string();
        if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(u(rng));
    return t;
}

// Narrow networks keep unit tests fast; layer structure is unchanged.
inline TrainConfig small_config(Variant variant, int lr_size) {
    TrainConfig c;
    c.variant = variant;
    c.lr_size = lr_size;
    c.batch = 4;
    c.generator = {16, 8, 1, 1, 128};
    c.discriminator = {8, 32};
    return c;
}

}  // namespace sglab::testing
