#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sglab {

/// Central differences with this step, in 64-bit arithmetic.
inline constexpr double kFiniteDifferenceStep = 1e-6;
inline constexpr double kLossTolerance = 1e-4;
inline constexpr double kNetworkTolerance = 1e-3;

struct GradcheckItem {
    std::string name;
    std::size_t checked = 0;     // scalars compared
    std::size_t kinks_skipped = 0;  // network samples whose step straddled a ReLU/|.| kink
    double max_rel_error = 0;
    double tolerance = 0;
    bool passed() const { return max_rel_error < tolerance; }
};

struct GradcheckReport {
    std::vector<GradcheckItem> items;
    bool passed() const;
};

/// |analytic - numeric| / max(|analytic| + |numeric|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-8);

/// Every loss against finite differences, then the 4×4-input generator
/// composed with reconstruction_l1 and both discriminators on
/// `network_samples` randomly chosen parameters each. A network sample whose
/// forward and backward one-sided differences disagree sits on a kink; it is
/// replaced by a fresh draw and counted in kinks_skipped.
GradcheckReport run_gradcheck_suite(std::uint64_t seed, std::size_t network_samples = 50);

}  // namespace sglab
