#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sglab/architecture.hpp"
#include "sglab/data.hpp"
#include "sglab/optim.hpp"

namespace sglab {

struct TrainConfig {
    Variant variant = Variant::sigan;
    int lr_size = 8;
    std::size_t batch = 16;
    std::size_t iterations = 500;
    double lr_d = 2e-4;
    double lr_g = 2e-4;
    double lr_c = 2e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double margin = 0.5;
    double gamma = 0.25;
    double beta = 0.5;
    double lambda_r = 1.0;
    double lambda_c = 1.0;  // weight of the contrastive sub-step; 0 disables it
    double genuine_fraction = 0.5;
    bool saturating = true;
    std::uint64_t seed = 1;
    std::size_t checkpoint_every = 100;  // 0: only the final checkpoint
    GeneratorOptions generator;
    DiscriminatorOptions discriminator;
    std::string data_root;
    std::string out_dir;

    /// Throws std::invalid_argument on the first violated constraint.
    void validate() const;
    /// Canonical sorted key=value text of every field.
    std::string to_text() const;
    /// FNV-1a 64 of to_text().
    std::uint64_t digest() const;
    Architecture architecture(std::optional<int> num_identities) const;
};

/// Non-finite loss during a step; carries where it happened.
class TrainingError : public std::runtime_error {
public:
    TrainingError(std::uint64_t iteration, std::string sub_step, std::string loss_name);
    std::uint64_t iteration;
    std::string sub_step;
    std::string loss_name;
};

struct TrainState {
    TrainConfig config;
    Architecture arch;
    ModelSpec generator_spec;
    ModelSpec discriminator_spec;
    ParameterSet<float> generator;      // includes the perceptual head
    ParameterSet<float> discriminator;
    Adam<float> opt_d;  // discriminator
    Adam<float> opt_g;  // generator, adversarial + reconstruction step
    Adam<float> opt_c;  // generator + head, contrastive step
    std::uint64_t iteration = 0;
    Rng rng;
};

/// Builds specs and initial parameters (generator first, then discriminator)
/// from a generator seeded with config.seed. `num_identities` is required for
/// giegan and diegan.
TrainState init_train_state(const TrainConfig& config, std::optional<int> num_identities = std::nullopt);

struct StepMetrics {
    std::uint64_t iteration = 0;
    double loss_d = 0;
    double loss_g = 0;
    double loss_c = 0;  // sigan: contrastive; giegan: realism; diegan: identity cross-entropy
    double recon_l1 = 0;
    double wall_ms = 0;
};

/// Discriminator step, then generator step (adversarial + lambda_r * L1 over
/// both pair sides), then generator+head step on the contrastive loss.
StepMetrics sigan_train_step(TrainState& state, const PairBatch& batch);

/// Label-conditioned step: the label plane is appended to the LR input and to
/// both real and generated discriminator inputs.
StepMetrics giegan_train_step(TrainState& state, const LabeledBatch& batch);

/// Multiclass step: real faces target their identity, generated faces target
/// class C; the generator is pushed towards the true identity class.
StepMetrics diegan_train_step(TrainState& state, const LabeledBatch& batch);

/// Samples a batch from `rng` and runs the variant's step function.
StepMetrics train_step(TrainState& state, const IdentityCatalog& catalog);

/// [b, size, size, 1] plane holding each sample's normalized label.
Tensor<float> label_plane(const std::vector<int>& labels, int num_identities, std::size_t size);

struct TrainResult {
    TrainState state;
    std::vector<StepMetrics> metrics;
};

/// Runs config.iterations steps. With `out_dir` set, appends one metrics.csv
/// row per step and writes checkpoint-NNNNNN.sgck every checkpoint_every
/// steps plus final.sgck.
TrainResult train(const TrainConfig& config, const IdentityCatalog& catalog,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const std::function<void(const StepMetrics&)>& on_step = {});

/// iteration,loss_d,loss_g,loss_c,wall_ms
std::string metrics_csv_row(const StepMetrics& m);

}  // namespace sglab
