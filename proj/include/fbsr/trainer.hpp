#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fbsr/data.hpp"
#include "fbsr/losses.hpp"
#include "fbsr/models.hpp"

namespace fbsr {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    long t = 0;
};

/// One bias-corrected Adam update of `param` in place. m and v are resized on
/// first use; `t` is the step number after increment (1 for the first step).
void adam_update(std::span<float> param, std::span<const float> grad, std::vector<float>& m, std::vector<float>& v,
                 long t, const AdamConfig& config);

/// Adam over every parameter of a network; parameters without a gradient are
/// updated as if their gradient were zero.
void adam_step(std::vector<NamedTensor>& params, AdamState& state, const AdamConfig& config);

struct TrainConfig {
    AdamConfig adam;
    int batch_size = 54;
    long max_iterations = 2000;
    int d_steps_per_g_step = 1;
    long checkpoint_every = 500;  // 0 disables periodic checkpoints
    long validate_every = 100;    // 0 validates only at the start and the end
    std::uint64_t seed = 0;
    LossWeights weights;
    int n_f = kDefaultFibreVectorLength;
    bool freeze_discriminator = false;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);

struct IterationResult {
    long iteration = 0;  // 1-based index of the completed iteration
    LossBreakdown losses;
    double d_loss = 0.0;
};

/// One patch read during training, for auditing the unpaired contract.
struct AuditRecord {
    long iteration = 0;
    std::string phase;   // "discriminator" or "generator"
    std::string domain;  // "lr" or "hr"
    std::string pair_key;
};

struct Batch {
    ad::Tensor images;  // [N,1,S,S]
    std::vector<const FibreLayout*> layouts;  // LR batches only
    std::vector<std::string> pair_keys;
};

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);

class Trainer {
public:
    Trainer(const GeneratorConfig& g_config, const DiscriminatorConfig& d_config, const TrainConfig& config,
            const Dataset& lr_train, const Dataset& hr_train, const Dataset* lr_validation = nullptr);

    [[nodiscard]] Generator& generator() { return generator_; }
    [[nodiscard]] Discriminator& discriminator() { return discriminator_; }
    [[nodiscard]] const TrainConfig& config() const { return config_; }
    [[nodiscard]] long iteration() const { return iteration_; }

    void set_audit(std::function<void(const AuditRecord&)> audit) { audit_ = std::move(audit); }

    /// Draws independent LR and HR batches for the next iteration and runs it.
    IterationResult step();

    /// Discriminator update(s) on detached fakes and `hr`, then one generator
    /// update on `lr`. Throws NumericalError on a non-finite loss.
    IterationResult train_iteration(const Batch& lr, const Batch& hr);

    /// One generator update without touching the discriminator; returns the losses
    /// computed before the update.
    LossBreakdown generator_step(const Batch& lr);

    /// Mean l_vec of the generator in inference mode over the validation pool.
    double validation_l_vec();

    /// Indices of the next iteration's batches (deterministic in seed and iteration).
    std::vector<std::size_t> sample_lr_indices(long iteration) const;
    std::vector<std::size_t> sample_hr_indices(long iteration, const std::vector<std::string>& lr_keys) const;

    Checkpoint save_state() const;
    /// Restores parameters, buffers, optimiser moments and the iteration counter.
    void load_state(const Checkpoint& checkpoint);

    std::optional<double> best_validation;

private:
    void audit(const std::string& phase, const std::string& domain, const std::vector<std::string>& keys);
    LossTerms<float> generator_losses(const Batch& lr, const ad::Tensor& sr, std::mt19937_64& noise_rng);

    TrainConfig config_;
    Generator generator_;
    Discriminator discriminator_;
    AdamState adam_g_;
    AdamState adam_d_;
    const Dataset& lr_train_;
    const Dataset& hr_train_;
    const Dataset* lr_validation_;
    long iteration_ = 0;
    std::function<void(const AuditRecord&)> audit_;
};

struct TrainSummary {
    long iterations = 0;
    double initial_validation = 0.0;
    double final_validation = 0.0;
    double best_validation = 0.0;
    std::filesystem::path final_checkpoint;
    std::filesystem::path best_checkpoint;
    std::filesystem::path log;
};

/// Runs the trainer up to config.max_iterations, writing into `out_dir`:
/// training_log.csv (one row per iteration), validation.csv, checkpoint_<it>.json
/// every checkpoint_every iterations, best.json and final.json. When the trainer
/// was restored from a checkpoint the logs are appended to.
TrainSummary train(Trainer& trainer, const std::filesystem::path& out_dir,
                   const std::function<void(const IterationResult&)>& progress = {});

}  // namespace fbsr
