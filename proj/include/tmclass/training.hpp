#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "tmclass/checkpoint.hpp"
#include "tmclass/data.hpp"
#include "tmclass/estimator.hpp"
#include "tmclass/sampler.hpp"
#include "tmclass/schedules.hpp"
#include "tmclass/taxonomy.hpp"

namespace tmclass {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t total_steps = 3000;
    double learning_rate = 5e-4;
    std::uint64_t seed = 0;
    AdamConfig optimizer;
    double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
    ScheduleParams schedule;
    std::size_t eval_every = 500;        // 0 disables validation
    std::size_t checkpoint_every = 1000; // 0: only at the end (when a path is set)

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainState {
    EstimatorParams params;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;  // all randomness is derived from (seed, step)

    static TrainState fresh(const Estimator& estimator, std::uint64_t seed);
    OptimizerSnapshot snapshot() const;
    static TrainState restore(const Checkpoint& ckpt);
};

/// Uniform draw on [t_eps, t_max].
double sample_timestep(std::mt19937_64& rng, const ScheduleParams& params);

struct StepResult {
    double loss = 0.0;
    double grad_norm = 0.0;
    bool clipped = false;
};

/// One pass of the training recipe on a labeled batch: codeword lookup, t ~ U[t_eps, t_max],
/// z ~ N(0, I), x_t = mu_t + sigma_t z, squared-error loss, one Adam update. Increments state.step.
/// Throws NumericError (with step and batch digest) on a non-finite loss.
StepResult train_step(TrainState& state, std::span<const FeatureRecord* const> batch, const TaxonomyCodebook& codebook,
                      const Estimator& estimator, const TrainConfig& config);

struct MetricRecord {
    std::uint64_t step = 0;
    double loss = 0.0;
    double wall_ms = 0.0;
    bool clipped = false;
    std::optional<double> val_accuracy;
};

/// One JSON object per line: {"step", "loss", "wall_ms", "clipped"[, "val_accuracy"]}.
std::string to_json_line(const MetricRecord& m);

struct TrainOptions {
    std::optional<std::filesystem::path> checkpoint_path;
    std::ostream* metrics_log = nullptr;   // line-delimited MetricRecord JSON
    SamplerConfig validation_sampler;      // used for val_accuracy
    std::optional<TrainState> resume_from; // continue an earlier run
};

struct TrainResult {
    TrainState state;
    std::vector<MetricRecord> metrics;
};

/// Runs steps state.step .. total_steps - 1 over reshuffled minibatches of `train`.
/// Minibatch order depends only on (seed, step), so resuming reproduces the uninterrupted run.
TrainResult train_loop(const FeatureDataset& train, const FeatureDataset* validation, const TrainConfig& config,
                       const Estimator& estimator, const TaxonomyCodebook& codebook, const TrainOptions& options = {});

/// Record indices of the minibatch used at `step`.
std::vector<std::size_t> minibatch_indices(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                           std::uint64_t step);

}  // namespace tmclass
