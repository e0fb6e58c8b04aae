#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "tmclass/data.hpp"
#include "tmclass/estimator.hpp"
#include "tmclass/sampler.hpp"
#include "tmclass/schedules.hpp"
#include "tmclass/training.hpp"

namespace tmclass {

struct ExperimentPaths {
    std::filesystem::path dataset;      // GSF1 feature file
    std::filesystem::path checkpoint;   // estimator checkpoint
    std::filesystem::path output_dir;   // reports, metrics, trajectories
};

/// Everything one experiment needs; loaded from a single JSON file.
struct ExperimentConfig {
    ExperimentPaths paths;
    ScheduleParams schedule;
    EstimatorConfig estimator;
    TrainConfig train;
    SamplerConfig sampler;
    SyntheticSpec synthetic;
    SplitFractions split;
    std::uint64_t seed = 0;

    /// Pushes the top-level schedule into the train and sampler sub-configs and validates all parts.
    void finalize();
};

// JSON mapping. Missing keys keep their defaults; unknown keys are rejected.
void to_json(nlohmann::json& j, const ScheduleParams& v);
void from_json(const nlohmann::json& j, ScheduleParams& v);
void to_json(nlohmann::json& j, const EstimatorConfig& v);
void from_json(const nlohmann::json& j, EstimatorConfig& v);
void to_json(nlohmann::json& j, const TrainConfig& v);
void from_json(const nlohmann::json& j, TrainConfig& v);
void to_json(nlohmann::json& j, const SamplerConfig& v);
void from_json(const nlohmann::json& j, SamplerConfig& v);
void to_json(nlohmann::json& j, const SyntheticSpec& v);
void from_json(const nlohmann::json& j, SyntheticSpec& v);
void to_json(nlohmann::json& j, const SplitFractions& v);
void from_json(const nlohmann::json& j, SplitFractions& v);
void to_json(nlohmann::json& j, const ExperimentConfig& v);
void from_json(const nlohmann::json& j, ExperimentConfig& v);

/// Parses and finalizes; throws ConfigError with the offending key on any problem.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Applies "a.b.c=value" overrides (value parsed as JSON, falling back to a string).
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace tmclass
