#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tmclass/data.hpp"
#include "tmclass/sampler.hpp"
#include "tmclass/taxonomy.hpp"

namespace tmclass {

struct EvalReport {
    std::vector<std::string> labels;
    double accuracy = 0.0;
    std::vector<double> precision;  // per class; 0 when the class was never predicted
    std::vector<double> recall;     // per class; 0 when the class has no samples
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    std::size_t count = 0;
    double wall_ms = 0.0;

    std::string to_text() const;
    /// Deterministic content only (no wall time).
    nlohmann::json to_json() const;
    /// Tab-separated confusion matrix with a header row of predicted labels.
    std::string confusion_tsv() const;
};

/// Aggregates (truth, prediction) pairs into a report.
EvalReport make_report(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted,
                       const std::vector<std::string>& labels);

/// Runs inference on every record of a labeled split.
EvalReport evaluate(const FeatureDataset& split, const TargetPredictor& predictor, const TaxonomyCodebook& codebook,
                    const SamplerConfig& sampler);

struct SweepRow {
    std::size_t num_steps = 0;
    double accuracy = 0.0;
};

/// One evaluate per step count, all else shared.
std::vector<SweepRow> sweep_steps(const FeatureDataset& split, const TargetPredictor& predictor,
                                  const TaxonomyCodebook& codebook, const SamplerConfig& sampler,
                                  const std::vector<std::size_t>& step_counts);

/// "num_steps\taccuracy" rows with a header.
std::string sweep_table_tsv(const std::vector<SweepRow>& rows);

struct TrajectoryPanel {
    double requested_time = 0.0;
    std::size_t index = 0;  // into the full trajectory
    double time = 0.0;
    double cosine_to_target = 0.0;  // NaN when the record is unlabeled
};

struct TrajectoryDump {
    Trajectory trajectory;
    std::vector<TrajectoryPanel> panels;
    std::optional<Eigen::VectorXd> target;  // true codeword, when labeled
    std::size_t predicted = 0;
};

/// Samples one record with trajectory capture and picks the states nearest the requested times.
TrajectoryDump dump_trajectory(const FeatureRecord& record, const TargetPredictor& predictor,
                               const TaxonomyCodebook& codebook, const SamplerConfig& sampler,
                               const std::vector<double>& panel_times);

/// One row per step: t, then the L state values, tab-separated, 9 significant digits.
void write_trajectory(std::ostream& out, const Trajectory& trajectory);
/// Panel rows ("panel", requested t, t, cosine, values...) followed by a "target" row when labeled.
void write_panels(std::ostream& out, const TrajectoryDump& dump);

double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

}  // namespace tmclass
