#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tmclass/data.hpp"
#include "tmclass/errors.hpp"
#include "tmclass/estimator.hpp"
#include "tmclass/schedules.hpp"
#include "tmclass/taxonomy.hpp"

namespace tmclass {

/// Maps a column batch (x_t, X_c, t) to the estimated codeword x0_hat, L x B.
using TargetPredictor = std::function<Eigen::MatrixXd(const EstimatorInput&)>;

/// Predictor backed by a trained network. Holds its own copy of the parameters.
TargetPredictor make_predictor(const Estimator& estimator, const EstimatorParams& params);

struct SamplerConfig {
    std::size_t num_steps = 20;  // N
    ScheduleParams schedule;
    bool record_trajectory = false;

    void validate() const;
    friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

/// (t, state) pairs from (t_max, x1) down to (t_eps, x0_hat).
struct Trajectory {
    std::vector<double> times;
    std::vector<Eigen::VectorXd> states;

    std::size_t size() const noexcept { return times.size(); }
};

/// One Euler step from t to t - dt along the estimator-induced field:
///   x0_hat = predictor(state, X_c, t)
///   u      = vector_field(state, x0_hat, x1, t)
///   next   = state - dt * u
/// `input` supplies the condition layers; its x_t and t are overwritten.
Eigen::MatrixXd euler_step(const Eigen::MatrixXd& state, double t, const Eigen::MatrixXd& x1,
                           EstimatorInput& input, const TargetPredictor& predictor, double dt,
                           const ScheduleParams& schedule);

struct BatchSample {
    Eigen::MatrixXd final_state;             // L x B
    std::vector<Trajectory> trajectories;    // one per column when recorded
};

/// N uniform Euler steps from t_max to t_eps starting at x1, for a column batch.
BatchSample sample_batch(const Eigen::MatrixXd& x1, const std::vector<Eigen::MatrixXd>& conditions,
                         const TargetPredictor& predictor, const SamplerConfig& config);

struct SampleResult {
    Eigen::VectorXd final_state;
    std::optional<Trajectory> trajectory;
};

/// Single sample; condition_stack is C x L.
SampleResult sample(const Eigen::Ref<const Eigen::VectorXd>& x1, const Eigen::Ref<const Eigen::MatrixXd>& condition_stack,
                    const TargetPredictor& predictor, const SamplerConfig& config);

struct InferenceResult {
    std::size_t predicted = 0;
    std::vector<double> scores;
    Eigen::VectorXd final_state;
    std::optional<Trajectory> trajectory;
};

/// Raised when the sampled end state cannot be classified (zero norm);
/// carries the trajectory that produced it.
class DegenerateSample : public DegenerateInput {
public:
    DegenerateSample(const std::string& what, Trajectory trajectory)
        : DegenerateInput(what), trajectory_(std::move(trajectory)) {}
    const Trajectory& trajectory() const noexcept { return trajectory_; }

private:
    Trajectory trajectory_;
};

InferenceResult infer_class(const FeatureRecord& record, const TargetPredictor& predictor,
                            const TaxonomyCodebook& codebook, const SamplerConfig& config);

/// infer_class over many records, sampled in column batches of `chunk` records.
std::vector<InferenceResult> infer_batch(std::span<const FeatureRecord> records, const TargetPredictor& predictor,
                                         const TaxonomyCodebook& codebook, const SamplerConfig& config,
                                         std::size_t chunk = 256);

/// Column batch of the condition layers of `records`, C entries of L x B.
std::vector<Eigen::MatrixXd> stack_conditions(std::span<const FeatureRecord> records);
/// Column batch of terminal vectors, L x B.
Eigen::MatrixXd stack_terminals(std::span<const FeatureRecord> records);

}  // namespace tmclass
