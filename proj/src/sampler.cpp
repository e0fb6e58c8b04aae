#include "tmclass/sampler.hpp"

#include <cmath>
#include <string>

namespace tmclass {

TargetPredictor make_predictor(const Estimator& estimator, const EstimatorParams& params) {
    auto weights = std::make_shared<const std::vector<double>>(params.values.begin(), params.values.end());
    return [&estimator, weights](const EstimatorInput& in) {
        return estimator.forward(std::span<const double>(*weights), in);
    };
}

void SamplerConfig::validate() const {
    if (num_steps == 0) throw InvalidArgument("sampler.num_steps must be >= 1");
    schedule.validate();
}

Eigen::MatrixXd euler_step(const Eigen::MatrixXd& state, double t, const Eigen::MatrixXd& x1, EstimatorInput& input,
                           const TargetPredictor& predictor, double dt, const ScheduleParams& schedule) {
    if (!(dt >= 0.0)) throw InvalidArgument("euler_step: dt must be >= 0");
    schedule.check_time(t);
    if (t - dt < schedule.t_eps - 1e-12) {
        throw OutOfDomain("euler_step: t - dt = " + std::to_string(t - dt) + " falls below t_eps");
    }
    input.x_t = state;
    input.t = Eigen::VectorXd::Constant(state.cols(), t);
    const Eigen::MatrixXd x0_hat = predictor(input);
    if (x0_hat.rows() != state.rows() || x0_hat.cols() != state.cols()) {
        throw InvalidArgument("predictor returned a batch of the wrong shape");
    }
    // u = sigma'/sigma (x_t - mu_t(x0_hat, x1)) + mu'_t(x0_hat, x1), column by column
    const double log_ratio = schedule::std_log_derivative(t);
    const double a = schedule::alpha(t, schedule.k);
    const double da = schedule::alpha_derivative(t, schedule.k);
    const Eigen::MatrixXd delta = x1 - x0_hat;
    const Eigen::MatrixXd u = log_ratio * (state - x0_hat - a * delta) + da * delta;
    return state - dt * u;
}

namespace {

void check_state(const Eigen::MatrixXd& state, std::size_t step) {
    if (!state.allFinite()) {
        throw NumericError("non-finite sampler state after Euler step " + std::to_string(step));
    }
}

}  // namespace

BatchSample sample_batch(const Eigen::MatrixXd& x1, const std::vector<Eigen::MatrixXd>& conditions,
                         const TargetPredictor& predictor, const SamplerConfig& config) {
    config.validate();
    const auto& sched = config.schedule;
    const std::size_t n = config.num_steps;
    const double span = sched.t_max - sched.t_eps;
    auto time_at = [&](std::size_t i) {
        return i == n ? sched.t_eps : sched.t_max - static_cast<double>(i) * span / static_cast<double>(n);
    };

    EstimatorInput input;
    input.conditions = conditions;
    BatchSample out;
    Eigen::MatrixXd state = x1;
    if (config.record_trajectory) {
        out.trajectories.resize(static_cast<std::size_t>(x1.cols()));
        for (Eigen::Index b = 0; b < x1.cols(); ++b) {
            auto& tr = out.trajectories[static_cast<std::size_t>(b)];
            tr.times.reserve(n + 1);
            tr.states.reserve(n + 1);
            tr.times.push_back(sched.t_max);
            tr.states.push_back(state.col(b));
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double t = time_at(i);
        const double next_t = time_at(i + 1);
        state = euler_step(state, t, x1, input, predictor, t - next_t, sched);
        check_state(state, i + 1);
        for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(out.trajectories.size()); ++b) {
            auto& tr = out.trajectories[static_cast<std::size_t>(b)];
            tr.times.push_back(next_t);
            tr.states.push_back(state.col(b));
        }
    }
    out.final_state = std::move(state);
    return out;
}

SampleResult sample(const Eigen::Ref<const Eigen::VectorXd>& x1, const Eigen::Ref<const Eigen::MatrixXd>& condition_stack,
                    const TargetPredictor& predictor, const SamplerConfig& config) {
    std::vector<Eigen::MatrixXd> conditions;
    for (Eigen::Index c = 0; c < condition_stack.rows(); ++c) conditions.push_back(condition_stack.row(c).transpose());
    auto batch = sample_batch(Eigen::MatrixXd(x1), conditions, predictor, config);
    SampleResult r;
    r.final_state = batch.final_state.col(0);
    if (config.record_trajectory) r.trajectory = std::move(batch.trajectories.front());
    return r;
}

std::vector<Eigen::MatrixXd> stack_conditions(std::span<const FeatureRecord> records) {
    if (records.empty()) return {};
    const auto C = records.front().condition_stack.rows();
    const auto L = records.front().condition_stack.cols();
    const auto B = static_cast<Eigen::Index>(records.size());
    std::vector<Eigen::MatrixXd> out(static_cast<std::size_t>(C), Eigen::MatrixXd(L, B));
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto& cs = records[static_cast<std::size_t>(b)].condition_stack;
        if (cs.rows() != C || cs.cols() != L) throw InvalidArgument("records have inconsistent condition stacks");
        for (Eigen::Index c = 0; c < C; ++c) out[static_cast<std::size_t>(c)].col(b) = cs.row(c).transpose().cast<double>();
    }
    return out;
}

Eigen::MatrixXd stack_terminals(std::span<const FeatureRecord> records) {
    if (records.empty()) return {};
    const auto L = records.front().terminal.size();
    Eigen::MatrixXd out(L, static_cast<Eigen::Index>(records.size()));
    for (std::size_t b = 0; b < records.size(); ++b) {
        if (records[b].terminal.size() != L) throw InvalidArgument("records have inconsistent terminal vectors");
        out.col(static_cast<Eigen::Index>(b)) = records[b].terminal.cast<double>();
    }
    return out;
}

namespace {

InferenceResult classify_sample(Eigen::VectorXd final_state, std::optional<Trajectory> trajectory,
                                const TaxonomyCodebook& codebook) {
    InferenceResult r;
    try {
        auto c = classify(final_state, codebook);
        r.predicted = c.predicted;
        r.scores = std::move(c.scores);
    } catch (const DegenerateInput& e) {
        throw DegenerateSample(e.what(), trajectory ? std::move(*trajectory) : Trajectory{});
    }
    r.final_state = std::move(final_state);
    r.trajectory = std::move(trajectory);
    return r;
}

}  // namespace

InferenceResult infer_class(const FeatureRecord& record, const TargetPredictor& predictor,
                            const TaxonomyCodebook& codebook, const SamplerConfig& config) {
    if (static_cast<std::size_t>(record.terminal.size()) != codebook.dim()) {
        throw InvalidArgument("record dim " + std::to_string(record.terminal.size()) + " does not match codebook dim " +
                              std::to_string(codebook.dim()));
    }
    // Always keep the trajectory internally so a degenerate end state can be diagnosed.
    SamplerConfig cfg = config;
    cfg.record_trajectory = true;
    auto s = sample(record.terminal.cast<double>(), record.condition_stack.cast<double>(), predictor, cfg);
    if (!config.record_trajectory) {
        try {
            return classify_sample(std::move(s.final_state), std::nullopt, codebook);
        } catch (const DegenerateSample& e) {
            throw DegenerateSample(e.what(), std::move(*s.trajectory));
        }
    }
    return classify_sample(std::move(s.final_state), std::move(s.trajectory), codebook);
}

std::vector<InferenceResult> infer_batch(std::span<const FeatureRecord> records, const TargetPredictor& predictor,
                                         const TaxonomyCodebook& codebook, const SamplerConfig& config,
                                         std::size_t chunk) {
    if (chunk == 0) throw InvalidArgument("infer_batch: chunk must be >= 1");
    std::vector<InferenceResult> out;
    out.reserve(records.size());
    for (std::size_t begin = 0; begin < records.size(); begin += chunk) {
        const auto part = records.subspan(begin, std::min(chunk, records.size() - begin));
        const Eigen::MatrixXd x1 = stack_terminals(part);
        if (static_cast<std::size_t>(x1.rows()) != codebook.dim()) {
            throw InvalidArgument("record dim does not match codebook dim");
        }
        auto batch = sample_batch(x1, stack_conditions(part), predictor, config);
        for (Eigen::Index b = 0; b < x1.cols(); ++b) {
            std::optional<Trajectory> tr;
            if (config.record_trajectory) tr = std::move(batch.trajectories[static_cast<std::size_t>(b)]);
            out.push_back(classify_sample(batch.final_state.col(b), std::move(tr), codebook));
        }
    }
    return out;
}

}  // namespace tmclass
