#include "tmclass/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tmclass/errors.hpp"

namespace tmclass {

namespace {

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t counter, std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32), stream};
    return std::mt19937_64(seq);
}

constexpr std::uint32_t kShuffleStream = 0x5348;  // minibatch order
constexpr std::uint32_t kNoiseStream = 0x4e5a;    // timesteps and perturbation noise

std::uint64_t batch_digest(std::span<const FeatureRecord* const> batch) {
    std::uint64_t h = fnv1a64(nullptr, 0);
    for (const auto* r : batch) {
        const std::uint32_t label = r->label ? *r->label : kUnlabeled;
        h = fnv1a64(&label, sizeof(label), h);
        h = fnv1a64(r->terminal.data(), sizeof(float) * static_cast<std::size_t>(r->terminal.size()), h);
    }
    return h;
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size == 0) throw InvalidArgument("train.batch_size must be >= 1");
    if (total_steps == 0) throw InvalidArgument("train.total_steps must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw InvalidArgument("train.learning_rate must be a finite non-negative number");
    }
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0) ||
        !(optimizer.epsilon > 0.0)) {
        throw InvalidArgument("train.optimizer: betas must lie in [0, 1) and epsilon must be > 0");
    }
    schedule.validate();
}

TrainState TrainState::fresh(const Estimator& estimator, std::uint64_t seed) {
    TrainState s;
    s.params = estimator.initialize(seed);
    s.first_moment.assign(s.params.values.size(), 0.0);
    s.second_moment.assign(s.params.values.size(), 0.0);
    s.seed = seed;
    return s;
}

OptimizerSnapshot TrainState::snapshot() const {
    return OptimizerSnapshot{step, seed, first_moment, second_moment};
}

TrainState TrainState::restore(const Checkpoint& ckpt) {
    if (!ckpt.optimizer) throw InvalidArgument("checkpoint has no optimizer state; cannot resume training");
    TrainState s;
    s.params = ckpt.params;
    s.first_moment = ckpt.optimizer->first_moment;
    s.second_moment = ckpt.optimizer->second_moment;
    s.step = ckpt.optimizer->step;
    s.seed = ckpt.optimizer->seed;
    if (s.first_moment.size() != s.params.values.size() || s.second_moment.size() != s.params.values.size()) {
        throw InvalidArgument("checkpoint optimizer moments do not match the parameter count");
    }
    return s;
}

double sample_timestep(std::mt19937_64& rng, const ScheduleParams& params) {
    params.validate();
    std::uniform_real_distribution<double> u(params.t_eps, params.t_max);
    return u(rng);
}

std::vector<std::size_t> minibatch_indices(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                           std::uint64_t step) {
    if (dataset_size == 0) throw InvalidArgument("cannot draw minibatches from an empty dataset");
    std::vector<std::size_t> out;
    out.reserve(batch_size);
    std::uint64_t cached_epoch = ~0ULL;
    std::vector<std::size_t> perm(dataset_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        const std::uint64_t global = step * batch_size + i;
        const std::uint64_t epoch = global / dataset_size;
        if (epoch != cached_epoch) {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            auto rng = derived_rng(seed, epoch, kShuffleStream);
            std::shuffle(perm.begin(), perm.end(), rng);
            cached_epoch = epoch;
        }
        out.push_back(perm[global % dataset_size]);
    }
    return out;
}

StepResult train_step(TrainState& state, std::span<const FeatureRecord* const> batch, const TaxonomyCodebook& codebook,
                      const Estimator& estimator, const TrainConfig& config) {
    if (batch.empty()) throw InvalidArgument("train_step: batch is empty");
    if (state.params.values.size() != estimator.parameter_count()) {
        throw InvalidArgument("train_step: parameter count does not match the estimator");
    }
    const auto& sched = config.schedule;
    const auto L = static_cast<Eigen::Index>(codebook.dim());
    const auto B = static_cast<Eigen::Index>(batch.size());
    if (static_cast<std::size_t>(L) != estimator.config().dim) {
        throw InvalidArgument("train_step: codebook dim does not match estimator dim");
    }

    auto rng = derived_rng(state.seed, state.step, kNoiseStream);
    std::normal_distribution<double> normal(0.0, 1.0);

    EstimatorInput input;
    input.x_t.resize(L, B);
    input.t.resize(B);
    input.conditions.assign(estimator.config().num_condition_layers, Eigen::MatrixXd(L, B));
    Eigen::MatrixXd targets(L, B);
    for (Eigen::Index b = 0; b < B; ++b) {
        const FeatureRecord& r = *batch[static_cast<std::size_t>(b)];
        if (!r.label || *r.label >= codebook.num_classes()) {
            throw InvalidArgument("train_step: record without a valid label in batch");
        }
        if (r.terminal.size() != L ||
            static_cast<std::size_t>(r.condition_stack.rows()) != estimator.config().num_condition_layers) {
            throw InvalidArgument("train_step: record dims do not match the estimator");
        }
        const Eigen::VectorXd x0 = codebook.codeword(*r.label);
        const Eigen::VectorXd x1 = r.terminal.cast<double>();
        const double t = sample_timestep(rng, sched);
        Eigen::VectorXd z(L);
        for (Eigen::Index l = 0; l < L; ++l) z[l] = normal(rng);
        input.x_t.col(b) = schedule::perturb(x0, x1, t, sched, z);
        input.t[b] = t;
        for (std::size_t c = 0; c < input.conditions.size(); ++c) {
            input.conditions[c].col(b) = r.condition_stack.row(static_cast<Eigen::Index>(c)).transpose().cast<double>();
        }
        targets.col(b) = x0;
    }

    auto numeric_failure = [&](const std::string& what) {
        std::ostringstream os;
        os << what << " at step " << state.step << " (batch digest " << std::hex << batch_digest(batch) << ")";
        return NumericError(os.str());
    };
    LossAndGradients lg;
    try {
        lg = estimator.loss_and_gradients(state.params, input, targets);
    } catch (const NumericError& e) {
        throw numeric_failure(e.what());
    }
    if (!std::isfinite(lg.loss)) throw numeric_failure("non-finite training loss");

    StepResult result;
    result.loss = lg.loss;
    double sq = 0.0;
    for (double g : lg.gradients) sq += g * g;
    result.grad_norm = std::sqrt(sq);
    double scale = 1.0;
    if (config.clip_norm > 0.0 && result.grad_norm > config.clip_norm) {
        scale = config.clip_norm / result.grad_norm;
        result.clipped = true;
    }

    const auto& opt = config.optimizer;
    const double step = static_cast<double>(state.step + 1);
    const double c1 = 1.0 - std::pow(opt.beta1, step);
    const double c2 = 1.0 - std::pow(opt.beta2, step);
    auto& p = state.params.values;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = lg.gradients[i] * scale;
        state.first_moment[i] = opt.beta1 * state.first_moment[i] + (1.0 - opt.beta1) * g;
        state.second_moment[i] = opt.beta2 * state.second_moment[i] + (1.0 - opt.beta2) * g * g;
        const double update =
            config.learning_rate * (state.first_moment[i] / c1) / (std::sqrt(state.second_moment[i] / c2) + opt.epsilon);
        p[i] = static_cast<float>(static_cast<double>(p[i]) - update);
    }
    ++state.step;
    return result;
}

std::string to_json_line(const MetricRecord& m) {
    nlohmann::json j;
    j["step"] = m.step;
    j["loss"] = m.loss;
    j["wall_ms"] = m.wall_ms;
    j["clipped"] = m.clipped;
    if (m.val_accuracy) j["val_accuracy"] = *m.val_accuracy;
    return j.dump();
}

namespace {

double accuracy_on(const FeatureDataset& data, const Estimator& estimator, const EstimatorParams& params,
                   const TaxonomyCodebook& codebook, const SamplerConfig& sampler) {
    if (data.size() == 0) return 0.0;
    const auto results = infer_batch(data.records(), make_predictor(estimator, params), codebook, sampler);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (data[i].label && results[i].predicted == *data[i].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace

TrainResult train_loop(const FeatureDataset& train, const FeatureDataset* validation, const TrainConfig& config,
                       const Estimator& estimator, const TaxonomyCodebook& codebook, const TrainOptions& options) {
    config.validate();
    if (train.size() == 0) throw InvalidArgument("training split is empty");
    if (!train.fully_labeled()) throw InvalidArgument("training split contains unlabeled records");
    if (train.dim() != codebook.dim() || train.dim() != estimator.config().dim) {
        throw InvalidArgument("dataset, codebook and estimator dims disagree");
    }

    TrainResult result;
    result.state = options.resume_from ? *options.resume_from : TrainState::fresh(estimator, config.seed);
    TrainState& state = result.state;
    if (state.params.values.size() != estimator.parameter_count()) {
        throw InvalidArgument("resume state does not match the estimator configuration");
    }

    auto write_checkpoint_now = [&] {
        if (!options.checkpoint_path) return;
        save_checkpoint(Checkpoint{estimator.config(), state.params, state.snapshot()}, *options.checkpoint_path);
    };

    std::vector<const FeatureRecord*> batch(config.batch_size);
    while (state.step < config.total_steps) {
        const auto started = std::chrono::steady_clock::now();
        const auto idx = minibatch_indices(train.size(), config.batch_size, state.seed, state.step);
        for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = &train[idx[i]];
        const StepResult sr = train_step(state, batch, codebook, estimator, config);

        MetricRecord m;
        m.step = state.step;
        m.loss = sr.loss;
        m.clipped = sr.clipped;
        if (validation && config.eval_every > 0 &&
            (state.step % config.eval_every == 0 || state.step == config.total_steps)) {
            m.val_accuracy = accuracy_on(*validation, estimator, state.params, codebook, options.validation_sampler);
        }
        m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        if (options.metrics_log) *options.metrics_log << to_json_line(m) << '\n';
        result.metrics.push_back(m);

        if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) write_checkpoint_now();
    }
    write_checkpoint_now();
    if (options.metrics_log) options.metrics_log->flush();
    return result;
}

}  // namespace tmclass
