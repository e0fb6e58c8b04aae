#include "doctest.h"

#include <cmath>
#include <random>

#include "tmclass/sampler.hpp"

using namespace tmclass;

namespace {

Eigen::VectorXd gaussian(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Eigen::VectorXd v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

// Predictor that returns fixed per-column targets regardless of state.
TargetPredictor oracle(Eigen::MatrixXd target) {
    return [target = std::move(target)](const EstimatorInput& in) -> Eigen::MatrixXd {
        if (target.cols() == in.x_t.cols()) return target;
        return target.col(0).replicate(1, in.x_t.cols());
    };
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.dot(b) / (a.norm() * b.norm()); }

std::vector<Eigen::MatrixXd> no_conditions(Eigen::Index L, Eigen::Index B) { return {Eigen::MatrixXd::Zero(L, B)}; }

}  // namespace

TEST_CASE("euler_step: zero step and fixed point") {
    std::mt19937_64 rng(1);
    const ScheduleParams sp;
    const Eigen::MatrixXd state = gaussian(8, rng);
    const Eigen::MatrixXd x1 = gaussian(8, rng);
    EstimatorInput in;
    in.conditions = no_conditions(8, 1);
    CHECK(euler_step(state, 0.5, x1, in, oracle(gaussian(8, rng)), 0.0, sp) == state);

    // x0_hat = x1 = state gives u = 0
    CHECK((euler_step(state, 0.6, state, in, oracle(state), 0.1, sp) - state).norm() == 0.0);

    CHECK_THROWS_AS(euler_step(state, 0.5, x1, in, oracle(state), -0.1, sp), InvalidArgument);
    CHECK_THROWS_AS(euler_step(state, 0.05, x1, in, oracle(state), 0.05, sp), OutOfDomain);
    CHECK_THROWS_AS(euler_step(state, 0.99, x1, in, oracle(state), 0.01, sp), OutOfDomain);
}

TEST_CASE("euler_step: local error along the mean path is O(dt^2)") {
    std::mt19937_64 rng(2);
    const ScheduleParams sp;
    const Eigen::VectorXd x0 = gaussian(16, rng), x1 = gaussian(16, rng);
    EstimatorInput in;
    in.conditions = no_conditions(16, 1);
    const double t = 0.6;
    std::vector<double> errors;
    for (double dt : {0.04, 0.02, 0.01, 0.005}) {
        const Eigen::VectorXd start = schedule::mean(x0, x1, t, sp.k);
        const Eigen::MatrixXd next = euler_step(start, t, x1, in, oracle(x0), dt, sp);
        errors.push_back((next.col(0) - schedule::mean(x0, x1, t - dt, sp.k)).norm());
    }
    for (std::size_t i = 1; i < errors.size(); ++i) {
        const double ratio = errors[i - 1] / errors[i];
        CHECK(ratio > 3.5);
        CHECK(ratio < 4.5);
    }
}

TEST_CASE("sample_batch: grid, trajectory and single-step equivalence") {
    std::mt19937_64 rng(3);
    SamplerConfig cfg;
    cfg.num_steps = 7;
    cfg.record_trajectory = true;
    const Eigen::MatrixXd x1 = Eigen::MatrixXd::Random(8, 3);
    const Eigen::MatrixXd x0 = Eigen::MatrixXd::Random(8, 3);
    const auto out = sample_batch(x1, no_conditions(8, 3), oracle(x0), cfg);
    REQUIRE(out.trajectories.size() == 3);
    const auto& tr = out.trajectories[1];
    REQUIRE(tr.size() == 8);
    CHECK(tr.times.front() == cfg.schedule.t_max);
    CHECK(tr.times.back() == cfg.schedule.t_eps);
    const double h = (cfg.schedule.t_max - cfg.schedule.t_eps) / 7.0;
    for (std::size_t i = 1; i < tr.size(); ++i) CHECK(tr.times[i - 1] - tr.times[i] == doctest::Approx(h).epsilon(1e-12));
    CHECK(tr.states.front() == x1.col(1));
    CHECK(tr.states.back() == out.final_state.col(1));

    SamplerConfig one;
    one.num_steps = 1;
    EstimatorInput in;
    in.conditions = no_conditions(8, 3);
    const Eigen::MatrixXd manual = euler_step(x1, one.schedule.t_max, x1, in, oracle(x0),
                                              one.schedule.t_max - one.schedule.t_eps, one.schedule);
    CHECK(sample_batch(x1, no_conditions(8, 3), oracle(x0), one).final_state == manual);

    SamplerConfig bad;
    bad.num_steps = 0;
    CHECK_THROWS_AS(sample_batch(x1, no_conditions(8, 3), oracle(x0), bad), InvalidArgument);
}

TEST_CASE("oracle integration lands near the codeword") {
    std::mt19937_64 rng(4);
    SamplerConfig cfg;
    cfg.num_steps = 100;
    double worst = 1.0;
    for (int i = 0; i < 100; ++i) {
        const Eigen::VectorXd x0 = gaussian(64, rng), x1 = gaussian(64, rng);
        const auto s = sample(x1, Eigen::MatrixXd::Zero(1, 64), oracle(x0), cfg);
        worst = std::min(worst, cosine(s.final_state, x0));
    }
    CHECK(worst >= 0.99);
}

TEST_CASE("oracle integration error does not grow with more steps") {
    std::mt19937_64 rng(5);
    const Eigen::MatrixXd x0 = Eigen::MatrixXd::NullaryExpr(32, 20, [&] { return std::normal_distribution<>()(rng); });
    const Eigen::MatrixXd x1 = Eigen::MatrixXd::NullaryExpr(32, 20, [&] { return std::normal_distribution<>()(rng); });
    double previous = INFINITY;
    for (std::size_t n : {1, 2, 4, 10, 20, 100}) {
        SamplerConfig cfg;
        cfg.num_steps = n;
        const double err = (sample_batch(x1, no_conditions(32, 20), oracle(x0), cfg).final_state - x0).norm();
        CAPTURE(n);
        CHECK(err <= previous);
        previous = err;
    }
}

TEST_CASE("infer_class and infer_batch") {
    const auto cb = build_codebook(ClassTaxonomy({"a", "b", "c", "d"}), 32);
    std::mt19937_64 rng(6);
    std::vector<FeatureRecord> records;
    for (int i = 0; i < 7; ++i) {
        FeatureRecord r;
        r.condition_stack = Eigen::MatrixXf::Random(2, 32);
        r.terminal = gaussian(32, rng).cast<float>();
        records.push_back(r);
    }
    SamplerConfig cfg;

    SUBCASE("constant-codeword estimator predicts that class everywhere") {
        for (std::size_t j = 0; j < 4; ++j) {
            const auto pred = oracle(cb.codeword(j));
            for (const auto& r : records) CHECK(infer_class(r, pred, cb, cfg).predicted == j);
        }
    }
    SUBCASE("batched inference matches per-record inference and is deterministic") {
        const auto pred = [](const EstimatorInput& in) -> Eigen::MatrixXd {
            return in.conditions[0].array().sin().matrix() + 0.1 * in.x_t;
        };
        const auto batched = infer_batch(records, pred, cb, cfg, 3);
        REQUIRE(batched.size() == records.size());
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto single = infer_class(records[i], pred, cb, cfg);
            CHECK(single.predicted == batched[i].predicted);
            CHECK((single.final_state - batched[i].final_state).norm() <= 1e-12);
            CHECK_FALSE(single.trajectory.has_value());
        }
        const auto again = infer_batch(records, pred, cb, cfg, 3);
        for (std::size_t i = 0; i < records.size(); ++i) CHECK(again[i].final_state == batched[i].final_state);
        CHECK_THROWS_AS(infer_batch(records, pred, cb, cfg, 0), InvalidArgument);
    }
    SUBCASE("zero end state raises DegenerateSample with its trajectory") {
        FeatureRecord zero = records[0];
        zero.terminal.setZero();
        cfg.num_steps = 5;
        try {
            infer_class(zero, oracle(Eigen::VectorXd::Zero(32)), cb, cfg);
            FAIL("expected DegenerateSample");
        } catch (const DegenerateSample& e) {
            CHECK(e.trajectory().size() == 6);
            CHECK(e.trajectory().states.back().norm() == 0.0);
        }
    }
    SUBCASE("dimension mismatch") {
        FeatureRecord r = records[0];
        r.terminal = Eigen::VectorXf::Zero(16);
        CHECK_THROWS_AS(infer_class(r, oracle(cb.codeword(0)), cb, cfg), InvalidArgument);
    }
}

TEST_CASE("make_predictor holds its own parameter copy") {
    EstimatorConfig ec;
    ec.dim = 16;
    ec.num_condition_layers = 2;
    ec.trunk_width = 16;
    ec.time_embed_dim = 8;
    const Estimator est(ec);
    auto params = est.initialize(3);
    const auto pred = make_predictor(est, params);
    EstimatorInput in;
    in.x_t = Eigen::MatrixXd::Random(16, 2);
    in.conditions = {Eigen::MatrixXd::Random(16, 2), Eigen::MatrixXd::Random(16, 2)};
    in.t = Eigen::Vector2d(0.3, 0.8);
    const Eigen::MatrixXd before = pred(in);
    CHECK(before == est.forward(params, in));
    for (auto& p : params.values) p = 0.0f;
    CHECK(pred(in) == before);
}
