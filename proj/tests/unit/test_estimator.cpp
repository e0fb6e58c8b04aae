#include "doctest.h"

#include <cmath>
#include <random>

#include "tmclass/errors.hpp"
#include "tmclass/estimator.hpp"

using namespace tmclass;

namespace {

EstimatorInput random_input(const EstimatorConfig& cfg, Eigen::Index batch, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.03, 0.97);
    const auto L = static_cast<Eigen::Index>(cfg.dim);
    EstimatorInput in;
    in.x_t = Eigen::MatrixXd::NullaryExpr(L, batch, [&] { return n(rng); });
    for (std::size_t c = 0; c < cfg.num_condition_layers; ++c) {
        in.conditions.push_back(Eigen::MatrixXd::NullaryExpr(L, batch, [&] { return n(rng); }));
    }
    in.t = Eigen::VectorXd::NullaryExpr(batch, [&] { return u(rng); });
    return in;
}

EstimatorConfig tiny(TrunkVariant v) {
    EstimatorConfig cfg;
    cfg.dim = 8;
    cfg.num_condition_layers = 2;
    cfg.trunk = v;
    cfg.trunk_depth = 1;
    cfg.trunk_width = 6;
    cfg.num_heads = 2;
    cfg.num_tokens = 2;
    cfg.ffn_multiplier = 2;
    cfg.time_embed_dim = 4;
    return cfg;
}

// Central finite differences over every parameter; returns the worst relative error.
// Gradients below 1e-6 in magnitude (e.g. attention key biases, which softmax ignores)
// are compared against that floor instead of themselves.
double worst_gradient_error(const Estimator& est, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.4);
    std::vector<double> p(est.parameter_count());
    for (auto& v : p) v = n(rng);  // non-identity modulation so every path carries gradient
    const auto in = random_input(est.config(), 3, rng);
    const Eigen::MatrixXd targets = Eigen::MatrixXd::NullaryExpr(in.x_t.rows(), 3, [&] { return n(rng); });

    const auto analytic = est.loss_and_gradients(std::span<const double>(p), in, targets);
    auto loss_at = [&](const std::vector<double>& q) {
        const Eigen::MatrixXd out = est.forward(std::span<const double>(q), in);
        return (out - targets).squaredNorm() / 3.0;
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double h = 1e-4 * std::max(1.0, std::abs(p[i]));
        auto plus = p, minus = p;
        plus[i] += h;
        minus[i] -= h;
        const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
        const double a = analytic.gradients[i];
        const double denom = std::max({std::abs(a), std::abs(fd), 1e-6});
        worst = std::max(worst, std::abs(a - fd) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("fuse_conditions: softmax-weighted sum") {
    Eigen::MatrixXd one(1, 3);
    one << 1, 2, 3;
    CHECK(fuse_conditions(one, Eigen::VectorXd::Constant(1, 42.0)).isApprox(one.row(0).transpose()));

    Eigen::MatrixXd two(2, 3);
    two << 1, 2, 3, 5, 6, 7;
    const Eigen::VectorXd avg = fuse_conditions(two, Eigen::VectorXd::Zero(2));
    CHECK(avg.isApprox(Eigen::Vector3d(3, 4, 5)));

    Eigen::MatrixXd three(3, 2);
    three << 1, 0, 0, 1, 2, 2;
    Eigen::Vector3d w(2, 0, 0);
    // softmax(2,0,0) by hand
    const double z = std::exp(2.0) + 2.0;
    const double a0 = std::exp(2.0) / z, a1 = 1.0 / z, a2 = 1.0 / z;
    const Eigen::Vector2d expected(a0 * 1 + a2 * 2, a1 * 1 + a2 * 2);
    CHECK(fuse_conditions(three, w).isApprox(expected, 1e-14));

    CHECK_THROWS_AS(fuse_conditions(three, Eigen::VectorXd::Zero(2)), InvalidArgument);
}

TEST_CASE("timestep_embedding") {
    const Eigen::VectorXd zero = timestep_embedding(0.0, 6);
    for (Eigen::Index i = 0; i < 6; ++i) CHECK(zero[i] == (i % 2 == 0 ? 0.0 : 1.0));
    CHECK(timestep_embedding(0.3, 8) == timestep_embedding(0.3, 8));

    const Eigen::VectorXd e = timestep_embedding(0.5, 8);
    const double freqs[] = {1.0, 0.1, 0.01, 0.001};  // 10000^(-2j/8)
    for (int j = 0; j < 4; ++j) {
        CHECK(e[2 * j] == doctest::Approx(std::sin(0.5 * freqs[j])).epsilon(1e-12));
        CHECK(e[2 * j + 1] == doctest::Approx(std::cos(0.5 * freqs[j])).epsilon(1e-12));
    }
    CHECK_THROWS_AS(timestep_embedding(0.5, 7), InvalidArgument);
    CHECK_THROWS_AS(timestep_embedding(1.5, 8), OutOfDomain);
}

TEST_CASE("config validation") {
    auto cfg = tiny(TrunkVariant::StagedTransformer);
    cfg.num_tokens = 3;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = tiny(TrunkVariant::StagedTransformer);
    cfg.num_heads = 4;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = tiny(TrunkVariant::MlpBaseline);
    cfg.trunk_depth = 0;
    CHECK_THROWS_AS(Estimator{cfg}, InvalidArgument);
    CHECK(trunk_variant_from_string("staged-transformer") == TrunkVariant::StagedTransformer);
    CHECK_THROWS_AS(trunk_variant_from_string("rnn"), InvalidArgument);
}

TEST_CASE("parameter count matches the analytic formula") {
    for (auto v : {TrunkVariant::MlpBaseline, TrunkVariant::StagedTransformer}) {
        for (std::size_t depth : {1u, 2u, 3u}) {
            auto cfg = tiny(v);
            cfg.trunk_depth = depth;
            CHECK(Estimator(cfg).parameter_count() == analytic_parameter_count(cfg));
        }
    }
    EstimatorConfig paper;
    paper.dim = 1024;
    paper.num_condition_layers = 23;
    paper.trunk = TrunkVariant::StagedTransformer;
    paper.trunk_depth = 4;
    paper.trunk_width = 1024;
    paper.num_heads = 16;
    paper.num_tokens = 16;
    paper.time_embed_dim = 1024;
    const double millions = static_cast<double>(analytic_parameter_count(paper)) / 1e6;
    // same order of magnitude as the 71.4M reference configuration
    CHECK(millions > 71.4 / 3.0);
    CHECK(millions < 71.4 * 3.0);
}

TEST_CASE("forward: finite, deterministic, identity-initialized modulation") {
    for (auto v : {TrunkVariant::MlpBaseline, TrunkVariant::StagedTransformer}) {
        const Estimator est(tiny(v));
        const auto params = est.initialize(7);
        CHECK(params == est.initialize(7));
        CHECK(params.values.size() == est.parameter_count());
        for (const auto& e : est.layout().entries()) {
            if (e.name.find("modulation") != std::string::npos) {
                for (std::size_t i = 0; i < e.size(); ++i) CHECK(params.values[e.offset + i] == 0.0f);
            }
        }
        std::mt19937_64 rng(1);
        const auto in = random_input(est.config(), 4, rng);
        const Eigen::MatrixXd a = est.forward(params, in);
        const Eigen::MatrixXd b = est.forward(params, in);
        CHECK(a.allFinite());
        CHECK(a == b);
        CHECK(a.norm() < 1e3);

        // the batched path agrees with the single-sample path
        Eigen::MatrixXd stack(static_cast<Eigen::Index>(est.config().num_condition_layers), in.x_t.rows());
        for (Eigen::Index c = 0; c < stack.rows(); ++c) stack.row(c) = in.conditions[c].col(2).transpose();
        const Eigen::VectorXd single = est.forward(params, in.x_t.col(2), stack, in.t[2]);
        CHECK((single - a.col(2)).norm() < 1e-12);
    }
}

TEST_CASE("forward rejects bad inputs") {
    const Estimator est(tiny(TrunkVariant::MlpBaseline));
    const auto params = est.initialize(0);
    std::mt19937_64 rng(2);
    auto in = random_input(est.config(), 2, rng);
    in.x_t(0, 0) = std::nan("");
    CHECK_THROWS_AS(est.forward(params, in), NumericError);
    in = random_input(est.config(), 2, rng);
    in.conditions.pop_back();
    CHECK_THROWS_AS(est.forward(params, in), InvalidArgument);
    in = random_input(est.config(), 2, rng);
    EstimatorInput empty;
    empty.x_t.resize(8, 0);
    empty.conditions.assign(2, Eigen::MatrixXd(8, 0));
    CHECK_THROWS_AS(est.loss_and_gradients(params, empty, Eigen::MatrixXd(8, 0)), InvalidArgument);
}

TEST_CASE("loss_and_gradients: zero at the minimum, mean reduction") {
    const Estimator est(tiny(TrunkVariant::StagedTransformer));
    const auto params = est.initialize(3);
    std::mt19937_64 rng(4);
    const auto in = random_input(est.config(), 2, rng);
    const Eigen::MatrixXd out = est.forward(params, in);
    const auto at_min = est.loss_and_gradients(params, in, out);
    CHECK(at_min.loss == 0.0);
    for (double g : at_min.gradients) CHECK(g == 0.0);

    const Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(8, 2);
    const auto single = est.loss_and_gradients(params, in, targets);
    EstimatorInput doubled;
    doubled.x_t.resize(8, 4);
    doubled.x_t << in.x_t, in.x_t;
    for (const auto& c : in.conditions) {
        Eigen::MatrixXd cc(8, 4);
        cc << c, c;
        doubled.conditions.push_back(cc);
    }
    doubled.t.resize(4);
    doubled.t << in.t, in.t;
    const auto twice = est.loss_and_gradients(params, doubled, Eigen::MatrixXd::Zero(8, 4));
    CHECK(twice.loss == doctest::Approx(single.loss).epsilon(1e-12));
    CHECK(single.loss >= 0.0);
}

TEST_CASE("gradients match central finite differences (mlp-baseline)") {
    const Estimator est(tiny(TrunkVariant::MlpBaseline));
    CHECK(worst_gradient_error(est, 11) <= 1e-4);
}

TEST_CASE("gradients match central finite differences (staged-transformer)") {
    const Estimator est(tiny(TrunkVariant::StagedTransformer));
    CHECK(worst_gradient_error(est, 12) <= 1e-4);
}
