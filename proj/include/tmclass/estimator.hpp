#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace tmclass {

enum class TrunkVariant { MlpBaseline, StagedTransformer };

std::string to_string(TrunkVariant v);
TrunkVariant trunk_variant_from_string(const std::string& s);

struct EstimatorConfig {
    std::size_t dim = 64;                  // L
    std::size_t num_condition_layers = 3;  // C
    TrunkVariant trunk = TrunkVariant::MlpBaseline;
    std::size_t trunk_depth = 2;
    std::size_t trunk_width = 128;
    std::size_t num_heads = 4;    // staged-transformer only
    std::size_t num_tokens = 8;   // staged-transformer only; must divide dim
    std::size_t ffn_multiplier = 4;  // staged-transformer feed-forward width = multiplier * trunk_width
    std::size_t time_embed_dim = 32;

    void validate() const;
    friend bool operator==(const EstimatorConfig&, const EstimatorConfig&) = default;
};

/// Named, shaped slices of the flat parameter buffer. Tensors are column-major.
class ParamLayout {
public:
    struct Entry {
        std::string name;
        Eigen::Index rows;
        Eigen::Index cols;
        std::size_t offset;
        std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
    };

    void add(std::string name, Eigen::Index rows, Eigen::Index cols);
    const Entry& at(const std::string& name) const;
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::size_t total() const noexcept { return total_; }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    std::size_t total_ = 0;
};

/// Trainable parameters as a flat float32 buffer, ordered by the estimator's ParamLayout.
struct EstimatorParams {
    std::vector<float> values;
    friend bool operator==(const EstimatorParams&, const EstimatorParams&) = default;
};

/// Column-batched estimator input: column b of each matrix is one sample.
struct EstimatorInput {
    Eigen::MatrixXd x_t;                      // L x B
    std::vector<Eigen::MatrixXd> conditions;  // C entries, each L x B
    Eigen::VectorXd t;                        // B

    Eigen::Index batch_size() const { return x_t.cols(); }
};

struct LossAndGradients {
    double loss = 0.0;
    std::vector<double> gradients;  // same layout as the parameters
};

/// Sinusoidal timestep embedding: [2j] = sin(t / 10000^(2j/dim)), [2j+1] = cos(same).
Eigen::VectorXd timestep_embedding(double t, std::size_t dim);

/// softmax(layer_weights)-weighted sum of the rows of the C x L condition stack.
Eigen::VectorXd fuse_conditions(const Eigen::Ref<const Eigen::MatrixXd>& condition_stack,
                                const Eigen::Ref<const Eigen::VectorXd>& layer_weights);

/// Target estimator x_theta(x_t, X_c, t):
///   1. softmax-weighted fusion of the condition layers into x_c
///   2. affine projection of [x_t; x_c] from 2L to L
///   3. trunk (mlp-baseline or staged transformer with adaptive RMS-norm) back to L
class Estimator {
public:
    explicit Estimator(EstimatorConfig config);

    const EstimatorConfig& config() const noexcept { return config_; }
    const ParamLayout& layout() const noexcept { return layout_; }
    std::size_t parameter_count() const noexcept { return layout_.total(); }

    /// Fan-in scaled uniform weights, zero biases, equal layer weights, identity modulation.
    EstimatorParams initialize(std::uint64_t seed) const;

    Eigen::MatrixXd forward(const EstimatorParams& params, const EstimatorInput& input) const;
    Eigen::MatrixXd forward(std::span<const double> params, const EstimatorInput& input) const;

    /// Single sample; condition_stack is C x L.
    Eigen::VectorXd forward(const EstimatorParams& params, const Eigen::Ref<const Eigen::VectorXd>& x_t,
                            const Eigen::Ref<const Eigen::MatrixXd>& condition_stack, double t) const;

    /// loss = mean over the batch of ||x_theta - x0||^2, with exact gradients.
    LossAndGradients loss_and_gradients(const EstimatorParams& params, const EstimatorInput& input,
                                        const Eigen::Ref<const Eigen::MatrixXd>& targets) const;
    LossAndGradients loss_and_gradients(std::span<const double> params, const EstimatorInput& input,
                                        const Eigen::Ref<const Eigen::MatrixXd>& targets) const;

private:
    struct Workspace;

    Eigen::MatrixXd run(std::span<const double> params, const EstimatorInput& input, Workspace* ws) const;
    void backward(std::span<const double> params, const EstimatorInput& input, const Workspace& ws,
                  const Eigen::MatrixXd& d_out, std::span<double> grads) const;

    void check_input(const EstimatorInput& input) const;

    EstimatorConfig config_;
    ParamLayout layout_;
};

/// Parameter count from the configuration alone (no layout construction).
std::size_t analytic_parameter_count(const EstimatorConfig& config);

}  // namespace tmclass
