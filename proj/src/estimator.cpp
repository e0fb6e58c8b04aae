#include "tmclass/estimator.hpp"

#include <cmath>
#include <random>

#include "tmclass/errors.hpp"

namespace tmclass {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMap = Eigen::Map<const Mat>;
using GMap = Eigen::Map<Mat>;

constexpr double kRmsEps = 1e-6;

Mat silu(const Mat& x) {
    return x.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
}

Mat silu_grad(const Mat& x) {
    return x.unaryExpr([](double v) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
    });
}

Vec softmax(const Vec& w) {
    Vec e = (w.array() - w.maxCoeff()).exp();
    return e / e.sum();
}

void softmax_rows(Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const double mx = m.row(r).maxCoeff();
        m.row(r) = (m.row(r).array() - mx).exp();
        m.row(r) /= m.row(r).sum();
    }
}

// Row-wise RMS normalization of an S x W matrix.
struct Normalized {
    Mat hat;
    Vec rms;
};

Normalized rms_normalize(const Mat& x) {
    Normalized n;
    n.rms = (x.array().square().rowwise().sum() / static_cast<double>(x.cols()) + kRmsEps).sqrt();
    n.hat = x.array().colwise() / n.rms.array();
    return n;
}

Mat modulate(const Mat& hat, const Vec& gamma, const Vec& beta) {
    Mat out = hat.array().rowwise() * (1.0 + gamma.array()).transpose();
    out.rowwise() += beta.transpose();
    return out;
}

// Backward through out = hat * (1 + gamma) + beta, hat = x / rms(x).
// Writes d gamma / d beta and returns d x.
Mat modulate_backward(const Mat& d_out, const Normalized& n, const Vec& gamma, Eigen::Ref<Vec> d_gamma,
                      Eigen::Ref<Vec> d_beta) {
    d_gamma = (d_out.array() * n.hat.array()).colwise().sum().transpose();
    d_beta = d_out.colwise().sum().transpose();
    const Mat d_hat = d_out.array().rowwise() * (1.0 + gamma.array()).transpose();
    const Vec proj = (d_hat.array() * n.hat.array()).rowwise().sum() / static_cast<double>(d_hat.cols());
    Mat dx = d_hat - (n.hat.array().colwise() * proj.array()).matrix();
    return dx.array().colwise() / n.rms.array();
}

// y = x W^T + b for row-major token matrices.
Mat linear_rows(const Mat& x, const CMap& w, const CMap& b) {
    Mat y = x * w.transpose();
    y.rowwise() += b.col(0).transpose();
    return y;
}

void check_finite(const Mat& m, const char* stage) {
    if (!m.allFinite()) throw NumericError(std::string("non-finite values after estimator stage: ") + stage);
}

}  // namespace

std::string to_string(TrunkVariant v) {
    return v == TrunkVariant::MlpBaseline ? "mlp-baseline" : "staged-transformer";
}

TrunkVariant trunk_variant_from_string(const std::string& s) {
    if (s == "mlp-baseline") return TrunkVariant::MlpBaseline;
    if (s == "staged-transformer") return TrunkVariant::StagedTransformer;
    throw InvalidArgument("unknown trunk variant '" + s + "' (expected mlp-baseline or staged-transformer)");
}

void EstimatorConfig::validate() const {
    if (dim == 0) throw InvalidArgument("estimator.dim must be > 0");
    if (num_condition_layers == 0) throw InvalidArgument("estimator.num_condition_layers must be >= 1");
    if (trunk_depth == 0) throw InvalidArgument("estimator.trunk_depth must be >= 1");
    if (trunk_width == 0) throw InvalidArgument("estimator.trunk_width must be > 0");
    if (time_embed_dim == 0 || time_embed_dim % 2 != 0) {
        throw InvalidArgument("estimator.time_embed_dim must be positive and even");
    }
    if (trunk == TrunkVariant::StagedTransformer) {
        if (num_tokens == 0 || dim % num_tokens != 0) {
            throw InvalidArgument("estimator.num_tokens must divide dim (" + std::to_string(dim) + ")");
        }
        if (num_heads == 0 || trunk_width % num_heads != 0) {
            throw InvalidArgument("estimator.num_heads must divide trunk_width");
        }
        if (ffn_multiplier == 0) throw InvalidArgument("estimator.ffn_multiplier must be >= 1");
    }
}

void ParamLayout::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) throw InvalidArgument("duplicate parameter tensor " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), rows, cols, total_});
    total_ += static_cast<std::size_t>(rows * cols);
}

const ParamLayout::Entry& ParamLayout::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("no parameter tensor named " + name);
    return entries_[it->second];
}

Vec timestep_embedding(double t, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) throw InvalidArgument("timestep embedding dim must be positive and even");
    if (!(t >= 0.0 && t <= 1.0)) throw OutOfDomain("timestep embedding: t must lie in [0, 1]");
    Vec e(static_cast<Eigen::Index>(dim));
    for (std::size_t j = 0; 2 * j < dim; ++j) {
        const double freq = std::pow(10000.0, -static_cast<double>(2 * j) / static_cast<double>(dim));
        e[static_cast<Eigen::Index>(2 * j)] = std::sin(t * freq);
        e[static_cast<Eigen::Index>(2 * j + 1)] = std::cos(t * freq);
    }
    return e;
}

Vec fuse_conditions(const Eigen::Ref<const Mat>& condition_stack, const Eigen::Ref<const Vec>& layer_weights) {
    if (condition_stack.rows() != layer_weights.size()) {
        throw InvalidArgument("condition stack has " + std::to_string(condition_stack.rows()) + " layers, got " +
                              std::to_string(layer_weights.size()) + " layer weights");
    }
    return condition_stack.transpose() * softmax(layer_weights);
}

Estimator::Estimator(EstimatorConfig config) : config_(config) {
    config_.validate();
    const auto L = static_cast<Eigen::Index>(config_.dim);
    const auto C = static_cast<Eigen::Index>(config_.num_condition_layers);
    const auto W = static_cast<Eigen::Index>(config_.trunk_width);
    const auto E = static_cast<Eigen::Index>(config_.time_embed_dim);

    layout_.add("fusion.layer_weights", C, 1);
    layout_.add("fusion.proj.weight", L, 2 * L);
    layout_.add("fusion.proj.bias", L, 1);

    if (config_.trunk == TrunkVariant::MlpBaseline) {
        Eigen::Index in = L + E;
        for (std::size_t i = 0; i < config_.trunk_depth; ++i) {
            layout_.add("trunk.mlp." + std::to_string(i) + ".weight", W, in);
            layout_.add("trunk.mlp." + std::to_string(i) + ".bias", W, 1);
            in = W;
        }
        layout_.add("trunk.out.weight", L, W);
        layout_.add("trunk.out.bias", L, 1);
    } else {
        const auto S = static_cast<Eigen::Index>(config_.num_tokens);
        const auto D = L / S;
        const auto F = static_cast<Eigen::Index>(config_.ffn_multiplier) * W;
        layout_.add("trunk.in_proj.weight", W, D);
        layout_.add("trunk.in_proj.bias", W, 1);
        layout_.add("trunk.pos_embed", S, W);
        for (std::size_t j = 0; j < config_.trunk_depth; ++j) {
            const std::string p = "trunk.blocks." + std::to_string(j) + ".";
            layout_.add(p + "modulation.weight", 4 * W, E);
            layout_.add(p + "modulation.bias", 4 * W, 1);
            for (const char* m : {"q", "k", "v", "o"}) {
                layout_.add(p + "attn." + m + ".weight", W, W);
                layout_.add(p + "attn." + m + ".bias", W, 1);
            }
            layout_.add(p + "ffn.up.weight", F, W);
            layout_.add(p + "ffn.up.bias", F, 1);
            layout_.add(p + "ffn.down.weight", W, F);
            layout_.add(p + "ffn.down.bias", W, 1);
        }
        layout_.add("trunk.final_modulation.weight", 2 * W, E);
        layout_.add("trunk.final_modulation.bias", 2 * W, 1);
        layout_.add("trunk.out_proj.weight", D, W);
        layout_.add("trunk.out_proj.bias", D, 1);
    }
}

std::size_t analytic_parameter_count(const EstimatorConfig& c) {
    c.validate();
    const std::size_t L = c.dim, C = c.num_condition_layers, W = c.trunk_width, E = c.time_embed_dim;
    const std::size_t fusion = C + 2 * L * L + L;
    if (c.trunk == TrunkVariant::MlpBaseline) {
        return fusion + (L + E) * W + W + (c.trunk_depth - 1) * (W * W + W) + W * L + L;
    }
    const std::size_t S = c.num_tokens, D = L / S, F = c.ffn_multiplier * W;
    const std::size_t block = (4 * W * E + 4 * W) + 4 * (W * W + W) + (F * W + F) + (W * F + W);
    return fusion + (W * D + W) + S * W + c.trunk_depth * block + (2 * W * E + 2 * W) + (D * W + D);
}

EstimatorParams Estimator::initialize(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    EstimatorParams p;
    p.values.assign(layout_.total(), 0.0f);
    auto ends_with = [](const std::string& s, const std::string& suffix) {
        return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    for (const auto& e : layout_.entries()) {
        double bound = 0.0;
        if (e.name == "trunk.pos_embed") {
            bound = 0.02;
        } else if (ends_with(e.name, ".weight") && e.name.find("modulation") == std::string::npos) {
            bound = 1.0 / std::sqrt(static_cast<double>(e.cols));
        }
        if (bound == 0.0) continue;  // biases, layer weights and modulation maps start at zero
        std::uniform_real_distribution<double> u(-bound, bound);
        for (std::size_t i = 0; i < e.size(); ++i) p.values[e.offset + i] = static_cast<float>(u(rng));
    }
    return p;
}

struct Estimator::Workspace {
    Vec layer_probs;
    Mat concat;  // 2L x B
    // mlp-baseline
    std::vector<Mat> mlp_in;   // depth + 1
    std::vector<Mat> mlp_pre;  // depth
    // staged-transformer, one entry per sample
    struct Block {
        Mat x_in;
        Normalized n1;
        Vec mod;
        Mat h1;  // modulated norm1 output
        Mat q, k, v;
        std::vector<Mat> attn;
        Mat attn_out;
        Mat x_mid;
        Normalized n2;
        Mat h2;
        Mat ffn_pre;
        Mat ffn_act;
    };
    struct Sample {
        Vec temb;
        Mat tokens;
        std::vector<Block> blocks;
        Normalized nf;
        Vec fmod;
        Mat hf;
    };
    std::vector<Sample> samples;
};

void Estimator::check_input(const EstimatorInput& in) const {
    const auto L = static_cast<Eigen::Index>(config_.dim);
    const Eigen::Index B = in.x_t.cols();
    if (B == 0) throw InvalidArgument("estimator batch is empty");
    if (in.x_t.rows() != L) throw InvalidArgument("x_t has " + std::to_string(in.x_t.rows()) + " rows, expected L");
    if (in.conditions.size() != config_.num_condition_layers) {
        throw InvalidArgument("expected " + std::to_string(config_.num_condition_layers) + " condition layers, got " +
                              std::to_string(in.conditions.size()));
    }
    for (const auto& c : in.conditions) {
        if (c.rows() != L || c.cols() != B) throw InvalidArgument("condition layer shape mismatch");
    }
    if (in.t.size() != B) throw InvalidArgument("time vector length does not match batch size");
    if (!in.x_t.allFinite()) throw NumericError("non-finite values in estimator input x_t");
    for (const auto& c : in.conditions) {
        if (!c.allFinite()) throw NumericError("non-finite values in estimator input condition stack");
    }
    for (Eigen::Index b = 0; b < B; ++b) {
        if (!(in.t[b] >= 0.0 && in.t[b] <= 1.0)) throw OutOfDomain("estimator time must lie in [0, 1]");
    }
}

Mat Estimator::run(std::span<const double> params, const EstimatorInput& in, Workspace* ws) const {
    if (params.size() != layout_.total()) throw InvalidArgument("parameter buffer size does not match layout");
    check_input(in);
    auto P = [&](const std::string& name) {
        const auto& e = layout_.at(name);
        return CMap(params.data() + e.offset, e.rows, e.cols);
    };
    const auto L = static_cast<Eigen::Index>(config_.dim);
    const Eigen::Index B = in.x_t.cols();

    // stage 1: fused condition
    const Vec probs = softmax(P("fusion.layer_weights").col(0));
    Mat fused = Mat::Zero(L, B);
    for (std::size_t c = 0; c < in.conditions.size(); ++c) fused += probs[static_cast<Eigen::Index>(c)] * in.conditions[c];

    // stage 2: [x_t; x_c] -> L
    Mat concat(2 * L, B);
    concat << in.x_t, fused;
    Mat h = P("fusion.proj.weight") * concat;
    h.colwise() += P("fusion.proj.bias").col(0);
    check_finite(h, "fusion projection");
    if (ws) {
        ws->layer_probs = probs;
        ws->concat = std::move(concat);
    }

    const auto E = static_cast<Eigen::Index>(config_.time_embed_dim);
    if (config_.trunk == TrunkVariant::MlpBaseline) {
        Mat temb(E, B);
        for (Eigen::Index b = 0; b < B; ++b) temb.col(b) = timestep_embedding(in.t[b], config_.time_embed_dim);
        Mat x(L + E, B);
        x << h, temb;
        if (ws) {
            ws->mlp_in.clear();
            ws->mlp_pre.clear();
        }
        for (std::size_t i = 0; i < config_.trunk_depth; ++i) {
            const std::string p = "trunk.mlp." + std::to_string(i) + ".";
            Mat pre = P(p + "weight") * x;
            pre.colwise() += P(p + "bias").col(0);
            Mat next = silu(pre);
            if (ws) {
                ws->mlp_in.push_back(std::move(x));
                ws->mlp_pre.push_back(std::move(pre));
            }
            x = std::move(next);
        }
        Mat out = P("trunk.out.weight") * x;
        out.colwise() += P("trunk.out.bias").col(0);
        if (ws) ws->mlp_in.push_back(std::move(x));
        check_finite(out, "trunk");
        return out;
    }

    const auto S = static_cast<Eigen::Index>(config_.num_tokens);
    const Eigen::Index D = L / S;
    const auto W = static_cast<Eigen::Index>(config_.trunk_width);
    const auto H = static_cast<Eigen::Index>(config_.num_heads);
    const Eigen::Index dh = W / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat out(L, B);
    if (ws) ws->samples.assign(static_cast<std::size_t>(B), {});
    for (Eigen::Index b = 0; b < B; ++b) {
        Workspace::Sample local;
        Workspace::Sample& sc = ws ? ws->samples[static_cast<std::size_t>(b)] : local;
        sc.temb = timestep_embedding(in.t[b], config_.time_embed_dim);
        sc.tokens = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            h.col(b).data(), S, D);
        Mat x = linear_rows(sc.tokens, P("trunk.in_proj.weight"), P("trunk.in_proj.bias")) + P("trunk.pos_embed");
        sc.blocks.resize(config_.trunk_depth);
        for (std::size_t j = 0; j < config_.trunk_depth; ++j) {
            const std::string p = "trunk.blocks." + std::to_string(j) + ".";
            auto& blk = sc.blocks[j];
            blk.mod = P(p + "modulation.weight") * sc.temb + P(p + "modulation.bias").col(0);
            blk.x_in = x;
            blk.n1 = rms_normalize(x);
            blk.h1 = modulate(blk.n1.hat, blk.mod.segment(0, W), blk.mod.segment(W, W));
            blk.q = linear_rows(blk.h1, P(p + "attn.q.weight"), P(p + "attn.q.bias"));
            blk.k = linear_rows(blk.h1, P(p + "attn.k.weight"), P(p + "attn.k.bias"));
            blk.v = linear_rows(blk.h1, P(p + "attn.v.weight"), P(p + "attn.v.bias"));
            blk.attn.resize(static_cast<std::size_t>(H));
            blk.attn_out.resize(S, W);
            for (Eigen::Index hd = 0; hd < H; ++hd) {
                Mat a = blk.q.middleCols(hd * dh, dh) * blk.k.middleCols(hd * dh, dh).transpose() * scale;
                softmax_rows(a);
                blk.attn_out.middleCols(hd * dh, dh) = a * blk.v.middleCols(hd * dh, dh);
                blk.attn[static_cast<std::size_t>(hd)] = std::move(a);
            }
            blk.x_mid = x + linear_rows(blk.attn_out, P(p + "attn.o.weight"), P(p + "attn.o.bias"));
            blk.n2 = rms_normalize(blk.x_mid);
            blk.h2 = modulate(blk.n2.hat, blk.mod.segment(2 * W, W), blk.mod.segment(3 * W, W));
            blk.ffn_pre = linear_rows(blk.h2, P(p + "ffn.up.weight"), P(p + "ffn.up.bias"));
            blk.ffn_act = silu(blk.ffn_pre);
            x = blk.x_mid + linear_rows(blk.ffn_act, P(p + "ffn.down.weight"), P(p + "ffn.down.bias"));
        }
        sc.fmod = P("trunk.final_modulation.weight") * sc.temb + P("trunk.final_modulation.bias").col(0);
        sc.nf = rms_normalize(x);
        sc.hf = modulate(sc.nf.hat, sc.fmod.segment(0, W), sc.fmod.segment(W, W));
        const Mat y = linear_rows(sc.hf, P("trunk.out_proj.weight"), P("trunk.out_proj.bias"));  // S x D
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out.col(b).data(), S, D) = y;
    }
    check_finite(out, "trunk");
    return out;
}

void Estimator::backward(std::span<const double> params, const EstimatorInput& in, const Workspace& ws,
                         const Mat& d_out, std::span<double> grads) const {
    auto P = [&](const std::string& name) {
        const auto& e = layout_.at(name);
        return CMap(params.data() + e.offset, e.rows, e.cols);
    };
    auto G = [&](const std::string& name) {
        const auto& e = layout_.at(name);
        return GMap(grads.data() + e.offset, e.rows, e.cols);
    };
    const auto L = static_cast<Eigen::Index>(config_.dim);
    const Eigen::Index B = d_out.cols();
    Mat d_h(L, B);

    if (config_.trunk == TrunkVariant::MlpBaseline) {
        const std::size_t depth = config_.trunk_depth;
        G("trunk.out.weight") += d_out * ws.mlp_in[depth].transpose();
        G("trunk.out.bias") += d_out.rowwise().sum();
        Mat d_x = P("trunk.out.weight").transpose() * d_out;
        for (std::size_t i = depth; i-- > 0;) {
            const std::string p = "trunk.mlp." + std::to_string(i) + ".";
            const Mat d_pre = d_x.cwiseProduct(silu_grad(ws.mlp_pre[i]));
            G(p + "weight") += d_pre * ws.mlp_in[i].transpose();
            G(p + "bias") += d_pre.rowwise().sum();
            d_x = P(p + "weight").transpose() * d_pre;
        }
        d_h = d_x.topRows(L);
    } else {
        const auto S = static_cast<Eigen::Index>(config_.num_tokens);
        const Eigen::Index D = L / S;
        const auto W = static_cast<Eigen::Index>(config_.trunk_width);
        const auto H = static_cast<Eigen::Index>(config_.num_heads);
        const Eigen::Index dh = W / H;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

        for (Eigen::Index b = 0; b < B; ++b) {
            const auto& sc = ws.samples[static_cast<std::size_t>(b)];
            const Mat d_y = Eigen::Map<const RowMat>(d_out.col(b).data(), S, D);
            G("trunk.out_proj.weight") += d_y.transpose() * sc.hf;
            G("trunk.out_proj.bias") += d_y.colwise().sum().transpose();
            const Mat d_hf = d_y * P("trunk.out_proj.weight");
            Vec d_fmod(2 * W);
            Mat d_x = modulate_backward(d_hf, sc.nf, sc.fmod.segment(0, W), d_fmod.segment(0, W),
                                        d_fmod.segment(W, W));
            G("trunk.final_modulation.weight") += d_fmod * sc.temb.transpose();
            G("trunk.final_modulation.bias") += d_fmod;

            for (std::size_t j = config_.trunk_depth; j-- > 0;) {
                const std::string p = "trunk.blocks." + std::to_string(j) + ".";
                const auto& blk = sc.blocks[j];
                Vec d_mod(4 * W);

                // x_out = x_mid + ffn(h2)
                G(p + "ffn.down.weight") += d_x.transpose() * blk.ffn_act;
                G(p + "ffn.down.bias") += d_x.colwise().sum().transpose();
                const Mat d_pre = (d_x * P(p + "ffn.down.weight")).cwiseProduct(silu_grad(blk.ffn_pre));
                G(p + "ffn.up.weight") += d_pre.transpose() * blk.h2;
                G(p + "ffn.up.bias") += d_pre.colwise().sum().transpose();
                const Mat d_h2 = d_pre * P(p + "ffn.up.weight");
                const Mat d_x_mid = d_x + modulate_backward(d_h2, blk.n2, blk.mod.segment(2 * W, W),
                                                            d_mod.segment(2 * W, W), d_mod.segment(3 * W, W));

                // x_mid = x_in + attn(h1)
                G(p + "attn.o.weight") += d_x_mid.transpose() * blk.attn_out;
                G(p + "attn.o.bias") += d_x_mid.colwise().sum().transpose();
                const Mat d_attn_out = d_x_mid * P(p + "attn.o.weight");
                Mat d_q(S, W), d_k(S, W), d_v(S, W);
                for (Eigen::Index hd = 0; hd < H; ++hd) {
                    const Mat& a = blk.attn[static_cast<std::size_t>(hd)];
                    const auto d_o = d_attn_out.middleCols(hd * dh, dh);
                    const Mat d_a = d_o * blk.v.middleCols(hd * dh, dh).transpose();
                    d_v.middleCols(hd * dh, dh) = a.transpose() * d_o;
                    const Vec row_dot = (d_a.array() * a.array()).rowwise().sum();
                    const Mat d_s = a.array() * (d_a.array().colwise() - row_dot.array());
                    d_q.middleCols(hd * dh, dh) = d_s * blk.k.middleCols(hd * dh, dh) * scale;
                    d_k.middleCols(hd * dh, dh) = d_s.transpose() * blk.q.middleCols(hd * dh, dh) * scale;
                }
                Mat d_h1 = Mat::Zero(S, W);
                const std::pair<const char*, const Mat*> qkv[] = {{"q", &d_q}, {"k", &d_k}, {"v", &d_v}};
                for (const auto& [name, grad] : qkv) {
                    const std::string w = p + "attn." + name;
                    G(w + ".weight") += grad->transpose() * blk.h1;
                    G(w + ".bias") += grad->colwise().sum().transpose();
                    d_h1 += *grad * P(w + ".weight");
                }
                d_x = d_x_mid + modulate_backward(d_h1, blk.n1, blk.mod.segment(0, W), d_mod.segment(0, W),
                                                  d_mod.segment(W, W));
                G(p + "modulation.weight") += d_mod * sc.temb.transpose();
                G(p + "modulation.bias") += d_mod;
            }
            G("trunk.pos_embed") += d_x;
            G("trunk.in_proj.weight") += d_x.transpose() * sc.tokens;
            G("trunk.in_proj.bias") += d_x.colwise().sum().transpose();
            const Mat d_tokens = d_x * P("trunk.in_proj.weight");  // S x D
            Eigen::Map<RowMat>(d_h.col(b).data(), S, D) = d_tokens;
        }
    }

    // stage 2
    G("fusion.proj.weight") += d_h * ws.concat.transpose();
    G("fusion.proj.bias") += d_h.rowwise().sum();
    const Mat d_fused = (P("fusion.proj.weight").transpose() * d_h).bottomRows(L);

    // stage 1: softmax-weighted sum
    const Vec& probs = ws.layer_probs;
    Vec d_probs(probs.size());
    for (Eigen::Index c = 0; c < probs.size(); ++c) {
        d_probs[c] = d_fused.cwiseProduct(in.conditions[static_cast<std::size_t>(c)]).sum();
    }
    const double mix = probs.dot(d_probs);
    G("fusion.layer_weights").col(0) += (probs.array() * (d_probs.array() - mix)).matrix();
}

Mat Estimator::forward(std::span<const double> params, const EstimatorInput& input) const {
    return run(params, input, nullptr);
}

Mat Estimator::forward(const EstimatorParams& params, const EstimatorInput& input) const {
    const std::vector<double> p(params.values.begin(), params.values.end());
    return run(p, input, nullptr);
}

Vec Estimator::forward(const EstimatorParams& params, const Eigen::Ref<const Vec>& x_t,
                       const Eigen::Ref<const Mat>& condition_stack, double t) const {
    EstimatorInput in;
    in.x_t = x_t;
    for (Eigen::Index c = 0; c < condition_stack.rows(); ++c) in.conditions.push_back(condition_stack.row(c).transpose());
    in.t = Vec::Constant(1, t);
    return forward(params, in).col(0);
}

LossAndGradients Estimator::loss_and_gradients(std::span<const double> params, const EstimatorInput& input,
                                               const Eigen::Ref<const Mat>& targets) const {
    if (input.x_t.cols() == 0) throw InvalidArgument("loss_and_gradients: batch is empty");
    if (targets.rows() != input.x_t.rows() || targets.cols() != input.x_t.cols()) {
        throw InvalidArgument("targets shape does not match the batch");
    }
    Workspace ws;
    const Mat out = run(params, input, &ws);
    const Mat diff = out - targets;
    const auto B = static_cast<double>(diff.cols());
    LossAndGradients r;
    r.loss = diff.squaredNorm() / B;
    r.gradients.assign(layout_.total(), 0.0);
    backward(params, input, ws, (2.0 / B) * diff, r.gradients);
    return r;
}

LossAndGradients Estimator::loss_and_gradients(const EstimatorParams& params, const EstimatorInput& input,
                                               const Eigen::Ref<const Mat>& targets) const {
    const std::vector<double> p(params.values.begin(), params.values.end());
    return loss_and_gradients(std::span<const double>(p), input, targets);
}

}  // namespace tmclass
