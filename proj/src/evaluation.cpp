#include "tmclass/evaluation.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "tmclass/errors.hpp"

namespace tmclass {

double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
    const double denom = a.norm() * b.norm();
    if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return a.dot(b) / denom;
}

EvalReport make_report(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted,
                       const std::vector<std::string>& labels) {
    if (truth.size() != predicted.size()) throw InvalidArgument("truth and prediction counts differ");
    const std::size_t B = labels.size();
    EvalReport r;
    r.labels = labels;
    r.count = truth.size();
    r.confusion.assign(B, std::vector<std::size_t>(B, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= B || predicted[i] >= B) throw InvalidArgument("class index out of range in report");
        ++r.confusion[truth[i]][predicted[i]];
    }
    std::size_t trace = 0;
    r.precision.assign(B, 0.0);
    r.recall.assign(B, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        trace += r.confusion[b][b];
        std::size_t row = 0, col = 0;
        for (std::size_t c = 0; c < B; ++c) {
            row += r.confusion[b][c];
            col += r.confusion[c][b];
        }
        if (col > 0) r.precision[b] = static_cast<double>(r.confusion[b][b]) / static_cast<double>(col);
        if (row > 0) r.recall[b] = static_cast<double>(r.confusion[b][b]) / static_cast<double>(row);
    }
    r.accuracy = r.count ? static_cast<double>(trace) / static_cast<double>(r.count) : 0.0;
    return r;
}

std::string EvalReport::to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "samples: " << count << "\naccuracy: " << accuracy << "\n";
    os << "class\tprecision\trecall\n";
    for (std::size_t b = 0; b < labels.size(); ++b) {
        os << labels[b] << "\t" << precision[b] << "\t" << recall[b] << "\n";
    }
    os << "confusion (rows = true, cols = predicted):\n" << confusion_tsv();
    return os.str();
}

nlohmann::json EvalReport::to_json() const {
    return nlohmann::json{{"labels", labels},       {"accuracy", accuracy},   {"precision", precision},
                          {"recall", recall},       {"confusion", confusion}, {"count", count}};
}

std::string EvalReport::confusion_tsv() const {
    std::ostringstream os;
    os << "true\\pred";
    for (const auto& l : labels) os << "\t" << l;
    os << "\n";
    for (std::size_t b = 0; b < labels.size(); ++b) {
        os << labels[b];
        for (auto v : confusion[b]) os << "\t" << v;
        os << "\n";
    }
    return os.str();
}

EvalReport evaluate(const FeatureDataset& split, const TargetPredictor& predictor, const TaxonomyCodebook& codebook,
                    const SamplerConfig& sampler) {
    if (!split.fully_labeled()) throw InvalidArgument("evaluate: split contains unlabeled records");
    const auto started = std::chrono::steady_clock::now();
    SamplerConfig cfg = sampler;
    cfg.record_trajectory = false;
    const auto results = infer_batch(split.records(), predictor, codebook, cfg);
    std::vector<std::size_t> truth, predicted;
    truth.reserve(results.size());
    predicted.reserve(results.size());
    for (std::size_t i = 0; i < results.size(); ++i) {
        truth.push_back(*split[i].label);
        predicted.push_back(results[i].predicted);
    }
    auto report = make_report(truth, predicted, codebook.taxonomy().labels());
    report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return report;
}

std::vector<SweepRow> sweep_steps(const FeatureDataset& split, const TargetPredictor& predictor,
                                  const TaxonomyCodebook& codebook, const SamplerConfig& sampler,
                                  const std::vector<std::size_t>& step_counts) {
    if (step_counts.empty()) throw InvalidArgument("sweep_steps: no step counts given");
    std::vector<SweepRow> rows;
    for (std::size_t n : step_counts) {
        if (n == 0) throw InvalidArgument("sweep_steps: step counts must be >= 1");
        SamplerConfig cfg = sampler;
        cfg.num_steps = n;
        rows.push_back({n, evaluate(split, predictor, codebook, cfg).accuracy});
    }
    return rows;
}

std::string sweep_table_tsv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "num_steps\taccuracy\n" << std::setprecision(9);
    for (const auto& r : rows) os << r.num_steps << "\t" << r.accuracy << "\n";
    return os.str();
}

TrajectoryDump dump_trajectory(const FeatureRecord& record, const TargetPredictor& predictor,
                               const TaxonomyCodebook& codebook, const SamplerConfig& sampler,
                               const std::vector<double>& panel_times) {
    const auto& sched = sampler.schedule;
    for (double t : panel_times) {
        if (!(t >= sched.t_eps - 1e-12 && t <= sched.t_max + 1e-12)) {
            throw InvalidArgument("panel time " + std::to_string(t) + " outside [t_eps, t_max]");
        }
    }
    SamplerConfig cfg = sampler;
    cfg.record_trajectory = true;
    auto inference = infer_class(record, predictor, codebook, cfg);

    TrajectoryDump dump;
    dump.trajectory = std::move(*inference.trajectory);
    dump.predicted = inference.predicted;
    if (record.label) dump.target = codebook.codeword(*record.label);
    const auto& times = dump.trajectory.times;
    for (double req : panel_times) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < times.size(); ++i) {
            if (std::abs(times[i] - req) < std::abs(times[best] - req)) best = i;
        }
        TrajectoryPanel p;
        p.requested_time = req;
        p.index = best;
        p.time = times[best];
        p.cosine_to_target = dump.target ? cosine_similarity(dump.trajectory.states[best], *dump.target)
                                         : std::numeric_limits<double>::quiet_NaN();
        dump.panels.push_back(p);
    }
    return dump;
}

namespace {

void write_values(std::ostream& out, const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) out << '\t' << v[i];
}

}  // namespace

void write_trajectory(std::ostream& out, const Trajectory& trajectory) {
    const auto old = out.precision(9);
    for (std::size_t i = 0; i < trajectory.size(); ++i) {
        out << trajectory.times[i];
        write_values(out, trajectory.states[i]);
        out << '\n';
    }
    out.precision(old);
}

void write_panels(std::ostream& out, const TrajectoryDump& dump) {
    const auto old = out.precision(9);
    for (const auto& p : dump.panels) {
        out << "panel\t" << p.requested_time << '\t' << p.time << '\t' << p.cosine_to_target;
        write_values(out, dump.trajectory.states[p.index]);
        out << '\n';
    }
    if (dump.target) {
        out << "target\tnan\tnan\t1";
        write_values(out, *dump.target);
        out << '\n';
    }
    out.precision(old);
}

}  // namespace tmclass
