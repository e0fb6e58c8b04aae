// tmclass command-line driver.
//
// Every subcommand reads one JSON experiment config (--config) and accepts
// --set key.path=value overrides. Exit codes: 0 ok, 1 other failure,
// 2 config error, 3 data/format error, 4 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tmclass/checkpoint.hpp"
#include "tmclass/config.hpp"
#include "tmclass/data.hpp"
#include "tmclass/errors.hpp"
#include "tmclass/evaluation.hpp"
#include "tmclass/training.hpp"

namespace fs = std::filesystem;
using namespace tmclass;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kNumericError = 4 };

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
};

ExperimentConfig load_config(const Common& c) {
    nlohmann::json j = nlohmann::json::object();
    if (!c.config_path.empty()) {
        std::ifstream in(c.config_path);
        if (!in) throw ConfigError("cannot open config file " + c.config_path);
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    }
    for (const auto& o : c.overrides) apply_override(j, o);
    return parse_experiment_config(j.dump());
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

fs::path output_dir(const ExperimentConfig& cfg) {
    const fs::path dir = cfg.paths.output_dir.empty() ? fs::path("tmclass_out") : cfg.paths.output_dir;
    fs::create_directories(dir);
    return dir;
}

void echo_config(const ExperimentConfig& cfg, const fs::path& dir) {
    write_text(dir / "effective_config.json", nlohmann::json(cfg).dump(2) + "\n");
}

const FeatureDataset& pick_split(const DatasetSplit& parts, const FeatureDataset& all, const std::string& which) {
    if (which == "train") return parts.train;
    if (which == "validation") return parts.validation;
    if (which == "test") return parts.test;
    if (which == "all") return all;
    throw ConfigError("unknown split '" + which + "' (train, validation, test, all)");
}

struct Model {
    Checkpoint checkpoint;
    std::unique_ptr<Estimator> estimator;
};

Model load_model(const ExperimentConfig& cfg) {
    if (cfg.paths.checkpoint.empty()) throw ConfigError("paths.checkpoint is not set");
    Model m;
    m.checkpoint = load_checkpoint(cfg.paths.checkpoint);
    m.estimator = std::make_unique<Estimator>(m.checkpoint.config);
    return m;
}

FeatureDataset load_dataset(const ExperimentConfig& cfg) {
    if (cfg.paths.dataset.empty()) throw ConfigError("paths.dataset is not set");
    return read_dataset(cfg.paths.dataset);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int run_gen_data(const Common& common, const std::string& out_path) {
    const auto cfg = load_config(common);
    const fs::path path = out_path.empty() ? cfg.paths.dataset : fs::path(out_path);
    if (path.empty()) throw ConfigError("no output path: set paths.dataset or pass --out");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const auto ds = generate_synthetic(cfg.synthetic);
    write_dataset(ds, path);
    std::cout << "wrote " << ds.size() << " records to " << path.string() << "\n" << summarize(ds);
    return kOk;
}

int run_train(const Common& common, bool resume) {
    const auto cfg = load_config(common);
    const auto ds = load_dataset(cfg);
    if (ds.dim() != cfg.estimator.dim || ds.num_condition_layers() != cfg.estimator.num_condition_layers) {
        throw ConfigError("estimator dim/layers do not match the dataset header");
    }
    if (cfg.paths.checkpoint.empty()) throw ConfigError("paths.checkpoint is not set");
    const auto parts = split(ds, cfg.split, cfg.seed);
    const auto codebook = build_codebook(ds.taxonomy(), ds.dim());
    const Estimator estimator(cfg.estimator);
    const fs::path dir = output_dir(cfg);
    echo_config(cfg, dir);

    TrainOptions opts;
    opts.checkpoint_path = cfg.paths.checkpoint;
    opts.validation_sampler = cfg.sampler;
    if (resume) {
        const auto ckpt = load_checkpoint(cfg.paths.checkpoint);
        if (!(ckpt.config == cfg.estimator)) throw ConfigError("checkpoint estimator config differs from config file");
        opts.resume_from = TrainState::restore(ckpt);
    }
    if (cfg.paths.checkpoint.has_parent_path()) fs::create_directories(cfg.paths.checkpoint.parent_path());
    std::ofstream metrics(dir / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);
    opts.metrics_log = &metrics;

    const auto result =
        train_loop(parts.train, parts.validation.size() ? &parts.validation : nullptr, cfg.train, estimator, codebook, opts);
    const auto& last = result.metrics.empty() ? MetricRecord{} : result.metrics.back();
    std::cout << "trained to step " << result.state.step << ", last loss " << last.loss;
    if (last.val_accuracy) std::cout << ", validation accuracy " << *last.val_accuracy;
    std::cout << "\ncheckpoint: " << cfg.paths.checkpoint.string() << "\n";
    return kOk;
}

int run_eval(const Common& common, const std::string& which) {
    const auto cfg = load_config(common);
    const auto ds = load_dataset(cfg);
    const auto model = load_model(cfg);
    const auto parts = split(ds, cfg.split, cfg.seed);
    const auto codebook = build_codebook(ds.taxonomy(), ds.dim());
    const auto report = evaluate(pick_split(parts, ds, which), make_predictor(*model.estimator, model.checkpoint.params),
                                 codebook, cfg.sampler);
    const fs::path dir = output_dir(cfg);
    echo_config(cfg, dir);
    write_text(dir / ("report_" + which + ".json"), report.to_json().dump(2) + "\n");
    write_text(dir / ("confusion_" + which + ".tsv"), report.confusion_tsv());
    std::cout << report.to_text();
    std::cerr << "wall time: " << report.wall_ms << " ms\n";
    return kOk;
}

int run_sweep(const Common& common, const std::string& which, const std::string& steps_csv) {
    const auto cfg = load_config(common);
    std::vector<std::size_t> steps;
    for (const auto& s : split_csv(steps_csv)) {
        try {
            steps.push_back(std::stoul(s));
        } catch (const std::exception&) {
            throw ConfigError("bad step count '" + s + "'");
        }
    }
    const auto ds = load_dataset(cfg);
    const auto model = load_model(cfg);
    const auto parts = split(ds, cfg.split, cfg.seed);
    const auto codebook = build_codebook(ds.taxonomy(), ds.dim());
    const auto rows = sweep_steps(pick_split(parts, ds, which),
                                  make_predictor(*model.estimator, model.checkpoint.params), codebook, cfg.sampler, steps);
    const fs::path dir = output_dir(cfg);
    echo_config(cfg, dir);
    write_text(dir / ("sweep_" + which + ".tsv"), sweep_table_tsv(rows));
    std::cout << "N\taccuracy\n";
    for (const auto& r : rows) std::cout << r.num_steps << "\t" << r.accuracy << "\n";
    return kOk;
}

int run_dump(const Common& common, const std::string& which, std::size_t record_index, const std::string& panels_csv) {
    const auto cfg = load_config(common);
    std::vector<double> panels;
    for (const auto& s : split_csv(panels_csv)) {
        try {
            panels.push_back(std::stod(s));
        } catch (const std::exception&) {
            throw ConfigError("bad panel time '" + s + "'");
        }
    }
    const auto ds = load_dataset(cfg);
    const auto model = load_model(cfg);
    const auto parts = split(ds, cfg.split, cfg.seed);
    const auto& part = pick_split(parts, ds, which);
    if (record_index >= part.size()) throw ConfigError("record index out of range for split '" + which + "'");
    const auto codebook = build_codebook(ds.taxonomy(), ds.dim());
    const auto dump = dump_trajectory(part[record_index], make_predictor(*model.estimator, model.checkpoint.params),
                                      codebook, cfg.sampler, panels);
    const fs::path dir = output_dir(cfg);
    echo_config(cfg, dir);
    const std::string stem = "trajectory_" + which + "_" + std::to_string(record_index);
    std::ostringstream full, panel_rows;
    write_trajectory(full, dump.trajectory);
    write_panels(panel_rows, dump);
    write_text(dir / (stem + ".tsv"), full.str());
    write_text(dir / (stem + "_panels.tsv"), panel_rows.str());
    std::cout << "predicted: " << codebook.taxonomy().label(dump.predicted) << "\n";
    for (const auto& p : dump.panels) {
        std::cout << "t=" << p.time << "\tcosine to target=" << p.cosine_to_target << "\n";
    }
    std::cout << "wrote " << (dir / (stem + ".tsv")).string() << "\n";
    return kOk;
}

int run_encode_taxonomy(const std::string& labels_csv, const std::string& dataset, std::size_t dim,
                        const std::string& out_path) {
    std::vector<std::string> labels;
    if (!dataset.empty()) {
        const auto ds = read_dataset(dataset);
        labels = ds.header().labels;
        if (dim == 0) dim = ds.dim();
    } else {
        labels = split_csv(labels_csv);
    }
    if (labels.empty()) throw ConfigError("give --labels or --dataset");
    if (dim == 0) throw ConfigError("give --dim");
    const auto codebook = build_codebook(ClassTaxonomy(labels), dim);
    const auto text = codebook.manifest_json() + "\n";
    if (out_path.empty()) {
        std::cout << text;
    } else {
        write_text(out_path, text);
    }
    return kOk;
}

int run_inspect(const std::string& path) {
    std::cout << summarize(read_dataset(path));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Classification by transporting features to sinusoidal class codewords"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", common.config_path, "JSON experiment config");
        sub->add_option("--set", common.overrides, "Override a config field, e.g. --set train.total_steps=100");
    };

    std::string out_path, which = "test", steps_csv = "1,2,4,10,20", panels_csv = "0.75,0.5,0.25,0.03";
    std::string labels_csv, dataset_path;
    std::size_t record_index = 0, dim = 0;
    bool resume = false;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic feature dataset");
    add_common(gen);
    gen->add_option("-o,--out", out_path, "Output feature file (default: paths.dataset)");

    auto* train = app.add_subcommand("train", "Train the target estimator");
    add_common(train);
    train->add_flag("--resume", resume, "Continue from paths.checkpoint");

    auto* eval = app.add_subcommand("eval", "Evaluate accuracy on a split");
    add_common(eval);
    eval->add_option("--split", which, "train | validation | test | all");

    auto* sweep = app.add_subcommand("sweep-steps", "Accuracy for several Euler step counts");
    add_common(sweep);
    sweep->add_option("--split", which, "train | validation | test | all");
    sweep->add_option("--steps", steps_csv, "Comma-separated step counts");

    auto* dump = app.add_subcommand("dump-trajectory", "Write the sampling trajectory of one record");
    add_common(dump);
    dump->add_option("--split", which, "train | validation | test | all");
    dump->add_option("--record", record_index, "Record index within the split");
    dump->add_option("--panels", panels_csv, "Comma-separated panel times");

    auto* enc = app.add_subcommand("encode-taxonomy", "Print the codebook manifest for a label set");
    enc->add_option("--labels", labels_csv, "Comma-separated class labels");
    enc->add_option("--dataset", dataset_path, "Take labels (and dim) from a feature file");
    enc->add_option("--dim", dim, "Codeword length L");
    enc->add_option("-o,--out", out_path, "Write the manifest here instead of stdout");

    auto* inspect = app.add_subcommand("inspect-dataset", "Print a feature file's header and class counts");
    inspect->add_option("dataset", dataset_path, "Feature file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_gen_data(common, out_path);
        if (train->parsed()) return run_train(common, resume);
        if (eval->parsed()) return run_eval(common, which);
        if (sweep->parsed()) return run_sweep(common, which, steps_csv);
        if (dump->parsed()) return run_dump(common, which, record_index, panels_csv);
        if (enc->parsed()) return run_encode_taxonomy(labels_csv, dataset_path, dim, out_path);
        if (inspect->parsed()) return run_inspect(dataset_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumericError;
    } catch (const InvalidArgument& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
