#include "tmclass/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include "tmclass/errors.hpp"

namespace tmclass {

namespace {

using nlohmann::json;

void only_keys(const json& j, std::initializer_list<const char*> allowed, const char* section) {
    if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
    }
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void to_json(json& j, const ScheduleParams& v) {
    j = json{{"k", v.k}, {"sigma", v.sigma}, {"t_eps", v.t_eps}, {"t_max", v.t_max}};
}

void from_json(const json& j, ScheduleParams& v) {
    only_keys(j, {"k", "sigma", "t_eps", "t_max"}, "schedule");
    read(j, "k", v.k);
    read(j, "sigma", v.sigma);
    read(j, "t_eps", v.t_eps);
    read(j, "t_max", v.t_max);
}

void to_json(json& j, const EstimatorConfig& v) {
    j = json{{"dim", v.dim},
             {"num_condition_layers", v.num_condition_layers},
             {"trunk", to_string(v.trunk)},
             {"trunk_depth", v.trunk_depth},
             {"trunk_width", v.trunk_width},
             {"num_heads", v.num_heads},
             {"num_tokens", v.num_tokens},
             {"ffn_multiplier", v.ffn_multiplier},
             {"time_embed_dim", v.time_embed_dim}};
}

void from_json(const json& j, EstimatorConfig& v) {
    only_keys(j,
              {"dim", "num_condition_layers", "trunk", "trunk_depth", "trunk_width", "num_heads", "num_tokens",
               "ffn_multiplier", "time_embed_dim"},
              "estimator");
    read(j, "dim", v.dim);
    read(j, "num_condition_layers", v.num_condition_layers);
    if (j.contains("trunk")) v.trunk = trunk_variant_from_string(j.at("trunk").get<std::string>());
    read(j, "trunk_depth", v.trunk_depth);
    read(j, "trunk_width", v.trunk_width);
    read(j, "num_heads", v.num_heads);
    read(j, "num_tokens", v.num_tokens);
    read(j, "ffn_multiplier", v.ffn_multiplier);
    read(j, "time_embed_dim", v.time_embed_dim);
}

void to_json(json& j, const TrainConfig& v) {
    j = json{{"batch_size", v.batch_size},
             {"total_steps", v.total_steps},
             {"learning_rate", v.learning_rate},
             {"seed", v.seed},
             {"optimizer", {{"beta1", v.optimizer.beta1}, {"beta2", v.optimizer.beta2}, {"epsilon", v.optimizer.epsilon}}},
             {"clip_norm", v.clip_norm},
             {"eval_every", v.eval_every},
             {"checkpoint_every", v.checkpoint_every}};
}

void from_json(const json& j, TrainConfig& v) {
    only_keys(j,
              {"batch_size", "total_steps", "learning_rate", "seed", "optimizer", "clip_norm", "eval_every",
               "checkpoint_every"},
              "train");
    read(j, "batch_size", v.batch_size);
    read(j, "total_steps", v.total_steps);
    read(j, "learning_rate", v.learning_rate);
    read(j, "seed", v.seed);
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        only_keys(o, {"beta1", "beta2", "epsilon"}, "train.optimizer");
        read(o, "beta1", v.optimizer.beta1);
        read(o, "beta2", v.optimizer.beta2);
        read(o, "epsilon", v.optimizer.epsilon);
    }
    read(j, "clip_norm", v.clip_norm);
    read(j, "eval_every", v.eval_every);
    read(j, "checkpoint_every", v.checkpoint_every);
}

void to_json(json& j, const SamplerConfig& v) {
    j = json{{"num_steps", v.num_steps}, {"record_trajectory", v.record_trajectory}};
}

void from_json(const json& j, SamplerConfig& v) {
    only_keys(j, {"num_steps", "record_trajectory"}, "sampler");
    read(j, "num_steps", v.num_steps);
    read(j, "record_trajectory", v.record_trajectory);
}

void to_json(json& j, const SyntheticSpec& v) {
    j = json{{"labels", v.labels},
             {"num_classes", v.num_classes},
             {"dim", v.dim},
             {"num_condition_layers", v.num_condition_layers},
             {"separation", v.separation},
             {"within_class_std", v.within_class_std},
             {"samples_per_class", v.samples_per_class},
             {"seed", v.seed}};
    if (!v.class_means.empty()) {
        json means = json::array();
        for (const auto& m : v.class_means) means.push_back(std::vector<double>(m.begin(), m.end()));
        j["class_means"] = std::move(means);
    }
}

void from_json(const json& j, SyntheticSpec& v) {
    only_keys(j,
              {"labels", "num_classes", "dim", "num_condition_layers", "separation", "within_class_std",
               "samples_per_class", "seed", "class_means"},
              "synthetic");
    read(j, "labels", v.labels);
    read(j, "num_classes", v.num_classes);
    read(j, "dim", v.dim);
    read(j, "num_condition_layers", v.num_condition_layers);
    read(j, "separation", v.separation);
    read(j, "within_class_std", v.within_class_std);
    read(j, "samples_per_class", v.samples_per_class);
    read(j, "seed", v.seed);
    if (j.contains("class_means")) {
        v.class_means.clear();
        for (const auto& row : j.at("class_means")) {
            const auto values = row.get<std::vector<double>>();
            v.class_means.push_back(Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
        }
    }
}

void to_json(json& j, const SplitFractions& v) {
    j = json{{"train", v.train}, {"validation", v.validation}, {"test", v.test}};
}

void from_json(const json& j, SplitFractions& v) {
    only_keys(j, {"train", "validation", "test"}, "split");
    read(j, "train", v.train);
    read(j, "validation", v.validation);
    read(j, "test", v.test);
}

void to_json(json& j, const ExperimentConfig& v) {
    j = json{{"seed", v.seed},
             {"paths",
              {{"dataset", v.paths.dataset.string()},
               {"checkpoint", v.paths.checkpoint.string()},
               {"output_dir", v.paths.output_dir.string()}}},
             {"schedule", v.schedule},
             {"estimator", v.estimator},
             {"train", v.train},
             {"sampler", v.sampler},
             {"synthetic", v.synthetic},
             {"split", v.split}};
}

void from_json(const json& j, ExperimentConfig& v) {
    only_keys(j, {"seed", "paths", "schedule", "estimator", "train", "sampler", "synthetic", "split"}, "config");
    read(j, "seed", v.seed);
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        only_keys(p, {"dataset", "checkpoint", "output_dir"}, "paths");
        if (p.contains("dataset")) v.paths.dataset = p.at("dataset").get<std::string>();
        if (p.contains("checkpoint")) v.paths.checkpoint = p.at("checkpoint").get<std::string>();
        if (p.contains("output_dir")) v.paths.output_dir = p.at("output_dir").get<std::string>();
    }
    read(j, "schedule", v.schedule);
    read(j, "estimator", v.estimator);
    read(j, "train", v.train);
    read(j, "sampler", v.sampler);
    read(j, "synthetic", v.synthetic);
    read(j, "split", v.split);
}

void ExperimentConfig::finalize() {
    train.schedule = schedule;
    sampler.schedule = schedule;
    try {
        schedule.validate();
        estimator.validate();
        train.validate();
        sampler.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
}

ExperimentConfig parse_experiment_config(const std::string& text) {
    ExperimentConfig cfg;
    try {
        json::parse(text).get_to(cfg);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    cfg.finalize();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_experiment_config(ss.str());
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("empty key in override " + assignment);
        if (!node->is_object()) *node = json::object();
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

}  // namespace tmclass
