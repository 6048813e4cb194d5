#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "milpool/data.hpp"
#include "milpool/model.hpp"
#include "milpool/train.hpp"

namespace milpool {

// ---------------------------------------------------------------------------
// Experiment configuration (the CLI's --config document)
// ---------------------------------------------------------------------------

enum class DataSource { metal_balls, task_bags, csv, musk };

inline const char* to_string(DataSource s) {
    switch (s) {
        case DataSource::metal_balls: return "metal_balls";
        case DataSource::task_bags: return "task_bags";
        case DataSource::csv: return "csv";
        case DataSource::musk: return "musk";
    }
    return "?";
}

inline DataSource data_source_from_string(const std::string& s) {
    if (s == "metal_balls") return DataSource::metal_balls;
    if (s == "task_bags") return DataSource::task_bags;
    if (s == "csv") return DataSource::csv;
    if (s == "musk") return DataSource::musk;
    throw std::invalid_argument("unknown dataset source '" + s + "'");
}

struct SplitSpec {
    // each entry is either an absolute bag count (> 1) or a fraction of the
    // corpus (<= 1); defaults reproduce the 600/150/150 proportions
    double train = 2.0 / 3.0;
    double val = 1.0 / 6.0;
    double test = 1.0 / 6.0;

    std::size_t count(double part, std::size_t total) const {
        if (part > 1.0) return static_cast<std::size_t>(std::llround(part));
        return static_cast<std::size_t>(std::llround(part * static_cast<double>(total)));
    }
};

struct DatasetConfig {
    DataSource source = DataSource::metal_balls;
    // generators
    MixtureSpec mixture = MixtureSpec::metal_balls_default();
    int bags_per_class = 300;    // metal_balls
    int balls_per_bag = 200;     // metal_balls
    int num_bags = 900;          // task_bags
    int instances_per_bag = 64;  // task_bags
    TaskBagOptions options;
    // files
    std::string path;
    bool normalize = false;
    SplitSpec split;
};

struct ExperimentConfig {
    TaskKind task;
    DatasetConfig dataset;
    ModelSpec model;
    TrainConfig train;
    int eval_resamples = 100;
    std::uint64_t seed = 1;
};

// ---------------------------------------------------------------------------
// JSON round trip
// ---------------------------------------------------------------------------

inline void to_json(json& j, const Component& c) {
    j = json{{"name", c.name}, {"mean", c.mean}, {"std", c.stddev}};
}

inline void from_json(const json& j, Component& c) {
    c.name = j.at("name").get<std::string>();
    c.mean = j.at("mean").get<std::vector<double>>();
    c.stddev = j.at("std").get<std::vector<double>>();
}

inline void to_json(json& j, const SplitSpec& s) {
    j = json{{"train", s.train}, {"val", s.val}, {"test", s.test}};
}

inline void from_json(const json& j, SplitSpec& s) {
    s.train = j.at("train").get<double>();
    s.val = j.at("val").get<double>();
    s.test = j.at("test").get<double>();
}

inline void to_json(json& j, const DatasetConfig& d) {
    j = json{{"source", to_string(d.source)}};
    switch (d.source) {
        case DataSource::metal_balls:
            j["components"] = d.mixture.components;
            j["bags_per_class"] = d.bags_per_class;
            j["balls_per_bag"] = d.balls_per_bag;
            break;
        case DataSource::task_bags:
            j["components"] = d.mixture.components;
            j["num_bags"] = d.num_bags;
            j["instances_per_bag"] = d.instances_per_bag;
            j["positive_component"] = d.options.positive_component;
            j["regression_component"] = d.options.regression_component;
            break;
        case DataSource::csv:
        case DataSource::musk:
            j["path"] = d.path;
            break;
    }
    j["normalize"] = d.normalize;
    j["split"] = d.split;
}

inline void from_json(const json& j, DatasetConfig& d) {
    d.source = data_source_from_string(j.at("source").get<std::string>());
    if (j.contains("components"))
        d.mixture.components = j.at("components").get<std::vector<Component>>();
    d.bags_per_class = j.value("bags_per_class", d.bags_per_class);
    d.balls_per_bag = j.value("balls_per_bag", d.balls_per_bag);
    d.num_bags = j.value("num_bags", d.num_bags);
    d.instances_per_bag = j.value("instances_per_bag", d.instances_per_bag);
    d.options.positive_component = j.value("positive_component", 0);
    d.options.regression_component = j.value("regression_component", 0);
    d.path = j.value("path", std::string{});
    // raw feature files default to z-score normalization, generators to none
    d.normalize =
        j.value("normalize", d.source == DataSource::csv || d.source == DataSource::musk);
    if (j.contains("split")) d.split = j.at("split").get<SplitSpec>();
}

inline void to_json(json& j, const TrainConfig& t) {
    j = json{{"learning_rate", t.learning_rate},
             {"weight_decay", t.weight_decay},
             {"batch_size", t.batch_size},
             {"max_epochs", t.max_epochs},
             {"patience", t.patience},
             {"bag_size", t.bag_size},
             {"monitor", to_string(t.monitor)},
             {"resample_each_epoch", t.resample_each_epoch}};
}

inline void from_json(const json& j, TrainConfig& t) {
    t.learning_rate = j.value("learning_rate", t.learning_rate);
    t.weight_decay = j.value("weight_decay", t.weight_decay);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.max_epochs = j.value("max_epochs", t.max_epochs);
    t.patience = j.value("patience", t.patience);
    t.bag_size = j.value("bag_size", t.bag_size);
    t.monitor = monitor_from_string(j.value("monitor", std::string("auto")));
    t.resample_each_epoch = j.value("resample_each_epoch", t.resample_each_epoch);
}

inline void to_json(json& j, const ExperimentConfig& c) {
    j = json{{"seed", c.seed},
             {"task", c.task},
             {"dataset", c.dataset},
             {"model", c.model},
             {"train", c.train},
             {"eval_resamples", c.eval_resamples}};
    j["model"].erase("task");  // the top-level task is the single source of truth
}

inline void from_json(const json& j, ExperimentConfig& c) {
    c.seed = j.value("seed", std::uint64_t{1});
    c.task = j.at("task").get<TaskKind>();
    c.dataset = j.at("dataset").get<DatasetConfig>();
    if (j.contains("model")) {
        json m = j.at("model");
        m["task"] = c.task;
        c.model = m.get<ModelSpec>();
    }
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    c.train.seed = c.seed;
    c.eval_resamples = j.value("eval_resamples", 100);
}

// ---------------------------------------------------------------------------
// Validation and materialization
// ---------------------------------------------------------------------------

// Collects every violation rather than stopping at the first.
inline std::vector<std::string> validate_config(const ExperimentConfig& cfg,
                                                bool need_model = true) {
    std::vector<std::string> problems;
    try {
        cfg.dataset.mixture.validate();
    } catch (const std::exception& e) {
        if (cfg.dataset.source == DataSource::metal_balls ||
            cfg.dataset.source == DataSource::task_bags)
            problems.push_back(e.what());
    }
    if (cfg.dataset.source == DataSource::csv || cfg.dataset.source == DataSource::musk) {
        if (cfg.dataset.path.empty())
            problems.push_back("dataset.path is required for csv/musk sources");
        else if (!std::ifstream(cfg.dataset.path).good())
            problems.push_back("dataset.path '" + cfg.dataset.path + "' does not exist");
    }
    if (cfg.dataset.source == DataSource::musk && cfg.task.id != TaskId::pos_neg)
        problems.push_back("musk datasets carry pos_neg labels only");
    if (need_model) {
        for (const auto& p : cfg.model.validate()) problems.push_back(p);
        try {
            cfg.train.validate();
        } catch (const std::exception& e) {
            problems.push_back(e.what());
        }
    }
    if (cfg.eval_resamples < 1) problems.push_back("eval_resamples must be >= 1");
    return problems;
}

inline std::vector<RawBag> materialize_bags(const ExperimentConfig& cfg, RngStream& rng) {
    switch (cfg.dataset.source) {
        case DataSource::metal_balls:
            return generate_metal_balls(cfg.dataset.mixture, cfg.dataset.bags_per_class,
                                        cfg.dataset.balls_per_bag, rng);
        case DataSource::task_bags:
            return generate_task_bags(cfg.dataset.mixture, cfg.task, cfg.dataset.num_bags,
                                      cfg.dataset.instances_per_bag, rng, cfg.dataset.options);
        case DataSource::csv:
            return load_bag_csv(cfg.dataset.path, CsvSchema{cfg.task});
        case DataSource::musk:
            return load_musk_format(cfg.dataset.path);
    }
    throw std::logic_error("materialize_bags: unreachable");
}

inline DatasetSplit materialize_split(const ExperimentConfig& cfg, RngStream& rng) {
    RngStream gen_rng = rng.child(1);
    std::vector<RawBag> bags = materialize_bags(cfg, gen_rng);
    const SplitSpec& s = cfg.dataset.split;
    std::size_t n_train = s.count(s.train, bags.size());
    std::size_t n_val = s.count(s.val, bags.size());
    std::size_t n_test = s.count(s.test, bags.size());
    while (n_train + n_val + n_test > bags.size() && n_train > 1) --n_train;
    RngStream split_rng = rng.child(2);
    DatasetSplit split = split_dataset(bags, cfg.task.id, n_train, n_val, n_test, split_rng);
    if (cfg.dataset.normalize) split = normalize_features(std::move(split));
    return split;
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return j.get<ExperimentConfig>();
}

// `--set a.b.c=value` override; the value is parsed as JSON when possible and
// falls back to a string.
inline void apply_override(json& j, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw std::invalid_argument("--set expects key=value, got '" + assignment + "'");
    std::string key = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);
    json* node = &j;
    std::size_t start = 0;
    for (;;) {
        auto dot = key.find('.', start);
        std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
        if (part.empty()) throw std::invalid_argument("--set key has an empty segment: " + key);
        if (dot == std::string::npos) {
            json parsed;
            try {
                parsed = json::parse(value);
            } catch (...) {
                parsed = value;
            }
            (*node)[part] = parsed;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

}  // namespace milpool
