// milpool command line: generate bag corpora, train/evaluate MIL models, run
// repeated cross-validation, compare prediction files statistically, and
// produce the loss/accuracy-vs-bag-size sweep table.

#include <CLI11.hpp>

#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "milpool/config.hpp"
#include "milpool/data.hpp"
#include "milpool/model.hpp"
#include "milpool/stats.hpp"
#include "milpool/train.hpp"

namespace fs = std::filesystem;
using namespace milpool;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct GlobalArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    int jobs = 1;
};

std::string timestamp_utc() {
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

void write_json_file(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

ExperimentConfig load_config(const GlobalArgs& args, bool need_model) {
    if (args.config_path.empty())
        throw std::invalid_argument("--config is required for this command");
    std::ifstream in(args.config_path);
    if (!in) throw std::invalid_argument("cannot read config file '" + args.config_path + "'");
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::invalid_argument("config is not valid JSON: " + std::string(e.what()));
    }
    for (const std::string& o : args.overrides) apply_override(j, o);
    ExperimentConfig cfg = j.get<ExperimentConfig>();
    if (args.seed) {
        cfg.seed = *args.seed;
        cfg.train.seed = *args.seed;
    }
    auto problems = validate_config(cfg, need_model);
    if (!problems.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw std::invalid_argument(msg);
    }
    return cfg;
}

fs::path prepare_out_dir(const GlobalArgs& args) {
    fs::path dir(args.out_dir);
    fs::create_directories(dir);
    return dir;
}

void write_eval_outputs(const fs::path& dir, const Metrics& metrics, const TaskKind& task) {
    write_json_file(dir / "metrics.json", metrics_to_json(metrics, task));
    write_predictions_csv(metrics.per_sample, task, (dir / "predictions.csv").string());
    if (task.single_label())
        write_confusion_csv(metrics.confusion, (dir / "confusion.csv").string());
}

// ---------------------------------------------------------------------------

int cmd_generate(const GlobalArgs& args) {
    ExperimentConfig cfg = load_config(args, /*need_model=*/false);
    fs::path dir = prepare_out_dir(args);
    RngStream rng(cfg.seed);
    RngStream gen_rng = rng.child(10);
    std::vector<RawBag> bags = materialize_bags(cfg, gen_rng);
    write_bag_csv(bags, cfg.task, (dir / "bags.csv").string());

    std::map<std::string, int> label_counts;
    for (const RawBag& bag : bags) label_counts[format_label(cfg.task, bag.label(cfg.task.id))]++;
    json manifest;
    manifest["format"] = "milpool/manifest-v1";
    manifest["seed"] = cfg.seed;
    manifest["task"] = cfg.task;
    manifest["dataset"] = cfg.dataset;
    manifest["bags"] = bags.size();
    manifest["label_counts"] = label_counts;
    manifest["created"] = timestamp_utc();
    write_json_file(dir / "manifest.json", manifest);
    std::cout << "wrote " << bags.size() << " bags to " << (dir / "bags.csv").string() << "\n";
    return kExitOk;
}

int cmd_train(const GlobalArgs& args) {
    ExperimentConfig cfg = load_config(args, true);
    fs::path dir = prepare_out_dir(args);
    RngStream rng(cfg.seed);
    RngStream data_rng = rng.child(10);
    DatasetSplit split = materialize_split(cfg, data_rng);
    RngStream build_rng = rng.child(11);
    Model model(cfg.model, build_rng);
    RngStream train_rng = rng.child(12);
    History history;
    try {
        history = train_model(model, split, cfg.train, train_rng);
    } catch (const TrainingError& e) {
        write_history_csv(e.history, (dir / "history.csv").string());
        throw;
    }
    write_history_csv(history, (dir / "history.csv").string());
    save_model(model, (dir / "model.json").string());
    if (!split.test.empty()) {
        RngStream eval_rng = rng.child(13);
        Metrics metrics = evaluate(model, split.test, cfg.task, cfg.eval_resamples,
                                   cfg.train.bag_size, eval_rng);
        write_eval_outputs(dir, metrics, cfg.task);
        std::cout << "best epoch " << history.best_epoch << " ("
                  << to_string(history.monitor) << " " << history.best_metric << "), test "
                  << (cfg.task.is_classification() ? "accuracy " : "MAE ")
                  << (cfg.task.is_classification() ? metrics.accuracy : metrics.mae) << "\n";
    } else {
        std::cout << "best epoch " << history.best_epoch << " ("
                  << to_string(history.monitor) << " " << history.best_metric
                  << "), no test split\n";
    }
    return kExitOk;
}

int cmd_eval(const GlobalArgs& args, const std::string& model_path) {
    ExperimentConfig cfg = load_config(args, /*need_model=*/false);
    Model model = load_model(model_path);
    if (model.spec().task.id != cfg.task.id)
        throw std::invalid_argument("model file was trained for task " +
                                    std::string(to_string(model.spec().task.id)) +
                                    ", config says " + to_string(cfg.task.id));
    fs::path dir = prepare_out_dir(args);
    RngStream rng(cfg.seed);
    RngStream data_rng = rng.child(10);
    DatasetSplit split = materialize_split(cfg, data_rng);
    if (split.test.empty()) throw std::invalid_argument("eval: test split is empty");
    RngStream eval_rng = rng.child(13);
    Metrics metrics = evaluate(model, split.test, cfg.task, cfg.eval_resamples,
                               cfg.train.bag_size, eval_rng);
    write_eval_outputs(dir, metrics, cfg.task);
    std::cout << (cfg.task.is_classification() ? "accuracy " : "MAE ")
              << (cfg.task.is_classification() ? metrics.accuracy : metrics.mae) << " over "
              << split.test.size() << " bags\n";
    return kExitOk;
}

int cmd_cv(const GlobalArgs& args, int k, int repeats) {
    ExperimentConfig cfg = load_config(args, true);
    fs::path dir = prepare_out_dir(args);
    RngStream rng(cfg.seed);
    RngStream data_rng = rng.child(10);
    std::vector<RawBag> bags = materialize_bags(cfg, data_rng);
    RngStream cv_rng = rng.child(11);
    CVReport report = cross_validate(bags, cfg.model, cfg.train, k, repeats, cfg.eval_resamples,
                                     cv_rng, args.jobs, cfg.dataset.normalize);
    if (!report.warning.empty()) std::cerr << "warning: " << report.warning << "\n";
    write_cv_csv(report, (dir / "cv_folds.csv").string());
    write_cv_predictions_csv(report, cfg.task, (dir / "cv_predictions.csv").string());
    write_json_file(dir / "cv_summary.json", cv_summary_json(report));
    std::cout << "cv mean " << report.mean << " +- " << report.stderr_all << " (" << k
              << "-fold x " << repeats << ")\n";
    return kExitOk;
}

struct PredictionRow {
    std::string truth;
    std::string prediction;
};

std::map<std::string, PredictionRow> load_prediction_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot read predictions file '" + path + "'");
    std::string line;
    if (!std::getline(in, line))
        throw std::invalid_argument("predictions file '" + path + "' is empty");
    std::map<std::string, PredictionRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 3)
            throw std::invalid_argument(path + " line " + std::to_string(line_no) +
                                        ": expected sample_id,truth,prediction");
        rows[fields[0]] = {fields[1], fields[2]};
    }
    if (rows.empty()) throw std::invalid_argument("'" + path + "' has no prediction rows");
    return rows;
}

int cmd_compare(const GlobalArgs& args, const std::string& path_a, const std::string& path_b,
                const std::string& mode) {
    auto rows_a = load_prediction_csv(path_a);
    auto rows_b = load_prediction_csv(path_b);
    if (rows_a.size() != rows_b.size())
        throw std::invalid_argument("prediction files cover different sample sets");
    json result;
    result["mode"] = mode;
    result["samples"] = rows_a.size();
    if (mode == "mcnemar") {
        std::vector<int> pa, pb, truth;
        for (const auto& [id, row] : rows_a) {
            auto it = rows_b.find(id);
            if (it == rows_b.end())
                throw std::invalid_argument("sample '" + id + "' missing from " + path_b);
            if (row.truth != it->second.truth)
                throw std::invalid_argument("sample '" + id + "' has different truth labels");
            truth.push_back(std::stoi(row.truth));
            pa.push_back(std::stoi(row.prediction));
            pb.push_back(std::stoi(it->second.prediction));
        }
        McNemarResult r = mcnemar_test(pa, pb, truth);
        result["b"] = r.b;
        result["c"] = r.c;
        result["statistic"] = r.statistic;
        result["p_value"] = r.p_value;
        result["exact"] = r.exact;
        result["degenerate"] = r.degenerate;
    } else if (mode == "ttest") {
        std::vector<double> ea, eb;
        for (const auto& [id, row] : rows_a) {
            auto it = rows_b.find(id);
            if (it == rows_b.end())
                throw std::invalid_argument("sample '" + id + "' missing from " + path_b);
            double truth = std::stod(row.truth);
            ea.push_back(std::fabs(truth - std::stod(row.prediction)));
            eb.push_back(std::fabs(std::stod(it->second.truth) -
                                   std::stod(it->second.prediction)));
        }
        PairedTResult r = paired_t_test(ea, eb);
        result["t"] = r.t;
        result["df"] = r.df;
        result["p_value"] = r.p_value;
        result["degenerate"] = r.degenerate;
    } else {
        throw std::invalid_argument("mode must be mcnemar or ttest, got '" + mode + "'");
    }
    std::cout << result.dump(2) << "\n";
    if (args.out_dir != ".") write_json_file(prepare_out_dir(args) / "compare.json", result);
    return kExitOk;
}

int cmd_sweep(const GlobalArgs& args, const std::vector<int>& sizes,
              const std::vector<std::string>& filters) {
    ExperimentConfig cfg = load_config(args, true);
    if (sizes.empty() || filters.empty())
        throw std::invalid_argument("sweep-bagsize needs --sizes and --filters");
    fs::path dir = prepare_out_dir(args);
    RngStream rng(cfg.seed);
    RngStream data_rng = rng.child(10);
    DatasetSplit split = materialize_split(cfg, data_rng);

    std::ofstream sweep(dir / "sweep.csv");
    sweep << "filter,size,test_loss,test_accuracy\n";
    for (std::size_t fi = 0; fi < filters.size(); ++fi) {
        PoolKind kind = pool_kind_from_string(filters[fi]);
        for (std::size_t si = 0; si < sizes.size(); ++si) {
            ModelSpec spec = cfg.model;
            spec.pooling.kind = kind;
            TrainConfig tc = cfg.train;
            tc.bag_size = sizes[si];
            RngStream cell = rng.child(100 + fi * 64 + si);
            RngStream build = cell.child(0);
            Model model(spec, build);
            RngStream train_rng = cell.child(1);
            History history = train_model(model, split, tc, train_rng);
            RngStream eval_rng = cell.child(2);
            Metrics m = evaluate(model, split.test, cfg.task, cfg.eval_resamples, sizes[si],
                                 eval_rng);
            sweep << filters[fi] << ',' << sizes[si] << ',' << detail::fmt_double(m.mean_loss)
                  << ',' << detail::fmt_double(m.accuracy) << '\n';
            if (cfg.task.single_label()) {
                std::string name = "confusion_" + filters[fi] + "_" +
                                   std::to_string(sizes[si]) + ".csv";
                write_confusion_csv(m.confusion, (dir / name).string());
            }
            std::cout << filters[fi] << " @ " << sizes[si] << ": loss " << m.mean_loss
                      << ", accuracy " << m.accuracy << " (best epoch " << history.best_epoch
                      << ")\n";
        }
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MIL pooling-filter toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalArgs args;
    app.add_option("--config", args.config_path, "experiment config JSON");
    app.add_option("--seed", args.seed, "override the config seed");
    app.add_option("--jobs", args.jobs, "worker threads for cv folds")->check(CLI::PositiveNumber);
    app.add_option("--out-dir", args.out_dir, "output directory (default .)");
    app.add_option("--set", args.overrides, "config override key.path=value (repeatable)");

    auto* generate = app.add_subcommand("generate", "write a bag CSV corpus and its manifest");
    auto* train = app.add_subcommand("train", "train one model, write model/history/metrics");
    auto* eval = app.add_subcommand("eval", "evaluate a saved model on the config's test split");
    std::string model_path;
    eval->add_option("--model", model_path, "model JSON file")->required();
    auto* cv = app.add_subcommand("cv", "repeated k-fold cross-validation");
    int k = 10, repeats = 5;
    cv->add_option("--k", k, "number of folds");
    cv->add_option("--repeats", repeats, "number of repeats");
    auto* compare = app.add_subcommand("compare", "statistical test between two prediction files");
    std::string pred_a, pred_b, mode = "mcnemar";
    compare->add_option("preds_a", pred_a, "first predictions.csv")->required();
    compare->add_option("preds_b", pred_b, "second predictions.csv")->required();
    compare->add_option("--mode", mode, "mcnemar | ttest");
    auto* sweep = app.add_subcommand("sweep-bagsize", "loss/accuracy vs bag size table");
    std::vector<int> sizes{10, 50, 100, 200};
    std::vector<std::string> filters{"distribution", "mean", "max"};
    sweep->add_option("--sizes", sizes, "bag sizes")->delimiter(',');
    sweep->add_option("--filters", filters, "pooling filters")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (generate->parsed()) return cmd_generate(args);
        if (train->parsed()) return cmd_train(args);
        if (eval->parsed()) return cmd_eval(args, model_path);
        if (cv->parsed()) return cmd_cv(args, k, repeats);
        if (compare->parsed()) return cmd_compare(args, pred_a, pred_b, mode);
        if (sweep->parsed()) return cmd_sweep(args, sizes, filters);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}
