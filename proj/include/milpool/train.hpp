#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "milpool/data.hpp"
#include "milpool/model.hpp"
#include "milpool/rng.hpp"
#include "milpool/tensor.hpp"

namespace milpool {

// ---------------------------------------------------------------------------
// ADAM with coupled L2 weight decay
// ---------------------------------------------------------------------------

struct AdamState {
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;
    long t = 0;
    std::vector<std::vector<double>> m, v;
};

// One optimizer step over all parameter blocks. The L2 term enters the
// gradient (g <- grad + lambda * param) before the moment updates.
inline void adam_step(std::vector<Model::Param>& params, AdamState& state, double lr,
                      double weight_decay) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].value.size(), 0.0);
            state.v[i].assign(params[i].value.size(), 0.0);
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& values = params[i].value.mutable_values();
        const auto& grad = params[i].value.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            if (!std::isfinite(grad[j]))
                throw std::runtime_error("adam_step: non-finite gradient in parameter block '" +
                                         params[i].name + "'");
            double g = grad[j] + weight_decay * values[j];
            m[j] = AdamState::kBeta1 * m[j] + (1.0 - AdamState::kBeta1) * g;
            v[j] = AdamState::kBeta2 * v[j] + (1.0 - AdamState::kBeta2) * g * g;
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            values[j] -= lr * mhat / (std::sqrt(vhat) + AdamState::kEps);
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class Monitor { automatic, val_accuracy, val_loss };

inline const char* to_string(Monitor m) {
    switch (m) {
        case Monitor::automatic: return "auto";
        case Monitor::val_accuracy: return "val_accuracy";
        case Monitor::val_loss: return "val_loss";
    }
    return "?";
}

inline Monitor monitor_from_string(const std::string& s) {
    if (s == "auto") return Monitor::automatic;
    if (s == "val_accuracy") return Monitor::val_accuracy;
    if (s == "val_loss") return Monitor::val_loss;
    throw std::invalid_argument("unknown monitor '" + s + "'");
}

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    int batch_size = 8;
    int max_epochs = 500;
    int patience = 20;
    int bag_size = 0;  // 0: feed bags as they are; otherwise subsample to this size
    Monitor monitor = Monitor::automatic;
    bool resample_each_epoch = true;  // false: one fixed subsample per bag
    std::uint64_t seed = 1;

    void validate() const {
        if (!(learning_rate > 0.0))
            throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
        if (weight_decay < 0.0)
            throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (max_epochs < 1)
            throw std::invalid_argument("TrainConfig: max_epochs must be >= 1; nothing to train");
        if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
        if (bag_size < 0) throw std::invalid_argument("TrainConfig: bag_size must be >= 0");
    }

    Monitor resolved_monitor(const TaskKind& task) const {
        if (monitor != Monitor::automatic) return monitor;
        return task.is_classification() ? Monitor::val_accuracy : Monitor::val_loss;
    }
};

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    double val_metric = 0.0;
};

struct History {
    std::vector<EpochRow> rows;
    int best_epoch = 0;
    double best_metric = 0.0;
    Monitor monitor = Monitor::val_accuracy;
};

// Divergence during training; carries the history up to the last finite epoch.
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& what, History h)
        : std::runtime_error(what), history(std::move(h)) {}
    History history;
};

namespace detail {

inline double task_accuracy(const TaskKind& task, const BagLabel& predicted,
                            const BagLabel& truth) {
    if (task.single_label()) return predicted.cls == truth.cls ? 1.0 : 0.0;
    if (task.id == TaskId::multi_task) {
        double ok = 0.0;
        for (std::size_t k = 0; k < truth.bits.size(); ++k)
            if (predicted.bits[k] == truth.bits[k]) ok += 1.0;
        return ok / static_cast<double>(truth.bits.size());
    }
    throw std::invalid_argument("task_accuracy: not a classification task");
}

// Single eval-mode pass over a bag list; used for the per-epoch monitor.
inline double validation_metric(const Model& model, const std::vector<RawBag>& bags,
                                Monitor monitor) {
    const TaskKind& task = model.spec().task;
    double total = 0.0;
    for (const RawBag& bag : bags) {
        std::vector<double> raw = model.predict_raw(bag.instances);
        if (monitor == Monitor::val_accuracy) {
            total += task_accuracy(task, predict_label(task, raw), bag.label(task.id));
        } else {
            Tensor pred = Tensor::leaf({static_cast<std::size_t>(task.head_width())}, raw);
            total += task_loss(task, pred, bag.label(task.id)).value();
        }
    }
    return total / static_cast<double>(bags.size());
}

inline bool improved(Monitor monitor, double candidate, double best) {
    return monitor == Monitor::val_accuracy ? candidate > best : candidate < best;
}

}  // namespace detail

// Mini-batch ADAM training with early stopping on the validation metric.
// Returns per-epoch history; the model is left at the best-epoch parameters.
inline History train_model(Model& model, const DatasetSplit& split, const TrainConfig& cfg,
                           RngStream& rng) {
    cfg.validate();
    if (split.train.empty() || split.validation.empty())
        throw std::invalid_argument("train_model: train and validation splits must be nonempty");
    const TaskKind& task = model.spec().task;
    const Monitor monitor = cfg.resolved_monitor(task);

    // Validation bags are brought to the training bag size once, with a fixed
    // stream, so the early-stopping signal is stable across epochs.
    std::vector<RawBag> val_bags;
    {
        RngStream val_rng = rng.child(0xA11DA7ull);
        for (const RawBag& bag : split.validation)
            val_bags.push_back(cfg.bag_size > 0 ? subsample_bag(bag, cfg.bag_size, val_rng) : bag);
    }

    std::vector<RawBag> fixed_train;
    if (cfg.bag_size > 0 && !cfg.resample_each_epoch) {
        RngStream fix_rng = rng.child(0xF17ull);
        for (const RawBag& bag : split.train)
            fixed_train.push_back(subsample_bag(bag, cfg.bag_size, fix_rng));
    }

    History history;
    history.monitor = monitor;
    AdamState adam;
    std::vector<std::vector<double>> best_snapshot = model.snapshot();
    double best = monitor == Monitor::val_accuracy ? -1.0 : std::numeric_limits<double>::max();
    int since_best = 0;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        RngStream epoch_rng = rng.child(static_cast<std::uint64_t>(epoch));
        std::vector<std::size_t> order(split.train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        epoch_rng.shuffle(order);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t stop = std::min(order.size(),
                                        start + static_cast<std::size_t>(cfg.batch_size));
            Tensor batch_loss;
            for (std::size_t pos = start; pos < stop; ++pos) {
                const RawBag* bag = &split.train[order[pos]];
                RawBag scratch;
                if (cfg.bag_size > 0) {
                    if (cfg.resample_each_epoch) {
                        scratch = subsample_bag(*bag, cfg.bag_size, epoch_rng);
                        bag = &scratch;
                    } else {
                        bag = &fixed_train[order[pos]];
                    }
                }
                Tensor pred = model.forward(bag->instances, Mode::train, epoch_rng);
                Tensor loss = task_loss(task, pred, bag->label(task.id));
                batch_loss = batch_loss.defined() ? add(batch_loss, loss) : loss;
            }
            batch_loss = scale(batch_loss, 1.0 / static_cast<double>(stop - start));
            double loss_value = batch_loss.value();
            if (!std::isfinite(loss_value))
                throw TrainingError("train_model: loss diverged at epoch " +
                                        std::to_string(epoch),
                                    history);
            epoch_loss += loss_value * static_cast<double>(stop - start);
            model.zero_grads();
            backward(batch_loss);
            adam_step(model.parameters(), adam, cfg.learning_rate, cfg.weight_decay);
        }
        epoch_loss /= static_cast<double>(split.train.size());

        double metric = detail::validation_metric(model, val_bags, monitor);
        history.rows.push_back({epoch, epoch_loss, metric});
        if (detail::improved(monitor, metric, best)) {
            best = metric;
            best_snapshot = model.snapshot();
            history.best_epoch = epoch;
            history.best_metric = metric;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    model.restore(best_snapshot);
    return history;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct SamplePrediction {
    std::string id;
    BagLabel truth;
    BagLabel predicted;
    std::vector<double> raw;
};

struct Metrics {
    double accuracy = 0.0;                   // classification tasks
    std::vector<double> per_task_accuracy;   // multi_task
    double mae = 0.0;                        // regression
    double mean_loss = 0.0;
    std::vector<std::vector<long>> confusion;  // single-label tasks, truth x predicted
    std::vector<SamplePrediction> per_sample;

    // the score cross-validation aggregates: accuracy, or MAE for regression
    double score(const TaskKind& task) const {
        return task.is_classification() ? accuracy : mae;
    }
};

// Test-time protocol: each bag is resampled `resamples` times at `bag_size`
// and the head outputs are averaged before deciding the label. bag_size 0
// evaluates the full bag once.
inline Metrics evaluate(const Model& model, const std::vector<RawBag>& bags,
                        const TaskKind& task, int resamples, int bag_size, RngStream& rng) {
    if (resamples < 1) throw std::invalid_argument("evaluate: resamples must be >= 1");
    if (bags.empty()) throw std::invalid_argument("evaluate: no bags");
    Metrics metrics;
    if (task.single_label()) {
        metrics.confusion.assign(static_cast<std::size_t>(task.classes),
                                 std::vector<long>(static_cast<std::size_t>(task.classes), 0));
    }
    if (task.id == TaskId::multi_task)
        metrics.per_task_accuracy.assign(static_cast<std::size_t>(task.classes), 0.0);

    for (std::size_t bi = 0; bi < bags.size(); ++bi) {
        const RawBag& bag = bags[bi];
        RngStream bag_rng = rng.child(bi);
        std::vector<double> raw;
        if (bag_size > 0) {
            std::vector<std::vector<double>> views;
            views.reserve(static_cast<std::size_t>(resamples));
            for (int r = 0; r < resamples; ++r)
                views.push_back(subsample_bag(bag, bag_size, bag_rng).instances);
            raw = average_raw_predictions(model, views);
        } else {
            raw = model.predict_raw(bag.instances);
        }
        const BagLabel& truth = bag.label(task.id);
        BagLabel predicted = predict_label(task, raw);
        Tensor pred = Tensor::leaf({raw.size()}, raw);
        metrics.mean_loss += task_loss(task, pred, truth).value();

        if (task.single_label()) {
            int t = task.id == TaskId::ucc ? truth.cls - 1 : truth.cls;
            int p = task.id == TaskId::ucc ? predicted.cls - 1 : predicted.cls;
            metrics.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] += 1;
            metrics.accuracy += (predicted.cls == truth.cls) ? 1.0 : 0.0;
        } else if (task.id == TaskId::multi_task) {
            for (std::size_t k = 0; k < truth.bits.size(); ++k)
                if (predicted.bits[k] == truth.bits[k]) metrics.per_task_accuracy[k] += 1.0;
            metrics.accuracy += detail::task_accuracy(task, predicted, truth);
        } else {
            metrics.mae += std::fabs(predicted.value - truth.value);
        }
        metrics.per_sample.push_back({bag.id, truth, predicted, raw});
    }
    const double n = static_cast<double>(bags.size());
    metrics.accuracy /= n;
    metrics.mae /= n;
    metrics.mean_loss /= n;
    for (double& a : metrics.per_task_accuracy) a /= n;
    return metrics;
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

struct CVFold {
    int repeat = 0;
    int fold = 0;
    double score = 0.0;
    bool failed = false;
    std::string error;
};

struct CVSamplePrediction {
    int repeat = 0;
    int fold = 0;
    SamplePrediction sample;
};

struct CVReport {
    int k = 0;
    int repeats = 0;
    std::vector<CVFold> folds;
    std::vector<CVSamplePrediction> predictions;
    double mean = 0.0;
    double stderr_all = 0.0;  // over all k*repeats fold scores
    std::vector<double> repeat_means;
    double mean_of_repeat_means = 0.0;
    double stderr_repeats = 0.0;  // over the per-repeat means
    bool stratified = false;
    std::string warning;
};

namespace detail {

inline std::pair<double, double> mean_stderr(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    return {mean, sd / std::sqrt(static_cast<double>(xs.size()))};
}

}  // namespace detail

// k-fold cross-validation repeated `repeats` times. Each fold trains a fresh
// model (a 10% stratified slice of the training folds serves as the early
// stopping validation set) and scores the held-out fold. Folds are
// independent; `jobs` > 1 runs them on a small thread pool with identical
// results.
inline CVReport cross_validate(const std::vector<RawBag>& bags, const ModelSpec& spec,
                               const TrainConfig& cfg, int k, int repeats, int resamples,
                               RngStream& rng, int jobs = 1, bool normalize = false) {
    spec.validate_or_throw();
    cfg.validate();
    const TaskKind& task = spec.task;
    bool stratify = task.single_label();
    RngStream fold_plan_rng = rng.child(1);
    KFoldPlan plan = kfold_split(bags, k, repeats, stratify, task.id, fold_plan_rng);

    CVReport report;
    report.k = k;
    report.repeats = repeats;
    report.stratified = plan.stratified;
    report.warning = plan.warning;
    const int total = k * repeats;
    report.folds.resize(static_cast<std::size_t>(total));
    std::vector<std::vector<CVSamplePrediction>> fold_preds(static_cast<std::size_t>(total));

    RngStream work_base = rng.child(2);
    auto run_fold = [&](int index) {
        const int r = index / k;
        const int f = index % k;
        CVFold& out = report.folds[static_cast<std::size_t>(index)];
        out.repeat = r;
        out.fold = f;
        RngStream work = work_base.child(static_cast<std::uint64_t>(index));
        try {
            const FoldSplit& fs = plan.repeats[static_cast<std::size_t>(r)]
                                               [static_cast<std::size_t>(f)];
            std::vector<RawBag> pool;
            pool.reserve(fs.train_ids.size());
            for (std::size_t id : fs.train_ids) pool.push_back(bags[id]);
            std::size_t val_n = std::max<std::size_t>(1, (pool.size() + 5) / 10);
            if (val_n >= pool.size())
                throw std::runtime_error("fold too small to carve a validation set");
            RngStream carve = work.child(0);
            std::vector<std::size_t> order;
            if (stratify) {
                order = detail::stratified_order(pool, task.id, carve);
            } else {
                order.resize(pool.size());
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                carve.shuffle(order);
            }
            DatasetSplit split;
            for (std::size_t i = 0; i < val_n; ++i) split.validation.push_back(pool[order[i]]);
            for (std::size_t i = val_n; i < order.size(); ++i)
                split.train.push_back(pool[order[i]]);
            for (std::size_t id : fs.test_ids) split.test.push_back(bags[id]);
            if (normalize) split = normalize_features(std::move(split));

            RngStream build = work.child(1);
            Model model(spec, build);
            RngStream train_rng = work.child(2);
            train_model(model, split, cfg, train_rng);

            RngStream eval_rng = work.child(3);
            Metrics m = evaluate(model, split.test, task, resamples, cfg.bag_size, eval_rng);
            out.score = m.score(task);
            for (auto& sp : m.per_sample)
                fold_preds[static_cast<std::size_t>(index)].push_back({r, f, std::move(sp)});
        } catch (const std::exception& e) {
            out.failed = true;
            out.error = e.what();
        }
    };

    if (jobs <= 1) {
        for (int i = 0; i < total; ++i) run_fold(i);
    } else {
        std::atomic<int> next{0};
        auto worker = [&]() {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= total) return;
                run_fold(i);
            }
        };
        std::vector<std::thread> threads;
        int n_threads = std::min(jobs, total);
        threads.reserve(static_cast<std::size_t>(n_threads));
        for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    for (auto& block : fold_preds)
        for (auto& p : block) report.predictions.push_back(std::move(p));

    std::vector<double> scores;
    for (const CVFold& f : report.folds)
        if (!f.failed) scores.push_back(f.score);
    auto [mean, se] = detail::mean_stderr(scores);
    report.mean = mean;
    report.stderr_all = se;
    for (int r = 0; r < repeats; ++r) {
        std::vector<double> rs;
        for (const CVFold& f : report.folds)
            if (!f.failed && f.repeat == r) rs.push_back(f.score);
        report.repeat_means.push_back(detail::mean_stderr(rs).first);
    }
    auto [rmean, rse] = detail::mean_stderr(report.repeat_means);
    report.mean_of_repeat_means = rmean;
    report.stderr_repeats = rse;
    return report;
}

// ---------------------------------------------------------------------------
// File emitters
// ---------------------------------------------------------------------------

inline void write_history_csv(const History& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "epoch,train_loss,val_metric\n";
    for (const EpochRow& row : history.rows)
        out << row.epoch << ',' << detail::fmt_double(row.train_loss) << ','
            << detail::fmt_double(row.val_metric) << '\n';
}

inline void write_predictions_csv(const std::vector<SamplePrediction>& samples,
                                  const TaskKind& task, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "sample_id,truth,prediction\n";
    for (const auto& s : samples)
        out << s.id << ',' << format_label(task, s.truth) << ','
            << format_label(task, s.predicted) << '\n';
}

inline void write_confusion_csv(const std::vector<std::vector<long>>& confusion,
                                const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    for (const auto& row : confusion) {
        for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
        out << '\n';
    }
}

inline json metrics_to_json(const Metrics& metrics, const TaskKind& task) {
    json j;
    j["task"] = to_string(task.id);
    j["samples"] = metrics.per_sample.size();
    j["mean_loss"] = metrics.mean_loss;
    if (task.is_classification()) j["accuracy"] = metrics.accuracy;
    if (task.id == TaskId::multi_task) j["per_task_accuracy"] = metrics.per_task_accuracy;
    if (task.id == TaskId::regression) j["mae"] = metrics.mae;
    if (!metrics.confusion.empty()) j["confusion"] = metrics.confusion;
    return j;
}

inline void write_cv_csv(const CVReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "repeat,fold,score\n";
    for (const CVFold& f : report.folds) {
        out << f.repeat << ',' << f.fold << ',';
        if (f.failed)
            out << "failed\n";
        else
            out << detail::fmt_double(f.score) << '\n';
    }
}

inline void write_cv_predictions_csv(const CVReport& report, const TaskKind& task,
                                     const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "repeat,fold,sample_id,truth,prediction\n";
    for (const auto& p : report.predictions)
        out << p.repeat << ',' << p.fold << ',' << p.sample.id << ','
            << format_label(task, p.sample.truth) << ','
            << format_label(task, p.sample.predicted) << '\n';
}

// Both aggregation bases are reported; the across-all-folds standard error is
// the headline number.
inline json cv_summary_json(const CVReport& report) {
    json j;
    j["k"] = report.k;
    j["repeats"] = report.repeats;
    j["mean"] = report.mean;
    j["stderr"] = report.stderr_all;
    j["mean_of_repeat_means"] = report.mean_of_repeat_means;
    j["stderr_over_repeat_means"] = report.stderr_repeats;
    j["repeat_means"] = report.repeat_means;
    j["stratified"] = report.stratified;
    if (!report.warning.empty()) j["warning"] = report.warning;
    int failed = 0;
    for (const CVFold& f : report.folds)
        if (f.failed) ++failed;
    j["failed_folds"] = failed;
    return j;
}

}  // namespace milpool
