#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "milpool/model.hpp"
#include "milpool/rng.hpp"

namespace milpool {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct Component {
    std::string name;
    std::vector<double> mean;    // per raw feature dimension
    std::vector<double> stddev;  // per raw feature dimension
};

// Gaussian mixture description of the synthetic generators; one component per
// production line / instance class.
struct MixtureSpec {
    std::vector<Component> components;

    std::size_t dims() const { return components.empty() ? 0 : components[0].mean.size(); }

    void validate() const {
        if (components.empty())
            throw std::invalid_argument("MixtureSpec: needs at least one component");
        const std::size_t d = dims();
        for (const auto& c : components) {
            if (c.mean.size() != d || c.stddev.size() != d)
                throw std::invalid_argument("MixtureSpec: component '" + c.name +
                                            "' has inconsistent dimensionality");
            for (double s : c.stddev)
                if (!(s > 0.0))
                    throw std::invalid_argument("MixtureSpec: component '" + c.name +
                                                "' has non-positive stddev");
        }
    }

    // The three production lines of the metal-balls experiment.
    static MixtureSpec metal_balls_default() {
        return MixtureSpec{{{"red", {0.3}, {0.02}},
                            {"green", {0.5}, {0.02}},
                            {"blue", {0.5}, {0.005}}}};
    }
};

// One MIL sample: an N x D instance matrix plus task labels. Generated bags
// also carry the per-instance component indices so label derivation can be
// re-checked independently.
struct RawBag {
    std::string id;
    std::size_t n = 0;
    std::size_t dims = 0;
    std::vector<double> instances;  // n x dims, row-major
    std::map<TaskId, BagLabel> labels;
    std::vector<int> instance_classes;  // empty for loaded datasets
    std::string source;

    bool has_label(TaskId t) const { return labels.count(t) > 0; }
    const BagLabel& label(TaskId t) const {
        auto it = labels.find(t);
        if (it == labels.end())
            throw std::invalid_argument("bag '" + id + "' has no label for task " +
                                        std::string(to_string(t)));
        return it->second;
    }
};

struct NormStats {
    bool fitted = false;
    std::vector<double> mean;
    std::vector<double> stddev;  // floored at 1e-8 when applied
};

struct DatasetSplit {
    std::vector<RawBag> train, validation, test;
    NormStats norm;
};

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

// 900-bags-of-metal-balls style corpus: `bags_per_class` pure bags per
// component, each instance drawn from that component's Gaussian.
inline std::vector<RawBag> generate_metal_balls(const MixtureSpec& spec, int bags_per_class,
                                                int balls_per_bag, RngStream& rng) {
    spec.validate();
    if (bags_per_class < 1 || balls_per_bag < 1)
        throw std::invalid_argument("generate_metal_balls: counts must be >= 1");
    const std::size_t D = spec.dims();
    std::vector<RawBag> bags;
    bags.reserve(spec.components.size() * static_cast<std::size_t>(bags_per_class));
    for (std::size_t c = 0; c < spec.components.size(); ++c) {
        const Component& comp = spec.components[c];
        for (int b = 0; b < bags_per_class; ++b) {
            RawBag bag;
            char idbuf[64];
            std::snprintf(idbuf, sizeof idbuf, "%s_%04d", comp.name.c_str(), b);
            bag.id = idbuf;
            bag.n = static_cast<std::size_t>(balls_per_bag);
            bag.dims = D;
            bag.instances.reserve(bag.n * D);
            for (std::size_t i = 0; i < bag.n; ++i)
                for (std::size_t d = 0; d < D; ++d)
                    bag.instances.push_back(rng.normal(comp.mean[d], comp.stddev[d]));
            bag.instance_classes.assign(bag.n, static_cast<int>(c));
            bag.labels[TaskId::multi_class] = BagLabel::multi_class(static_cast<int>(c));
            bag.source = "metal_balls";
            bags.push_back(std::move(bag));
        }
    }
    return bags;
}

struct TaskBagOptions {
    int positive_component = 0;    // pos_neg: which component makes a bag positive
    int regression_component = 0;  // regression: fraction of this component
};

// The TaskKind the mixture generator labels for, given its component count:
// ucc counts up to C classes, multi_class is pure-0..pure-(C-1) plus mixed,
// multi_task has one presence bit per component.
inline TaskKind mixture_task_kind(TaskId id, std::size_t n_components) {
    const int C = static_cast<int>(n_components);
    switch (id) {
        case TaskId::pos_neg: return TaskKind::pos_neg();
        case TaskId::ucc: return TaskKind::ucc(C);
        case TaskId::multi_class: return TaskKind::multi_class(C + 1);
        case TaskId::multi_task: return TaskKind::multi_task(C);
        case TaskId::regression: return TaskKind::regression();
    }
    throw std::logic_error("mixture_task_kind: unreachable");
}

namespace detail {

// Apportion n instances to the chosen components: proportional to the simplex
// draw, at least one instance each, largest fractional remainder first.
inline std::vector<int> apportion(const std::vector<double>& proportions, int n) {
    const int parts = static_cast<int>(proportions.size());
    std::vector<int> counts(parts, 1);
    int rest = n - parts;
    std::vector<double> want(parts);
    for (int i = 0; i < parts; ++i) want[i] = proportions[i] * rest;
    std::vector<int> takes(parts);
    int assigned = 0;
    for (int i = 0; i < parts; ++i) {
        takes[i] = static_cast<int>(std::floor(want[i]));
        assigned += takes[i];
    }
    std::vector<std::size_t> order(parts);
    for (int i = 0; i < parts; ++i) order[i] = static_cast<std::size_t>(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return want[a] - std::floor(want[a]) > want[b] - std::floor(want[b]);
    });
    for (int i = 0; assigned < rest; ++i, ++assigned) takes[order[static_cast<std::size_t>(i)]]++;
    for (int i = 0; i < parts; ++i) counts[i] += takes[i];
    return counts;
}

inline void derive_mixture_labels(RawBag& bag, const MixtureSpec& spec,
                                  const TaskBagOptions& opt) {
    const int C = static_cast<int>(spec.components.size());
    std::vector<int> present(C, 0);
    int from_regression_component = 0;
    for (int cls : bag.instance_classes) {
        present[static_cast<std::size_t>(cls)] = 1;
        if (cls == opt.regression_component) ++from_regression_component;
    }
    int distinct = 0;
    for (int p : present) distinct += p;
    bag.labels[TaskId::pos_neg] =
        BagLabel::pos_neg(present[static_cast<std::size_t>(opt.positive_component)]);
    bag.labels[TaskId::ucc] = BagLabel::ucc(distinct);
    int mc;
    if (distinct == 1) {
        mc = bag.instance_classes[0];  // pure bag: class = its component
    } else {
        mc = C;  // mixed
    }
    bag.labels[TaskId::multi_class] = BagLabel::multi_class(mc);
    bag.labels[TaskId::multi_task] = BagLabel::multi_task(present);
    bag.labels[TaskId::regression] = BagLabel::regression(
        static_cast<double>(from_regression_component) / static_cast<double>(bag.n));
}

}  // namespace detail

// Mixture bags exercising all five task definitions: each bag draws its
// instances from a uniformly chosen nonempty component subset with flat
// simplex proportions, and every §-style task label is derived from the
// realized instance classes.
inline std::vector<RawBag> generate_task_bags(const MixtureSpec& spec, const TaskKind& task,
                                              int num_bags, int instances_per_bag,
                                              RngStream& rng, TaskBagOptions opt = {}) {
    spec.validate();
    const std::size_t C = spec.components.size();
    if (C < 2)
        throw std::invalid_argument("generate_task_bags: needs at least 2 mixture components");
    if (num_bags < 1 || instances_per_bag < static_cast<int>(C))
        throw std::invalid_argument(
            "generate_task_bags: num_bags must be >= 1 and instances_per_bag >= component "
            "count");
    TaskKind expected = mixture_task_kind(task.id, C);
    if (task.classes != expected.classes)
        throw std::invalid_argument(
            "generate_task_bags: task " + std::string(to_string(task.id)) + " over " +
            std::to_string(C) + " components requires " + std::to_string(expected.classes) +
            " classes, spec says " + std::to_string(task.classes));
    if (opt.positive_component < 0 || opt.positive_component >= static_cast<int>(C) ||
        opt.regression_component < 0 || opt.regression_component >= static_cast<int>(C))
        throw std::invalid_argument("generate_task_bags: designated component out of range");

    const std::size_t D = spec.dims();
    std::vector<RawBag> bags;
    bags.reserve(static_cast<std::size_t>(num_bags));
    for (int b = 0; b < num_bags; ++b) {
        // nonempty component subset, uniform over the 2^C - 1 possibilities
        std::uint64_t mask = rng.below((1ull << C) - 1) + 1;
        std::vector<int> chosen;
        for (std::size_t c = 0; c < C; ++c)
            if (mask & (1ull << c)) chosen.push_back(static_cast<int>(c));
        // flat simplex proportions via normalized exponentials
        std::vector<double> prop(chosen.size());
        double total = 0.0;
        for (double& p : prop) {
            p = -std::log(1.0 - rng.uniform01());
            total += p;
        }
        for (double& p : prop) p /= total;
        std::vector<int> counts = detail::apportion(prop, instances_per_bag);

        RawBag bag;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "bag_%05d", b);
        bag.id = idbuf;
        bag.n = static_cast<std::size_t>(instances_per_bag);
        bag.dims = D;
        bag.instances.reserve(bag.n * D);
        for (std::size_t ci = 0; ci < chosen.size(); ++ci) {
            const Component& comp = spec.components[static_cast<std::size_t>(chosen[ci])];
            for (int i = 0; i < counts[ci]; ++i) {
                for (std::size_t d = 0; d < D; ++d)
                    bag.instances.push_back(rng.normal(comp.mean[d], comp.stddev[d]));
                bag.instance_classes.push_back(chosen[ci]);
            }
        }
        // hide the generation order
        std::vector<std::size_t> perm(bag.n);
        for (std::size_t i = 0; i < bag.n; ++i) perm[i] = i;
        rng.shuffle(perm);
        std::vector<double> shuffled(bag.n * D);
        std::vector<int> shuffled_cls(bag.n);
        for (std::size_t i = 0; i < bag.n; ++i) {
            shuffled_cls[i] = bag.instance_classes[perm[i]];
            for (std::size_t d = 0; d < D; ++d)
                shuffled[i * D + d] = bag.instances[perm[i] * D + d];
        }
        bag.instances = std::move(shuffled);
        bag.instance_classes = std::move(shuffled_cls);
        bag.source = "task_bags";
        detail::derive_mixture_labels(bag, spec, opt);
        bags.push_back(std::move(bag));
    }
    return bags;
}

// ---------------------------------------------------------------------------
// Bag subsampling (classical-dataset rule)
// ---------------------------------------------------------------------------

// target <= N: that many distinct instances, uniformly without replacement.
// target > N: each instance floor(target/N) times, remainder filled by
// uniform draws without replacement.
inline RawBag subsample_bag(const RawBag& bag, int target_n, RngStream& rng) {
    if (target_n < 1) throw std::invalid_argument("subsample_bag: target must be >= 1");
    const std::size_t target = static_cast<std::size_t>(target_n);
    std::vector<std::size_t> picks;
    picks.reserve(target);
    std::vector<std::size_t> idx(bag.n);
    for (std::size_t i = 0; i < bag.n; ++i) idx[i] = i;
    auto draw_distinct = [&](std::size_t count) {
        // partial Fisher-Yates; first `count` entries of idx become the draw
        for (std::size_t i = 0; i < count; ++i) {
            std::size_t j = i + static_cast<std::size_t>(rng.below(bag.n - i));
            std::swap(idx[i], idx[j]);
            picks.push_back(idx[i]);
        }
    };
    if (bag.n >= target) {
        draw_distinct(target);
    } else {
        const std::size_t repeats = target / bag.n;
        for (std::size_t r = 0; r < repeats; ++r)
            for (std::size_t i = 0; i < bag.n; ++i) picks.push_back(i);
        draw_distinct(target % bag.n);
        rng.shuffle(picks);
    }
    RawBag out;
    out.id = bag.id;
    out.n = target;
    out.dims = bag.dims;
    out.labels = bag.labels;
    out.source = bag.source;
    out.instances.reserve(target * bag.dims);
    for (std::size_t p : picks) {
        for (std::size_t d = 0; d < bag.dims; ++d)
            out.instances.push_back(bag.instances[p * bag.dims + d]);
        if (!bag.instance_classes.empty()) out.instance_classes.push_back(bag.instance_classes[p]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Per-feature z-score fitted on the training bags only (population statistics,
// stddev floored at 1e-8) and applied to all three splits.
inline DatasetSplit normalize_features(DatasetSplit split) {
    if (split.train.empty())
        throw std::invalid_argument("normalize_features: train split is empty");
    const std::size_t D = split.train[0].dims;
    std::vector<double> mean(D, 0.0), sq(D, 0.0);
    std::size_t count = 0;
    for (const RawBag& bag : split.train) {
        for (std::size_t i = 0; i < bag.n; ++i)
            for (std::size_t d = 0; d < D; ++d) mean[d] += bag.instances[i * D + d];
        count += bag.n;
    }
    for (double& m : mean) m /= static_cast<double>(count);
    for (const RawBag& bag : split.train)
        for (std::size_t i = 0; i < bag.n; ++i)
            for (std::size_t d = 0; d < D; ++d) {
                double c = bag.instances[i * D + d] - mean[d];
                sq[d] += c * c;
            }
    std::vector<double> stddev(D);
    for (std::size_t d = 0; d < D; ++d) stddev[d] = std::sqrt(sq[d] / static_cast<double>(count));

    auto apply = [&](std::vector<RawBag>& bags) {
        for (RawBag& bag : bags)
            for (std::size_t i = 0; i < bag.n; ++i)
                for (std::size_t d = 0; d < D; ++d) {
                    double& v = bag.instances[i * D + d];
                    v = (v - mean[d]) / std::max(stddev[d], 1e-8);
                }
    };
    apply(split.train);
    apply(split.validation);
    apply(split.test);
    split.norm = NormStats{true, std::move(mean), std::move(stddev)};
    return split;
}

// ---------------------------------------------------------------------------
// Splits and folds
// ---------------------------------------------------------------------------

namespace detail {

// Stratification key for a bag under a task; single-label tasks use the class.
inline int strat_class(const RawBag& bag, TaskId task) {
    const BagLabel& l = bag.label(task);
    return l.cls;
}

// Proportionally interleaved ordering: classes shuffled internally, then dealt
// taking from the class with the most members remaining. Every prefix stays
// close to class-proportional.
inline std::vector<std::size_t> stratified_order(const std::vector<RawBag>& bags, TaskId task,
                                                 RngStream& rng) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < bags.size(); ++i)
        by_class[strat_class(bags[i], task)].push_back(i);
    std::vector<std::vector<std::size_t>> groups;
    for (auto& [cls, members] : by_class) {
        rng.shuffle(members);
        groups.push_back(std::move(members));
    }
    std::vector<std::size_t> order;
    order.reserve(bags.size());
    std::vector<std::size_t> used(groups.size(), 0);
    for (std::size_t step = 0; step < bags.size(); ++step) {
        std::size_t pick = 0;
        std::size_t best_left = 0;
        for (std::size_t g = 0; g < groups.size(); ++g) {
            std::size_t left = groups[g].size() - used[g];
            if (left > best_left) {
                best_left = left;
                pick = g;
            }
        }
        order.push_back(groups[pick][used[pick]++]);
    }
    return order;
}

}  // namespace detail

// Disjoint train/validation/test with the requested sizes. For single-label
// classification tasks the split is stratified; equal class counts fall out
// exactly when sizes divide evenly.
inline DatasetSplit split_dataset(const std::vector<RawBag>& bags, TaskId task,
                                  std::size_t n_train, std::size_t n_val, std::size_t n_test,
                                  RngStream& rng) {
    if (n_train + n_val + n_test > bags.size())
        throw std::invalid_argument("split_dataset: requested " +
                                    std::to_string(n_train + n_val + n_test) + " bags, have " +
                                    std::to_string(bags.size()));
    if (n_train == 0) throw std::invalid_argument("split_dataset: train split must be nonempty");
    bool single_label = !bags.empty() && bags[0].has_label(task) &&
                        (task == TaskId::pos_neg || task == TaskId::ucc ||
                         task == TaskId::multi_class);
    std::vector<std::size_t> order;
    if (single_label) {
        order = detail::stratified_order(bags, task, rng);
    } else {
        order.resize(bags.size());
        for (std::size_t i = 0; i < bags.size(); ++i) order[i] = i;
        rng.shuffle(order);
    }
    DatasetSplit split;
    for (std::size_t i = 0; i < n_train; ++i) split.train.push_back(bags[order[i]]);
    for (std::size_t i = 0; i < n_val; ++i) split.validation.push_back(bags[order[n_train + i]]);
    for (std::size_t i = 0; i < n_test; ++i)
        split.test.push_back(bags[order[n_train + n_val + i]]);
    return split;
}

struct FoldSplit {
    std::vector<std::size_t> train_ids;
    std::vector<std::size_t> test_ids;
};

struct KFoldPlan {
    std::vector<std::vector<FoldSplit>> repeats;  // [repeat][fold]
    bool stratified = false;
    std::string warning;
};

// k-fold partitions, `repeats` independent shuffles. Stratified dealing keeps
// per-class fold counts within one of proportional; classes smaller than k
// trigger a fallback to unstratified folds with a warning.
inline KFoldPlan kfold_split(const std::vector<RawBag>& bags, int k, int repeats, bool stratify,
                             TaskId task, RngStream& rng) {
    if (k < 2 || static_cast<std::size_t>(k) > bags.size())
        throw std::invalid_argument("kfold_split: k must be in [2, bag count], got " +
                                    std::to_string(k));
    if (repeats < 1) throw std::invalid_argument("kfold_split: repeats must be >= 1");

    KFoldPlan plan;
    bool use_strat = stratify;
    if (use_strat) {
        std::map<int, std::size_t> counts;
        for (const RawBag& bag : bags) counts[detail::strat_class(bag, task)]++;
        for (const auto& [cls, cnt] : counts) {
            if (cnt < static_cast<std::size_t>(k)) {
                plan.warning = "class " + std::to_string(cls) + " has only " +
                               std::to_string(cnt) + " bags (< k=" + std::to_string(k) +
                               "); falling back to unstratified folds";
                use_strat = false;
                break;
            }
        }
    }
    plan.stratified = use_strat;

    for (int r = 0; r < repeats; ++r) {
        RngStream rep_rng = rng.child(static_cast<std::uint64_t>(r));
        std::vector<std::size_t> order;
        if (use_strat) {
            // dealing a class-sorted shuffled order round-robin keeps both the
            // per-class and the total fold sizes within +-1
            std::map<int, std::vector<std::size_t>> by_class;
            for (std::size_t i = 0; i < bags.size(); ++i)
                by_class[detail::strat_class(bags[i], task)].push_back(i);
            for (auto& [cls, members] : by_class) {
                rep_rng.shuffle(members);
                order.insert(order.end(), members.begin(), members.end());
            }
        } else {
            order.resize(bags.size());
            for (std::size_t i = 0; i < bags.size(); ++i) order[i] = i;
            rep_rng.shuffle(order);
        }
        std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
        for (std::size_t pos = 0; pos < order.size(); ++pos)
            folds[pos % static_cast<std::size_t>(k)].push_back(order[pos]);
        std::vector<FoldSplit> splits(static_cast<std::size_t>(k));
        for (std::size_t f = 0; f < folds.size(); ++f) {
            std::sort(folds[f].begin(), folds[f].end());
            splits[f].test_ids = folds[f];
            for (std::size_t g = 0; g < folds.size(); ++g)
                if (g != f)
                    splits[f].train_ids.insert(splits[f].train_ids.end(), folds[g].begin(),
                                               folds[g].end());
            std::sort(splits[f].train_ids.begin(), splits[f].train_ids.end());
        }
        plan.repeats.push_back(std::move(splits));
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Bag CSV  (header: bag_id,label,f0..f{D-1})
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, std::size_t line_no) {
    const char* begin = s.data();
    const char* end = begin + s.size();
    double v = 0.0;
    auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc{} || res.ptr != end)
        throw std::runtime_error("line " + std::to_string(line_no) + ": cannot parse number '" +
                                 s + "'");
    return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace detail

inline std::string format_label(const TaskKind& task, const BagLabel& label) {
    switch (task.id) {
        case TaskId::pos_neg:
        case TaskId::multi_class: return std::to_string(label.cls);
        case TaskId::ucc: return std::to_string(label.cls);
        case TaskId::multi_task: {
            std::string s;
            for (int b : label.bits) s += b ? '1' : '0';
            return s;
        }
        case TaskId::regression: return detail::fmt_double(label.value);
    }
    throw std::logic_error("format_label: unreachable");
}

inline BagLabel parse_label(const TaskKind& task, const std::string& s, std::size_t line_no) {
    auto fail = [&](const std::string& why) -> BagLabel {
        throw std::runtime_error("line " + std::to_string(line_no) + ": " + why);
    };
    switch (task.id) {
        case TaskId::pos_neg: {
            if (s != "0" && s != "1") return fail("pos_neg label must be 0 or 1, got '" + s + "'");
            return BagLabel::pos_neg(s == "1" ? 1 : 0);
        }
        case TaskId::ucc: {
            int v = static_cast<int>(detail::parse_double(s, line_no));
            if (v < 1 || v > task.classes)
                return fail("ucc label " + s + " outside 1.." + std::to_string(task.classes));
            return BagLabel::ucc(v);
        }
        case TaskId::multi_class: {
            int v = static_cast<int>(detail::parse_double(s, line_no));
            if (v < 0 || v >= task.classes)
                return fail("class label " + s + " outside 0.." +
                            std::to_string(task.classes - 1));
            return BagLabel::multi_class(v);
        }
        case TaskId::multi_task: {
            if (s.size() != static_cast<std::size_t>(task.classes))
                return fail("multi_task label '" + s + "' must have " +
                            std::to_string(task.classes) + " bits");
            std::vector<int> bits;
            for (char ch : s) {
                if (ch != '0' && ch != '1') return fail("multi_task label '" + s + "' not binary");
                bits.push_back(ch == '1' ? 1 : 0);
            }
            return BagLabel::multi_task(std::move(bits));
        }
        case TaskId::regression:
            return BagLabel::regression(detail::parse_double(s, line_no));
    }
    throw std::logic_error("parse_label: unreachable");
}

inline void write_bag_csv(const std::vector<RawBag>& bags, const TaskKind& task,
                          const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    if (bags.empty()) throw std::invalid_argument("write_bag_csv: no bags");
    const std::size_t D = bags[0].dims;
    out << "bag_id,label";
    for (std::size_t d = 0; d < D; ++d) out << ",f" << d;
    out << '\n';
    for (const RawBag& bag : bags) {
        const std::string label = format_label(task, bag.label(task.id));
        for (std::size_t i = 0; i < bag.n; ++i) {
            out << bag.id << ',' << label;
            for (std::size_t d = 0; d < D; ++d)
                out << ',' << detail::fmt_double(bag.instances[i * D + d]);
            out << '\n';
        }
    }
}

// Column layout of a bag CSV; defaults match the written schema.
struct CsvSchema {
    TaskKind task;
    bool has_header = true;
    int bag_id_col = 0;
    int label_col = 1;
    // features: every other column
};

// Rows are grouped by bag id (not by contiguity), file order preserved within
// a bag. Ragged rows, bad numbers and conflicting bag labels are reported
// with their line number.
inline std::vector<RawBag> load_bag_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    std::size_t n_cols = 0;
    std::vector<RawBag> bags;
    std::map<std::string, std::size_t> index;  // bag id -> position in bags
    std::map<std::string, std::string> label_text;
    if (schema.has_header) {
        if (!std::getline(in, line)) throw std::runtime_error("'" + path + "' is empty");
        ++line_no;
    }
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (n_cols == 0) {
            n_cols = fields.size();
            if (n_cols < 3)
                throw std::runtime_error("line " + std::to_string(line_no) +
                                         ": need at least bag_id, label and one feature column");
        } else if (fields.size() != n_cols) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(n_cols) + " columns, got " +
                                     std::to_string(fields.size()));
        }
        const std::string& id = fields[static_cast<std::size_t>(schema.bag_id_col)];
        const std::string& label_str = fields[static_cast<std::size_t>(schema.label_col)];
        auto it = index.find(id);
        if (it == index.end()) {
            RawBag bag;
            bag.id = id;
            bag.dims = n_cols - 2;
            bag.labels[schema.task.id] = parse_label(schema.task, label_str, line_no);
            bag.source = path;
            index[id] = bags.size();
            label_text[id] = label_str;
            bags.push_back(std::move(bag));
            it = index.find(id);
        } else if (label_text[id] != label_str) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": bag '" + id +
                                     "' has conflicting labels '" + label_text[id] + "' and '" +
                                     label_str + "'");
        }
        RawBag& bag = bags[it->second];
        for (std::size_t col = 0; col < n_cols; ++col) {
            if (static_cast<int>(col) == schema.bag_id_col ||
                static_cast<int>(col) == schema.label_col)
                continue;
            bag.instances.push_back(detail::parse_double(fields[col], line_no));
        }
        bag.n += 1;
    }
    if (bags.empty()) throw std::runtime_error("'" + path + "' contains no data rows");
    return bags;
}

// Public MUSK distribution layout: molecule name, conformation name, 166
// features, class. Bags are keyed by molecule; a molecule is positive iff any
// of its rows is.
inline std::vector<RawBag> load_musk_format(const std::string& path) {
    constexpr std::size_t kMuskFeatures = 166;
    constexpr std::size_t kMuskCols = kMuskFeatures + 3;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    std::vector<RawBag> bags;
    std::map<std::string, std::size_t> index;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != kMuskCols)
            throw std::runtime_error("line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(kMuskCols) + " columns (molecule, "
                                     "conformation, 166 features, class), got " +
                                     std::to_string(fields.size()));
        const std::string& molecule = fields[0];
        auto it = index.find(molecule);
        if (it == index.end()) {
            RawBag bag;
            bag.id = molecule;
            bag.dims = kMuskFeatures;
            bag.labels[TaskId::pos_neg] = BagLabel::pos_neg(0);
            bag.source = path;
            index[molecule] = bags.size();
            bags.push_back(std::move(bag));
            it = index.find(molecule);
        }
        RawBag& bag = bags[it->second];
        for (std::size_t f = 0; f < kMuskFeatures; ++f)
            bag.instances.push_back(detail::parse_double(fields[2 + f], line_no));
        bag.n += 1;
        if (detail::parse_double(fields[kMuskCols - 1], line_no) > 0.5)
            bag.labels[TaskId::pos_neg] = BagLabel::pos_neg(1);
    }
    if (bags.empty()) throw std::runtime_error("'" + path + "' contains no data rows");
    return bags;
}

}  // namespace milpool
