#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "milpool/data.hpp"
#include "milpool/rng.hpp"

using namespace milpool;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string temp_path(const std::string& name) { return ::testing::TempDir() + name; }

// The §2.3 rules recomputed from scratch, used to cross-check stored labels.
BagLabel brute_force_label(const RawBag& bag, TaskId task, int n_components,
                           const TaskBagOptions& opt) {
    switch (task) {
        case TaskId::pos_neg: {
            int y = 0;
            for (int c : bag.instance_classes)
                if (c == opt.positive_component) y = 1;  // max over instance labels
            return BagLabel::pos_neg(y);
        }
        case TaskId::ucc: {
            std::set<int> distinct(bag.instance_classes.begin(), bag.instance_classes.end());
            return BagLabel::ucc(static_cast<int>(distinct.size()));
        }
        case TaskId::multi_class: {
            std::set<int> distinct(bag.instance_classes.begin(), bag.instance_classes.end());
            if (distinct.size() == 1) return BagLabel::multi_class(*distinct.begin());
            return BagLabel::multi_class(n_components);
        }
        case TaskId::multi_task: {
            std::vector<int> bits(static_cast<std::size_t>(n_components), 0);
            for (int c : bag.instance_classes) bits[static_cast<std::size_t>(c)] = 1;
            return BagLabel::multi_task(bits);
        }
        case TaskId::regression: {
            int k = 0;
            for (int c : bag.instance_classes)
                if (c == opt.regression_component) ++k;
            return BagLabel::regression(static_cast<double>(k) / static_cast<double>(bag.n));
        }
    }
    throw std::logic_error("unreachable");
}

}  // namespace

TEST(MetalBalls, DefaultCorpusCounts) {
    RngStream rng(1);
    auto bags = generate_metal_balls(MixtureSpec::metal_balls_default(), 300, 200, rng);
    ASSERT_EQ(bags.size(), 900u);
    int per_class[3] = {0, 0, 0};
    for (const auto& bag : bags) {
        EXPECT_EQ(bag.n, 200u);
        EXPECT_EQ(bag.dims, 1u);
        per_class[bag.label(TaskId::multi_class).cls]++;
    }
    for (int c : per_class) EXPECT_EQ(c, 300);
}

TEST(MetalBalls, MinimalCorpusAndComponentMoments) {
    RngStream rng(2);
    auto tiny = generate_metal_balls(MixtureSpec::metal_balls_default(), 1, 1, rng);
    ASSERT_EQ(tiny.size(), 3u);
    for (const auto& bag : tiny) EXPECT_EQ(bag.n, 1u);

    // red line: 1e5 radius draws must average into [0.298, 0.302]
    RngStream rng2(3);
    auto bags = generate_metal_balls(MixtureSpec::metal_balls_default(), 500, 200, rng2);
    double mean = 0.0;
    std::size_t count = 0;
    for (const auto& bag : bags) {
        if (bag.label(TaskId::multi_class).cls != 0) continue;
        for (double v : bag.instances) mean += v;
        count += bag.n;
    }
    ASSERT_EQ(count, 100000u);
    mean /= static_cast<double>(count);
    EXPECT_GE(mean, 0.298);
    EXPECT_LE(mean, 0.302);
}

TEST(MetalBalls, DeterministicSerialization) {
    auto run = [](const std::string& path) {
        RngStream rng(77);
        auto bags = generate_metal_balls(MixtureSpec::metal_balls_default(), 5, 10, rng);
        write_bag_csv(bags, TaskKind::multi_class(3), path);
    };
    std::string p1 = temp_path("metal_a.csv"), p2 = temp_path("metal_b.csv");
    run(p1);
    run(p2);
    EXPECT_EQ(read_file(p1), read_file(p2));
    EXPECT_FALSE(read_file(p1).empty());
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST(TaskBags, LabelDerivationMatchesBruteForce) {
    MixtureSpec spec = MixtureSpec::metal_balls_default();
    TaskBagOptions opt;  // positive/regression component 0
    for (TaskId task : {TaskId::pos_neg, TaskId::ucc, TaskId::multi_class, TaskId::multi_task,
                        TaskId::regression}) {
        RngStream rng(100 + static_cast<int>(task));
        auto bags = generate_task_bags(spec, mixture_task_kind(task, 3), 300, 16, rng, opt);
        ASSERT_EQ(bags.size(), 300u);
        for (const auto& bag : bags) {
            ASSERT_EQ(bag.instance_classes.size(), bag.n);
            EXPECT_EQ(bag.label(task), brute_force_label(bag, task, 3, opt))
                << "bag " << bag.id << " task " << to_string(task);
        }
    }
}

TEST(TaskBags, UccHistogramMatchesSubsetSizeDistribution) {
    // uniform over the 7 nonempty subsets of 3 components: P(ucc = 1,2,3) = 3/7, 3/7, 1/7
    RngStream rng(11);
    const int n = 600;
    auto bags = generate_task_bags(MixtureSpec::metal_balls_default(), TaskKind::ucc(3), n, 24,
                                   rng);
    int hist[3] = {0, 0, 0};
    for (const auto& bag : bags) hist[bag.label(TaskId::ucc).cls - 1]++;
    const double probs[3] = {3.0 / 7.0, 3.0 / 7.0, 1.0 / 7.0};
    for (int s = 0; s < 3; ++s) {
        double expected = n * probs[s];
        double sigma = std::sqrt(n * probs[s] * (1.0 - probs[s]));
        EXPECT_NEAR(hist[s], expected, 3.0 * sigma) << "ucc " << s + 1;
    }
}

TEST(TaskBags, ValidationErrors) {
    RngStream rng(12);
    MixtureSpec one{{{"only", {0.5}, {0.1}}}};
    EXPECT_THROW(generate_task_bags(one, TaskKind::ucc(1), 10, 8, rng), std::invalid_argument);
    MixtureSpec spec = MixtureSpec::metal_balls_default();
    // multi_class over 3 components needs 4 classes (3 pure + mixed)
    EXPECT_THROW(generate_task_bags(spec, TaskKind::multi_class(3), 10, 8, rng),
                 std::invalid_argument);
    EXPECT_NO_THROW(generate_task_bags(spec, TaskKind::multi_class(4), 10, 8, rng));
    // bags smaller than the component count cannot host every subset
    EXPECT_THROW(generate_task_bags(spec, TaskKind::ucc(3), 10, 2, rng), std::invalid_argument);
}

TEST(BagCsv, RoundTripAndGrouping) {
    std::string path = temp_path("bags_roundtrip.csv");
    {
        std::ofstream out(path);
        out << "bag_id,label,f0,f1\n";
        out << "a,1,0.25,0.5\n";
        out << "b,0,0.1,0.2\n";
        out << "a,1,0.75,1.0\n";  // interleaved: grouping is by id, not contiguity
    }
    CsvSchema schema{TaskKind::pos_neg()};
    auto bags = load_bag_csv(path, schema);
    ASSERT_EQ(bags.size(), 2u);
    EXPECT_EQ(bags[0].id, "a");
    EXPECT_EQ(bags[0].n, 2u);
    EXPECT_EQ(bags[0].instances, (std::vector<double>{0.25, 0.5, 0.75, 1.0}));
    EXPECT_EQ(bags[0].label(TaskId::pos_neg).cls, 1);
    EXPECT_EQ(bags[1].n, 1u);
    std::remove(path.c_str());
}

TEST(BagCsv, WriteThenLoadPreservesValuesExactly) {
    RngStream rng(13);
    auto bags = generate_metal_balls(MixtureSpec::metal_balls_default(), 3, 7, rng);
    std::string path = temp_path("bags_exact.csv");
    write_bag_csv(bags, TaskKind::multi_class(3), path);
    auto loaded = load_bag_csv(path, CsvSchema{TaskKind::multi_class(3)});
    ASSERT_EQ(loaded.size(), bags.size());
    for (std::size_t i = 0; i < bags.size(); ++i) {
        EXPECT_EQ(loaded[i].id, bags[i].id);
        EXPECT_EQ(loaded[i].instances, bags[i].instances);  // bit-exact round trip
        EXPECT_EQ(loaded[i].label(TaskId::multi_class), bags[i].label(TaskId::multi_class));
    }
    std::remove(path.c_str());
}

TEST(BagCsv, ErrorsCarryLineNumbers) {
    std::string path = temp_path("bags_bad.csv");
    auto write_and_expect = [&](const std::string& body, const std::string& needle) {
        {
            std::ofstream out(path);
            out << "bag_id,label,f0\n" << body;
        }
        try {
            load_bag_csv(path, CsvSchema{TaskKind::pos_neg()});
            FAIL() << "expected load error for: " << body;
        } catch (const std::runtime_error& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };
    write_and_expect("a,1,0.5\na,1,0.5,0.7\n", "line 3");            // ragged row
    write_and_expect("a,1,zebra\n", "line 2");                        // bad numeric
    write_and_expect("a,1,0.5\na,0,0.6\n", "conflicting labels");     // label conflict
    std::remove(path.c_str());
}

TEST(MuskFormat, FixtureParsesIntoBags) {
    std::string path = temp_path("musk_fixture.data");
    {
        std::ofstream out(path);
        auto row = [&](const std::string& mol, const std::string& conf, double fill, int cls) {
            out << mol << ',' << conf;
            for (int f = 0; f < 166; ++f) out << ',' << fill + f;
            out << ',' << cls << ".\n";  // the public files write classes as "0." / "1."
        };
        row("MUSK-01", "c1", 1.0, 0);
        row("NON-MUSK-02", "c1", 3.0, 0);
        row("MUSK-01", "c2", 2.0, 1);  // any positive row makes the molecule positive
    }
    auto bags = load_musk_format(path);
    ASSERT_EQ(bags.size(), 2u);
    EXPECT_EQ(bags[0].id, "MUSK-01");
    EXPECT_EQ(bags[0].n, 2u);
    EXPECT_EQ(bags[0].dims, 166u);
    EXPECT_EQ(bags[0].label(TaskId::pos_neg).cls, 1);
    EXPECT_EQ(bags[1].label(TaskId::pos_neg).cls, 0);
    std::remove(path.c_str());
}

TEST(MuskFormat, RejectsWrongColumnCountAndEmptyFile) {
    std::string path = temp_path("musk_bad.data");
    {
        std::ofstream out(path);
        out << "MOL,conf,1.0,2.0,0\n";  // far too few feature columns
    }
    EXPECT_THROW(load_musk_format(path), std::runtime_error);
    {
        std::ofstream out(path);  // truncate to empty
    }
    EXPECT_THROW(load_musk_format(path), std::runtime_error);
    std::remove(path.c_str());
}

TEST(SubsampleBag, OversamplingRule) {
    RawBag bag;
    bag.id = "x";
    bag.n = 3;
    bag.dims = 1;
    bag.instances = {1.0, 2.0, 3.0};
    bag.labels[TaskId::pos_neg] = BagLabel::pos_neg(1);
    RngStream rng(17);
    RawBag out = subsample_bag(bag, 16, rng);
    ASSERT_EQ(out.n, 16u);
    int counts[3] = {0, 0, 0};
    for (double v : out.instances) counts[static_cast<int>(v) - 1]++;
    for (int c : counts) EXPECT_GE(c, 5);  // each instance at least floor(16/3) times
    EXPECT_EQ(counts[0] + counts[1] + counts[2], 16);
    EXPECT_EQ(out.label(TaskId::pos_neg).cls, 1);
}

TEST(SubsampleBag, ExactAndDownsamplingRules) {
    RawBag bag;
    bag.id = "y";
    bag.n = 40;
    bag.dims = 1;
    for (int i = 0; i < 40; ++i) bag.instances.push_back(i);
    RngStream rng(19);

    RawBag same = subsample_bag(bag, 40, rng);
    std::multiset<double> a(bag.instances.begin(), bag.instances.end());
    std::multiset<double> b(same.instances.begin(), same.instances.end());
    EXPECT_EQ(a, b);  // a permutation of the original instances

    RawBag down = subsample_bag(bag, 16, rng);
    std::set<double> distinct(down.instances.begin(), down.instances.end());
    EXPECT_EQ(distinct.size(), 16u);  // no repeats when enough instances exist
    EXPECT_THROW(subsample_bag(bag, 0, rng), std::invalid_argument);
}

TEST(Normalize, HandValueAndConstantFeature) {
    DatasetSplit split;
    RawBag t1;
    t1.id = "t1";
    t1.n = 2;
    t1.dims = 2;
    t1.instances = {3.0, 5.0, 7.0, 5.0};  // feature 0: mean 5, std 2; feature 1 constant
    t1.labels[TaskId::regression] = BagLabel::regression(0.0);
    split.train = {t1};
    RawBag test = t1;
    test.id = "test";
    test.instances = {9.0, 5.0, 5.0, 5.0};
    split.test = {test};

    DatasetSplit normed = normalize_features(split);
    EXPECT_NEAR(normed.test[0].instances[0], 2.0, 1e-12);  // (9-5)/2
    EXPECT_NEAR(normed.test[0].instances[1], 0.0, 1e-12);  // constant feature -> zeros
    EXPECT_NEAR(normed.train[0].instances[1], 0.0, 1e-12);
}

TEST(Normalize, Idempotence) {
    RngStream rng(23);
    DatasetSplit split;
    for (int b = 0; b < 10; ++b) {
        RawBag bag;
        bag.id = "b" + std::to_string(b);
        bag.n = 20;
        bag.dims = 3;
        for (int i = 0; i < 60; ++i) bag.instances.push_back(rng.uniform(-4, 9));
        bag.labels[TaskId::regression] = BagLabel::regression(0.5);
        split.train.push_back(bag);
    }
    DatasetSplit once = normalize_features(split);
    DatasetSplit twice = normalize_features(once);
    // re-fitting on an already-normalized train split: mean ~0, std ~1
    for (double m : twice.norm.mean) EXPECT_LE(std::fabs(m), 1e-9);
    for (double s : twice.norm.stddev) EXPECT_NEAR(s, 1.0, 1e-6);
}

namespace {
std::vector<RawBag> labeled_bags(int n_pos, int n_neg) {
    std::vector<RawBag> bags;
    for (int i = 0; i < n_pos + n_neg; ++i) {
        RawBag bag;
        bag.id = "bag" + std::to_string(i);
        bag.n = 1;
        bag.dims = 1;
        bag.instances = {static_cast<double>(i)};
        bag.labels[TaskId::pos_neg] = BagLabel::pos_neg(i < n_pos ? 1 : 0);
        bags.push_back(bag);
    }
    return bags;
}
}  // namespace

TEST(KFold, MuskShapedPartition) {
    // 47 positive + 45 negative bags, k = 10: fold sizes 9 or 10, disjoint, covering
    auto bags = labeled_bags(47, 45);
    RngStream rng(29);
    KFoldPlan plan = kfold_split(bags, 10, 1, true, TaskId::pos_neg, rng);
    ASSERT_EQ(plan.repeats.size(), 1u);
    ASSERT_EQ(plan.repeats[0].size(), 10u);
    EXPECT_TRUE(plan.stratified);
    std::set<std::size_t> all;
    for (const auto& fold : plan.repeats[0]) {
        EXPECT_GE(fold.test_ids.size(), 9u);
        EXPECT_LE(fold.test_ids.size(), 10u);
        EXPECT_EQ(fold.train_ids.size() + fold.test_ids.size(), 92u);
        for (std::size_t id : fold.test_ids) {
            EXPECT_TRUE(all.insert(id).second) << "bag in two test folds";
        }
        // per-class stratification within one of proportional
        int pos = 0;
        for (std::size_t id : fold.test_ids)
            if (bags[id].label(TaskId::pos_neg).cls == 1) ++pos;
        EXPECT_GE(pos, 4);
        EXPECT_LE(pos, 5);
    }
    EXPECT_EQ(all.size(), 92u);
}

TEST(KFold, LeaveOneOutAndDeterminism) {
    auto bags = labeled_bags(3, 3);
    RngStream r1(31), r2(31);
    KFoldPlan a = kfold_split(bags, 6, 2, false, TaskId::pos_neg, r1);
    KFoldPlan b = kfold_split(bags, 6, 2, false, TaskId::pos_neg, r2);
    for (const auto& fold : a.repeats[0]) EXPECT_EQ(fold.test_ids.size(), 1u);
    for (int r = 0; r < 2; ++r)
        for (int f = 0; f < 6; ++f)
            EXPECT_EQ(a.repeats[r][f].test_ids, b.repeats[r][f].test_ids);
    EXPECT_THROW(kfold_split(bags, 1, 1, false, TaskId::pos_neg, r1), std::invalid_argument);
    EXPECT_THROW(kfold_split(bags, 7, 1, false, TaskId::pos_neg, r1), std::invalid_argument);
}

TEST(KFold, SmallClassFallsBackToUnstratified) {
    auto bags = labeled_bags(2, 30);
    RngStream rng(37);
    KFoldPlan plan = kfold_split(bags, 10, 1, true, TaskId::pos_neg, rng);
    EXPECT_FALSE(plan.stratified);
    EXPECT_FALSE(plan.warning.empty());
}

TEST(SplitDataset, MetalBallsSplitIsClassBalanced) {
    RngStream gen(41);
    auto bags = generate_metal_balls(MixtureSpec::metal_balls_default(), 300, 5, gen);
    RngStream rng(43);
    DatasetSplit split = split_dataset(bags, TaskId::multi_class, 600, 150, 150, rng);
    EXPECT_EQ(split.train.size(), 600u);
    EXPECT_EQ(split.validation.size(), 150u);
    EXPECT_EQ(split.test.size(), 150u);
    auto count = [&](const std::vector<RawBag>& bags_, int cls) {
        int n = 0;
        for (const auto& b : bags_)
            if (b.label(TaskId::multi_class).cls == cls) ++n;
        return n;
    };
    for (int c = 0; c < 3; ++c) {
        EXPECT_EQ(count(split.train, c), 200);
        EXPECT_EQ(count(split.validation, c), 50);
        EXPECT_EQ(count(split.test, c), 50);
    }
    // splits are disjoint by id
    std::set<std::string> ids;
    for (const auto& b : split.train) ids.insert(b.id);
    for (const auto& b : split.validation) EXPECT_FALSE(ids.count(b.id));
    for (const auto& b : split.test) EXPECT_FALSE(ids.count(b.id));
}
