#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "milpool/model.hpp"
#include "milpool/rng.hpp"
#include "support/gradcheck.hpp"

using namespace milpool;
using testsupport::max_grad_rel_error;

namespace {

constexpr double kGradTol = 1e-4;

// Supp.-Table-4 shape: raw radius in, distribution pooling, one linear layer.
ModelSpec metal_balls_spec() {
    ModelSpec spec;
    spec.input_width = 1;
    spec.pooling = PoolingSpec{PoolKind::distribution, 101, 0.005, {}};
    spec.task = TaskKind::multi_class(3);
    return spec;
}

ModelSpec tiny_spec(PoolKind kind, TaskKind task) {
    ModelSpec spec;
    spec.input_width = 2;
    spec.extractor = {{2, Activation::sigmoid, 0.0}};
    spec.pooling.kind = kind;
    if (spec.pooling.is_distribution()) {
        spec.pooling.bins = 5;
        spec.pooling.sigma = 0.2;
    }
    if (spec.pooling.has_attention()) spec.pooling.attention_layers = {3};
    spec.transform = {{3, Activation::tanh, 0.0}};
    spec.task = task;
    return spec;
}

BagLabel label_for(const TaskKind& task) {
    switch (task.id) {
        case TaskId::pos_neg: return BagLabel::pos_neg(1);
        case TaskId::ucc: return BagLabel::ucc(2);
        case TaskId::multi_class: return BagLabel::multi_class(1);
        case TaskId::multi_task: return BagLabel::multi_task({1, 0});
        case TaskId::regression: return BagLabel::regression(0.37);
    }
    throw std::logic_error("unreachable");
}

}  // namespace

TEST(BuildModel, MetalBallsParameterCount) {
    RngStream rng(1);
    Model model(metal_balls_spec(), rng);
    // 101-wide pooled representation into a 3-way head: 3*101 weights + 3 biases
    EXPECT_EQ(model.parameter_count(), 306u);
}

TEST(BuildModel, DeterministicGivenSeed) {
    RngStream r1(42), r2(42);
    Model a(tiny_spec(PoolKind::distribution_attention, TaskKind::multi_class(3)), r1);
    Model b(tiny_spec(PoolKind::distribution_attention, TaskKind::multi_class(3)), r2);
    ASSERT_EQ(a.parameters().size(), b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i)
        EXPECT_EQ(a.parameters()[i].value.values(), b.parameters()[i].value.values());
}

TEST(BuildModel, MuskTransformInputWidth) {
    ModelSpec spec;
    spec.input_width = 166;
    spec.extractor = {{64, Activation::relu, 0.0},
                      {32, Activation::relu, 0.5},
                      {32, Activation::sigmoid, 0.5}};
    spec.pooling = PoolingSpec{PoolKind::distribution, 11, 0.1, {}};
    spec.transform = {{64, Activation::relu, 0.5}, {32, Activation::relu, 0.5}};
    spec.head_dropout_before = 0.5;
    spec.task = TaskKind::pos_neg();
    EXPECT_EQ(spec.pooled_width(), 352u);
    RngStream rng(7);
    EXPECT_NO_THROW(Model(spec, rng));
}

TEST(BuildModel, WeightRangeFollowsFanIn) {
    RngStream rng(3);
    Model model(metal_balls_spec(), rng);
    double bound = 1.0 / std::sqrt(101.0);
    const auto& w = model.parameters()[0];
    ASSERT_EQ(w.name, "head.weight");
    for (double v : w.value.values()) {
        EXPECT_GE(v, -bound);
        EXPECT_LE(v, bound);
    }
    EXPECT_EQ(model.parameters()[1].name, "head.bias");
    for (double v : model.parameters()[1].value.values()) EXPECT_EQ(v, 0.0);
}

TEST(ModelSpecValidation, EnumeratesEveryViolation) {
    ModelSpec spec;
    spec.input_width = 0;                                   // violation 1
    spec.extractor = {{-3, Activation::relu, 1.5}};         // violations 2 and 3
    spec.pooling = PoolingSpec{PoolKind::distribution, 1, -0.5, {}};  // 4 (bins), extractor not
    spec.task = TaskKind{TaskId::pos_neg, 3};               // sigmoid-final (5), classes (6)
    auto problems = spec.validate();
    EXPECT_GE(problems.size(), 5u);
    EXPECT_THROW(spec.validate_or_throw(), std::invalid_argument);
}

TEST(ForwardBag, SoftmaxHeadSumsToOne) {
    RngStream rng(11);
    Model model(tiny_spec(PoolKind::attention, TaskKind::multi_class(3)), rng);
    RngStream data(5);
    std::vector<double> bag;
    for (int i = 0; i < 8 * 2; ++i) bag.push_back(data.uniform(-1, 1));
    std::vector<double> out = model.predict_raw(bag);
    ASSERT_EQ(out.size(), 3u);
    double total = 0.0;
    for (double v : out) total += v;
    EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(ForwardBag, PermutationInvariantOutput) {
    RngStream rng(13);
    for (PoolKind kind : {PoolKind::max, PoolKind::mean, PoolKind::attention,
                          PoolKind::distribution, PoolKind::distribution_attention}) {
        Model model(tiny_spec(kind, TaskKind::pos_neg()), rng);
        RngStream data(17);
        const std::size_t n = 6, d = 2;
        std::vector<double> bag(n * d);
        for (double& v : bag) v = data.uniform(-1, 1);
        std::vector<double> rotated(bag.end() - static_cast<long>(d), bag.end());
        rotated.insert(rotated.end(), bag.begin(), bag.end() - static_cast<long>(d));
        auto a = model.predict_raw(bag);
        auto b = model.predict_raw(rotated);
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
    }
}

TEST(ForwardBag, VariableBagSizesAndWidthError) {
    RngStream rng(19);
    Model model(tiny_spec(PoolKind::distribution, TaskKind::pos_neg()), rng);
    RngStream data(23);
    for (std::size_t n : {1u, 4u, 64u}) {
        std::vector<double> bag(n * 2);
        for (double& v : bag) v = data.uniform(-1, 1);
        EXPECT_EQ(model.predict_raw(bag).size(), 2u);
    }
    EXPECT_THROW(model.predict_raw(std::vector<double>{1.0, 2.0, 3.0}), std::invalid_argument);
    EXPECT_THROW(model.predict_raw(std::vector<double>{}), std::invalid_argument);
}

TEST(ForwardBag, EvalModeIsDeterministicDespiteDropout) {
    ModelSpec spec = tiny_spec(PoolKind::mean, TaskKind::pos_neg());
    spec.transform[0].dropout_before = 0.5;
    spec.head_dropout_before = 0.5;
    RngStream rng(29);
    Model model(spec, rng);
    std::vector<double> bag{0.1, -0.2, 0.4, 0.9};
    EXPECT_EQ(model.predict_raw(bag), model.predict_raw(bag));

    // train mode with live dropout differs between draws
    RngStream t1(1), t2(2);
    auto a = model.forward(bag, Mode::train, t1).values();
    auto b = model.forward(bag, Mode::train, t2).values();
    EXPECT_NE(a, b);
}

TEST(Loss, HandValues) {
    // CCE with one-hot [1,0] against the uniform prediction
    Tensor pred = Tensor::leaf({2}, {0.5, 0.5});
    Tensor l = task_loss(TaskKind::pos_neg(), pred, BagLabel::pos_neg(0));
    EXPECT_NEAR(l.value(), std::log(2.0), 1e-12);

    // perfect multi_task prediction
    Tensor p2 = Tensor::leaf({2}, {1.0 - 1e-9, 1.0 - 1e-9});
    Tensor l2 = task_loss(TaskKind::multi_task(2), p2, BagLabel::multi_task({1, 1}));
    EXPECT_NEAR(l2.value(), 0.0, 1e-8);

    Tensor p3 = Tensor::leaf({1}, {0.45});
    Tensor l3 = task_loss(TaskKind::regression(), p3, BagLabel::regression(0.3));
    EXPECT_NEAR(l3.value(), 0.15, 1e-12);
}

TEST(Loss, NonnegativeAndZeroOnlyAtOneHot) {
    RngStream rng(31);
    TaskKind task = TaskKind::multi_class(3);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor logits = Tensor::uniform({1, 3}, -3, 3, rng);
        Tensor p = softmax_rows(logits);
        int cls = static_cast<int>(rng.below(3));
        double l = task_loss(task, reshape(p, {3}), BagLabel::multi_class(cls)).value();
        EXPECT_GE(l, 0.0);
    }
    // exact one-hot prediction: loss collapses to the clamp tolerance
    Tensor onehot = Tensor::leaf({3}, {0.0, 1.0, 0.0});
    double l = task_loss(task, onehot, BagLabel::multi_class(1)).value();
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 1e-11);
    double wrong = task_loss(task, onehot, BagLabel::multi_class(0)).value();
    EXPECT_GT(wrong, 1.0);
}

TEST(Loss, MismatchErrors) {
    Tensor pred = Tensor::leaf({2}, {0.5, 0.5});
    EXPECT_THROW(task_loss(TaskKind::multi_class(3), pred, BagLabel::multi_class(0)),
                 std::invalid_argument);
    EXPECT_THROW(task_loss(TaskKind::pos_neg(), pred, BagLabel::regression(0.5)),
                 std::invalid_argument);
    EXPECT_THROW(task_loss(TaskKind::multi_task(2), pred, BagLabel::multi_task({1})),
                 std::invalid_argument);
}

TEST(PredictLabel, ArgmaxTieBreakAndThresholds) {
    EXPECT_EQ(predict_label(TaskKind::pos_neg(), {0.2, 0.8}).cls, 1);
    EXPECT_EQ(predict_label(TaskKind::pos_neg(), {0.5, 0.5}).cls, 0);  // first index on ties
    EXPECT_EQ(predict_label(TaskKind::ucc(3), {0.1, 0.7, 0.2}).cls, 2);
    auto mt = predict_label(TaskKind::multi_task(2), {0.9, 0.4});
    EXPECT_EQ(mt.bits, (std::vector<int>{1, 0}));
    EXPECT_DOUBLE_EQ(predict_label(TaskKind::regression(), {0.37}).value, 0.37);
}

TEST(AveragePredictions, SingleAndIdenticalBags) {
    RngStream rng(37);
    Model model(tiny_spec(PoolKind::mean, TaskKind::pos_neg()), rng);
    std::vector<double> bag{0.3, -0.4, 0.8, 0.1};
    auto single = average_raw_predictions(model, {bag});
    EXPECT_EQ(single, model.predict_raw(bag));
    auto twice = average_raw_predictions(model, {bag, bag});
    for (std::size_t i = 0; i < twice.size(); ++i) EXPECT_NEAR(twice[i], single[i], 1e-15);
    EXPECT_THROW(average_raw_predictions(model, {}), std::invalid_argument);
}

TEST(EndToEnd, GradientsForEveryFilterAndLoss) {
    RngStream rng(41);
    const std::vector<PoolKind> kinds{PoolKind::max, PoolKind::mean, PoolKind::attention,
                                      PoolKind::distribution, PoolKind::distribution_attention};
    const std::vector<TaskKind> tasks{TaskKind::pos_neg(), TaskKind::ucc(2),
                                      TaskKind::multi_class(3), TaskKind::multi_task(2),
                                      TaskKind::regression()};
    RngStream data(43);
    std::vector<double> bag(3 * 2);  // N=3, D=2
    for (double& v : bag) v = data.uniform(-1, 1);

    for (PoolKind kind : kinds) {
        for (const TaskKind& task : tasks) {
            Model model(tiny_spec(kind, task), rng);
            BagLabel label = label_for(task);
            std::vector<Tensor> leaves;
            for (auto& p : model.parameters()) leaves.push_back(p.value);
            RngStream fwd(7);
            double err = max_grad_rel_error(leaves, [&] {
                RngStream local = fwd;
                Tensor pred = model.forward(bag, Mode::train, local);
                return task_loss(task, reshape(pred, {static_cast<std::size_t>(
                                                   task.head_width())}),
                                 label);
            });
            EXPECT_LE(err, kGradTol) << to_string(kind) << " / " << to_string(task.id);
        }
    }
}

TEST(Serialization, RoundTripsExactly) {
    RngStream rng(47);
    Model model(tiny_spec(PoolKind::distribution_attention, TaskKind::multi_class(3)), rng);
    std::string path = ::testing::TempDir() + "milpool_model_roundtrip.json";
    save_model(model, path);
    Model loaded = load_model(path);

    EXPECT_EQ(loaded.spec().task.id, model.spec().task.id);
    EXPECT_EQ(loaded.spec().pooling.bins, model.spec().pooling.bins);
    ASSERT_EQ(loaded.parameters().size(), model.parameters().size());
    for (std::size_t i = 0; i < model.parameters().size(); ++i)
        EXPECT_EQ(loaded.parameters()[i].value.values(), model.parameters()[i].value.values());

    std::vector<double> bag{0.2, -0.7, 0.5, 0.5, -0.4, 0.9};
    EXPECT_EQ(loaded.predict_raw(bag), model.predict_raw(bag));
    std::remove(path.c_str());
}

TEST(Serialization, RejectsWrongFormat) {
    json j;
    j["format"] = "something-else";
    EXPECT_THROW(model_from_json(j), std::invalid_argument);
}

TEST(CloneAndRestore, IndependentParameters) {
    RngStream rng(53);
    Model model(tiny_spec(PoolKind::mean, TaskKind::pos_neg()), rng);
    Model copy = model.clone();
    auto snap = model.snapshot();
    copy.parameters()[0].value.mutable_values()[0] += 1.0;
    EXPECT_NE(copy.parameters()[0].value.values()[0], model.parameters()[0].value.values()[0]);
    model.restore(snap);
    std::vector<double> bag{0.1, 0.2, 0.3, 0.4};
    EXPECT_EQ(model.predict_raw(bag), model.clone().predict_raw(bag));
}
