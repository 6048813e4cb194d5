#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "milpool/pooling.hpp"
#include "milpool/rng.hpp"
#include "milpool/tensor.hpp"

namespace milpool {

using json = nlohmann::ordered_json;

enum class Activation { none, relu, sigmoid, tanh };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::none: return "none";
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "none") return Activation::none;
    if (s == "relu") return Activation::relu;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "tanh") return Activation::tanh;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

inline Tensor apply_activation(const Tensor& x, Activation a) {
    switch (a) {
        case Activation::none: return x;
        case Activation::relu: return relu(x);
        case Activation::sigmoid: return sigmoid(x);
        case Activation::tanh: return tanh(x);
    }
    throw std::logic_error("apply_activation: unreachable");
}

// One fully-connected layer: optional dropout applied to its input, then
// x*W + b, then the activation.
struct LayerSpec {
    int units = 0;
    Activation activation = Activation::none;
    double dropout_before = 0.0;
};

enum class TaskId { pos_neg, ucc, multi_class, multi_task, regression };
enum class LossKind { cce, bce, l1 };
enum class HeadActivation { softmax, sigmoid, none };

inline const char* to_string(TaskId t) {
    switch (t) {
        case TaskId::pos_neg: return "pos_neg";
        case TaskId::ucc: return "ucc";
        case TaskId::multi_class: return "multi_class";
        case TaskId::multi_task: return "multi_task";
        case TaskId::regression: return "regression";
    }
    return "?";
}

inline TaskId task_id_from_string(const std::string& s) {
    if (s == "pos_neg") return TaskId::pos_neg;
    if (s == "ucc") return TaskId::ucc;
    if (s == "multi_class") return TaskId::multi_class;
    if (s == "multi_task") return TaskId::multi_task;
    if (s == "regression") return TaskId::regression;
    throw std::invalid_argument("unknown task kind '" + s + "'");
}

// A task fixes the head width, the output activation, the loss, and how
// labels are encoded.
struct TaskKind {
    TaskId id = TaskId::pos_neg;
    int classes = 2;  // L for ucc, K for multi_class/multi_task; fixed otherwise

    static TaskKind pos_neg() { return {TaskId::pos_neg, 2}; }
    static TaskKind ucc(int L = 2) { return {TaskId::ucc, L}; }
    static TaskKind multi_class(int K) { return {TaskId::multi_class, K}; }
    static TaskKind multi_task(int K) { return {TaskId::multi_task, K}; }
    static TaskKind regression() { return {TaskId::regression, 1}; }

    int head_width() const { return id == TaskId::regression ? 1 : classes; }

    HeadActivation head_activation() const {
        switch (id) {
            case TaskId::pos_neg:
            case TaskId::ucc:
            case TaskId::multi_class: return HeadActivation::softmax;
            case TaskId::multi_task: return HeadActivation::sigmoid;
            case TaskId::regression: return HeadActivation::none;
        }
        throw std::logic_error("head_activation: unreachable");
    }

    LossKind loss_kind() const {
        switch (id) {
            case TaskId::pos_neg:
            case TaskId::ucc:
            case TaskId::multi_class: return LossKind::cce;
            case TaskId::multi_task: return LossKind::bce;
            case TaskId::regression: return LossKind::l1;
        }
        throw std::logic_error("loss_kind: unreachable");
    }

    bool is_classification() const { return id != TaskId::regression; }
    bool single_label() const {
        return id == TaskId::pos_neg || id == TaskId::ucc || id == TaskId::multi_class;
    }
};

// Task label of one bag; which field is meaningful depends on the task.
struct BagLabel {
    TaskId task = TaskId::pos_neg;
    int cls = 0;               // pos_neg: 0/1; ucc: 1..L; multi_class: 0..K-1
    std::vector<int> bits;     // multi_task presence bits
    double value = 0.0;        // regression target

    static BagLabel pos_neg(int y) { return {TaskId::pos_neg, y, {}, 0.0}; }
    static BagLabel ucc(int count) { return {TaskId::ucc, count, {}, 0.0}; }
    static BagLabel multi_class(int k) { return {TaskId::multi_class, k, {}, 0.0}; }
    static BagLabel multi_task(std::vector<int> b) {
        return {TaskId::multi_task, 0, std::move(b), 0.0};
    }
    static BagLabel regression(double v) { return {TaskId::regression, 0, {}, v}; }

    bool operator==(const BagLabel&) const = default;
};

// Full network description: per-instance feature extractor, pooling filter,
// bag-level transform, task head. The head layer (width and activation) is
// derived from the task and appended after the transform layers.
struct ModelSpec {
    int input_width = 0;
    std::vector<LayerSpec> extractor;
    PoolingSpec pooling;
    std::vector<LayerSpec> transform;
    double head_dropout_before = 0.0;
    TaskKind task;

    // width J of the extracted feature vectors
    std::size_t feature_width() const {
        return extractor.empty() ? static_cast<std::size_t>(input_width)
                                 : static_cast<std::size_t>(extractor.back().units);
    }

    std::size_t pooled_width() const { return pooling.output_width(feature_width()); }

    std::vector<std::string> validate() const {
        std::vector<std::string> problems;
        if (input_width < 1) problems.push_back("input_width must be >= 1");
        auto check_layers = [&](const std::vector<LayerSpec>& layers, const char* where) {
            for (std::size_t i = 0; i < layers.size(); ++i) {
                if (layers[i].units < 1)
                    problems.push_back(std::string(where) + " layer " + std::to_string(i) +
                                       ": units must be >= 1");
                if (!(layers[i].dropout_before >= 0.0 && layers[i].dropout_before < 1.0))
                    problems.push_back(std::string(where) + " layer " + std::to_string(i) +
                                       ": dropout must be in [0, 1)");
            }
        };
        check_layers(extractor, "extractor");
        check_layers(transform, "transform");
        if (!(head_dropout_before >= 0.0 && head_dropout_before < 1.0))
            problems.push_back("head dropout must be in [0, 1)");
        try {
            pooling.validate();
        } catch (const std::exception& e) {
            problems.push_back(e.what());
        }
        if (spec_has_attention() )
            for (int u : pooling.attention_layers)
                if (u < 1) problems.push_back("attention layer sizes must be >= 1");
        if (pooling.is_distribution() && !extractor.empty() &&
            extractor.back().activation != Activation::sigmoid)
            problems.push_back(
                "distribution pooling requires the final extractor activation to be sigmoid "
                "(features must lie in [0,1])");
        switch (task.id) {
            case TaskId::pos_neg:
                if (task.classes != 2) problems.push_back("pos_neg task must have 2 classes");
                break;
            case TaskId::ucc:
                if (task.classes < 2) problems.push_back("ucc task needs at least 2 classes");
                break;
            case TaskId::multi_class:
                if (task.classes < 2)
                    problems.push_back("multi_class task needs at least 2 classes");
                break;
            case TaskId::multi_task:
                if (task.classes < 1) problems.push_back("multi_task task needs at least 1 task");
                break;
            case TaskId::regression:
                if (task.classes != 1) problems.push_back("regression task has exactly 1 output");
                break;
        }
        return problems;
    }

    void validate_or_throw() const {
        auto problems = validate();
        if (!problems.empty()) {
            std::string msg = "invalid model spec:";
            for (const auto& p : problems) msg += "\n  - " + p;
            throw std::invalid_argument(msg);
        }
    }

private:
    bool spec_has_attention() const { return pooling.has_attention(); }
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

class Model {
public:
    struct Param {
        std::string name;
        Tensor value;
    };

    Model() = default;

    // Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
    Model(const ModelSpec& spec, RngStream& rng) : spec_(spec) {
        spec_.validate_or_throw();
        std::size_t in = static_cast<std::size_t>(spec_.input_width);
        for (std::size_t l = 0; l < spec_.extractor.size(); ++l) {
            push_linear("extractor." + std::to_string(l), in,
                        static_cast<std::size_t>(spec_.extractor[l].units), rng, ext_w_, ext_b_);
            in = static_cast<std::size_t>(spec_.extractor[l].units);
        }
        if (spec_.pooling.has_attention()) {
            attention_ = AttentionNet(spec_.feature_width(), spec_.pooling.attention_layers, rng);
            auto ps = attention_.parameters();
            for (std::size_t i = 0; i < ps.size(); ++i) {
                const char* kind = (i % 2 == 0) ? "weight" : "bias";
                params_.push_back({"attention." + std::to_string(i / 2) + "." + kind, ps[i]});
            }
        }
        in = spec_.pooled_width();
        for (std::size_t l = 0; l < spec_.transform.size(); ++l) {
            push_linear("transform." + std::to_string(l), in,
                        static_cast<std::size_t>(spec_.transform[l].units), rng, tr_w_, tr_b_);
            in = static_cast<std::size_t>(spec_.transform[l].units);
        }
        double bound = 1.0 / std::sqrt(static_cast<double>(in));
        head_w_ = Tensor::uniform({in, static_cast<std::size_t>(spec_.task.head_width())}, -bound,
                                  bound, rng);
        head_b_ = Tensor::zeros({static_cast<std::size_t>(spec_.task.head_width())});
        params_.push_back({"head.weight", head_w_});
        params_.push_back({"head.bias", head_b_});
    }

    const ModelSpec& spec() const { return spec_; }
    const AttentionNet& attention() const { return attention_; }

    // instances: N x input_width, row-major; N inferred from the length.
    Tensor forward(const std::vector<double>& instances, Mode mode, RngStream& rng) const {
        const std::size_t D = static_cast<std::size_t>(spec_.input_width);
        if (instances.empty() || instances.size() % D != 0) {
            throw std::invalid_argument("forward: instance matrix of " +
                                        std::to_string(instances.size()) +
                                        " values is not N x " + std::to_string(D));
        }
        const std::size_t n = instances.size() / D;
        Tensor x = Tensor::leaf({n, D}, instances);
        for (std::size_t l = 0; l < spec_.extractor.size(); ++l) {
            const LayerSpec& layer = spec_.extractor[l];
            if (layer.dropout_before > 0.0) x = dropout(x, layer.dropout_before, mode, rng);
            x = apply_activation(add_rowvec(matmul(x, ext_w_[l]), ext_b_[l]), layer.activation);
        }
        FeatureBag bag{x};
        Tensor h = apply_pooling(bag, spec_.pooling,
                                 spec_.pooling.has_attention() ? &attention_ : nullptr);
        x = reshape(h, {1, h.size()});
        for (std::size_t l = 0; l < spec_.transform.size(); ++l) {
            const LayerSpec& layer = spec_.transform[l];
            if (layer.dropout_before > 0.0) x = dropout(x, layer.dropout_before, mode, rng);
            x = apply_activation(add_rowvec(matmul(x, tr_w_[l]), tr_b_[l]), layer.activation);
        }
        if (spec_.head_dropout_before > 0.0)
            x = dropout(x, spec_.head_dropout_before, mode, rng);
        x = add_rowvec(matmul(x, head_w_), head_b_);
        switch (spec_.task.head_activation()) {
            case HeadActivation::softmax: return softmax_rows(x);
            case HeadActivation::sigmoid: return sigmoid(x);
            case HeadActivation::none: return x;
        }
        throw std::logic_error("forward: unreachable");
    }

    // Deterministic eval-mode forward; consumes no randomness.
    std::vector<double> predict_raw(const std::vector<double>& instances) const {
        RngStream unused(0);
        return forward(instances, Mode::eval, unused).values();
    }

    std::vector<Param>& parameters() { return params_; }
    const std::vector<Param>& parameters() const { return params_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p.value.zero_grad();
    }

    std::vector<std::vector<double>> snapshot() const {
        std::vector<std::vector<double>> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p.value.values());
        return out;
    }

    void restore(const std::vector<std::vector<double>>& snap) {
        if (snap.size() != params_.size())
            throw std::invalid_argument("restore: snapshot does not match parameter list");
        for (std::size_t i = 0; i < snap.size(); ++i) {
            if (snap[i].size() != params_[i].value.size())
                throw std::invalid_argument("restore: size mismatch for " + params_[i].name);
            params_[i].value.mutable_values() = snap[i];
        }
    }

    // Independent copy with its own parameter storage.
    Model clone() const {
        RngStream throwaway(0);
        Model m(spec_, throwaway);
        m.restore(snapshot());
        return m;
    }

private:
    void push_linear(const std::string& name, std::size_t in, std::size_t out, RngStream& rng,
                     std::vector<Tensor>& ws, std::vector<Tensor>& bs) {
        double bound = 1.0 / std::sqrt(static_cast<double>(in));
        ws.push_back(Tensor::uniform({in, out}, -bound, bound, rng));
        bs.push_back(Tensor::zeros({out}));
        params_.push_back({name + ".weight", ws.back()});
        params_.push_back({name + ".bias", bs.back()});
    }

    ModelSpec spec_;
    std::vector<Tensor> ext_w_, ext_b_, tr_w_, tr_b_;
    Tensor head_w_, head_b_;
    AttentionNet attention_;
    std::vector<Param> params_;
};

// ---------------------------------------------------------------------------
// Losses and label decoding
// ---------------------------------------------------------------------------

inline constexpr double kProbClamp = 1e-12;

namespace detail {

inline int cce_target_index(const TaskKind& task, const BagLabel& label) {
    int idx = label.task == TaskId::ucc ? label.cls - 1 : label.cls;
    if (idx < 0 || idx >= task.head_width()) {
        throw std::invalid_argument("loss: label class " + std::to_string(label.cls) +
                                    " outside head of width " +
                                    std::to_string(task.head_width()));
    }
    return idx;
}

}  // namespace detail

// CCE = -sum_k Y_k log p_k, BCE = -(1/K) sum_k [Y_k log p_k + (1-Y_k) log(1-p_k)],
// L1 = |Y - yhat|; probabilities are clamped to [1e-12, 1-1e-12] inside the log.
inline Tensor task_loss(const TaskKind& task, const Tensor& pred, const BagLabel& label) {
    if (label.task != task.id)
        throw std::invalid_argument(std::string("loss: label for task ") +
                                    to_string(label.task) + " given to " + to_string(task.id));
    const std::size_t K = static_cast<std::size_t>(task.head_width());
    if (pred.size() != K)
        throw std::invalid_argument("loss: prediction width " + std::to_string(pred.size()) +
                                    " does not match head width " + std::to_string(K));
    Tensor p = reshape(pred, {1, K});
    switch (task.loss_kind()) {
        case LossKind::cce: {
            std::vector<double> onehot(K, 0.0);
            onehot[static_cast<std::size_t>(detail::cce_target_index(task, label))] = 1.0;
            Tensor y = Tensor::leaf({1, K}, std::move(onehot));
            return neg(sum(mul(y, log(clamp(p, kProbClamp, 1.0 - kProbClamp)))));
        }
        case LossKind::bce: {
            if (label.bits.size() != K)
                throw std::invalid_argument("loss: multi_task label has " +
                                            std::to_string(label.bits.size()) + " bits, head has " +
                                            std::to_string(K));
            std::vector<double> y(K), ynot(K);
            for (std::size_t k = 0; k < K; ++k) {
                y[k] = label.bits[k] ? 1.0 : 0.0;
                ynot[k] = 1.0 - y[k];
            }
            Tensor yt = Tensor::leaf({1, K}, std::move(y));
            Tensor ynt = Tensor::leaf({1, K}, std::move(ynot));
            Tensor ones = Tensor::full({1, K}, 1.0);
            Tensor pos = mul(yt, log(clamp(p, kProbClamp, 1.0 - kProbClamp)));
            Tensor negt = mul(ynt, log(clamp(sub(ones, p), kProbClamp, 1.0 - kProbClamp)));
            return scale(sum(add(pos, negt)), -1.0 / static_cast<double>(K));
        }
        case LossKind::l1:
            return abs(sub(reshape(pred, {1}), Tensor::scalar(label.value)));
    }
    throw std::logic_error("task_loss: unreachable");
}

// argmax with first-index tie break
inline std::size_t argmax_first(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

inline BagLabel predict_label(const TaskKind& task, const std::vector<double>& raw) {
    if (raw.size() != static_cast<std::size_t>(task.head_width()))
        throw std::invalid_argument("predict_label: prediction width " +
                                    std::to_string(raw.size()) + " does not match head width " +
                                    std::to_string(task.head_width()));
    switch (task.id) {
        case TaskId::pos_neg: return BagLabel::pos_neg(static_cast<int>(argmax_first(raw)));
        case TaskId::ucc: return BagLabel::ucc(static_cast<int>(argmax_first(raw)) + 1);
        case TaskId::multi_class:
            return BagLabel::multi_class(static_cast<int>(argmax_first(raw)));
        case TaskId::multi_task: {
            std::vector<int> bits(raw.size());
            for (std::size_t k = 0; k < raw.size(); ++k) bits[k] = raw[k] >= 0.5 ? 1 : 0;
            return BagLabel::multi_task(std::move(bits));
        }
        case TaskId::regression: return BagLabel::regression(raw[0]);
    }
    throw std::logic_error("predict_label: unreachable");
}

// Mean of eval-mode head outputs over several resampled bags of one sample.
inline std::vector<double> average_raw_predictions(
    const Model& model, const std::vector<std::vector<double>>& bags) {
    if (bags.empty())
        throw std::invalid_argument("average_predictions: empty bag list");
    std::vector<double> acc;
    for (const auto& b : bags) {
        std::vector<double> raw = model.predict_raw(b);
        if (acc.empty()) acc.assign(raw.size(), 0.0);
        for (std::size_t i = 0; i < raw.size(); ++i) acc[i] += raw[i];
    }
    for (double& v : acc) v /= static_cast<double>(bags.size());
    return acc;
}

inline BagLabel average_predictions(const Model& model,
                                    const std::vector<std::vector<double>>& bags) {
    return predict_label(model.spec().task, average_raw_predictions(model, bags));
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

inline constexpr const char* kModelFormat = "milpool/model-v1";

inline void to_json(json& j, const LayerSpec& l) {
    j = json{{"units", l.units}, {"activation", to_string(l.activation)}};
    if (l.dropout_before > 0.0) j["dropout_before"] = l.dropout_before;
}

inline void from_json(const json& j, LayerSpec& l) {
    l.units = j.at("units").get<int>();
    l.activation = activation_from_string(j.at("activation").get<std::string>());
    l.dropout_before = j.value("dropout_before", 0.0);
}

inline void to_json(json& j, const PoolingSpec& p) {
    j = json{{"kind", to_string(p.kind)}};
    if (p.is_distribution()) {
        j["bins"] = p.bins;
        j["sigma"] = p.sigma;
    }
    if (p.has_attention()) j["attention_layers"] = p.attention_layers;
}

inline void from_json(const json& j, PoolingSpec& p) {
    p.kind = pool_kind_from_string(j.at("kind").get<std::string>());
    p.bins = j.value("bins", 0);
    p.sigma = j.value("sigma", 0.0);
    p.attention_layers = j.value("attention_layers", std::vector<int>{});
}

inline void to_json(json& j, const TaskKind& t) {
    j = json{{"kind", to_string(t.id)}};
    if (t.id != TaskId::pos_neg && t.id != TaskId::regression) j["classes"] = t.classes;
}

inline void from_json(const json& j, TaskKind& t) {
    t.id = task_id_from_string(j.at("kind").get<std::string>());
    switch (t.id) {
        case TaskId::pos_neg: t.classes = 2; break;
        case TaskId::regression: t.classes = 1; break;
        default: t.classes = j.value("classes", 2); break;
    }
}

inline void to_json(json& j, const ModelSpec& s) {
    j = json{{"input_width", s.input_width},
             {"extractor", s.extractor},
             {"pooling", s.pooling},
             {"transform", s.transform},
             {"task", s.task}};
    if (s.head_dropout_before > 0.0) j["head_dropout_before"] = s.head_dropout_before;
}

inline void from_json(const json& j, ModelSpec& s) {
    s.input_width = j.at("input_width").get<int>();
    s.extractor = j.value("extractor", std::vector<LayerSpec>{});
    s.pooling = j.at("pooling").get<PoolingSpec>();
    s.transform = j.value("transform", std::vector<LayerSpec>{});
    s.task = j.at("task").get<TaskKind>();
    s.head_dropout_before = j.value("head_dropout_before", 0.0);
}

inline json model_to_json(const Model& model) {
    json j;
    j["format"] = kModelFormat;
    j["spec"] = model.spec();
    json params = json::array();
    for (const auto& p : model.parameters()) {
        json entry;
        entry["name"] = p.name;
        entry["shape"] = p.value.shape();
        entry["values"] = p.value.values();
        params.push_back(std::move(entry));
    }
    j["params"] = std::move(params);
    return j;
}

inline Model model_from_json(const json& j) {
    if (j.value("format", "") != kModelFormat)
        throw std::invalid_argument("model file has format '" + j.value("format", "") +
                                    "', expected '" + kModelFormat + "'");
    ModelSpec spec = j.at("spec").get<ModelSpec>();
    RngStream throwaway(0);
    Model model(spec, throwaway);
    const json& params = j.at("params");
    if (params.size() != model.parameters().size())
        throw std::invalid_argument("model file has " + std::to_string(params.size()) +
                                    " parameter blocks, spec builds " +
                                    std::to_string(model.parameters().size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& dst = model.parameters()[i];
        if (params[i].at("name").get<std::string>() != dst.name)
            throw std::invalid_argument("model file parameter '" +
                                        params[i].at("name").get<std::string>() +
                                        "' does not match expected '" + dst.name + "'");
        auto values = params[i].at("values").get<std::vector<double>>();
        if (values.size() != dst.value.size())
            throw std::invalid_argument("model file parameter '" + dst.name +
                                        "' has wrong size");
        dst.value.mutable_values() = std::move(values);
    }
    return model;
}

inline void save_model(const Model& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write model file '" + path + "'");
    out << model_to_json(model).dump(2) << '\n';
}

inline Model load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read model file '" + path + "'");
    json j;
    in >> j;
    return model_from_json(j);
}

}  // namespace milpool
