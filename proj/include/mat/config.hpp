#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "mat/errors.hpp"
#include "mat/model.hpp"

namespace mat {

/// Optimizer and loop settings. The optimizer factor of the schedule is
/// 100 * learning_rate; warmup steps = warmup_factor * total train steps,
/// resolved by the train loop (warmup_factor 0 degenerates to 1 step).
struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t epochs = 100;
    double learning_rate = 5e-4;
    double warmup_factor = 0.1;  // in [0, 0.5]
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;

    double optimizer_factor() const { return 100.0 * learning_rate; }

    void validate() const {
        if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be positive");
        if (warmup_factor < 0.0 || warmup_factor > 0.5)
            throw ConfigError("TrainConfig: warmup_factor must be in [0, 0.5]");
        if (learning_rate <= 0.0) throw ConfigError("TrainConfig: learning_rate must be > 0");
    }
};

inline const char* to_string(Task t) {
    switch (t) {
        case Task::Regression: return "regression";
        case Task::Binary: return "binary";
        case Task::NodePretrain: return "node_pretrain";
    }
    return "?";
}
inline Task task_from_string(const std::string& s) {
    if (s == "regression") return Task::Regression;
    if (s == "binary") return Task::Binary;
    if (s == "node_pretrain") return Task::NodePretrain;
    throw ConfigError("unknown task '" + s + "'");
}

inline const char* to_string(DistanceKernelKind k) {
    return k == DistanceKernelKind::SoftmaxRows ? "softmax" : "exp";
}
inline DistanceKernelKind kernel_from_string(const std::string& s) {
    if (s == "softmax" || s == "softmax_rows") return DistanceKernelKind::SoftmaxRows;
    if (s == "exp") return DistanceKernelKind::Exp;
    throw ConfigError("unknown kernel '" + s + "' (softmax or exp)");
}

inline const char* to_string(AdjacencySource a) {
    return a == AdjacencySource::Adjacency ? "adjacency" : "edge_features";
}
inline AdjacencySource adjacency_source_from_string(const std::string& s) {
    if (s == "adjacency" || s == "A") return AdjacencySource::Adjacency;
    if (s == "edge_features") return AdjacencySource::EdgeFeatures;
    throw ConfigError("unknown adjacency_source '" + s + "'");
}

inline const char* to_string(Activation a) {
    return a == Activation::Relu ? "relu" : "tanh";
}
inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    throw ConfigError("unknown activation '" + s + "'");
}

inline const char* to_string(DistanceFallback f) {
    switch (f) {
        case DistanceFallback::Error: return "error";
        case DistanceFallback::ZeroLambdaOnly: return "zero";
        case DistanceFallback::TopoApprox: return "topo";
    }
    return "?";
}
inline DistanceFallback fallback_from_string(const std::string& s) {
    if (s == "error") return DistanceFallback::Error;
    if (s == "zero") return DistanceFallback::ZeroLambdaOnly;
    if (s == "topo") return DistanceFallback::TopoApprox;
    throw ConfigError("unknown distance fallback '" + s + "' (error, zero, topo)");
}

inline nlohmann::json to_json(const MatConfig& c) {
    return nlohmann::json{{"d_model", c.d_model},
                          {"n_layers", c.n_layers},
                          {"n_heads", c.n_heads},
                          {"n_pff", c.n_pff},
                          {"lambda_a", c.lambda_a},
                          {"lambda_d", c.lambda_d},
                          {"lambda_g", c.lambda_g},
                          {"kernel", to_string(c.kernel)},
                          {"dropout", c.dropout},
                          {"adjacency_source", to_string(c.adjacency_source)},
                          {"task", to_string(c.task)},
                          {"ff_activation", to_string(c.ff_activation)},
                          {"add_dummy", c.add_dummy},
                          {"pool_includes_dummy", c.pool_includes_dummy}};
}

inline MatConfig mat_config_from_json(const nlohmann::json& j) {
    MatConfig c;
    try {
        c.d_model = j.value("d_model", c.d_model);
        c.n_layers = j.value("n_layers", c.n_layers);
        c.n_heads = j.value("n_heads", c.n_heads);
        c.n_pff = j.value("n_pff", c.n_pff);
        c.lambda_a = j.value("lambda_a", c.lambda_a);
        c.lambda_d = j.value("lambda_d", c.lambda_d);
        c.lambda_g = j.value("lambda_g", c.lambda_g);
        if (j.contains("kernel")) c.kernel = kernel_from_string(j["kernel"]);
        c.dropout = j.value("dropout", c.dropout);
        if (j.contains("adjacency_source"))
            c.adjacency_source = adjacency_source_from_string(j["adjacency_source"]);
        if (j.contains("task")) c.task = task_from_string(j["task"]);
        if (j.contains("ff_activation"))
            c.ff_activation = activation_from_string(j["ff_activation"]);
        c.add_dummy = j.value("add_dummy", c.add_dummy);
        c.pool_includes_dummy = j.value("pool_includes_dummy", c.pool_includes_dummy);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad model config: ") + e.what());
    }
    c.validate();
    return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return nlohmann::json{{"batch_size", c.batch_size}, {"epochs", c.epochs},
                          {"learning_rate", c.learning_rate},
                          {"warmup_factor", c.warmup_factor},
                          {"weight_decay", c.weight_decay},
                          {"beta1", c.beta1},
                          {"beta2", c.beta2},
                          {"adam_eps", c.adam_eps},
                          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.warmup_factor = j.value("warmup_factor", c.warmup_factor);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad train config: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace mat
