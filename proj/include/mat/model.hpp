#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mat/errors.hpp"
#include "mat/featurize.hpp"
#include "mat/rng.hpp"
#include "mat/tensor.hpp"

namespace mat {

enum class Task { Regression, Binary, NodePretrain };
enum class AdjacencySource { Adjacency, EdgeFeatures };
enum class Activation { Relu, Tanh };

/// Model input width: the 26 atom features plus the mask-token channel used
/// by node pretraining (0 for ordinary atoms).
inline constexpr std::size_t kModelInputDim = kFeatureDim + 1;

struct MatConfig {
    std::size_t d_model = 64;
    std::size_t n_layers = 2;  // encoder repeats
    std::size_t n_heads = 4;
    std::size_t n_pff = 1;     // dense layers in the feed-forward block
    double lambda_a = 0.33;
    double lambda_d = 0.33;
    double lambda_g = 0.33;
    DistanceKernelKind kernel = DistanceKernelKind::SoftmaxRows;
    double dropout = 0.0;
    AdjacencySource adjacency_source = AdjacencySource::Adjacency;
    Task task = Task::Regression;
    Activation ff_activation = Activation::Relu;
    bool add_dummy = true;
    bool pool_includes_dummy = true;

    std::size_t d_k() const { return d_model / n_heads; }

    void validate() const {
        if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
            throw ConfigError("MatConfig: d_model must be a positive multiple of n_heads");
        if (lambda_a < 0 || lambda_d < 0 || lambda_g < 0)
            throw ConfigError("MatConfig: lambda weights must be non-negative");
        if (dropout < 0.0 || dropout >= 1.0)
            throw ConfigError("MatConfig: dropout must be in [0, 1)");
    }
};

/// Named parameter set. std::map order is the save/load order; initialization
/// walks an explicit construction order so a given seed always produces
/// bit-identical values.
struct Params {
    std::map<std::string, Tensor> values;

    Tensor& at(const std::string& name) {
        auto it = values.find(name);
        if (it == values.end()) throw ConfigError("missing parameter '" + name + "'");
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = values.find(name);
        if (it == values.end()) throw ConfigError("missing parameter '" + name + "'");
        return it->second;
    }

    void ensure_grads() {
        for (auto& [k, v] : values) v.ensure_grad();
    }
    void zero_grads() {
        for (auto& [k, v] : values) v.zero_grad();
    }
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& [k, v] : values) n += v.numel();
        return n;
    }
};

namespace detail {

inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Tensor t(fan_in, fan_out);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

inline Tensor filled(std::size_t n, double v) {
    Tensor t;
    t.shape = {n};
    t.data.assign(n, v);
    return t;
}

}  // namespace detail

inline std::string attn_param(std::size_t layer, std::size_t head, const char* which) {
    return "enc" + std::to_string(layer) + ".attn.h" + std::to_string(head) + "." + which;
}
inline std::string layer_param(std::size_t layer, const std::string& which) {
    return "enc" + std::to_string(layer) + "." + which;
}

inline std::size_t head_output_dim(const MatConfig& cfg) {
    return cfg.task == Task::NodePretrain ? kFeatureDim : 1;
}

/// Glorot-uniform weights, zero biases, unit LayerNorm gains. Deterministic
/// in (seed): the construction order below is fixed.
inline Params init_params(const MatConfig& cfg, Rng& rng) {
    cfg.validate();
    Params p;
    p.values["embed.w"] = detail::glorot_uniform(kModelInputDim, cfg.d_model, rng);
    p.values["embed.b"] = detail::filled(cfg.d_model, 0.0);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            p.values[attn_param(l, h, "wq")] = detail::glorot_uniform(cfg.d_model, cfg.d_k(), rng);
            p.values[attn_param(l, h, "wk")] = detail::glorot_uniform(cfg.d_model, cfg.d_k(), rng);
            p.values[attn_param(l, h, "wv")] = detail::glorot_uniform(cfg.d_model, cfg.d_k(), rng);
        }
        p.values[layer_param(l, "attn.wo")] =
            detail::glorot_uniform(cfg.d_model, cfg.d_model, rng);
        p.values[layer_param(l, "ln1.gamma")] = detail::filled(cfg.d_model, 1.0);
        p.values[layer_param(l, "ln1.beta")] = detail::filled(cfg.d_model, 0.0);
        for (std::size_t k = 0; k < cfg.n_pff; ++k) {
            p.values[layer_param(l, "ff" + std::to_string(k) + ".w")] =
                detail::glorot_uniform(cfg.d_model, cfg.d_model, rng);
            p.values[layer_param(l, "ff" + std::to_string(k) + ".b")] =
                detail::filled(cfg.d_model, 0.0);
        }
        p.values[layer_param(l, "ln2.gamma")] = detail::filled(cfg.d_model, 1.0);
        p.values[layer_param(l, "ln2.beta")] = detail::filled(cfg.d_model, 0.0);
    }
    if (cfg.adjacency_source == AdjacencySource::EdgeFeatures) {
        p.values["edge.w"] = detail::glorot_uniform(kBondFeatureDim, 1, rng);
        p.values["edge.b"] = detail::filled(1, 0.0);
    }
    p.values["head.w"] = detail::glorot_uniform(cfg.d_model, head_output_dim(cfg), rng);
    p.values["head.b"] = detail::filled(head_output_dim(cfg), 0.0);
    return p;
}

/// Reinitializes the prediction head for a new task, keeping the rest. The
/// pretraining-to-fine-tuning transfer path.
inline void reinit_head(Params& p, const MatConfig& cfg, Rng& rng) {
    p.values["head.w"] = detail::glorot_uniform(cfg.d_model, head_output_dim(cfg), rng);
    p.values["head.b"] = detail::filled(head_output_dim(cfg), 0.0);
}

/// Caches one tape leaf per parameter so a batch forward does not re-copy
/// weights for every molecule and head.
class BoundParams {
public:
    BoundParams(Tape& tape, Params& params) : tape_(tape), params_(params) {}

    ValueId get(const std::string& name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        ValueId id = tape_.param(params_.at(name));
        cache_.emplace(name, id);
        return id;
    }

private:
    Tape& tape_;
    Params& params_;
    std::map<std::string, ValueId> cache_;
};

/// Transpose as a tape op (value copy, adjoint transposed back).
inline ValueId transpose(Tape& tape, ValueId a) {
    const Tensor& A = tape.val(a);
    const std::size_t r = A.rows(), c = A.cols();
    Tensor T(c, r);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) T.at(j, i) = A.at(i, j);
    return tape.raw_op(std::move(T), [a, r, c](Tape& t, Tape::Node& node) {
        auto& da = t.adj(a);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) da[i * c + j] += node.adj[j * r + i];
    });
}

/// Attention matrices captured from one forward pass, one entry per
/// (layer, head): the composite blend and its three weighted addends.
struct AttentionRecord {
    std::size_t n = 0;       // padded node count
    std::size_t n_real = 0;  // real nodes (incl. dummy)
    bool has_dummy = false;
    std::size_t layers = 0, heads = 0;
    // indexed [layer][head], each row-major n x n
    std::vector<std::vector<std::vector<double>>> composite, softmax_term, distance_term,
        adjacency_term;

    void allocate(std::size_t n_layers, std::size_t n_heads) {
        layers = n_layers;
        heads = n_heads;
        auto alloc = [&](auto& v) {
            v.assign(n_layers, std::vector<std::vector<double>>(n_heads));
        };
        alloc(composite);
        alloc(softmax_term);
        alloc(distance_term);
        alloc(adjacency_term);
    }
};

namespace detail {

/// Rows of A rescaled to sum to 1 over unmasked columns; all-zero rows stay
/// zero (the dummy node and unbonded atoms).
inline Tensor row_normalize(const Tensor& a, const std::vector<std::uint8_t>& mask) {
    Tensor out = a;
    const std::size_t n = a.rows();
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (!mask[j]) out.at(i, j) = 0.0;
            s += mask[j] ? out.at(i, j) : 0.0;
        }
        if (s > 0.0)
            for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= s;
    }
    return out;
}

inline ValueId apply_activation(Tape& tape, ValueId x, Activation act) {
    return act == Activation::Relu ? tape.relu(x) : tape.tanh_act(x);
}

}  // namespace detail

/// Constant/on-tape addends shared by every attention layer of one molecule.
struct AttentionInputs {
    Tensor g_dist;                        // unweighted lambda_d addend (may be empty)
    Tensor graph_const;                   // unweighted lambda_g addend (adjacency path)
    std::optional<ValueId> graph_node;    // on-tape lambda_g addend (edge features)
    const std::vector<std::uint8_t>* mask = nullptr;
};

/// One molecule self-attention sublayer, the element-wise blend
///   lambda_a softmax(Q K^T / sqrt(d_k)) + lambda_d g(D) + lambda_g A
/// applied per head to V, heads concatenated and projected.
inline ValueId molecule_attention(Tape& tape, ValueId hid, const AttentionInputs& in,
                                  BoundParams& bp, const MatConfig& cfg, std::size_t layer,
                                  AttentionRecord* record) {
    const std::size_t n = tape.val(hid).rows();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.d_k()));

    // the part of the blend that carries no gradient
    Tensor const_addend(n, n);
    bool has_const = false;
    if (cfg.lambda_d != 0.0) {
        for (std::size_t i = 0; i < n * n; ++i)
            const_addend.data[i] += cfg.lambda_d * in.g_dist.data[i];
        has_const = true;
    }
    if (cfg.lambda_g != 0.0 && !in.graph_node) {
        for (std::size_t i = 0; i < n * n; ++i)
            const_addend.data[i] += cfg.lambda_g * in.graph_const.data[i];
        has_const = true;
    }
    std::optional<ValueId> graph_weighted;
    if (cfg.lambda_g != 0.0 && in.graph_node)
        graph_weighted = tape.scale(*in.graph_node, cfg.lambda_g);

    std::vector<ValueId> head_outputs;
    head_outputs.reserve(cfg.n_heads);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        ValueId q = tape.matmul(hid, bp.get(attn_param(layer, h, "wq")));
        ValueId k = tape.matmul(hid, bp.get(attn_param(layer, h, "wk")));
        ValueId v = tape.matmul(hid, bp.get(attn_param(layer, h, "wv")));

        ValueId scores = tape.scale(tape.matmul(q, transpose(tape, k)), inv_sqrt_dk);
        ValueId soft = tape.masked_softmax_rows(scores, *in.mask);

        ValueId blend = cfg.lambda_a == 1.0 ? soft : tape.scale(soft, cfg.lambda_a);
        if (has_const) blend = tape.add_const(blend, const_addend);
        if (graph_weighted) blend = tape.add(blend, *graph_weighted);

        const Tensor& blend_v = tape.val(blend);
        if (!blend_v.all_finite())
            throw NumericError("attention matrix has non-finite entries at layer " +
                               std::to_string(layer) + " head " + std::to_string(h));
        if (record) {
            record->composite[layer][h] = blend_v.data;
            const Tensor& soft_v = tape.val(soft);
            auto& st = record->softmax_term[layer][h];
            st.assign(n * n, 0.0);
            for (std::size_t i = 0; i < n * n; ++i) st[i] = cfg.lambda_a * soft_v.data[i];
            auto& dt = record->distance_term[layer][h];
            dt.assign(n * n, 0.0);
            if (cfg.lambda_d != 0.0)
                for (std::size_t i = 0; i < n * n; ++i)
                    dt[i] = cfg.lambda_d * in.g_dist.data[i];
            auto& at = record->adjacency_term[layer][h];
            at.assign(n * n, 0.0);
            if (cfg.lambda_g != 0.0) {
                if (graph_weighted) at = tape.val(*graph_weighted).data;
                else
                    for (std::size_t i = 0; i < n * n; ++i)
                        at[i] = cfg.lambda_g * in.graph_const.data[i];
            }
        }
        head_outputs.push_back(tape.matmul(blend, v));
    }
    ValueId concat = tape.concat_cols(head_outputs);
    return tape.matmul(concat, bp.get(layer_param(layer, "attn.wo")));
}

enum class Mode { Train, Eval };

struct ForwardOptions {
    Mode mode = Mode::Eval;
    Rng* dropout_rng = nullptr;  // required when mode==Train and dropout > 0
    AttentionRecord* record = nullptr;
};

/// Builds the constant attention addends for one molecule: the kernelled
/// distance matrix and the normalized adjacency (or on-tape edge map).
inline AttentionInputs make_attention_inputs(Tape& tape, const MolTensors& mol,
                                             BoundParams& bp, const MatConfig& cfg) {
    AttentionInputs in;
    in.mask = &mol.mask;
    if (cfg.lambda_d != 0.0)
        in.g_dist = distance_kernel(mol.distance, cfg.kernel, mol.mask);
    if (cfg.lambda_g != 0.0) {
        if (cfg.adjacency_source == AdjacencySource::Adjacency) {
            in.graph_const = detail::row_normalize(mol.adjacency, mol.mask);
        } else {
            if (!mol.bond_features)
                throw ConfigError("forward: edge-feature variant needs bond features");
            const std::size_t n = mol.n_nodes();
            // E = relu(F w + b) reshaped to n x n, padded columns zeroed
            ValueId f = tape.constant(*mol.bond_features);
            ValueId e = tape.relu(linear(tape, f, bp.get("edge.w"), bp.get("edge.b")));
            e = tape.reshape(e, {n, n});
            Tensor col_mask(n, n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    col_mask.at(i, j) = mol.mask[j] ? 1.0 : 0.0;
            in.graph_node = tape.mul_const(e, col_mask);
        }
    }
    return in;
}

/// Full forward pass for one (padded) molecule. Returns the prediction node:
/// [1 x 1] for regression/binary (raw value / logit), or the [n x 26] per-node
/// logit matrix for node pretraining (pooling skipped).
inline ValueId mat_forward_single(Tape& tape, BoundParams& bp, const MolTensors& mol,
                                  const MatConfig& cfg, const ForwardOptions& opt) {
    cfg.validate();
    const std::size_t n = mol.n_nodes();
    if (cfg.lambda_d != 0.0 && !mol.distances_valid)
        throw ConfigError("forward: lambda_d is nonzero but the molecule has placeholder "
                          "distances (fallback 'zero')");

    // 27-wide model input: features plus the mask-token channel
    Tensor input(n, kModelInputDim);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < kFeatureDim; ++j) input.at(i, j) = mol.features.at(i, j);
        input.at(i, kFeatureDim) = mol.masked_flag[i] ? 1.0 : 0.0;
    }

    AttentionInputs attn_in = make_attention_inputs(tape, mol, bp, cfg);
    if (opt.record) {
        opt.record->n = n;
        opt.record->n_real = mol.n_real;
        opt.record->has_dummy = mol.has_dummy;
        opt.record->allocate(cfg.n_layers, cfg.n_heads);
    }

    const bool train = opt.mode == Mode::Train;
    Rng* rng = opt.dropout_rng;

    ValueId x = linear(tape, tape.constant(std::move(input)), bp.get("embed.w"),
                       bp.get("embed.b"));
    x = tape.dropout(x, cfg.dropout, rng, train);

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        ValueId attn = molecule_attention(tape, x, attn_in, bp, cfg, l, opt.record);
        attn = tape.dropout(attn, cfg.dropout, rng, train);
        x = tape.layer_norm(tape.add(x, attn), bp.get(layer_param(l, "ln1.gamma")),
                            bp.get(layer_param(l, "ln1.beta")), 1e-5);
        ValueId ff = x;
        for (std::size_t k = 0; k < cfg.n_pff; ++k) {
            ff = linear(tape, ff, bp.get(layer_param(l, "ff" + std::to_string(k) + ".w")),
                        bp.get(layer_param(l, "ff" + std::to_string(k) + ".b")));
            ff = detail::apply_activation(tape, ff, cfg.ff_activation);
            ff = tape.dropout(ff, cfg.dropout, rng, train);
        }
        ff = tape.dropout(ff, cfg.dropout, rng, train);
        x = tape.layer_norm(tape.add(x, ff), bp.get(layer_param(l, "ln2.gamma")),
                            bp.get(layer_param(l, "ln2.beta")), 1e-5);
    }

    if (cfg.task == Task::NodePretrain) {
        // per-node feature logits; the loss selects the masked rows
        return linear(tape, x, bp.get("head.w"), bp.get("head.b"));
    }

    std::vector<std::uint8_t> pool_mask = mol.mask;
    if (!cfg.pool_includes_dummy && mol.has_dummy) pool_mask[mol.dummy_index()] = 0;
    ValueId pooled = tape.mean_pool_rows(x, pool_mask);
    return linear(tape, pooled, bp.get("head.w"), bp.get("head.b"));
}

/// Eval-mode scalar prediction for one molecule.
inline double predict_single(const MolTensors& mol, Params& params, const MatConfig& cfg,
                             AttentionRecord* record = nullptr) {
    Tape tape;
    BoundParams bp(tape, params);
    ForwardOptions opt;
    opt.record = record;
    ValueId out = mat_forward_single(tape, bp, mol, cfg, opt);
    return tape.val(out).data[0];
}

}  // namespace mat
