#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mat/analyze.hpp"
#include "mat/checkpoint.hpp"
#include "mat/config.hpp"
#include "mat/dataset.hpp"
#include "mat/errors.hpp"
#include "mat/featurize.hpp"
#include "mat/model.hpp"
#include "mat/rng.hpp"
#include "mat/tensor.hpp"

namespace mat {

/// Learning rate at 1-based `step`:
///   factor * d_model^-0.5 * min(step^-0.5, step * warmup^-0.5)
/// with factor = 100 * learning_rate. warmup_steps must be >= 1 (a zero
/// warmup factor resolves to 1, giving pure inverse-sqrt decay).
inline double noam_lr(std::int64_t step, double optimizer_factor, std::size_t d_model,
                      std::int64_t warmup_steps) {
    if (step < 1) throw ConfigError("noam_lr: step must be >= 1");
    if (warmup_steps < 1) throw ConfigError("noam_lr: warmup_steps must be >= 1");
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup_steps);
    return optimizer_factor / std::sqrt(static_cast<double>(d_model)) *
           std::min(1.0 / std::sqrt(s), s / std::sqrt(w));
}

inline std::int64_t resolve_warmup_steps(const TrainConfig& cfg, std::int64_t total_steps) {
    const auto w = static_cast<std::int64_t>(
        std::llround(cfg.warmup_factor * static_cast<double>(total_steps)));
    return std::max<std::int64_t>(w, 1);
}

inline double noam_lr(std::int64_t step, const TrainConfig& cfg, std::size_t d_model,
                      std::int64_t total_steps) {
    return noam_lr(step, cfg.optimizer_factor(), d_model,
                   resolve_warmup_steps(cfg, total_steps));
}

/// Plain (off-tape) losses; mirrors the Tape ops used in training so tests
/// can cross-check both paths.
inline double compute_loss(const std::vector<double>& pred, const std::vector<double>& target,
                           Task task) {
    if (pred.size() != target.size() || pred.empty())
        throw ConfigError("compute_loss: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!std::isfinite(pred[i]) || !std::isfinite(target[i]))
            throw NumericError("compute_loss: non-finite input");
        if (task == Task::Regression) {
            const double d = pred[i] - target[i];
            acc += d * d;
        } else {
            const double z = pred[i];
            acc += std::max(z, 0.0) - z * target[i] + std::log1p(std::exp(-std::abs(z)));
        }
    }
    return acc / static_cast<double>(pred.size());
}

/// Adam with decoupled weight decay (decay applied directly to weights,
/// not through the gradient).
struct AdamState {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
    std::int64_t t = 0;
};

inline void adam_step(Params& params, AdamState& state, double lr, const TrainConfig& cfg) {
    state.t += 1;
    const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (auto& [name, p] : params.values) {
        p.ensure_grad();
        auto& [m, v] = state.moments[name];
        if (m.size() != p.data.size()) {
            m.assign(p.data.size(), 0.0);
            v.assign(p.data.size(), 0.0);
        }
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double g = p.grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[i] / b1t;
            const double vhat = v[i] / b2t;
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
            if (cfg.weight_decay != 0.0) p.data[i] -= lr * cfg.weight_decay * p.data[i];
        }
    }
}

/// Node masking for pretraining: per molecule, ceil(fraction * real non-dummy
/// nodes) distinct nodes drawn uniformly get their feature row zeroed and the
/// mask-token channel set; the dummy node and padding are never masked.
/// Original rows are returned as prediction targets.
struct MaskedNodes {
    std::vector<std::size_t> positions;        // node indices within the molecule
    std::vector<std::vector<double>> originals;  // 26-dim rows before masking
};

inline MaskedNodes mask_nodes(MolTensors& mol, double fraction, Rng& rng) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ConfigError("mask_nodes: fraction must be in (0,1)");
    std::vector<std::size_t> candidates;
    const std::size_t limit = mol.has_dummy ? mol.n_real - 1 : mol.n_real;
    for (std::size_t i = 0; i < limit; ++i) candidates.push_back(i);
    if (candidates.empty()) throw ConfigError("mask_nodes: no maskable nodes");

    const auto want = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(candidates.size())));
    rng.shuffle(candidates);
    candidates.resize(std::min(want, candidates.size()));
    std::sort(candidates.begin(), candidates.end());

    MaskedNodes out;
    for (std::size_t idx : candidates) {
        std::vector<double> row(kFeatureDim);
        for (std::size_t j = 0; j < kFeatureDim; ++j) {
            row[j] = mol.features.at(idx, j);
            mol.features.at(idx, j) = 0.0;
        }
        mol.masked_flag[idx] = 1;
        out.positions.push_back(idx);
        out.originals.push_back(std::move(row));
    }
    return out;
}

/// BCE target for the charge channel: clamp(charge, -1, 1) / 2 + 0.5.
inline double charge_to_unit(double charge) {
    return std::clamp(charge, -1.0, 1.0) / 2.0 + 0.5;
}

/// Masked-node reconstruction loss for one already-masked molecule: a 26-way
/// sigmoid head on each masked node's final embedding, mean BCE against the
/// original rows. Returns the scalar loss node.
inline ValueId pretrain_loss_single(Tape& tape, BoundParams& bp, const MolTensors& mol,
                                    const MaskedNodes& masked, const MatConfig& cfg,
                                    const ForwardOptions& opt) {
    if (cfg.task != Task::NodePretrain)
        throw ConfigError("pretrain_loss_single: config task must be node_pretrain");
    if (masked.positions.empty()) throw ConfigError("pretrain_loss_single: no masked nodes");
    ValueId node_logits = mat_forward_single(tape, bp, mol, cfg, opt);
    ValueId picked = tape.select_rows(node_logits, masked.positions);
    Tensor target(masked.positions.size(), kFeatureDim);
    for (std::size_t r = 0; r < masked.originals.size(); ++r)
        for (std::size_t j = 0; j < kFeatureDim; ++j)
            target.at(r, j) = j == kChargeIndex ? charge_to_unit(masked.originals[r][j])
                                                : masked.originals[r][j];
    return tape.bce_with_logits(picked, target);
}

struct HistoryEntry {
    std::int64_t step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    std::optional<std::size_t> epoch;       // set on epoch boundaries
    std::optional<double> val_metric;       // idem
};

struct TrainResult {
    Checkpoint best;
    std::vector<HistoryEntry> history;
    double best_val = 0.0;
    std::size_t best_epoch = 0;
};

namespace detail {

/// Lower-is-better validation score for checkpoint selection.
inline double validation_score(const std::vector<double>& preds,
                               const std::vector<double>& labels, Task task,
                               const std::optional<Standardization>& st) {
    if (task == Task::Regression) {
        std::vector<double> p = preds, y = labels;
        if (st)
            for (std::size_t i = 0; i < p.size(); ++i) {
                p[i] = st->invert(p[i]);
                y[i] = st->invert(y[i]);
            }
        return rmse(p, y);
    }
    if (task == Task::Binary) {
        bool pos = false, neg = false;
        for (double y : labels) (y > 0.5 ? pos : neg) = true;
        if (pos && neg) return -roc_auc(preds, labels);  // higher AUC is better
        return compute_loss(preds, labels, Task::Binary);
    }
    return compute_loss(preds, labels, task);
}

}  // namespace detail

struct TrainDataOptions {
    DistanceFallback fallback = DistanceFallback::Error;
    double mask_fraction = 0.15;  // node pretraining only
};

/// Featurizes a dataset once up front.
inline std::vector<MolTensors> featurize_dataset(const Dataset& ds, const MatConfig& cfg,
                                                 DistanceFallback fallback) {
    std::vector<MolTensors> out;
    out.reserve(ds.size());
    const bool edge = cfg.adjacency_source == AdjacencySource::EdgeFeatures;
    for (const DataRecord& r : ds.records)
        out.push_back(featurize_molecule(r.mol, cfg.add_dummy, fallback, edge));
    return out;
}

/// Eval-mode predictions for a featurized set (standardized units for
/// regression; logits for binary).
inline std::vector<double> predict_all(const std::vector<MolTensors>& mols, Params& params,
                                       const MatConfig& cfg) {
    std::vector<double> preds;
    preds.reserve(mols.size());
    for (const MolTensors& m : mols) preds.push_back(predict_single(m, params, cfg));
    return preds;
}

/// The training loop: Adam + the inverse-sqrt schedule, epoch-level
/// validation, greedy best-checkpoint retention. When `pretrained` is given,
/// every parameter except the head is loaded from it (shapes must match) and
/// the head is reinitialized for the downstream task.
inline TrainResult train_loop(const Dataset& train_ds, const Dataset& val_ds,
                              const MatConfig& model_cfg, const TrainConfig& train_cfg,
                              const TrainDataOptions& data_opt = {},
                              const Checkpoint* pretrained = nullptr) {
    model_cfg.validate();
    train_cfg.validate();
    if (train_ds.size() == 0) throw ConfigError("train_loop: empty train fold");

    std::vector<MolTensors> train_feats =
        featurize_dataset(train_ds, model_cfg, data_opt.fallback);
    std::vector<MolTensors> val_feats = featurize_dataset(val_ds, model_cfg, data_opt.fallback);

    Rng init_rng(train_cfg.seed, RngStream::Init);
    Params params = init_params(model_cfg, init_rng);
    if (pretrained) {
        for (auto& [name, tensor] : params.values) {
            if (name == "head.w" || name == "head.b") continue;  // reinitialized above
            const auto it = pretrained->params.values.find(name);
            if (it == pretrained->params.values.end())
                throw ConfigError("pretrained checkpoint is missing '" + name + "'");
            if (it->second.shape != tensor.shape)
                throw ConfigError("pretrained checkpoint shape mismatch for '" + name + "'");
            tensor = it->second;
        }
    }

    Rng dropout_rng(train_cfg.seed, RngStream::Dropout);
    Rng mask_rng(train_cfg.seed, RngStream::Masking);
    Rng order_rng(train_cfg.seed, RngStream::Data);

    const std::size_t n = train_feats.size();
    const std::size_t batches_per_epoch = (n + train_cfg.batch_size - 1) / train_cfg.batch_size;
    const auto total_steps =
        static_cast<std::int64_t>(batches_per_epoch * train_cfg.epochs);
    const std::int64_t warmup = resolve_warmup_steps(train_cfg, total_steps);

    AdamState adam;
    TrainResult result;
    result.best_val = std::numeric_limits<double>::infinity();
    bool have_best = false;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    std::vector<double> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = train_ds.records[i].label;

    std::int64_t step = 0;
    for (std::size_t epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        double epoch_loss = 0.0;
        double last_lr = 0.0;
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            const std::size_t lo = b * train_cfg.batch_size;
            const std::size_t hi = std::min(lo + train_cfg.batch_size, n);
            if (lo >= hi) break;

            Tape tape;
            BoundParams bp(tape, params);
            ForwardOptions opt;
            opt.mode = Mode::Train;
            opt.dropout_rng = &dropout_rng;

            std::vector<ValueId> losses;
            losses.reserve(hi - lo);
            for (std::size_t k = lo; k < hi; ++k) {
                const std::size_t idx = order[k];
                if (model_cfg.task == Task::NodePretrain) {
                    MolTensors masked_mol = train_feats[idx];
                    MaskedNodes masked =
                        mask_nodes(masked_mol, data_opt.mask_fraction, mask_rng);
                    losses.push_back(
                        pretrain_loss_single(tape, bp, masked_mol, masked, model_cfg, opt));
                } else {
                    ValueId pred = mat_forward_single(tape, bp, train_feats[idx], model_cfg, opt);
                    Tensor target = Tensor::matrix(1, 1, {labels[idx]});
                    losses.push_back(model_cfg.task == Task::Regression
                                         ? tape.mse_loss(pred, target)
                                         : tape.bce_with_logits(pred, target));
                }
            }
            ValueId loss = tape.mean_scalars(losses);
            const double loss_val = tape.val(loss).data[0];
            if (!std::isfinite(loss_val))
                throw NumericError("train_loop: non-finite loss at step " +
                                   std::to_string(step + 1));
            params.ensure_grads();
            params.zero_grads();
            tape.backward(loss);

            ++step;
            last_lr = noam_lr(step, train_cfg.optimizer_factor(), model_cfg.d_model, warmup);
            adam_step(params, adam, last_lr, train_cfg);
            epoch_loss += loss_val * static_cast<double>(hi - lo);

            HistoryEntry he;
            he.step = step;
            he.lr = last_lr;
            he.train_loss = loss_val;
            result.history.push_back(he);
        }
        epoch_loss /= static_cast<double>(n);

        std::optional<double> val_metric;
        if (!val_feats.empty()) {
            if (model_cfg.task == Task::NodePretrain) {
                // deterministic validation masking: fresh stream per epoch
                Rng vrng(train_cfg.seed ^ 0x5a5a5a5aULL, static_cast<std::uint64_t>(epoch));
                double acc = 0.0;
                for (const MolTensors& m : val_feats) {
                    MolTensors masked_mol = m;
                    MaskedNodes masked =
                        mask_nodes(masked_mol, data_opt.mask_fraction, vrng);
                    Tape tape;
                    BoundParams bp(tape, params);
                    ForwardOptions opt;
                    ValueId l =
                        pretrain_loss_single(tape, bp, masked_mol, masked, model_cfg, opt);
                    acc += tape.val(l).data[0];
                }
                val_metric = acc / static_cast<double>(val_feats.size());
            } else {
                std::vector<double> preds = predict_all(val_feats, params, model_cfg);
                std::vector<double> vlabels(val_ds.size());
                for (std::size_t i = 0; i < val_ds.size(); ++i)
                    vlabels[i] = val_ds.records[i].label;
                val_metric = detail::validation_score(preds, vlabels, model_cfg.task,
                                                      val_ds.standardization);
            }
        }

        if (!result.history.empty()) {
            result.history.back().epoch = epoch;
            result.history.back().val_metric = val_metric;
        }

        const double score = val_metric.value_or(epoch_loss);
        if (!have_best || score < result.best_val) {
            have_best = true;
            result.best_val = score;
            result.best_epoch = epoch;
            result.best.config = model_cfg;
            result.best.params = params;
            result.best.target_standardization =
                train_ds.standardization
                    ? std::optional<std::pair<double, double>>(
                          {train_ds.standardization->mean, train_ds.standardization->std})
                    : std::nullopt;
            result.best.best_val_metric = score;
        }
    }
    return result;
}

}  // namespace mat
