#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mat/chem/patterns.hpp"
#include "mat/errors.hpp"
#include "mat/model.hpp"

namespace mat {

inline double rmse(const std::vector<double>& preds, const std::vector<double>& labels) {
    if (preds.size() != labels.size() || preds.empty())
        throw ConfigError("rmse: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double d = preds[i] - labels[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(preds.size()));
}

namespace detail {

/// Midranks (average rank for ties), 1-based.
inline std::vector<double> midranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x[a] < x[b];
    });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace detail

/// ROC AUC via the Mann-Whitney rank statistic with midranks for ties.
/// Throws when only one class is present.
inline double roc_auc(const std::vector<double>& scores, const std::vector<double>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw ConfigError("roc_auc: size mismatch");
    std::size_t n_pos = 0, n_neg = 0;
    for (double y : labels) (y > 0.5 ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0)
        throw ConfigError("roc_auc: undefined with a single class");
    const std::vector<double> ranks = detail::midranks(scores);
    double rank_sum_pos = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] > 0.5) rank_sum_pos += ranks[i];
    const double u = rank_sum_pos - static_cast<double>(n_pos) *
                                        (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct Metrics {
    Task task = Task::Regression;
    std::optional<double> rmse;
    std::optional<double> auc;

    double primary() const { return task == Task::Regression ? *rmse : *auc; }
};

/// RMSE for regression (callers pass values in original target units),
/// ROC AUC for binary tasks.
inline Metrics evaluate_metrics(const std::vector<double>& preds,
                                const std::vector<double>& labels, Task task) {
    Metrics m;
    m.task = task;
    if (task == Task::Regression) m.rmse = rmse(preds, labels);
    else m.auc = roc_auc(preds, labels);
    return m;
}

/// Upper tail of chi-square with 1 degree of freedom.
inline double chi2_sf_df1(double h) {
    if (h <= 0.0) return 1.0;
    return std::erfc(std::sqrt(h / 2.0));
}

struct KruskalWallisResult {
    double h = 0.0;
    double p_value = 1.0;
};

/// Two-group Kruskal-Wallis H with the standard tie correction
/// 1 - sum(t^3 - t)/(N^3 - N); p from chi-square, df = 1. All-identical
/// samples give H = 0, p = 1.
inline KruskalWallisResult kruskal_wallis(const std::vector<double>& group_a,
                                          const std::vector<double>& group_b) {
    if (group_a.empty() || group_b.empty())
        throw ConfigError("kruskal_wallis: both groups must be non-empty");
    const std::size_t na = group_a.size(), nb = group_b.size();
    const std::size_t n = na + nb;
    std::vector<double> all;
    all.reserve(n);
    all.insert(all.end(), group_a.begin(), group_a.end());
    all.insert(all.end(), group_b.begin(), group_b.end());
    const std::vector<double> ranks = detail::midranks(all);

    double ra = 0.0, rb = 0.0;
    for (std::size_t i = 0; i < na; ++i) ra += ranks[i];
    for (std::size_t i = na; i < n; ++i) rb += ranks[i];
    ra /= static_cast<double>(na);
    rb /= static_cast<double>(nb);

    const double nn = static_cast<double>(n);
    const double mean_rank = (nn + 1.0) / 2.0;
    double h = (12.0 / (nn * (nn + 1.0))) *
               (static_cast<double>(na) * (ra - mean_rank) * (ra - mean_rank) +
                static_cast<double>(nb) * (rb - mean_rank) * (rb - mean_rank));

    // tie correction
    std::vector<double> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    double tie_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i + 1);
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    const double denom = 1.0 - tie_sum / (nn * nn * nn - nn);
    if (denom <= 0.0) return {0.0, 1.0};  // every value identical
    h /= denom;
    return {h, chi2_sf_df1(h)};
}

/// Per-(layer, head) comparison of column-mean attention weights between
/// pattern-matched atoms and the rest.
struct HeadStats {
    std::size_t layer = 0;
    std::size_t head = 0;
    PatternId pattern = PatternId::AromaticCarbonDeg2;
    double mu_plus = 0.0, sigma_plus = 0.0;
    double mu_minus = 0.0, sigma_minus = 0.0;
    double h_stat = 0.0;
    double p_value = 1.0;
    std::size_t n_plus = 0, n_minus = 0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, std::sqrt(var)};
}

}  // namespace detail

/// Per-atom attention score in one head: the column mean of the composite
/// attention matrix over real, non-dummy rows. Padding and dummy are excluded
/// from both the rows averaged over and the atoms scored.
inline std::vector<double> atom_attention_scores(const AttentionRecord& rec,
                                                 std::size_t layer, std::size_t head) {
    const std::size_t n = rec.n;
    const std::size_t n_atoms = rec.has_dummy ? rec.n_real - 1 : rec.n_real;
    const auto& m = rec.composite[layer][head];
    std::vector<double> scores(n_atoms, 0.0);
    for (std::size_t j = 0; j < n_atoms; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n_atoms; ++i) acc += m[i * n + j];
        scores[j] = acc / static_cast<double>(n_atoms);
    }
    return scores;
}

/// Pools column-mean scores over the dataset, splits them by match_pattern
/// and runs the rank test per (layer, head). Records and molecules must be
/// aligned. A pattern that matches nothing dataset-wide yields n_plus = 0
/// with H = 0.
inline std::vector<HeadStats> attention_stats(std::span<const AttentionRecord> records,
                                              std::span<const Molecule> molecules,
                                              PatternId pattern) {
    if (records.size() != molecules.size())
        throw ConfigError("attention_stats: records and molecules must align");
    if (records.empty()) throw ConfigError("attention_stats: empty input");
    const std::size_t layers = records[0].layers, heads = records[0].heads;

    std::vector<HeadStats> out;
    out.reserve(layers * heads);
    for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t h = 0; h < heads; ++h) {
            std::vector<double> plus, minus;
            for (std::size_t mi = 0; mi < records.size(); ++mi) {
                const auto matched = match_pattern(molecules[mi], pattern);
                const auto scores = atom_attention_scores(records[mi], l, h);
                for (std::size_t a = 0; a < scores.size(); ++a)
                    (matched.count(a) ? plus : minus).push_back(scores[a]);
            }
            HeadStats st;
            st.layer = l;
            st.head = h;
            st.pattern = pattern;
            st.n_plus = plus.size();
            st.n_minus = minus.size();
            std::tie(st.mu_plus, st.sigma_plus) = detail::mean_std(plus);
            std::tie(st.mu_minus, st.sigma_minus) = detail::mean_std(minus);
            if (!plus.empty() && !minus.empty()) {
                const KruskalWallisResult kw = kruskal_wallis(plus, minus);
                st.h_stat = kw.h;
                st.p_value = kw.p_value;
            }
            out.push_back(st);
        }
    }
    return out;
}

}  // namespace mat
