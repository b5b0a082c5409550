#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mat/rng.hpp"
#include "mat/tensor.hpp"

namespace mat {

struct GradCheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::string worst;  // "param[i]" of the worst coordinate

    std::string summary() const {
        return std::string(pass ? "pass" : "FAIL") + " max_rel_err=" +
               std::to_string(max_rel_err) + " coords=" + std::to_string(checked) +
               (worst.empty() ? "" : " worst=" + worst);
    }
};

/// Central-difference check of analytic gradients.
///
/// `run(with_grad)` must rebuild the computation from the current parameter
/// values and return the scalar loss; when with_grad it must also accumulate
/// gradients into each parameter's grad buffer. It has to be deterministic
/// (dropout off).
///
/// `samples` coordinates are drawn across all parameters (all coordinates if
/// the total count is smaller). Relative error uses a floor so near-zero
/// gradients are judged absolutely.
struct NamedParam {
    std::string name;
    Tensor* tensor;
};

inline GradCheckReport grad_check(const std::function<double(bool)>& run,
                                  const std::vector<NamedParam>& params,
                                  std::size_t samples, double h, double tol, Rng& rng) {
    GradCheckReport rep;

    for (const auto& p : params) {
        p.tensor->ensure_grad();
        p.tensor->zero_grad();
    }
    const double base = run(true);
    if (!std::isfinite(base)) {
        rep.worst = "loss is non-finite";
        return rep;
    }
    // snapshot analytic gradients before we start poking values
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    std::size_t total = 0;
    for (const auto& p : params) {
        analytic.push_back(p.tensor->grad);
        total += p.tensor->data.size();
    }

    struct Coord {
        std::size_t param, idx;
    };
    std::vector<Coord> coords;
    if (samples >= total) {
        for (std::size_t pi = 0; pi < params.size(); ++pi)
            for (std::size_t i = 0; i < params[pi].tensor->data.size(); ++i)
                coords.push_back({pi, i});
    } else {
        for (std::size_t s = 0; s < samples; ++s) {
            std::size_t flat = rng.uniform_index(total);
            std::size_t pi = 0;
            while (flat >= params[pi].tensor->data.size()) {
                flat -= params[pi].tensor->data.size();
                ++pi;
            }
            coords.push_back({pi, flat});
        }
    }

    rep.pass = true;
    for (const Coord& c : coords) {
        double& slot = params[c.param].tensor->data[c.idx];
        const double keep = slot;
        slot = keep + h;
        const double fp = run(false);
        slot = keep - h;
        const double fm = run(false);
        slot = keep;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            rep.pass = false;
            rep.worst = params[c.param].name + "[" + std::to_string(c.idx) + "] non-finite";
            return rep;
        }
        const double numeric = (fp - fm) / (2.0 * h);
        const double exact = analytic[c.param][c.idx];
        const double denom = std::max({std::abs(numeric), std::abs(exact), 1e-3});
        const double rel = std::abs(numeric - exact) / denom;
        ++rep.checked;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst = params[c.param].name + "[" + std::to_string(c.idx) + "]";
        }
        if (rel >= tol) rep.pass = false;
    }
    return rep;
}

}  // namespace mat
