#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "psyn/common.hpp"

namespace psyn {

// Inputs of the analytic speedup model: one epoch costs utilization * t_s / N
// of computation plus t_c of communication. `utilization` is exactly 1 when
// minibatches fill the device and greater than 1 otherwise. It is named
// `utilization` rather than alpha so it cannot be confused with the elastic
// step of the same letter.
struct SpeedupInputs {
    double t_s = 1.0;        // single-worker compute seconds per epoch
    double t_c = 0.0;        // communication seconds per epoch
    int n_workers = 1;       // N
    double utilization = 1.0;

    void validate() const {
        if (!(t_s > 0.0)) throw std::invalid_argument("speedup: t_s must be > 0");
        if (!(t_c >= 0.0)) throw std::invalid_argument("speedup: t_c must be >= 0");
        if (n_workers < 1) throw std::invalid_argument("speedup: n_workers must be >= 1");
        if (!(utilization >= 1.0)) throw std::invalid_argument("speedup: utilization must be >= 1");
    }
};

// s = 1 / (utilization / N + t_c / t_s)
inline double predict_speedup(const SpeedupInputs& in) {
    in.validate();
    return 1.0 / (in.utilization / static_cast<double>(in.n_workers) + in.t_c / in.t_s);
}

// t_c / t_s = 1 / s - utilization / N. Superlinear measurements (s above
// N / utilization) have no feasible ratio; the boundary itself maps to 0.
inline double invert_ratio(double s, int n_workers, double utilization = 1.0) {
    if (!(s > 0.0)) throw std::invalid_argument("invert_ratio: speedup must be > 0");
    if (n_workers < 1) throw std::invalid_argument("invert_ratio: n_workers must be >= 1");
    if (!(utilization >= 1.0))
        throw std::invalid_argument("invert_ratio: utilization must be >= 1");
    double ratio = 1.0 / s - utilization / static_cast<double>(n_workers);
    if (ratio < 0.0)
        throw std::invalid_argument("invert_ratio: speedup " + format_double(s) +
                                    " is superlinear for N=" + std::to_string(n_workers));
    return ratio;
}

// One measured table row.
struct SpeedupObservation {
    int n_workers = 1;
    int sync_period = 1;
    int minibatch = 1;
    double measured_speedup = 1.0;
};

enum class FitStructure { shared_ratio, per_period_ratio };

struct SpeedupFit {
    double utilization = 1.0;
    bool utilization_fixed = false;
    // group key: 0 for shared structure, sync_period otherwise
    std::map<int, double> ratio;
    std::vector<double> predicted;   // aligned with the observation order
    std::vector<double> residual;    // predicted - measured
    std::vector<bool> superlinear;   // measured above the N/utilization ceiling
    double rss = 0.0;
};

namespace detail {

inline int fit_group_key(FitStructure structure, const SpeedupObservation& o) {
    return structure == FitStructure::shared_ratio ? 0 : o.sync_period;
}

inline double fit_rss(std::span<const SpeedupObservation> obs, FitStructure structure,
                      double utilization, const std::map<int, double>& ratio) {
    double rss = 0.0;
    for (const auto& o : obs) {
        double r = ratio.at(fit_group_key(structure, o));
        double pred = 1.0 / (utilization / o.n_workers + r);
        double e = pred - o.measured_speedup;
        rss += e * e;
    }
    return rss;
}

// Golden-section minimizer on [lo, hi]; the per-coordinate slices of the fit
// objective are smooth and near-unimodal.
template <typename F>
double golden_min(F f, double lo, double hi, double tol = 1e-13) {
    constexpr double phi = 0.6180339887498949;
    double a = lo, b = hi;
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > tol) {
        if (f1 < f2) {
            b = x2; x2 = x1; f2 = f1;
            x1 = b - phi * (b - a); f1 = f(x1);
        } else {
            a = x1; x1 = x2; f1 = f2;
            x2 = a + phi * (b - a); f2 = f(x2);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace detail

// Least-squares fit of the speedup model to measured rows: a coarse grid over
// utilization with the per-group ratios solved by 1-D section search, then
// coordinate-descent sweeps until the objective stops moving. Pass
// `fixed_utilization` to pin the utilization factor (needed when a group has
// a single observation, e.g. per-period fits of one table column).
inline SpeedupFit fit_model(std::span<const SpeedupObservation> obs, FitStructure structure,
                            std::optional<double> fixed_utilization = std::nullopt) {
    if (obs.empty()) throw std::invalid_argument("fit_model: no observations");
    for (const auto& o : obs) {
        if (o.n_workers < 1 || !(o.measured_speedup > 0.0))
            throw std::invalid_argument("fit_model: invalid observation");
    }
    std::map<int, int> group_counts;
    for (const auto& o : obs) group_counts[detail::fit_group_key(structure, o)]++;
    int min_per_group = fixed_utilization ? 1 : 2;
    for (const auto& [key, count] : group_counts) {
        if (count < min_per_group)
            throw std::invalid_argument("fit_model: underdetermined grouping (group " +
                                        std::to_string(key) + " has " + std::to_string(count) +
                                        " observation(s))");
    }

    constexpr double r_hi = 4.0, u_hi = 8.0;
    auto solve_ratios = [&](double u) {
        std::map<int, double> ratio;
        for (const auto& entry : group_counts) {
            const int group = entry.first;
            auto slice = [&, group](double r) {
                double rss = 0.0;
                for (const auto& o : obs) {
                    if (detail::fit_group_key(structure, o) != group) continue;
                    double pred = 1.0 / (u / o.n_workers + r);
                    double e = pred - o.measured_speedup;
                    rss += e * e;
                }
                return rss;
            };
            ratio[group] = detail::golden_min(slice, 0.0, r_hi);
        }
        return ratio;
    };

    double best_u = fixed_utilization.value_or(1.0);
    if (!fixed_utilization) {
        double best_rss = std::numeric_limits<double>::infinity();
        for (int i = 0; i <= 64; ++i) {  // coarse grid
            double u = 1.0 + (u_hi - 1.0) * i / 64.0;
            double rss = detail::fit_rss(obs, structure, u, solve_ratios(u));
            if (rss < best_rss) {
                best_rss = rss;
                best_u = u;
            }
        }
        for (int sweep = 0; sweep < 40; ++sweep) {  // refine
            auto u_slice = [&](double u) {
                return detail::fit_rss(obs, structure, u, solve_ratios(u));
            };
            double span = std::max(0.25 / (1 << std::min(sweep, 20)), 1e-12);
            double lo = std::max(1.0, best_u - span), hi = std::min(u_hi, best_u + span);
            best_u = detail::golden_min(u_slice, lo, hi);
        }
    }

    SpeedupFit fit;
    fit.utilization = best_u;
    fit.utilization_fixed = fixed_utilization.has_value();
    fit.ratio = solve_ratios(best_u);
    for (const auto& o : obs) {
        double r = fit.ratio.at(detail::fit_group_key(structure, o));
        double pred = 1.0 / (best_u / o.n_workers + r);
        fit.predicted.push_back(pred);
        fit.residual.push_back(pred - o.measured_speedup);
        fit.superlinear.push_back(o.measured_speedup > o.n_workers / best_u);
        fit.rss += (pred - o.measured_speedup) * (pred - o.measured_speedup);
    }
    return fit;
}

}  // namespace psyn
