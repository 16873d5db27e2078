// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion pins its tolerances in code.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "psyn/psyn.hpp"

using namespace psyn;

namespace {

int g_failures = 0;

void report(int number, const std::string& name, bool pass, const std::string& detail = "") {
    std::printf("[%s] criterion %d: %s%s%s\n", pass ? "PASS" : "FAIL", number, name.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    if (!pass) ++g_failures;
}

bool bitwise_equal(const ParameterVector& a, const ParameterVector& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

ParameterVector random_vec(Rng& rng, size_t n, double scale = 1.0) {
    ParameterVector v(n);
    for (auto& x : v) x = scale * rng.next_normal();
    return v;
}

std::vector<double> solve_linear(std::vector<std::vector<double>> a, std::vector<double> b) {
    size_t n = b.size();
    for (size_t c = 0; c < n; ++c) {
        size_t piv = c;
        for (size_t r = c + 1; r < n; ++r)
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        std::swap(a[c], a[piv]);
        std::swap(b[c], b[piv]);
        for (size_t r = c + 1; r < n; ++r) {
            double f = a[r][c] / a[c][c];
            for (size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
            b[r] -= f * b[c];
        }
    }
    std::vector<double> x(n);
    for (size_t c = n; c-- > 0;) {
        double s = b[c];
        for (size_t k = c + 1; k < n; ++k) s -= a[c][k] * x[k];
        x[c] = s / a[c][c];
    }
    return x;
}

// Least-squares optimum (with intercept) as a linear-regression Model.
Model least_squares_model(const Dataset& ds) {
    size_t p = ds.d + 1;
    std::vector<std::vector<double>> ata(p, std::vector<double>(p, 0.0));
    std::vector<double> aty(p, 0.0);
    for (int64_t i = 0; i < ds.n; ++i) {
        std::vector<double> row(ds.row(i).begin(), ds.row(i).end());
        row.push_back(1.0);
        for (size_t r = 0; r < p; ++r) {
            for (size_t c = 0; c < p; ++c) ata[r][c] += row[r] * row[c];
            aty[r] += row[r] * ds.targets[i];
        }
    }
    Model m = make_model(ModelKind::linear_regression, {static_cast<int>(ds.d), 1});
    m.params = solve_linear(ata, aty);
    return m;
}

// ---------------------------------------------------------------------------

// BMUF(zeta=0, block_lr=1) == BSP bitwise over random configs, and the N=1,
// tau=1 cluster degenerates to sequential SGD for BSP/ASGD/BMUF.
void criterion_1() {
    Rng rng(20260809, 1);
    bool pass = true;
    std::string detail;
    const int kConfigs = 20;
    for (int trial = 0; trial < kConfigs && pass; ++trial) {
        int n_workers = std::vector<int>{2, 4, 8}[rng.next_below(3)];
        int tau = std::vector<int>{1, 5, 20}[rng.next_below(3)];
        int mb = 2 + static_cast<int>(rng.next_below(4));
        double lr = rng.next_uniform(0.02, 0.2);
        int d = 3 + static_cast<int>(rng.next_below(6));
        int64_t n = int64_t(n_workers) * tau * mb + 50 + static_cast<int64_t>(rng.next_below(400));
        uint64_t seed = rng.next_u64();

        Dataset full = make_synthetic(TaskKind::linreg, n, d, 0.1,
                                      rng.next_uniform(1.0, 5.0), seed);
        auto [train, cv] = cv_split(full, 0.2, seed);
        Model init = make_model(ModelKind::linear_regression, {d, 1});
        Model model0 = warm_start(init, train, 1, lr, mb, seed);

        SimConfig cfg;
        cfg.strategy.n_workers = n_workers;
        cfg.strategy.sync_period = tau;
        cfg.strategy.lr = lr;
        cfg.minibatch = mb;
        cfg.compute_time_per_minibatch.assign(n_workers, 1.0);
        cfg.epochs_max = 2;
        cfg.seed = seed;
        cfg.record_trajectory = true;

        SimConfig bsp_cfg = cfg;
        bsp_cfg.strategy.kind = StrategyKind::bsp;
        SimConfig bmuf_cfg = cfg;
        bmuf_cfg.strategy.kind = StrategyKind::bmuf;
        bmuf_cfg.strategy.block_momentum = 0.0;
        bmuf_cfg.strategy.block_lr = 1.0;

        auto a = run_simulation(bsp_cfg, model0, train, cv);
        auto b = run_simulation(bmuf_cfg, model0, train, cv);
        if (a.global_trajectory.size() != b.global_trajectory.size() ||
            !bitwise_equal(a.final_global, b.final_global)) {
            pass = false;
            detail = "trajectory mismatch at config " + std::to_string(trial);
            break;
        }
        for (size_t s = 0; s < a.global_trajectory.size(); ++s)
            if (!bitwise_equal(a.global_trajectory[s], b.global_trajectory[s])) {
                pass = false;
                detail = "snapshot " + std::to_string(s) + " differs (config " +
                         std::to_string(trial) + ")";
                break;
            }
    }

    // degenerate cluster reductions
    if (pass) {
        Dataset full = make_synthetic(TaskKind::linreg, 300, 5, 0.1, 2.0, 77);
        auto [train, cv] = cv_split(full, 0.2, 77);
        Model init = make_model(ModelKind::linear_regression, {5, 1});
        Model model0 = warm_start(init, train, 1, 0.1, 4, 77);
        SequentialConfig seq;
        seq.lr = 0.1;
        seq.minibatch = 4;
        seq.epochs_max = 3;
        seq.seed = 77;
        auto ref = run_sequential_sgd(seq, model0, train, cv);
        for (auto kind : {StrategyKind::bsp, StrategyKind::asgd, StrategyKind::bmuf}) {
            SimConfig cfg;
            cfg.strategy.kind = kind;
            cfg.strategy.n_workers = 1;
            cfg.strategy.sync_period = 1;
            cfg.strategy.lr = 0.1;
            cfg.minibatch = 4;
            cfg.compute_time_per_minibatch = {1.0};
            cfg.epochs_max = 3;
            cfg.seed = 77;
            auto res = run_simulation(cfg, model0, train, cv);
            if (!bitwise_equal(res.final_global, ref.final_global)) {
                pass = false;
                detail = std::string("N=1 reduction failed for ") + to_string(kind);
                break;
            }
        }
    }
    report(1, "BMUF(0,1) == BSP bitwise; N=1 reductions to sequential SGD", pass, detail);
}

// The shared quadratic objective: the average minimizes it, and the elastic
// exchange conserves the pair sum and contracts the gap by |1 - 2a|.
void criterion_2() {
    Rng rng(20260809, 2);
    bool pass = true;
    std::string detail;
    for (int trial = 0; trial < 20 && pass; ++trial) {
        std::vector<ParameterVector> locals;
        int n = 2 + static_cast<int>(rng.next_below(7));
        size_t dim = 5 + rng.next_below(60);
        for (int i = 0; i < n; ++i) locals.push_back(random_vec(rng, dim));
        auto avg = bsp_average(locals);
        auto objective = [&](const ParameterVector& w) {
            double f = 0.0;
            for (const auto& l : locals)
                for (size_t j = 0; j < dim; ++j) f += 0.5 * (l[j] - w[j]) * (l[j] - w[j]);
            return f;
        };
        double best = objective(avg);
        for (int p = 0; p < 1000; ++p) {
            auto perturbed = avg;
            double scale = std::pow(10.0, rng.next_uniform(-6.0, 0.0));
            for (auto& x : perturbed) x += scale * rng.next_normal();
            if (objective(perturbed) < best) {
                pass = false;
                detail = "perturbation beat the average (trial " + std::to_string(trial) + ")";
                break;
            }
        }
    }
    for (int trial = 0; trial < 1000 && pass; ++trial) {
        size_t dim = 1 + rng.next_below(12);
        auto local = random_vec(rng, dim);
        auto global = random_vec(rng, dim);
        double alpha = rng.next_uniform(0.001, 1.0);
        auto [nl, ng] = easgd_async_exchange(local, global, alpha);
        double gap = 0.0, new_gap = 0.0;
        for (size_t j = 0; j < dim; ++j) {
            double sum_before = local[j] + global[j];
            double sum_after = nl[j] + ng[j];
            if (std::abs(sum_after - sum_before) >
                1e-12 * std::max(1.0, std::abs(sum_before))) {
                pass = false;
                detail = "conservation violated";
                break;
            }
            gap += (local[j] - global[j]) * (local[j] - global[j]);
            new_gap += (nl[j] - ng[j]) * (nl[j] - ng[j]);
        }
        double want = std::abs(1.0 - 2.0 * alpha) * std::sqrt(gap);
        if (pass && std::abs(std::sqrt(new_gap) - want) > 1e-12 * std::max(1.0, want)) {
            pass = false;
            detail = "contraction factor off";
        }
    }
    report(2, "average minimizes the disagreement; elastic conserves and contracts", pass,
           detail);
}

// Smallest |pre-activation| across hidden layers: a central-difference probe
// of step epsilon is only a valid oracle when no ReLU kink sits inside the
// probe window, so cases are accepted on this margin before any gradients
// are compared.
double min_hidden_margin(const Model& m, const Dataset& ds) {
    double worst = std::numeric_limits<double>::infinity();
    size_t L = m.n_layers();
    for (int64_t s = 0; s < ds.n; ++s) {
        std::vector<double> act(ds.row(s).begin(), ds.row(s).end());
        size_t off = 0;
        for (size_t l = 0; l < L; ++l) {
            int in = m.layer_dims[l], out = m.layer_dims[l + 1];
            const double* w = m.params.data() + off;
            const double* b = w + size_t(in) * out;
            off += size_t(in) * out + out;
            std::vector<double> z(out);
            for (int o = 0; o < out; ++o) {
                double v = b[o];
                for (int i = 0; i < in; ++i) v += w[size_t(o) * in + i] * act[i];
                z[o] = v;
                if (l + 1 < L) worst = std::min(worst, std::abs(v));
            }
            act.resize(out);
            for (int o = 0; o < out; ++o) act[o] = (l + 1 < L && z[o] < 0) ? 0.0 : z[o];
        }
    }
    return worst;
}

// backward against central differences over 100 random model/batch pairs.
void criterion_3() {
    Rng rng(20260809, 3);
    bool pass = true;
    std::string detail;
    double worst = 0.0;
    for (int trial = 0; trial < 100 && pass; ++trial) {
        int d = 2 + static_cast<int>(rng.next_below(5));
        int n = 3 + static_cast<int>(rng.next_below(8));
        ModelKind kind = trial % 3 == 0   ? ModelKind::linear_regression
                         : trial % 3 == 1 ? ModelKind::logistic_regression
                                          : ModelKind::mlp;
        int target_dim = kind == ModelKind::mlp ? 1 + static_cast<int>(rng.next_below(2)) : 1;
        Dataset ds;
        ds.n = n;
        ds.d = d;
        ds.target_dim = target_dim;
        ds.features.resize(n * d);
        ds.targets.resize(n * target_dim);
        // every mlp here has two hidden layers
        Model m = kind == ModelKind::mlp ? make_model(kind, {d, 6, 4, target_dim})
                                         : make_model(kind, {d, target_dim});
        for (;;) {
            for (auto& v : ds.features) v = rng.next_normal();
            for (auto& v : ds.targets) v = rng.next_normal();
            if (kind == ModelKind::logistic_regression)
                for (auto& y : ds.targets) y = y > 0 ? 1.0 : 0.0;
            init_glorot(m, rng);
            for (auto& p : m.params) p += 0.1 * rng.next_normal();
            if (kind != ModelKind::mlp || min_hidden_margin(m, ds) > 5e-4) break;
        }
        std::vector<uint32_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0u);
        MinibatchView batch{&ds, idx};
        Gradient an = backward(m, batch);
        Gradient fd = fd_gradient(m, batch, 1e-5);
        for (size_t i = 0; i < an.values.size(); ++i) {
            if (std::abs(an.values[i]) <= 1e-8) continue;
            double rel = std::abs(fd.values[i] - an.values[i]) / std::abs(an.values[i]);
            worst = std::max(worst, rel);
            if (rel >= 1e-6) {
                pass = false;
                detail = "coordinate " + std::to_string(i) + " rel err " +
                         format_double(rel) + " (trial " + std::to_string(trial) + ")";
                break;
            }
        }
    }
    if (pass) detail = "max rel err " + format_double(worst);
    report(3, "backward matches central differences (100 pairs, mlp >= 2 hidden)", pass,
           detail);
}

// Every strategy drives noiseless convex regression to the least-squares
// optimum: final train MSE within 1e-3 of optimal, relative to the zero-model
// scale (the optimum itself is exactly zero on noiseless data).
void criterion_4() {
    Dataset full = make_synthetic(TaskKind::linreg, 2000, 20, 0.0, 10.0, 90210);
    auto [train, cv] = cv_split(full, 0.1, 90210);
    Model ls = least_squares_model(train);
    double optimum = dataset_loss(ls, train);
    Model zero = make_model(ModelKind::linear_regression, {20, 1});
    double scale = dataset_loss(zero, train);
    Model model0 = warm_start(zero, train, 1, 0.1, 5, 90210);

    struct Case {
        StrategyKind kind;
        int tau;
    };
    // each strategy at its customary sync period, easgd-sync as the
    // per-minibatch reference rule
    std::vector<Case> cases{{StrategyKind::bsp, 5},
                            {StrategyKind::asgd, 5},
                            {StrategyKind::bmuf, 80},
                            {StrategyKind::easgd_async, 64},
                            {StrategyKind::easgd_sync, 1}};
    bool pass = true;
    std::string detail;
    for (const auto& c : cases) {
        SimConfig cfg;
        cfg.strategy.kind = c.kind;
        cfg.strategy.n_workers = 4;
        cfg.strategy.sync_period = c.tau;
        cfg.strategy.lr = 0.1;
        cfg.strategy.elastic_alpha = 0.5;
        cfg.strategy.elastic_lambda = 1.0;
        cfg.minibatch = 5;
        cfg.compute_time_per_minibatch.assign(4, 1.0);
        cfg.epochs_max = 30;
        cfg.seed = 90210;
        auto res = run_simulation(cfg, model0, train, cv);
        double gap = (res.final_train_loss() - optimum) / scale;
        if (res.diverged || !(gap < 1e-3)) {
            pass = false;
            detail = std::string(to_string(c.kind)) + " gap " + format_double(gap) +
                     (res.diverged ? " (diverged)" : "");
            break;
        }
    }
    report(4, "convex oracle: all strategies reach the least-squares optimum", pass, detail);
}

// Measured simulator speedup against Eq.-style prediction within 2% over
// N x tau, for a synchronous and an asynchronous strategy.
void criterion_5() {
    const int64_t n = 6400;
    const int mb = 10;
    const double c = 1.0, e = 0.5;
    Dataset train = make_synthetic(TaskKind::linreg, n, 5, 0.1, 2.0, 314);
    Dataset cv = make_synthetic(TaskKind::linreg, 200, 5, 0.1, 2.0, 315);
    Model model0 = make_model(ModelKind::linear_regression, {5, 1});
    const double B = static_cast<double>(n) / mb;  // minibatches per epoch

    SimConfig ref_cfg;
    ref_cfg.strategy.kind = StrategyKind::bsp;
    ref_cfg.strategy.n_workers = 1;
    ref_cfg.strategy.sync_period = 1;
    ref_cfg.strategy.lr = 0.01;
    ref_cfg.minibatch = mb;
    ref_cfg.compute_time_per_minibatch = {c};
    ref_cfg.epochs_max = 2;
    ref_cfg.seed = 314;
    ref_cfg.use_lr_schedule = false;
    auto ref = run_simulation(ref_cfg, model0, train, cv);

    bool pass = true;
    std::string detail;
    double worst = 0.0;
    for (auto kind : {StrategyKind::bsp, StrategyKind::asgd}) {
        for (int workers : {2, 4, 8}) {
            for (int tau : {5, 20, 80}) {
                SimConfig cfg = ref_cfg;
                cfg.strategy.kind = kind;
                cfg.strategy.n_workers = workers;
                cfg.strategy.sync_period = tau;
                cfg.compute_time_per_minibatch.assign(workers, c);
                cfg.exchange_cost = e;
                auto res = run_simulation(cfg, model0, train, cv);
                double measured = measure_speedup(res, ref);
                SpeedupInputs in;
                in.t_s = B * c;
                in.t_c = e * B / (static_cast<double>(workers) * tau);
                in.n_workers = workers;
                in.utilization = 1.0;
                double predicted = predict_speedup(in);
                double rel = std::abs(measured - predicted) / predicted;
                worst = std::max(worst, rel);
                if (rel >= 0.02) {
                    pass = false;
                    detail = std::string(to_string(kind)) + " N=" + std::to_string(workers) +
                             " tau=" + std::to_string(tau) + " rel err " + format_double(rel);
                }
            }
        }
    }
    if (pass) detail = "worst rel err " + format_double(worst);
    report(5, "simulated speedup matches the analytic model within 2%", pass, detail);
}

// The constant-C block-momentum rule at the published defaults.
void criterion_6() {
    bool pass = bmuf_resolve_zeta(1.0, 1.0, 4) == 0.75 &&
                bmuf_resolve_zeta(1.0, 1.0, 8) == 0.875;
    report(6, "C-rule solver: zeta = 0.75 (N=4) and 0.875 (N=8) exactly", pass);
}

// Sync-period sensitivity on an ill-conditioned task: ASGD only degrades as
// tau grows (divergence counts as worst), BMUF stays inside a 5% band.
// Config frozen from the pre-registered oracle run (logistic, cond 100,
// lr 0.1): asgd cv 0.5937 / 0.5941 / 0.5945 / 0.6105, bmuf band 0.0054.
void criterion_7() {
    Dataset full = make_synthetic(TaskKind::logreg, 2000, 20, 0.1, 100.0, 777);
    auto [train, cv] = cv_split(full, 0.1, 777);
    Model zero = make_model(ModelKind::logistic_regression, {20, 1});
    Model model0 = warm_start(zero, train, 1, 0.1, 5, 777);

    auto final_cv = [&](StrategyKind kind, int tau) {
        SimConfig cfg;
        cfg.strategy.kind = kind;
        cfg.strategy.n_workers = 4;
        cfg.strategy.sync_period = tau;
        cfg.strategy.lr = 0.1;
        cfg.minibatch = 5;
        cfg.compute_time_per_minibatch.assign(4, 1.0);
        cfg.epochs_max = 15;
        cfg.seed = 777;
        auto res = run_simulation(cfg, model0, train, cv);
        return res.diverged ? std::numeric_limits<double>::infinity()
                            : res.final_cv_loss();
    };

    bool pass = true;
    std::string detail;
    std::vector<int> taus{1, 5, 20, 80};
    std::vector<double> asgd_cv, bmuf_cv;
    for (int tau : taus) {
        asgd_cv.push_back(final_cv(StrategyKind::asgd, tau));
        bmuf_cv.push_back(final_cv(StrategyKind::bmuf, tau));
    }
    for (size_t i = 1; i < asgd_cv.size(); ++i) {
        if (!(asgd_cv[i] >= asgd_cv[i - 1])) {
            pass = false;
            detail = "asgd cv not non-decreasing: " + format_double(asgd_cv[i - 1]) + " -> " +
                     format_double(asgd_cv[i]) + " at tau " + std::to_string(taus[i]);
        }
    }
    double lo = *std::min_element(bmuf_cv.begin(), bmuf_cv.end());
    double hi = *std::max_element(bmuf_cv.begin(), bmuf_cv.end());
    if (!std::isfinite(hi) || (hi - lo) / lo >= 0.05) {
        pass = false;
        detail += std::string(detail.empty() ? "" : "; ") + "bmuf band " +
                  format_double((hi - lo) / lo);
    }
    if (pass)
        detail = "asgd cv " + format_double(asgd_cv[0]) + " .. " +
                 (std::isfinite(asgd_cv[3]) ? format_double(asgd_cv[3]) : "divergence") +
                 ", bmuf band " + format_double((hi - lo) / lo);
    report(7, "tau sensitivity: ASGD degrades with tau, BMUF stays in a 5% band", pass,
           detail);
}

// The three schedule thresholds verbatim.
void criterion_8() {
    bool pass = true;
    LrSchedulerState s{LrPhase::fixed, 0.8, 10.0};
    auto d1 = lr_schedule_update(s, 9.8);  // 2% drop
    pass = pass && d1.state.phase == LrPhase::fixed && d1.state.current_lr == 0.8 && !d1.stop;

    LrSchedulerState h{LrPhase::fixed, 0.8, 10.0};
    auto d2 = lr_schedule_update(h, 9.95);  // 0.5% drop
    pass = pass && d2.state.phase == LrPhase::halving && d2.state.current_lr == 0.4 &&
           !d2.stop;

    LrSchedulerState st{LrPhase::halving, 0.4, 5.000};
    auto d3 = lr_schedule_update(st, 4.999);  // 0.02% drop
    pass = pass && d3.stop;
    report(8, "schedule thresholds: 2% fixed, 0.5% halving, 0.02% stop", pass);
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    if (g_failures == 0)
        std::printf("acceptance: all 8 criteria passed\n");
    else
        std::printf("acceptance: %d criterion(s) FAILED\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
