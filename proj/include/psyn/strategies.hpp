#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psyn/model.hpp"
#include "psyn/vec.hpp"

namespace psyn {

enum class StrategyKind { bsp, asgd, bmuf, easgd_sync, easgd_async };

inline const char* to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::bsp: return "bsp";
        case StrategyKind::asgd: return "asgd";
        case StrategyKind::bmuf: return "bmuf";
        case StrategyKind::easgd_sync: return "easgd-sync";
        case StrategyKind::easgd_async: return "easgd-async";
    }
    return "?";
}

inline StrategyKind strategy_from_string(const std::string& s) {
    if (s == "bsp") return StrategyKind::bsp;
    if (s == "asgd") return StrategyKind::asgd;
    if (s == "bmuf") return StrategyKind::bmuf;
    if (s == "easgd-sync") return StrategyKind::easgd_sync;
    if (s == "easgd-async") return StrategyKind::easgd_async;
    throw ConfigError("unknown strategy kind: '" + s + "'");
}

// Block momentum from the constant-C rule: eta / (N (1 - zeta)) = C, i.e.
// zeta = 1 - eta / (N C). Rejects parameter sets whose zeta leaves [0, 1).
inline double bmuf_resolve_zeta(double c, double block_lr, int n_workers) {
    if (!(c >= 1.0)) throw ConfigError("bmuf: c_constant must be >= 1");
    if (!(block_lr > 0.0)) throw ConfigError("bmuf: block_lr must be > 0");
    if (n_workers < 1) throw ConfigError("bmuf: n_workers must be >= 1");
    double zeta = 1.0 - block_lr / (static_cast<double>(n_workers) * c);
    if (!(zeta >= 0.0) || zeta >= 1.0)
        throw ConfigError("bmuf: resolved block momentum " + format_double(zeta) +
                          " falls outside [0, 1)");
    return zeta;
}

// Which synchronization rule runs and with what knobs. BMUF takes either an
// explicit block momentum or the C constant, never both.
struct StrategyConfig {
    StrategyKind kind = StrategyKind::bsp;
    int n_workers = 1;
    int sync_period = 1;  // tau, minibatches between exchanges
    double lr = 0.1;      // local step size; also the ASGD server step
    std::optional<double> block_momentum;  // zeta
    double block_lr = 1.0;                 // BMUF eta
    std::optional<double> c_constant;      // C; zeta derived when present
    double elastic_alpha = 0.5;            // async EASGD alpha = eta*lambda
    double elastic_lambda = 0.5;           // sync EASGD lambda

    void validate() const {
        if (n_workers < 1) throw ConfigError("strategy: n_workers must be >= 1");
        if (sync_period < 1) throw ConfigError("strategy: sync_period must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("strategy: lr must be > 0");
        if (kind == StrategyKind::bmuf) {
            if (block_momentum && c_constant)
                throw ConfigError(
                    "bmuf: block_momentum and c_constant conflict; give one, the other is "
                    "derived");
            if (block_momentum && (!(*block_momentum >= 0.0) || *block_momentum >= 1.0))
                throw ConfigError("bmuf: block_momentum must be in [0, 1)");
            if (!(block_lr > 0.0)) throw ConfigError("bmuf: block_lr must be > 0");
            resolved_block_momentum();
        }
        if (kind == StrategyKind::easgd_async &&
            (!(elastic_alpha > 0.0) || elastic_alpha > 1.0))
            throw ConfigError("easgd-async: elastic_alpha must be in (0, 1]");
        if (kind == StrategyKind::easgd_sync && !(elastic_lambda > 0.0))
            throw ConfigError("easgd-sync: elastic_lambda must be > 0");
    }

    // Explicit zeta if given, else from c_constant (default C = 1).
    double resolved_block_momentum() const {
        if (block_momentum) return *block_momentum;
        return bmuf_resolve_zeta(c_constant.value_or(1.0), block_lr, n_workers);
    }
};

// Elementwise mean of the local models as a left-to-right running mean,
// m_k = m_{k-1} + (w_k - m_{k-1}) / k. The correction is exactly zero for
// identical inputs, so averaging N copies of w returns w bitwise.
inline ParameterVector bsp_average(std::span<const ParameterVector> locals) {
    if (locals.empty()) throw std::invalid_argument("bsp_average: empty local set");
    size_t dim = locals[0].size();
    for (size_t i = 1; i < locals.size(); ++i)
        check_same_dim(dim, locals[i].size(), "bsp_average");
    ParameterVector mean(locals[0]);
    for (size_t i = 1; i < locals.size(); ++i) {
        double k = static_cast<double>(i + 1);
        for (size_t j = 0; j < dim; ++j) mean[j] += (locals[i][j] - mean[j]) / k;
    }
    return mean;
}

// Server side of ASGD: the incoming gradient is applied to the current model
// in arrival order, however stale its base model is.
inline ParameterVector asgd_server_apply(const ParameterVector& global, const Gradient& grad,
                                         double lr) {
    check_same_dim(global.size(), grad.values.size(), "asgd_server_apply");
    if (!(lr > 0.0)) throw std::invalid_argument("asgd_server_apply: lr must be positive");
    ParameterVector next(global.size());
    for (size_t j = 0; j < global.size(); ++j) next[j] = global[j] - lr * grad.values[j];
    return next;
}

struct WorkerRoundResult {
    Gradient accumulated;        // sum of the round's minibatch mean-gradients
    ParameterVector new_local;   // local model after the chained steps
    int minibatches_consumed;    // < tau signals a partial round
};

// One ASGD worker round: tau chained local SGD steps from the pulled global.
// The transmitted "gradient" is the running sum of the minibatch gradients,
// which equals (pulled - new_local) / lr in exact arithmetic, so the server
// application reproduces the local displacement; at tau = 1 it is bitwise the
// single minibatch gradient.
inline WorkerRoundResult asgd_worker_round(const Model& pulled, MinibatchStream& shard, int tau,
                                           double lr) {
    if (tau < 1) throw std::invalid_argument("asgd_worker_round: tau must be >= 1");
    WorkerRoundResult r;
    r.accumulated.values.assign(pulled.params.size(), 0.0);
    r.accumulated.sample_count = 0;
    r.minibatches_consumed = 0;
    Model local = pulled;
    for (int k = 0; k < tau && !shard.done(); ++k) {
        MinibatchView mb = shard.next();
        Gradient g = backward(local, mb);
        local.params = sgd_step(local.params, g, lr);
        for (size_t j = 0; j < g.values.size(); ++j) r.accumulated.values[j] += g.values[j];
        r.accumulated.sample_count += g.sample_count;
        ++r.minibatches_consumed;
    }
    r.new_local = std::move(local.params);
    return r;
}

// Plain chained SGD steps; the local phase shared by the synchronous
// strategies. Returns the number of minibatches consumed.
inline int local_sgd_round(Model& local, MinibatchStream& shard, int tau, double lr) {
    int consumed = 0;
    for (int k = 0; k < tau && !shard.done(); ++k) {
        Gradient g = backward(local, shard.next());
        local.params = sgd_step(local.params, g, lr);
        ++consumed;
    }
    return consumed;
}

struct BmufState {
    ParameterVector global;  // filtered global model
    ParameterVector delta;   // momentum-smoothed block update
    int64_t block_index = 0;

    static BmufState init(const ParameterVector& start) {
        return BmufState{start, ParameterVector(start.size(), 0.0), 0};
    }
};

// One CBM block update. With G = mean(locals) - global the recurrences are
//   delta' = zeta * delta + block_lr * G
//   global' = global + delta'
// The new global is accumulated in the algebraically identical grouping
//   global' = block_lr * mean + (1 - block_lr) * global + zeta * delta
// with zero coefficients skipped, so zeta = 0, block_lr = 1 degenerates to
// bsp_average bitwise. The returned global is the restart point for every
// worker's next block.
inline BmufState bmuf_block_update(const BmufState& state,
                                   std::span<const ParameterVector> locals, double zeta,
                                   double block_lr) {
    if (!(zeta >= 0.0) || zeta >= 1.0)
        throw std::invalid_argument("bmuf_block_update: zeta must be in [0, 1)");
    if (!(block_lr > 0.0)) throw std::invalid_argument("bmuf_block_update: block_lr must be > 0");
    ParameterVector mean = bsp_average(locals);
    check_same_dim(mean.size(), state.global.size(), "bmuf_block_update");

    BmufState next;
    next.block_index = state.block_index + 1;
    next.delta.resize(mean.size());
    next.global.resize(mean.size());
    const double one_minus = 1.0 - block_lr;
    for (size_t j = 0; j < mean.size(); ++j) {
        double g = mean[j] - state.global[j];
        double d = (block_lr == 1.0) ? g : block_lr * g;
        if (zeta != 0.0) d += zeta * state.delta[j];
        next.delta[j] = d;

        double acc = (block_lr == 1.0) ? mean[j] : block_lr * mean[j];
        if (one_minus != 0.0) acc += one_minus * state.global[j];
        if (zeta != 0.0) acc += zeta * state.delta[j];
        next.global[j] = acc;
    }
    return next;
}

// Synchronous EASGD, one coupled step on pre-step values:
//   w_i' = w_i - lr * grad_i - lr*lambda * (w_i - global)
//   global' = global - lr*lambda * sum_i (global - w_i)
inline std::pair<std::vector<ParameterVector>, ParameterVector> easgd_sync_step(
    std::span<const ParameterVector> locals, std::span<const Gradient> grads,
    const ParameterVector& global, double lr, double lambda) {
    if (locals.size() != grads.size())
        throw std::invalid_argument("easgd_sync_step: locals/grads length mismatch");
    if (locals.empty()) throw std::invalid_argument("easgd_sync_step: empty worker set");
    if (!(lr > 0.0) || !(lambda > 0.0))
        throw std::invalid_argument("easgd_sync_step: lr and lambda must be positive");
    size_t dim = global.size();
    for (size_t i = 0; i < locals.size(); ++i) {
        check_same_dim(dim, locals[i].size(), "easgd_sync_step");
        check_same_dim(dim, grads[i].values.size(), "easgd_sync_step");
    }
    double a = lr * lambda;
    std::vector<ParameterVector> new_locals(locals.size(), ParameterVector(dim));
    ParameterVector new_global(dim);
    for (size_t j = 0; j < dim; ++j) {
        double pull = 0.0;  // sum_i (global - w_i), left to right
        for (size_t i = 0; i < locals.size(); ++i) {
            double diff = locals[i][j] - global[j];
            new_locals[i][j] = locals[i][j] - lr * grads[i].values[j] - a * diff;
            pull += global[j] - locals[i][j];
        }
        new_global[j] = global[j] - a * pull;
    }
    return {std::move(new_locals), std::move(new_global)};
}

// Asynchronous EASGD elastic exchange: equal and opposite moves computed
// from the pre-exchange pair on both lines. Local gradient steps happen
// elsewhere, between exchanges.
inline std::pair<ParameterVector, ParameterVector> easgd_async_exchange(
    const ParameterVector& local, const ParameterVector& global, double alpha) {
    check_same_dim(local.size(), global.size(), "easgd_async_exchange");
    if (!(alpha > 0.0) || alpha > 1.0)
        throw std::invalid_argument("easgd_async_exchange: alpha must be in (0, 1]");
    ParameterVector new_local(local.size()), new_global(local.size());
    for (size_t j = 0; j < local.size(); ++j) {
        double e = alpha * (local[j] - global[j]);
        new_local[j] = local[j] - e;
        new_global[j] = global[j] + e;
    }
    return {std::move(new_local), std::move(new_global)};
}

enum class LrPhase { fixed, halving, stopped };

inline const char* to_string(LrPhase p) {
    switch (p) {
        case LrPhase::fixed: return "fixed";
        case LrPhase::halving: return "halving";
        case LrPhase::stopped: return "stopped";
    }
    return "?";
}

struct LrSchedulerState {
    LrPhase phase = LrPhase::fixed;
    double current_lr = 0.1;
    std::optional<double> prev_cv_loss;
};

struct LrDecision {
    LrSchedulerState state;
    bool stop = false;
};

// Epoch-end schedule: the rate stays fixed while the CV loss drops by at
// least 1% against the previous epoch, then halves each epoch, and training
// stops once the drop falls under 0.1%. The first call records the baseline.
// Loss increases count as a sub-threshold decrease. Stop is absorbing.
inline LrDecision lr_schedule_update(LrSchedulerState state, double cv_loss) {
    if (!std::isfinite(cv_loss))
        throw std::invalid_argument("lr_schedule_update: cv_loss must be finite");
    if (state.phase == LrPhase::stopped) return {state, true};
    if (!state.prev_cv_loss) {
        state.prev_cv_loss = cv_loss;
        return {state, false};
    }
    double prev = *state.prev_cv_loss;
    double rel_drop = prev > 0.0 ? (prev - cv_loss) / prev : 0.0;
    state.prev_cv_loss = cv_loss;

    if (state.phase == LrPhase::fixed) {
        if (rel_drop >= 0.01) return {state, false};
        state.phase = LrPhase::halving;
    }
    if (rel_drop < 0.001) {
        state.phase = LrPhase::stopped;
        return {state, true};
    }
    state.current_lr *= 0.5;
    return {state, false};
}

}  // namespace psyn
