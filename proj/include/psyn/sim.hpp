#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <queue>
#include <tuple>
#include <span>
#include <string>
#include <vector>

#include "psyn/dataset.hpp"
#include "psyn/model.hpp"
#include "psyn/strategies.hpp"

namespace psyn {

// Sorts after every real worker id, so same-time barrier/commit rows keep the
// trace strictly increasing under (time, worker, seq).
constexpr int kServerWorker = 1 << 30;

enum class EventKind { compute_done, push, pull, barrier, block_commit, exchange };

inline const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::compute_done: return "compute-done";
        case EventKind::push: return "push";
        case EventKind::pull: return "pull";
        case EventKind::barrier: return "barrier";
        case EventKind::block_commit: return "block-commit";
        case EventKind::exchange: return "exchange";
    }
    return "?";
}

struct SimEvent {
    double time = 0.0;
    int worker = kServerWorker;  // worker id, or kServerWorker for the server/barrier
    EventKind kind = EventKind::compute_done;
    int64_t seq = 0;
    std::optional<int64_t> staleness_k;  // ASGD server applications only
};

struct CurvePoint {
    int epoch = 0;
    double train_loss = 0.0;
    double cv_loss = 0.0;
    double lr = 0.0;
    double sim_time = 0.0;
};

struct SimConfig {
    StrategyConfig strategy;
    std::vector<double> compute_time_per_minibatch;  // simulated seconds, one per worker
    double exchange_cost = 0.0;                      // simulated seconds per synchronization
    int epochs_max = 10;
    uint64_t seed = 42;
    int minibatch = 1;
    bool reshuffle = true;          // new permutation each epoch
    bool use_lr_schedule = true;    // epoch-end halving schedule
    bool record_trajectory = false; // keep the global model after every commit

    int n_workers() const { return strategy.n_workers; }

    void validate(const Dataset& train) const {
        strategy.validate();
        if (static_cast<int>(compute_time_per_minibatch.size()) != n_workers())
            throw ConfigError("sim: compute_time_per_minibatch needs one entry per worker");
        for (double c : compute_time_per_minibatch)
            if (!(c > 0.0)) throw ConfigError("sim: compute times must be > 0");
        if (!(exchange_cost >= 0.0)) throw ConfigError("sim: exchange_cost must be >= 0");
        if (epochs_max < 1) throw ConfigError("sim: epochs_max must be >= 1");
        if (minibatch < 1) throw ConfigError("sim: minibatch must be >= 1");
        if (train.n < int64_t(n_workers()) * minibatch)
            throw ConfigError("sim: dataset too small for n_workers * minibatch");
    }
};

struct RunResult {
    ParameterVector final_global;
    ModelKind model_kind = ModelKind::linear_regression;
    std::vector<int> layer_dims;
    std::vector<CurvePoint> learning_curve;
    std::vector<SimEvent> trace;
    double simulated_wall_clock = 0.0;
    int epochs_run = 0;
    bool diverged = false;
    bool stopped_by_schedule = false;
    std::string divergence_reason;
    std::vector<ParameterVector> global_trajectory;  // one snapshot per commit when enabled
    std::optional<double> speedup_vs_reference;

    double final_train_loss() const { return learning_curve.back().train_loss; }
    double final_cv_loss() const { return learning_curve.back().cv_loss; }
    Model final_model() const { return Model{model_kind, layer_dims, final_global}; }
};

// Simulated completion time of a synchronization barrier: the slowest arrival
// plus the exchange cost.
inline double barrier_complete(std::span<const double> arrivals, double exchange_cost) {
    if (arrivals.empty()) throw std::invalid_argument("barrier_complete: no arrivals");
    double m = arrivals[0];
    for (double a : arrivals) m = std::max(m, a);
    return m + exchange_cost;
}

// The asynchronous strategies' server. Messages must be fed in simulated
// (time, worker, seq) order; the caller (event loop or test script) owns the
// ordering. Staleness of a push is the number of global updates committed
// between that worker's pull and the push itself.
class ParameterServer {
public:
    ParameterServer(ParameterVector global) : global_(std::move(global)) {}

    const ParameterVector& global() const { return global_; }
    int64_t version() const { return version_; }

    // pull: hand out the current model and remember which version it was.
    int64_t process_pull() const { return version_; }

    // ASGD push. Returns the staleness k of the applied gradient.
    int64_t process_push(const Gradient& grad, int64_t pulled_version, double lr) {
        if (grad.values.size() != global_.size())
            throw ProtocolError("server push: gradient dim " + std::to_string(grad.values.size()) +
                                " does not match model dim " + std::to_string(global_.size()));
        global_ = asgd_server_apply(global_, grad, lr);
        int64_t k = version_ - pulled_version;
        ++version_;
        return k;
    }

    // Async-EASGD elastic exchange; mutates both sides, counts as one update.
    ParameterVector process_exchange(const ParameterVector& local, double alpha) {
        if (local.size() != global_.size())
            throw ProtocolError("server exchange: local dim " + std::to_string(local.size()) +
                                " does not match model dim " + std::to_string(global_.size()));
        auto [new_local, new_global] = easgd_async_exchange(local, global_, alpha);
        global_ = std::move(new_global);
        ++version_;
        return new_local;
    }

private:
    ParameterVector global_;
    int64_t version_ = 0;
};

namespace detail {

struct Tracer {
    std::vector<SimEvent>* out;
    int64_t seq = 0;
    void emit(double time, int worker, EventKind kind,
              std::optional<int64_t> staleness = std::nullopt) {
        out->push_back(SimEvent{time, worker, kind, seq++, staleness});
    }
};

inline Model with_params(const Model& shape, ParameterVector params) {
    return Model{shape.kind, shape.layer_dims, std::move(params)};
}

// One synchronous epoch (bsp, bmuf, easgd-sync): every block ends in a
// barrier at max arrival + exchange cost, then the strategy's global update.
inline void run_sync_epoch(const SimConfig& cfg, const Dataset& train,
                           const ShardedDataset& shards, double lr_now, Model& global,
                           BmufState* bmuf, std::vector<ParameterVector>* easgd_locals,
                           double& t, Tracer& tracer,
                           std::vector<ParameterVector>* trajectory) {
    const int n = cfg.n_workers();
    const double cost = n > 1 ? cfg.exchange_cost : 0.0;
    const auto kind = cfg.strategy.kind;
    for (size_t b = 0; b < shards.n_blocks(); ++b) {
        std::vector<ParameterVector> locals(n);
        std::vector<Gradient> grads;
        if (kind == StrategyKind::easgd_sync) grads.resize(n);
        std::vector<double> arrivals(n);
        for (int w = 0; w < n; ++w) {
            auto batches = shards.block_minibatches(b, w);
            arrivals[w] = t + static_cast<double>(batches.size()) *
                                  cfg.compute_time_per_minibatch[w];
            MinibatchStream stream(train, std::move(batches));
            if (kind == StrategyKind::easgd_sync) {
                Model local = with_params(global, (*easgd_locals)[w]);
                Gradient g;
                g.values.assign(global.params.size(), 0.0);
                if (stream.remaining() > 0) {
                    local_sgd_round(local, stream, static_cast<int>(stream.remaining()) - 1,
                                    lr_now);
                    g = backward(local, stream.next());
                }
                locals[w] = std::move(local.params);
                grads[w] = std::move(g);
            } else {
                Model local = with_params(global, global.params);
                local_sgd_round(local, stream, static_cast<int>(stream.remaining()), lr_now);
                locals[w] = std::move(local.params);
            }
        }
        // trace stays sorted by (time, worker)
        std::vector<int> order(n);
        for (int w = 0; w < n; ++w) order[w] = w;
        std::sort(order.begin(), order.end(), [&](int a, int bb) {
            return arrivals[a] != arrivals[bb] ? arrivals[a] < arrivals[bb] : a < bb;
        });
        for (int w : order) tracer.emit(arrivals[w], w, EventKind::compute_done);

        double done = barrier_complete(arrivals, cost);
        tracer.emit(done, kServerWorker, EventKind::barrier);
        switch (kind) {
            case StrategyKind::bsp:
                global.params = bsp_average(locals);
                break;
            case StrategyKind::bmuf:
                *bmuf = bmuf_block_update(*bmuf, locals,
                                          cfg.strategy.resolved_block_momentum(),
                                          cfg.strategy.block_lr);
                global.params = bmuf->global;
                break;
            case StrategyKind::easgd_sync: {
                auto [new_locals, new_global] =
                    easgd_sync_step(locals, grads, global.params, lr_now,
                                    cfg.strategy.elastic_lambda);
                *easgd_locals = std::move(new_locals);
                global.params = std::move(new_global);
                break;
            }
            default:
                throw std::logic_error("run_sync_epoch: not a synchronous strategy");
        }
        tracer.emit(done, kServerWorker, EventKind::block_commit);
        if (trajectory) trajectory->push_back(global.params);
        t = done;
    }
}

// One asynchronous epoch (asgd, easgd-async), driven by a deterministic event
// queue ordered by (time, worker, insertion). A worker's push and its next
// pull form one atomic exchange at the same timestamp; the shared exchange
// cost is charged once per pair. Within an epoch nothing synchronizes; epochs
// themselves end when every worker has drained its shard.
inline void run_async_epoch(const SimConfig& cfg, const Dataset& train,
                            const ShardedDataset& shards, double lr_now, Model& global,
                            std::vector<ParameterVector>* easgd_locals, ParameterServer& server,
                            double& t, Tracer& tracer,
                            std::vector<ParameterVector>* trajectory) {
    const int n = cfg.n_workers();
    const double cost = n > 1 ? cfg.exchange_cost : 0.0;
    const int tau = cfg.strategy.sync_period;
    const bool is_asgd = cfg.strategy.kind == StrategyKind::asgd;

    enum class Action { compute_done, apply };
    struct QItem {
        double time;
        int worker;
        int64_t order;
        Action action;
    };
    auto later = [](const QItem& a, const QItem& b) {
        if (a.time != b.time) return a.time > b.time;
        if (a.worker != b.worker) return a.worker > b.worker;
        return a.order > b.order;
    };
    std::priority_queue<QItem, std::vector<QItem>, decltype(later)> queue(later);
    int64_t insertion = 0;

    std::vector<MinibatchStream> streams;
    streams.reserve(n);
    for (int w = 0; w < n; ++w) streams.emplace_back(train, shards.worker_minibatches(w));

    struct PendingRound {
        Gradient accumulated;  // asgd only; the server discards worker locals
        int64_t pulled_version = 0;
    };
    std::vector<PendingRound> pending(n);
    double t_end = t;

    // Start a round at `now`: asgd pulls the current global and computes tau
    // chained steps from it; easgd-async steps from its persistent local.
    auto start_round = [&](int w, double now) {
        if (streams[w].done()) return;
        if (is_asgd) {
            pending[w].pulled_version = server.process_pull();
            tracer.emit(now, w, EventKind::pull);
            Model base = with_params(global, server.global());
            WorkerRoundResult r = asgd_worker_round(base, streams[w], tau, lr_now);
            pending[w].accumulated = std::move(r.accumulated);
            double done = now + r.minibatches_consumed * cfg.compute_time_per_minibatch[w];
            queue.push({done, w, insertion++, Action::compute_done});
            queue.push({done + cost, w, insertion++, Action::apply});
        } else {
            Model local = with_params(global, std::move((*easgd_locals)[w]));
            int consumed = local_sgd_round(local, streams[w], tau, lr_now);
            (*easgd_locals)[w] = std::move(local.params);
            double done = now + consumed * cfg.compute_time_per_minibatch[w];
            queue.push({done, w, insertion++, Action::compute_done});
            queue.push({done + cost, w, insertion++, Action::apply});
        }
    };

    for (int w = 0; w < n; ++w) start_round(w, t);

    while (!queue.empty()) {
        QItem item = queue.top();
        queue.pop();
        t_end = std::max(t_end, item.time);
        if (item.action == Action::compute_done) {
            tracer.emit(item.time, item.worker, EventKind::compute_done);
            continue;
        }
        int w = item.worker;
        if (is_asgd) {
            int64_t k = server.process_push(pending[w].accumulated, pending[w].pulled_version,
                                            lr_now);
            global.params = server.global();
            tracer.emit(item.time, w, EventKind::push, k);
        } else {
            (*easgd_locals)[w] = server.process_exchange((*easgd_locals)[w],
                                                         cfg.strategy.elastic_alpha);
            global.params = server.global();
            tracer.emit(item.time, w, EventKind::exchange);
        }
        if (trajectory) trajectory->push_back(global.params);
        start_round(w, item.time);
    }
    t = t_end;
}

inline double safe_loss(const Model& m, const Dataset& ds) {
    try {
        return dataset_loss(m, ds);
    } catch (const NumericError&) {
        return std::numeric_limits<double>::infinity();
    }
}

}  // namespace detail

// Execute one training run to scheduler stop, epochs_max, or divergence.
// Identical config + seed replays a bitwise-identical result: asynchrony
// exists only inside the simulated timing model, never in host scheduling.
inline RunResult run_simulation(const SimConfig& cfg, const Model& model0, const Dataset& train,
                                const Dataset& cv) {
    cfg.validate(train);
    if (model0.input_dim() != train.d || model0.output_dim() != train.target_dim)
        throw ConfigError("sim: model dims do not match dataset");

    const auto kind = cfg.strategy.kind;
    RunResult res;
    res.model_kind = model0.kind;
    res.layer_dims = model0.layer_dims;
    detail::Tracer tracer{&res.trace};

    Model global = model0;
    BmufState bmuf = BmufState::init(global.params);
    std::vector<ParameterVector> easgd_locals;
    if (kind == StrategyKind::easgd_sync || kind == StrategyKind::easgd_async)
        easgd_locals.assign(cfg.n_workers(), global.params);
    ParameterServer server(global.params);

    LrSchedulerState sched{LrPhase::fixed, cfg.strategy.lr, std::nullopt};
    double t = 0.0;

    double train0 = detail::safe_loss(global, train);
    double cv0 = detail::safe_loss(global, cv);
    res.learning_curve.push_back({0, train0, cv0, sched.current_lr, t});
    if (cfg.use_lr_schedule) sched = lr_schedule_update(sched, cv0).state;
    const double divergence_limit = train0 > 0.0 ? 1e3 * train0
                                                 : std::numeric_limits<double>::infinity();

    auto* trajectory = cfg.record_trajectory ? &res.global_trajectory : nullptr;
    for (int epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
        double lr_now = sched.current_lr;
        ShardedDataset shards = shard(train, cfg.n_workers(), cfg.strategy.sync_period,
                                      cfg.minibatch, cfg.seed, cfg.reshuffle ? epoch : 0);
        try {
            if (kind == StrategyKind::asgd || kind == StrategyKind::easgd_async) {
                detail::run_async_epoch(cfg, train, shards, lr_now, global,
                                        easgd_locals.empty() ? nullptr : &easgd_locals, server,
                                        t, tracer, trajectory);
            } else {
                detail::run_sync_epoch(cfg, train, shards, lr_now, global, &bmuf,
                                       easgd_locals.empty() ? nullptr : &easgd_locals, t,
                                       tracer, trajectory);
            }
        } catch (const NumericError& e) {
            res.diverged = true;
            res.divergence_reason = e.what();
        }
        double train_loss = detail::safe_loss(global, train);
        double cv_loss = detail::safe_loss(global, cv);
        res.learning_curve.push_back({epoch, train_loss, cv_loss, lr_now, t});
        res.epochs_run = epoch;
        if (!res.diverged && (!std::isfinite(train_loss) || !std::isfinite(cv_loss) ||
                              train_loss > divergence_limit)) {
            res.diverged = true;
            res.divergence_reason = std::isfinite(train_loss) && std::isfinite(cv_loss)
                                        ? "train loss exceeded 1000x its initial value"
                                        : "loss became non-finite";
        }
        if (res.diverged) break;
        if (cfg.use_lr_schedule) {
            LrDecision dec = lr_schedule_update(sched, cv_loss);
            sched = dec.state;
            if (dec.stop) {
                res.stopped_by_schedule = true;
                break;
            }
        }
    }
    res.final_global = kind == StrategyKind::asgd || kind == StrategyKind::easgd_async
                           ? server.global()
                           : global.params;
    res.simulated_wall_clock = t;
    // canonical (time, worker, seq) order; seq keeps the processing order,
    // which differs only where an epoch restart shares a timestamp with the
    // previous epoch's tail
    std::sort(res.trace.begin(), res.trace.end(), [](const SimEvent& a, const SimEvent& b) {
        return std::tie(a.time, a.worker, a.seq) < std::tie(b.time, b.worker, b.seq);
    });
    return res;
}

// Plain single-worker minibatch SGD with the same epoch skeleton (shuffle,
// evaluation, schedule). This is both the warm-start producer and the
// independent reference the degenerate-cluster reductions are checked
// against.
struct SequentialConfig {
    double lr = 0.1;
    int minibatch = 1;
    int epochs_max = 1;
    uint64_t seed = 42;
    bool reshuffle = true;
    bool use_lr_schedule = true;
    double compute_time_per_minibatch = 1.0;
    bool warmup_streams = false;  // draw shuffles from the warm-start stream space
};

inline RunResult run_sequential_sgd(const SequentialConfig& cfg, const Model& model0,
                                    const Dataset& train, const Dataset& cv) {
    if (cfg.epochs_max < 1) throw ConfigError("sequential: epochs_max must be >= 1");
    if (cfg.minibatch < 1) throw ConfigError("sequential: minibatch must be >= 1");
    constexpr int64_t kWarmupTag =
        static_cast<int64_t>(streams::warmup_shuffle_base - streams::shuffle_base);

    RunResult res;
    res.model_kind = model0.kind;
    res.layer_dims = model0.layer_dims;
    Model m = model0;
    LrSchedulerState sched{LrPhase::fixed, cfg.lr, std::nullopt};
    double t = 0.0;

    double train0 = detail::safe_loss(m, train);
    double cv0 = detail::safe_loss(m, cv);
    res.learning_curve.push_back({0, train0, cv0, sched.current_lr, t});
    if (cfg.use_lr_schedule) sched = lr_schedule_update(sched, cv0).state;
    const double divergence_limit = train0 > 0.0 ? 1e3 * train0
                                                 : std::numeric_limits<double>::infinity();

    for (int epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
        double lr_now = sched.current_lr;
        int64_t epoch_tag = cfg.reshuffle ? epoch : 0;
        if (cfg.warmup_streams) epoch_tag = kWarmupTag + epoch;
        ShardedDataset shards = shard(train, 1, 1, cfg.minibatch, cfg.seed, epoch_tag);
        MinibatchStream stream(train, shards.worker_minibatches(0));
        try {
            while (!stream.done()) {
                Gradient g = backward(m, stream.next());
                m.params = sgd_step(m.params, g, lr_now);
                t += cfg.compute_time_per_minibatch;
            }
        } catch (const NumericError& e) {
            res.diverged = true;
            res.divergence_reason = e.what();
        }
        double train_loss = detail::safe_loss(m, train);
        double cv_loss = detail::safe_loss(m, cv);
        res.learning_curve.push_back({epoch, train_loss, cv_loss, lr_now, t});
        res.epochs_run = epoch;
        if (!res.diverged && (!std::isfinite(train_loss) || !std::isfinite(cv_loss) ||
                              train_loss > divergence_limit)) {
            res.diverged = true;
            res.divergence_reason = std::isfinite(train_loss) && std::isfinite(cv_loss)
                                        ? "train loss exceeded 1000x its initial value"
                                        : "loss became non-finite";
        }
        if (res.diverged) break;
        if (cfg.use_lr_schedule) {
            LrDecision dec = lr_schedule_update(sched, cv_loss);
            sched = dec.state;
            if (dec.stop) {
                res.stopped_by_schedule = true;
                break;
            }
        }
    }
    res.final_global = m.params;
    res.simulated_wall_clock = t;
    return res;
}

// Shared warm start (one epoch of single-worker SGD by default): every
// parallel run of an experiment starts from this same model.
inline Model warm_start(const Model& init, const Dataset& train, int epochs, double lr,
                        int minibatch, uint64_t seed) {
    if (epochs == 0) return init;
    SequentialConfig cfg;
    cfg.lr = lr;
    cfg.minibatch = minibatch;
    cfg.epochs_max = epochs;
    cfg.seed = seed;
    cfg.reshuffle = true;
    cfg.use_lr_schedule = false;
    cfg.warmup_streams = true;
    RunResult r = run_sequential_sgd(cfg, init, train, train);
    if (r.diverged) throw NumericError("warm start diverged: " + r.divergence_reason);
    return Model{init.kind, init.layer_dims, r.final_global};
}

// Simulated-seconds-per-epoch ratio against a single-worker reference run.
inline double measure_speedup(const RunResult& result, const RunResult& reference) {
    if (result.epochs_run < 1 || reference.epochs_run < 1)
        throw std::invalid_argument("measure_speedup: runs must complete at least one epoch");
    double par = result.simulated_wall_clock / result.epochs_run;
    double ref = reference.simulated_wall_clock / reference.epochs_run;
    if (!(par > 0.0)) throw std::invalid_argument("measure_speedup: zero parallel time");
    return ref / par;
}

inline void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve) {
    out << "epoch,train_loss,cv_loss,lr,sim_time\n";
    for (const auto& p : curve)
        out << p.epoch << ',' << format_double(p.train_loss) << ',' << format_double(p.cv_loss)
            << ',' << format_double(p.lr) << ',' << format_double(p.sim_time) << '\n';
}

inline void write_trace_tsv(std::ostream& out, const std::vector<SimEvent>& trace) {
    out << "time\tworker\tkind\tseq\tstaleness\n";
    for (const auto& e : trace) {
        out << format_double(e.time) << '\t';
        if (e.worker == kServerWorker)
            out << "server";
        else
            out << e.worker;
        out << '\t' << to_string(e.kind) << '\t' << e.seq << '\t';
        if (e.staleness_k) out << *e.staleness_k;
        out << '\n';
    }
}

}  // namespace psyn
