#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <map>
#include <tuple>

#include "psyn/sim.hpp"

using namespace psyn;

namespace {

struct Bench {
    Dataset train;
    Dataset cv;
    Model model0;
};

// Small warm-started linreg problem shared by the sim tests.
Bench make_bench(int64_t n = 160, int64_t d = 4, uint64_t seed = 42, double noise = 0.1,
                 int warm_mb = 4) {
    Dataset full = make_synthetic(TaskKind::linreg, n, d, noise, 2.0, seed);
    auto [train, cv] = cv_split(full, 0.2, seed);
    Model init = make_model(ModelKind::linear_regression, {static_cast<int>(d), 1});
    Model model0 = warm_start(init, train, 1, 0.1, warm_mb, seed);
    return {std::move(train), std::move(cv), std::move(model0)};
}

SimConfig base_config(StrategyKind kind, int n_workers, int tau, int mb,
                      uint64_t seed = 42) {
    SimConfig cfg;
    cfg.strategy.kind = kind;
    cfg.strategy.n_workers = n_workers;
    cfg.strategy.sync_period = tau;
    cfg.strategy.lr = 0.1;
    cfg.minibatch = mb;
    cfg.compute_time_per_minibatch.assign(n_workers, 1.0);
    cfg.exchange_cost = 0.0;
    cfg.epochs_max = 3;
    cfg.seed = seed;
    return cfg;
}

bool bitwise_equal(const ParameterVector& a, const ParameterVector& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("barrier_complete is max arrival plus cost") {
    std::vector<double> arrivals{3.0, 5.0, 4.0, 4.5};
    REQUIRE(barrier_complete(arrivals, 0.5) == 5.5);
    std::vector<double> one{2.0};
    REQUIRE(barrier_complete(one, 0.5) == 2.5);
    REQUIRE_THROWS_AS(barrier_complete({}, 0.0), std::invalid_argument);
}

TEST_CASE("identical configs replay bitwise-identical runs") {
    auto bench = make_bench();
    for (auto kind : {StrategyKind::bsp, StrategyKind::bmuf, StrategyKind::asgd,
                      StrategyKind::easgd_sync, StrategyKind::easgd_async}) {
        SimConfig cfg = base_config(kind, 4, 2, 4);
        cfg.compute_time_per_minibatch = {1.0, 2.0, 1.5, 3.0};  // heterogeneous on purpose
        cfg.exchange_cost = 0.25;
        auto a = run_simulation(cfg, bench.model0, bench.train, bench.cv);
        auto b = run_simulation(cfg, bench.model0, bench.train, bench.cv);
        REQUIRE(bitwise_equal(a.final_global, b.final_global));
        REQUIRE(a.trace.size() == b.trace.size());
        for (size_t i = 0; i < a.trace.size(); ++i) {
            REQUIRE(std::memcmp(&a.trace[i].time, &b.trace[i].time, sizeof(double)) == 0);
            REQUIRE(a.trace[i].worker == b.trace[i].worker);
            REQUIRE(a.trace[i].kind == b.trace[i].kind);
            REQUIRE(a.trace[i].staleness_k == b.trace[i].staleness_k);
        }
        REQUIRE(a.learning_curve.size() == b.learning_curve.size());
        for (size_t i = 0; i < a.learning_curve.size(); ++i)
            REQUIRE(a.learning_curve[i].cv_loss == b.learning_curve[i].cv_loss);
    }
}

TEST_CASE("trace is strictly increasing under (time, worker, seq)") {
    auto bench = make_bench();
    for (auto kind : {StrategyKind::bsp, StrategyKind::asgd, StrategyKind::easgd_async}) {
        SimConfig cfg = base_config(kind, 3, 2, 4);
        cfg.compute_time_per_minibatch = {1.0, 1.0, 2.0};
        auto res = run_simulation(cfg, bench.model0, bench.train, bench.cv);
        REQUIRE(res.trace.size() > 1);
        for (size_t i = 1; i < res.trace.size(); ++i) {
            const auto& prev = res.trace[i - 1];
            const auto& cur = res.trace[i];
            bool increasing =
                std::tie(prev.time, prev.worker, prev.seq) <
                std::tie(cur.time, cur.worker, cur.seq);
            REQUIRE(increasing);
        }
    }
}

TEST_CASE("degenerate cluster reduces to sequential SGD bitwise") {
    auto bench = make_bench();
    SequentialConfig seq;
    seq.lr = 0.1;
    seq.minibatch = 4;
    seq.epochs_max = 3;
    seq.seed = 42;
    auto ref = run_sequential_sgd(seq, bench.model0, bench.train, bench.cv);

    for (auto kind : {StrategyKind::bsp, StrategyKind::asgd, StrategyKind::bmuf}) {
        SimConfig cfg = base_config(kind, 1, 1, 4);
        auto res = run_simulation(cfg, bench.model0, bench.train, bench.cv);
        INFO("strategy " << to_string(kind));
        REQUIRE(bitwise_equal(res.final_global, ref.final_global));
        REQUIRE(res.learning_curve.size() == ref.learning_curve.size());
        for (size_t i = 0; i < res.learning_curve.size(); ++i) {
            REQUIRE(res.learning_curve[i].train_loss == ref.learning_curve[i].train_loss);
            REQUIRE(res.learning_curve[i].cv_loss == ref.learning_curve[i].cv_loss);
        }
    }
}

TEST_CASE("easgd local phase between exchanges is plain sequential SGD") {
    // bitwise: the worker loop with exchanges out of the picture is exactly
    // chained backward + sgd_step
    auto bench = make_bench();
    auto sh = shard(bench.train, 1, 1, 4, 42, 1);
    MinibatchStream stream(bench.train, sh.worker_minibatches(0));
    Model local = bench.model0;
    local_sgd_round(local, stream, static_cast<int>(stream.remaining()), 0.1);

    Model manual = bench.model0;
    MinibatchStream replay(bench.train, sh.worker_minibatches(0));
    while (!replay.done())
        manual.params = sgd_step(manual.params, backward(manual, replay.next()), 0.1);
    REQUIRE(bitwise_equal(local.params, manual.params));

    // end to end: one worker, tau covering the epoch, alpha = 1 swaps local
    // and global at the lone exchange, so the final global is the sequential
    // trajectory (up to the one rounded elastic move)
    SimConfig cfg = base_config(StrategyKind::easgd_async, 1, 1 << 20, 4);
    cfg.strategy.elastic_alpha = 1.0;
    cfg.epochs_max = 1;
    auto res = run_simulation(cfg, bench.model0, bench.train, bench.cv);

    SequentialConfig seq;
    seq.lr = 0.1;
    seq.minibatch = 4;
    seq.epochs_max = 1;
    seq.seed = 42;
    auto ref = run_sequential_sgd(seq, bench.model0, bench.train, bench.cv);
    for (size_t j = 0; j < ref.final_global.size(); ++j)
        REQUIRE(res.final_global[j] ==
                Catch::Approx(ref.final_global[j]).epsilon(1e-12).margin(1e-15));
}

TEST_CASE("bsp with equal workers and free exchange is linear speedup") {
    auto bench = make_bench(160, 4);
    // train has 128 rows after the cv split; 32 minibatches of 4 per epoch
    SimConfig cfg = base_config(StrategyKind::bsp, 4, 2, 4);
    cfg.epochs_max = 2;
    cfg.use_lr_schedule = false;
    auto res = run_simulation(cfg, bench.model0, bench.train, bench.cv);
    double t_s = 32.0;  // single-worker minibatches per epoch at unit cost
    REQUIRE(res.simulated_wall_clock / res.epochs_run == Catch::Approx(t_s / 4).epsilon(1e-12));

    SimConfig ref_cfg = base_config(StrategyKind::bsp, 1, 1, 4);
    ref_cfg.epochs_max = 2;
    ref_cfg.use_lr_schedule = false;
    auto ref = run_simulation(ref_cfg, bench.model0, bench.train, bench.cv);
    REQUIRE(measure_speedup(res, ref) == Catch::Approx(4.0).epsilon(1e-12));
    REQUIRE(measure_speedup(ref, ref) == 1.0);
}

TEST_CASE("stragglers dominate the synchronous barrier") {
    auto bench = make_bench(160, 4);
    SimConfig cfg = base_config(StrategyKind::bsp, 4, 2, 4);
    cfg.compute_time_per_minibatch = {1.0, 1.0, 1.0, 10.0};
    cfg.exchange_cost = 0.5;
    cfg.epochs_max = 1;
    cfg.use_lr_schedule = false;
    auto res = run_simulation(cfg, bench.model0, bench.train, bench.cv);
    // 8 minibatches per worker per epoch in rounds of 2: 4 barriers, each
    // gated by the straggler at 2 * 10 plus the 0.5 exchange
    REQUIRE(res.simulated_wall_clock == Catch::Approx(4 * (2 * 10 + 0.5)).epsilon(1e-12));
}

TEST_CASE("asgd staleness matches the hand-built interleaving") {
    // Two workers, unit and triple compute cost, tau 1, free exchange. The
    // fast worker pushes at t = 1, 2, 3, ...; the slow one at t = 3, 6, ...;
    // ties resolve fast-worker-first, and a worker re-pulls at its own push
    // time. Hand-run of the first events:
    //   w0 pushes at 1, 2, 3 with k = 0 (no foreign update since its pull)
    //   w1 pushes at 3 having pulled at 0: w0's pushes at 1, 2, 3 give k = 3
    //   w0's push at 4 sees w1's t=3 update inside (3, 4): k = 1
    auto bench = make_bench(168, 3, 9);  // does not matter which problem
    SimConfig cfg = base_config(StrategyKind::asgd, 2, 1, 4, 9);
    cfg.compute_time_per_minibatch = {1.0, 3.0};
    cfg.epochs_max = 1;
    cfg.use_lr_schedule = false;
    auto res = run_simulation(cfg, bench.model0, bench.train, bench.cv);

    struct Push {
        double time;
        int worker;
        int64_t k;
    };
    std::vector<Push> pushes;
    for (const auto& e : res.trace)
        if (e.kind == EventKind::push) pushes.push_back({e.time, e.worker, *e.staleness_k});
    REQUIRE(pushes.size() >= 6);
    REQUIRE(pushes[0].time == 1.0);
    REQUIRE(pushes[0].worker == 0);
    REQUIRE(pushes[0].k == 0);
    REQUIRE(pushes[1].time == 2.0);
    REQUIRE(pushes[1].k == 0);
    REQUIRE(pushes[2].time == 3.0);
    REQUIRE(pushes[2].worker == 0);
    REQUIRE(pushes[2].k == 0);
    REQUIRE(pushes[3].time == 3.0);
    REQUIRE(pushes[3].worker == 1);
    REQUIRE(pushes[3].k == 3);
    REQUIRE(pushes[4].time == 4.0);
    REQUIRE(pushes[4].worker == 0);
    REQUIRE(pushes[4].k == 1);
    REQUIRE(pushes[5].time == 5.0);
    REQUIRE(pushes[5].worker == 0);
    REQUIRE(pushes[5].k == 0);
}

TEST_CASE("parameter server versioning and protocol checks") {
    ParameterVector w0{1.0, 1.0};
    ParameterServer server(w0);

    SECTION("single worker alternating pull/push never sees staleness") {
        for (int i = 0; i < 5; ++i) {
            int64_t v = server.process_pull();
            REQUIRE(server.process_push(Gradient{{0.1, -0.1}, 1}, v, 0.1) == 0);
        }
        REQUIRE(server.version() == 5);
    }

    SECTION("interleaved pulls create delayed gradients") {
        int64_t va = server.process_pull();  // worker A
        int64_t vb = server.process_pull();  // worker B
        Gradient ga{{1.0, 0.0}, 1}, gb{{0.0, 1.0}, 1};
        REQUIRE(server.process_push(gb, vb, 0.5) == 0);
        REQUIRE(server.process_push(ga, va, 0.5) == 1);  // one foreign update in between
        // hand-unrolled: w2 = (w0 - eta gb) - eta ga
        ParameterVector expect{1.0 - 0.5 * 1.0, 1.0 - 0.5 * 1.0};
        REQUIRE(server.global() == expect);
    }

    SECTION("stale dimensions are a protocol error") {
        REQUIRE_THROWS_AS(server.process_push(Gradient{{1.0}, 1}, 0, 0.1), ProtocolError);
        REQUIRE_THROWS_AS(server.process_exchange(ParameterVector{1.0}, 0.5), ProtocolError);
    }
}

TEST_CASE("no server events or staleness appear in trace roles they cannot have") {
    auto bench = make_bench();
    for (auto kind : {StrategyKind::bsp, StrategyKind::bmuf, StrategyKind::easgd_sync}) {
        SimConfig cfg = base_config(kind, 3, 2, 4);
        if (kind == StrategyKind::easgd_sync) cfg.strategy.elastic_lambda = 0.5;
        auto res = run_simulation(cfg, bench.model0, bench.train, bench.cv);
        for (const auto& e : res.trace) {
            REQUIRE_FALSE(e.staleness_k.has_value());
            REQUIRE((e.kind != EventKind::push && e.kind != EventKind::pull));
        }
    }
    SimConfig cfg = base_config(StrategyKind::easgd_async, 3, 2, 4);
    auto res = run_simulation(cfg, bench.model0, bench.train, bench.cv);
    for (const auto& e : res.trace) REQUIRE_FALSE(e.staleness_k.has_value());
}

TEST_CASE("divergent runs terminate with a divergence result") {
    auto bench = make_bench();
    SimConfig cfg = base_config(StrategyKind::bsp, 2, 1, 4);
    cfg.strategy.lr = 1e6;  // wildly unstable
    cfg.epochs_max = 20;
    auto res = run_simulation(cfg, bench.model0, bench.train, bench.cv);
    REQUIRE(res.diverged);
    REQUIRE_FALSE(res.divergence_reason.empty());
    REQUIRE(res.epochs_run < 20);  // stopped early, not at epochs_max
}

TEST_CASE("learning curve is nondecreasing in epoch and simulated time") {
    auto bench = make_bench();
    SimConfig cfg = base_config(StrategyKind::bmuf, 4, 2, 4);
    cfg.exchange_cost = 0.1;
    cfg.epochs_max = 5;
    auto res = run_simulation(cfg, bench.model0, bench.train, bench.cv);
    for (size_t i = 1; i < res.learning_curve.size(); ++i) {
        REQUIRE(res.learning_curve[i].epoch == res.learning_curve[i - 1].epoch + 1);
        REQUIRE(res.learning_curve[i].sim_time >= res.learning_curve[i - 1].sim_time);
    }
}

TEST_CASE("measure_speedup rejects degenerate inputs") {
    RunResult empty;
    REQUIRE_THROWS_AS(measure_speedup(empty, empty), std::invalid_argument);
}

TEST_CASE("exchange cost tuned to a 0.1231 ratio lands at the 2.68X point") {
    // communication/computation ratio e/(N tau c) = 0.1231 at N=4 makes the
    // measured speedup 1/(0.25 + 0.1231) = 2.68
    auto bench = make_bench(360, 4);  // train = 288 samples, 72 minibatches
    const double c = 1.0;
    const int tau = 2;
    const double ratio = 0.1231;
    SimConfig cfg = base_config(StrategyKind::bsp, 4, tau, 4);
    cfg.exchange_cost = ratio * 4 * tau * c;
    cfg.epochs_max = 2;
    cfg.use_lr_schedule = false;
    auto res = run_simulation(cfg, bench.model0, bench.train, bench.cv);

    SimConfig ref_cfg = base_config(StrategyKind::bsp, 1, 1, 4);
    ref_cfg.epochs_max = 2;
    ref_cfg.use_lr_schedule = false;
    auto ref = run_simulation(ref_cfg, bench.model0, bench.train, bench.cv);
    double measured = measure_speedup(res, ref);
    REQUIRE(measured == Catch::Approx(2.68).epsilon(0.02));
    REQUIRE(measured == Catch::Approx(1.0 / (0.25 + ratio)).epsilon(1e-12));
}
