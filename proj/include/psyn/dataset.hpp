#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "psyn/data.hpp"
#include "psyn/model.hpp"
#include "psyn/rng.hpp"

namespace psyn {

namespace detail {

// Orthonormalize the columns of a row-major n x d matrix with two passes of
// modified Gram-Schmidt.
inline void orthonormalize_columns(std::vector<double>& a, int64_t n, int64_t d) {
    for (int pass = 0; pass < 2; ++pass) {
        for (int64_t j = 0; j < d; ++j) {
            for (int64_t k = 0; k < j; ++k) {
                double proj = 0.0;
                for (int64_t i = 0; i < n; ++i) proj += a[i * d + k] * a[i * d + j];
                for (int64_t i = 0; i < n; ++i) a[i * d + j] -= proj * a[i * d + k];
            }
            double sq = 0.0;
            for (int64_t i = 0; i < n; ++i) sq += a[i * d + j] * a[i * d + j];
            double inv = 1.0 / std::sqrt(sq);
            for (int64_t i = 0; i < n; ++i) a[i * d + j] *= inv;
        }
    }
}

// n x d matrix with prescribed singular-value ratio: X = U diag(sigma) V^T,
// sigma log-spaced from sqrt(n) down to sqrt(n)/cond.
inline std::vector<double> conditioned_features(int64_t n, int64_t d, double cond, Rng& rng) {
    std::vector<double> u(n * d), v(d * d);
    for (auto& x : u) x = rng.next_normal();
    for (auto& x : v) x = rng.next_normal();
    orthonormalize_columns(u, n, d);
    orthonormalize_columns(v, d, d);
    std::vector<double> sigma(d);
    double top = std::sqrt(static_cast<double>(n));
    for (int64_t j = 0; j < d; ++j)
        sigma[j] = (d == 1) ? top : top * std::pow(cond, -static_cast<double>(j) / (d - 1));
    std::vector<double> x(n * d, 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < d; ++k) acc += u[i * d + k] * sigma[k] * v[j * d + k];
            x[i * d + j] = acc;
        }
    return x;
}

inline std::vector<uint32_t> shuffled_indices(int64_t n, Rng& rng) {
    std::vector<uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0u);
    for (int64_t i = n - 1; i > 0; --i) {
        uint64_t j = rng.next_below(static_cast<uint64_t>(i) + 1);
        std::swap(idx[i], idx[j]);
    }
    return idx;
}

}  // namespace detail

// Desk-scale stand-in corpus. linreg: y = X w* + b* + noise; logreg: Bernoulli
// labels from a logistic teacher with label flips at rate `noise`; mlp-teacher:
// outputs of a fixed random ReLU net plus noise.
inline Dataset make_synthetic(TaskKind task, int64_t n, int64_t d, double noise, double cond,
                              uint64_t seed) {
    if (n < 1 || d < 1) throw std::invalid_argument("make_synthetic: n and d must be >= 1");
    if (n < d)
        throw std::invalid_argument(
            "make_synthetic: need n >= d for a full-rank conditioned feature matrix");
    if (noise < 0.0) throw std::invalid_argument("make_synthetic: noise must be >= 0");
    if (cond < 1.0) throw std::invalid_argument("make_synthetic: cond must be >= 1");

    Dataset ds;
    ds.n = n;
    ds.d = d;
    ds.target_dim = 1;
    ds.generator_spec = {task, n, d, noise, cond, seed, false};

    Rng feat_rng(seed, streams::dataset_features);
    ds.features = detail::conditioned_features(n, d, cond, feat_rng);

    Rng w_rng(seed, streams::dataset_weights);
    Rng noise_rng(seed, streams::dataset_noise);

    if (task == TaskKind::linreg || task == TaskKind::logreg) {
        std::vector<double> w(d);
        for (auto& x : w) x = w_rng.next_normal();
        double b = w_rng.next_normal();
        ds.targets.resize(n);
        if (task == TaskKind::linreg) {
            for (int64_t i = 0; i < n; ++i) {
                double z = b;
                for (int64_t j = 0; j < d; ++j) z += ds.features[i * d + j] * w[j];
                ds.targets[i] = z + (noise > 0.0 ? noise * noise_rng.next_normal() : 0.0);
            }
        } else {
            Rng label_rng(seed, streams::dataset_labels);
            for (int64_t i = 0; i < n; ++i) {
                double z = b;
                for (int64_t j = 0; j < d; ++j) z += ds.features[i * d + j] * w[j];
                double p = 1.0 / (1.0 + std::exp(-z));
                double y = label_rng.next_double() < p ? 1.0 : 0.0;
                if (noise > 0.0 && label_rng.next_double() < noise) y = 1.0 - y;
                ds.targets[i] = y;
            }
        }
    } else {
        Model teacher = make_model(ModelKind::mlp, {static_cast<int>(d), 8, 1});
        Rng teacher_rng(seed, streams::dataset_teacher);
        init_glorot(teacher, teacher_rng);
        ds.targets.resize(n);
        detail::ForwardScratch scratch;
        for (int64_t i = 0; i < n; ++i) {
            detail::forward_sample(teacher, ds.row(i), scratch);
            ds.targets[i] =
                scratch.acts.back()[0] + (noise > 0.0 ? noise * noise_rng.next_normal() : 0.0);
        }
    }
    return ds;
}

namespace detail {

inline Dataset take_rows(const Dataset& src, std::span<const uint32_t> rows) {
    Dataset out;
    out.n = static_cast<int64_t>(rows.size());
    out.d = src.d;
    out.target_dim = src.target_dim;
    out.generator_spec = src.generator_spec;
    out.generator_spec.derived = true;
    out.features.reserve(rows.size() * src.d);
    out.targets.reserve(rows.size() * src.target_dim);
    for (uint32_t r : rows) {
        auto f = src.row(r);
        auto t = src.target(r);
        out.features.insert(out.features.end(), f.begin(), f.end());
        out.targets.insert(out.targets.end(), t.begin(), t.end());
    }
    return out;
}

}  // namespace detail

// Deterministic disjoint train/CV partition.
inline std::pair<Dataset, Dataset> cv_split(const Dataset& ds, double fraction, uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 0.5)
        throw std::invalid_argument("cv_split: fraction must be in (0, 0.5]");
    int64_t cv_n = std::llround(static_cast<double>(ds.n) * fraction);
    if (cv_n < 1) throw std::invalid_argument("cv_split: fraction leaves the CV set empty");
    if (cv_n >= ds.n) throw std::invalid_argument("cv_split: fraction leaves no training data");
    Rng rng(seed, streams::cv_split);
    auto idx = detail::shuffled_indices(ds.n, rng);
    std::span<const uint32_t> cv_rows(idx.data(), static_cast<size_t>(cv_n));
    std::span<const uint32_t> train_rows(idx.data() + cv_n, static_cast<size_t>(ds.n - cv_n));
    return {detail::take_rows(ds, train_rows), detail::take_rows(ds, cv_rows)};
}

// Shuffle, then deal into blocks of n_workers * sync_period * minibatch
// samples; each block splits contiguously into one run per worker. The final
// short block is kept (workers just get fewer minibatches) and flagged.
// The permutation depends only on (seed, epoch).
inline ShardedDataset shard(const Dataset& ds, int n_workers, int sync_period, int minibatch,
                            uint64_t seed, int64_t epoch = 0) {
    if (n_workers < 1 || sync_period < 1 || minibatch < 1)
        throw std::invalid_argument("shard: n_workers, sync_period, minibatch must be >= 1");
    if (ds.n < int64_t(n_workers) * minibatch)
        throw std::invalid_argument("shard: minibatch larger than per-worker share");

    Rng rng(seed, streams::shuffle_base + static_cast<uint64_t>(epoch));
    auto perm = detail::shuffled_indices(ds.n, rng);

    ShardedDataset out;
    out.n_workers = n_workers;
    out.sync_period = sync_period;
    out.minibatch = minibatch;

    const int64_t block_size = int64_t(n_workers) * sync_period * minibatch;
    const int64_t split_size = int64_t(sync_period) * minibatch;
    int64_t pos = 0;
    while (pos + block_size <= ds.n) {
        ShardedDataset::Block blk;
        for (int w = 0; w < n_workers; ++w) {
            blk.splits.emplace_back(perm.begin() + pos + w * split_size,
                                    perm.begin() + pos + (w + 1) * split_size);
        }
        out.blocks.push_back(std::move(blk));
        pos += block_size;
    }
    int64_t rem = ds.n - pos;
    if (rem > 0) {
        out.short_final_block = true;
        ShardedDataset::Block blk;
        int64_t base = rem / n_workers, extra = rem % n_workers;
        int64_t off = pos;
        for (int w = 0; w < n_workers; ++w) {
            int64_t len = base + (w < extra ? 1 : 0);
            blk.splits.emplace_back(perm.begin() + off, perm.begin() + off + len);
            off += len;
        }
        out.blocks.push_back(std::move(blk));
    }
    return out;
}

}  // namespace psyn
