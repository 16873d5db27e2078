#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "psyn/common.hpp"

namespace psyn {

enum class TaskKind { linreg, logreg, mlp_teacher };

inline const char* to_string(TaskKind k) {
    switch (k) {
        case TaskKind::linreg: return "linreg";
        case TaskKind::logreg: return "logreg";
        case TaskKind::mlp_teacher: return "mlp-teacher";
    }
    return "?";
}

inline TaskKind task_from_string(const std::string& s) {
    if (s == "linreg") return TaskKind::linreg;
    if (s == "logreg") return TaskKind::logreg;
    if (s == "mlp-teacher") return TaskKind::mlp_teacher;
    throw ConfigError("unknown task kind: '" + s + "'");
}

struct GeneratorSpec {
    TaskKind task = TaskKind::linreg;
    int64_t n = 0;
    int64_t d = 0;
    double noise = 0.0;
    double cond = 1.0;
    uint64_t seed = 0;
    bool derived = false;  // split/cache outputs; make_synthetic cannot rebuild these
};

// Row-major feature matrix plus targets. Targets are reals (regression) or
// 0/1 class labels stored as doubles.
struct Dataset {
    int64_t n = 0;
    int64_t d = 0;
    int64_t target_dim = 1;
    std::vector<double> features;  // n * d
    std::vector<double> targets;   // n * target_dim
    GeneratorSpec generator_spec;

    std::span<const double> row(int64_t i) const {
        return {features.data() + i * d, static_cast<size_t>(d)};
    }
    std::span<const double> target(int64_t i) const {
        return {targets.data() + i * target_dim, static_cast<size_t>(target_dim)};
    }
};

// A minibatch is a list of sample indices into one dataset.
struct MinibatchView {
    const Dataset* data = nullptr;
    std::span<const uint32_t> indices;

    size_t size() const { return indices.size(); }
    bool empty() const { return indices.empty(); }
};

// Block/split partition of one epoch: M ordered blocks, each split into
// n_workers disjoint contiguous index runs.
struct ShardedDataset {
    int n_workers = 1;
    int sync_period = 1;
    int minibatch = 1;
    bool short_final_block = false;

    struct Block {
        std::vector<std::vector<uint32_t>> splits;  // one index run per worker
    };
    std::vector<Block> blocks;

    size_t n_blocks() const { return blocks.size(); }

    // Minibatch index spans for one worker within one block; the last span
    // may be shorter than `minibatch`.
    std::vector<std::span<const uint32_t>> block_minibatches(size_t block, int worker) const {
        const auto& split = blocks[block].splits[worker];
        std::vector<std::span<const uint32_t>> out;
        for (size_t off = 0; off < split.size(); off += minibatch) {
            size_t len = std::min<size_t>(minibatch, split.size() - off);
            out.emplace_back(split.data() + off, len);
        }
        return out;
    }

    // All of one worker's minibatches for the epoch, in block order.
    std::vector<std::span<const uint32_t>> worker_minibatches(int worker) const {
        std::vector<std::span<const uint32_t>> out;
        for (size_t b = 0; b < blocks.size(); ++b) {
            auto mbs = block_minibatches(b, worker);
            out.insert(out.end(), mbs.begin(), mbs.end());
        }
        return out;
    }
};

// Forward-only iterator over a worker's minibatch sequence.
class MinibatchStream {
public:
    MinibatchStream(const Dataset& data, std::vector<std::span<const uint32_t>> batches)
        : data_(&data), batches_(std::move(batches)) {}

    bool done() const { return pos_ >= batches_.size(); }
    size_t remaining() const { return batches_.size() - pos_; }

    MinibatchView next() {
        if (done()) throw std::out_of_range("MinibatchStream exhausted");
        return MinibatchView{data_, batches_[pos_++]};
    }

private:
    const Dataset* data_;
    std::vector<std::span<const uint32_t>> batches_;
    size_t pos_ = 0;
};

}  // namespace psyn
