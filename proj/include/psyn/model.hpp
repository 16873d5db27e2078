#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "psyn/data.hpp"
#include "psyn/rng.hpp"
#include "psyn/vec.hpp"

namespace psyn {

enum class ModelKind { linear_regression, logistic_regression, mlp };

inline const char* to_string(ModelKind k) {
    switch (k) {
        case ModelKind::linear_regression: return "linear-regression";
        case ModelKind::logistic_regression: return "logistic-regression";
        case ModelKind::mlp: return "mlp";
    }
    return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "linear-regression") return ModelKind::linear_regression;
    if (s == "logistic-regression") return ModelKind::logistic_regression;
    if (s == "mlp") return ModelKind::mlp;
    throw ConfigError("unknown model kind: '" + s + "'");
}

struct Gradient {
    std::vector<double> values;
    int64_t sample_count = 0;
};

// layer_dims = {input, hidden..., output}. Parameters are the row-major
// weight matrix then bias of each affine layer, concatenated. Hidden
// activations are ReLU; outputs are linear. Losses are means over the batch:
// half squared error for linear/mlp, binary cross-entropy for logistic.
struct Model {
    ModelKind kind = ModelKind::linear_regression;
    std::vector<int> layer_dims;
    ParameterVector params;

    int64_t input_dim() const { return layer_dims.front(); }
    int64_t output_dim() const { return layer_dims.back(); }
    size_t n_layers() const { return layer_dims.size() - 1; }
};

inline int64_t param_count(ModelKind kind, const std::vector<int>& layer_dims) {
    if (layer_dims.size() < 2)
        throw std::invalid_argument("layer_dims needs at least input and output sizes");
    for (int d : layer_dims)
        if (d < 1) throw std::invalid_argument("layer_dims entries must be positive");
    if (kind != ModelKind::mlp && layer_dims.size() != 2)
        throw std::invalid_argument("non-mlp models take exactly {input, output} dims");
    if (kind == ModelKind::logistic_regression && layer_dims.back() != 1)
        throw std::invalid_argument("logistic regression is binary: output dim must be 1");
    int64_t count = 0;
    for (size_t l = 0; l + 1 < layer_dims.size(); ++l)
        count += int64_t(layer_dims[l]) * layer_dims[l + 1] + layer_dims[l + 1];
    return count;
}

inline Model make_model(ModelKind kind, std::vector<int> layer_dims) {
    Model m;
    m.kind = kind;
    m.params.assign(param_count(kind, layer_dims), 0.0);
    m.layer_dims = std::move(layer_dims);
    return m;
}

// Glorot-uniform weights, zero biases, drawn in layer order from one stream.
inline void init_glorot(Model& m, Rng& rng) {
    size_t off = 0;
    for (size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
        int in = m.layer_dims[l], out = m.layer_dims[l + 1];
        double bound = std::sqrt(6.0 / (in + out));
        for (int i = 0; i < in * out; ++i) m.params[off++] = rng.next_uniform(-bound, bound);
        off += out;  // biases stay zero
    }
}

namespace detail {

struct ForwardScratch {
    std::vector<std::vector<double>> acts;  // acts[0] = input copy, acts[l+1] = layer l output
};

inline void check_batch(const Model& m, const MinibatchView& batch, const char* what) {
    if (batch.empty()) throw std::invalid_argument(std::string(what) + ": empty minibatch");
    if (batch.data->d != m.input_dim())
        throw std::invalid_argument(std::string(what) + ": feature dim " +
                                    std::to_string(batch.data->d) + " != model input dim " +
                                    std::to_string(m.input_dim()));
    if (batch.data->target_dim != m.output_dim())
        throw std::invalid_argument(std::string(what) + ": target dim " +
                                    std::to_string(batch.data->target_dim) +
                                    " != model output dim " + std::to_string(m.output_dim()));
}

// Affine chain with ReLU between layers. Throws NumericError naming the layer
// that first produced a non-finite value.
inline void forward_sample(const Model& m, std::span<const double> x, ForwardScratch& s) {
    size_t L = m.n_layers();
    s.acts.resize(L + 1);
    s.acts[0].assign(x.begin(), x.end());
    size_t off = 0;
    for (size_t l = 0; l < L; ++l) {
        int in = m.layer_dims[l], out = m.layer_dims[l + 1];
        const double* W = m.params.data() + off;
        const double* b = m.params.data() + off + size_t(in) * out;
        off += size_t(in) * out + out;
        auto& prev = s.acts[l];
        auto& cur = s.acts[l + 1];
        cur.assign(out, 0.0);
        for (int o = 0; o < out; ++o) {
            double z = b[o];
            const double* w = W + size_t(o) * in;
            for (int i = 0; i < in; ++i) z += w[i] * prev[i];
            if (!std::isfinite(z))
                throw NumericError("non-finite activation in layer " + std::to_string(l));
            cur[o] = (l + 1 < L && z < 0.0) ? 0.0 : z;  // ReLU on hidden layers
        }
    }
}

inline double sample_loss(const Model& m, std::span<const double> out,
                          std::span<const double> y) {
    if (m.kind == ModelKind::logistic_regression) {
        double z = out[0];
        // softplus(z) - y*z, stable for large |z|
        double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        return sp - y[0] * z;
    }
    double loss = 0.0;
    for (size_t k = 0; k < out.size(); ++k) {
        double e = out[k] - y[k];
        loss += 0.5 * e * e;
    }
    return loss;
}

}  // namespace detail

// Mean per-sample loss over the minibatch, in batch order.
inline double forward_loss(const Model& m, const MinibatchView& batch) {
    detail::check_batch(m, batch, "forward_loss");
    detail::ForwardScratch s;
    double total = 0.0;
    for (uint32_t idx : batch.indices) {
        detail::forward_sample(m, batch.data->row(idx), s);
        total += detail::sample_loss(m, s.acts.back(), batch.data->target(idx));
    }
    double mean = total / static_cast<double>(batch.size());
    if (!std::isfinite(mean)) throw NumericError("non-finite loss in output layer");
    return mean;
}

// Gradient of the mean loss w.r.t. params, accumulated sample by sample in
// batch order and divided by the batch size at the end.
inline Gradient backward(const Model& m, const MinibatchView& batch) {
    detail::check_batch(m, batch, "backward");
    size_t L = m.n_layers();
    Gradient g;
    g.values.assign(m.params.size(), 0.0);
    g.sample_count = static_cast<int64_t>(batch.size());

    detail::ForwardScratch s;
    std::vector<size_t> offsets(L);
    {
        size_t off = 0;
        for (size_t l = 0; l < L; ++l) {
            offsets[l] = off;
            off += size_t(m.layer_dims[l]) * m.layer_dims[l + 1] + m.layer_dims[l + 1];
        }
    }
    std::vector<double> delta, delta_prev;
    for (uint32_t idx : batch.indices) {
        detail::forward_sample(m, batch.data->row(idx), s);
        auto y = batch.data->target(idx);
        const auto& out = s.acts[L];

        delta.assign(out.size(), 0.0);
        if (m.kind == ModelKind::logistic_regression) {
            double z = out[0];
            double p = 1.0 / (1.0 + std::exp(-z));
            delta[0] = p - y[0];
        } else {
            for (size_t k = 0; k < out.size(); ++k) delta[k] = out[k] - y[k];
        }

        for (size_t l = L; l-- > 0;) {
            int in = m.layer_dims[l], out_n = m.layer_dims[l + 1];
            const double* W = m.params.data() + offsets[l];
            double* gW = g.values.data() + offsets[l];
            double* gb = gW + size_t(in) * out_n;
            const auto& act = s.acts[l];
            for (int o = 0; o < out_n; ++o) {
                double* gw = gW + size_t(o) * in;
                for (int i = 0; i < in; ++i) gw[i] += delta[o] * act[i];
                gb[o] += delta[o];
            }
            if (l > 0) {
                delta_prev.assign(in, 0.0);
                for (int o = 0; o < out_n; ++o) {
                    const double* w = W + size_t(o) * in;
                    for (int i = 0; i < in; ++i) delta_prev[i] += w[i] * delta[o];
                }
                // ReLU mask: act[l] holds max(0, z); zero activation kills signal
                for (int i = 0; i < in; ++i)
                    if (act[i] <= 0.0) delta_prev[i] = 0.0;
                delta.swap(delta_prev);
            }
        }
    }
    double inv = 1.0 / static_cast<double>(batch.size());
    for (double& v : g.values) v *= inv;
    return g;
}

// Central-difference gradient of forward_loss; the independent oracle for
// backward. Never calls backward or shares its code path.
inline Gradient fd_gradient(const Model& m, const MinibatchView& batch, double epsilon) {
    if (!(epsilon > 0.0) || epsilon > 1e-2)
        throw std::invalid_argument("fd_gradient: epsilon must be in (0, 1e-2]");
    detail::check_batch(m, batch, "fd_gradient");
    Gradient g;
    g.values.assign(m.params.size(), 0.0);
    g.sample_count = static_cast<int64_t>(batch.size());
    Model probe = m;
    for (size_t i = 0; i < m.params.size(); ++i) {
        double saved = probe.params[i];
        probe.params[i] = saved + epsilon;
        double up = forward_loss(probe, batch);
        probe.params[i] = saved - epsilon;
        double down = forward_loss(probe, batch);
        probe.params[i] = saved;
        g.values[i] = (up - down) / (2.0 * epsilon);
    }
    return g;
}

// params - lr * grad; the callers' values are never mutated.
inline ParameterVector sgd_step(const ParameterVector& params, const Gradient& grad, double lr) {
    check_same_dim(params.size(), grad.values.size(), "sgd_step");
    if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be positive");
    ParameterVector next(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        next[i] = params[i] - lr * grad.values[i];
        if (!std::isfinite(next[i])) throw NumericError("non-finite parameter after sgd_step");
    }
    return next;
}

// Full-dataset mean loss (evaluation helper; no simulated-time cost).
inline double dataset_loss(const Model& m, const Dataset& data) {
    std::vector<uint32_t> all(data.n);
    for (int64_t i = 0; i < data.n; ++i) all[i] = static_cast<uint32_t>(i);
    return forward_loss(m, MinibatchView{&data, all});
}

}  // namespace psyn
