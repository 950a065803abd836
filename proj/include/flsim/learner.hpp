#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "flsim/dataset.hpp"
#include "flsim/errors.hpp"
#include "flsim/rng.hpp"

namespace flsim {

/// Flattened weights and biases of a fixed architecture.
struct ParamVector {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }
    bool operator==(const ParamVector&) const = default;
};

/// Binary classifier shape: plain logistic regression, or an MLP with tanh
/// hidden layers and a single sigmoid output.
struct Architecture {
    enum class Kind { logistic, mlp };
    Kind kind = Kind::logistic;
    std::vector<std::size_t> hidden;  // mlp only, nonempty

    static Architecture logistic() { return {Kind::logistic, {}}; }
    static Architecture mlp(std::vector<std::size_t> hidden_sizes) {
        return {Kind::mlp, std::move(hidden_sizes)};
    }
    bool operator==(const Architecture&) const = default;
};

struct TrainConfig {
    double learning_rate = 0.3;
    std::size_t batch_size = 8;
    std::size_t local_epochs = 4;
    Architecture architecture = Architecture::logistic();
    std::uint64_t seed = 0;

    bool operator==(const TrainConfig&) const = default;
};

/// Scalar validation/evaluation score in [0, 1].
struct EvalScore {
    double value = 0.0;
};

/// L2 pull toward an anchor parameter vector: weight * ||theta - anchor||^2,
/// added to the training loss.
struct Proximal {
    const ParamVector* anchor = nullptr;
    double weight = 0.0;
};

inline std::size_t param_count(const Architecture& arch, std::size_t input_dim) {
    if (arch.kind == Architecture::Kind::logistic) return input_dim + 1;
    if (arch.hidden.empty()) throw ConfigError("mlp architecture needs at least one hidden layer");
    std::size_t total = 0;
    std::size_t prev = input_dim;
    for (std::size_t h : arch.hidden) {
        total += prev * h + h;
        prev = h;
    }
    return total + prev + 1;
}

/// Symmetric small-scale random init, uniform in [-0.1, 0.1].
inline ParamVector init_params(const Architecture& arch, std::size_t input_dim,
                               std::uint64_t seed) {
    if (input_dim < 1) throw ConfigError("init_params: input_dim must be >= 1");
    Rng rng(seed);
    ParamVector p;
    p.values.resize(param_count(arch, input_dim));
    for (double& v : p.values) v = rng.uniform(-0.1, 0.1);
    return p;
}

namespace detail {

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// numerically stable binary cross-entropy from the logit
inline double bce_from_logit(double z, double y) {
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

// forward pass; per-layer activations appended to acts when backprop needs them
inline double forward_logit(const Architecture& arch, const ParamVector& p,
                            std::span<const double> x,
                            std::vector<std::vector<double>>* acts = nullptr) {
    if (arch.kind == Architecture::Kind::logistic) {
        double z = p.values[x.size()];  // bias
        for (std::size_t j = 0; j < x.size(); ++j) z += p.values[j] * x[j];
        return z;
    }
    std::vector<double> cur(x.begin(), x.end());
    std::size_t off = 0;
    for (std::size_t h : arch.hidden) {
        std::vector<double> next(h);
        const std::size_t prev = cur.size();
        for (std::size_t u = 0; u < h; ++u) {
            double z = p.values[off + prev * h + u];  // bias after the weight block
            const double* w = p.values.data() + off + u * prev;
            for (std::size_t j = 0; j < prev; ++j) z += w[j] * cur[j];
            next[u] = std::tanh(z);
        }
        off += prev * h + h;
        if (acts) acts->push_back(next);
        cur = std::move(next);
    }
    double z = p.values[off + cur.size()];
    for (std::size_t j = 0; j < cur.size(); ++j) z += p.values[off + j] * cur[j];
    return z;
}

}  // namespace detail

/// Mean binary cross-entropy over the given example indices, plus the
/// proximal term if present.
inline double loss_on(const Architecture& arch, const ParamVector& p, const Dataset& data,
                      std::span<const std::size_t> indices, const Proximal& prox = {}) {
    if (indices.empty()) throw ConfigError("loss_on: empty index set");
    double loss = 0;
    for (std::size_t i : indices)
        loss += detail::bce_from_logit(detail::forward_logit(arch, p, data.row(i)),
                                       static_cast<double>(data.y[i]));
    loss /= static_cast<double>(indices.size());
    if (prox.anchor && prox.weight > 0) {
        double sq = 0;
        for (std::size_t j = 0; j < p.dim(); ++j) {
            const double dj = p.values[j] - prox.anchor->values[j];
            sq += dj * dj;
        }
        loss += prox.weight * sq;
    }
    return loss;
}

/// Analytic gradient of loss_on with respect to every parameter.
inline std::vector<double> grad_on(const Architecture& arch, const ParamVector& p,
                                   const Dataset& data, std::span<const std::size_t> indices,
                                   const Proximal& prox = {}) {
    if (indices.empty()) throw ConfigError("grad_on: empty index set");
    std::vector<double> grad(p.dim(), 0.0);
    const double inv_m = 1.0 / static_cast<double>(indices.size());

    if (arch.kind == Architecture::Kind::logistic) {
        const std::size_t d = data.d;
        for (std::size_t i : indices) {
            const auto x = data.row(i);
            const double z = detail::forward_logit(arch, p, x);
            const double delta = (detail::sigmoid(z) - static_cast<double>(data.y[i])) * inv_m;
            for (std::size_t j = 0; j < d; ++j) grad[j] += delta * x[j];
            grad[d] += delta;
        }
    } else {
        for (std::size_t i : indices) {
            const auto x = data.row(i);
            std::vector<std::vector<double>> acts;
            const double z = detail::forward_logit(arch, p, x, &acts);
            const double delta_out =
                (detail::sigmoid(z) - static_cast<double>(data.y[i])) * inv_m;

            // offsets of each layer's weight block
            std::vector<std::size_t> offs;
            std::size_t off = 0, prev = data.d;
            for (std::size_t h : arch.hidden) {
                offs.push_back(off);
                off += prev * h + h;
                prev = h;
            }
            const std::size_t out_off = off;

            const auto& last = acts.back();
            for (std::size_t j = 0; j < last.size(); ++j)
                grad[out_off + j] += delta_out * last[j];
            grad[out_off + last.size()] += delta_out;

            std::vector<double> dact(last.size());
            for (std::size_t j = 0; j < last.size(); ++j)
                dact[j] = delta_out * p.values[out_off + j];

            for (std::size_t l = arch.hidden.size(); l-- > 0;) {
                const auto& a = acts[l];
                const std::size_t h = a.size();
                const std::size_t in_dim = l == 0 ? data.d : arch.hidden[l - 1];
                const double* input = l == 0 ? x.data() : acts[l - 1].data();
                std::vector<double> dprev(in_dim, 0.0);
                for (std::size_t u = 0; u < h; ++u) {
                    const double dz = dact[u] * (1.0 - a[u] * a[u]);  // tanh'
                    double* gw = grad.data() + offs[l] + u * in_dim;
                    const double* w = p.values.data() + offs[l] + u * in_dim;
                    for (std::size_t j = 0; j < in_dim; ++j) {
                        gw[j] += dz * input[j];
                        dprev[j] += dz * w[j];
                    }
                    grad[offs[l] + h * in_dim + u] += dz;
                }
                dact = std::move(dprev);
            }
        }
    }

    if (prox.anchor && prox.weight > 0)
        for (std::size_t j = 0; j < p.dim(); ++j)
            grad[j] += 2.0 * prox.weight * (p.values[j] - prox.anchor->values[j]);
    return grad;
}

/// Mini-batch SGD on binary cross-entropy, deterministic for a fixed seed;
/// the input vector is not modified. local_epochs == 0 returns the start
/// parameters unchanged. The proximal pull is applied as an exact implicit
/// step after each gradient step (proximal gradient descent), which stays
/// stable for arbitrarily large weights and reduces to plain SGD at 0.
inline ParamVector local_train(const ParamVector& start, const Dataset& data,
                               const TrainConfig& cfg, const Proximal& prox = {}) {
    if (data.empty()) throw ConfigError("local_train: empty dataset");
    if (start.dim() != param_count(cfg.architecture, data.d))
        throw ConfigError("local_train: parameter dimension does not match architecture");
    if (cfg.batch_size == 0) throw ConfigError("local_train: batch_size must be >= 1");

    ParamVector p = start;
    if (cfg.local_epochs == 0) return p;
    const bool proximal = prox.anchor != nullptr && prox.weight > 0;
    const double shrink = proximal ? 1.0 / (1.0 + 2.0 * cfg.learning_rate * prox.weight) : 1.0;
    Rng rng(cfg.seed);
    std::vector<std::size_t> idx(data.n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        rng.shuffle(idx);
        for (std::size_t pos = 0; pos < data.n; pos += cfg.batch_size) {
            const std::size_t take = std::min(cfg.batch_size, data.n - pos);
            const auto grad = grad_on(cfg.architecture, p, data, {idx.data() + pos, take});
            for (std::size_t j = 0; j < p.dim(); ++j)
                p.values[j] -= cfg.learning_rate * grad[j];
            if (proximal)
                for (std::size_t j = 0; j < p.dim(); ++j)
                    p.values[j] = prox.anchor->values[j] +
                                  shrink * (p.values[j] - prox.anchor->values[j]);
        }
    }
    return p;
}

/// Fraction of examples whose thresholded prediction (sigmoid >= 0.5, i.e.
/// logit >= 0) equals the label.
inline EvalScore evaluate(const Architecture& arch, const ParamVector& p, const Dataset& data) {
    if (data.empty()) throw ConfigError("evaluate: empty dataset");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.n; ++i) {
        const int pred = detail::forward_logit(arch, p, data.row(i)) >= 0.0 ? 1 : 0;
        if (pred == data.y[i]) ++correct;
    }
    return {static_cast<double>(correct) / static_cast<double>(data.n)};
}

struct WeightedUpdate {
    ParamVector params;
    std::uint64_t n_k = 0;
};

/// Weighted federated average with weights n_k / N, N the sum over the given
/// updates. Anchored on the first update so that an all-equal input list is
/// returned bit-exactly.
inline ParamVector fedavg(const std::vector<WeightedUpdate>& updates) {
    if (updates.empty()) throw ConfigError("fedavg: empty update list");
    const std::size_t dim = updates[0].params.dim();
    double total = 0;
    for (const auto& u : updates) {
        if (u.params.dim() != dim) throw ConfigError("fedavg: dimension mismatch");
        if (u.n_k < 1) throw ConfigError("fedavg: n_k must be >= 1");
        total += static_cast<double>(u.n_k);
    }
    ParamVector out = updates[0].params;
    if (updates.size() == 1) return out;
    for (std::size_t j = 0; j < dim; ++j) {
        double acc = 0;
        for (const auto& u : updates)
            acc += (static_cast<double>(u.n_k) / total) * (u.params.values[j] - updates[0].params.values[j]);
        out.values[j] += acc;
    }
    return out;
}

}  // namespace flsim
