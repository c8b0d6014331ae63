#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/ops.hpp"
#include "histofuse/tape.hpp"
#include "histofuse/tensor.hpp"

namespace histofuse {

/// Probabilities are clamped to [kProbClamp, 1-kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-7;

namespace detail {

template <typename T>
T clamp_prob(T p) {
    const T lo = static_cast<T>(kProbClamp);
    const T hi = T(1) - lo;
    return p < lo ? lo : (p > hi ? hi : p);
}

template <typename T>
bool prob_inside_clamp(T p) {
    const T lo = static_cast<T>(kProbClamp);
    return p > lo && p < T(1) - lo;
}

}  // namespace detail

/// Binary crossentropy, batch-averaged. probs holds one probability per
/// sample ([N], [N,1] or [1]); labels are 0/1.
template <typename T>
NodeId bce_loss(Tape<T>& tape, NodeId probs_id, const std::vector<int>& labels) {
    const Tensor<T>& p = tape.value(probs_id);
    const std::size_t n = p.numel();
    if (n == 0 || n != labels.size())
        throw ShapeError("bce_loss: " + std::to_string(n) + " probabilities vs " +
                         std::to_string(labels.size()) + " labels");
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T pc = detail::clamp_prob(p[i]);
        acc += labels[i] ? -std::log(pc) : -std::log(T(1) - pc);
    }
    const T inv_n = T(1) / static_cast<T>(n);
    return tape.push(Tensor<T>::scalar(acc * inv_n), {probs_id},
                     [probs_id, labels, inv_n](Tape<T>& t, NodeId self) {
                         const T g = t.grad(self)[0];
                         const Tensor<T>& pv = t.value(probs_id);
                         Tensor<T>& gp = t.grad(probs_id);
                         for (std::size_t i = 0; i < pv.numel(); ++i) {
                             if (!detail::prob_inside_clamp(pv[i])) continue;  // clamp: flat outside
                             const T pc = pv[i];
                             const T d = labels[i] ? -T(1) / pc : T(1) / (T(1) - pc);
                             gp[i] += g * d * inv_n;
                         }
                     });
}

/// Categorical crossentropy over probability rows, batch-averaged:
/// -ln q[true class]. Rows must already sum to 1 within 1e-5.
template <typename T>
NodeId cce_loss(Tape<T>& tape, NodeId probs_id, const std::vector<int>& labels) {
    const Tensor<T>& q = tape.value(probs_id);
    const RowDims d = row_dims(q, "cce_loss probabilities");
    if (d.n != labels.size())
        throw ShapeError("cce_loss: " + std::to_string(d.n) + " rows vs " +
                         std::to_string(labels.size()) + " labels");
    for (std::size_t r = 0; r < d.n; ++r) {
        T s = T(0);
        for (std::size_t j = 0; j < d.f; ++j) s += q[r * d.f + j];
        if (std::abs(static_cast<double>(s) - 1.0) > 1e-5)
            throw ConfigError("cce_loss: probability row " + std::to_string(r) +
                              " sums to " + std::to_string(static_cast<double>(s)));
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= d.f)
            throw ConfigError("cce_loss: label " + std::to_string(labels[r]) + " out of range");
    }
    T acc = T(0);
    for (std::size_t r = 0; r < d.n; ++r)
        acc += -std::log(detail::clamp_prob(q[r * d.f + static_cast<std::size_t>(labels[r])]));
    const T inv_n = T(1) / static_cast<T>(d.n);
    return tape.push(Tensor<T>::scalar(acc * inv_n), {probs_id},
                     [probs_id, labels, d, inv_n](Tape<T>& t, NodeId self) {
                         const T g = t.grad(self)[0];
                         const Tensor<T>& qv = t.value(probs_id);
                         Tensor<T>& gq = t.grad(probs_id);
                         for (std::size_t r = 0; r < d.n; ++r) {
                             const std::size_t idx = r * d.f + static_cast<std::size_t>(labels[r]);
                             if (!detail::prob_inside_clamp(qv[idx])) continue;
                             gq[idx] += g * (-T(1) / qv[idx]) * inv_n;
                         }
                     });
}

/// One-hot entry point; rows of y must contain exactly one 1 and zeros.
template <typename T>
NodeId cce_loss_onehot(Tape<T>& tape, NodeId probs_id, const Tensor<T>& onehot) {
    const Tensor<T>& q = tape.value(probs_id);
    if (!onehot.same_shape(q))
        throw ShapeError("cce_loss: one-hot shape " + onehot.shape_string() +
                         " does not match probabilities " + q.shape_string());
    const RowDims d = row_dims(onehot, "cce_loss one-hot");
    std::vector<int> labels(d.n, -1);
    for (std::size_t r = 0; r < d.n; ++r) {
        for (std::size_t j = 0; j < d.f; ++j) {
            const T v = onehot[r * d.f + j];
            if (v == T(1)) {
                if (labels[r] != -1) throw ConfigError("cce_loss: y is not one-hot (two ones in a row)");
                labels[r] = static_cast<int>(j);
            } else if (v != T(0)) {
                throw ConfigError("cce_loss: y is not one-hot (entry neither 0 nor 1)");
            }
        }
        if (labels[r] == -1) throw ConfigError("cce_loss: y is not one-hot (row of zeros)");
    }
    return cce_loss(tape, probs_id, labels);
}

/// lambda * sum of squared weights over the given (already-selected) kernel
/// nodes. Returns a scalar node to be summed into the training loss.
template <typename T>
NodeId l2_penalty(Tape<T>& tape, const std::vector<NodeId>& weight_ids, double lambda) {
    if (lambda < 0.0) throw ConfigError("l2_penalty: lambda must be >= 0");
    if (weight_ids.empty() || lambda == 0.0) {
        return tape.push(Tensor<T>::scalar(T(0)), {}, nullptr);
    }
    std::vector<NodeId> sums;
    sums.reserve(weight_ids.size());
    for (const NodeId w : weight_ids) sums.push_back(sum_squares(tape, w));
    return weighted_sum(tape, sums, std::vector<T>(sums.size(), static_cast<T>(lambda)));
}

/// Plain (non-tape) evaluation helpers used by the metrics/evaluation path.
template <typename T>
double bce_value(const std::vector<T>& probs, const std::vector<int>& labels) {
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double pc = std::min(std::max(static_cast<double>(probs[i]), kProbClamp), 1.0 - kProbClamp);
        acc += labels[i] ? -std::log(pc) : -std::log(1.0 - pc);
    }
    return acc / static_cast<double>(probs.size());
}

template <typename T>
double cce_value(const Tensor<T>& q, const std::vector<int>& labels) {
    const RowDims d = row_dims(q, "cce_value");
    double acc = 0.0;
    for (std::size_t r = 0; r < d.n; ++r) {
        const double v = static_cast<double>(q[r * d.f + static_cast<std::size_t>(labels[r])]);
        acc += -std::log(std::min(std::max(v, kProbClamp), 1.0 - kProbClamp));
    }
    return acc / static_cast<double>(d.n);
}

}  // namespace histofuse
