#pragma once

// Test-side reference implementations, written independently of the engine's
// kernels: brute-force loops, finite differences, pairwise statistics and a
// plain state machine for the scheduler. Expected values in the suites come
// from these, never from the code under test.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "histofuse/rng.hpp"
#include "histofuse/tape.hpp"
#include "histofuse/tensor.hpp"

namespace oracles {

using histofuse::NodeId;
using histofuse::Rng;
using histofuse::Tape;
using histofuse::Tensor;

// ---------------------------------------------------------------------------
// brute-force kernels
// ---------------------------------------------------------------------------

/// Direct six-loop convolution, valid padding, accumulating bias first and
/// then products over (ky,kx,ci) in row-major order.
template <typename T>
Tensor<T> conv2d_brute(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b,
                       std::size_t stride) {
    const std::size_t h = x.extent(0), w = x.extent(1), cin = x.extent(2);
    const std::size_t kh = k.extent(0), kw = k.extent(1), cout = k.extent(3);
    const std::size_t oh = (h - kh) / stride + 1, ow = (w - kw) / stride + 1;
    Tensor<T> out({oh, ow, cout});
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
            for (std::size_t co = 0; co < cout; ++co) {
                T acc = b[co];
                for (std::size_t ky = 0; ky < kh; ++ky)
                    for (std::size_t kx = 0; kx < kw; ++kx)
                        for (std::size_t ci = 0; ci < cin; ++ci)
                            acc += x[((oy * stride + ky) * w + (ox * stride + kx)) * cin + ci] *
                                   k[((ky * kw + kx) * cin + ci) * cout + co];
                out[(oy * ow + ox) * cout + co] = acc;
            }
    return out;
}

/// Direct per-window max scan.
template <typename T>
Tensor<T> maxpool2d_brute(const Tensor<T>& x, std::size_t ph, std::size_t pw, std::size_t sh,
                          std::size_t sw) {
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    const std::size_t oh = (h - ph) / sh + 1, ow = (w - pw) / sw + 1;
    Tensor<T> out({oh, ow, c});
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
            for (std::size_t ci = 0; ci < c; ++ci) {
                T best = -std::numeric_limits<T>::infinity();
                for (std::size_t wy = 0; wy < ph; ++wy)
                    for (std::size_t wx = 0; wx < pw; ++wx)
                        best = std::max(best, x[((oy * sh + wy) * w + (ox * sw + wx)) * c + ci]);
                out[(oy * ow + ox) * c + ci] = best;
            }
    return out;
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

/// Rebuilds the computation from scratch for every probe, so the loss
/// closure must be a pure function of the inputs (fixed seeds inside).
struct GradCheck {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::string worst;  // where the worst error occurred
};

inline double rel_err(double a, double f) {
    const double diff = std::abs(a - f);
    if (diff <= 1e-6) return 0.0;  // absolute floor
    return diff / std::max({std::abs(a), std::abs(f), 1e-6});
}

/// loss(inputs) -> scalar; analytic[i] must hold dloss/dinputs[i].
inline GradCheck finite_difference_check(
    const std::function<double(const std::vector<Tensor<double>>&)>& loss,
    std::vector<Tensor<double>> inputs, const std::vector<Tensor<double>>& analytic,
    double step = 1e-4) {
    GradCheck result;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        for (std::size_t i = 0; i < inputs[t].numel(); ++i) {
            const double saved = inputs[t][i];
            inputs[t][i] = saved + step;
            const double up = loss(inputs);
            inputs[t][i] = saved - step;
            const double down = loss(inputs);
            inputs[t][i] = saved;
            const double fd = (up - down) / (2.0 * step);
            const double err = rel_err(analytic[t][i], fd);
            ++result.checked;
            if (err > result.max_rel_err) {
                result.max_rel_err = err;
                result.worst = "input " + std::to_string(t) + " elem " + std::to_string(i) +
                               " analytic=" + std::to_string(analytic[t][i]) +
                               " fd=" + std::to_string(fd);
            }
        }
    }
    return result;
}

/// Scalar tape node L = sum_i c[i] * y[i]; a fixed random projection makes
/// index or sign mistakes in an op's backward visible through FD.
template <typename T>
NodeId dot_with(Tape<T>& tape, NodeId y, const std::vector<T>& c) {
    const Tensor<T>& yv = tape.value(y);
    T acc = T(0);
    for (std::size_t i = 0; i < yv.numel(); ++i) acc += c[i] * yv[i];
    return tape.push(Tensor<T>::scalar(acc), {y}, [y, c](Tape<T>& t, NodeId self) {
        const T g = t.grad(self)[0];
        for (std::size_t i = 0; i < t.grad(y).numel(); ++i) t.grad(y)[i] += c[i] * g;
    });
}

template <typename T>
Tensor<T> random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -2.0, double hi = 2.0) {
    Tensor<T> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

/// Like random_tensor but keeps values away from zero (ReLU kinks).
template <typename T>
Tensor<T> random_tensor_no_kink(Rng& rng, std::vector<std::size_t> shape, double margin = 0.05) {
    Tensor<T> t = random_tensor<T>(rng, std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i)
        if (std::abs(static_cast<double>(t[i])) < margin)
            t[i] = static_cast<T>(t[i] < T(0) ? -margin : margin);
    return t;
}

// ---------------------------------------------------------------------------
// metric formulas, one line each
// ---------------------------------------------------------------------------

inline double precision_formula(double tp, double fp) { return tp + fp == 0 ? 0.0 : tp / (tp + fp); }
inline double recall_formula(double tp, double fn) { return tp + fn == 0 ? 0.0 : tp / (tp + fn); }
inline double f1_formula(double p, double r) { return p + r == 0 ? 0.0 : 2.0 * p * r / (p + r); }
inline double accuracy_formula(double tp, double tn, double fp, double fn) {
    return (tp + tn) / (tp + tn + fp + fn);
}

/// All-pairs Mann-Whitney statistic, ties 0.5.
inline double auc_brute(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

// ---------------------------------------------------------------------------
// scheduler / early-stop reference state machines
// ---------------------------------------------------------------------------

/// Learning rate in effect at each epoch for a given loss sequence.
inline std::vector<double> reference_lr_trace(const std::vector<double>& losses, double lr0,
                                              double factor = 0.5, int patience = 3,
                                              double min_lr = 1e-6, double eps = 1e-4) {
    std::vector<double> out;
    double best = std::numeric_limits<double>::infinity(), lr = lr0;
    int wait = 0;
    for (const double loss : losses) {
        out.push_back(lr);
        if (loss < best - eps) {
            best = loss;
            wait = 0;
        } else if (++wait >= patience) {
            lr = std::max(lr * factor, min_lr);
            wait = 0;
        }
    }
    return out;
}

/// Index (1-based) of the epoch after which training stops, plus the epoch
/// whose weights are restored; 0 = never stopped within the sequence.
struct EarlyStopTrace {
    std::size_t stop_epoch = 0;
    std::size_t best_epoch = 0;
};

inline EarlyStopTrace reference_early_stop(const std::vector<double>& losses, int patience = 5,
                                           double eps = 1e-4) {
    EarlyStopTrace t;
    double best = std::numeric_limits<double>::infinity();
    int wait = 0;
    for (std::size_t e = 1; e <= losses.size(); ++e) {
        if (losses[e - 1] < best - eps) {
            best = losses[e - 1];
            t.best_epoch = e;
            wait = 0;
        } else if (++wait >= patience) {
            t.stop_epoch = e;
            return t;
        }
    }
    return t;
}

}  // namespace oracles
