#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/layers.hpp"
#include "histofuse/tensor.hpp"

namespace histofuse {

enum class OptimizerKind { sgd_momentum, adam, rmsprop };

inline const char* optimizer_kind_name(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgd_momentum: return "sgd_momentum";
        case OptimizerKind::adam: return "adam";
        default: return "rmsprop";
    }
}

inline OptimizerKind optimizer_kind_from_name(const std::string& s) {
    if (s == "sgd_momentum" || s == "sgd") return OptimizerKind::sgd_momentum;
    if (s == "adam") return OptimizerKind::adam;
    if (s == "rmsprop") return OptimizerKind::rmsprop;
    throw ConfigError("unknown optimizer '" + s + "'");
}

/// Parameter-update rules. Slots are allocated lazily per parameter name and
/// mirror the parameter shapes; the step counter is shared. The learning
/// rate is passed per step so a scheduler can change it between epochs
/// without touching optimizer state.
template <typename T>
class Optimizer {
public:
    double momentum = 0.9;   // sgd_momentum
    double beta1 = 0.9;      // adam
    double beta2 = 0.999;    // adam
    double rho = 0.9;        // rmsprop
    double epsilon = 1e-7;   // adam / rmsprop

    explicit Optimizer(OptimizerKind kind) : kind_(kind) {}

    OptimizerKind kind() const { return kind_; }
    std::size_t step_count() const { return step_; }

    /// Apply one update to every gradient-carrying parameter. Parameters
    /// without a gradient entry are left untouched.
    void step(ParamSet<T>& params, const std::map<std::string, Tensor<T>>& grads, double lr) {
        ++step_;
        for (auto& [name, w] : params) {
            auto git = grads.find(name);
            if (git == grads.end()) continue;
            const Tensor<T>& g = git->second;
            if (!g.same_shape(w))
                throw ShapeError("optimizer: gradient shape " + g.shape_string() +
                                 " does not match parameter '" + name + "' " + w.shape_string());
            switch (kind_) {
                case OptimizerKind::sgd_momentum: {
                    Tensor<T>& v = slot(velocity_, name, w);
                    const T mu = static_cast<T>(momentum);
                    const T eta = static_cast<T>(lr);
                    for (std::size_t i = 0; i < w.numel(); ++i) {
                        v[i] = mu * v[i] - eta * g[i];
                        w[i] += v[i];
                    }
                    break;
                }
                case OptimizerKind::adam: {
                    Tensor<T>& m = slot(first_moment_, name, w);
                    Tensor<T>& v = slot(second_moment_, name, w);
                    const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
                    const T corr1 = T(1) - static_cast<T>(std::pow(beta1, static_cast<double>(step_)));
                    const T corr2 = T(1) - static_cast<T>(std::pow(beta2, static_cast<double>(step_)));
                    const T eta = static_cast<T>(lr);
                    const T eps = static_cast<T>(epsilon);
                    for (std::size_t i = 0; i < w.numel(); ++i) {
                        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
                        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
                        const T mhat = m[i] / corr1;
                        const T vhat = v[i] / corr2;
                        w[i] -= eta * mhat / (std::sqrt(vhat) + eps);
                    }
                    break;
                }
                case OptimizerKind::rmsprop: {
                    Tensor<T>& s = slot(sq_average_, name, w);
                    const T r = static_cast<T>(rho);
                    const T eta = static_cast<T>(lr);
                    const T eps = static_cast<T>(epsilon);
                    for (std::size_t i = 0; i < w.numel(); ++i) {
                        s[i] = r * s[i] + (T(1) - r) * g[i] * g[i];
                        w[i] -= eta * g[i] / std::sqrt(s[i] + eps);
                    }
                    break;
                }
            }
        }
    }

private:
    Tensor<T>& slot(std::map<std::string, Tensor<T>>& store, const std::string& name,
                    const Tensor<T>& like) {
        auto it = store.find(name);
        if (it == store.end()) it = store.emplace(name, Tensor<T>(like.shape())).first;
        return it->second;
    }

    OptimizerKind kind_;
    std::size_t step_ = 0;
    std::map<std::string, Tensor<T>> velocity_;
    std::map<std::string, Tensor<T>> first_moment_;
    std::map<std::string, Tensor<T>> second_moment_;
    std::map<std::string, Tensor<T>> sq_average_;
};

/// Default learning rates per rule (Tables 2 and 5 values).
inline double default_learning_rate(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgd_momentum: return 0.01;
        case OptimizerKind::adam: return 1e-4;
        default: return 1e-4;
    }
}

}  // namespace histofuse
