#pragma once

#include <cstddef>
#include <limits>

#include "histofuse/layers.hpp"
#include "histofuse/tensor.hpp"

namespace histofuse {

/// "Improved" means val_loss < best - kImprovementEps, for both the
/// scheduler and early stopping; keeps float noise from resetting patience.
inline constexpr double kImprovementEps = 1e-4;

/// Plateau scheduler: halve the learning rate once validation loss has
/// failed to improve for `patience` consecutive epochs, never below min_lr.
/// The best loss is kept across reductions; only the counter resets.
class ReduceLROnPlateau {
public:
    double factor = 0.5;
    std::size_t patience = 3;
    double min_lr = 1e-6;

    /// Call once per epoch with that epoch's validation loss; returns the
    /// learning rate in effect for the next epoch.
    double update(double val_loss, double current_lr) {
        if (val_loss < best_loss_ - kImprovementEps) {
            best_loss_ = val_loss;
            stagnant_ = 0;
            return current_lr;
        }
        ++stagnant_;
        if (stagnant_ >= patience) {
            stagnant_ = 0;
            const double reduced = current_lr * factor;
            return reduced > min_lr ? reduced : min_lr;
        }
        return current_lr;
    }

    double best_loss() const { return best_loss_; }
    std::size_t stagnant_epochs() const { return stagnant_; }

private:
    double best_loss_ = std::numeric_limits<double>::infinity();
    std::size_t stagnant_ = 0;
};

/// Early stopping with best-weights restoration: stop after `patience`
/// consecutive non-improving epochs; the snapshot always belongs to the
/// minimum validation loss seen.
template <typename T>
class EarlyStopping {
public:
    std::size_t patience = 5;
    bool restore_best = true;

    /// Returns true when training should stop. On stop with restore_best,
    /// `params` is replaced by the best snapshot.
    bool update(double val_loss, ParamSet<T>& params) {
        if (val_loss < best_loss_ - kImprovementEps) {
            best_loss_ = val_loss;
            best_weights_ = params;
            stagnant_ = 0;
            return false;
        }
        ++stagnant_;
        if (stagnant_ >= patience) {
            if (restore_best && !best_weights_.empty()) params = best_weights_;
            return true;
        }
        return false;
    }

    double best_loss() const { return best_loss_; }
    std::size_t stagnant_epochs() const { return stagnant_; }
    const ParamSet<T>& best_weights() const { return best_weights_; }

private:
    double best_loss_ = std::numeric_limits<double>::infinity();
    std::size_t stagnant_ = 0;
    ParamSet<T> best_weights_;
};

}  // namespace histofuse
