#pragma once

#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/parallel.hpp"
#include "histofuse/rng.hpp"

namespace histofuse {

enum class Scale { linear, log10 };

/// One box dimension; log-scale dimensions are searched in exponent space so
/// sampling is uniform per decade.
struct SearchDimension {
    std::string name;
    double lower = 0.0;
    double upper = 1.0;
    Scale scale = Scale::linear;
};

struct SearchSpace {
    std::vector<SearchDimension> dimensions;

    void validate() const {
        for (const auto& d : dimensions) {
            if (!(d.lower < d.upper))
                throw ConfigError("search dimension '" + d.name + "': lower must be < upper");
            if (d.scale == Scale::log10 && d.lower <= 0.0)
                throw ConfigError("search dimension '" + d.name + "': log scale needs positive bounds");
        }
    }

    /// Bounds in internal coordinates (log dims as log10).
    std::vector<std::pair<double, double>> internal_bounds() const {
        std::vector<std::pair<double, double>> b;
        for (const auto& d : dimensions)
            b.emplace_back(d.scale == Scale::log10 ? std::log10(d.lower) : d.lower,
                           d.scale == Scale::log10 ? std::log10(d.upper) : d.upper);
        return b;
    }

    std::vector<double> decode(const std::vector<double>& internal) const {
        std::vector<double> out(internal.size());
        for (std::size_t i = 0; i < internal.size(); ++i)
            out[i] = dimensions[i].scale == Scale::log10 ? std::pow(10.0, internal[i]) : internal[i];
        return out;
    }
};

struct SwarmConfig {
    std::size_t swarm_size = 20;
    std::size_t iterations = 30;
    double inertia = 0.729;
    double cognitive = 1.49445;
    double social = 1.49445;
    double velocity_clamp = 0.5;  // fraction of each dimension's range
    std::uint64_t seed = 1;

    void validate() const {
        if (swarm_size < 2) throw ConfigError("swarm_size must be >= 2");
        if (iterations < 1) throw ConfigError("iterations must be >= 1");
        if (inertia <= 0 || cognitive <= 0 || social <= 0 || velocity_clamp <= 0)
            throw ConfigError("swarm coefficients must be positive");
    }
};

struct Particle {
    std::vector<double> position;  // internal coordinates
    std::vector<double> velocity;
    std::vector<double> best_position;
    double best_value = std::numeric_limits<double>::infinity();
};

struct PsoResult {
    std::vector<double> best_position;  // internal coordinates
    double best_value = std::numeric_limits<double>::infinity();
    std::vector<double> trace;                          // gbest value after each iteration (0 = init)
    std::vector<std::vector<double>> trace_positions;   // gbest position per trace row
    std::size_t nan_evaluations = 0;
};

/// Global-best PSO over the internal box. Positions are clamped to bounds
/// and the offending velocity component is zeroed; velocities are clamped to
/// +-clamp*(range). NaN objective values are treated as +inf and counted.
/// Fitness evaluations within an iteration may run on worker threads; results
/// merge in particle-index order, so the outcome equals the serial one.
inline PsoResult pso_optimize(const std::function<double(const std::vector<double>&)>& objective,
                              const SearchSpace& space, const SwarmConfig& config,
                              bool parallel_fitness = false) {
    space.validate();
    config.validate();
    const auto bounds = space.internal_bounds();
    const std::size_t dims = bounds.size();
    if (dims == 0) throw ConfigError("pso_optimize: empty search space");

    Rng rng(config.seed);
    std::vector<double> vmax(dims);
    for (std::size_t d = 0; d < dims; ++d)
        vmax[d] = config.velocity_clamp * (bounds[d].second - bounds[d].first);

    std::vector<Particle> swarm(config.swarm_size);
    for (auto& p : swarm) {
        p.position.resize(dims);
        p.velocity.assign(dims, 0.0);
        for (std::size_t d = 0; d < dims; ++d)
            p.position[d] = rng.uniform(bounds[d].first, bounds[d].second);
        p.best_position = p.position;
    }

    PsoResult result;
    std::size_t nan_count = 0;
    auto evaluate_swarm = [&]() {
        std::vector<double> values(swarm.size());
        auto eval_one = [&](std::size_t i) {
            const double v = objective(swarm[i].position);
            values[i] = std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
        };
        if (parallel_fitness)
            parallel_for(swarm.size(), eval_one);
        else
            for (std::size_t i = 0; i < swarm.size(); ++i) eval_one(i);
        for (std::size_t i = 0; i < swarm.size(); ++i) {
            if (std::isinf(values[i])) ++nan_count;
            if (values[i] < swarm[i].best_value) {
                swarm[i].best_value = values[i];
                swarm[i].best_position = swarm[i].position;
            }
            if (values[i] < result.best_value) {
                result.best_value = values[i];
                result.best_position = swarm[i].position;
            }
        }
    };

    evaluate_swarm();
    result.trace.push_back(result.best_value);
    result.trace_positions.push_back(result.best_position);

    for (std::size_t it = 0; it < config.iterations; ++it) {
        for (auto& p : swarm) {
            for (std::size_t d = 0; d < dims; ++d) {
                const double r1 = rng.uniform();
                const double r2 = rng.uniform();
                double v = config.inertia * p.velocity[d] +
                           config.cognitive * r1 * (p.best_position[d] - p.position[d]) +
                           config.social * r2 * (result.best_position[d] - p.position[d]);
                if (v > vmax[d]) v = vmax[d];
                if (v < -vmax[d]) v = -vmax[d];
                double x = p.position[d] + v;
                if (x < bounds[d].first) {
                    x = bounds[d].first;
                    v = 0.0;
                } else if (x > bounds[d].second) {
                    x = bounds[d].second;
                    v = 0.0;
                }
                p.velocity[d] = v;
                p.position[d] = x;
            }
        }
        evaluate_swarm();
        result.trace.push_back(result.best_value);
        result.trace_positions.push_back(result.best_position);
    }
    result.nan_evaluations = nan_count;
    return result;
}

/// Hyperparameter-tuning adapter: searches learning rate (log10) and dropout
/// (linear) by minimizing the validation loss returned by train_fn.
struct TuneResult {
    double learning_rate = 0.0;
    double dropout = 0.0;
    double best_fitness = std::numeric_limits<double>::infinity();
    std::vector<double> trace;
    std::vector<std::pair<double, double>> best_decoded_trace;  // (lr, dropout) per iteration
};

inline SearchSpace hyperparameter_space(double lr_min = 1e-5, double lr_max = 1e-2,
                                        double dropout_min = 0.3, double dropout_max = 0.7) {
    SearchSpace space;
    space.dimensions.push_back({"learning_rate", lr_min, lr_max, Scale::log10});
    space.dimensions.push_back({"dropout", dropout_min, dropout_max, Scale::linear});
    return space;
}

inline TuneResult pso_tune_hyperparams(const std::function<double(double, double)>& train_fn,
                                       const SearchSpace& space, const SwarmConfig& config,
                                       bool parallel_fitness = false) {
    if (space.dimensions.size() != 2)
        throw ConfigError("pso_tune_hyperparams expects a 2-D space (learning rate, dropout)");
    TuneResult tune;
    auto objective = [&](const std::vector<double>& internal) {
        const auto decoded = space.decode(internal);
        try {
            return train_fn(decoded[0], decoded[1]);
        } catch (const std::exception&) {
            return std::numeric_limits<double>::infinity();  // failed run: worst fitness
        }
    };
    const PsoResult r = pso_optimize(objective, space, config, parallel_fitness);
    const auto decoded = space.decode(r.best_position);
    tune.learning_rate = decoded[0];
    tune.dropout = decoded[1];
    tune.best_fitness = r.best_value;
    tune.trace = r.trace;
    for (const auto& pos : r.trace_positions) {
        const auto dp = space.decode(pos);
        tune.best_decoded_trace.emplace_back(dp[0], dp[1]);
    }
    return tune;
}

/// Tuning trace CSV: iteration,best_fitness,best_lr,best_dropout.
inline std::string tune_trace_csv(const std::vector<double>& trace,
                                  const std::vector<std::pair<double, double>>& decoded) {
    std::ostringstream os;
    os << "iteration,best_fitness,best_lr,best_dropout\n";
    os << std::setprecision(9);
    for (std::size_t i = 0; i < trace.size(); ++i) {
        os << i << "," << trace[i];
        if (i < decoded.size())
            os << "," << decoded[i].first << "," << decoded[i].second;
        else
            os << ",,";
        os << "\n";
    }
    return os.str();
}

}  // namespace histofuse
