#pragma once

#include <cmath>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/graph.hpp"
#include "histofuse/losses.hpp"
#include "histofuse/metrics.hpp"
#include "histofuse/optim.hpp"
#include "histofuse/rng.hpp"
#include "histofuse/schedule.hpp"

namespace histofuse {

/// In-memory labeled image set; labels are class indices under the model's
/// class-label ordering.
template <typename T>
struct LabeledDataset {
    std::vector<Tensor<T>> images;  // each [H,W,C]
    std::vector<int> labels;
    std::size_t num_classes = 2;

    std::size_t size() const { return images.size(); }
};

struct TrainConfig {
    std::size_t batch_size = 16;
    std::size_t epochs = 20;
    std::uint64_t seed = 1;
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 1e-4;
    bool use_scheduler = true;
    bool use_early_stopping = true;
    double l2_lambda = 0.001;
};

struct EpochRow {
    std::size_t epoch = 0;
    double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0, lr = 0;
};

struct EpochHistory {
    std::vector<EpochRow> rows;

    /// Fixed interface: header + one row per epoch, 6 significant digits.
    std::string to_csv() const {
        std::ostringstream os;
        os << "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
        os << std::setprecision(6);
        for (const auto& r : rows)
            os << r.epoch << "," << r.train_loss << "," << r.train_acc << "," << r.val_loss << ","
               << r.val_acc << "," << r.lr << "\n";
        return os.str();
    }
};

namespace detail {

template <typename T>
Tensor<T> stack_images(const std::vector<Tensor<T>>& images, const std::vector<std::size_t>& idx) {
    const auto& s = images[idx[0]].shape();
    if (s.size() != 3) throw ShapeError("dataset images must be [H,W,C]");
    Tensor<T> batch({idx.size(), s[0], s[1], s[2]});
    const std::size_t per = images[idx[0]].numel();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const Tensor<T>& img = images[idx[i]];
        if (img.shape() != s) throw ShapeError("dataset images must share one shape");
        std::copy(img.data(), img.data() + per, batch.data() + i * per);
    }
    return batch;
}

inline bool sigmoid_output(const ModelGraph& g) {
    const LayerSpec& out = g.layer(g.output);
    return out.kind == LayerKind::activation && out.activation == "sigmoid";
}

}  // namespace detail

/// Inference-mode class probabilities for a set of images, chunked to bound
/// memory. Sigmoid models return one column (P of class 1), softmax models K.
template <typename T>
std::vector<std::vector<double>> predict_probs(Model<T>& model, const std::vector<Tensor<T>>& images,
                                               std::size_t chunk = 32) {
    std::vector<std::vector<double>> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(start + chunk, images.size()); ++i) idx.push_back(i);
        const Tensor<T> batch = detail::stack_images(images, idx);
        auto fp = forward(model.graph, model.params, batch, Mode::infer);
        const Tensor<T>& y = fp.tape.value(fp.output);
        const std::size_t width = y.numel() / idx.size();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::vector<double> row(width);
            for (std::size_t j = 0; j < width; ++j) row[j] = static_cast<double>(y[i * width + j]);
            out.push_back(std::move(row));
        }
    }
    return out;
}

/// Inference-mode evaluation: thresholds sigmoid outputs at 0.5, argmaxes
/// softmax rows, and delegates metric computation to the metrics module.
/// The report's loss is the plain data loss (no L2 penalty).
template <typename T>
MetricsReport evaluate(Model<T>& model, const LabeledDataset<T>& set, std::size_t chunk = 32) {
    if (set.size() == 0) throw ConfigError("evaluate: empty dataset");
    const bool sig = detail::sigmoid_output(model.graph);
    const auto probs = predict_probs(model, set.images, chunk);

    std::vector<int> preds(set.size());
    std::vector<double> scores;
    double loss = 0.0;
    std::size_t k = 2;
    if (sig) {
        scores.resize(set.size());
        std::vector<T> p(set.size());
        for (std::size_t i = 0; i < set.size(); ++i) {
            scores[i] = probs[i][0];
            p[i] = static_cast<T>(probs[i][0]);
            preds[i] = probs[i][0] >= 0.5 ? 1 : 0;
        }
        loss = bce_value(p, set.labels);
    } else {
        k = probs[0].size();
        Tensor<T> q({set.size(), k});
        for (std::size_t i = 0; i < set.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t j = 0; j < k; ++j) {
                q[i * k + j] = static_cast<T>(probs[i][j]);
                if (probs[i][j] > probs[i][best]) best = j;
            }
            preds[i] = static_cast<int>(best);
        }
        if (k == 2) {
            scores.resize(set.size());
            for (std::size_t i = 0; i < set.size(); ++i) scores[i] = probs[i][1];
        }
        loss = cce_value(q, set.labels);
    }

    MetricsReport report = make_report(preds, set.labels, k, scores.empty() ? nullptr : &scores,
                                       model.graph.class_labels);
    report.loss = loss;
    return report;
}

/// Optional per-image training-time transform (the data module's augment is
/// wired in here by the CLI; the training loop itself stays data-agnostic).
template <typename T>
using AugmentFn = std::function<Tensor<T>(const Tensor<T>&, Rng&)>;

/// Full training loop: seeded shuffle, forward/loss(+L2)/backward/step over
/// batches, evaluation of both splits, then scheduler and early stopping.
/// Deterministic per seed on one platform. A trailing batch of a single
/// sample is merged into the previous batch so train-mode batchnorm stays
/// defined; every sample is still visited once per epoch.
template <typename T>
EpochHistory train(Model<T>& model, const LabeledDataset<T>& train_set,
                   const LabeledDataset<T>& val_set, const TrainConfig& cfg,
                   const AugmentFn<T>& augment_fn = nullptr) {
    if (train_set.size() == 0 || val_set.size() == 0)
        throw ConfigError("train: train and validation splits must be nonempty");
    if (cfg.batch_size < 1 || cfg.epochs < 1)
        throw ConfigError("train: batch_size and epochs must be >= 1");

    const bool sig = detail::sigmoid_output(model.graph);
    Rng rng(cfg.seed);
    Optimizer<T> opt(cfg.optimizer);
    ReduceLROnPlateau scheduler;
    EarlyStopping<T> early_stop;
    double lr = cfg.learning_rate;

    EpochHistory history;
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size();) {
            std::size_t end = std::min(start + cfg.batch_size, order.size());
            // absorb a trailing singleton (train-mode batchnorm needs >= 2 rows)
            if (cfg.batch_size > 1 && order.size() - end == 1) end = order.size();
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<int> labels(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train_set.labels[idx[i]];

            Tensor<T> batch;
            if (augment_fn) {
                std::vector<Tensor<T>> augmented(idx.size());
                for (std::size_t i = 0; i < idx.size(); ++i)
                    augmented[i] = augment_fn(train_set.images[idx[i]], rng);
                std::vector<std::size_t> all(idx.size());
                for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
                batch = detail::stack_images(augmented, all);
            } else {
                batch = detail::stack_images(train_set.images, idx);
            }

            auto fp = forward(model.graph, model.params, batch, Mode::train, &rng);
            NodeId loss = sig ? bce_loss(fp.tape, fp.output, labels)
                              : cce_loss(fp.tape, fp.output, labels);
            if (!fp.regularized_kernels.empty() && cfg.l2_lambda > 0.0) {
                const NodeId pen = l2_penalty(fp.tape, fp.regularized_kernels, cfg.l2_lambda);
                loss = weighted_sum(fp.tape, {loss, pen}, {T(1), T(1)});
            }
            const double loss_value = static_cast<double>(fp.tape.value(loss)[0]);
            if (!std::isfinite(loss_value))
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_index));
            fp.tape.backward(loss);
            opt.step(model.params, collect_grads(fp), lr);
            ++batch_index;
            start = end;
        }

        MetricsReport train_eval = evaluate(model, train_set);
        MetricsReport val_eval = evaluate(model, val_set);
        history.rows.push_back(EpochRow{epoch, *train_eval.loss, train_eval.accuracy, *val_eval.loss,
                                        val_eval.accuracy, lr});

        if (cfg.use_scheduler) lr = scheduler.update(*val_eval.loss, lr);
        if (cfg.use_early_stopping && early_stop.update(*val_eval.loss, model.params)) break;
    }
    return history;
}

}  // namespace histofuse
