#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "histofuse/errors.hpp"

namespace histofuse {

/// k x k counts, rows = actual class, columns = predicted class.
struct ConfusionMatrix {
    std::size_t k = 0;
    std::vector<std::uint64_t> counts;  // row-major

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::size_t classes) : k(classes), counts(classes * classes, 0) {}

    std::uint64_t& at(std::size_t actual, std::size_t predicted) { return counts[actual * k + predicted]; }
    std::uint64_t at(std::size_t actual, std::size_t predicted) const { return counts[actual * k + predicted]; }

    std::uint64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t(0)); }

    std::string to_csv() const {
        std::ostringstream os;
        for (std::size_t a = 0; a < k; ++a) {
            for (std::size_t p = 0; p < k; ++p) os << (p ? "," : "") << at(a, p);
            os << "\n";
        }
        return os.str();
    }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& predicted,
                                        const std::vector<int>& actual, std::size_t k) {
    if (predicted.size() != actual.size())
        throw ShapeError("confusion_matrix: " + std::to_string(predicted.size()) + " predictions vs " +
                         std::to_string(actual.size()) + " labels");
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] < 0 || actual[i] < 0 || static_cast<std::size_t>(predicted[i]) >= k ||
            static_cast<std::size_t>(actual[i]) >= k)
            throw ShapeError("confusion_matrix: label out of range at sample " + std::to_string(i));
        ++cm.at(static_cast<std::size_t>(actual[i]), static_cast<std::size_t>(predicted[i]));
    }
    return cm;
}

struct BinaryCounts {
    std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
};

/// One-vs-rest reduction of class `positive`.
inline BinaryCounts binary_counts(const ConfusionMatrix& cm, std::size_t positive) {
    BinaryCounts c;
    for (std::size_t a = 0; a < cm.k; ++a)
        for (std::size_t p = 0; p < cm.k; ++p) {
            const std::uint64_t n = cm.at(a, p);
            if (a == positive && p == positive) c.tp += n;
            else if (a == positive) c.fn += n;
            else if (p == positive) c.fp += n;
            else c.tn += n;
        }
    return c;
}

/// Degenerate denominators (no predicted / no actual positives) yield 0 with
/// the flag set, so batch evaluation never aborts.
struct MetricValue {
    double value = 0.0;
    bool degenerate = false;
};

inline MetricValue precision(const BinaryCounts& c) {
    if (c.tp + c.fp == 0) return {0.0, true};
    return {static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp), false};
}

inline MetricValue recall(const BinaryCounts& c) {
    if (c.tp + c.fn == 0) return {0.0, true};
    return {static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn), false};
}

inline double f1(double precision_value, double recall_value) {
    if (precision_value + recall_value == 0.0) return 0.0;
    return 2.0 * precision_value * recall_value / (precision_value + recall_value);
}

inline double accuracy(const BinaryCounts& c) {
    const std::uint64_t total = c.tp + c.tn + c.fp + c.fn;
    if (total == 0) return 0.0;
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
}

inline double accuracy(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) return 0.0;
    std::uint64_t diag = 0;
    for (std::size_t i = 0; i < cm.k; ++i) diag += cm.at(i, i);
    return static_cast<double>(diag) / static_cast<double>(total);
}

/// Mann-Whitney ROC-AUC: probability a random positive outranks a random
/// negative, ties counted 0.5. Midrank evaluation, exact for the pairwise
/// definition.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ShapeError("roc_auc: score/label length mismatch");
    std::size_t n_pos = 0, n_neg = 0;
    for (const int y : labels) (y ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw UndefinedMetricError("roc_auc undefined: needs at least one positive and one negative");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // midranks over tie runs; rank sums of halves are exact in double
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]]) rank_sum_pos += midrank;
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

/// Macro-averaged (unweighted) one-vs-rest precision/recall/F1 + accuracy.
struct MacroMetrics {
    double precision = 0.0, recall = 0.0, f1 = 0.0, accuracy = 0.0;
};

inline MacroMetrics macro_metrics(const ConfusionMatrix& cm) {
    if (cm.k < 2) throw ShapeError("macro_metrics needs k >= 2");
    MacroMetrics m;
    for (std::size_t c = 0; c < cm.k; ++c) {
        const BinaryCounts bc = binary_counts(cm, c);
        const double p = precision(bc).value;
        const double r = recall(bc).value;
        m.precision += p;
        m.recall += r;
        m.f1 += f1(p, r);
    }
    const double inv_k = 1.0 / static_cast<double>(cm.k);
    m.precision *= inv_k;
    m.recall *= inv_k;
    m.f1 *= inv_k;
    m.accuracy = accuracy(cm);
    return m;
}

/// Full evaluation record: binary tasks carry AUC and treat class 1
/// (malignant) as positive; multiclass tasks carry macro averages.
struct MetricsReport {
    std::size_t k = 0;
    bool macro = false;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
    std::optional<double> auc;
    std::optional<double> loss;
    bool degenerate_precision = false, degenerate_recall = false;
    ConfusionMatrix confusion;
    std::vector<std::string> labels;

    std::string to_key_values() const {
        std::ostringstream os;
        os << std::setprecision(6);
        os << "classes=" << k << "\n";
        os << "averaging=" << (macro ? "macro" : "binary") << "\n";
        os << "accuracy=" << accuracy << "\n";
        os << "precision=" << precision << "\n";
        os << "recall=" << recall << "\n";
        os << "f1=" << f1 << "\n";
        if (auc) os << "auc=" << *auc << "\n";
        if (loss) os << "loss=" << *loss << "\n";
        if (degenerate_precision) os << "precision_degenerate=1\n";
        if (degenerate_recall) os << "recall_degenerate=1\n";
        return os.str();
    }

    static std::string csv_header() { return "classes,averaging,accuracy,precision,recall,f1,auc"; }

    std::string to_csv_row() const {
        std::ostringstream os;
        os << std::setprecision(6);
        os << k << "," << (macro ? "macro" : "binary") << "," << accuracy << "," << precision << ","
           << recall << "," << f1 << ",";
        if (auc) os << *auc;
        return os.str();
    }
};

/// Assemble a report from labels/predictions (+ scores for binary AUC).
inline MetricsReport make_report(const std::vector<int>& predicted, const std::vector<int>& actual,
                                 std::size_t k, const std::vector<double>* scores = nullptr,
                                 std::vector<std::string> class_labels = {}) {
    MetricsReport r;
    r.k = k;
    r.confusion = confusion_matrix(predicted, actual, k);
    r.labels = std::move(class_labels);
    if (k == 2) {
        const BinaryCounts bc = binary_counts(r.confusion, 1);  // positive = malignant
        const MetricValue p = precision(bc), rec = recall(bc);
        r.precision = p.value;
        r.recall = rec.value;
        r.degenerate_precision = p.degenerate;
        r.degenerate_recall = rec.degenerate;
        r.f1 = f1(p.value, rec.value);
        r.accuracy = accuracy(bc);
        if (scores) {
            bool single_class = true;
            for (std::size_t i = 1; i < actual.size(); ++i)
                if (actual[i] != actual[0]) { single_class = false; break; }
            if (!single_class) r.auc = roc_auc(*scores, actual);
        }
    } else {
        const MacroMetrics m = macro_metrics(r.confusion);
        r.macro = true;
        r.precision = m.precision;
        r.recall = m.recall;
        r.f1 = m.f1;
        r.accuracy = m.accuracy;
    }
    return r;
}

}  // namespace histofuse
