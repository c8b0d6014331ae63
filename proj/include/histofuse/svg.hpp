#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "histofuse/metrics.hpp"
#include "histofuse/train.hpp"

namespace histofuse {

namespace detail {

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (const char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

struct Panel {
    double x0, y0, width, height;
    double min_x, max_x, min_y, max_y;

    double px(double x) const {
        if (max_x == min_x) return x0 + width / 2.0;
        return x0 + (x - min_x) / (max_x - min_x) * width;
    }
    double py(double y) const {
        if (max_y == min_y) return y0 + height / 2.0;
        return y0 + height - (y - min_y) / (max_y - min_y) * height;
    }
};

inline void draw_series(std::ostringstream& os, const Panel& p, const std::vector<double>& xs,
                        const std::vector<double>& ys, const std::string& color,
                        const std::string& name) {
    if (xs.size() >= 2) {
        os << "<polyline class=\"series-" << name << "\" fill=\"none\" stroke=\"" << color
           << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < xs.size(); ++i)
            os << (i ? " " : "") << fmt(p.px(xs[i])) << "," << fmt(p.py(ys[i]));
        os << "\"/>\n";
    }
    for (std::size_t i = 0; i < xs.size(); ++i)
        os << "<circle class=\"series-" << name << "\" cx=\"" << fmt(p.px(xs[i])) << "\" cy=\""
           << fmt(p.py(ys[i])) << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
}

inline void draw_axes(std::ostringstream& os, const Panel& p, const std::string& title) {
    os << "<rect x=\"" << fmt(p.x0) << "\" y=\"" << fmt(p.y0) << "\" width=\"" << fmt(p.width)
       << "\" height=\"" << fmt(p.height) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    os << "<text x=\"" << fmt(p.x0) << "\" y=\"" << fmt(p.y0 - 6) << "\" font-size=\"12\">"
       << xml_escape(title) << "</text>\n";
    os << "<text x=\"" << fmt(p.x0) << "\" y=\"" << fmt(p.y0 + p.height + 14)
       << "\" font-size=\"10\">" << fmt(p.min_x) << "</text>\n";
    os << "<text x=\"" << fmt(p.x0 + p.width - 10) << "\" y=\"" << fmt(p.y0 + p.height + 14)
       << "\" font-size=\"10\">" << fmt(p.max_x) << "</text>\n";
    os << "<text x=\"" << fmt(p.x0 - 4) << "\" y=\"" << fmt(p.y0 + p.height)
       << "\" font-size=\"10\" text-anchor=\"end\">" << fmt(p.min_y) << "</text>\n";
    os << "<text x=\"" << fmt(p.x0 - 4) << "\" y=\"" << fmt(p.y0 + 8)
       << "\" font-size=\"10\" text-anchor=\"end\">" << fmt(p.max_y) << "</text>\n";
}

}  // namespace detail

/// Accuracy/loss vs epoch chart: loss panel on top, accuracy below, train
/// and validation series in each, one marker per epoch.
inline std::string history_curves_svg(const EpochHistory& history) {
    const auto& rows = history.rows;
    std::vector<double> xs, tl, vl, ta, va;
    for (const auto& r : rows) {
        xs.push_back(static_cast<double>(r.epoch));
        tl.push_back(r.train_loss);
        vl.push_back(r.val_loss);
        ta.push_back(r.train_acc);
        va.push_back(r.val_acc);
    }
    auto min_of = [](const std::vector<double>& a, const std::vector<double>& b) {
        double m = a[0];
        for (const double v : a) m = std::min(m, v);
        for (const double v : b) m = std::min(m, v);
        return m;
    };
    auto max_of = [](const std::vector<double>& a, const std::vector<double>& b) {
        double m = a[0];
        for (const double v : a) m = std::max(m, v);
        for (const double v : b) m = std::max(m, v);
        return m;
    };

    const double width = 640, height = 520;
    detail::Panel loss{60, 30, width - 90, 190, xs.front(), xs.back(), min_of(tl, vl), max_of(tl, vl)};
    detail::Panel acc{60, 300, width - 90, 190, xs.front(), xs.back(), min_of(ta, va), max_of(ta, va)};

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    detail::draw_axes(os, loss, "loss vs epoch");
    detail::draw_series(os, loss, xs, tl, "#1f77b4", "train_loss");
    detail::draw_series(os, loss, xs, vl, "#d62728", "val_loss");
    detail::draw_axes(os, acc, "accuracy vs epoch");
    detail::draw_series(os, acc, xs, ta, "#1f77b4", "train_acc");
    detail::draw_series(os, acc, xs, va, "#d62728", "val_acc");
    os << "<text x=\"60\" y=\"250\" font-size=\"11\" fill=\"#1f77b4\">train</text>\n";
    os << "<text x=\"110\" y=\"250\" font-size=\"11\" fill=\"#d62728\">validation</text>\n";
    os << "</svg>\n";
    return os.str();
}

/// Confusion heatmap: one rect per cell shaded by count, the exact count as
/// a text label in each cell.
inline std::string confusion_heatmap_svg(const ConfusionMatrix& cm,
                                         const std::vector<std::string>& labels = {}) {
    const std::size_t k = cm.k;
    const double cell = 64, margin = 70;
    const double width = margin + cell * static_cast<double>(k) + 20;
    const double height = margin + cell * static_cast<double>(k) + 20;
    std::uint64_t max_count = 1;
    for (const auto v : cm.counts) max_count = std::max(max_count, v);

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << margin << "\" y=\"20\" font-size=\"12\">predicted (columns) vs actual (rows)"
       << "</text>\n";
    for (std::size_t a = 0; a < k; ++a) {
        const std::string row_label =
            a < labels.size() ? labels[a] : "class " + std::to_string(a);
        os << "<text x=\"" << margin - 6 << "\" y=\""
           << detail::fmt(margin + (static_cast<double>(a) + 0.58) * cell)
           << "\" font-size=\"11\" text-anchor=\"end\">" << detail::xml_escape(row_label)
           << "</text>\n";
        const std::string col_label = row_label;
        os << "<text x=\"" << detail::fmt(margin + (static_cast<double>(a) + 0.5) * cell) << "\" y=\""
           << margin - 8 << "\" font-size=\"11\" text-anchor=\"middle\">"
           << detail::xml_escape(col_label) << "</text>\n";
    }
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t p = 0; p < k; ++p) {
            const double x = margin + static_cast<double>(p) * cell;
            const double y = margin + static_cast<double>(a) * cell;
            const double frac = static_cast<double>(cm.at(a, p)) / static_cast<double>(max_count);
            const int shade = static_cast<int>(std::lround(255.0 - 175.0 * frac));
            os << "<rect x=\"" << detail::fmt(x) << "\" y=\"" << detail::fmt(y) << "\" width=\"" << cell
               << "\" height=\"" << cell << "\" fill=\"rgb(" << shade << "," << shade
               << ",255)\" stroke=\"#666\"/>\n";
            os << "<text class=\"cell\" x=\"" << detail::fmt(x + cell / 2) << "\" y=\""
               << detail::fmt(y + cell / 2 + 4) << "\" font-size=\"13\" text-anchor=\"middle\">"
               << cm.at(a, p) << "</text>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace histofuse
