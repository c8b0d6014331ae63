#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/rng.hpp"
#include "histofuse/tensor.hpp"
#include "histofuse/train.hpp"

namespace histofuse {

/// Desk-scale stand-in corpus: each class is a distinct procedural texture
/// (orientation-and-frequency-coded stripes plus a blob field) with additive
/// noise. Classes below k/2 get the benign (eosin-pink) tint family, the
/// rest the malignant (hematoxylin-blue) family; within a family each
/// subtype modulates the channel gains with its own +-code, so super-class
/// and subtype are both carried by stain-like color as well as geometry.
/// Fully reproducible per seed.
template <typename T>
LabeledDataset<T> make_synthetic_dataset(std::size_t classes, std::size_t per_class,
                                         std::size_t size, std::uint64_t seed) {
    if (classes < 1 || classes > 8) throw ConfigError("make_synthetic_dataset: classes must be 1..8");
    if (per_class < 1 || size < 8) throw ConfigError("make_synthetic_dataset: need per_class >= 1, size >= 8");

    LabeledDataset<T> ds;
    ds.num_classes = classes;
    const double s = static_cast<double>(size);
    const double two_pi = 6.283185307179586476925286766559;

    for (std::size_t c = 0; c < classes; ++c) {
        const double theta = 3.14159265358979323846 * static_cast<double>(c) / static_cast<double>(classes);
        const double freq = 3.0 + 2.0 * static_cast<double>(c % 4);
        const double phase = two_pi * std::fmod(0.6180339887 * static_cast<double>(c + 1), 1.0);
        const double ct = std::cos(theta), st = std::sin(theta);
        const double ct2 = std::cos(theta + 1.0471975511965977), st2 = std::sin(theta + 1.0471975511965977);
        const bool malignant = 2 * c >= classes;

        // per-subtype +-code over the channel gains, same code table in both
        // tint families
        static constexpr double kCode[4][3] = {
            {+1, +1, +1}, {+1, -1, -1}, {-1, +1, -1}, {-1, -1, +1}};
        const double* code = kCode[c % 4];
        const double gain_r = (malignant ? 0.62 : 0.92) * (1.0 + 0.10 * code[0]);
        const double gain_g = (malignant ? 0.66 : 0.62) * (1.0 + 0.10 * code[1]);
        const double gain_b = (malignant ? 0.92 : 0.74) * (1.0 + 0.10 * code[2]);

        // class-fixed blob field
        Rng class_rng = Rng(seed).fork(Rng::mix(0xb10b5, c));
        const std::size_t n_blobs = 2 + c % 3;
        std::vector<double> bx(n_blobs), by(n_blobs);
        for (std::size_t b = 0; b < n_blobs; ++b) {
            bx[b] = class_rng.uniform(0.15, 0.85) * s;
            by[b] = class_rng.uniform(0.15, 0.85) * s;
        }
        const double sigma = s / 8.0;

        for (std::size_t i = 0; i < per_class; ++i) {
            Rng img_rng = Rng(seed).fork(Rng::mix(c * 1000003 + i, 0x1a6e5));
            const double jitter = img_rng.uniform(-0.15, 0.15);
            Tensor<T> img({size, size, 3});
            for (std::size_t y = 0; y < size; ++y) {
                for (std::size_t x = 0; x < size; ++x) {
                    const double xf = static_cast<double>(x), yf = static_cast<double>(y);
                    double v = 0.5 +
                               0.28 * std::sin(two_pi * freq * (xf * ct + yf * st) / s + phase + jitter) +
                               0.12 * std::sin(two_pi * (freq + 3.0) * (xf * ct2 + yf * st2) / s + 2.0 * phase);
                    for (std::size_t b = 0; b < n_blobs; ++b) {
                        const double dx = xf - bx[b], dy = yf - by[b];
                        v += 0.15 * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                    }
                    const double noise = img_rng.normal() * 0.06;
                    const double r = gain_r * v + (malignant ? 0.10 : 0.08);
                    const double g = gain_g * v + 0.12;
                    const double bl = gain_b * v + (malignant ? 0.08 : 0.10);
                    auto put = [&](std::size_t ch, double val) {
                        const double clipped = std::min(1.0, std::max(0.0, val + noise));
                        img[(y * size + x) * 3 + ch] = static_cast<T>(clipped);
                    };
                    put(0, r);
                    put(1, g);
                    put(2, bl);
                }
            }
            ds.images.push_back(std::move(img));
            ds.labels.push_back(static_cast<int>(c));
        }
    }
    return ds;
}

/// Collapse an 8-class synthetic set to its binary super-classes
/// (0..k/2-1 -> benign 0, the rest -> malignant 1).
template <typename T>
LabeledDataset<T> to_binary_superclasses(const LabeledDataset<T>& ds) {
    LabeledDataset<T> out;
    out.images = ds.images;
    out.num_classes = 2;
    out.labels.reserve(ds.labels.size());
    for (const int l : ds.labels)
        out.labels.push_back(2 * static_cast<std::size_t>(l) >= ds.num_classes ? 1 : 0);
    return out;
}

/// Slice one super-class out of an 8-class set, relabelling to 0..3.
template <typename T>
LabeledDataset<T> slice_category(const LabeledDataset<T>& ds, bool malignant) {
    if (ds.num_classes % 2 != 0)
        throw ConfigError("slice_category needs an even class count");
    const std::size_t half = ds.num_classes / 2;
    LabeledDataset<T> out;
    out.num_classes = half;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const std::size_t l = static_cast<std::size_t>(ds.labels[i]);
        const bool is_mal = l >= half;
        if (is_mal != malignant) continue;
        out.images.push_back(ds.images[i]);
        out.labels.push_back(static_cast<int>(is_mal ? l - half : l));
    }
    return out;
}

/// Deterministic per-label stratified split of an in-memory set.
template <typename T>
std::pair<LabeledDataset<T>, LabeledDataset<T>> split_labeled(const LabeledDataset<T>& ds,
                                                              double val_fraction,
                                                              std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw ConfigError("split_labeled: fraction must be in (0,1)");
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.labels.size(); ++i)
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

    std::vector<bool> to_val(ds.images.size(), false);
    Rng rng(seed);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const auto& idx = by_class[c];
        if (idx.size() < 2) continue;
        const std::size_t n_val =
            static_cast<std::size_t>(std::floor(static_cast<double>(idx.size()) * val_fraction));
        Rng sub = rng.fork(c);
        for (const std::size_t j : sub.sample_indices(idx.size(), n_val)) to_val[idx[j]] = true;
    }
    LabeledDataset<T> train, val;
    train.num_classes = val.num_classes = ds.num_classes;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        auto& dst = to_val[i] ? val : train;
        dst.images.push_back(ds.images[i]);
        dst.labels.push_back(ds.labels[i]);
    }
    return {std::move(train), std::move(val)};
}

}  // namespace histofuse
