#pragma once

#include <cmath>

#include "histofuse/errors.hpp"
#include "histofuse/image.hpp"
#include "histofuse/rng.hpp"
#include "histofuse/tensor.hpp"

namespace histofuse {

/// Training-time augmentation ranges (fractions of the image extent; shear
/// in radians). Rescale by 1/255 happens at load time, not here.
struct AugmentationConfig {
    double width_shift = 0.2;
    double height_shift = 0.2;
    double shear = 0.2;
    double zoom = 0.2;  // factor sampled in [1-zoom, 1+zoom]
    bool horizontal_flip = true;

    void validate() const {
        if (width_shift < 0 || width_shift >= 1 || height_shift < 0 || height_shift >= 1 ||
            shear < 0 || shear >= 1 || zoom < 0 || zoom >= 1)
            throw ConfigError("augmentation fractions must be in [0,1)");
    }
};

/// One sampled transform. Conventions (output -> input mapping, about the
/// image center): positive tx/ty move content toward +x/+y; zoom factor
/// scales output coordinates into the input, so z > 1 shrinks content; shear
/// matrix is [[1, -sin s], [0, cos s]].
struct AugmentSample {
    bool flip = false;
    double tx = 0.0, ty = 0.0;  // pixels
    double shear = 0.0;         // radians
    double zoom = 1.0;
};

/// Draw order is fixed: flip, tx, ty, shear, zoom.
template <typename T>
AugmentSample sample_augment(const Tensor<T>& img, const AugmentationConfig& cfg, Rng& rng) {
    cfg.validate();
    const double h = static_cast<double>(img.extent(0));
    const double w = static_cast<double>(img.extent(1));
    AugmentSample s;
    if (cfg.horizontal_flip) s.flip = rng.uniform() < 0.5;
    s.tx = rng.uniform(-cfg.width_shift, cfg.width_shift) * w;
    s.ty = rng.uniform(-cfg.height_shift, cfg.height_shift) * h;
    s.shear = rng.uniform(-cfg.shear, cfg.shear);
    s.zoom = rng.uniform(1.0 - cfg.zoom, 1.0 + cfg.zoom);
    return s;
}

/// Mirror the x axis about the image center.
template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& img) {
    if (img.rank() != 3) throw ShapeError("flip_horizontal expects [H,W,C]");
    const std::size_t h = img.extent(0), w = img.extent(1), c = img.extent(2);
    Tensor<T> out(img.shape());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ci = 0; ci < c; ++ci)
                out[(y * w + x) * c + ci] = img[(y * w + (w - 1 - x)) * c + ci];
    return out;
}

/// Apply a sampled transform: inverse-map every output pixel and bilinear
/// sample with border clamp (nearest-edge fill).
template <typename T>
Tensor<T> apply_augment(const Tensor<T>& img, const AugmentSample& s) {
    if (img.rank() != 3) throw ShapeError("apply_augment expects [H,W,C]");
    const Tensor<T>& src = s.flip ? flip_horizontal(img) : img;
    if (s.tx == 0.0 && s.ty == 0.0 && s.shear == 0.0 && s.zoom == 1.0) return src;

    const std::size_t h = img.extent(0), w = img.extent(1), c = img.extent(2);
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double sin_s = std::sin(s.shear);
    const double cos_s = std::cos(s.shear);

    Tensor<T> out(img.shape());
    for (std::size_t oy = 0; oy < h; ++oy) {
        for (std::size_t ox = 0; ox < w; ++ox) {
            const double u = (static_cast<double>(ox) - cx - s.tx) * s.zoom;
            const double v = (static_cast<double>(oy) - cy - s.ty) * s.zoom;
            const double in_x = cx + u - sin_s * v;
            const double in_y = cy + cos_s * v;
            for (std::size_t ci = 0; ci < c; ++ci)
                out[(oy * w + ox) * c + ci] = bilinear_sample(src, in_y, in_x, ci);
        }
    }
    return out;
}

/// Sample + apply; a pure function of (image, config, rng state).
template <typename T>
Tensor<T> augment(const Tensor<T>& img, const AugmentationConfig& cfg, Rng& rng) {
    return apply_augment(img, sample_augment(img, cfg, rng));
}

}  // namespace histofuse
