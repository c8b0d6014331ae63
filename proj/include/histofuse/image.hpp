#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/tensor.hpp"

namespace histofuse {

/// 8-bit interleaved RGB image.
struct RgbImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  // height*width*3

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
};

namespace detail {

inline int ppm_next_token(std::istream& in, std::string& tok) {
    tok.clear();
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {  // comment to end of line
            while ((ch = in.get()) != EOF && ch != '\n') {}
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return 1;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok.empty() ? 0 : 1;
}

}  // namespace detail

/// Decode a binary PPM (P6) or PGM (P5, replicated to 3 channels), maxval 255.
/// The canonical ingest format; content is sniffed, the extension ignored.
inline RgbImage read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image file '" + path + "'");
    std::string magic;
    if (!detail::ppm_next_token(in, magic) || (magic != "P6" && magic != "P5"))
        throw ParseError("'" + path + "': not a binary PPM/PGM (magic '" + magic + "')");
    std::string wtok, htok, mtok;
    if (!detail::ppm_next_token(in, wtok) || !detail::ppm_next_token(in, htok) ||
        !detail::ppm_next_token(in, mtok))
        throw ParseError("'" + path + "': truncated PPM header");
    long w = 0, h = 0, maxval = 0;
    try {
        w = std::stol(wtok);
        h = std::stol(htok);
        maxval = std::stol(mtok);
    } catch (const std::exception&) {
        throw ParseError("'" + path + "': non-numeric PPM header field");
    }
    if (w <= 0 || h <= 0) throw ParseError("'" + path + "': invalid PPM dimensions");
    if (maxval != 255) throw ParseError("'" + path + "': unsupported PPM maxval " + mtok);

    const std::size_t channels = magic == "P6" ? 3 : 1;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * channels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw ParseError("'" + path + "': truncated PPM pixel data");

    RgbImage img;
    img.width = static_cast<std::size_t>(w);
    img.height = static_cast<std::size_t>(h);
    img.pixels.resize(img.width * img.height * 3);
    if (channels == 3) {
        img.pixels = std::move(raw);
    } else {
        for (std::size_t i = 0; i < raw.size(); ++i)
            img.pixels[i * 3] = img.pixels[i * 3 + 1] = img.pixels[i * 3 + 2] = raw[i];
    }
    return img;
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image file '" + path + "'");
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

/// Bilinear sample with pixel centers at integer coordinates; coordinates
/// are clamped to the border (nearest-edge fill).
template <typename T>
T bilinear_sample(const Tensor<T>& img, double y, double x, std::size_t c) {
    const std::size_t h = img.extent(0), w = img.extent(1), ch = img.extent(2);
    const double yc = std::clamp(y, 0.0, static_cast<double>(h - 1));
    const double xc = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const std::size_t y0 = static_cast<std::size_t>(yc);
    const std::size_t x0 = static_cast<std::size_t>(xc);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const std::size_t x1 = std::min(x0 + 1, w - 1);
    const double fy = yc - static_cast<double>(y0);
    const double fx = xc - static_cast<double>(x0);
    const double v00 = static_cast<double>(img[(y0 * w + x0) * ch + c]);
    const double v01 = static_cast<double>(img[(y0 * w + x1) * ch + c]);
    const double v10 = static_cast<double>(img[(y1 * w + x0) * ch + c]);
    const double v11 = static_cast<double>(img[(y1 * w + x1) * ch + c]);
    return static_cast<T>((1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                          fy * ((1.0 - fx) * v10 + fx * v11));
}

/// Bilinear resize, half-pixel convention (output centers map to
/// (i+0.5)*scale-0.5 in the input).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& img, std::size_t out_h, std::size_t out_w) {
    if (img.rank() != 3) throw ShapeError("resize_bilinear expects [H,W,C]");
    const std::size_t h = img.extent(0), w = img.extent(1), c = img.extent(2);
    if (h == out_h && w == out_w) return img;
    Tensor<T> out({out_h, out_w, c});
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        const double y = (static_cast<double>(oy) + 0.5) * sy - 0.5;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            const double x = (static_cast<double>(ox) + 0.5) * sx - 0.5;
            for (std::size_t ci = 0; ci < c; ++ci)
                out[(oy * out_w + ox) * c + ci] = bilinear_sample(img, y, x, ci);
        }
    }
    return out;
}

/// Decode, resize to S x S, rescale by 1/255 into [0,1].
template <typename T>
Tensor<T> load_image(const std::string& path, std::size_t target) {
    const RgbImage raw = read_ppm(path);
    Tensor<T> img({raw.height, raw.width, 3});
    const T inv = static_cast<T>(1.0 / 255.0);
    for (std::size_t i = 0; i < raw.pixels.size(); ++i)
        img[i] = static_cast<T>(raw.pixels[i]) * inv;
    return resize_bilinear(img, target, target);
}

/// Quantize a [0,1] tensor back to 8-bit RGB (synthetic-set export).
template <typename T>
RgbImage to_rgb8(const Tensor<T>& img) {
    if (img.rank() != 3 || img.extent(2) != 3) throw ShapeError("to_rgb8 expects [H,W,3]");
    RgbImage out;
    out.height = img.extent(0);
    out.width = img.extent(1);
    out.pixels.resize(img.numel());
    for (std::size_t i = 0; i < img.numel(); ++i) {
        const double v = std::clamp(static_cast<double>(img[i]), 0.0, 1.0);
        out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

}  // namespace histofuse
