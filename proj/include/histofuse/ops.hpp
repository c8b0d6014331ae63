#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/rng.hpp"
#include "histofuse/tape.hpp"
#include "histofuse/tensor.hpp"

namespace histofuse {

enum class Mode { train, infer };

namespace detail {

/// Fixed accumulation order everywhere: row-major over the reduced axes.
/// Oracles that must match bit-for-bit replicate exactly this order.
template <typename T>
inline void check_positive_stride(T s, const char* what) {
    if (s < 1) throw ConfigError(std::string(what) + ": stride must be >= 1");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// spatial ops
// ---------------------------------------------------------------------------

/// Valid-padding cross-correlation. x: [(N,)H,W,Cin], kernels: [Kh,Kw,Cin,Cout],
/// bias: [Cout]. Output extent floor((H-Kh)/stride)+1. Each output cell is
/// bias + sum over (ky,kx,ci) in row-major order.
template <typename T>
NodeId conv2d(Tape<T>& tape, NodeId x_id, NodeId k_id, NodeId b_id, std::size_t stride) {
    detail::check_positive_stride(static_cast<long>(stride), "conv2d");
    const Tensor<T>& x = tape.value(x_id);
    const Tensor<T>& k = tape.value(k_id);
    const Tensor<T>& b = tape.value(b_id);
    const SpatialDims d = spatial_dims(x, "conv2d input");
    if (k.rank() != 4)
        throw ShapeError("conv2d kernels: expected [Kh,Kw,Cin,Cout], got " + k.shape_string());
    const std::size_t kh = k.extent(0), kw = k.extent(1), cin = k.extent(2), cout = k.extent(3);
    if (cin != d.c)
        throw ShapeError("conv2d channel mismatch: input has " + std::to_string(d.c) +
                         " channels, kernels expect " + std::to_string(cin));
    if (kh > d.h || kw > d.w)
        throw ShapeError("conv2d kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than input " + std::to_string(d.h) + "x" + std::to_string(d.w));
    if (b.rank() != 1 || b.extent(0) != cout)
        throw ShapeError("conv2d bias: expected [" + std::to_string(cout) + "], got " + b.shape_string());

    const std::size_t oh = (d.h - kh) / stride + 1;
    const std::size_t ow = (d.w - kw) / stride + 1;
    std::vector<std::size_t> out_shape =
        d.batched ? std::vector<std::size_t>{d.n, oh, ow, cout} : std::vector<std::size_t>{oh, ow, cout};
    Tensor<T> out(out_shape);

    const T* xp = x.data();
    const T* kp = k.data();
    const T* bp = b.data();
    T* op = out.data();
    const std::size_t in_img = d.h * d.w * d.c;
    const std::size_t out_img = oh * ow * cout;
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                T* orow = op + n * out_img + (oy * ow + ox) * cout;
                for (std::size_t co = 0; co < cout; ++co) orow[co] = bp[co];
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const std::size_t iy = oy * stride + ky;
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const std::size_t ix = ox * stride + kx;
                        const T* xrow = xp + n * in_img + (iy * d.w + ix) * d.c;
                        const T* krow = kp + (ky * kw + kx) * cin * cout;
                        for (std::size_t ci = 0; ci < cin; ++ci) {
                            const T v = xrow[ci];
                            const T* kc = krow + ci * cout;
                            for (std::size_t co = 0; co < cout; ++co) orow[co] += v * kc[co];
                        }
                    }
                }
            }
        }
    }

    return tape.push(std::move(out), {x_id, k_id, b_id},
                     [x_id, k_id, b_id, d, kh, kw, cin, cout, oh, ow, stride](Tape<T>& t, NodeId self) {
                         const Tensor<T>& g = t.grad(self);
                         const Tensor<T>& xv = t.value(x_id);
                         const Tensor<T>& kv = t.value(k_id);
                         Tensor<T>& gx = t.grad(x_id);
                         Tensor<T>& gk = t.grad(k_id);
                         Tensor<T>& gb = t.grad(b_id);
                         const T* gp = g.data();
                         const T* xp = xv.data();
                         const T* kp = kv.data();
                         const std::size_t in_img = d.h * d.w * d.c;
                         const std::size_t out_img = oh * ow * cout;
                         for (std::size_t n = 0; n < d.n; ++n) {
                             for (std::size_t oy = 0; oy < oh; ++oy) {
                                 for (std::size_t ox = 0; ox < ow; ++ox) {
                                     const T* grow = gp + n * out_img + (oy * ow + ox) * cout;
                                     for (std::size_t co = 0; co < cout; ++co) gb[co] += grow[co];
                                     for (std::size_t ky = 0; ky < kh; ++ky) {
                                         const std::size_t iy = oy * stride + ky;
                                         for (std::size_t kx = 0; kx < kw; ++kx) {
                                             const std::size_t ix = ox * stride + kx;
                                             const std::size_t xoff = n * in_img + (iy * d.w + ix) * d.c;
                                             const std::size_t koff = (ky * kw + kx) * cin * cout;
                                             for (std::size_t ci = 0; ci < cin; ++ci) {
                                                 const T v = xp[xoff + ci];
                                                 const T* kc = kp + koff + ci * cout;
                                                 T* gkc = gk.data() + koff + ci * cout;
                                                 T acc = T(0);
                                                 for (std::size_t co = 0; co < cout; ++co) {
                                                     gkc[co] += v * grow[co];
                                                     acc += kc[co] * grow[co];
                                                 }
                                                 gx[xoff + ci] += acc;
                                             }
                                         }
                                     }
                                 }
                             }
                         }
                     });
}

/// Max pooling; the argmax per window is recorded for backprop (ties resolve
/// to the first maximum in scan order).
template <typename T>
NodeId maxpool2d(Tape<T>& tape, NodeId x_id, std::size_t ph, std::size_t pw, std::size_t sh,
                 std::size_t sw) {
    detail::check_positive_stride(static_cast<long>(sh), "maxpool2d");
    detail::check_positive_stride(static_cast<long>(sw), "maxpool2d");
    const Tensor<T>& x = tape.value(x_id);
    const SpatialDims d = spatial_dims(x, "maxpool2d input");
    if (ph == 0 || pw == 0 || ph > d.h || pw > d.w)
        throw ShapeError("maxpool2d window " + std::to_string(ph) + "x" + std::to_string(pw) +
                         " does not fit input " + std::to_string(d.h) + "x" + std::to_string(d.w));
    const std::size_t oh = (d.h - ph) / sh + 1;
    const std::size_t ow = (d.w - pw) / sw + 1;
    std::vector<std::size_t> out_shape =
        d.batched ? std::vector<std::size_t>{d.n, oh, ow, d.c} : std::vector<std::size_t>{oh, ow, d.c};
    Tensor<T> out(out_shape);
    std::vector<std::size_t> argmax(out.numel());

    const T* xp = x.data();
    T* op = out.data();
    const std::size_t in_img = d.h * d.w * d.c;
    const std::size_t out_img = oh * ow * d.c;
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                for (std::size_t c = 0; c < d.c; ++c) {
                    std::size_t best_idx = n * in_img + (oy * sh * d.w + ox * sw) * d.c + c;
                    T best = xp[best_idx];
                    for (std::size_t wy = 0; wy < ph; ++wy) {
                        for (std::size_t wx = 0; wx < pw; ++wx) {
                            const std::size_t idx =
                                n * in_img + ((oy * sh + wy) * d.w + (ox * sw + wx)) * d.c + c;
                            if (xp[idx] > best) {
                                best = xp[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    const std::size_t oidx = n * out_img + (oy * ow + ox) * d.c + c;
                    op[oidx] = best;
                    argmax[oidx] = best_idx;
                }
            }
        }
    }

    return tape.push(std::move(out), {x_id}, [x_id, argmax](Tape<T>& t, NodeId self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(x_id);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[argmax[i]] += g[i];
    });
}

/// Average pooling (used by the backbone transition stages).
template <typename T>
NodeId avgpool2d(Tape<T>& tape, NodeId x_id, std::size_t ph, std::size_t pw, std::size_t sh,
                 std::size_t sw) {
    detail::check_positive_stride(static_cast<long>(sh), "avgpool2d");
    detail::check_positive_stride(static_cast<long>(sw), "avgpool2d");
    const Tensor<T>& x = tape.value(x_id);
    const SpatialDims d = spatial_dims(x, "avgpool2d input");
    if (ph == 0 || pw == 0 || ph > d.h || pw > d.w)
        throw ShapeError("avgpool2d window " + std::to_string(ph) + "x" + std::to_string(pw) +
                         " does not fit input " + std::to_string(d.h) + "x" + std::to_string(d.w));
    const std::size_t oh = (d.h - ph) / sh + 1;
    const std::size_t ow = (d.w - pw) / sw + 1;
    std::vector<std::size_t> out_shape =
        d.batched ? std::vector<std::size_t>{d.n, oh, ow, d.c} : std::vector<std::size_t>{oh, ow, d.c};
    Tensor<T> out(out_shape);
    const T inv = T(1) / static_cast<T>(ph * pw);

    const T* xp = x.data();
    T* op = out.data();
    const std::size_t in_img = d.h * d.w * d.c;
    const std::size_t out_img = oh * ow * d.c;
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox)
                for (std::size_t c = 0; c < d.c; ++c) {
                    T acc = T(0);
                    for (std::size_t wy = 0; wy < ph; ++wy)
                        for (std::size_t wx = 0; wx < pw; ++wx)
                            acc += xp[n * in_img + ((oy * sh + wy) * d.w + (ox * sw + wx)) * d.c + c];
                    op[n * out_img + (oy * ow + ox) * d.c + c] = acc * inv;
                }

    return tape.push(std::move(out), {x_id},
                     [x_id, d, ph, pw, sh, sw, oh, ow, inv](Tape<T>& t, NodeId self) {
                         const Tensor<T>& g = t.grad(self);
                         Tensor<T>& gx = t.grad(x_id);
                         const std::size_t in_img = d.h * d.w * d.c;
                         const std::size_t out_img = oh * ow * d.c;
                         for (std::size_t n = 0; n < d.n; ++n)
                             for (std::size_t oy = 0; oy < oh; ++oy)
                                 for (std::size_t ox = 0; ox < ow; ++ox)
                                     for (std::size_t c = 0; c < d.c; ++c) {
                                         const T gv = g[n * out_img + (oy * ow + ox) * d.c + c] * inv;
                                         for (std::size_t wy = 0; wy < ph; ++wy)
                                             for (std::size_t wx = 0; wx < pw; ++wx)
                                                 gx[n * in_img +
                                                    ((oy * sh + wy) * d.w + (ox * sw + wx)) * d.c + c] += gv;
                                     }
                     });
}

/// Zero padding of the two spatial axes by `pad` on every side. Explicit so
/// convs themselves stay valid-padding; dense blocks pad before 3x3 convs.
template <typename T>
NodeId pad2d(Tape<T>& tape, NodeId x_id, std::size_t pad) {
    const Tensor<T>& x = tape.value(x_id);
    const SpatialDims d = spatial_dims(x, "pad2d input");
    const std::size_t oh = d.h + 2 * pad, ow = d.w + 2 * pad;
    std::vector<std::size_t> out_shape =
        d.batched ? std::vector<std::size_t>{d.n, oh, ow, d.c} : std::vector<std::size_t>{oh, ow, d.c};
    Tensor<T> out(out_shape);
    const T* xp = x.data();
    T* op = out.data();
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t y = 0; y < d.h; ++y)
            std::copy(xp + (n * d.h + y) * d.w * d.c, xp + (n * d.h + y + 1) * d.w * d.c,
                      op + (n * oh + y + pad) * ow * d.c + pad * d.c);

    return tape.push(std::move(out), {x_id}, [x_id, d, pad, oh, ow](Tape<T>& t, NodeId self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(x_id);
        const T* gp = g.data();
        for (std::size_t n = 0; n < d.n; ++n)
            for (std::size_t y = 0; y < d.h; ++y) {
                const T* src = gp + (n * oh + y + pad) * ow * d.c + pad * d.c;
                T* dst = gx.data() + (n * d.h + y) * d.w * d.c;
                for (std::size_t i = 0; i < d.w * d.c; ++i) dst[i] += src[i];
            }
    });
}

/// Per-channel spatial mean: [(N,)H,W,C] -> [(N,)C].
template <typename T>
NodeId global_avg_pool(Tape<T>& tape, NodeId x_id) {
    const Tensor<T>& x = tape.value(x_id);
    const SpatialDims d = spatial_dims(x, "global_avg_pool input");
    std::vector<std::size_t> out_shape =
        d.batched ? std::vector<std::size_t>{d.n, d.c} : std::vector<std::size_t>{d.c};
    Tensor<T> out(out_shape);
    const T inv = T(1) / static_cast<T>(d.h * d.w);
    const T* xp = x.data();
    for (std::size_t n = 0; n < d.n; ++n) {
        T* orow = out.data() + n * d.c;
        for (std::size_t i = 0; i < d.h * d.w; ++i) {
            const T* xrow = xp + (n * d.h * d.w + i) * d.c;
            for (std::size_t c = 0; c < d.c; ++c) orow[c] += xrow[c];
        }
        for (std::size_t c = 0; c < d.c; ++c) orow[c] *= inv;
    }

    return tape.push(std::move(out), {x_id}, [x_id, d, inv](Tape<T>& t, NodeId self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(x_id);
        for (std::size_t n = 0; n < d.n; ++n) {
            const T* grow = g.data() + n * d.c;
            for (std::size_t i = 0; i < d.h * d.w; ++i) {
                T* xrow = gx.data() + (n * d.h * d.w + i) * d.c;
                for (std::size_t c = 0; c < d.c; ++c) xrow[c] += grow[c] * inv;
            }
        }
    });
}

/// [(N,)H,W,C] -> [(N,)H*W*C]. Rank-1/2 inputs pass through unchanged.
template <typename T>
NodeId flatten(Tape<T>& tape, NodeId x_id) {
    const Tensor<T>& x = tape.value(x_id);
    if (x.rank() <= 2) {
        Tensor<T> copy = x;
        return tape.push(std::move(copy), {x_id}, [x_id](Tape<T>& t, NodeId self) {
            const Tensor<T>& g = t.grad(self);
            Tensor<T>& gx = t.grad(x_id);
            for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
        });
    }
    const SpatialDims d = spatial_dims(x, "flatten input");
    std::vector<std::size_t> out_shape = d.batched
                                             ? std::vector<std::size_t>{d.n, d.h * d.w * d.c}
                                             : std::vector<std::size_t>{d.h * d.w * d.c};
    Tensor<T> out = x.reshaped(out_shape);
    return tape.push(std::move(out), {x_id}, [x_id](Tape<T>& t, NodeId self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(x_id);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
}

// ---------------------------------------------------------------------------
// row ops
// ---------------------------------------------------------------------------

/// out = x W + b with x: [(N,)F], W: [F,M], b: [M].
template <typename T>
NodeId dense(Tape<T>& tape, NodeId x_id, NodeId w_id, NodeId b_id) {
    const Tensor<T>& x = tape.value(x_id);
    const Tensor<T>& w = tape.value(w_id);
    const Tensor<T>& b = tape.value(b_id);
    const RowDims d = row_dims(x, "dense input");
    if (w.rank() != 2) throw ShapeError("dense weights: expected [F,M], got " + w.shape_string());
    const std::size_t f = w.extent(0), m = w.extent(1);
    if (f != d.f)
        throw ShapeError("dense dimension mismatch: input width " + std::to_string(d.f) +
                         ", weights expect " + std::to_string(f));
    if (b.rank() != 1 || b.extent(0) != m)
        throw ShapeError("dense bias: expected [" + std::to_string(m) + "], got " + b.shape_string());

    std::vector<std::size_t> out_shape =
        d.batched ? std::vector<std::size_t>{d.n, m} : std::vector<std::size_t>{m};
    Tensor<T> out(out_shape);
    const T* xp = x.data();
    const T* wp = w.data();
    const T* bp = b.data();
    for (std::size_t n = 0; n < d.n; ++n) {
        T* orow = out.data() + n * m;
        for (std::size_t j = 0; j < m; ++j) orow[j] = bp[j];
        const T* xrow = xp + n * f;
        for (std::size_t k = 0; k < f; ++k) {
            const T v = xrow[k];
            const T* wrow = wp + k * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += v * wrow[j];
        }
    }

    return tape.push(std::move(out), {x_id, w_id, b_id},
                     [x_id, w_id, b_id, d, f, m](Tape<T>& t, NodeId self) {
                         const Tensor<T>& g = t.grad(self);
                         const Tensor<T>& xv = t.value(x_id);
                         const Tensor<T>& wv = t.value(w_id);
                         Tensor<T>& gx = t.grad(x_id);
                         Tensor<T>& gw = t.grad(w_id);
                         Tensor<T>& gb = t.grad(b_id);
                         for (std::size_t n = 0; n < d.n; ++n) {
                             const T* grow = g.data() + n * m;
                             const T* xrow = xv.data() + n * f;
                             T* gxrow = gx.data() + n * f;
                             for (std::size_t j = 0; j < m; ++j) gb[j] += grow[j];
                             for (std::size_t k = 0; k < f; ++k) {
                                 const T* wrow = wv.data() + k * m;
                                 T* gwrow = gw.data() + k * m;
                                 const T v = xrow[k];
                                 T acc = T(0);
                                 for (std::size_t j = 0; j < m; ++j) {
                                     gwrow[j] += v * grow[j];
                                     acc += wrow[j] * grow[j];
                                 }
                                 gxrow[k] += acc;
                             }
                         }
                     });
}

template <typename T>
NodeId relu(Tape<T>& tape, NodeId x_id) {
    const Tensor<T>& x = tape.value(x_id);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    return tape.push(std::move(out), {x_id}, [x_id](Tape<T>& t, NodeId self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& xv = t.value(x_id);
        Tensor<T>& gx = t.grad(x_id);
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (xv[i] > T(0)) gx[i] += g[i];
    });
}

template <typename T>
NodeId sigmoid(Tape<T>& tape, NodeId x_id) {
    const Tensor<T>& x = tape.value(x_id);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const T v = x[i];
        // overflow-safe split form
        out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                           : std::exp(v) / (T(1) + std::exp(v));
    }
    Tensor<T> saved = out;
    return tape.push(std::move(out), {x_id}, [x_id, saved](Tape<T>& t, NodeId self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(x_id);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * saved[i] * (T(1) - saved[i]);
    });
}

/// Row-wise softmax with max subtraction for stability.
template <typename T>
NodeId softmax(Tape<T>& tape, NodeId x_id) {
    const Tensor<T>& x = tape.value(x_id);
    const RowDims d = row_dims(x, "softmax input");
    Tensor<T> out(x.shape());
    for (std::size_t n = 0; n < d.n; ++n) {
        const T* xrow = x.data() + n * d.f;
        T* orow = out.data() + n * d.f;
        T m = xrow[0];
        for (std::size_t j = 1; j < d.f; ++j) m = std::max(m, xrow[j]);
        T s = T(0);
        for (std::size_t j = 0; j < d.f; ++j) {
            orow[j] = std::exp(xrow[j] - m);
            s += orow[j];
        }
        const T inv = T(1) / s;
        for (std::size_t j = 0; j < d.f; ++j) orow[j] *= inv;
    }
    Tensor<T> saved = out;
    return tape.push(std::move(out), {x_id}, [x_id, saved, d](Tape<T>& t, NodeId self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(x_id);
        for (std::size_t n = 0; n < d.n; ++n) {
            const T* grow = g.data() + n * d.f;
            const T* yrow = saved.data() + n * d.f;
            T dot = T(0);
            for (std::size_t j = 0; j < d.f; ++j) dot += grow[j] * yrow[j];
            T* gxrow = gx.data() + n * d.f;
            for (std::size_t j = 0; j < d.f; ++j) gxrow[j] += yrow[j] * (grow[j] - dot);
        }
    });
}

inline constexpr double kL2NormalizeEps = 1e-12;

/// Row-wise x / max(||x||_2, eps). A zero row passes through as zeros.
template <typename T>
NodeId l2_normalize(Tape<T>& tape, NodeId x_id) {
    const Tensor<T>& x = tape.value(x_id);
    const RowDims d = row_dims(x, "l2_normalize input");
    Tensor<T> out(x.shape());
    std::vector<T> denoms(d.n);
    for (std::size_t n = 0; n < d.n; ++n) {
        const T* xrow = x.data() + n * d.f;
        T ss = T(0);
        for (std::size_t j = 0; j < d.f; ++j) ss += xrow[j] * xrow[j];
        const T norm = std::sqrt(ss);
        const T denom = std::max(norm, static_cast<T>(kL2NormalizeEps));
        denoms[n] = denom;
        T* orow = out.data() + n * d.f;
        for (std::size_t j = 0; j < d.f; ++j) orow[j] = xrow[j] / denom;
    }
    Tensor<T> saved = out;
    return tape.push(std::move(out), {x_id}, [x_id, saved, denoms, d](Tape<T>& t, NodeId self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(x_id);
        for (std::size_t n = 0; n < d.n; ++n) {
            const T* grow = g.data() + n * d.f;
            const T* yrow = saved.data() + n * d.f;
            // above the eps guard: d/dx [x/||x||] = (I - y y^T)/||x||;
            // inside the guard the denominator is a constant.
            const T denom = denoms[n];
            T dot = T(0);
            for (std::size_t j = 0; j < d.f; ++j) dot += grow[j] * yrow[j];
            const bool guarded = denom <= static_cast<T>(kL2NormalizeEps);
            T* gxrow = gx.data() + n * d.f;
            for (std::size_t j = 0; j < d.f; ++j)
                gxrow[j] += guarded ? grow[j] / denom : (grow[j] - yrow[j] * dot) / denom;
        }
    });
}

inline constexpr double kBatchNormEps = 1e-3;
inline constexpr double kBatchNormMomentum = 0.99;

/// Batch normalization over the last axis; leading axes form the batch.
/// Train mode normalizes by biased batch statistics and updates the running
/// stats in place (they live in the ParamSet, not on the tape); infer mode
/// uses the running stats.
template <typename T>
NodeId batchnorm(Tape<T>& tape, NodeId x_id, NodeId gamma_id, NodeId beta_id,
                 Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                 double momentum = kBatchNormMomentum, double eps = kBatchNormEps) {
    const Tensor<T>& x = tape.value(x_id);
    const Tensor<T>& gamma = tape.value(gamma_id);
    const Tensor<T>& beta = tape.value(beta_id);
    if (x.rank() < 1) throw ShapeError("batchnorm input must have rank >= 1");
    const std::size_t c = x.shape().back();
    const std::size_t rows = x.numel() / c;
    auto check_param = [&](const Tensor<T>& p, const char* name) {
        if (p.rank() != 1 || p.extent(0) != c)
            throw ShapeError(std::string("batchnorm ") + name + ": expected [" + std::to_string(c) +
                             "], got " + p.shape_string());
    };
    check_param(gamma, "gamma");
    check_param(beta, "beta");
    check_param(running_mean, "running_mean");
    check_param(running_var, "running_var");

    Tensor<T> out(x.shape());
    const T* xp = x.data();
    const T* gp = gamma.data();
    const T* bp = beta.data();

    if (mode == Mode::infer) {
        std::vector<T> scale(c);
        for (std::size_t j = 0; j < c; ++j)
            scale[j] = T(1) / std::sqrt(running_var[j] + static_cast<T>(eps));
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j)
                out[r * c + j] = (xp[r * c + j] - running_mean[j]) * scale[j] * gp[j] + bp[j];
        Tensor<T> mean_copy = running_mean;
        return tape.push(std::move(out), {x_id, gamma_id, beta_id},
                         [x_id, gamma_id, beta_id, scale, mean_copy, rows, c](Tape<T>& t, NodeId self) {
                             const Tensor<T>& g = t.grad(self);
                             const Tensor<T>& xv = t.value(x_id);
                             const Tensor<T>& gv = t.value(gamma_id);
                             Tensor<T>& gx = t.grad(x_id);
                             Tensor<T>& gg = t.grad(gamma_id);
                             Tensor<T>& gb = t.grad(beta_id);
                             for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t j = 0; j < c; ++j) {
                                     const T xhat = (xv[r * c + j] - mean_copy[j]) * scale[j];
                                     gx[r * c + j] += g[r * c + j] * gv[j] * scale[j];
                                     gg[j] += g[r * c + j] * xhat;
                                     gb[j] += g[r * c + j];
                                 }
                         });
    }

    if (rows < 2)
        throw ConfigError("batchnorm: train mode needs a batch of at least 2 rows (variance undefined)");

    std::vector<T> mean(c, T(0)), var(c, T(0)), inv_std(c);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) mean[j] += xp[r * c + j];
    const T inv_rows = T(1) / static_cast<T>(rows);
    for (std::size_t j = 0; j < c; ++j) mean[j] *= inv_rows;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) {
            const T dvi = xp[r * c + j] - mean[j];
            var[j] += dvi * dvi;
        }
    for (std::size_t j = 0; j < c; ++j) {
        var[j] *= inv_rows;
        inv_std[j] = T(1) / std::sqrt(var[j] + static_cast<T>(eps));
    }

    Tensor<T> xhat(x.shape());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) {
            const T h = (xp[r * c + j] - mean[j]) * inv_std[j];
            xhat[r * c + j] = h;
            out[r * c + j] = h * gp[j] + bp[j];
        }

    const T m = static_cast<T>(momentum);
    for (std::size_t j = 0; j < c; ++j) {
        running_mean[j] = m * running_mean[j] + (T(1) - m) * mean[j];
        running_var[j] = m * running_var[j] + (T(1) - m) * var[j];
    }

    return tape.push(std::move(out), {x_id, gamma_id, beta_id},
                     [x_id, gamma_id, beta_id, xhat, inv_std, rows, c](Tape<T>& t, NodeId self) {
                         const Tensor<T>& g = t.grad(self);
                         const Tensor<T>& gv = t.value(gamma_id);
                         Tensor<T>& gx = t.grad(x_id);
                         Tensor<T>& gg = t.grad(gamma_id);
                         Tensor<T>& gb = t.grad(beta_id);
                         const T inv_rows = T(1) / static_cast<T>(rows);
                         std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
                         for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < c; ++j) {
                                 sum_dy[j] += g[r * c + j];
                                 sum_dy_xhat[j] += g[r * c + j] * xhat[r * c + j];
                             }
                         for (std::size_t j = 0; j < c; ++j) {
                             gg[j] += sum_dy_xhat[j];
                             gb[j] += sum_dy[j];
                         }
                         for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < c; ++j) {
                                 const T dy = g[r * c + j];
                                 gx[r * c + j] += gv[j] * inv_std[j] *
                                                  (dy - sum_dy[j] * inv_rows -
                                                   xhat[r * c + j] * sum_dy_xhat[j] * inv_rows);
                             }
                     });
}

/// Inverted dropout: train zeroes with probability p and scales survivors by
/// 1/(1-p); infer is the identity bit-for-bit.
template <typename T>
NodeId dropout(Tape<T>& tape, NodeId x_id, double p, Mode mode, Rng& rng) {
    if (p < 0.0 || p >= 1.0)
        throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(p));
    const Tensor<T>& x = tape.value(x_id);
    if (mode == Mode::infer || p == 0.0) {
        Tensor<T> out = x;
        return tape.push(std::move(out), {x_id}, [x_id](Tape<T>& t, NodeId self) {
            const Tensor<T>& g = t.grad(self);
            Tensor<T>& gx = t.grad(x_id);
            for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
        });
    }
    const T scale = T(1) / static_cast<T>(1.0 - p);
    std::vector<T> mask(x.numel());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < p ? T(0) : scale;
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * mask[i];
    return tape.push(std::move(out), {x_id}, [x_id, mask](Tape<T>& t, NodeId self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(x_id);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * mask[i];
    });
}

/// Concatenate along the last (feature) axis; lengths add, order preserved.
/// Rank-2 inputs must agree on the batch extent.
template <typename T>
NodeId concat(Tape<T>& tape, const std::vector<NodeId>& ids) {
    if (ids.size() < 2) throw ShapeError("concat needs at least 2 inputs");
    const Tensor<T>& first = tape.value(ids[0]);
    const std::size_t rank = first.rank();
    std::size_t total_last = 0;
    for (const NodeId id : ids) {
        const Tensor<T>& v = tape.value(id);
        if (v.rank() != rank)
            throw ShapeError("concat inputs must share rank; got " + v.shape_string() + " vs " +
                             first.shape_string());
        for (std::size_t a = 0; a + 1 < rank; ++a)
            if (v.extent(a) != first.extent(a))
                throw ShapeError("concat inputs must agree on leading extents");
        total_last += v.shape().back();
    }
    std::vector<std::size_t> out_shape = first.shape();
    out_shape.back() = total_last;
    std::size_t rows = 1;
    for (std::size_t a = 0; a + 1 < rank; ++a) rows *= first.extent(a);

    Tensor<T> out(out_shape);
    std::vector<std::size_t> widths(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) widths[i] = tape.value(ids[i]).shape().back();
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const Tensor<T>& v = tape.value(ids[i]);
            std::copy(v.data() + r * widths[i], v.data() + (r + 1) * widths[i],
                      out.data() + r * total_last + off);
            off += widths[i];
        }
    }

    return tape.push(std::move(out), ids, [ids, widths, rows, total_last](Tape<T>& t, NodeId self) {
        const Tensor<T>& g = t.grad(self);
        for (std::size_t r = 0; r < rows; ++r) {
            std::size_t off = 0;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                Tensor<T>& gx = t.grad(ids[i]);
                for (std::size_t j = 0; j < widths[i]; ++j)
                    gx[r * widths[i] + j] += g[r * total_last + off + j];
                off += widths[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// scalar combinators (loss assembly)
// ---------------------------------------------------------------------------

/// Sum of squares of every element, as a scalar node (L2 penalty building
/// block).
template <typename T>
NodeId sum_squares(Tape<T>& tape, NodeId x_id) {
    const Tensor<T>& x = tape.value(x_id);
    T acc = T(0);
    for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i] * x[i];
    return tape.push(Tensor<T>::scalar(acc), {x_id}, [x_id](Tape<T>& t, NodeId self) {
        const T g = t.grad(self)[0];
        const Tensor<T>& xv = t.value(x_id);
        Tensor<T>& gx = t.grad(x_id);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += T(2) * xv[i] * g;
    });
}

/// Weighted sum of scalar nodes: sum_i coeff[i] * value(ids[i]).
template <typename T>
NodeId weighted_sum(Tape<T>& tape, const std::vector<NodeId>& ids, const std::vector<T>& coeffs) {
    if (ids.size() != coeffs.size() || ids.empty())
        throw ShapeError("weighted_sum: ids/coeffs mismatch");
    T acc = T(0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (tape.value(ids[i]).numel() != 1) throw ShapeError("weighted_sum expects scalar nodes");
        acc += coeffs[i] * tape.value(ids[i])[0];
    }
    return tape.push(Tensor<T>::scalar(acc), ids, [ids, coeffs](Tape<T>& t, NodeId self) {
        const T g = t.grad(self)[0];
        for (std::size_t i = 0; i < ids.size(); ++i) t.grad(ids[i])[0] += coeffs[i] * g;
    });
}

}  // namespace histofuse
