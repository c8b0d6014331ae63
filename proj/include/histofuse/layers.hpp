#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/rng.hpp"
#include "histofuse/tensor.hpp"

namespace histofuse {

enum class LayerKind {
    input,
    conv,
    maxpool,
    avgpool,
    pad,
    dense,
    batchnorm,
    dropout,
    gap,
    l2norm,
    concat,
    flatten,
    activation,
};

/// One layer of a model graph. Which parameter fields apply depends on kind.
struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::input;
    std::vector<std::string> inputs;  // producer layer names; empty only for kind==input

    std::vector<std::size_t> input_shape;  // kind==input: per-sample [H,W,C]

    std::size_t filters = 0;  // conv
    std::size_t kernel_h = 0, kernel_w = 0;
    std::size_t stride = 1;

    std::size_t pool_h = 0, pool_w = 0;  // maxpool/avgpool
    std::size_t stride_h = 0, stride_w = 0;

    std::size_t pad = 0;  // pad

    std::size_t units = 0;  // dense
    bool regularized = false;

    double rate = 0.0;  // dropout

    std::string activation;  // activation: relu | sigmoid | softmax
};

inline void validate_layer(const LayerSpec& l) {
    auto fail = [&](const std::string& why) {
        throw ConfigError("layer '" + l.name + "': " + why);
    };
    if (l.name.empty()) throw ConfigError("layer with empty name");
    switch (l.kind) {
        case LayerKind::input:
            if (!l.inputs.empty()) fail("input layer cannot have inputs");
            if (l.input_shape.empty()) fail("input layer needs a shape");
            break;
        case LayerKind::conv:
            if (l.filters == 0 || l.kernel_h == 0 || l.kernel_w == 0) fail("conv needs filters and kernel extents");
            if (l.stride < 1) fail("conv stride must be >= 1");
            break;
        case LayerKind::maxpool:
        case LayerKind::avgpool:
            if (l.pool_h == 0 || l.pool_w == 0) fail("pool needs window extents");
            if (l.stride_h < 1 || l.stride_w < 1) fail("pool strides must be >= 1");
            break;
        case LayerKind::dense:
            if (l.units == 0) fail("dense needs units");
            break;
        case LayerKind::dropout:
            if (l.rate < 0.0 || l.rate >= 1.0) fail("dropout rate must be in [0,1)");
            break;
        case LayerKind::activation:
            if (l.activation != "relu" && l.activation != "sigmoid" && l.activation != "softmax")
                fail("unknown activation '" + l.activation + "'");
            break;
        default:
            break;
    }
    if (l.kind != LayerKind::input && l.inputs.empty()) fail("non-input layer needs inputs");
    if (l.kind == LayerKind::concat && l.inputs.size() < 2) fail("concat needs at least 2 inputs");
}

/// Named parameter store. std::map keeps iteration (and therefore file and
/// init) order deterministic.
template <typename T>
using ParamSet = std::map<std::string, Tensor<T>>;

inline double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace histofuse
