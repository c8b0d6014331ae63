#pragma once

#include <map>
#include <string>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/layers.hpp"
#include "histofuse/losses.hpp"
#include "histofuse/ops.hpp"
#include "histofuse/rng.hpp"
#include "histofuse/tape.hpp"
#include "histofuse/tensor.hpp"

namespace histofuse {

enum class ModelKind {
    custom = 0,
    baseline = 1,
    fusion_binary = 2,
    subclass_initial = 3,
    fusion_benign = 4,
    fusion_malignant = 5,
};

inline const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::baseline: return "baseline";
        case ModelKind::fusion_binary: return "fusion_binary";
        case ModelKind::subclass_initial: return "subclass_initial";
        case ModelKind::fusion_benign: return "fusion_benign";
        case ModelKind::fusion_malignant: return "fusion_malignant";
        default: return "custom";
    }
}

/// Executable layer DAG. Layers are stored in topological order (builders
/// append producers before consumers); `taps` name layers whose activations
/// are exported for multi-scale fusion.
struct ModelGraph {
    std::vector<LayerSpec> layers;
    std::string output;
    std::vector<std::string> taps;
    std::vector<std::string> class_labels;
    ModelKind kind = ModelKind::custom;
    std::map<std::string, double> meta;  // architecture parameters for the weights file

    const LayerSpec& layer(const std::string& name) const {
        for (const auto& l : layers)
            if (l.name == name) return l;
        throw ConfigError("graph has no layer named '" + name + "'");
    }

    bool has_layer(const std::string& name) const {
        for (const auto& l : layers)
            if (l.name == name) return true;
        return false;
    }
};

/// Per-sample output shape of every layer, computed without running data.
/// Throws ConfigError on inconsistent wiring or spatial underflow.
inline std::map<std::string, std::vector<std::size_t>> infer_shapes(const ModelGraph& g) {
    std::map<std::string, std::vector<std::size_t>> shapes;
    auto fail = [](const LayerSpec& l, const std::string& why) {
        throw ConfigError("layer '" + l.name + "': " + why);
    };
    for (const auto& l : g.layers) {
        validate_layer(l);
        if (shapes.count(l.name)) fail(l, "duplicate layer name");
        std::vector<std::vector<std::size_t>> in;
        for (const auto& src : l.inputs) {
            auto it = shapes.find(src);
            if (it == shapes.end()) fail(l, "input '" + src + "' not defined before use");
            in.push_back(it->second);
        }
        std::vector<std::size_t> out;
        switch (l.kind) {
            case LayerKind::input:
                out = l.input_shape;
                break;
            case LayerKind::conv: {
                const auto& s = in[0];
                if (s.size() != 3) fail(l, "conv input must be [H,W,C]");
                if (l.kernel_h > s[0] || l.kernel_w > s[1])
                    fail(l, "kernel " + std::to_string(l.kernel_h) + "x" + std::to_string(l.kernel_w) +
                                " exceeds input " + std::to_string(s[0]) + "x" + std::to_string(s[1]));
                out = {(s[0] - l.kernel_h) / l.stride + 1, (s[1] - l.kernel_w) / l.stride + 1, l.filters};
                break;
            }
            case LayerKind::maxpool:
            case LayerKind::avgpool: {
                const auto& s = in[0];
                if (s.size() != 3) fail(l, "pool input must be [H,W,C]");
                if (l.pool_h > s[0] || l.pool_w > s[1])
                    fail(l, "pool window exceeds input extent (spatial underflow)");
                out = {(s[0] - l.pool_h) / l.stride_h + 1, (s[1] - l.pool_w) / l.stride_w + 1, s[2]};
                break;
            }
            case LayerKind::pad: {
                const auto& s = in[0];
                if (s.size() != 3) fail(l, "pad input must be [H,W,C]");
                out = {s[0] + 2 * l.pad, s[1] + 2 * l.pad, s[2]};
                break;
            }
            case LayerKind::gap: {
                const auto& s = in[0];
                if (s.size() != 3) fail(l, "gap input must be [H,W,C]");
                out = {s[2]};
                break;
            }
            case LayerKind::flatten: {
                std::size_t n = 1;
                for (const std::size_t e : in[0]) n *= e;
                out = {n};
                break;
            }
            case LayerKind::dense: {
                if (in[0].size() != 1) fail(l, "dense input must be a vector (flatten first)");
                out = {l.units};
                break;
            }
            case LayerKind::concat: {
                std::size_t total = 0;
                for (const auto& s : in) {
                    if (s.size() != in[0].size()) fail(l, "concat inputs must share rank");
                    for (std::size_t a = 0; a + 1 < s.size(); ++a)
                        if (s[a] != in[0][a]) fail(l, "concat inputs must agree on leading extents");
                    total += s.back();
                }
                out = in[0];
                out.back() = total;
                break;
            }
            case LayerKind::batchnorm:
            case LayerKind::dropout:
            case LayerKind::l2norm:
            case LayerKind::activation:
                out = in[0];
                break;
        }
        shapes[l.name] = std::move(out);
    }
    if (!g.output.empty() && !shapes.count(g.output))
        throw ConfigError("graph output '" + g.output + "' is not a layer");
    for (const auto& t : g.taps)
        if (!shapes.count(t)) throw ConfigError("tap '" + t + "' is not a layer");
    return shapes;
}

/// Expected parameter names and shapes for a graph.
inline std::map<std::string, std::vector<std::size_t>> param_shapes(const ModelGraph& g) {
    auto shapes = infer_shapes(g);
    std::map<std::string, std::vector<std::size_t>> out;
    for (const auto& l : g.layers) {
        if (l.kind == LayerKind::conv) {
            const auto& in = shapes.at(l.inputs[0]);
            out[l.name + "/kernel"] = {l.kernel_h, l.kernel_w, in[2], l.filters};
            out[l.name + "/bias"] = {l.filters};
        } else if (l.kind == LayerKind::dense) {
            const auto& in = shapes.at(l.inputs[0]);
            out[l.name + "/kernel"] = {in[0], l.units};
            out[l.name + "/bias"] = {l.units};
        } else if (l.kind == LayerKind::batchnorm) {
            const std::size_t c = shapes.at(l.inputs[0]).back();
            out[l.name + "/gamma"] = {c};
            out[l.name + "/beta"] = {c};
            out[l.name + "/moving_mean"] = {c};
            out[l.name + "/moving_var"] = {c};
        }
    }
    return out;
}

/// Glorot-uniform kernels, zero biases, identity batchnorm, drawn from one
/// seeded stream in graph order: the same seed always yields the same bits.
template <typename T>
ParamSet<T> init_params(const ModelGraph& g, std::uint64_t seed) {
    auto shapes = infer_shapes(g);
    ParamSet<T> params;
    Rng rng(seed);
    for (const auto& l : g.layers) {
        if (l.kind == LayerKind::conv) {
            const auto& in = shapes.at(l.inputs[0]);
            const std::size_t fan_in = l.kernel_h * l.kernel_w * in[2];
            const std::size_t fan_out = l.kernel_h * l.kernel_w * l.filters;
            const double lim = glorot_limit(fan_in, fan_out);
            Tensor<T> k({l.kernel_h, l.kernel_w, in[2], l.filters});
            for (std::size_t i = 0; i < k.numel(); ++i) k[i] = static_cast<T>(rng.uniform(-lim, lim));
            k.requires_grad = true;
            params[l.name + "/kernel"] = std::move(k);
            Tensor<T> b({l.filters});
            b.requires_grad = true;
            params[l.name + "/bias"] = std::move(b);
        } else if (l.kind == LayerKind::dense) {
            const auto& in = shapes.at(l.inputs[0]);
            const double lim = glorot_limit(in[0], l.units);
            Tensor<T> w({in[0], l.units});
            for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.uniform(-lim, lim));
            w.requires_grad = true;
            params[l.name + "/kernel"] = std::move(w);
            Tensor<T> b({l.units});
            b.requires_grad = true;
            params[l.name + "/bias"] = std::move(b);
        } else if (l.kind == LayerKind::batchnorm) {
            const std::size_t c = shapes.at(l.inputs[0]).back();
            Tensor<T> gamma = Tensor<T>::full({c}, T(1));
            gamma.requires_grad = true;
            params[l.name + "/gamma"] = std::move(gamma);
            Tensor<T> beta({c});
            beta.requires_grad = true;
            params[l.name + "/beta"] = std::move(beta);
            params[l.name + "/moving_mean"] = Tensor<T>({c});
            params[l.name + "/moving_var"] = Tensor<T>::full({c}, T(1));
        }
    }
    return params;
}

/// Result of running a graph forward on a tape.
template <typename T>
struct ForwardPass {
    Tape<T> tape;
    NodeId output = 0;
    std::map<std::string, NodeId> taps;
    std::map<std::string, NodeId> nodes;             // every layer's output node
    std::map<std::string, NodeId> param_nodes;       // trainable leaves
    std::vector<NodeId> regularized_kernels;         // kernel nodes under L2
};

/// Execute the graph on `input` ([H,W,C] or [N,H,W,C]). Train mode needs an
/// rng when the graph contains dropout; running batchnorm stats in `params`
/// are updated in place in train mode.
template <typename T>
ForwardPass<T> forward(const ModelGraph& g, ParamSet<T>& params, const Tensor<T>& input, Mode mode,
                       Rng* rng = nullptr) {
    ForwardPass<T> fp;
    Tape<T>& tape = fp.tape;
    std::map<std::string, NodeId> computed;

    auto param_node = [&](const std::string& name) -> NodeId {
        auto found = fp.param_nodes.find(name);
        if (found != fp.param_nodes.end()) return found->second;
        auto it = params.find(name);
        if (it == params.end()) throw ConfigError("missing parameter '" + name + "'");
        const NodeId id = tape.leaf(it->second);
        fp.param_nodes[name] = id;
        return id;
    };

    for (const auto& l : g.layers) {
        std::vector<NodeId> in;
        for (const auto& src : l.inputs) {
            auto it = computed.find(src);
            if (it == computed.end())
                throw ConfigError("layer '" + l.name + "': input '" + src + "' not computed");
            in.push_back(it->second);
        }
        NodeId out = 0;
        switch (l.kind) {
            case LayerKind::input: {
                const SpatialDims d = spatial_dims(input, "model input");
                if (d.h != l.input_shape[0] || d.w != l.input_shape[1] || d.c != l.input_shape[2])
                    throw ShapeError("model input " + input.shape_string() + " does not match expected [" +
                                     std::to_string(l.input_shape[0]) + "x" + std::to_string(l.input_shape[1]) +
                                     "x" + std::to_string(l.input_shape[2]) + "]");
                out = tape.leaf(input);
                break;
            }
            case LayerKind::conv: {
                const NodeId k = param_node(l.name + "/kernel");
                const NodeId b = param_node(l.name + "/bias");
                if (l.regularized) fp.regularized_kernels.push_back(k);
                out = conv2d(tape, in[0], k, b, l.stride);
                break;
            }
            case LayerKind::maxpool:
                out = maxpool2d(tape, in[0], l.pool_h, l.pool_w, l.stride_h, l.stride_w);
                break;
            case LayerKind::avgpool:
                out = avgpool2d(tape, in[0], l.pool_h, l.pool_w, l.stride_h, l.stride_w);
                break;
            case LayerKind::pad:
                out = pad2d(tape, in[0], l.pad);
                break;
            case LayerKind::gap:
                out = global_avg_pool(tape, in[0]);
                break;
            case LayerKind::flatten:
                out = flatten(tape, in[0]);
                break;
            case LayerKind::dense: {
                const NodeId w = param_node(l.name + "/kernel");
                const NodeId b = param_node(l.name + "/bias");
                if (l.regularized) fp.regularized_kernels.push_back(w);
                out = dense(tape, in[0], w, b);
                break;
            }
            case LayerKind::batchnorm: {
                const NodeId gm = param_node(l.name + "/gamma");
                const NodeId bt = param_node(l.name + "/beta");
                out = batchnorm(tape, in[0], gm, bt, params.at(l.name + "/moving_mean"),
                                params.at(l.name + "/moving_var"), mode);
                break;
            }
            case LayerKind::dropout: {
                if (mode == Mode::train && l.rate > 0.0 && rng == nullptr)
                    throw ConfigError("forward: train-mode dropout needs an rng");
                static Rng dummy(0);
                out = dropout(tape, in[0], l.rate, mode, rng ? *rng : dummy);
                break;
            }
            case LayerKind::l2norm:
                out = l2_normalize(tape, in[0]);
                break;
            case LayerKind::concat:
                out = concat(tape, in);
                break;
            case LayerKind::activation:
                if (l.activation == "relu")
                    out = relu(tape, in[0]);
                else if (l.activation == "sigmoid")
                    out = sigmoid(tape, in[0]);
                else
                    out = softmax(tape, in[0]);
                break;
        }
        computed[l.name] = out;
    }

    fp.output = computed.at(g.output);
    for (const auto& t : g.taps) fp.taps[t] = computed.at(t);
    fp.nodes = std::move(computed);
    return fp;
}

/// A graph plus its trained state.
template <typename T>
struct Model {
    ModelGraph graph;
    ParamSet<T> params;
};

/// Write gradients of all trainable leaves back into a name-keyed map.
template <typename T>
std::map<std::string, Tensor<T>> collect_grads(const ForwardPass<T>& fp) {
    std::map<std::string, Tensor<T>> grads;
    for (const auto& [name, node] : fp.param_nodes) grads[name] = fp.tape.grad(node);
    return grads;
}

}  // namespace histofuse
