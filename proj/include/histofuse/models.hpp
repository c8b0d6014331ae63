#pragma once

#include <array>
#include <string>
#include <vector>

#include "histofuse/breakhis.hpp"
#include "histofuse/errors.hpp"
#include "histofuse/graph.hpp"
#include "histofuse/image.hpp"
#include "histofuse/train.hpp"

namespace histofuse {

/// Miniature dense-connectivity backbone: stem, then three dense blocks with
/// feature concatenation, a tap after each block, and a compressing
/// transition between stages.
struct BackboneConfig {
    std::size_t stem_filters = 16;
    std::size_t layers_per_block = 4;
    std::size_t growth = 12;
    double compression = 0.5;
    bool concat_enabled = true;  // ablation flag: off turns blocks into plain chains

    void validate() const {
        if (stem_filters < 1 || layers_per_block < 1 || growth < 1)
            throw ConfigError("backbone: stem_filters, layers_per_block and growth must be positive");
        if (!(compression > 0.0 && compression <= 1.0))
            throw ConfigError("backbone: compression must be in (0,1]");
    }
};

inline constexpr std::size_t kBackboneStages = 3;

/// Channel widths at the three taps, by the concatenation recurrence:
/// c_tap = c_in + L*g with concatenation, c_tap = g without; transitions
/// compress to floor(c*compression).
inline std::vector<std::size_t> backbone_tap_channels(const BackboneConfig& cfg) {
    cfg.validate();
    std::vector<std::size_t> taps;
    std::size_t c = cfg.stem_filters;
    for (std::size_t b = 0; b < kBackboneStages; ++b) {
        c = cfg.concat_enabled ? c + cfg.layers_per_block * cfg.growth : cfg.growth;
        taps.push_back(c);
        c = std::max<std::size_t>(1, static_cast<std::size_t>(static_cast<double>(c) * cfg.compression));
    }
    return taps;
}

namespace detail {

inline LayerSpec make_input(std::size_t size, std::size_t channels = 3) {
    LayerSpec l;
    l.name = "input";
    l.kind = LayerKind::input;
    l.input_shape = {size, size, channels};
    return l;
}

inline LayerSpec make_conv(std::string name, std::string in, std::size_t filters, std::size_t kernel,
                           std::size_t stride = 1, bool regularized = false) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::conv;
    l.inputs = {std::move(in)};
    l.filters = filters;
    l.kernel_h = l.kernel_w = kernel;
    l.stride = stride;
    l.regularized = regularized;
    return l;
}

inline LayerSpec make_act(std::string name, std::string in, std::string fn) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::activation;
    l.inputs = {std::move(in)};
    l.activation = std::move(fn);
    return l;
}

inline LayerSpec make_pool(LayerKind kind, std::string name, std::string in, std::size_t window,
                           std::size_t stride) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = kind;
    l.inputs = {std::move(in)};
    l.pool_h = l.pool_w = window;
    l.stride_h = l.stride_w = stride;
    return l;
}

inline LayerSpec make_simple(LayerKind kind, std::string name, std::string in) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = kind;
    l.inputs = {std::move(in)};
    return l;
}

inline LayerSpec make_dense(std::string name, std::string in, std::size_t units, bool regularized) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::dense;
    l.inputs = {std::move(in)};
    l.units = units;
    l.regularized = regularized;
    return l;
}

inline LayerSpec make_dropout(std::string name, std::string in, double rate) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::dropout;
    l.inputs = {std::move(in)};
    l.rate = rate;
    return l;
}

inline LayerSpec make_pad(std::string name, std::string in, std::size_t pad) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::pad;
    l.inputs = {std::move(in)};
    l.pad = pad;
    return l;
}

/// Append the backbone layers to `g`; returns the name of the final layer.
inline std::string append_backbone(ModelGraph& g, const BackboneConfig& cfg) {
    cfg.validate();
    g.layers.push_back(make_conv("stem_conv", "input", cfg.stem_filters, 3, 2));
    g.layers.push_back(make_act("stem_relu", "stem_conv", "relu"));
    g.layers.push_back(make_pool(LayerKind::maxpool, "stem_pool", "stem_relu", 2, 2));
    std::string cur = "stem_pool";
    std::size_t channels = cfg.stem_filters;
    for (std::size_t b = 1; b <= kBackboneStages; ++b) {
        const std::string sb = "s" + std::to_string(b);
        for (std::size_t i = 1; i <= cfg.layers_per_block; ++i) {
            const std::string p = sb + "l" + std::to_string(i);
            g.layers.push_back(make_simple(LayerKind::batchnorm, p + "_bn", cur));
            g.layers.push_back(make_act(p + "_relu", p + "_bn", "relu"));
            g.layers.push_back(make_pad(p + "_pad", p + "_relu", 1));
            g.layers.push_back(make_conv(p + "_conv", p + "_pad", cfg.growth, 3, 1));
            if (cfg.concat_enabled) {
                LayerSpec cat;
                cat.name = p + "_cat";
                cat.kind = LayerKind::concat;
                cat.inputs = {cur, p + "_conv"};
                g.layers.push_back(cat);
                cur = cat.name;
                channels += cfg.growth;
            } else {
                cur = p + "_conv";
                channels = cfg.growth;
            }
        }
        g.taps.push_back(cur);
        const std::size_t compressed = std::max<std::size_t>(
            1, static_cast<std::size_t>(static_cast<double>(channels) * cfg.compression));
        const std::string t = "t" + std::to_string(b);
        g.layers.push_back(make_conv(t + "_conv", cur, compressed, 1, 1));
        g.layers.push_back(make_pool(LayerKind::avgpool, t + "_pool", t + "_conv", 2, 2));
        cur = t + "_pool";
        channels = compressed;
    }
    return cur;
}

inline void put_meta(ModelGraph& g, std::size_t input_size, std::size_t num_classes,
                     const BackboneConfig* cfg, double dropout_rate) {
    g.meta["kind"] = static_cast<double>(static_cast<int>(g.kind));
    g.meta["input_size"] = static_cast<double>(input_size);
    g.meta["num_classes"] = static_cast<double>(num_classes);
    g.meta["dropout"] = dropout_rate;
    if (cfg) {
        g.meta["stem_filters"] = static_cast<double>(cfg->stem_filters);
        g.meta["layers_per_block"] = static_cast<double>(cfg->layers_per_block);
        g.meta["growth"] = static_cast<double>(cfg->growth);
        g.meta["compression"] = cfg->compression;
        g.meta["concat_enabled"] = cfg->concat_enabled ? 1.0 : 0.0;
    }
}

}  // namespace detail

/// Three conv blocks (16, 32, 16 filters, 4x4 kernels), 256-wide dense, one
/// sigmoid output. Trains with binary crossentropy and Adam at 1e-4.
inline ModelGraph build_baseline_binary_cnn(std::size_t input_size = 128) {
    using namespace detail;
    ModelGraph g;
    g.kind = ModelKind::baseline;
    g.layers.push_back(make_input(input_size));
    const std::size_t filters[3] = {16, 32, 16};
    std::string cur = "input";
    for (int i = 1; i <= 3; ++i) {
        const std::string c = "conv" + std::to_string(i);
        g.layers.push_back(make_conv(c, cur, filters[i - 1], 4, 1));
        g.layers.push_back(make_act(c + "_relu", c, "relu"));
        g.layers.push_back(make_pool(LayerKind::maxpool, "pool" + std::to_string(i), c + "_relu", 2, 2));
        cur = "pool" + std::to_string(i);
    }
    g.layers.push_back(make_simple(LayerKind::flatten, "flatten", cur));
    g.layers.push_back(make_dense("fc1", "flatten", 256, false));
    g.layers.push_back(make_act("fc1_relu", "fc1", "relu"));
    g.layers.push_back(make_dense("output_dense", "fc1_relu", 1, false));
    g.layers.push_back(make_act("output", "output_dense", "sigmoid"));
    g.output = "output";
    g.class_labels = {"benign", "malignant"};
    detail::put_meta(g, input_size, 2, nullptr, 0.0);
    return g;
}

/// Backbone alone, three taps exported, for standalone feature extraction
/// and the tap-equality audit.
inline ModelGraph build_mini_dense_backbone(const BackboneConfig& cfg, std::size_t input_size = 128) {
    ModelGraph g;
    g.kind = ModelKind::custom;
    g.layers.push_back(detail::make_input(input_size));
    g.output = detail::append_backbone(g, cfg);
    detail::put_meta(g, input_size, 0, &cfg, 0.0);
    infer_shapes(g);  // surfaces spatial underflow as ConfigError now
    return g;
}

/// Multi-scale fusion classifier: per tap GAP -> L2 normalize -> dense 64
/// (L2 0.001) -> batchnorm; fused by concatenation (192) -> dense 16
/// (L2 0.001) -> dropout -> dense num_classes -> softmax.
inline ModelGraph build_fusion_model(std::size_t num_classes, const BackboneConfig& cfg,
                                     std::size_t input_size = 128, double dropout_rate = 0.45,
                                     ModelKind kind = ModelKind::custom) {
    using namespace detail;
    if (num_classes != 2 && num_classes != 4)
        throw ConfigError("build_fusion_model: num_classes must be 2 or 4");
    ModelGraph g;
    g.kind = kind != ModelKind::custom ? kind
                                       : (num_classes == 2 ? ModelKind::fusion_binary
                                                           : ModelKind::fusion_benign);
    g.layers.push_back(make_input(input_size));
    append_backbone(g, cfg);

    std::vector<std::string> branches;
    for (std::size_t i = 0; i < g.taps.size(); ++i) {
        const std::string br = "br" + std::to_string(i + 1);
        g.layers.push_back(make_simple(LayerKind::gap, br + "_gap", g.taps[i]));
        g.layers.push_back(make_simple(LayerKind::l2norm, br + "_l2", br + "_gap"));
        g.layers.push_back(make_dense(br + "_fc", br + "_l2", 64, true));
        g.layers.push_back(make_act(br + "_relu", br + "_fc", "relu"));
        g.layers.push_back(make_simple(LayerKind::batchnorm, br + "_bn", br + "_relu"));
        branches.push_back(br + "_bn");
    }
    LayerSpec fuse;
    fuse.name = "fuse";
    fuse.kind = LayerKind::concat;
    fuse.inputs = branches;
    g.layers.push_back(fuse);
    g.layers.push_back(make_dense("head_fc", "fuse", 16, true));
    g.layers.push_back(make_act("head_relu", "head_fc", "relu"));
    g.layers.push_back(make_dropout("head_drop", "head_relu", dropout_rate));
    g.layers.push_back(make_dense("output_dense", "head_drop", num_classes, false));
    g.layers.push_back(make_act("output", "output_dense", "softmax"));
    g.output = "output";

    if (g.kind == ModelKind::fusion_benign) g.class_labels = benign_subtypes();
    else if (g.kind == ModelKind::fusion_malignant) g.class_labels = malignant_subtypes();
    else g.class_labels = {"benign", "malignant"};
    detail::put_meta(g, input_size, num_classes, &cfg, dropout_rate);
    infer_shapes(g);
    return g;
}

/// Initial 4-way subtype classifier: conv 32/64/128 (3x3) blocks with 0.25
/// dropout, dense 512 with 0.5 dropout, softmax over four subtypes.
inline ModelGraph build_subclass_initial_cnn(std::size_t input_size = 256, bool malignant = false) {
    using namespace detail;
    ModelGraph g;
    g.kind = ModelKind::subclass_initial;
    g.layers.push_back(make_input(input_size));
    const std::size_t filters[3] = {32, 64, 128};
    std::string cur = "input";
    for (int i = 1; i <= 3; ++i) {
        const std::string c = "conv" + std::to_string(i);
        g.layers.push_back(make_conv(c, cur, filters[i - 1], 3, 1));
        g.layers.push_back(make_act(c + "_relu", c, "relu"));
        g.layers.push_back(make_pool(LayerKind::maxpool, "pool" + std::to_string(i), c + "_relu", 2, 2));
        g.layers.push_back(make_dropout("drop" + std::to_string(i), "pool" + std::to_string(i), 0.25));
        cur = "drop" + std::to_string(i);
    }
    g.layers.push_back(make_simple(LayerKind::flatten, "flatten", cur));
    g.layers.push_back(make_dense("fc1", "flatten", 512, false));
    g.layers.push_back(make_act("fc1_relu", "fc1", "relu"));
    g.layers.push_back(make_dropout("fc1_drop", "fc1_relu", 0.5));
    g.layers.push_back(make_dense("output_dense", "fc1_drop", 4, false));
    g.layers.push_back(make_act("output", "output_dense", "softmax"));
    g.output = "output";
    g.class_labels = malignant ? malignant_subtypes() : benign_subtypes();
    detail::put_meta(g, input_size, 4, nullptr, 0.0);
    g.meta["malignant_category"] = malignant ? 1.0 : 0.0;
    return g;
}

struct BuildOptions {
    std::size_t input_size = 0;  // 0 = kind default
    BackboneConfig backbone;
    double dropout = 0.45;
    bool malignant_category = false;  // subclass_initial only
};

inline std::size_t default_input_size(ModelKind kind) {
    return kind == ModelKind::subclass_initial ? 256 : 128;
}

/// Build any named architecture from options (CLI + weights-file entry).
inline ModelGraph build_model(ModelKind kind, const BuildOptions& opts = {}) {
    const std::size_t input = opts.input_size ? opts.input_size : default_input_size(kind);
    switch (kind) {
        case ModelKind::baseline:
            return build_baseline_binary_cnn(input);
        case ModelKind::fusion_binary:
            return build_fusion_model(2, opts.backbone, input, opts.dropout, kind);
        case ModelKind::fusion_benign:
            return build_fusion_model(4, opts.backbone, input, opts.dropout, kind);
        case ModelKind::fusion_malignant:
            return build_fusion_model(4, opts.backbone, input, opts.dropout, kind);
        case ModelKind::subclass_initial:
            return build_subclass_initial_cnn(input, opts.malignant_category);
        default:
            throw ConfigError("build_model: cannot build 'custom'");
    }
}

inline ModelKind model_kind_from_name(const std::string& s) {
    for (const ModelKind k : {ModelKind::baseline, ModelKind::fusion_binary, ModelKind::subclass_initial,
                              ModelKind::fusion_benign, ModelKind::fusion_malignant})
        if (s == model_kind_name(k)) return k;
    throw ConfigError("unknown model kind '" + s + "'");
}

/// Hierarchical two-stage prediction result. Binary ordering is
/// (benign=0, malignant=1); subtype orderings follow the class taxonomy.
struct Diagnosis {
    TumorClass tumor_class = TumorClass::benign;
    std::array<double, 2> class_probs{};
    int subtype_index = 0;
    std::string subtype;
    std::array<double, 4> subtype_probs{};
};

namespace detail {

template <typename T>
std::vector<double> predict_one(Model<T>& model, const Tensor<T>& image) {
    const auto& in_shape = model.graph.layers.front().input_shape;
    if (image.rank() != 3 || image.extent(2) != in_shape[2])
        throw ShapeError("hierarchical_predict: image must be [H,W," + std::to_string(in_shape[2]) + "]");
    Tensor<T> resized = resize_bilinear(image, in_shape[0], in_shape[1]);
    auto probs = predict_probs(model, {resized});
    return probs[0];
}

}  // namespace detail

/// Route by argmax of the binary model, then consult exactly one subtype
/// model; the untaken branch is never evaluated.
template <typename T>
Diagnosis hierarchical_predict(Model<T>& binary_model, Model<T>& benign_model,
                               Model<T>& malignant_model, const Tensor<T>& image) {
    const auto binary_out = detail::predict_one(binary_model, image);
    Diagnosis d;
    if (binary_out.size() == 1) {  // sigmoid head: P(malignant)
        d.class_probs = {1.0 - binary_out[0], binary_out[0]};
    } else if (binary_out.size() == 2) {
        d.class_probs = {binary_out[0], binary_out[1]};
    } else {
        throw ShapeError("hierarchical_predict: binary model must output 1 or 2 values");
    }
    d.tumor_class = d.class_probs[1] > d.class_probs[0] ? TumorClass::malignant : TumorClass::benign;

    Model<T>& routed = d.tumor_class == TumorClass::malignant ? malignant_model : benign_model;
    const auto sub_out = detail::predict_one(routed, image);
    if (sub_out.size() != 4)
        throw ShapeError("hierarchical_predict: subtype model must output 4 values");
    int best = 0;
    for (int j = 0; j < 4; ++j) {
        d.subtype_probs[static_cast<std::size_t>(j)] = sub_out[static_cast<std::size_t>(j)];
        if (sub_out[static_cast<std::size_t>(j)] > sub_out[static_cast<std::size_t>(best)]) best = j;
    }
    d.subtype_index = best;
    const auto& taxonomy =
        d.tumor_class == TumorClass::malignant ? malignant_subtypes() : benign_subtypes();
    d.subtype = taxonomy[static_cast<std::size_t>(best)];
    return d;
}

/// Analytic trainable-parameter count from the layer list (kernel + bias,
/// gamma + beta), independent of any ParamSet.
inline std::size_t parameter_count(const ModelGraph& g) {
    std::size_t count = 0;
    for (const auto& [name, shape] : param_shapes(g)) {
        if (name.find("/moving_") != std::string::npos) continue;
        std::size_t n = 1;
        for (const std::size_t e : shape) n *= e;
        count += n;
    }
    return count;
}

}  // namespace histofuse
