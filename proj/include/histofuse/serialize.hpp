#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/graph.hpp"
#include "histofuse/models.hpp"

namespace histofuse {

/// Weights file, little-endian: magic `HFW1`, format version u32, tensor
/// count u32; per tensor: name length u16 + UTF-8 name, rank u8, extents
/// u32 x rank, data as 32-bit floats. Architecture metadata rides along as
/// extra size-1 tensors named `meta/<key>`, so a file identifies its own
/// model kind.
inline constexpr std::uint32_t kWeightsVersion = 1;
inline constexpr char kWeightsMagic[4] = {'H', 'F', 'W', '1'};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
public:
    Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

    std::size_t offset() const { return off_; }

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }

    std::uint16_t u16() {
        const char* p = take(2);
        return static_cast<std::uint16_t>(static_cast<std::uint8_t>(p[0]) |
                                          (static_cast<std::uint8_t>(p[1]) << 8));
    }

    std::uint32_t u32() {
        const char* p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[i])) << (8 * i);
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    std::string str(std::size_t n) {
        const char* p = take(n);
        return std::string(p, n);
    }

    bool at_end() const { return off_ == bytes_.size(); }

private:
    const char* take(std::size_t n) {
        if (off_ + n > bytes_.size())
            throw ParseError("'" + path_ + "': truncated weights file at offset " + std::to_string(off_));
        const char* p = bytes_.data() + off_;
        off_ += n;
        return p;
    }

    const std::string& bytes_;
    std::string path_;
    std::size_t off_ = 0;
};

}  // namespace detail

/// Serialize named float tensors (sorted map order makes the bytes
/// deterministic, so save/load/save round-trips are byte-identical).
inline std::string encode_weights(const ParamSet<float>& params,
                                  const std::map<std::string, double>& meta) {
    std::string out;
    out.append(kWeightsMagic, 4);
    detail::put_u32(out, kWeightsVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(params.size() + meta.size()));
    auto put_tensor = [&out](const std::string& name, const Tensor<float>& t) {
        if (name.size() > 0xffff) throw ConfigError("tensor name too long: " + name);
        detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.append(name);
        out.push_back(static_cast<char>(t.rank()));
        for (const std::size_t e : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(e));
        for (std::size_t i = 0; i < t.numel(); ++i) detail::put_f32(out, t[i]);
    };
    // metadata first (deterministic: both maps are ordered)
    for (const auto& [key, value] : meta)
        put_tensor("meta/" + key, Tensor<float>::scalar(static_cast<float>(value)));
    for (const auto& [name, t] : params) put_tensor(name, t);
    return out;
}

struct DecodedWeights {
    ParamSet<float> params;
    std::map<std::string, double> meta;
};

inline DecodedWeights decode_weights(const std::string& bytes, const std::string& path) {
    detail::Reader r(bytes, path);
    const std::string magic = r.str(4);
    if (magic != std::string(kWeightsMagic, 4))
        throw ParseError("'" + path + "': bad magic at offset 0");
    const std::uint32_t version = r.u32();
    if (version != kWeightsVersion)
        throw ParseError("'" + path + "': unsupported version " + std::to_string(version) +
                         " at offset 4");
    const std::uint32_t count = r.u32();
    DecodedWeights out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t name_off = r.offset();
        const std::uint16_t name_len = r.u16();
        const std::string name = r.str(name_len);
        if (name.empty())
            throw ParseError("'" + path + "': empty tensor name at offset " + std::to_string(name_off));
        const std::uint8_t rank = r.u8();
        std::vector<std::size_t> shape(rank);
        std::size_t numel = 1;
        for (std::uint8_t a = 0; a < rank; ++a) {
            shape[a] = r.u32();
            numel *= shape[a];
        }
        std::vector<float> data(numel);
        for (std::size_t j = 0; j < numel; ++j) data[j] = r.f32();
        Tensor<float> t(shape, std::move(data));
        if (name.rfind("meta/", 0) == 0 && t.numel() == 1) {
            out.meta[name.substr(5)] = static_cast<double>(t[0]);
        } else {
            if (out.params.count(name))
                throw ParseError("'" + path + "': duplicate tensor '" + name + "' at offset " +
                                 std::to_string(name_off));
            t.requires_grad = name.find("/moving_") == std::string::npos;
            out.params[name] = std::move(t);
        }
    }
    if (!r.at_end())
        throw ParseError("'" + path + "': trailing bytes at offset " + std::to_string(r.offset()));
    return out;
}

template <typename T>
void save_weights(const Model<T>& model, const std::string& path) {
    ParamSet<float> as_float;
    for (const auto& [name, t] : model.params) {
        Tensor<float> f = t.template cast<float>();
        f.requires_grad = t.requires_grad;
        as_float[name] = std::move(f);
    }
    const std::string bytes = encode_weights(as_float, model.graph.meta);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write weights file '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline DecodedWeights load_weights_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weights file '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_weights(bytes, path);
}

/// Load a file's tensors into an already-built model, checking every name
/// and shape against the architecture.
template <typename T>
void load_weights(Model<T>& model, const std::string& path) {
    const DecodedWeights file = load_weights_file(path);
    const auto expected = param_shapes(model.graph);
    for (const auto& [name, shape] : expected) {
        auto it = file.params.find(name);
        if (it == file.params.end())
            throw ShapeError("'" + path + "': missing tensor '" + name + "' for this architecture");
        if (it->second.shape() != shape)
            throw ShapeError("'" + path + "': tensor '" + name + "' has shape " +
                             it->second.shape_string() + ", architecture expects " +
                             Tensor<float>::shape_string(shape));
    }
    for (const auto& [name, t] : file.params)
        if (!expected.count(name))
            throw ShapeError("'" + path + "': tensor '" + name + "' does not belong to this architecture");

    ParamSet<T> params;
    for (const auto& [name, t] : file.params) {
        Tensor<T> v = t.template cast<T>();
        v.requires_grad = t.requires_grad;
        params[name] = std::move(v);
    }
    model.params = std::move(params);
}

/// Rebuild the architecture recorded in a weights file and load it.
inline Model<float> load_model(const std::string& path) {
    const DecodedWeights file = load_weights_file(path);
    auto need = [&](const char* key) {
        auto it = file.meta.find(key);
        if (it == file.meta.end())
            throw ParseError("'" + path + "': weights file carries no meta/" + std::string(key));
        return it->second;
    };
    const ModelKind kind = static_cast<ModelKind>(static_cast<int>(need("kind")));
    BuildOptions opts;
    opts.input_size = static_cast<std::size_t>(need("input_size"));
    opts.dropout = file.meta.count("dropout") ? file.meta.at("dropout") : 0.45;
    if (file.meta.count("stem_filters")) {
        opts.backbone.stem_filters = static_cast<std::size_t>(file.meta.at("stem_filters"));
        opts.backbone.layers_per_block = static_cast<std::size_t>(file.meta.at("layers_per_block"));
        opts.backbone.growth = static_cast<std::size_t>(file.meta.at("growth"));
        opts.backbone.compression = file.meta.at("compression");
        opts.backbone.concat_enabled = file.meta.at("concat_enabled") != 0.0;
    }
    if (file.meta.count("malignant_category"))
        opts.malignant_category = file.meta.at("malignant_category") != 0.0;

    Model<float> model;
    model.graph = build_model(kind, opts);
    load_weights(model, path);
    return model;
}

}  // namespace histofuse
