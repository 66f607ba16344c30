#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "blockspot/errors.hpp"
#include "blockspot/tokenizer.hpp"
#include "blockspot/uvlm/model.hpp"
#include "json.hpp"

namespace blockspot::uvlm {

struct CheckpointError : InputError {
    using InputError::InputError;
};

// Everything cmd_decode needs to rebuild the pipeline around the weights.
struct CheckpointMeta {
    Hyper hyper;
    std::vector<std::string> vocab_symbols;
    int patch_h = 8;
    int patch_w = 8;
    int img_h = 64;
    int img_w = 256;
    int crop_h = 0;  // keep only the top crop_h pixel rows before patching; 0 = all
    int channels = 3;
};

namespace detail {

inline nlohmann::json hyper_json(const Hyper& h) {
    return {{"layers", h.layers}, {"heads", h.heads},     {"dim", h.dim},
            {"ffn", h.ffn},       {"max_len", h.max_len}, {"vocab", h.vocab},
            {"patch_dim", h.patch_dim}};
}

inline Hyper hyper_from_json(const nlohmann::json& j) {
    Hyper h;
    h.layers = j.at("layers").get<int>();
    h.heads = j.at("heads").get<int>();
    h.dim = j.at("dim").get<int>();
    h.ffn = j.at("ffn").get<int>();
    h.max_len = j.at("max_len").get<int>();
    h.vocab = j.at("vocab").get<int>();
    h.patch_dim = j.at("patch_dim").get<int>();
    return h;
}

}  // namespace detail

// Container layout: one JSON manifest line (tensor names, shapes, dtype,
// byte offsets), then the raw little-endian float payload.
template <typename T>
void save_checkpoint(const std::string& path, const ModelParams<T>& params,
                     const CheckpointMeta& meta) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    nlohmann::json manifest;
    manifest["format"] = "blockspot-checkpoint";
    manifest["version"] = 1;
    manifest["dtype"] = std::is_same_v<T, float> ? "f32" : "f64";
    manifest["hyper"] = detail::hyper_json(params.hyper);
    manifest["vocab"] = meta.vocab_symbols;
    manifest["patch"] = {{"h", meta.patch_h}, {"w", meta.patch_w}, {"channels", meta.channels}};
    manifest["input"] = {{"h", meta.img_h}, {"w", meta.img_w}, {"crop_h", meta.crop_h}};

    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    auto& mut = const_cast<ModelParams<T>&>(params);
    for_each_tensor(mut, [&](const std::string& name, Mat<T>& m) {
        std::uint64_t nbytes = m.a.size() * sizeof(T);
        tensors.push_back({{"name", name},
                           {"rows", m.rows},
                           {"cols", m.cols},
                           {"offset", offset},
                           {"nbytes", nbytes}});
        offset += nbytes;
    });
    manifest["tensors"] = std::move(tensors);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
    out << manifest.dump() << '\n';
    for_each_tensor(mut, [&](const std::string&, Mat<T>& m) {
        out.write(reinterpret_cast<const char*>(m.a.data()),
                  static_cast<std::streamsize>(m.a.size() * sizeof(T)));
    });
    if (!out) throw CheckpointError("failed writing checkpoint payload: " + path);
}

template <typename T>
std::pair<ModelParams<T>, CheckpointMeta> load_checkpoint(const std::string& path) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line)) throw CheckpointError("checkpoint has no manifest line");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
    }
    if (manifest.value("format", "") != "blockspot-checkpoint") {
        throw CheckpointError("not a blockspot checkpoint: " + path);
    }
    std::string dtype = manifest.at("dtype").get<std::string>();
    if (dtype != "f32" && dtype != "f64") throw CheckpointError("unknown dtype: " + dtype);

    CheckpointMeta meta;
    ModelParams<T> params;
    try {
        meta.hyper = detail::hyper_from_json(manifest.at("hyper"));
        meta.vocab_symbols = manifest.at("vocab").get<std::vector<std::string>>();
        meta.patch_h = manifest.at("patch").at("h").get<int>();
        meta.patch_w = manifest.at("patch").at("w").get<int>();
        meta.channels = manifest.at("patch").at("channels").get<int>();
        meta.img_h = manifest.at("input").at("h").get<int>();
        meta.img_w = manifest.at("input").at("w").get<int>();
        meta.crop_h = manifest.at("input").value("crop_h", 0);

        params = make_params<T>(meta.hyper);
        const std::streampos payload_start = in.tellg();
        std::size_t idx = 0;
        const nlohmann::json& tensors = manifest.at("tensors");
        for_each_tensor(params, [&](const std::string& name, Mat<T>& m) {
            if (idx >= tensors.size()) throw CheckpointError("manifest is missing tensors");
            const nlohmann::json& t = tensors[idx++];
            if (t.at("name").get<std::string>() != name ||
                t.at("rows").get<int>() != m.rows || t.at("cols").get<int>() != m.cols) {
                throw CheckpointError("tensor " + name +
                                      " does not match the stated hyperparameters");
            }
            in.seekg(payload_start + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
            std::uint64_t nbytes = t.at("nbytes").get<std::uint64_t>();
            if (dtype == "f32") {
                std::vector<float> buf(nbytes / sizeof(float));
                in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(nbytes));
                if (buf.size() != m.a.size()) throw CheckpointError("tensor size mismatch: " + name);
                for (std::size_t i = 0; i < buf.size(); ++i) m.a[i] = static_cast<T>(buf[i]);
            } else {
                std::vector<double> buf(nbytes / sizeof(double));
                in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(nbytes));
                if (buf.size() != m.a.size()) throw CheckpointError("tensor size mismatch: " + name);
                for (std::size_t i = 0; i < buf.size(); ++i) m.a[i] = static_cast<T>(buf[i]);
            }
            if (!in) throw CheckpointError("truncated checkpoint payload: " + path);
        });
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
    }
    return {std::move(params), std::move(meta)};
}

}  // namespace blockspot::uvlm
