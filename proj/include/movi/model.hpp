#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "movi/dcn.hpp"
#include "movi/frn.hpp"
#include "movi/sha256.hpp"

namespace movi {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The jointly trained codec model: DCN + FRN + entropy parameters behind one
// parameter store. Parameter registration order is fixed by construction
// order, which makes serialization and optimizer state stable.
template <typename T>
struct MoviModel {
    ModelConfig cfg;
    nn::ParamStore<T> params;
    Dcn<T> dcn;
    Frn<T> frn;
    nlohmann::json meta;  // free-form training provenance (lambda, steps, ...)

    explicit MoviModel(const ModelConfig& c, uint64_t init_seed = 1) : cfg(c) {
        Rng rng(init_seed);
        dcn = Dcn<T>(params, cfg, rng);
        frn = Frn<T>(params, cfg, rng);
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& [name, v] : params.items) n += v.val().numel();
        return n;
    }

    // Architecture + weights digest. Two models produce interchangeable
    // bitstreams only if everything hashed here matches; optimizer tensors
    // (prefix "opt.") never participate.
    std::array<uint8_t, 32> fingerprint() const {
        Sha256 h;
        h.update("movi-model-v1\n");
        h.update(cfg.canonical());
        for (const auto& [name, v] : params.items) {
            if (name.rfind("opt.", 0) == 0) continue;
            h.update(name);
            const auto& shape = v.val().shape();
            for (int64_t d : shape) {
                uint8_t le[8];
                for (int i = 0; i < 8; ++i) le[i] = static_cast<uint8_t>(uint64_t(d) >> (8 * i));
                h.update(le, 8);
            }
            // Tensor payload hashed as float32 regardless of the compute
            // type so a float and double instantiation of equal weights
            // fingerprint identically (weights are stored as float32).
            for (int64_t i = 0; i < v.val().numel(); ++i) {
                float f = static_cast<float>(v.val()[i]);
                uint32_t bits;
                std::memcpy(&bits, &f, 4);
                uint8_t le[4];
                for (int k = 0; k < 4; ++k) le[k] = static_cast<uint8_t>(bits >> (8 * k));
                h.update(le, 4);
            }
        }
        return h.finish();
    }
};

// Container layout: magic "MOVW", version u8, u64 little-endian JSON length,
// JSON index {config, meta, tensors: [{name, shape}]}, then raw float32
// little-endian tensor payloads in index order.
namespace model_io {

constexpr char kMagic[4] = {'M', 'O', 'V', 'W'};
constexpr uint8_t kVersion = 1;

template <typename T>
void save(const MoviModel<T>& model, const std::string& path,
          const nn::ParamStore<T>* extra = nullptr) {
    nlohmann::json index;
    index["config"] = model.cfg.to_json();
    index["meta"] = model.meta;
    nlohmann::json tensors = nlohmann::json::array();
    auto add = [&tensors](const std::string& name, const Shape& shape) {
        tensors.push_back({{"name", name}, {"shape", shape}});
    };
    for (const auto& [name, v] : model.params.items) add(name, v.val().shape());
    if (extra)
        for (const auto& [name, v] : extra->items) add(name, v.val().shape());
    index["tensors"] = std::move(tensors);
    std::string js = index.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ModelError("cannot open " + path + " for writing");
    out.write(kMagic, 4);
    out.put(static_cast<char>(kVersion));
    uint64_t len = js.size();
    char le[8];
    for (int i = 0; i < 8; ++i) le[i] = static_cast<char>(len >> (8 * i));
    out.write(le, 8);
    out.write(js.data(), static_cast<std::streamsize>(js.size()));
    auto write_tensor = [&out](const Tensor<T>& t) {
        for (int64_t i = 0; i < t.numel(); ++i) {
            float f = static_cast<float>(t[i]);
            char b[4];
            std::memcpy(b, &f, 4);
            out.write(b, 4);
        }
    };
    for (const auto& [name, v] : model.params.items) write_tensor(v.val());
    if (extra)
        for (const auto& [name, v] : extra->items) write_tensor(v.val());
    if (!out) throw ModelError("cannot write " + path);
}

// Loads a model; tensors not present in the freshly constructed model
// (e.g. optimizer state) are returned through `extra` when requested.
template <typename T>
MoviModel<T> load(const std::string& path, nn::ParamStore<T>* extra = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw ModelError(path + ": not a model container (bad magic)");
    int version = in.get();
    if (version != kVersion)
        throw ModelError(path + ": unsupported model container version " + std::to_string(version));
    char le[8];
    in.read(le, 8);
    if (!in) throw ModelError(path + ": truncated header");
    uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= uint64_t(static_cast<uint8_t>(le[i])) << (8 * i);
    std::string js(len, '\0');
    in.read(js.data(), static_cast<std::streamsize>(len));
    if (!in) throw ModelError(path + ": truncated index");
    nlohmann::json index = nlohmann::json::parse(js);

    MoviModel<T> model(ModelConfig::from_json(index["config"]));
    model.meta = index.value("meta", nlohmann::json::object());
    auto read_into = [&in, &path](Tensor<T>& t) {
        for (int64_t i = 0; i < t.numel(); ++i) {
            char b[4];
            in.read(b, 4);
            if (!in) throw ModelError(path + ": truncated tensor payload");
            float f;
            std::memcpy(&f, b, 4);
            t[i] = static_cast<T>(f);
        }
    };
    for (const auto& entry : index["tensors"]) {
        std::string name = entry["name"];
        Shape shape = entry["shape"].get<Shape>();
        if (Var<T>* p = model.params.find(name)) {
            if (p->val().shape() != shape)
                throw ModelError(path + ": tensor " + name + " has shape " + shape_str(shape) +
                                 ", model expects " + shape_str(p->val().shape()));
            read_into(p->val());
        } else if (extra) {
            Rng dummy(0);
            Var<T> v = extra->create(name, shape, T(0), dummy);
            read_into(v.val());
        } else {
            // Skip unknown payload (e.g. optimizer state when only the
            // model is wanted).
            Tensor<T> scratch(shape);
            read_into(scratch);
        }
    }
    return model;
}

}  // namespace model_io

}  // namespace movi
