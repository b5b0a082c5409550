#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mat/config.hpp"
#include "mat/errors.hpp"
#include "mat/model.hpp"

namespace mat {

/// Versioned parameter container. On disk:
///   "MATW" | u32 version | u32 config_len | config JSON bytes |
///   u32 param_count | per param: u32 name_len, name, u32 rank,
///   u32 dims[rank], f32 LE payload.
/// All integers little-endian; payloads are 32-bit floats, so a round trip
/// reproduces forward outputs to 32-bit rounding.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    MatConfig config;
    Params params;
    std::optional<std::pair<double, double>> target_standardization;  // (mean, std)
    std::optional<double> best_val_metric;

    /// Rounds every parameter through f32, i.e. what load(save(*this))
    /// yields. Lets tests compare exactly.
    Params params_f32() const {
        Params out = params;
        for (auto& [name, t] : out.values)
            for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
        return out;
    }
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("checkpoint: truncated while reading u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

inline float get_f32(std::istream& is) {
    const std::uint32_t bits = get_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write("MATW", 4);
    detail::put_u32(os, Checkpoint::kVersion);

    nlohmann::json blob;
    blob["model"] = to_json(ck.config);
    if (ck.target_standardization) {
        blob["target_standardization"] = {{"mean", ck.target_standardization->first},
                                          {"std", ck.target_standardization->second}};
    }
    if (ck.best_val_metric) blob["best_val_metric"] = *ck.best_val_metric;
    const std::string cfg = blob.dump();
    detail::put_u32(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    detail::put_u32(os, static_cast<std::uint32_t>(ck.params.values.size()));
    for (const auto& [name, t] : ck.params.values) {
        detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) detail::put_u32(os, static_cast<std::uint32_t>(d));
        for (double v : t.data) detail::put_f32(os, static_cast<float>(v));
    }
    if (!os) throw IoError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MATW", 4) != 0)
        throw ParseError("'" + path + "' is not a MATW checkpoint");
    const std::uint32_t version = detail::get_u32(is);
    if (version != Checkpoint::kVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version));

    const std::uint32_t cfg_len = detail::get_u32(is);
    std::string cfg(cfg_len, '\0');
    is.read(cfg.data(), cfg_len);
    if (!is) throw IoError("checkpoint: truncated config blob");

    Checkpoint ck;
    nlohmann::json blob;
    try {
        blob = nlohmann::json::parse(cfg);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint config blob: ") + e.what());
    }
    ck.config = mat_config_from_json(blob.at("model"));
    if (blob.contains("target_standardization")) {
        ck.target_standardization = {blob["target_standardization"]["mean"].get<double>(),
                                     blob["target_standardization"]["std"].get<double>()};
    }
    if (blob.contains("best_val_metric"))
        ck.best_val_metric = blob["best_val_metric"].get<double>();

    const std::uint32_t count = detail::get_u32(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = detail::get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t rank = detail::get_u32(is);
        std::vector<std::size_t> shape(rank);
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = detail::get_u32(is);
            numel *= shape[d];
        }
        Tensor t;
        t.shape = std::move(shape);
        t.data.resize(numel);
        for (std::size_t k = 0; k < numel; ++k)
            t.data[k] = static_cast<double>(detail::get_f32(is));
        if (!is) throw IoError("checkpoint: truncated payload for '" + name + "'");
        if (ck.params.values.count(name))
            throw ParseError("checkpoint: duplicate parameter '" + name + "'");
        ck.params.values[name] = std::move(t);
    }
    return ck;
}

}  // namespace mat
