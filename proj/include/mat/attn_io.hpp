#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mat/errors.hpp"
#include "mat/model.hpp"

namespace mat {

enum class AttentionTermKind { Composite, Softmax, Distance, Adjacency };

inline const char* to_string(AttentionTermKind k) {
    switch (k) {
        case AttentionTermKind::Composite: return "composite";
        case AttentionTermKind::Softmax: return "softmax";
        case AttentionTermKind::Distance: return "distance";
        case AttentionTermKind::Adjacency: return "adjacency";
    }
    return "?";
}

/// One attention-record file: a text header naming the dimensions, then
/// layers*heads*n*n row-major f32 little-endian values.
///   MATATTN kind=<k> layers=<L> heads=<H> n=<N>\n
inline void write_attention_file(const AttentionRecord& rec, AttentionTermKind kind,
                                 const std::string& path) {
    const auto& src = kind == AttentionTermKind::Composite ? rec.composite
                      : kind == AttentionTermKind::Softmax ? rec.softmax_term
                      : kind == AttentionTermKind::Distance ? rec.distance_term
                                                            : rec.adjacency_term;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "MATATTN kind=" << to_string(kind) << " layers=" << rec.layers
       << " heads=" << rec.heads << " n=" << rec.n << "\n";
    for (std::size_t l = 0; l < rec.layers; ++l)
        for (std::size_t h = 0; h < rec.heads; ++h)
            for (double v : src[l][h]) {
                const float f = static_cast<float>(v);
                std::uint32_t bits;
                std::memcpy(&bits, &f, 4);
                const unsigned char b[4] = {
                    static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                    static_cast<unsigned char>(bits >> 16),
                    static_cast<unsigned char>(bits >> 24)};
                os.write(reinterpret_cast<const char*>(b), 4);
            }
    if (!os) throw IoError("write failed for '" + path + "'");
}

struct AttentionFile {
    std::string kind;
    std::size_t layers = 0, heads = 0, n = 0;
    std::vector<float> data;  // layers*heads*n*n row-major

    float at(std::size_t layer, std::size_t head, std::size_t i, std::size_t j) const {
        return data[((layer * heads + head) * n + i) * n + j];
    }
};

inline AttentionFile read_attention_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    std::string header;
    std::getline(is, header);
    AttentionFile f;
    std::istringstream hs(header);
    std::string magic;
    hs >> magic;
    if (magic != "MATATTN") throw ParseError("'" + path + "' is not an attention record");
    std::string tok;
    while (hs >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "kind") f.kind = val;
        else if (key == "layers") f.layers = std::stoul(val);
        else if (key == "heads") f.heads = std::stoul(val);
        else if (key == "n") f.n = std::stoul(val);
    }
    const std::size_t count = f.layers * f.heads * f.n * f.n;
    f.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        unsigned char b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        if (!is) throw IoError("'" + path + "': truncated payload");
        std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                             (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) |
                             (static_cast<std::uint32_t>(b[3]) << 24);
        std::memcpy(&f.data[i], &bits, 4);
    }
    return f;
}

/// Human-readable companion: the top-k attended atoms (by column-mean weight
/// over real rows) per layer/head.
inline void write_attention_summary(const AttentionRecord& rec, const Molecule& mol,
                                    std::size_t top_k, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "# molecule " << mol.source_id << ": top-" << top_k
       << " attended atoms per head (column-mean weight, real rows)\n";
    os << "layer\thead\trank\tatom\tsymbol\tweight\n";
    const std::size_t n_atoms = rec.has_dummy ? rec.n_real - 1 : rec.n_real;
    for (std::size_t l = 0; l < rec.layers; ++l) {
        for (std::size_t h = 0; h < rec.heads; ++h) {
            std::vector<std::pair<double, std::size_t>> scored;
            const auto& m = rec.composite[l][h];
            for (std::size_t j = 0; j < n_atoms; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n_atoms; ++i) acc += m[i * rec.n + j];
                scored.push_back({acc / static_cast<double>(n_atoms), j});
            }
            std::sort(scored.begin(), scored.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first; });
            for (std::size_t k = 0; k < std::min(top_k, scored.size()); ++k) {
                os << l << "\t" << h << "\t" << (k + 1) << "\t" << scored[k].second << "\t"
                   << mol.atoms[scored[k].second].symbol << "\t" << scored[k].first << "\n";
            }
        }
    }
}

}  // namespace mat
