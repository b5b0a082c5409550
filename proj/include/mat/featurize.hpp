#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <vector>

#include "mat/chem/molecule.hpp"
#include "mat/errors.hpp"
#include "mat/tensor.hpp"

namespace mat {

// 26-dim atom feature layout
inline constexpr std::size_t kFeatureDim = 26;
inline constexpr std::size_t kIdentityOffset = 0;   // 12-way one-hot
inline constexpr std::size_t kNeighborOffset = 12;  // 6-way one-hot, 0..5
inline constexpr std::size_t kHydrogenOffset = 18;  // 5-way one-hot, 0..4
inline constexpr std::size_t kChargeIndex = 23;
inline constexpr std::size_t kRingIndex = 24;
inline constexpr std::size_t kAromaticIndex = 25;
inline constexpr std::size_t kDummyIdentity = 10;  // ...,I,Dummy,other
inline constexpr std::size_t kOtherIdentity = 11;

/// Distance recorded between the dummy node and everything else, and used as
/// the padding distance; exp(-1e6) underflows to exactly 0.
inline constexpr double kFarDistance = 1e6;

/// What to do when a molecule arrives without 3D coordinates.
enum class DistanceFallback {
    Error,           // refuse
    ZeroLambdaOnly,  // fill D with the far sentinel; only valid when lambda_d = 0
    TopoApprox,      // 1.5 A per graph hop, a deliberately rough stand-in
};

enum class DistanceKernelKind { SoftmaxRows, Exp };

/// Model-ready tensors for one molecule. After make_batch, nodes beyond
/// n_real are padding: mask false, zero features/adjacency, far distances.
struct MolTensors {
    Tensor features;   // [n x 26]
    Tensor adjacency;  // [n x n], {0,1}
    Tensor distance;   // [n x n], Angstrom
    std::vector<std::uint8_t> mask;         // true for real nodes (incl. dummy)
    std::vector<std::uint8_t> masked_flag;  // pretraining mask-token channel
    std::size_t n_real = 0;
    bool has_dummy = false;
    bool distances_valid = true;
    std::optional<Tensor> bond_features;  // [n*n x 4] when edge features requested

    std::size_t n_nodes() const { return mask.size(); }
    /// Index of the dummy node (it is appended after the real atoms).
    std::size_t dummy_index() const { return n_real - 1; }
};

namespace detail {

inline std::size_t identity_index(Element e) {
    switch (e) {
        case Element::B: return 0;
        case Element::N: return 1;
        case Element::C: return 2;
        case Element::O: return 3;
        case Element::F: return 4;
        case Element::P: return 5;
        case Element::S: return 6;
        case Element::Cl: return 7;
        case Element::Br: return 8;
        case Element::I: return 9;
        default: return kOtherIdentity;
    }
}

/// All-pairs unweighted hop counts via BFS from every node.
inline std::vector<std::vector<int>> hop_counts(const Molecule& mol) {
    const std::size_t n = mol.atoms.size();
    const auto adj = mol.adjacency_list();
    std::vector<std::vector<int>> hops(n, std::vector<int>(n, -1));
    for (std::size_t s = 0; s < n; ++s) {
        std::deque<std::size_t> q{s};
        hops[s][s] = 0;
        while (!q.empty()) {
            const std::size_t v = q.front();
            q.pop_front();
            for (std::size_t u : adj[v])
                if (hops[s][u] == -1) {
                    hops[s][u] = hops[s][v] + 1;
                    q.push_back(u);
                }
        }
    }
    return hops;
}

}  // namespace detail

/// 4-dim per-bond feature vector: order, aromatic, conjugated, in-ring.
inline constexpr std::size_t kBondFeatureDim = 4;

inline std::array<double, kBondFeatureDim> bond_feature(const Bond& b) {
    return {b.order, b.is_aromatic ? 1.0 : 0.0, b.is_conjugated ? 1.0 : 0.0,
            b.in_ring ? 1.0 : 0.0};
}

/// Turns a parsed molecule into model tensors: per-atom feature rows,
/// adjacency, and the inter-atomic distance matrix. With add_dummy an extra
/// disconnected node is appended whose one-hot blocks sit at Dummy/0/0 and
/// whose distances are the far sentinel.
inline MolTensors featurize_molecule(const Molecule& mol, bool add_dummy,
                                     DistanceFallback fallback,
                                     bool with_bond_features = false) {
    const std::size_t n_atoms = mol.atoms.size();
    if (n_atoms == 0) throw ConfigError("featurize: molecule has no atoms");
    const std::size_t n = n_atoms + (add_dummy ? 1 : 0);

    MolTensors mt;
    mt.n_real = n;
    mt.has_dummy = add_dummy;
    mt.mask.assign(n, 1);
    mt.masked_flag.assign(n, 0);
    mt.features = Tensor(n, kFeatureDim);

    for (std::size_t i = 0; i < n_atoms; ++i) {
        const Atom& a = mol.atoms[i];
        double* row = &mt.features.at(i, 0);
        row[kIdentityOffset + detail::identity_index(a.element)] = 1.0;
        const std::size_t nb = std::min<std::size_t>(mol.heavy_neighbor_count(i), 5);
        row[kNeighborOffset + nb] = 1.0;
        const int h = std::min(std::max(mol.hydrogen_count(i), 0), 4);
        row[kHydrogenOffset + static_cast<std::size_t>(h)] = 1.0;
        row[kChargeIndex] = static_cast<double>(a.formal_charge);
        row[kRingIndex] = a.in_ring ? 1.0 : 0.0;
        row[kAromaticIndex] = a.is_aromatic ? 1.0 : 0.0;
    }
    if (add_dummy) {
        double* row = &mt.features.at(n_atoms, 0);
        row[kIdentityOffset + kDummyIdentity] = 1.0;
        row[kNeighborOffset + 0] = 1.0;
        row[kHydrogenOffset + 0] = 1.0;
    }

    mt.adjacency = Tensor(n, n);
    for (const Bond& b : mol.bonds) {
        mt.adjacency.at(b.a, b.b) = 1.0;
        mt.adjacency.at(b.b, b.a) = 1.0;
    }

    mt.distance = Tensor(n, n);
    if (mol.has_positions()) {
        for (std::size_t i = 0; i < n_atoms; ++i)
            for (std::size_t j = i + 1; j < n_atoms; ++j) {
                const double d = distance(*mol.atoms[i].position, *mol.atoms[j].position);
                mt.distance.at(i, j) = d;
                mt.distance.at(j, i) = d;
            }
    } else {
        switch (fallback) {
            case DistanceFallback::Error:
                throw ConfigError("featurize: molecule '" + mol.source_id +
                                  "' has no coordinates (distance fallback is 'error')");
            case DistanceFallback::ZeroLambdaOnly:
                for (std::size_t i = 0; i < n_atoms; ++i)
                    for (std::size_t j = 0; j < n_atoms; ++j)
                        if (i != j) mt.distance.at(i, j) = kFarDistance;
                mt.distances_valid = false;
                break;
            case DistanceFallback::TopoApprox: {
                const auto hops = detail::hop_counts(mol);
                for (std::size_t i = 0; i < n_atoms; ++i)
                    for (std::size_t j = 0; j < n_atoms; ++j) {
                        if (i == j) continue;
                        mt.distance.at(i, j) =
                            hops[i][j] < 0 ? kFarDistance : 1.5 * hops[i][j];
                    }
                break;
            }
        }
    }
    if (add_dummy) {
        for (std::size_t j = 0; j < n; ++j) {
            mt.distance.at(n_atoms, j) = kFarDistance;
            mt.distance.at(j, n_atoms) = kFarDistance;
        }
    }

    if (with_bond_features) {
        Tensor bf(n * n, kBondFeatureDim);
        for (const Bond& b : mol.bonds) {
            const auto f = bond_feature(b);
            for (std::size_t k = 0; k < kBondFeatureDim; ++k) {
                bf.data[(b.a * n + b.b) * kBondFeatureDim + k] = f[k];
                bf.data[(b.b * n + b.a) * kBondFeatureDim + k] = f[k];
            }
        }
        mt.bond_features = std::move(bf);
    }
    return mt;
}

/// g(D): either row-softmax of -D over unmasked columns (each unmasked row
/// sums to 1) or element-wise exp(-d). Masked columns are zero in both kinds.
inline Tensor distance_kernel(const Tensor& D, DistanceKernelKind kind,
                              const std::vector<std::uint8_t>& mask) {
    const std::size_t n = D.rows();
    if (D.cols() != n || mask.size() != n)
        throw ConfigError("distance_kernel: shape mismatch");
    Tensor g(n, n);
    if (kind == DistanceKernelKind::Exp) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (mask[j]) g.at(i, j) = std::exp(-D.at(i, j));
        return g;
    }
    // softmax over -D so closer atoms get more weight and the far sentinel
    // suppresses itself
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j)
            if (mask[j]) mx = std::max(mx, -D.at(i, j));
        if (!std::isfinite(mx)) continue;  // all columns masked: zero row
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (mask[j]) {
                const double e = std::exp(-D.at(i, j) - mx);
                g.at(i, j) = e;
                z += e;
            }
        for (std::size_t j = 0; j < n; ++j)
            if (mask[j]) g.at(i, j) /= z;
    }
    return g;
}

/// App-level 4 -> 1 learned map over bond features: E[i][j] =
/// relu(w . f_ij + b), with f_ij the zero vector for non-bonded pairs. Used
/// by the edge-feature model variant in place of the adjacency matrix.
struct EdgeMap {
    std::array<double, kBondFeatureDim> w{};
    double b = 0.0;
};

inline Tensor edge_feature_matrix(const Molecule& mol, const EdgeMap& map) {
    const std::size_t n = mol.atoms.size();
    Tensor e(n, n);
    const double background = std::max(map.b, 0.0);  // relu(0 . w + b)
    for (double& v : e.data) v = background;
    for (const Bond& bond : mol.bonds) {
        const auto f = bond_feature(bond);
        double acc = map.b;
        for (std::size_t k = 0; k < kBondFeatureDim; ++k) acc += map.w[k] * f[k];
        const double val = std::max(acc, 0.0);
        e.at(bond.a, bond.b) = val;
        e.at(bond.b, bond.a) = val;
    }
    return e;
}

/// Molecules stacked to a common node count. Feature/adjacency padding is
/// zero, distance padding is the far sentinel, mask false on padding.
struct Batch {
    std::vector<MolTensors> mols;
    std::size_t n_padded = 0;
};

inline MolTensors pad_mol(const MolTensors& in, std::size_t n_to) {
    const std::size_t n = in.n_nodes();
    if (n_to < n) throw ConfigError("pad_mol: pad_to smaller than node count");
    if (n_to == n) return in;
    MolTensors out;
    out.n_real = in.n_real;
    out.has_dummy = in.has_dummy;
    out.distances_valid = in.distances_valid;
    out.mask.assign(n_to, 0);
    out.masked_flag.assign(n_to, 0);
    for (std::size_t i = 0; i < n; ++i) {
        out.mask[i] = in.mask[i];
        out.masked_flag[i] = in.masked_flag[i];
    }
    out.features = Tensor(n_to, kFeatureDim);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < kFeatureDim; ++j)
            out.features.at(i, j) = in.features.at(i, j);
    out.adjacency = Tensor(n_to, n_to);
    out.distance = Tensor(n_to, n_to);
    for (double& v : out.distance.data) v = kFarDistance;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            out.adjacency.at(i, j) = in.adjacency.at(i, j);
            out.distance.at(i, j) = in.distance.at(i, j);
        }
    if (in.bond_features) {
        Tensor bf(n_to * n_to, kBondFeatureDim);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t k = 0; k < kBondFeatureDim; ++k)
                    bf.data[(i * n_to + j) * kBondFeatureDim + k] =
                        in.bond_features->data[(i * n + j) * kBondFeatureDim + k];
        out.bond_features = std::move(bf);
    }
    return out;
}

inline Batch make_batch(const std::vector<MolTensors>& mols,
                        std::optional<std::size_t> pad_to = std::nullopt) {
    if (mols.empty()) throw ConfigError("make_batch: empty batch");
    std::size_t n_max = 0;
    for (const MolTensors& m : mols) n_max = std::max(n_max, m.n_nodes());
    if (pad_to) {
        if (*pad_to < n_max) throw ConfigError("make_batch: pad_to below max node count");
        n_max = *pad_to;
    }
    Batch b;
    b.n_padded = n_max;
    b.mols.reserve(mols.size());
    for (const MolTensors& m : mols) b.mols.push_back(pad_mol(m, n_max));
    return b;
}

}  // namespace mat
