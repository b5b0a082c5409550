#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mat/errors.hpp"

namespace mat {

/// Element buckets the featurization distinguishes. Anything else (including
/// explicit hydrogens present as atoms) is Other; the raw symbol is kept on
/// the Atom for pattern checks and debugging.
enum class Element { B, N, C, O, F, P, S, Cl, Br, I, Other };

inline Element element_from_symbol(const std::string& s) {
    if (s == "B") return Element::B;
    if (s == "N") return Element::N;
    if (s == "C") return Element::C;
    if (s == "O") return Element::O;
    if (s == "F") return Element::F;
    if (s == "P") return Element::P;
    if (s == "S") return Element::S;
    if (s == "Cl") return Element::Cl;
    if (s == "Br") return Element::Br;
    if (s == "I") return Element::I;
    return Element::Other;
}

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

inline double distance(const Vec3& a, const Vec3& b) {
    const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

struct Atom {
    Element element = Element::Other;
    std::string symbol;  // as written in the input
    int formal_charge = 0;
    std::optional<int> explicit_h_count;  // set by the SMILES path
    bool is_aromatic = false;
    bool in_ring = false;  // recomputed from the bond graph
    std::optional<Vec3> position;
};

struct Bond {
    std::size_t a = 0;
    std::size_t b = 0;
    double order = 1.0;  // 1, 1.5, 2 or 3; 1.5 exactly when aromatic
    bool is_aromatic = false;
    bool in_ring = false;        // recomputed
    bool is_conjugated = false;  // recomputed
};

struct Molecule {
    std::vector<Atom> atoms;
    std::vector<Bond> bonds;
    std::string source_id;

    bool has_positions() const {
        return !atoms.empty() && atoms.front().position.has_value();
    }
    bool is_hydrogen(std::size_t i) const { return atoms[i].symbol == "H"; }

    std::vector<std::vector<std::size_t>> adjacency_list() const {
        std::vector<std::vector<std::size_t>> adj(atoms.size());
        for (const Bond& b : bonds) {
            adj[b.a].push_back(b.b);
            adj[b.b].push_back(b.a);
        }
        return adj;
    }

    std::size_t heavy_neighbor_count(std::size_t i) const {
        std::size_t n = 0;
        for (const Bond& b : bonds) {
            if (b.a == i && !is_hydrogen(b.b)) ++n;
            if (b.b == i && !is_hydrogen(b.a)) ++n;
        }
        return n;
    }

    /// Hydrogen count for featurization: the parser-computed count when
    /// present, otherwise explicit H atoms bonded to this one.
    int hydrogen_count(std::size_t i) const {
        if (atoms[i].explicit_h_count) return *atoms[i].explicit_h_count;
        int n = 0;
        for (const Bond& b : bonds) {
            if (b.a == i && is_hydrogen(b.b)) ++n;
            if (b.b == i && is_hydrogen(b.a)) ++n;
        }
        return n;
    }
};

namespace detail {

/// Marks which bonds lie on a cycle (i.e. are not bridges), by iterative DFS
/// with lowpoints.
inline std::vector<bool> bond_on_cycle(const Molecule& mol) {
    const std::size_t n = mol.atoms.size();
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(n);  // (nbr, bond)
    for (std::size_t bi = 0; bi < mol.bonds.size(); ++bi) {
        adj[mol.bonds[bi].a].push_back({mol.bonds[bi].b, bi});
        adj[mol.bonds[bi].b].push_back({mol.bonds[bi].a, bi});
    }
    std::vector<bool> on_cycle(mol.bonds.size(), true);
    std::vector<int> disc(n, -1), low(n, 0);
    int timer = 0;

    struct Frame {
        std::size_t v;
        std::size_t parent_bond;
        std::size_t edge_i;
    };
    for (std::size_t s = 0; s < n; ++s) {
        if (disc[s] != -1) continue;
        std::vector<Frame> stack{{s, static_cast<std::size_t>(-1), 0}};
        disc[s] = low[s] = timer++;
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.edge_i < adj[f.v].size()) {
                auto [u, bi] = adj[f.v][f.edge_i++];
                if (bi == f.parent_bond) continue;
                if (disc[u] == -1) {
                    disc[u] = low[u] = timer++;
                    stack.push_back({u, bi, 0});
                } else {
                    low[f.v] = std::min(low[f.v], disc[u]);
                }
            } else {
                const Frame done = f;
                stack.pop_back();
                if (!stack.empty()) {
                    Frame& p = stack.back();
                    low[p.v] = std::min(low[p.v], low[done.v]);
                    if (low[done.v] > disc[p.v]) on_cycle[done.parent_bond] = false;  // bridge
                }
            }
        }
    }
    return on_cycle;
}

/// Whether a double/triple bond other than `self` touches atom i.
inline bool has_multiple_bond_at(const Molecule& mol, std::size_t i, std::size_t self) {
    for (std::size_t bi = 0; bi < mol.bonds.size(); ++bi) {
        if (bi == self) continue;
        const Bond& b = mol.bonds[bi];
        if (b.order < 2.0) continue;
        if (b.a == i || b.b == i) return true;
    }
    return false;
}

}  // namespace detail

/// Validates bond indices, rejects duplicates/self-loops, then recomputes
/// ring membership and conjugation flags. Both parsers funnel through here.
inline void finalize_molecule(Molecule& mol, const std::string& context) {
    const std::size_t n = mol.atoms.size();
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const Bond& b : mol.bonds) {
        if (b.a >= n || b.b >= n)
            throw ParseError(context + ": bond endpoint out of range");
        if (b.a == b.b) throw ParseError(context + ": self-bond");
        auto key = std::minmax(b.a, b.b);
        if (!seen.insert(key).second)
            throw ParseError(context + ": duplicate bond " + std::to_string(b.a + 1) + "-" +
                             std::to_string(b.b + 1));
    }

    const std::vector<bool> cyc = detail::bond_on_cycle(mol);
    for (Atom& a : mol.atoms) a.in_ring = false;
    for (std::size_t bi = 0; bi < mol.bonds.size(); ++bi) {
        mol.bonds[bi].in_ring = cyc[bi];
        if (cyc[bi]) {
            mol.atoms[mol.bonds[bi].a].in_ring = true;
            mol.atoms[mol.bonds[bi].b].in_ring = true;
        }
    }

    // conjugated: aromatic, or single/double adjacent to a double/triple bond
    for (std::size_t bi = 0; bi < mol.bonds.size(); ++bi) {
        Bond& b = mol.bonds[bi];
        if (b.is_aromatic) {
            b.is_conjugated = true;
        } else if (b.order == 1.0 || b.order == 2.0) {
            b.is_conjugated = detail::has_multiple_bond_at(mol, b.a, bi) ||
                              detail::has_multiple_bond_at(mol, b.b, bi);
        } else {
            b.is_conjugated = false;
        }
    }
}

}  // namespace mat
