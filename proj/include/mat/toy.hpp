#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mat/chem/molecule.hpp"
#include "mat/errors.hpp"
#include "mat/rng.hpp"

namespace mat {

/// Synthetic geometric-graph classification set: does the donor marker (the
/// molecule's single N atom) sit within `threshold` Angstrom of the probe
/// marker (the single S atom)?
struct ToySet {
    std::vector<Molecule> molecules;
    std::vector<int> labels;
    std::vector<double> marker_distances;
    double threshold = 0.0;       // the tuned value actually used
    double positive_fraction = 0.0;
};

struct ToyOptions {
    std::size_t min_nodes = 10;
    std::size_t max_nodes = 40;
    double min_separation = 1.0;   // hard floor on any pairwise distance
    double step_min = 1.2;         // bond step length range
    double step_max = 1.7;
    double confine_scale = 2.1;    // walk radius = scale * cbrt(n)
    std::size_t max_extra_edges = 3;
    double extra_edge_cutoff = 2.3;  // spatial cutoff for ring-forming edges
};

namespace detail {

inline Vec3 random_unit(Rng& rng) {
    // rejection sample inside the unit ball, then normalize
    for (;;) {
        const double x = rng.uniform(-1.0, 1.0);
        const double y = rng.uniform(-1.0, 1.0);
        const double z = rng.uniform(-1.0, 1.0);
        const double r2 = x * x + y * y + z * z;
        if (r2 > 1e-6 && r2 <= 1.0) {
            const double r = std::sqrt(r2);
            return {x / r, y / r, z / r};
        }
    }
}

inline Molecule random_geometric_molecule(Rng& rng, const ToyOptions& opt) {
    const std::size_t n =
        opt.min_nodes + rng.uniform_index(opt.max_nodes - opt.min_nodes + 1);
    const double radius = opt.confine_scale * std::cbrt(static_cast<double>(n));

    Molecule mol;
    mol.atoms.resize(n);
    std::vector<Vec3> pos(n);
    pos[0] = {0.0, 0.0, 0.0};

    for (std::size_t i = 1; i < n; ++i) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < 400 && !placed; ++attempt) {
            const std::size_t parent = rng.uniform_index(i);
            const double step = rng.uniform(opt.step_min, opt.step_max);
            const Vec3 dir = random_unit(rng);
            const Vec3 cand{pos[parent].x + step * dir.x, pos[parent].y + step * dir.y,
                            pos[parent].z + step * dir.z};
            const double from_origin =
                std::sqrt(cand.x * cand.x + cand.y * cand.y + cand.z * cand.z);
            if (from_origin > radius) continue;
            bool ok = true;
            for (std::size_t j = 0; j < i && ok; ++j)
                if (distance(cand, pos[j]) < opt.min_separation) ok = false;
            if (!ok) continue;
            pos[i] = cand;
            Bond b;
            b.a = parent;
            b.b = i;
            mol.bonds.push_back(b);
            placed = true;
        }
        if (!placed)
            throw NumericError("toy_generate: could not place node " + std::to_string(i));
    }

    // a few spatially-close extra edges so some molecules carry rings
    const std::size_t extra = rng.uniform_index(opt.max_extra_edges + 1);
    for (std::size_t e = 0; e < extra; ++e) {
        for (std::size_t attempt = 0; attempt < 40; ++attempt) {
            const std::size_t a = rng.uniform_index(n);
            const std::size_t b = rng.uniform_index(n);
            if (a == b) continue;
            if (distance(pos[a], pos[b]) > opt.extra_edge_cutoff) continue;
            bool dup = false;
            for (const Bond& bd : mol.bonds)
                if ((bd.a == a && bd.b == b) || (bd.a == b && bd.b == a)) dup = true;
            if (dup) continue;
            Bond bd;
            bd.a = std::min(a, b);
            bd.b = std::max(a, b);
            mol.bonds.push_back(bd);
            break;
        }
    }

    // markers: exactly one N (donor) and one S (probe); everything else from
    // the remaining featurization alphabet
    static const char* kFiller[] = {"B", "C", "O", "F", "P", "Cl", "Br", "I"};
    const std::size_t donor = rng.uniform_index(n);
    std::size_t probe = rng.uniform_index(n);
    while (probe == donor) probe = rng.uniform_index(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::string sym = kFiller[rng.uniform_index(8)];
        if (i == donor) sym = "N";
        else if (i == probe) sym = "S";
        mol.atoms[i].symbol = sym;
        mol.atoms[i].element = element_from_symbol(sym);
        mol.atoms[i].position = pos[i];
    }
    finalize_molecule(mol, "toy molecule");
    return mol;
}

inline std::pair<std::size_t, std::size_t> find_markers(const Molecule& mol) {
    std::size_t donor = mol.atoms.size(), probe = mol.atoms.size();
    for (std::size_t i = 0; i < mol.atoms.size(); ++i) {
        if (mol.atoms[i].element == Element::N) donor = i;
        if (mol.atoms[i].element == Element::S) probe = i;
    }
    if (donor >= mol.atoms.size() || probe >= mol.atoms.size())
        throw ConfigError("toy molecule is missing a marker atom");
    return {donor, probe};
}

}  // namespace detail

/// Builds `count` molecules and labels them 1 when the marker distance is
/// below the threshold. If the requested threshold does not land the positive
/// class in [0.45, 0.55], it is re-tuned to the median marker distance; if
/// even that cannot balance (degenerate distances), this throws.
inline ToySet toy_generate(std::size_t count, double threshold, std::uint64_t seed,
                           const ToyOptions& opt = {}) {
    if (count < 10) throw ConfigError("toy_generate: need at least 10 molecules");
    if (threshold <= 0.0) throw ConfigError("toy_generate: threshold must be positive");

    Rng rng(seed, RngStream::Data);
    ToySet set;
    set.molecules.reserve(count);
    set.marker_distances.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Molecule mol = detail::random_geometric_molecule(rng, opt);
        mol.source_id = "toy_" + std::to_string(i + 1);
        const auto [donor, probe] = detail::find_markers(mol);
        set.marker_distances.push_back(
            distance(*mol.atoms[donor].position, *mol.atoms[probe].position));
        set.molecules.push_back(std::move(mol));
    }

    auto positive_fraction = [&](double thr) {
        std::size_t pos = 0;
        for (double d : set.marker_distances) pos += d < thr ? 1 : 0;
        return static_cast<double>(pos) / static_cast<double>(count);
    };

    set.threshold = threshold;
    set.positive_fraction = positive_fraction(threshold);
    if (set.positive_fraction < 0.45 || set.positive_fraction > 0.55) {
        std::vector<double> sorted = set.marker_distances;
        std::sort(sorted.begin(), sorted.end());
        set.threshold = sorted[count / 2];
        set.positive_fraction = positive_fraction(set.threshold);
        if (set.positive_fraction < 0.45 || set.positive_fraction > 0.55)
            throw NumericError("toy_generate: could not balance classes (positive fraction " +
                               std::to_string(set.positive_fraction) + ")");
    }
    set.labels.reserve(count);
    for (double d : set.marker_distances) set.labels.push_back(d < set.threshold ? 1 : 0);
    return set;
}

/// V2000 molfile writer for generated molecules (coordinates, single bonds).
inline void write_sdf(const std::vector<Molecule>& mols, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    char buf[128];
    for (const Molecule& mol : mols) {
        os << mol.source_id << "\n  matkit\n\n";
        std::snprintf(buf, sizeof(buf), "%3zu%3zu  0  0  0  0  0  0  0  0999 V2000\n",
                      mol.atoms.size(), mol.bonds.size());
        os << buf;
        for (const Atom& a : mol.atoms) {
            const Vec3 p = a.position.value_or(Vec3{});
            std::snprintf(buf, sizeof(buf), "%10.4f%10.4f%10.4f %-3s 0  0  0  0  0  0  0  0  0  0  0  0\n",
                          p.x, p.y, p.z, a.symbol.c_str());
            os << buf;
        }
        for (const Bond& b : mol.bonds) {
            const int order = b.is_aromatic ? 4 : static_cast<int>(b.order);
            std::snprintf(buf, sizeof(buf), "%3zu%3zu%3d  0\n", b.a + 1, b.b + 1, order);
            os << buf;
        }
        os << "M  END\n$$$$\n";
    }
    if (!os) throw IoError("write failed for '" + path + "'");
}

/// Writes the paired dataset file referencing the SDF records.
inline void write_toy_dataset(const ToySet& set, const std::string& sdf_path,
                              const std::string& csv_path) {
    write_sdf(set.molecules, sdf_path);
    std::ofstream os(csv_path);
    if (!os) throw IoError("cannot open '" + csv_path + "' for writing");
    const std::string sdf_name =
        std::filesystem::path(sdf_path).filename().string();
    os << "input,label\n";
    for (std::size_t i = 0; i < set.molecules.size(); ++i)
        os << sdf_name << "#" << (i + 1) << "," << set.labels[i] << "\n";
    if (!os) throw IoError("write failed for '" + csv_path + "'");
}

}  // namespace mat
