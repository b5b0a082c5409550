#pragma once

#include <set>
#include <string>

#include "mat/chem/molecule.hpp"
#include "mat/errors.hpp"

namespace mat {

/// The six fixed atom patterns used by the attention analysis. CLI spelling
/// in parentheses: AromaticCarbonDeg2 (cD2), AnySulfur (S), NonRingNitrogen
/// (NR0), CarbonylOxygen (O=), AromaticDeg3 (aD3), AromaticNitrogen (n).
enum class PatternId {
    AromaticCarbonDeg2,
    AnySulfur,
    NonRingNitrogen,
    CarbonylOxygen,
    AromaticDeg3,
    AromaticNitrogen,
};

inline const char* pattern_name(PatternId p) {
    switch (p) {
        case PatternId::AromaticCarbonDeg2: return "cD2";
        case PatternId::AnySulfur: return "S";
        case PatternId::NonRingNitrogen: return "NR0";
        case PatternId::CarbonylOxygen: return "O=";
        case PatternId::AromaticDeg3: return "aD3";
        case PatternId::AromaticNitrogen: return "n";
    }
    return "?";
}

inline PatternId pattern_from_name(const std::string& s) {
    if (s == "cD2") return PatternId::AromaticCarbonDeg2;
    if (s == "S") return PatternId::AnySulfur;
    if (s == "NR0") return PatternId::NonRingNitrogen;
    if (s == "O=") return PatternId::CarbonylOxygen;
    if (s == "aD3") return PatternId::AromaticDeg3;
    if (s == "n") return PatternId::AromaticNitrogen;
    throw ConfigError("unknown pattern '" + s + "' (use cD2, S, NR0, O=, aD3, n)");
}

constexpr PatternId kAllPatterns[] = {
    PatternId::AromaticCarbonDeg2, PatternId::AnySulfur,  PatternId::NonRingNitrogen,
    PatternId::CarbonylOxygen,     PatternId::AromaticDeg3, PatternId::AromaticNitrogen,
};

/// Atoms matching the pattern; empty set when nothing matches.
inline std::set<std::size_t> match_pattern(const Molecule& mol, PatternId pattern) {
    std::set<std::size_t> out;
    for (std::size_t i = 0; i < mol.atoms.size(); ++i) {
        const Atom& a = mol.atoms[i];
        bool hit = false;
        switch (pattern) {
            case PatternId::AromaticCarbonDeg2:
                hit = a.element == Element::C && a.is_aromatic &&
                      mol.heavy_neighbor_count(i) == 2;
                break;
            case PatternId::AnySulfur:
                hit = a.element == Element::S;
                break;
            case PatternId::NonRingNitrogen:
                hit = a.element == Element::N && !a.in_ring;
                break;
            case PatternId::CarbonylOxygen: {
                if (a.element != Element::O) break;
                for (const Bond& b : mol.bonds)
                    if ((b.a == i || b.b == i) && b.order == 2.0) {
                        hit = true;
                        break;
                    }
                break;
            }
            case PatternId::AromaticDeg3:
                hit = a.is_aromatic && mol.heavy_neighbor_count(i) == 3;
                break;
            case PatternId::AromaticNitrogen:
                hit = a.element == Element::N && a.is_aromatic;
                break;
        }
        if (hit) out.insert(i);
    }
    return out;
}

}  // namespace mat
