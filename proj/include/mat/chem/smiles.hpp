#pragma once

#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mat/chem/molecule.hpp"
#include "mat/errors.hpp"

namespace mat {

namespace detail {

inline std::optional<int> organic_default_valence(Element e) {
    switch (e) {
        case Element::B: return 3;
        case Element::C: return 4;
        case Element::N: return 3;
        case Element::O: return 2;
        case Element::P: return 3;
        case Element::S: return 2;
        case Element::F:
        case Element::Cl:
        case Element::Br:
        case Element::I: return 1;
        default: return std::nullopt;
    }
}

}  // namespace detail

/// Parses the supported SMILES subset: organic-subset atoms, bracket atoms
/// with H-count/charge, aromatic lowercase atoms, bonds - = # :, branches,
/// ring closures (digit or %nn). Stereochemistry, isotopes, wildcards and
/// disconnected structures are rejected with the byte offset of the token.
///
/// Implicit hydrogens follow the organic-subset valences (B3 C4 N3 O2 P3 S2,
/// halogens 1), reduced by the explicit bond order sum (aromatic bonds count
/// 1.5, rounded up) and by |formal charge|. Bracket atoms with an explicit
/// H count use exactly that count.
inline Molecule parse_smiles(const std::string& text) {
    Molecule mol;
    mol.source_id = text;

    struct PendingRing {
        std::size_t atom;
        char bond_sym;  // 0 = unspecified
        std::size_t offset;
    };

    std::vector<std::size_t> branch_stack;
    std::map<int, PendingRing> open_rings;
    std::optional<std::size_t> prev;  // previous atom in the current chain
    char pending_bond = 0;            // explicit bond symbol awaiting its target
    std::size_t pending_bond_at = 0;
    // atoms parsed without brackets get valence-based implicit hydrogens
    std::vector<bool> wants_implicit_h;

    auto fail = [&](std::size_t offset, const std::string& msg) {
        throw ParseError("smiles offset " + std::to_string(offset) + ": " + msg);
    };

    auto add_bond = [&](std::size_t a, std::size_t b, char sym, std::size_t offset) {
        Bond bond;
        bond.a = a;
        bond.b = b;
        switch (sym) {
            case 0:
                if (mol.atoms[a].is_aromatic && mol.atoms[b].is_aromatic) {
                    bond.order = 1.5;
                    bond.is_aromatic = true;
                } else {
                    bond.order = 1.0;
                }
                break;
            case '-': bond.order = 1.0; break;
            case '=': bond.order = 2.0; break;
            case '#': bond.order = 3.0; break;
            case ':':
                bond.order = 1.5;
                bond.is_aromatic = true;
                break;
            default: fail(offset, std::string("unsupported bond '") + sym + "'");
        }
        mol.bonds.push_back(bond);
    };

    auto attach_atom = [&](Atom atom, bool implicit_h, std::size_t offset) {
        mol.atoms.push_back(std::move(atom));
        wants_implicit_h.push_back(implicit_h);
        const std::size_t idx = mol.atoms.size() - 1;
        if (prev) {
            add_bond(*prev, idx, pending_bond, offset);
        } else if (pending_bond != 0) {
            fail(pending_bond_at, "bond with no preceding atom");
        }
        pending_bond = 0;
        prev = idx;
    };

    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        const char c = text[i];
        const std::size_t at = i;

        if (c == '(') {
            if (!prev) fail(at, "branch before any atom");
            branch_stack.push_back(*prev);
            ++i;
            continue;
        }
        if (c == ')') {
            if (branch_stack.empty()) fail(at, "unmatched ')'");
            prev = branch_stack.back();
            branch_stack.pop_back();
            ++i;
            continue;
        }
        if (c == '-' || c == '=' || c == '#' || c == ':') {
            if (pending_bond != 0) fail(at, "two bond symbols in a row");
            pending_bond = c;
            pending_bond_at = at;
            ++i;
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '%') {
            int ring = 0;
            if (c == '%') {
                if (i + 2 >= n || !std::isdigit(static_cast<unsigned char>(text[i + 1])) ||
                    !std::isdigit(static_cast<unsigned char>(text[i + 2])))
                    fail(at, "'%' needs two digits");
                ring = (text[i + 1] - '0') * 10 + (text[i + 2] - '0');
                i += 3;
            } else {
                ring = c - '0';
                ++i;
            }
            if (!prev) fail(at, "ring closure before any atom");
            auto it = open_rings.find(ring);
            if (it == open_rings.end()) {
                open_rings[ring] = PendingRing{*prev, pending_bond, at};
            } else {
                char sym = pending_bond;
                if (sym == 0) sym = it->second.bond_sym;
                else if (it->second.bond_sym != 0 && it->second.bond_sym != sym)
                    fail(at, "ring closure bond mismatch");
                if (it->second.atom == *prev) fail(at, "ring closure to the same atom");
                add_bond(it->second.atom, *prev, sym, at);
                open_rings.erase(it);
            }
            pending_bond = 0;
            continue;
        }
        if (c == '[') {
            std::size_t j = i + 1;
            Atom atom;
            if (j < n && std::isupper(static_cast<unsigned char>(text[j]))) {
                atom.symbol = text[j++];
                if (j < n && std::islower(static_cast<unsigned char>(text[j])) &&
                    text[j] != 'h') {
                    // two-letter symbol, e.g. Cl, Br, Se
                    std::string two = atom.symbol + std::string(1, text[j]);
                    atom.symbol = two;
                    ++j;
                }
            } else if (j < n && std::string("bcnops").find(text[j]) != std::string::npos) {
                atom.symbol = static_cast<char>(std::toupper(text[j]));
                atom.is_aromatic = true;
                ++j;
            } else if (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) {
                fail(j, "isotopes are not supported");
            } else {
                fail(j, "expected element symbol in brackets");
            }
            atom.element = element_from_symbol(atom.symbol);

            std::optional<int> hcount;
            int charge = 0;
            while (j < n && text[j] != ']') {
                const char t = text[j];
                if (t == 'H') {
                    int h = 1;
                    ++j;
                    if (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) {
                        h = text[j] - '0';
                        ++j;
                    }
                    hcount = h;
                } else if (t == '+' || t == '-') {
                    const int sign = t == '+' ? 1 : -1;
                    ++j;
                    if (j < n && text[j] == t) {  // ++ / --
                        charge = 2 * sign;
                        ++j;
                    } else if (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) {
                        charge = sign * (text[j] - '0');
                        ++j;
                    } else {
                        charge = sign;
                    }
                } else if (t == '@') {
                    fail(j, "stereochemistry is not supported");
                } else {
                    fail(j, std::string("unsupported bracket token '") + t + "'");
                }
            }
            if (j >= n) fail(at, "unterminated bracket atom");
            atom.formal_charge = charge;
            if (hcount) atom.explicit_h_count = hcount;
            attach_atom(std::move(atom), !hcount.has_value(), at);
            i = j + 1;
            continue;
        }
        if (std::isupper(static_cast<unsigned char>(c))) {
            std::string sym(1, c);
            std::size_t adv = 1;
            if (i + 1 < n && ((c == 'C' && text[i + 1] == 'l') ||
                              (c == 'B' && text[i + 1] == 'r'))) {
                sym += text[i + 1];
                adv = 2;
            }
            Atom atom;
            atom.symbol = sym;
            atom.element = element_from_symbol(sym);
            if (!detail::organic_default_valence(atom.element))
                fail(at, "element '" + sym + "' needs brackets");
            attach_atom(std::move(atom), true, at);
            i += adv;
            continue;
        }
        if (std::string("bcnops").find(c) != std::string::npos) {
            Atom atom;
            atom.symbol = static_cast<char>(std::toupper(c));
            atom.element = element_from_symbol(atom.symbol);
            atom.is_aromatic = true;
            attach_atom(std::move(atom), true, at);
            ++i;
            continue;
        }
        fail(at, std::string("unsupported token '") + c + "'");
    }

    if (!branch_stack.empty()) fail(n, "unclosed '('");
    if (!open_rings.empty())
        fail(open_rings.begin()->second.offset,
             "unclosed ring digit " + std::to_string(open_rings.begin()->first));
    if (pending_bond != 0) fail(pending_bond_at, "dangling bond symbol");
    if (mol.atoms.empty()) fail(0, "empty SMILES");

    // implicit hydrogens from valence, explicit bond orders and charge
    std::vector<double> order_sum(mol.atoms.size(), 0.0);
    for (const Bond& b : mol.bonds) {
        order_sum[b.a] += b.order;
        order_sum[b.b] += b.order;
    }
    for (std::size_t k = 0; k < mol.atoms.size(); ++k) {
        Atom& a = mol.atoms[k];
        if (a.explicit_h_count) continue;
        if (!wants_implicit_h[k]) {
            a.explicit_h_count = 0;
            continue;
        }
        const auto val = detail::organic_default_valence(a.element);
        if (!val) {
            a.explicit_h_count = 0;
            continue;
        }
        const int bonds = static_cast<int>(std::ceil(order_sum[k] - 1e-9));
        const int h = *val - bonds - std::abs(a.formal_charge);
        a.explicit_h_count = h > 0 ? h : 0;
    }

    finalize_molecule(mol, "smiles \"" + text + "\"");
    return mol;
}

}  // namespace mat
