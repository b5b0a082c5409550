#pragma once

#include <charconv>
#include <cstdlib>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mat/chem/molecule.hpp"
#include "mat/errors.hpp"

namespace mat {

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

inline std::string_view field(std::string_view line, std::size_t pos, std::size_t len) {
    if (pos >= line.size()) return {};
    return trim(line.substr(pos, std::min(len, line.size() - pos)));
}

inline bool parse_int(std::string_view s, long& out) {
    s = trim(s);
    if (s.empty()) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
}

inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    std::string buf(s);
    char* end = nullptr;
    out = std::strtod(buf.c_str(), &end);
    return end == buf.c_str() + buf.size();
}

inline std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    // drop a trailing empty line from a final '\n'
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
}

// atom-block charge column codes (CTfile): 1..7 map to +3..-3, 0 is neutral,
// 4 is a radical marker we ignore
inline int charge_from_code(long code) {
    switch (code) {
        case 1: return 3;
        case 2: return 2;
        case 3: return 1;
        case 5: return -1;
        case 6: return -2;
        case 7: return -3;
        default: return 0;
    }
}

}  // namespace detail

struct SdfRecord {
    Molecule molecule;
    std::map<std::string, std::string> properties;  // "> <TAG>" data items
};

/// Parses one or more `$$$$`-separated V2000 molfile records. Fixed-column
/// atom/bond blocks, `M  CHG` honored (its presence supersedes the atom-block
/// charge column), property items after `M  END` captured by tag. Errors name
/// the 1-based record index and line number within the input.
inline std::vector<SdfRecord> parse_sdf_records(const std::string& text) {
    using detail::field;
    using detail::parse_double;
    using detail::parse_int;

    const std::vector<std::string> lines = detail::split_lines(text);
    std::vector<SdfRecord> records;
    std::size_t ln = 0;  // 0-based cursor into lines

    auto fail = [&](std::size_t record_idx, std::size_t line_no, const std::string& msg) {
        throw ParseError("sdf record " + std::to_string(record_idx + 1) + ", line " +
                         std::to_string(line_no + 1) + ": " + msg);
    };

    while (ln < lines.size()) {
        // skip blank padding between records
        while (ln < lines.size() && detail::trim(lines[ln]).empty()) ++ln;
        if (ln >= lines.size()) break;

        const std::size_t rec_idx = records.size();
        const std::size_t rec_start = ln;
        SdfRecord rec;
        if (lines.size() - ln < 4) fail(rec_idx, lines.size() - 1, "truncated header block");

        rec.molecule.source_id = std::string(detail::trim(lines[ln]));
        if (rec.molecule.source_id.empty())
            rec.molecule.source_id = "record_" + std::to_string(rec_idx + 1);
        ln = rec_start + 3;  // title, program, comment

        long natoms = 0, nbonds = 0;
        if (!parse_int(field(lines[ln], 0, 3), natoms) ||
            !parse_int(field(lines[ln], 3, 3), nbonds) || natoms < 0 || nbonds < 0)
            fail(rec_idx, ln, "malformed counts line");
        ++ln;

        bool any_chg_line = false;
        for (long i = 0; i < natoms; ++i, ++ln) {
            if (ln >= lines.size()) fail(rec_idx, lines.size() - 1, "atom block truncated");
            const std::string& l = lines[ln];
            Atom atom;
            double x, y, z;
            if (l.size() < 34 || !parse_double(field(l, 0, 10), x) ||
                !parse_double(field(l, 10, 10), y) || !parse_double(field(l, 20, 10), z))
                fail(rec_idx, ln, "malformed atom line");
            atom.position = Vec3{x, y, z};
            atom.symbol = std::string(field(l, 31, 3));
            if (atom.symbol.empty()) fail(rec_idx, ln, "missing element symbol");
            atom.element = element_from_symbol(atom.symbol);
            long chg_code = 0;
            if (parse_int(field(l, 36, 3), chg_code))
                atom.formal_charge = detail::charge_from_code(chg_code);
            rec.molecule.atoms.push_back(std::move(atom));
        }

        for (long i = 0; i < nbonds; ++i, ++ln) {
            if (ln >= lines.size()) fail(rec_idx, lines.size() - 1, "bond block truncated");
            const std::string& l = lines[ln];
            long a = 0, b = 0, btype = 0;
            if (!parse_int(field(l, 0, 3), a) || !parse_int(field(l, 3, 3), b) ||
                !parse_int(field(l, 6, 3), btype))
                fail(rec_idx, ln, "malformed bond line");
            if (a < 1 || a > natoms || b < 1 || b > natoms)
                fail(rec_idx, ln, "bond atom index out of range");
            Bond bond;
            bond.a = static_cast<std::size_t>(a - 1);
            bond.b = static_cast<std::size_t>(b - 1);
            switch (btype) {
                case 1: bond.order = 1.0; break;
                case 2: bond.order = 2.0; break;
                case 3: bond.order = 3.0; break;
                case 4:
                    bond.order = 1.5;
                    bond.is_aromatic = true;
                    rec.molecule.atoms[bond.a].is_aromatic = true;
                    rec.molecule.atoms[bond.b].is_aromatic = true;
                    break;
                default: fail(rec_idx, ln, "unknown bond type " + std::to_string(btype));
            }
            rec.molecule.bonds.push_back(bond);
        }

        // properties block up to M  END
        bool saw_end = false;
        for (; ln < lines.size(); ++ln) {
            const std::string& l = lines[ln];
            if (l.rfind("M  END", 0) == 0) {
                saw_end = true;
                ++ln;
                break;
            }
            if (l.rfind("M  CHG", 0) == 0) {
                if (!any_chg_line) {
                    any_chg_line = true;
                    for (Atom& a : rec.molecule.atoms) a.formal_charge = 0;
                }
                long count = 0;
                if (!parse_int(field(l, 6, 3), count)) fail(rec_idx, ln, "malformed M  CHG");
                for (long k = 0; k < count; ++k) {
                    long idx = 0, chg = 0;
                    if (!parse_int(field(l, 9 + 8 * k, 4), idx) ||
                        !parse_int(field(l, 13 + 8 * k, 4), chg) || idx < 1 || idx > natoms)
                        fail(rec_idx, ln, "malformed M  CHG entry");
                    rec.molecule.atoms[static_cast<std::size_t>(idx - 1)].formal_charge =
                        static_cast<int>(chg);
                }
            }
            // other M/A/V property lines skipped
        }
        if (!saw_end) fail(rec_idx, lines.size() - 1, "missing M  END");

        // data items: "> <TAG>" then value lines until a blank line
        while (ln < lines.size() && lines[ln].rfind("$$$$", 0) != 0) {
            const std::string& l = lines[ln];
            if (!l.empty() && l[0] == '>') {
                const std::size_t lt = l.find('<');
                const std::size_t gt = l.find('>', lt == std::string::npos ? 0 : lt);
                std::string tag = (lt != std::string::npos && gt != std::string::npos)
                                      ? l.substr(lt + 1, gt - lt - 1)
                                      : std::string();
                std::string value;
                ++ln;
                while (ln < lines.size() && !detail::trim(lines[ln]).empty() &&
                       lines[ln].rfind("$$$$", 0) != 0) {
                    if (!value.empty()) value += '\n';
                    value += std::string(detail::trim(lines[ln]));
                    ++ln;
                }
                if (!tag.empty()) rec.properties[tag] = value;
            } else {
                ++ln;
            }
        }
        if (ln < lines.size()) ++ln;  // consume $$$$

        finalize_molecule(rec.molecule,
                          "sdf record " + std::to_string(rec_idx + 1));
        records.push_back(std::move(rec));
    }
    return records;
}

inline std::vector<Molecule> parse_sdf(const std::string& text) {
    std::vector<Molecule> out;
    for (auto& rec : parse_sdf_records(text)) out.push_back(std::move(rec.molecule));
    return out;
}

}  // namespace mat
