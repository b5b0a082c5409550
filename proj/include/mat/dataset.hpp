#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mat/chem/sdf.hpp"
#include "mat/chem/smiles.hpp"
#include "mat/errors.hpp"
#include "mat/model.hpp"
#include "mat/rng.hpp"

namespace mat {

struct DataRecord {
    Molecule mol;
    double label = 0.0;
};

struct Standardization {
    double mean = 0.0;
    double std = 1.0;

    double apply(double y) const { return (y - mean) / std; }
    double invert(double z) const { return z * std + mean; }
};

struct Dataset {
    std::vector<DataRecord> records;
    Task task = Task::Regression;
    std::optional<Standardization> standardization;  // train-fold stats, regression only

    std::size_t size() const { return records.size(); }

    void validate_labels() const {
        for (const DataRecord& r : records) {
            if (!std::isfinite(r.label))
                throw ConfigError("dataset: non-finite label for '" + r.mol.source_id + "'");
            if (task == Task::Binary && r.label != 0.0 && r.label != 1.0)
                throw ConfigError("dataset: binary label not in {0,1} for '" +
                                  r.mol.source_id + "'");
        }
    }
};

namespace detail {

inline std::vector<std::string> split_delimited(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == delim) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline char sniff_delimiter(const std::string& header) {
    return header.find('\t') != std::string::npos ? '\t' : ',';
}

}  // namespace detail

/// Resolves one dataset `input` cell into a molecule: either a SMILES string
/// or a path to an SDF file, optionally `file.sdf#k` for the k-th (1-based)
/// record. SDF paths are taken relative to the dataset file's directory.
inline Molecule resolve_input(const std::string& cell, const std::filesystem::path& base_dir) {
    std::string path_part = cell;
    std::size_t record_idx = 1;
    const std::size_t hash = cell.rfind('#');
    if (hash != std::string::npos) {
        const std::string idx = cell.substr(hash + 1);
        if (!idx.empty() && idx.find_first_not_of("0123456789") == std::string::npos) {
            path_part = cell.substr(0, hash);
            record_idx = std::stoul(idx);
        }
    }
    auto lower = path_part;
    for (char& c : lower) c = static_cast<char>(std::tolower(c));
    if (lower.size() >= 4 && lower.substr(lower.size() - 4) == ".sdf") {
        std::filesystem::path p(path_part);
        if (p.is_relative()) p = base_dir / p;
        std::ifstream in(p);
        if (!in) throw IoError("cannot open SDF file '" + p.string() + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        auto mols = parse_sdf(ss.str());
        if (record_idx < 1 || record_idx > mols.size())
            throw ParseError("SDF record index " + std::to_string(record_idx) +
                             " out of range for '" + p.string() + "'");
        return mols[record_idx - 1];
    }
    return parse_smiles(cell);
}

/// Loads the delimited dataset format: a header naming `input` and `label`
/// columns (tab or comma separated), one record per line. The label column
/// may be absent for pretraining data.
inline Dataset load_dataset(const std::string& path, Task task) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset '" + path + "'");
    const std::filesystem::path base_dir = std::filesystem::path(path).parent_path();

    std::string header;
    if (!std::getline(in, header)) throw ParseError("dataset '" + path + "': empty file");
    const char delim = detail::sniff_delimiter(header);
    const auto cols = detail::split_delimited(header, delim);
    std::size_t input_col = cols.size(), label_col = cols.size();
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (cols[i] == "input") input_col = i;
        if (cols[i] == "label") label_col = i;
    }
    if (input_col == cols.size())
        throw ParseError("dataset '" + path + "': header needs an 'input' column");
    if (label_col == cols.size() && task != Task::NodePretrain)
        throw ParseError("dataset '" + path + "': header needs a 'label' column");

    Dataset ds;
    ds.task = task;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = detail::split_delimited(line, delim);
        if (cells.size() <= input_col)
            throw ParseError("dataset '" + path + "' line " + std::to_string(line_no) +
                             ": missing input cell");
        DataRecord rec;
        rec.mol = resolve_input(cells[input_col], base_dir);
        if (label_col < cells.size() && !cells[label_col].empty()) {
            try {
                rec.label = std::stod(cells[label_col]);
            } catch (const std::exception&) {
                throw ParseError("dataset '" + path + "' line " + std::to_string(line_no) +
                                 ": bad label '" + cells[label_col] + "'");
            }
        } else if (task != Task::NodePretrain) {
            throw ParseError("dataset '" + path + "' line " + std::to_string(line_no) +
                             ": missing label");
        }
        ds.records.push_back(std::move(rec));
    }
    ds.validate_labels();
    return ds;
}

/// Seeded permutation split. For regression, standardization stats are
/// computed on the train fold only (population std) and the labels of all
/// folds are standardized with them; the stats ride along for later
/// de-standardization. A fold with a nonzero fraction may not end up empty.
inline std::array<Dataset, 3> random_split(const Dataset& ds,
                                           std::array<double, 3> fractions,
                                           std::uint64_t seed) {
    const double total = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(total - 1.0) > 1e-9)
        throw ConfigError("random_split: fractions must sum to 1");
    const std::size_t n = ds.size();
    if (n == 0) throw ConfigError("random_split: empty dataset");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed, RngStream::Split);
    rng.shuffle(order);

    std::size_t n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
    std::size_t n_val = static_cast<std::size_t>(std::llround(fractions[1] * n));
    n_train = std::min(n_train, n);
    n_val = std::min(n_val, n - n_train);
    const std::size_t n_test = n - n_train - n_val;

    const std::array<std::size_t, 3> counts{n_train, n_val, n_test};
    for (std::size_t f = 0; f < 3; ++f)
        if (fractions[f] > 0.0 && counts[f] == 0)
            throw ConfigError("random_split: fold " + std::to_string(f) +
                              " would be empty");

    std::array<Dataset, 3> folds;
    std::size_t cursor = 0;
    for (std::size_t f = 0; f < 3; ++f) {
        folds[f].task = ds.task;
        for (std::size_t k = 0; k < counts[f]; ++k)
            folds[f].records.push_back(ds.records[order[cursor++]]);
    }

    if (ds.task == Task::Regression && !folds[0].records.empty()) {
        double mean = 0.0;
        for (const DataRecord& r : folds[0].records) mean += r.label;
        mean /= static_cast<double>(folds[0].size());
        double var = 0.0;
        for (const DataRecord& r : folds[0].records) {
            const double d = r.label - mean;
            var += d * d;
        }
        var /= static_cast<double>(folds[0].size());
        Standardization st{mean, var > 0.0 ? std::sqrt(var) : 1.0};
        for (Dataset& fold : folds) {
            fold.standardization = st;
            for (DataRecord& r : fold.records) r.label = st.apply(r.label);
        }
    }
    return folds;
}

}  // namespace mat
