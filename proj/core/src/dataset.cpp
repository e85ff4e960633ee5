#include "evfl/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "evfl/errors.hpp"

namespace evfl {

namespace {

constexpr double kVarianceFloor = 1e-12;

std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == delim) {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_number(const std::string& tok, std::size_t line_no) {
    try {
        std::size_t used = 0;
        double v = std::stod(tok, &used);
        while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used])))
            ++used;
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw IngestError("line " + std::to_string(line_no) + ": not a number: '" +
                          tok + "'");
    }
}

}  // namespace

RawDataset load_tabular(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw IoError("load_tabular: cannot open " + path);

    std::string line;
    if (!std::getline(in, line))
        throw IngestError("line 1: missing header row");
    std::vector<std::string> header = split_line(line, schema.delimiter);
    std::size_t label_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == schema.label_column) label_idx = i;
    if (label_idx == header.size())
        throw IngestError("header has no column named '" + schema.label_column + "'");
    std::size_t width = header.size() - 1;
    if (width == 0) throw IngestError("no feature columns besides the label");

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t line_no = 1;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> toks = split_line(line, schema.delimiter);
        if (toks.size() != header.size())
            throw IngestError("line " + std::to_string(line_no) + ": expected " +
                              std::to_string(header.size()) + " fields, got " +
                              std::to_string(toks.size()));
        for (std::size_t i = 0; i < toks.size(); ++i) {
            double v = parse_number(toks[i], line_no);
            if (i == label_idx) {
                double r = std::round(v);
                if (v < 0.0 || std::abs(v - r) > 1e-9)
                    throw IngestError("line " + std::to_string(line_no) +
                                      ": label must be a nonnegative integer");
                labels.push_back(static_cast<int>(r));
                max_label = std::max(max_label, labels.back());
            } else {
                values.push_back(v);
            }
        }
    }
    if (labels.empty()) throw IngestError("no data rows");

    RawDataset out;
    out.features = Matrix(labels.size(), width, std::move(values));
    out.labels = std::move(labels);
    out.classes = max_label + 1;
    return out;
}

void write_tabular(const std::string& path, const RawDataset& data,
                   const CsvSchema& schema) {
    std::ofstream out(path);
    if (!out) throw IoError("write_tabular: cannot open " + path);
    std::size_t width = data.features.cols();
    for (std::size_t j = 0; j < width; ++j) out << "f" << j << schema.delimiter;
    out << schema.label_column << "\n";
    char buf[64];
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double* row = data.features.row_ptr(i);
        for (std::size_t j = 0; j < width; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", row[j]);
            out << buf << schema.delimiter;
        }
        out << data.labels[i] << "\n";
    }
    if (!out) throw IoError("write_tabular: write failed for " + path);
}

void standardize_columns(RawDataset& data, const std::vector<int>& stat_rows) {
    if (stat_rows.empty()) throw DomainError("standardize_columns: no stat rows");
    std::size_t width = data.features.cols();
    std::vector<double> mean(width, 0.0), var(width, 0.0);
    for (int r : stat_rows) {
        if (r < 0 || static_cast<std::size_t>(r) >= data.features.rows())
            throw ShapeError("standardize_columns: row id out of range");
        const double* row = data.features.row_ptr(static_cast<std::size_t>(r));
        for (std::size_t j = 0; j < width; ++j) mean[j] += row[j];
    }
    double inv_n = 1.0 / static_cast<double>(stat_rows.size());
    for (double& m : mean) m *= inv_n;
    for (int r : stat_rows) {
        const double* row = data.features.row_ptr(static_cast<std::size_t>(r));
        for (std::size_t j = 0; j < width; ++j) {
            double d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    for (double& v : var) v *= inv_n;

    for (std::size_t i = 0; i < data.features.rows(); ++i) {
        double* row = data.features.row_ptr(i);
        for (std::size_t j = 0; j < width; ++j) {
            // Constant columns carry no signal; zero them instead of dividing
            // by a vanishing deviation.
            row[j] = var[j] < kVarianceFloor
                         ? 0.0
                         : (row[j] - mean[j]) / std::sqrt(var[j]);
        }
    }
}

RawDataset synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2) throw ScenarioError("synth_dataset: needs at least 2 classes");
    if (spec.features < 1) throw ScenarioError("synth_dataset: needs at least 1 feature");
    if (spec.cluster_std <= 0.0)
        throw ScenarioError("synth_dataset: cluster_std must be positive");
    std::vector<long long> per_class = spec.per_class;
    if (per_class.empty())
        throw ScenarioError("synth_dataset: per_class counts required");
    if (per_class.size() == 1)
        per_class.assign(static_cast<std::size_t>(spec.classes), per_class.front());
    if (per_class.size() != static_cast<std::size_t>(spec.classes))
        throw ScenarioError("synth_dataset: per_class length differs from classes");
    long long total = 0;
    for (long long c : per_class) {
        if (c <= 0) throw ScenarioError("synth_dataset: per_class entries must be positive");
        total += c;
    }

    Rng rng(derive_seed(seed, seed_tag::kSynth));

    // Means drawn at the separation scale, redrawn until all pairs are far
    // enough apart. In dimension >= classes this terminates almost surely.
    Matrix means(static_cast<std::size_t>(spec.classes),
                 static_cast<std::size_t>(spec.features));
    const int max_tries = 10000;
    int tries = 0;
    for (;;) {
        if (++tries > max_tries)
            throw ScenarioError(
                "synth_dataset: cannot satisfy class_separation; lower it or add "
                "features");
        for (double& v : means.data())
            v = rng.gaussian(0.0, spec.class_separation);
        bool ok = true;
        for (std::size_t a = 0; a < means.rows() && ok; ++a)
            for (std::size_t b = a + 1; b < means.rows() && ok; ++b) {
                double d2 = 0.0;
                for (std::size_t j = 0; j < means.cols(); ++j) {
                    double d = means(a, j) - means(b, j);
                    d2 += d * d;
                }
                if (d2 < spec.class_separation * spec.class_separation) ok = false;
            }
        if (ok) break;
    }

    RawDataset out;
    out.classes = spec.classes;
    out.features = Matrix(static_cast<std::size_t>(total),
                          static_cast<std::size_t>(spec.features));
    out.labels.resize(static_cast<std::size_t>(total));
    std::size_t row = 0;
    for (int z = 0; z < spec.classes; ++z) {
        for (long long i = 0; i < per_class[static_cast<std::size_t>(z)]; ++i, ++row) {
            out.labels[row] = z;
            double* dst = out.features.row_ptr(row);
            const double* m = means.row_ptr(static_cast<std::size_t>(z));
            for (std::size_t j = 0; j < out.features.cols(); ++j)
                dst[j] = m[j] + rng.gaussian(0.0, spec.cluster_std);
        }
    }

    // Seeded row shuffle so later splits never see class-sorted order.
    std::vector<int> perm(out.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    rng.shuffle(perm);
    Matrix shuffled = take_rows(out.features, perm);
    std::vector<int> labels(out.size());
    for (std::size_t i = 0; i < perm.size(); ++i)
        labels[i] = out.labels[static_cast<std::size_t>(perm[i])];
    out.features = std::move(shuffled);
    out.labels = std::move(labels);
    return out;
}

}  // namespace evfl
