#pragma once

#include <string>
#include <vector>

#include "evfl/matrix.hpp"
#include "evfl/rng.hpp"

namespace evfl {

// A labeled sample table before any federation structure is imposed.
// Labels are class ids in [0, classes).
struct RawDataset {
    Matrix features;          // N x D
    std::vector<int> labels;  // N
    int classes = 0;

    std::size_t size() const { return labels.size(); }
};

struct CsvSchema {
    std::string label_column;  // header name of the label column
    char delimiter = ',';
};

// Parse a delimited text file with a header row. Every non-label column must
// be numeric; labels must be nonnegative integers. Errors name the line.
RawDataset load_tabular(const std::string& path, const CsvSchema& schema);

// Inverse of load_tabular, full round-trip precision.
void write_tabular(const std::string& path, const RawDataset& data,
                   const CsvSchema& schema);

// Shift/scale every column to zero mean and unit variance, with moments
// computed only on the given rows. Columns whose variance falls below 1e-12
// are mapped to zero rather than amplified.
void standardize_columns(RawDataset& data, const std::vector<int>& stat_rows);

struct SynthSpec {
    int classes = 4;
    std::vector<long long> per_class;  // one entry broadcasts to all classes
    int features = 16;
    double class_separation = 6.0;  // minimum distance between any two class means
    double cluster_std = 1.0;
};

// Gaussian class clusters with seeded means; means are redrawn until every
// pair is at least class_separation apart. Row order is a seeded shuffle.
RawDataset synth_dataset(const SynthSpec& spec, std::uint64_t seed);

}  // namespace evfl
