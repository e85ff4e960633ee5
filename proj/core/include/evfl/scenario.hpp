#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evfl/dataset.hpp"
#include "evfl/matrix.hpp"
#include "evfl/metrics.hpp"

namespace evfl {

// Which feature columns each party owns. An empty assignment means a
// contiguous even split.
struct SplitSpec {
    std::vector<int> column_party;  // one entry per column, values in [0, parties)
};

// Per-party feature blocks; blocks[m] has the original row order.
std::vector<Matrix> partition_vertical(const Matrix& features, const SplitSpec& split,
                                       int parties);

enum class RareMode { few_shot, zero_shot };

struct RareClassSpec {
    int class_id = 0;
    RareMode mode = RareMode::few_shot;
    long long keep_count = 0;  // aligned rows kept in few_shot mode
};

struct ImbalanceSpec {
    // Majority:minority count ratio imposed on each party's unaligned pool.
    double gamma_ratio = 1.0;
    std::vector<RareClassSpec> rare;
    // 0 derives the majority assignment from the scenario seed.
    std::uint64_t majority_seed = 0;
};

struct DatasetSpec {
    enum class Kind { synth, csv } kind = Kind::synth;
    SynthSpec synth;
    struct Csv {
        std::string path;
        std::string label_column;
        char delimiter = ',';
    } csv;
};

// Everything needed to rebuild a partition bit-exactly.
struct ScenarioSpec {
    DatasetSpec dataset;
    int parties = 4;
    SplitSpec split;
    double aligned_ratio = 0.02;
    double test_ratio = 0.2;
    ImbalanceSpec imbalance;
    std::uint64_t seed = 0;  // 0 = follow the experiment seed
};

std::string scenario_spec_to_json(const ScenarioSpec& spec);
ScenarioSpec scenario_spec_from_json(const std::string& json_text);

// A realised scenario. train_X keeps every training row for every party so
// oracle baselines can see the full table; federated training only ever
// touches the aligned_ids / unaligned_ids index sets.
struct Scenario {
    int parties = 0;
    int classes = 0;
    std::vector<Matrix> train_X;             // per party, row-synchronized
    std::vector<int> train_labels;           // oracle view of every train row
    std::vector<int> aligned_ids;            // shared across parties, ordered
    std::vector<std::vector<int>> unaligned_ids;  // per party, post imbalance
    std::vector<Matrix> test_X;              // per party
    std::vector<int> test_labels;
    std::vector<int> zero_shot_classes;
    ImbalanceReport imbalance;
    ScenarioSpec spec;   // with the seed resolved
    std::uint64_t seed = 0;

    std::vector<int> aligned_labels() const;
    Matrix aligned_block(int party) const;
    Matrix unaligned_block(int party) const;
};

// Stratified test carve-out, aligned split, per-party imbalance, bookkeeping.
// The test split is taken before any imbalance is applied.
Scenario build_scenario(const ScenarioSpec& spec, std::uint64_t seed);

// The id sets shared by every party: aligned ids are one seeded draw over
// train rows; each party starts from the identical complement.
std::vector<int> pick_aligned_rows(std::size_t train_rows, double aligned_ratio,
                                   Rng& rng);

}  // namespace evfl
