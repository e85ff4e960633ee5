#pragma once

#include <vector>

namespace evfl {

// Mutual class-imbalance degree of a class-count vector: 0 when every class
// has the same count, 1 when a single class holds everything.
// With N = sum(counts) and Z classes:
//   mid = (1 / (N ln Z)) * sum_z n_z ln(Z n_z / N),   0 ln 0 := 0.
double mid(const std::vector<long long>& counts);

// Weighted cosine similarity between each party's local class-count vector
// and the global one:
//   wcs = sum_m (|l_m|_1 / |L|_1) * (L . l_m) / (|L|_2 |l_m|_2).
// 1 when every party mirrors the global mix; parties with empty pools
// contribute zero weight.
double wcs(const std::vector<long long>& global_counts,
           const std::vector<std::vector<long long>>& local_counts);

std::vector<long long> class_counts(const std::vector<int>& labels, int classes);

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

// Per-class recall; classes absent from truth get -1 (no signal).
std::vector<double> per_class_recall(const std::vector<int>& predicted,
                                     const std::vector<int>& truth, int classes);

// Class-count bookkeeping of a realised scenario.
struct ImbalanceReport {
    double mid_value = 0.0;
    double wcs_value = 0.0;
    std::vector<long long> aligned_counts;
    std::vector<std::vector<long long>> unaligned_counts;  // per party
    std::vector<long long> global_counts;  // aligned + unaligned, summed over parties
};

}  // namespace evfl
