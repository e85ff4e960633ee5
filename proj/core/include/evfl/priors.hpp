#pragma once

#include <cstddef>
#include <vector>

#include "evfl/matrix.hpp"

namespace evfl {

struct PrototypeSet;

// A distribution over classes: nonnegative, sums to 1 within 1e-9.
struct PriorVector {
    std::vector<double> p;

    std::size_t classes() const { return p.size(); }
};

void validate_prior(const PriorVector& prior);

// Uniform prior; sums to exactly 1.0 in binary when classes is a power of two.
PriorVector init_prior(std::size_t classes);

// One estimation step: column means of plan_to_prototypes built with the
// previous round's prior. The lag is deliberate; early rounds substitute the
// most recent prior available.
PriorVector estimate_local_prior(const Matrix& batch_reps, const PrototypeSet& protos,
                                 const PriorVector& prev_prior);

// Mean of the party priors, renormalized to kill numeric drift.
PriorVector average_global_prior(const std::vector<PriorVector>& locals);

struct GammaParam {
    double value = 0.0;
    std::vector<long long> counts;
};

// Minority fraction: min over all classes of count_z divided by the total.
// Any locally absent class forces gamma to 0, which shuts off the global
// prior for that party. An all-zero count vector also yields 0.
GammaParam compute_gamma(const std::vector<long long>& counts);

// gamma * global + (1 - gamma) * local, renormalized.
PriorVector mix_prior(const PriorVector& global_prior, const PriorVector& local_prior,
                      double gamma);

}  // namespace evfl
