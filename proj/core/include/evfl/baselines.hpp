#pragma once

#include <cstdint>
#include <vector>

#include "evfl/federation.hpp"
#include "evfl/matrix.hpp"
#include "evfl/mlp.hpp"
#include "evfl/scenario.hpp"

namespace evfl {

enum class BaselineKind { local, vanilla_vfl, upper_boundary };

// One centralized training recipe covers all three reference systems; they
// differ only in which parties contribute columns and which rows carry labels:
//   local          active party's block, aligned rows
//   vanilla_vfl    every block, aligned rows
//   upper_boundary every block, every training row (oracle labels)
// Per-party extractors feed a 1/P-scaled concatenation into the classifier;
// gradients flow end to end.
struct BaselineResult {
    BaselineKind kind = BaselineKind::local;
    std::vector<int> party_ids;
    std::vector<MlpParams> extractors;  // parallel to party_ids
    MlpParams classifier;
    std::vector<double> loss_curve;  // end-of-epoch cross-entropy, training rows
    std::vector<double> acc_curve;   // end-of-epoch test accuracy
};

BaselineResult train_centralized(const Scenario& scenario, BaselineKind kind,
                                 const HyperParams& hyper, std::uint64_t master_seed);

// blocks are this baseline's feature slices, parallel to party_ids.
Matrix baseline_logits(const BaselineResult& model, const std::vector<Matrix>& blocks);

}  // namespace evfl
