#pragma once

#include <utility>
#include <vector>

#include "evfl/matrix.hpp"
#include "evfl/mlp.hpp"
#include "evfl/priors.hpp"
#include "evfl/rng.hpp"

namespace evfl {

// One unit-L2 row per class. Rows are kept normalized by construction; the
// kernel exp(mu . f) then has bounded exponents when representations are
// normalized too.
struct PrototypeSet {
    Matrix mu;  // Z x d

    std::size_t classes() const { return mu.rows(); }
    std::size_t dim() const { return mu.cols(); }
};

enum class PlanOrientation { samples_to_protos, protos_to_samples };

// Row-stochastic coupling between a batch of representations and the
// prototype set. samples_to_protos: rows index samples. protos_to_samples:
// rows index prototypes.
struct TransportPlan {
    Matrix probs;
    PlanOrientation orientation = PlanOrientation::samples_to_protos;
};

// Cost between a prototype and a representation inside the transport losses.
//   cosine:       1 - cos(mu, f)
//   neg_log_prob: -log softmax_z(mu_z . f); with a uniform prior this makes
//                 the sample-to-prototype loss the mean plan-row entropy.
enum class CostMode { cosine, neg_log_prob };

// How the batch is weighted inside the prototype-to-sample plan.
enum class BatchWeighting { uniform, pseudo_class_prior };

// pi(mu_z | f_n) = p_z exp(mu_z . f_n) / sum_z' p_z' exp(mu_z' . f_n).
// Rows sum to 1 within 1e-9. An all-zero prior is degenerate.
TransportPlan plan_to_prototypes(const PrototypeSet& protos, const PriorVector& prior,
                                 const Matrix& reps);

// pi(f_n | mu_z) = w_n exp(mu_z . f_n) / sum_n' w_n' exp(mu_z . f_n').
// Uniform weighting uses w_n = 1/B. pseudo_class_prior weights each sample by
// the prior mass of its current argmax class under plan_to_prototypes; the
// weights are treated as constants by the gradients. Empty batch is
// degenerate.
TransportPlan plan_to_samples(const PrototypeSet& protos, const PriorVector& prior,
                              const Matrix& reps,
                              BatchWeighting weighting = BatchWeighting::uniform);

struct LossGrads {
    double value = 0.0;
    Matrix d_reps;
    Matrix d_protos;
};

// Mean over samples of sum_z pi(mu_z | f_n) c(mu_z, f_n). The plan must have
// been produced by plan_to_prototypes on the same (protos, prior, reps);
// gradients flow through both the plan and the cost.
LossGrads loss_f_to_mu(const TransportPlan& plan, const PrototypeSet& protos,
                       const Matrix& reps, CostMode mode);

// sum_z p_z sum_n pi(f_n | mu_z) c(mu_z, f_n). Same coupling requirement as
// loss_f_to_mu; the prior is a constant.
LossGrads loss_mu_to_f(const TransportPlan& plan, const PrototypeSet& protos,
                       const Matrix& reps, const PriorVector& prior, CostMode mode);

struct LocalLossResult {
    double value = 0.0;
    double f_to_mu = 0.0;
    double mu_to_f = 0.0;
    GradBundle grads;
};

struct LocalLossOptions {
    double phi = 0.1;           // weight on the (phi/2)||theta||_F^2 term
    double theta_conf = 0.0;    // drop samples whose top plan mass is below this
    CostMode cost = CostMode::cosine;
    BatchWeighting weighting = BatchWeighting::uniform;
};

// Full local objective for one batch: run the extractor, L2-normalize the
// representations, build both plans against fixed prototypes and prior, and
// add the parameter penalty. Gradients are exact for the returned value.
LocalLossResult local_loss(const MlpParams& extractor, const Matrix& batch,
                           const PrototypeSet& protos, const PriorVector& prior,
                           const LocalLossOptions& opts);

// Normalized per-class means of the given representations. Classes with no
// rows get a seeded random unit direction.
PrototypeSet init_prototypes(const Matrix& reps, const std::vector<int>& labels,
                             std::size_t classes, Rng& rng);

// mu_z <- mu_z + (rho / N_z) * sum of class-z rows, then row renormalization
// when renormalize is set. Classes with no rows keep their row bit-for-bit,
// as does every row when rho == 0.
PrototypeSet update_prototypes(const PrototypeSet& protos, const Matrix& reps,
                               const std::vector<int>& labels, double rho,
                               bool renormalize = true);

}  // namespace evfl
