#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evfl/aggregation.hpp"
#include "evfl/matrix.hpp"
#include "evfl/mlp.hpp"
#include "evfl/priors.hpp"
#include "evfl/prototypes.hpp"
#include "evfl/rng.hpp"
#include "evfl/scenario.hpp"
#include "evfl/transport.hpp"

namespace evfl {

struct HyperParams {
    int rounds = 30;
    int local_epochs = 2;  // tau: local SGD epochs and head epochs per round
    int batch_size = 64;
    double eta = 0.05;        // local extractor learning rate
    double eta_prime = 0.05;  // head classifier learning rate
    double eta_gate = -1.0;   // negative: follow eta_prime
    double eta_adaptor = -1.0;
    double phi = 0.1;  // weight-decay strength inside the local transport loss
    double rho = 0.1;  // prototype update step
    double theta_conf = 0.0;
    int latent_dim = 8;
    std::vector<int> extractor_hidden{16};
    std::vector<int> classifier_hidden{32, 16};
    std::vector<int> adaptor_hidden;  // empty: single affine adaptor, identity init
    bool renormalize_prototypes = true;
    CostMode cost = CostMode::cosine;
    BatchWeighting weighting = BatchWeighting::uniform;

    double gate_lr() const { return eta_gate < 0.0 ? eta_prime : eta_gate; }
    double adaptor_lr() const { return eta_adaptor < 0.0 ? eta_prime : eta_adaptor; }
};

struct NoiseConfig {
    enum class Target { off, representations, prototypes };
    double kappa = 0.0;
    Target target = Target::off;
    std::uint64_t seed = 0;  // 0: derive from the run's master seed
};

struct FedConfig {
    HyperParams hyper;
    NoiseConfig noise;
    std::uint64_t master_seed = 1;
};

struct PartyState {
    MlpParams extractor;
    PriorVector local_prior;
    Matrix received_protos;     // latest decoded broadcast, noise included
    Matrix clean_aligned_reps;  // latest own representations before upload noise
};

struct ActiveState {
    HeadParams head;
    std::vector<PrototypeSet> prototypes;  // one set per party
    std::vector<Matrix> aligned_reps;      // latest uploads, one per party
    PriorVector global_prior;
};

struct CommRecord {
    int round = 0;
    int party = 0;
    std::uint8_t tag = 0;  // wire variant tag
    std::size_t bytes = 0;
};

struct FedState {
    int round = -1;  // -1 before bootstrap, 0 after, then the last finished round
    std::vector<PartyState> parties;
    ActiveState active;
    std::vector<CommRecord> comm_log;
    std::vector<std::string> error_log;
};

// Shared extractor factory. The output layer starts wide of the usual
// 1/sqrt(fan) so initial representations carry enough magnitude to make the
// prototype similarities decisive; every method initializes through here so
// like seeds give like extractors.
MlpParams make_extractor(std::size_t in_cols, const HyperParams& hyper, Rng& rng);

FedState init_fed_state(const Scenario& scenario, const FedConfig& config);

// Round 0: every party uploads its initial aligned representations and a
// uniform prior; the coordinator seeds prototypes from them.
void run_bootstrap(FedState& state, const Scenario& scenario, const FedConfig& config,
                   Transport& transport);

// One full protocol round. Transport or protocol failure rolls the state back
// and appends to the error log; returns whether the round committed.
bool run_round(FedState& state, const Scenario& scenario, const FedConfig& config,
               Transport& transport, int round);

Matrix inject_noise(const Matrix& m, double kappa, Rng& rng);

// Fraction of samples whose nearest received prototype (cosine) names their
// true class.
double label_inference_attack(const Matrix& aligned_reps, const Matrix& received_protos,
                              const std::vector<int>& labels);

std::size_t comm_cost(const std::vector<CommRecord>& log);
std::size_t comm_cost_round(const std::vector<CommRecord>& log, int round);

// FNV-1a over every parameter, prototype, and prior byte; 16 hex digits.
std::string fed_digest(const FedState& state);

// Snapshot of what each party could use for label inference.
struct AttackState {
    int classes = 0;
    std::vector<int> labels;
    std::vector<int> party_ids;
    std::vector<Matrix> reps;
    std::vector<Matrix> prototypes;
};
AttackState build_attack_state(const FedState& state, const Scenario& scenario);
std::string attack_state_to_json(const AttackState& state);
AttackState attack_state_from_json(const std::string& json_text);
// Mean over passive parties; falls back to every saved party when only the
// active one is present.
double attack_accuracy(const AttackState& state);

}  // namespace evfl
