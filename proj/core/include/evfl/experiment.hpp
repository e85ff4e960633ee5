#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evfl/baselines.hpp"
#include "evfl/federation.hpp"
#include "evfl/metrics.hpp"
#include "evfl/scenario.hpp"

namespace evfl {

enum class Method { proto_evfl, local, vanilla_vfl, upper_boundary };
enum class Inference { softmax, prototype_nn };

struct ExperimentConfig {
    ScenarioSpec scenario;
    Method method = Method::proto_evfl;
    Inference inference = Inference::softmax;
    std::string transport = "inproc";
    HyperParams hyper;
    NoiseConfig noise;
    std::vector<std::uint64_t> seeds{1};
    bool evaluate_attack = false;
};

// Parses and range-checks a config, filling defaults. Every violation is
// named in one ConfigError; unknown top-level keys are rejected.
ExperimentConfig validate_config(const std::string& json_text);
std::string config_to_json(const ExperimentConfig& config);

struct SeedResult {
    std::uint64_t seed = 0;
    double test_accuracy = 0.0;
    std::vector<double> per_class_recall;
    double unseen_recall = 0.0;  // NaN when the scenario has no unseen class
    int rounds_to_best = 0;      // 1-based position of the best curve entry
    std::size_t comm_bytes = 0;
    std::vector<double> loss_curve;
    std::vector<double> acc_curve;
    double attack_accuracy = 0.0;  // NaN unless evaluated
    std::string digest;
    ImbalanceReport imbalance;
};

struct ExperimentResult {
    ExperimentConfig config;
    std::vector<SeedResult> per_seed;
    double mean_accuracy = 0.0;
    double mean_unseen = 0.0;  // NaN when absent
    double mean_attack = 0.0;  // NaN unless evaluated
    double mean_comm = 0.0;
    double seconds = 0.0;
};

// save_state_path, when nonempty, receives the last seed's attack snapshot
// (proto_evfl only).
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::string& save_state_path = "");

std::string report_to_json(const ExperimentResult& result, bool include_timing);
// The canonical form drops wall-clock fields so equal runs compare equal.
std::string canonical_report(const std::string& report_json);

std::string imbalance_report_json(const Scenario& scenario);

}  // namespace evfl
