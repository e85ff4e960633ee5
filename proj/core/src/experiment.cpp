#include "evfl/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>

#include <json.hpp>

#include "evfl/digest.hpp"
#include "evfl/errors.hpp"
#include "evfl/version.hpp"

namespace evfl {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const char* method_name(Method m) {
    switch (m) {
        case Method::proto_evfl: return "proto_evfl";
        case Method::local: return "local";
        case Method::vanilla_vfl: return "vanilla_vfl";
        case Method::upper_boundary: return "upper_boundary";
    }
    return "proto_evfl";
}

const char* target_name(NoiseConfig::Target t) {
    switch (t) {
        case NoiseConfig::Target::off: return "off";
        case NoiseConfig::Target::representations: return "representations";
        case NoiseConfig::Target::prototypes: return "prototypes";
    }
    return "off";
}

struct Collector {
    std::vector<std::string> errors;

    void add(std::string message) { errors.push_back(std::move(message)); }
    void require(bool ok, const char* message) {
        if (!ok) errors.push_back(message);
    }
    void finish() const {
        if (errors.empty()) return;
        std::string joined = "config invalid:";
        for (const std::string& e : errors) joined += "\n - " + e;
        throw ConfigError(joined);
    }
};

template <typename T>
bool read_field(const json& j, const char* key, T& out, Collector& errors) {
    if (!j.contains(key)) return false;
    try {
        out = j.at(key).get<T>();
        return true;
    } catch (const json::exception&) {
        errors.add(std::string(key) + ": wrong type");
        return false;
    }
}

void parse_hyper(const json& j, HyperParams& h, Collector& errors) {
    static const char* known[] = {
        "rounds",        "local_epochs",    "batch_size",
        "eta",           "eta_prime",       "eta_gate",
        "eta_adaptor",   "phi",             "rho",
        "theta_conf",    "latent_dim",      "extractor_hidden",
        "classifier_hidden", "adaptor_hidden", "renormalize_prototypes",
        "cost_mode",     "batch_weighting"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) errors.add("hyper." + it.key() + ": unknown field");
    }
    read_field(j, "rounds", h.rounds, errors);
    read_field(j, "local_epochs", h.local_epochs, errors);
    read_field(j, "batch_size", h.batch_size, errors);
    read_field(j, "eta", h.eta, errors);
    read_field(j, "eta_prime", h.eta_prime, errors);
    read_field(j, "eta_gate", h.eta_gate, errors);
    read_field(j, "eta_adaptor", h.eta_adaptor, errors);
    read_field(j, "phi", h.phi, errors);
    read_field(j, "rho", h.rho, errors);
    read_field(j, "theta_conf", h.theta_conf, errors);
    read_field(j, "latent_dim", h.latent_dim, errors);
    read_field(j, "extractor_hidden", h.extractor_hidden, errors);
    read_field(j, "classifier_hidden", h.classifier_hidden, errors);
    read_field(j, "adaptor_hidden", h.adaptor_hidden, errors);
    read_field(j, "renormalize_prototypes", h.renormalize_prototypes, errors);
    std::string cost;
    if (read_field(j, "cost_mode", cost, errors)) {
        if (cost == "cosine")
            h.cost = CostMode::cosine;
        else if (cost == "neg_log_prob")
            h.cost = CostMode::neg_log_prob;
        else
            errors.add("hyper.cost_mode: expected 'cosine' or 'neg_log_prob'");
    }
    std::string weighting;
    if (read_field(j, "batch_weighting", weighting, errors)) {
        if (weighting == "uniform")
            h.weighting = BatchWeighting::uniform;
        else if (weighting == "pseudo_class_prior")
            h.weighting = BatchWeighting::pseudo_class_prior;
        else
            errors.add("hyper.batch_weighting: expected 'uniform' or 'pseudo_class_prior'");
    }
}

void parse_noise(const json& j, NoiseConfig& n, Collector& errors) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "kappa" && it.key() != "target" && it.key() != "seed")
            errors.add("noise." + it.key() + ": unknown field");
    read_field(j, "kappa", n.kappa, errors);
    read_field(j, "seed", n.seed, errors);
    std::string target;
    if (read_field(j, "target", target, errors)) {
        if (target == "off")
            n.target = NoiseConfig::Target::off;
        else if (target == "representations")
            n.target = NoiseConfig::Target::representations;
        else if (target == "prototypes")
            n.target = NoiseConfig::Target::prototypes;
        else
            errors.add("noise.target: expected 'off', 'representations' or 'prototypes'");
    }
}

}  // namespace

ExperimentConfig validate_config(const std::string& json_text) {
    Collector errors;
    std::string text = json_text;
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) text = "{}";
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config invalid:\n - ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config invalid:\n - top-level object required");

    static const char* known[] = {"dataset",    "parties",   "column_party",
                                  "aligned_ratio", "test_ratio", "imbalance",
                                  "scenario_seed", "method",    "inference",
                                  "transport",  "hyper",     "noise",
                                  "seeds",      "evaluate_attack"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) errors.add(it.key() + ": unknown field");
    }

    ExperimentConfig config;
    try {
        config.scenario = scenario_spec_from_json(text);
    } catch (const ConfigError& e) {
        errors.add(e.what());
    }

    std::string method;
    if (read_field(j, "method", method, errors)) {
        if (method == "proto_evfl")
            config.method = Method::proto_evfl;
        else if (method == "local")
            config.method = Method::local;
        else if (method == "vanilla_vfl")
            config.method = Method::vanilla_vfl;
        else if (method == "upper_boundary")
            config.method = Method::upper_boundary;
        else
            errors.add("method: '" + method + "' unknown");
    }
    std::string inference;
    if (read_field(j, "inference", inference, errors)) {
        if (inference == "softmax")
            config.inference = Inference::softmax;
        else if (inference == "prototype_nn")
            config.inference = Inference::prototype_nn;
        else
            errors.add("inference: expected 'softmax' or 'prototype_nn'");
    }
    read_field(j, "transport", config.transport, errors);
    if (j.contains("hyper")) {
        if (j.at("hyper").is_object())
            parse_hyper(j.at("hyper"), config.hyper, errors);
        else
            errors.add("hyper: object required");
    }
    if (j.contains("noise")) {
        if (j.at("noise").is_object())
            parse_noise(j.at("noise"), config.noise, errors);
        else
            errors.add("noise: object required");
    }
    read_field(j, "seeds", config.seeds, errors);
    read_field(j, "evaluate_attack", config.evaluate_attack, errors);

    // Range checks, each named individually.
    const ScenarioSpec& s = config.scenario;
    errors.require(s.parties >= 1, "parties: must be at least 1");
    errors.require(s.aligned_ratio > 0.0 && s.aligned_ratio <= 1.0,
                   "aligned_ratio: must lie in (0, 1]");
    errors.require(s.test_ratio > 0.0 && s.test_ratio < 1.0,
                   "test_ratio: must lie in (0, 1)");
    errors.require(s.imbalance.gamma_ratio >= 1.0,
                   "imbalance.gamma_ratio: must be at least 1");
    for (const RareClassSpec& r : s.imbalance.rare) {
        if (r.mode == RareMode::few_shot && r.keep_count < 1)
            errors.add("imbalance.rare: few_shot keep_count must be at least 1");
        if (r.class_id < 0) errors.add("imbalance.rare: class must be nonnegative");
    }
    if (s.dataset.kind == DatasetSpec::Kind::synth) {
        errors.require(s.dataset.synth.classes >= 2, "dataset.classes: need at least 2");
        errors.require(s.dataset.synth.features >= 1, "dataset.features: need at least 1");
        for (long long n : s.dataset.synth.per_class)
            if (n < 1) errors.add("dataset.per_class: entries must be positive");
        errors.require(s.dataset.synth.cluster_std > 0.0,
                       "dataset.cluster_std: must be positive");
        errors.require(s.dataset.synth.class_separation > 0.0,
                       "dataset.class_separation: must be positive");
    }
    const HyperParams& h = config.hyper;
    errors.require(h.rounds >= 1, "hyper.rounds: must be at least 1");
    errors.require(h.local_epochs >= 1, "hyper.local_epochs: must be at least 1");
    errors.require(h.batch_size >= 1, "hyper.batch_size: must be at least 1");
    errors.require(h.eta >= 0.0, "hyper.eta: must be nonnegative");
    errors.require(h.eta_prime >= 0.0, "hyper.eta_prime: must be nonnegative");
    errors.require(h.phi >= 0.0, "hyper.phi: must be nonnegative");
    errors.require(h.rho >= 0.0 && h.rho <= 1.0, "hyper.rho: must lie in [0, 1]");
    errors.require(h.theta_conf >= 0.0 && h.theta_conf < 1.0,
                   "hyper.theta_conf: must lie in [0, 1)");
    errors.require(h.latent_dim >= 1, "hyper.latent_dim: must be at least 1");
    errors.require(config.noise.kappa >= 0.0, "noise.kappa: must be nonnegative");
    errors.require(config.transport == "inproc" || config.transport == "socket",
                   "transport: expected 'inproc' or 'socket'");
    errors.require(!config.seeds.empty(), "seeds: at least one seed required");
    for (std::uint64_t seed : config.seeds)
        if (seed == 0) errors.add("seeds: 0 is reserved");
    if (config.inference == Inference::prototype_nn &&
        config.method != Method::proto_evfl)
        errors.add("inference: prototype_nn needs method proto_evfl");
    errors.finish();
    return config;
}

std::string config_to_json(const ExperimentConfig& config) {
    json j = json::parse(scenario_spec_to_json(config.scenario));
    j["method"] = method_name(config.method);
    j["inference"] = config.inference == Inference::softmax ? "softmax" : "prototype_nn";
    j["transport"] = config.transport;
    const HyperParams& h = config.hyper;
    json hyper;
    hyper["rounds"] = h.rounds;
    hyper["local_epochs"] = h.local_epochs;
    hyper["batch_size"] = h.batch_size;
    hyper["eta"] = h.eta;
    hyper["eta_prime"] = h.eta_prime;
    hyper["eta_gate"] = h.eta_gate;
    hyper["eta_adaptor"] = h.eta_adaptor;
    hyper["phi"] = h.phi;
    hyper["rho"] = h.rho;
    hyper["theta_conf"] = h.theta_conf;
    hyper["latent_dim"] = h.latent_dim;
    hyper["extractor_hidden"] = h.extractor_hidden;
    hyper["classifier_hidden"] = h.classifier_hidden;
    hyper["adaptor_hidden"] = h.adaptor_hidden;
    hyper["renormalize_prototypes"] = h.renormalize_prototypes;
    hyper["cost_mode"] = h.cost == CostMode::cosine ? "cosine" : "neg_log_prob";
    hyper["batch_weighting"] =
        h.weighting == BatchWeighting::uniform ? "uniform" : "pseudo_class_prior";
    j["hyper"] = std::move(hyper);
    json noise;
    noise["kappa"] = config.noise.kappa;
    noise["target"] = target_name(config.noise.target);
    noise["seed"] = config.noise.seed;
    j["noise"] = std::move(noise);
    j["seeds"] = config.seeds;
    j["evaluate_attack"] = config.evaluate_attack;
    return j.dump(2);
}

namespace {

std::vector<int> seen_classes(const Scenario& scenario, Method method) {
    if (method == Method::upper_boundary) {
        std::vector<int> all(static_cast<std::size_t>(scenario.classes));
        for (int z = 0; z < scenario.classes; ++z) all[static_cast<std::size_t>(z)] = z;
        return all;
    }
    std::vector<long long> counts =
        class_counts(scenario.aligned_labels(), scenario.classes);
    std::vector<int> seen;
    for (int z = 0; z < scenario.classes; ++z)
        if (counts[static_cast<std::size_t>(z)] > 0) seen.push_back(z);
    return seen;
}

void finish_curve_stats(SeedResult& sr) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < sr.acc_curve.size(); ++i)
        if (sr.acc_curve[i] > sr.acc_curve[best]) best = i;
    sr.rounds_to_best = sr.acc_curve.empty() ? 0 : static_cast<int>(best) + 1;
}

double recall_over(const std::vector<double>& recalls, const std::vector<int>& classes) {
    if (classes.empty()) return kNaN;
    double sum = 0.0;
    int used = 0;
    for (int z : classes) {
        double r = recalls[static_cast<std::size_t>(z)];
        if (r >= 0.0) {
            sum += r;
            ++used;
        }
    }
    return used == 0 ? kNaN : sum / used;
}

SeedResult run_proto_seed(const ExperimentConfig& config, const Scenario& scenario,
                          std::uint64_t seed, std::optional<AttackState>& attack_out) {
    SeedResult sr;
    sr.seed = seed;
    sr.imbalance = scenario.imbalance;
    FedConfig fed;
    fed.hyper = config.hyper;
    fed.noise = config.noise;
    fed.master_seed = seed;
    std::unique_ptr<Transport> transport =
        make_transport(config.transport, scenario.parties);
    FedState state = init_fed_state(scenario, fed);
    run_bootstrap(state, scenario, fed, *transport);

    std::vector<int> aligned_labels = scenario.aligned_labels();
    std::vector<int> seen = seen_classes(scenario, Method::proto_evfl);
    std::vector<int> last_preds;
    for (int t = 1; t <= config.hyper.rounds; ++t) {
        if (!run_round(state, scenario, fed, *transport, t))
            throw IoError("run_experiment: " + state.error_log.back());
        HeadEval train_eval =
            head_forward(state.active.head, state.active.aligned_reps);
        sr.loss_curve.push_back(
            softmax_cross_entropy(train_eval.logits, aligned_labels).value);

        std::vector<Matrix> test_reps;
        test_reps.reserve(static_cast<std::size_t>(scenario.parties));
        for (int m = 0; m < scenario.parties; ++m)
            test_reps.push_back(normalize_rows_safe(
                mlp_apply(state.parties[static_cast<std::size_t>(m)].extractor,
                          scenario.test_X[static_cast<std::size_t>(m)])));
        HeadEval test_eval = head_forward(state.active.head, test_reps);
        last_preds = config.inference == Inference::softmax
                         ? argmax_rows_restricted(test_eval.logits, seen)
                         : prototype_nn_predict(test_eval.adapted,
                                                state.active.prototypes);
        sr.acc_curve.push_back(accuracy(last_preds, scenario.test_labels));
    }
    sr.test_accuracy = sr.acc_curve.back();
    sr.per_class_recall =
        per_class_recall(last_preds, scenario.test_labels, scenario.classes);
    sr.unseen_recall = recall_over(sr.per_class_recall, scenario.zero_shot_classes);
    sr.comm_bytes = comm_cost(state.comm_log);
    sr.digest = fed_digest(state);
    sr.attack_accuracy = kNaN;
    if (config.evaluate_attack || attack_out.has_value()) {
        AttackState attack = build_attack_state(state, scenario);
        if (config.evaluate_attack) sr.attack_accuracy = attack_accuracy(attack);
        if (attack_out.has_value()) attack_out = std::move(attack);
    }
    finish_curve_stats(sr);
    return sr;
}

SeedResult run_baseline_seed(const ExperimentConfig& config, const Scenario& scenario,
                             std::uint64_t seed) {
    SeedResult sr;
    sr.seed = seed;
    sr.imbalance = scenario.imbalance;
    BaselineKind kind = BaselineKind::local;
    if (config.method == Method::vanilla_vfl) kind = BaselineKind::vanilla_vfl;
    if (config.method == Method::upper_boundary) kind = BaselineKind::upper_boundary;
    BaselineResult model = train_centralized(scenario, kind, config.hyper, seed);
    sr.loss_curve = model.loss_curve;
    sr.acc_curve = model.acc_curve;

    std::vector<Matrix> blocks;
    for (int pid : model.party_ids)
        blocks.push_back(scenario.test_X[static_cast<std::size_t>(pid)]);
    Matrix logits = baseline_logits(model, blocks);
    std::vector<int> preds =
        argmax_rows_restricted(logits, seen_classes(scenario, config.method));
    sr.test_accuracy = accuracy(preds, scenario.test_labels);
    sr.per_class_recall = per_class_recall(preds, scenario.test_labels, scenario.classes);
    sr.unseen_recall = recall_over(sr.per_class_recall, scenario.zero_shot_classes);
    sr.comm_bytes = 0;
    sr.attack_accuracy = kNaN;
    Fnv1a f;
    f.u64(static_cast<std::uint64_t>(kind));
    for (const MlpParams& e : model.extractors) f.mlp(e);
    f.mlp(model.classifier);
    sr.digest = f.hex();
    finish_curve_stats(sr);
    return sr;
}

double mean_or_nan(const std::vector<double>& values) {
    double sum = 0.0;
    int used = 0;
    for (double v : values)
        if (!std::isnan(v)) {
            sum += v;
            ++used;
        }
    return used == 0 ? kNaN : sum / used;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::string& save_state_path) {
    auto t0 = std::chrono::steady_clock::now();
    ExperimentResult result;
    result.config = config;
    std::optional<AttackState> attack_slot;
    bool want_state = !save_state_path.empty();
    if (want_state && config.method != Method::proto_evfl)
        throw ConfigError("save-state: only proto_evfl has attack state");

    for (std::size_t k = 0; k < config.seeds.size(); ++k) {
        std::uint64_t seed = config.seeds[k];
        Scenario scenario = build_scenario(config.scenario, seed);
        if (config.method == Method::proto_evfl) {
            std::optional<AttackState> slot;
            if (want_state && k + 1 == config.seeds.size()) slot.emplace();
            result.per_seed.push_back(run_proto_seed(config, scenario, seed, slot));
            if (slot.has_value()) attack_slot = std::move(slot);
        } else {
            result.per_seed.push_back(run_baseline_seed(config, scenario, seed));
        }
    }

    std::vector<double> acc, unseen, attack, comm;
    for (const SeedResult& sr : result.per_seed) {
        acc.push_back(sr.test_accuracy);
        unseen.push_back(sr.unseen_recall);
        attack.push_back(sr.attack_accuracy);
        comm.push_back(static_cast<double>(sr.comm_bytes));
    }
    result.mean_accuracy = mean_or_nan(acc);
    result.mean_unseen = mean_or_nan(unseen);
    result.mean_attack = mean_or_nan(attack);
    result.mean_comm = mean_or_nan(comm);

    if (want_state) {
        std::ofstream out(save_state_path);
        if (!out) throw IoError("save-state: cannot open " + save_state_path);
        out << attack_state_to_json(*attack_slot) << "\n";
        if (!out) throw IoError("save-state: write failed on " + save_state_path);
    }
    result.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

namespace {

json imbalance_to_json(const ImbalanceReport& report) {
    json j;
    j["mid"] = report.mid_value;
    j["wcs"] = report.wcs_value;
    j["aligned_counts"] = report.aligned_counts;
    j["unaligned_counts"] = report.unaligned_counts;
    j["global_counts"] = report.global_counts;
    return j;
}

}  // namespace

std::string report_to_json(const ExperimentResult& result, bool include_timing) {
    json j;
    j["version"] = {{"library", kVersion}, {"revision", kGitRevision}};
    j["config"] = json::parse(config_to_json(result.config));
    json per_seed = json::array();
    for (const SeedResult& sr : result.per_seed) {
        json e;
        e["seed"] = sr.seed;
        e["test_accuracy"] = sr.test_accuracy;
        e["per_class_recall"] = sr.per_class_recall;
        e["unseen_recall"] = sr.unseen_recall;
        e["rounds_to_best"] = sr.rounds_to_best;
        e["comm_bytes"] = sr.comm_bytes;
        e["loss_curve"] = sr.loss_curve;
        e["acc_curve"] = sr.acc_curve;
        e["attack_accuracy"] = sr.attack_accuracy;
        e["digest"] = sr.digest;
        e["imbalance"] = imbalance_to_json(sr.imbalance);
        per_seed.push_back(std::move(e));
    }
    j["per_seed"] = std::move(per_seed);
    j["mean"] = {{"test_accuracy", result.mean_accuracy},
                 {"unseen_recall", result.mean_unseen},
                 {"attack_accuracy", result.mean_attack},
                 {"comm_bytes", result.mean_comm}};
    if (include_timing) j["timing"] = {{"seconds", result.seconds}};
    return j.dump(2);
}

std::string canonical_report(const std::string& report_json) {
    json j;
    try {
        j = json::parse(report_json);
    } catch (const json::exception& e) {
        throw IoError(std::string("report: ") + e.what());
    }
    j.erase("timing");
    return j.dump(2);
}

std::string imbalance_report_json(const Scenario& scenario) {
    json j = imbalance_to_json(scenario.imbalance);
    j["classes"] = scenario.classes;
    j["parties"] = scenario.parties;
    return j.dump(2);
}

}  // namespace evfl
