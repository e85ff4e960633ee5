// Command line driver: run experiments, inspect scenario imbalance, replay
// the label inference attack on a saved state.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "evfl/errors.hpp"
#include "evfl/experiment.hpp"
#include "evfl/federation.hpp"
#include "evfl/scenario.hpp"
#include "evfl/version.hpp"

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw evfl::IoError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            unsigned long long v = std::stoull(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            seeds.push_back(v);
        } catch (const std::exception&) {
            throw evfl::ConfigError("--seed-list: '" + item + "' is not a seed");
        }
    }
    if (seeds.empty()) throw evfl::ConfigError("--seed-list: no seeds given");
    return seeds;
}

int cmd_run(const std::string& config_path, const std::string& out_path,
            const std::string& transport, const std::string& seed_list,
            const std::string& save_state) {
    evfl::ExperimentConfig config = evfl::validate_config(slurp(config_path));
    if (!transport.empty()) config.transport = transport;
    if (!seed_list.empty()) config.seeds = parse_seed_list(seed_list);
    // Overrides go back through the validator so every rule still applies.
    config = evfl::validate_config(evfl::config_to_json(config));

    evfl::ExperimentResult result = evfl::run_experiment(config, save_state);
    std::string report = evfl::report_to_json(result, true);
    std::ofstream out(out_path);
    if (!out) throw evfl::IoError("cannot open " + out_path);
    out << report << "\n";
    if (!out) throw evfl::IoError("write failed on " + out_path);

    std::printf("seeds %zu  mean accuracy %.4f", result.per_seed.size(),
                result.mean_accuracy);
    if (result.mean_unseen == result.mean_unseen)
        std::printf("  unseen recall %.4f", result.mean_unseen);
    if (result.mean_attack == result.mean_attack)
        std::printf("  attack %.4f", result.mean_attack);
    std::printf("  comm %.0f bytes  %.1fs\n", result.mean_comm, result.seconds);
    std::printf("report: %s\n", out_path.c_str());
    return 0;
}

int cmd_metrics(const std::string& manifest_path) {
    evfl::ScenarioSpec spec = evfl::scenario_spec_from_json(slurp(manifest_path));
    // A manifest without its own seed falls back to seed 1.
    evfl::Scenario scenario = evfl::build_scenario(spec, 1);
    std::cout << evfl::imbalance_report_json(scenario) << "\n";
    return 0;
}

int cmd_attack(const std::string& state_path) {
    evfl::AttackState state = evfl::attack_state_from_json(slurp(state_path));
    std::printf("attack accuracy %.6f\n", evfl::attack_accuracy(state));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vertical federated learning simulator"};
    app.require_subcommand(1);

    std::string config_path, out_path, transport, seed_list, save_state;
    CLI::App* run = app.add_subcommand("run", "train per a config, write a report");
    run->add_option("--config", config_path, "experiment config (json)")->required();
    run->add_option("--out", out_path, "report destination (json)")->required();
    run->add_option("--transport", transport, "override: inproc or socket");
    run->add_option("--seed-list", seed_list, "override: comma separated seeds");
    run->add_option("--save-state", save_state,
                    "also write the final round's attack state (json)");

    std::string manifest_path;
    CLI::App* metrics =
        app.add_subcommand("metrics", "imbalance metrics for a scenario manifest");
    metrics->add_option("--manifest", manifest_path, "scenario manifest (json)")
        ->required();

    std::string state_path;
    CLI::App* attack =
        app.add_subcommand("attack", "label inference accuracy on a saved state");
    attack->add_option("--state", state_path, "state from run --save-state")->required();

    CLI::App* version = app.add_subcommand("version", "print version and revision");

    CLI11_PARSE(app, argc, argv);
    try {
        if (run->parsed())
            return cmd_run(config_path, out_path, transport, seed_list, save_state);
        if (metrics->parsed()) return cmd_metrics(manifest_path);
        if (attack->parsed()) return cmd_attack(state_path);
        if (version->parsed()) {
            std::printf("protoevfl %s (%s)\n", evfl::kVersion, evfl::kGitRevision);
            return 0;
        }
    } catch (const evfl::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
