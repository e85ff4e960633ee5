#include "evfl/federation.hpp"

#include <algorithm>
#include <exception>
#include <thread>
#include <utility>

#include <json.hpp>

#include "evfl/digest.hpp"
#include "evfl/errors.hpp"
#include "evfl/metrics.hpp"
#include "evfl/wire.hpp"

namespace evfl {

namespace {

constexpr double kNormEps = 1e-12;

std::uint64_t noise_base(const FedConfig& config) {
    return config.noise.seed != 0 ? config.noise.seed : config.master_seed;
}

Matrix prior_column(const PriorVector& prior) {
    Matrix m(prior.classes(), 1);
    for (std::size_t z = 0; z < prior.classes(); ++z) m(z, 0) = prior.p[z];
    return m;
}

PriorVector column_prior(const Matrix& column) {
    PriorVector prior;
    prior.p.resize(column.rows());
    for (std::size_t z = 0; z < column.rows(); ++z) prior.p[z] = column(z, 0);
    validate_prior(prior);
    return prior;
}

Matrix extract_reps(const MlpParams& extractor, const Matrix& x) {
    return normalize_rows_safe(mlp_apply(extractor, x));
}

std::vector<std::vector<int>> epoch_batches(std::size_t n, int batch_size, Rng& rng) {
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    std::vector<std::vector<int>> batches;
    std::size_t b = static_cast<std::size_t>(batch_size);
    for (std::size_t at = 0; at < n; at += b) {
        std::size_t end = std::min(at + b, n);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

bool is_comm_error(const std::exception_ptr& ep, std::string& message) {
    try {
        std::rethrow_exception(ep);
    } catch (const TransportError& e) {
        message = e.what();
        return true;
    } catch (const ProtocolError& e) {
        message = e.what();
        return true;
    } catch (const FramingError& e) {
        message = e.what();
        return true;
    } catch (...) {
        return false;
    }
}

void validate_config(const Scenario& scenario, const FedConfig& config) {
    const HyperParams& h = config.hyper;
    if (h.local_epochs < 1) throw ConfigError("local_epochs must be at least 1");
    if (h.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (h.latent_dim < 1) throw ConfigError("latent_dim must be at least 1");
    if (h.rho < 0.0 || h.rho > 1.0) throw ConfigError("rho must lie in [0, 1]");
    if (h.phi < 0.0) throw ConfigError("phi must be nonnegative");
    if (config.noise.kappa < 0.0) throw ConfigError("noise kappa must be nonnegative");
    if (config.master_seed == 0) throw ConfigError("master seed must be nonzero");
    if (scenario.parties < 1) throw ConfigError("scenario has no parties");
}

// Everything one party does inside a round, on its own thread. Mutates only
// its own PartyState slot.
void party_phase(PartyState& ps, int m, int round, const Scenario& scenario,
                 const FedConfig& config, Transport& transport) {
    std::vector<std::uint8_t> frame = transport.recv_at_party(m);
    DecodeResult decoded = decode_message(frame);
    const ProtoDown* down = std::get_if<ProtoDown>(&decoded.message);
    if (!down)
        throw ProtocolError("party " + std::to_string(m) + ": expected ProtoDown");
    if (down->round != static_cast<std::uint32_t>(round))
        throw ProtocolError("party " + std::to_string(m) + ": round " +
                            std::to_string(down->round) + " arrived during round " +
                            std::to_string(round));
    ps.received_protos = down->prototypes;
    PrototypeSet protos{down->prototypes};
    PriorVector global = column_prior(down->global_prior);

    std::size_t classes = global.classes();
    Matrix unaligned = scenario.unaligned_block(m);
    // Raw representations, matching the plans inside the local loss: pseudo
    // labels and the prior estimate live on the same similarity scale.
    Matrix reps_u;
    if (unaligned.rows() > 0) reps_u = mlp_apply(ps.extractor, unaligned);

    // Minority fraction from pseudo-labels over the whole unaligned pool,
    // plus ground truth on the active party's aligned rows.
    std::vector<long long> counts(classes, 0);
    if (unaligned.rows() > 0) {
        TransportPlan plan = plan_to_prototypes(protos, ps.local_prior, reps_u);
        for (int z : argmax_rows(plan.probs)) ++counts[static_cast<std::size_t>(z)];
    }
    if (m == 0)
        for (int y : scenario.aligned_labels()) ++counts[static_cast<std::size_t>(y)];
    GammaParam gamma = compute_gamma(counts);
    PriorVector mixed = mix_prior(global, ps.local_prior, gamma.value);
    PriorVector estimated =
        unaligned.rows() > 0 ? estimate_local_prior(reps_u, protos, mixed) : mixed;

    if (unaligned.rows() > 0 && config.hyper.eta != 0.0) {
        LocalLossOptions opts;
        opts.phi = config.hyper.phi;
        opts.theta_conf = config.hyper.theta_conf;
        opts.cost = config.hyper.cost;
        opts.weighting = config.hyper.weighting;
        for (int e = 0; e < config.hyper.local_epochs; ++e) {
            Rng rng(chain_seed(config.master_seed, seed_tag::kLocalBatch,
                               static_cast<std::uint64_t>(round),
                               static_cast<std::uint64_t>(m),
                               static_cast<std::uint64_t>(e)));
            for (const std::vector<int>& ids :
                 epoch_batches(unaligned.rows(), config.hyper.batch_size, rng)) {
                Matrix xb = take_rows(unaligned, ids);
                LocalLossResult ll =
                    local_loss(ps.extractor, xb, protos, estimated, opts);
                sgd_step(ps.extractor, ll.grads, config.hyper.eta, 0.0);
            }
        }
    }

    Matrix reps_a = extract_reps(ps.extractor, scenario.aligned_block(m));
    ps.clean_aligned_reps = reps_a;
    Matrix upload = reps_a;
    if (config.noise.target == NoiseConfig::Target::representations &&
        config.noise.kappa > 0.0) {
        Rng nrng(chain_seed(noise_base(config), seed_tag::kNoiseRepr,
                            static_cast<std::uint64_t>(round),
                            static_cast<std::uint64_t>(m)));
        upload = inject_noise(upload, config.noise.kappa, nrng);
    }
    ReprUp up;
    up.round = static_cast<std::uint32_t>(round);
    up.party_id = static_cast<std::uint32_t>(m);
    up.aligned_reps = std::move(upload);
    up.local_prior = prior_column(estimated);
    transport.send_to_coordinator(m, encode_message(up));
    ps.local_prior = std::move(estimated);
}

}  // namespace

MlpParams make_extractor(std::size_t in_cols, const HyperParams& hyper, Rng& rng) {
    MlpParams p = make_mlp(in_cols, hyper.extractor_hidden,
                           static_cast<std::size_t>(hyper.latent_dim), rng);
    // Near-zero representations make exp(mu.f) flat across classes, and flat
    // assignments pull every sample toward the same prototype mix. Starting
    // the output layer wider keeps assignments committed from round one;
    // weight decay walks the scale back down as training settles.
    constexpr double kOutputGain = 5.0;
    for (double& v : p.layers.back().weight.data()) v *= kOutputGain;
    return p;
}

FedState init_fed_state(const Scenario& scenario, const FedConfig& config) {
    validate_config(scenario, config);
    FedState state;
    state.parties.resize(static_cast<std::size_t>(scenario.parties));
    for (int m = 0; m < scenario.parties; ++m) {
        PartyState& ps = state.parties[static_cast<std::size_t>(m)];
        Rng rng(derive_seed(config.master_seed, seed_tag::kExtractorInit,
                            static_cast<std::uint64_t>(m)));
        ps.extractor = make_extractor(scenario.train_X[static_cast<std::size_t>(m)].cols(),
                                      config.hyper, rng);
        ps.local_prior = init_prior(static_cast<std::size_t>(scenario.classes));
    }
    state.active.head = init_head(scenario.parties, config.hyper.latent_dim,
                                  scenario.classes, config.hyper.classifier_hidden,
                                  config.hyper.adaptor_hidden, config.master_seed);
    state.active.global_prior = init_prior(static_cast<std::size_t>(scenario.classes));
    return state;
}

void run_bootstrap(FedState& state, const Scenario& scenario, const FedConfig& config,
                   Transport& transport) {
    if (state.round != -1) throw ProtocolError("run_bootstrap: already bootstrapped");
    int parties = scenario.parties;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(parties));
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(parties));
    for (int m = 0; m < parties; ++m) {
        threads.emplace_back([&, m] {
            try {
                PartyState& ps = state.parties[static_cast<std::size_t>(m)];
                Matrix reps = extract_reps(ps.extractor, scenario.aligned_block(m));
                ps.clean_aligned_reps = reps;
                Matrix upload = reps;
                if (config.noise.target == NoiseConfig::Target::representations &&
                    config.noise.kappa > 0.0) {
                    Rng nrng(chain_seed(noise_base(config), seed_tag::kNoiseRepr, 0,
                                        static_cast<std::uint64_t>(m)));
                    upload = inject_noise(upload, config.noise.kappa, nrng);
                }
                ReprUp up;
                up.round = 0;
                up.party_id = static_cast<std::uint32_t>(m);
                up.aligned_reps = std::move(upload);
                up.local_prior = prior_column(ps.local_prior);
                transport.send_to_coordinator(m, encode_message(up));
            } catch (...) {
                errors[static_cast<std::size_t>(m)] = std::current_exception();
            }
        });
    }
    for (std::thread& t : threads) t.join();
    for (const std::exception_ptr& ep : errors)
        if (ep) std::rethrow_exception(ep);

    std::vector<int> labels = scenario.aligned_labels();
    for (int m = 0; m < parties; ++m) {
        std::vector<std::uint8_t> frame = transport.recv_from_party(m);
        state.comm_log.push_back({0, m, kTagReprUp, frame.size()});
        DecodeResult decoded = decode_message(frame);
        ReprUp* up = std::get_if<ReprUp>(&decoded.message);
        if (!up || up->round != 0 || up->party_id != static_cast<std::uint32_t>(m))
            throw ProtocolError("run_bootstrap: unexpected upload from party " +
                                std::to_string(m));
        Rng proto_rng(derive_seed(config.master_seed, seed_tag::kPrototypeInit,
                                  static_cast<std::uint64_t>(m)));
        state.active.prototypes.push_back(
            init_prototypes(up->aligned_reps,
                            labels, static_cast<std::size_t>(scenario.classes),
                            proto_rng));
        state.active.aligned_reps.push_back(std::move(up->aligned_reps));
    }
    state.round = 0;
}

bool run_round(FedState& state, const Scenario& scenario, const FedConfig& config,
               Transport& transport, int round) {
    if (state.round < 0) throw ProtocolError("run_round: bootstrap has not run");
    if (round != state.round + 1)
        throw ProtocolError("run_round: expected round " +
                            std::to_string(state.round + 1) + ", got " +
                            std::to_string(round));
    int parties = scenario.parties;
    std::vector<PartyState> party_copy = state.parties;
    ActiveState active = state.active;
    std::vector<CommRecord> comm;

    try {
        for (int m = 0; m < parties; ++m) {
            Matrix protos = active.prototypes[static_cast<std::size_t>(m)].mu;
            if (config.noise.target == NoiseConfig::Target::prototypes &&
                config.noise.kappa > 0.0) {
                Rng nrng(chain_seed(noise_base(config), seed_tag::kNoiseProto,
                                    static_cast<std::uint64_t>(round),
                                    static_cast<std::uint64_t>(m)));
                protos = inject_noise(protos, config.noise.kappa, nrng);
            }
            ProtoDown down;
            down.round = static_cast<std::uint32_t>(round);
            down.prototypes = std::move(protos);
            down.global_prior = prior_column(active.global_prior);
            std::vector<std::uint8_t> frame = encode_message(down);
            transport.send_to_party(m, frame);
            comm.push_back({round, m, kTagProtoDown, frame.size()});
        }
    } catch (const TransportError& e) {
        state.error_log.push_back("round " + std::to_string(round) +
                                  " aborted during broadcast: " + e.what());
        return false;
    }

    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(parties));
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(parties));
    for (int m = 0; m < parties; ++m) {
        threads.emplace_back([&, m] {
            try {
                party_phase(party_copy[static_cast<std::size_t>(m)], m, round, scenario,
                            config, transport);
            } catch (...) {
                errors[static_cast<std::size_t>(m)] = std::current_exception();
            }
        });
    }
    for (std::thread& t : threads) t.join();
    for (const std::exception_ptr& ep : errors) {
        if (!ep) continue;
        std::string message;
        if (is_comm_error(ep, message)) {
            state.error_log.push_back("round " + std::to_string(round) +
                                      " aborted at a party: " + message);
            return false;
        }
        std::rethrow_exception(ep);
    }

    std::vector<PriorVector> uploaded(static_cast<std::size_t>(parties));
    try {
        for (int m = 0; m < parties; ++m) {
            std::vector<std::uint8_t> frame = transport.recv_from_party(m);
            comm.push_back({round, m, kTagReprUp, frame.size()});
            DecodeResult decoded = decode_message(frame);
            ReprUp* up = std::get_if<ReprUp>(&decoded.message);
            if (!up || up->round != static_cast<std::uint32_t>(round) ||
                up->party_id != static_cast<std::uint32_t>(m))
                throw ProtocolError("run_round: unexpected upload from party " +
                                    std::to_string(m));
            uploaded[static_cast<std::size_t>(m)] = column_prior(up->local_prior);
            active.aligned_reps[static_cast<std::size_t>(m)] =
                std::move(up->aligned_reps);
        }
    } catch (...) {
        std::string message;
        if (is_comm_error(std::current_exception(), message)) {
            state.error_log.push_back("round " + std::to_string(round) +
                                      " aborted during collection: " + message);
            return false;
        }
        throw;
    }

    // Head phase: tau epochs of cross-entropy over the aligned uploads.
    std::vector<int> labels = scenario.aligned_labels();
    for (int e = 0; e < config.hyper.local_epochs; ++e) {
        Rng rng(chain_seed(config.master_seed, seed_tag::kHeadBatch,
                           static_cast<std::uint64_t>(round),
                           static_cast<std::uint64_t>(e)));
        for (const std::vector<int>& ids :
             epoch_batches(labels.size(), config.hyper.batch_size, rng)) {
            std::vector<Matrix> blocks;
            blocks.reserve(static_cast<std::size_t>(parties));
            for (int m = 0; m < parties; ++m)
                blocks.push_back(
                    take_rows(active.aligned_reps[static_cast<std::size_t>(m)], ids));
            std::vector<int> yb;
            yb.reserve(ids.size());
            for (int i : ids) yb.push_back(labels[static_cast<std::size_t>(i)]);
            HeadLoss hl = head_loss(active.head, blocks, yb);
            head_sgd_step(active.head, hl.grads, config.hyper.eta_prime,
                          config.hyper.gate_lr(), config.hyper.adaptor_lr());
        }
    }

    // Prototype drift uses the final adapted representations of the round.
    for (int m = 0; m < parties; ++m) {
        Matrix adapted =
            mlp_apply(active.head.adaptors[static_cast<std::size_t>(m)],
                      active.aligned_reps[static_cast<std::size_t>(m)]);
        active.prototypes[static_cast<std::size_t>(m)] = update_prototypes(
            active.prototypes[static_cast<std::size_t>(m)], adapted, labels,
            config.hyper.rho, config.hyper.renormalize_prototypes);
    }
    active.global_prior = average_global_prior(uploaded);

    state.parties = std::move(party_copy);
    state.active = std::move(active);
    state.comm_log.insert(state.comm_log.end(), comm.begin(), comm.end());
    state.round = round;
    return true;
}

Matrix inject_noise(const Matrix& m, double kappa, Rng& rng) {
    if (kappa < 0.0) throw DomainError("inject_noise: negative scale");
    if (kappa == 0.0) return m;
    Matrix out = m;
    for (double& v : out.data()) v += kappa * rng.gaussian(0.0, 1.0);
    return out;
}

double label_inference_attack(const Matrix& aligned_reps, const Matrix& received_protos,
                              const std::vector<int>& labels) {
    if (aligned_reps.rows() != labels.size())
        throw ShapeError("label_inference_attack: one label per row required");
    if (aligned_reps.rows() == 0)
        throw DomainError("label_inference_attack: empty batch");
    if (aligned_reps.cols() != received_protos.cols())
        throw ShapeError("label_inference_attack: dimension mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < aligned_reps.rows(); ++i) {
        const double* f = aligned_reps.row_ptr(i);
        double fn = detail::norm2(f, aligned_reps.cols());
        int best = 0;
        double best_score = -2.0;
        for (std::size_t z = 0; z < received_protos.rows(); ++z) {
            const double* mu = received_protos.row_ptr(z);
            double mn = detail::norm2(mu, received_protos.cols());
            double score = (fn < kNormEps || mn < kNormEps)
                               ? 0.0
                               : detail::dot(f, mu, aligned_reps.cols()) / (fn * mn);
            if (score > best_score) {
                best_score = score;
                best = static_cast<int>(z);
            }
        }
        if (best == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(aligned_reps.rows());
}

std::size_t comm_cost(const std::vector<CommRecord>& log) {
    std::size_t total = 0;
    for (const CommRecord& r : log) total += r.bytes;
    return total;
}

std::size_t comm_cost_round(const std::vector<CommRecord>& log, int round) {
    std::size_t total = 0;
    for (const CommRecord& r : log)
        if (r.round == round) total += r.bytes;
    return total;
}

std::string fed_digest(const FedState& state) {
    Fnv1a f;
    f.u64(static_cast<std::uint64_t>(state.round));
    f.u64(state.parties.size());
    for (const PartyState& ps : state.parties) {
        f.mlp(ps.extractor);
        f.prior(ps.local_prior);
        f.mat(ps.received_protos);
        f.mat(ps.clean_aligned_reps);
    }
    for (const MlpParams& a : state.active.head.adaptors) f.mlp(a);
    f.mat(state.active.head.gate_w);
    f.mlp(state.active.head.classifier);
    for (const PrototypeSet& p : state.active.prototypes) f.mat(p.mu);
    for (const Matrix& r : state.active.aligned_reps) f.mat(r);
    f.prior(state.active.global_prior);
    f.u64(state.comm_log.size());
    for (const CommRecord& r : state.comm_log) {
        f.u64(static_cast<std::uint64_t>(r.round));
        f.u64(static_cast<std::uint64_t>(r.party));
        f.u64(r.tag);
        f.u64(r.bytes);
    }
    return f.hex();
}

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw IoError("attack state: matrix must be an array of rows");
    std::size_t rows = j.size();
    if (rows == 0) return Matrix();
    std::size_t cols = j.at(0).size();
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const nlohmann::json& row = j.at(i);
        if (row.size() != cols) throw IoError("attack state: ragged matrix");
        for (std::size_t c = 0; c < cols; ++c) m(i, c) = row.at(c).get<double>();
    }
    return m;
}

}  // namespace

AttackState build_attack_state(const FedState& state, const Scenario& scenario) {
    if (state.round < 1)
        throw ProtocolError("build_attack_state: no broadcast has happened yet");
    AttackState out;
    out.classes = scenario.classes;
    out.labels = scenario.aligned_labels();
    for (std::size_t m = 0; m < state.parties.size(); ++m) {
        out.party_ids.push_back(static_cast<int>(m));
        out.reps.push_back(state.parties[m].clean_aligned_reps);
        out.prototypes.push_back(state.parties[m].received_protos);
    }
    return out;
}

std::string attack_state_to_json(const AttackState& state) {
    nlohmann::json j;
    j["classes"] = state.classes;
    j["labels"] = state.labels;
    nlohmann::json parties = nlohmann::json::array();
    for (std::size_t k = 0; k < state.party_ids.size(); ++k) {
        nlohmann::json entry;
        entry["id"] = state.party_ids[k];
        entry["reps"] = matrix_to_json(state.reps[k]);
        entry["prototypes"] = matrix_to_json(state.prototypes[k]);
        parties.push_back(std::move(entry));
    }
    j["parties"] = std::move(parties);
    return j.dump(2);
}

AttackState attack_state_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("attack state: ") + e.what());
    }
    AttackState state;
    try {
        state.classes = j.at("classes").get<int>();
        state.labels = j.at("labels").get<std::vector<int>>();
        for (const nlohmann::json& entry : j.at("parties")) {
            state.party_ids.push_back(entry.at("id").get<int>());
            state.reps.push_back(matrix_from_json(entry.at("reps")));
            state.prototypes.push_back(matrix_from_json(entry.at("prototypes")));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("attack state: ") + e.what());
    }
    return state;
}

double attack_accuracy(const AttackState& state) {
    if (state.party_ids.empty()) throw DomainError("attack_accuracy: no parties saved");
    double sum = 0.0;
    int used = 0;
    for (std::size_t k = 0; k < state.party_ids.size(); ++k) {
        if (state.party_ids[k] == 0 && state.party_ids.size() > 1) continue;
        sum += label_inference_attack(state.reps[k], state.prototypes[k], state.labels);
        ++used;
    }
    return sum / static_cast<double>(used);
}

}  // namespace evfl
