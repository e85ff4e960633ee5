#include <doctest.h>

#include <cmath>
#include <variant>

#include "evfl/baselines.hpp"
#include "evfl/errors.hpp"
#include "evfl/federation.hpp"
#include "evfl/wire.hpp"
#include "support/oracles.hpp"

using namespace evfl;

namespace {

ScenarioSpec fed_spec() {
    ScenarioSpec spec;
    spec.dataset.synth.classes = 3;
    spec.dataset.synth.per_class = {40};
    spec.dataset.synth.features = 6;
    spec.parties = 2;
    spec.aligned_ratio = 0.3;
    spec.test_ratio = 0.25;
    return spec;
}

FedConfig fed_config() {
    FedConfig config;
    config.hyper.local_epochs = 1;
    config.hyper.batch_size = 16;
    config.hyper.latent_dim = 4;
    config.hyper.extractor_hidden = {8};
    config.hyper.classifier_hidden = {8};
    config.master_seed = 5;
    return config;
}

FedState run_rounds(const Scenario& scenario, const FedConfig& config, int rounds,
                    const std::string& kind = "inproc") {
    auto transport = make_transport(kind, scenario.parties);
    FedState state = init_fed_state(scenario, config);
    run_bootstrap(state, scenario, config, *transport);
    for (int t = 1; t <= rounds; ++t)
        REQUIRE(run_round(state, scenario, config, *transport, t));
    return state;
}

// Delegates to a wrapped transport until the fuse burns, then fails every
// coordinator-side receive.
struct FailingTransport : Transport {
    Transport& inner;
    int recv_budget;
    explicit FailingTransport(Transport& t, int budget) : inner(t), recv_budget(budget) {}
    void send_to_party(int party, const std::vector<std::uint8_t>& frame) override {
        inner.send_to_party(party, frame);
    }
    std::vector<std::uint8_t> recv_from_party(int party) override {
        if (recv_budget-- <= 0)
            throw TransportError("recv_from_party: injected failure");
        return inner.recv_from_party(party);
    }
    void send_to_coordinator(int party, const std::vector<std::uint8_t>& frame) override {
        inner.send_to_coordinator(party, frame);
    }
    std::vector<std::uint8_t> recv_at_party(int party) override {
        return inner.recv_at_party(party);
    }
};

// Keeps a copy of every frame that crosses the wire.
struct RecordingTransport : Transport {
    InProcTransport inner;
    std::vector<std::vector<std::uint8_t>> down_frames, up_frames;
    std::mutex mu;
    explicit RecordingTransport(int parties) : inner(parties) {}
    void send_to_party(int party, const std::vector<std::uint8_t>& frame) override {
        {
            std::lock_guard<std::mutex> lock(mu);
            down_frames.push_back(frame);
        }
        inner.send_to_party(party, frame);
    }
    std::vector<std::uint8_t> recv_from_party(int party) override {
        return inner.recv_from_party(party);
    }
    void send_to_coordinator(int party, const std::vector<std::uint8_t>& frame) override {
        {
            std::lock_guard<std::mutex> lock(mu);
            up_frames.push_back(frame);
        }
        inner.send_to_coordinator(party, frame);
    }
    std::vector<std::uint8_t> recv_at_party(int party) override {
        return inner.recv_at_party(party);
    }
};

}  // namespace

TEST_CASE("bootstrap initializes prototypes, priors, and the comm log") {
    Scenario scenario = build_scenario(fed_spec(), 5);
    FedConfig config = fed_config();
    auto transport = make_transport("inproc", scenario.parties);
    FedState state = init_fed_state(scenario, config);
    CHECK(state.round == -1);
    run_bootstrap(state, scenario, config, *transport);

    CHECK(state.round == 0);
    REQUIRE(state.comm_log.size() == 2);  // one upload per party, no broadcast yet
    std::size_t expected = frame_size_repr_up(scenario.aligned_ids.size(), 4, 3);
    for (const CommRecord& r : state.comm_log) {
        CHECK(r.round == 0);
        CHECK(r.tag == kTagReprUp);
        CHECK(r.bytes == expected);
    }
    REQUIRE(state.active.prototypes.size() == 2);
    for (const PrototypeSet& p : state.active.prototypes) {
        REQUIRE(p.classes() == 3);
        for (std::size_t z = 0; z < 3; ++z)
            CHECK(row_norm(p.mu, z) == doctest::Approx(1.0).epsilon(1e-12));
    }
    for (double v : state.active.global_prior.p)
        CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    CHECK_THROWS_AS(run_bootstrap(state, scenario, config, *transport), ProtocolError);
    CHECK_THROWS_AS(run_round(state, scenario, config, *transport, 2), ProtocolError);
}

TEST_CASE("rounds advance state and the comm log deterministically") {
    Scenario scenario = build_scenario(fed_spec(), 5);
    FedConfig config = fed_config();
    FedState a = run_rounds(scenario, config, 3);
    CHECK(a.round == 3);
    // Bootstrap: 2 uploads. Each round: 2 broadcasts + 2 uploads.
    CHECK(a.comm_log.size() == 2 + 3 * 4);

    FedState b = run_rounds(scenario, config, 3);
    CHECK(fed_digest(a) == fed_digest(b));
    CHECK(fed_digest(a).size() == 16);

    FedConfig other = config;
    other.master_seed = 6;
    FedState c = run_rounds(scenario, other, 3);
    CHECK(fed_digest(a) != fed_digest(c));
}

TEST_CASE("socket and in-process transports produce identical runs") {
    Scenario scenario = build_scenario(fed_spec(), 5);
    FedConfig config = fed_config();
    FedState inproc = run_rounds(scenario, config, 2, "inproc");
    FedState socket = run_rounds(scenario, config, 2, "socket");
    CHECK(fed_digest(inproc) == fed_digest(socket));
}

TEST_CASE("communication cost follows the closed form") {
    Scenario scenario = build_scenario(fed_spec(), 5);
    FedConfig config = fed_config();
    int rounds = 2;
    FedState state = run_rounds(scenario, config, rounds);

    std::size_t n_aligned = scenario.aligned_ids.size();
    std::size_t up = frame_size_repr_up(n_aligned, 4, 3);
    std::size_t down = frame_size_proto_down(3, 4);
    std::size_t expected =
        2 * up + static_cast<std::size_t>(rounds) * 2 * (down + up);
    CHECK(comm_cost(state.comm_log) == expected);
    CHECK(comm_cost_round(state.comm_log, 0) == 2 * up);
    CHECK(comm_cost_round(state.comm_log, 1) == 2 * (down + up));

    std::size_t resummed = 0;
    for (const CommRecord& r : state.comm_log) resummed += r.bytes;
    CHECK(resummed == expected);
}

TEST_CASE("every frame on the wire is schema-bound and exactly sized") {
    Scenario scenario = build_scenario(fed_spec(), 5);
    FedConfig config = fed_config();
    RecordingTransport transport(scenario.parties);
    FedState state = init_fed_state(scenario, config);
    run_bootstrap(state, scenario, config, transport);
    REQUIRE(run_round(state, scenario, config, transport, 1));

    std::size_t n_aligned = scenario.aligned_ids.size();
    // The closed-form size leaves no room for anything beyond the declared
    // matrices: representations and priors go up, prototypes and priors come
    // down, and neither direction carries labels, raw features, or gradients.
    REQUIRE(transport.down_frames.size() == 2);
    for (const auto& frame : transport.down_frames) {
        CHECK(frame.size() == frame_size_proto_down(3, 4));
        DecodeResult r = decode_message(frame);
        const ProtoDown& d = std::get<ProtoDown>(r.message);
        CHECK(d.prototypes.rows() == 3);
        CHECK(d.prototypes.cols() == 4);
        CHECK(d.global_prior.cols() == 1);
    }
    REQUIRE(transport.up_frames.size() == 4);  // bootstrap + round 1
    for (const auto& frame : transport.up_frames) {
        CHECK(frame.size() == frame_size_repr_up(n_aligned, 4, 3));
        DecodeResult r = decode_message(frame);
        const ReprUp& u = std::get<ReprUp>(r.message);
        CHECK(u.aligned_reps.rows() == n_aligned);  // never the unaligned pool
        CHECK(u.aligned_reps.cols() == 4);          // latent, not feature width
        CHECK(u.local_prior.rows() == 3);
    }
}

TEST_CASE("a transport failure aborts the round without touching state") {
    Scenario scenario = build_scenario(fed_spec(), 5);
    FedConfig config = fed_config();
    auto clean = make_transport("inproc", scenario.parties);
    FedState state = init_fed_state(scenario, config);
    run_bootstrap(state, scenario, config, *clean);
    std::string before = fed_digest(state);

    InProcTransport inner(scenario.parties);
    FailingTransport failing(inner, 0);
    CHECK_FALSE(run_round(state, scenario, config, failing, 1));
    CHECK(state.round == 0);
    CHECK(fed_digest(state) == before);
    REQUIRE(state.error_log.size() == 1);
    CHECK(state.error_log[0].find("round 1") != std::string::npos);

    // A retry over a fresh transport reproduces the unaborted run exactly:
    // party work is seeded by (round, party), not by attempt.
    auto fresh = make_transport("inproc", scenario.parties);
    REQUIRE(run_round(state, scenario, config, *fresh, 1));
    FedState reference = run_rounds(scenario, config, 1);
    CHECK(fed_digest(state) == fed_digest(reference));
}

TEST_CASE("frozen learning rates leave every parameter bitwise untouched") {
    Scenario scenario = build_scenario(fed_spec(), 5);
    FedConfig config = fed_config();
    config.hyper.eta = 0.0;
    config.hyper.eta_prime = 0.0;
    config.hyper.eta_gate = 0.0;
    config.hyper.eta_adaptor = 0.0;
    config.hyper.rho = 0.0;

    auto transport = make_transport("inproc", scenario.parties);
    FedState state = init_fed_state(scenario, config);
    run_bootstrap(state, scenario, config, *transport);
    FedState frozen = state;  // post-bootstrap reference

    for (int t = 1; t <= 2; ++t)
        REQUIRE(run_round(state, scenario, config, *transport, t));

    for (int m = 0; m < 2; ++m) {
        CHECK(testsup::bitwise_equal(state.parties[m].extractor,
                                     frozen.parties[m].extractor));
        CHECK(testsup::bitwise_equal(state.active.prototypes[m].mu,
                                     frozen.active.prototypes[m].mu));
        CHECK(testsup::bitwise_equal(state.active.head.adaptors[m],
                                     frozen.active.head.adaptors[m]));
    }
    CHECK(testsup::bitwise_equal(state.active.head.classifier,
                                 frozen.active.head.classifier));
    CHECK(testsup::bitwise_equal(state.active.head.gate_w, frozen.active.head.gate_w));
    // Communication still happened.
    CHECK(state.comm_log.size() == frozen.comm_log.size() + 2 * 4);
}

TEST_CASE("inject_noise scale oracle and edge cases") {
    Rng rng(77);
    Matrix zeros(1000, 1000);
    Matrix noisy = inject_noise(zeros, 0.1, rng);
    double sum = 0.0, sq = 0.0;
    for (double v : noisy.data()) {
        sum += v;
        sq += v * v;
    }
    double n = static_cast<double>(noisy.data().size());
    double std_hat = std::sqrt(sq / n - (sum / n) * (sum / n));
    // std of the sample std over 1e6 gaussians is about 0.1 / sqrt(2e6) = 7e-5.
    CHECK(std_hat > 0.0995);
    CHECK(std_hat < 0.1005);

    Rng rng2(78);
    Matrix same = inject_noise(zeros, 0.0, rng2);
    CHECK(testsup::bitwise_equal(same, zeros));
    CHECK_THROWS_AS(inject_noise(zeros, -0.1, rng2), DomainError);
}

TEST_CASE("noise at kappa zero is bitwise identical to no noise at all") {
    Scenario scenario = build_scenario(fed_spec(), 5);
    FedConfig off = fed_config();
    FedConfig zero = fed_config();
    zero.noise.target = NoiseConfig::Target::representations;
    zero.noise.kappa = 0.0;
    CHECK(fed_digest(run_rounds(scenario, off, 2)) ==
          fed_digest(run_rounds(scenario, zero, 2)));

    FedConfig loud = fed_config();
    loud.noise.target = NoiseConfig::Target::representations;
    loud.noise.kappa = 0.05;
    CHECK(fed_digest(run_rounds(scenario, off, 2)) !=
          fed_digest(run_rounds(scenario, loud, 2)));

    // The noise stream follows noise.seed when set, master seed otherwise.
    FedConfig reseeded = loud;
    reseeded.noise.seed = 99;
    CHECK(fed_digest(run_rounds(scenario, loud, 2)) !=
          fed_digest(run_rounds(scenario, reseeded, 2)));
    CHECK(fed_digest(run_rounds(scenario, reseeded, 2)) ==
          fed_digest(run_rounds(scenario, reseeded, 2)));
}

TEST_CASE("label inference attack scores cosine matches") {
    // Representations that sit exactly on their class prototype are fully
    // identifiable; shuffled prototypes are not.
    Matrix protos(2, 3, {1, 0, 0, 0, 1, 0});
    Matrix reps(4, 3, {1, 0, 0, 0, 1, 0, 1, 0, 0, 0, 1, 0});
    std::vector<int> labels = {0, 1, 0, 1};
    CHECK(label_inference_attack(reps, protos, labels) == doctest::Approx(1.0));
    std::vector<int> wrong = {1, 0, 1, 0};
    CHECK(label_inference_attack(reps, protos, wrong) == doctest::Approx(0.0));
    CHECK_THROWS_AS(label_inference_attack(reps, protos, {0}), ShapeError);
}

TEST_CASE("attack state survives its json round trip") {
    Scenario scenario = build_scenario(fed_spec(), 5);
    FedConfig config = fed_config();

    FedState fresh = init_fed_state(scenario, config);
    auto transport = make_transport("inproc", scenario.parties);
    run_bootstrap(fresh, scenario, config, *transport);
    CHECK_THROWS_AS(build_attack_state(fresh, scenario), ProtocolError);

    FedState state = run_rounds(scenario, config, 2);
    AttackState attack = build_attack_state(state, scenario);
    CHECK(attack.classes == 3);
    CHECK(attack.labels.size() == scenario.aligned_ids.size());
    double direct = attack_accuracy(attack);
    CHECK(direct >= 0.0);
    CHECK(direct <= 1.0);

    AttackState back = attack_state_from_json(attack_state_to_json(attack));
    CHECK(attack_accuracy(back) == doctest::Approx(direct).epsilon(1e-12));
    CHECK_THROWS_AS(attack_state_from_json("{"), IoError);
}

TEST_CASE("proto-side training with a zeroed head reduces to vanilla vfl") {
    // Identity adaptors, a frozen zero gate, frozen extractors, no prototype
    // drift: the coordinator's classifier sees exactly the uniform-mixture
    // concatenation the centralized vanilla baseline trains on.
    ScenarioSpec spec = fed_spec();
    spec.aligned_ratio = 1.0;
    Scenario scenario = build_scenario(spec, 5);

    FedConfig config = fed_config();
    config.hyper.rounds = 3;
    config.hyper.eta = 0.0;
    config.hyper.eta_gate = 0.0;
    config.hyper.eta_adaptor = 0.0;
    config.hyper.adaptor_hidden = {};
    config.hyper.rho = 0.0;
    config.hyper.eta_prime = 0.05;

    FedState state = run_rounds(scenario, config, config.hyper.rounds);
    BaselineResult vanilla = train_centralized(scenario, BaselineKind::vanilla_vfl,
                                               config.hyper, config.master_seed);

    std::vector<double> fed_cls = flatten_params(state.active.head.classifier);
    std::vector<double> van_cls = flatten_params(vanilla.classifier);
    REQUIRE(fed_cls.size() == van_cls.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < fed_cls.size(); ++i)
        worst = std::max(worst, std::fabs(fed_cls[i] - van_cls[i]));
    CHECK(worst <= 1e-9);

    for (int m = 0; m < 2; ++m)
        CHECK(testsup::bitwise_equal(state.parties[m].extractor,
                                     vanilla.extractors[m]));

    // Test-time logits agree too.
    std::vector<Matrix> blocks = {scenario.test_X[0], scenario.test_X[1]};
    Matrix van_logits = baseline_logits(vanilla, blocks);
    std::vector<Matrix> reps;
    for (int m = 0; m < 2; ++m)
        reps.push_back(normalize_rows_safe(
            mlp_apply(state.parties[m].extractor, scenario.test_X[m])));
    HeadEval eval = head_forward(state.active.head, reps);
    CHECK(testsup::max_abs_diff(eval.logits, van_logits) <= 1e-9);
}
