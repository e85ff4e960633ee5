#include <benchmark/benchmark.h>

#include "evfl/experiment.hpp"
#include "evfl/federation.hpp"
#include "evfl/mlp.hpp"
#include "evfl/prototypes.hpp"
#include "evfl/wire.hpp"

namespace {

using namespace evfl;

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.gaussian(0.0, 1.0);
    return m;
}

void BM_Matmul(benchmark::State& state) {
    Matrix a = random_matrix(256, 64, 11);
    Matrix b = random_matrix(64, 32, 12);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul);

void BM_MlpForwardBackward(benchmark::State& state) {
    Rng rng(21);
    MlpParams mlp = make_mlp(16, {32, 16}, 8, rng);
    Matrix x = random_matrix(64, 16, 22);
    Matrix dy = random_matrix(64, 8, 23);
    for (auto _ : state) {
        auto [y, tape] = mlp_forward(mlp, x);
        benchmark::DoNotOptimize(y);
        auto [grads, dx] = mlp_backward(mlp, tape, dy);
        benchmark::DoNotOptimize(grads);
        benchmark::DoNotOptimize(dx);
    }
}
BENCHMARK(BM_MlpForwardBackward);

void BM_LocalLoss(benchmark::State& state) {
    Rng rng(31);
    MlpParams extractor = make_mlp(16, {16}, 8, rng);
    Matrix batch = random_matrix(64, 16, 32);
    PrototypeSet protos{normalize_rows(random_matrix(4, 8, 33))};
    PriorVector prior = init_prior(4);
    LocalLossOptions opts;
    for (auto _ : state)
        benchmark::DoNotOptimize(local_loss(extractor, batch, protos, prior, opts));
}
BENCHMARK(BM_LocalLoss);

void BM_WireRoundTrip(benchmark::State& state) {
    ReprUp up;
    up.round = 3;
    up.party_id = 1;
    up.aligned_reps = random_matrix(128, 8, 41);
    up.local_prior = Matrix(4, 1, {0.25, 0.25, 0.25, 0.25});
    for (auto _ : state) {
        std::vector<std::uint8_t> frame = encode_message(up);
        benchmark::DoNotOptimize(decode_message(frame));
    }
}
BENCHMARK(BM_WireRoundTrip);

void BM_FederatedRound(benchmark::State& state) {
    ScenarioSpec spec;
    spec.dataset.synth.classes = 4;
    spec.dataset.synth.per_class = {200};
    spec.dataset.synth.features = 16;
    spec.parties = 4;
    spec.aligned_ratio = 0.1;
    FedConfig fed;
    fed.hyper.latent_dim = 8;
    fed.master_seed = 7;
    Scenario scenario = build_scenario(spec, 7);
    auto transport = make_transport("inproc", scenario.parties);
    FedState fst = init_fed_state(scenario, fed);
    run_bootstrap(fst, scenario, fed, *transport);
    int t = 0;
    for (auto _ : state) {
        ++t;
        if (!run_round(fst, scenario, fed, *transport, t)) state.SkipWithError("round failed");
    }
}
BENCHMARK(BM_FederatedRound)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
