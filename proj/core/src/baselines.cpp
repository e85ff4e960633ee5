#include "evfl/baselines.hpp"

#include <algorithm>

#include "evfl/aggregation.hpp"
#include "evfl/errors.hpp"
#include "evfl/federation.hpp"
#include "evfl/metrics.hpp"

namespace evfl {

namespace {

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

struct Forward {
    std::vector<Matrix> raw;
    std::vector<ForwardTape> tapes;
    Matrix fused;
    ForwardTape classifier_tape;
    Matrix logits;
};

Forward forward(const std::vector<MlpParams>& extractors, const MlpParams& classifier,
                const std::vector<Matrix>& blocks, bool keep_tapes) {
    Forward f;
    std::vector<Matrix> reps;
    reps.reserve(blocks.size());
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        auto [raw, tape] = mlp_forward(extractors[k], blocks[k]);
        reps.push_back(normalize_rows_safe(raw));
        if (keep_tapes) {
            f.raw.push_back(std::move(raw));
            f.tapes.push_back(std::move(tape));
        }
    }
    f.fused = scale(hconcat(reps), 1.0 / static_cast<double>(blocks.size()));
    auto [logits, ctape] = mlp_forward(classifier, f.fused);
    f.logits = std::move(logits);
    if (keep_tapes) f.classifier_tape = std::move(ctape);
    return f;
}

}  // namespace

BaselineResult train_centralized(const Scenario& scenario, BaselineKind kind,
                                 const HyperParams& hyper, std::uint64_t master_seed) {
    BaselineResult model;
    model.kind = kind;
    if (kind == BaselineKind::local) {
        model.party_ids = {0};
    } else {
        for (int m = 0; m < scenario.parties; ++m) model.party_ids.push_back(m);
    }
    std::vector<int> rows;
    if (kind == BaselineKind::upper_boundary) {
        rows.resize(scenario.train_labels.size());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
    } else {
        rows = scenario.aligned_ids;
    }
    if (rows.empty()) throw ConfigError("train_centralized: no labeled rows");

    std::vector<Matrix> train_blocks;
    std::vector<Matrix> test_blocks;
    for (int pid : model.party_ids) {
        train_blocks.push_back(
            take_rows(scenario.train_X[static_cast<std::size_t>(pid)], rows));
        test_blocks.push_back(scenario.test_X[static_cast<std::size_t>(pid)]);
        Rng rng(derive_seed(master_seed, seed_tag::kExtractorInit,
                            static_cast<std::uint64_t>(pid)));
        model.extractors.push_back(make_extractor(
            scenario.train_X[static_cast<std::size_t>(pid)].cols(), hyper, rng));
    }
    std::vector<int> labels;
    labels.reserve(rows.size());
    for (int id : rows) labels.push_back(scenario.train_labels[static_cast<std::size_t>(id)]);

    Rng cls_rng(derive_seed(master_seed, seed_tag::kClassifierInit));
    model.classifier = make_mlp(
        model.party_ids.size() * static_cast<std::size_t>(hyper.latent_dim),
        hyper.classifier_hidden, static_cast<std::size_t>(scenario.classes), cls_rng);

    // Prediction never leaves the label set the model trains on.
    std::vector<long long> seen_counts = class_counts(labels, scenario.classes);
    std::vector<int> seen;
    for (int z = 0; z < scenario.classes; ++z)
        if (seen_counts[static_cast<std::size_t>(z)] > 0) seen.push_back(z);

    double inv_p = 1.0 / static_cast<double>(model.party_ids.size());
    int epochs = hyper.rounds * hyper.local_epochs;
    for (int e = 0; e < epochs; ++e) {
        // Same batch stream as the federation's head phase: epoch e of round t.
        int t = e / hyper.local_epochs + 1;
        int k = e % hyper.local_epochs;
        Rng rng(chain_seed(master_seed, seed_tag::kHeadBatch,
                           static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(k)));
        for (const std::vector<int>& ids :
             epoch_batches(rows.size(), hyper.batch_size, rng)) {
            std::vector<Matrix> blocks;
            blocks.reserve(train_blocks.size());
            for (const Matrix& block : train_blocks) blocks.push_back(take_rows(block, ids));
            std::vector<int> yb;
            yb.reserve(ids.size());
            for (int i : ids) yb.push_back(labels[static_cast<std::size_t>(i)]);

            Forward f = forward(model.extractors, model.classifier, blocks, true);
            CeResult ce = softmax_cross_entropy(f.logits, yb);
            auto [cls_grads, dfused] =
                mlp_backward(model.classifier, f.classifier_tape, ce.dlogits);
            sgd_step(model.classifier, cls_grads, hyper.eta_prime, 0.0);
            if (hyper.eta != 0.0) {
                std::size_t d = static_cast<std::size_t>(hyper.latent_dim);
                for (std::size_t m = 0; m < model.extractors.size(); ++m) {
                    Matrix dreps(dfused.rows(), d);
                    for (std::size_t i = 0; i < dfused.rows(); ++i) {
                        const double* src = dfused.row_ptr(i) + m * d;
                        double* dst = dreps.row_ptr(i);
                        for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] * inv_p;
                    }
                    Matrix draw = normalize_rows_backward(f.raw[m], dreps);
                    auto [grads, dx] = mlp_backward(model.extractors[m], f.tapes[m], draw);
                    (void)dx;
                    sgd_step(model.extractors[m], grads, hyper.eta, 0.0);
                }
            }
        }
        Forward tf = forward(model.extractors, model.classifier, train_blocks, false);
        model.loss_curve.push_back(softmax_cross_entropy(tf.logits, labels).value);
        Matrix test_logits = baseline_logits(model, test_blocks);
        model.acc_curve.push_back(
            accuracy(argmax_rows_restricted(test_logits, seen), scenario.test_labels));
    }
    return model;
}

Matrix baseline_logits(const BaselineResult& model, const std::vector<Matrix>& blocks) {
    if (blocks.size() != model.extractors.size())
        throw ShapeError("baseline_logits: one block per extractor required");
    Forward f = forward(model.extractors, model.classifier, blocks, false);
    return std::move(f.logits);
}

}  // namespace evfl
