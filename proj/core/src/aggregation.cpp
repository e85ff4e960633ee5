#include "evfl/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "evfl/errors.hpp"
#include "evfl/rng.hpp"

namespace evfl {

namespace {
constexpr double kNormEps = 1e-12;
}

HeadParams init_head(int parties, int latent_dim, int classes,
                     const std::vector<int>& classifier_hidden,
                     const std::vector<int>& adaptor_hidden,
                     std::uint64_t master_seed) {
    if (parties < 1) throw ShapeError("init_head: needs at least one party");
    if (latent_dim < 1) throw ShapeError("init_head: latent_dim must be positive");
    if (classes < 2) throw ShapeError("init_head: needs at least two classes");
    HeadParams head;
    head.adaptors.reserve(static_cast<std::size_t>(parties));
    for (int m = 0; m < parties; ++m) {
        if (adaptor_hidden.empty()) {
            head.adaptors.push_back(identity_affine(latent_dim));
        } else {
            Rng rng(derive_seed(master_seed, seed_tag::kAdaptorInit,
                                static_cast<std::uint64_t>(m)));
            head.adaptors.push_back(
                make_mlp(latent_dim, adaptor_hidden, latent_dim, rng));
        }
    }
    head.gate_w = Matrix(static_cast<std::size_t>(parties) *
                             static_cast<std::size_t>(latent_dim),
                         static_cast<std::size_t>(parties));
    Rng cls_rng(derive_seed(master_seed, seed_tag::kClassifierInit));
    head.classifier =
        make_mlp(parties * latent_dim, classifier_hidden, classes, cls_rng);
    return head;
}

CeResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
    if (labels.size() != logits.rows())
        throw ShapeError("softmax_cross_entropy: one label per row required");
    if (logits.rows() == 0) throw ShapeError("softmax_cross_entropy: empty batch");
    std::size_t b = logits.rows();
    std::size_t z = logits.cols();
    CeResult out;
    out.dlogits = Matrix(b, z);
    double inv_b = 1.0 / static_cast<double>(b);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= z)
            throw DomainError("softmax_cross_entropy: label " + std::to_string(y) +
                              " outside the logit columns");
        const double* s = logits.row_ptr(i);
        double mx = s[0];
        for (std::size_t c = 1; c < z; ++c) mx = std::max(mx, s[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < z; ++c) sum += std::exp(s[c] - mx);
        total += std::log(sum) + mx - s[static_cast<std::size_t>(y)];
        double* g = out.dlogits.row_ptr(i);
        for (std::size_t c = 0; c < z; ++c) g[c] = std::exp(s[c] - mx) / sum * inv_b;
        g[static_cast<std::size_t>(y)] -= inv_b;
    }
    out.value = total * inv_b;
    return out;
}

Matrix gate_mixture(const Matrix& concat_adapted, const Matrix& gate_w) {
    if (concat_adapted.cols() != gate_w.rows())
        throw ShapeError("gate_mixture: gate rows must match the concatenated width");
    return softmax_rows(matmul(concat_adapted, gate_w));
}

Matrix fuse_blocks(const std::vector<Matrix>& adapted, const Matrix& mixture) {
    if (adapted.empty()) throw ShapeError("fuse_blocks: no party blocks");
    std::size_t b = adapted[0].rows();
    std::size_t d = adapted[0].cols();
    if (mixture.rows() != b || mixture.cols() != adapted.size())
        throw ShapeError("fuse_blocks: mixture shape must be batch x parties");
    for (const Matrix& block : adapted)
        if (block.rows() != b || block.cols() != d)
            throw ShapeError("fuse_blocks: party blocks disagree on shape");
    Matrix fused(b, adapted.size() * d);
    for (std::size_t m = 0; m < adapted.size(); ++m) {
        for (std::size_t i = 0; i < b; ++i) {
            double w = mixture(i, m);
            const double* src = adapted[m].row_ptr(i);
            double* dst = fused.row_ptr(i) + m * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] * w;
        }
    }
    return fused;
}

namespace {

struct HeadTapes {
    std::vector<ForwardTape> adaptors;
    ForwardTape classifier;
    Matrix concat;
    Matrix fused;
};

HeadEval forward_impl(const HeadParams& head, const std::vector<Matrix>& blocks,
                      HeadTapes* tapes) {
    if (blocks.size() != head.adaptors.size())
        throw ShapeError("head_forward: one block per adaptor required");
    if (blocks.empty()) throw ShapeError("head_forward: no party blocks");
    HeadEval eval;
    eval.adapted.reserve(blocks.size());
    for (std::size_t m = 0; m < blocks.size(); ++m) {
        auto [out, tape] = mlp_forward(head.adaptors[m], blocks[m]);
        eval.adapted.push_back(std::move(out));
        if (tapes) tapes->adaptors.push_back(std::move(tape));
    }
    Matrix concat = hconcat(eval.adapted);
    eval.mixture = gate_mixture(concat, head.gate_w);
    Matrix fused = fuse_blocks(eval.adapted, eval.mixture);
    auto [logits, ctape] = mlp_forward(head.classifier, fused);
    eval.logits = std::move(logits);
    if (tapes) {
        tapes->classifier = std::move(ctape);
        tapes->concat = std::move(concat);
        tapes->fused = std::move(fused);
    }
    return eval;
}

}  // namespace

HeadEval head_forward(const HeadParams& head, const std::vector<Matrix>& blocks) {
    return forward_impl(head, blocks, nullptr);
}

HeadLoss head_loss(const HeadParams& head, const std::vector<Matrix>& blocks,
                   const std::vector<int>& labels) {
    HeadTapes tapes;
    HeadLoss out;
    out.eval = forward_impl(head, blocks, &tapes);
    std::size_t b = blocks[0].rows();
    std::size_t d = blocks[0].cols();
    std::size_t parties = blocks.size();

    CeResult ce = softmax_cross_entropy(out.eval.logits, labels);
    out.value = ce.value;
    auto [cls_grads, dfused] = mlp_backward(head.classifier, tapes.classifier, ce.dlogits);
    out.grads.classifier = std::move(cls_grads);

    // Fusion splits the incoming gradient into a per-block path (scaled by the
    // mixture) and a mixture path, which pulls back through the row softmax
    // using only mixture entries.
    std::vector<Matrix> dadapted(parties, Matrix(b, d));
    Matrix dmix(b, parties);
    for (std::size_t m = 0; m < parties; ++m) {
        for (std::size_t i = 0; i < b; ++i) {
            const double* gf = dfused.row_ptr(i) + m * d;
            const double* a = out.eval.adapted[m].row_ptr(i);
            double* ga = dadapted[m].row_ptr(i);
            double w = out.eval.mixture(i, m);
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                ga[j] = gf[j] * w;
                acc += gf[j] * a[j];
            }
            dmix(i, m) = acc;
        }
    }
    Matrix dscores(b, parties);
    for (std::size_t i = 0; i < b; ++i) {
        const double* w = out.eval.mixture.row_ptr(i);
        const double* gm = dmix.row_ptr(i);
        double dot = 0.0;
        for (std::size_t m = 0; m < parties; ++m) dot += w[m] * gm[m];
        double* gs = dscores.row_ptr(i);
        for (std::size_t m = 0; m < parties; ++m) gs[m] = w[m] * (gm[m] - dot);
    }
    out.grads.gate_w = matmul_tn(tapes.concat, dscores);
    Matrix dconcat = matmul_nt(dscores, head.gate_w);
    for (std::size_t m = 0; m < parties; ++m)
        for (std::size_t i = 0; i < b; ++i) {
            const double* gc = dconcat.row_ptr(i) + m * d;
            double* ga = dadapted[m].row_ptr(i);
            for (std::size_t j = 0; j < d; ++j) ga[j] += gc[j];
        }
    out.grads.adaptors.reserve(parties);
    for (std::size_t m = 0; m < parties; ++m) {
        auto [agrads, dx] = mlp_backward(head.adaptors[m], tapes.adaptors[m], dadapted[m]);
        (void)dx;
        out.grads.adaptors.push_back(std::move(agrads));
    }
    return out;
}

void head_sgd_step(HeadParams& head, const HeadGrads& grads, double lr_classifier,
                   double lr_gate, double lr_adaptor) {
    sgd_step(head.classifier, grads.classifier, lr_classifier, 0.0);
    sgd_step(head.gate_w, grads.gate_w, lr_gate, 0.0);
    for (std::size_t m = 0; m < head.adaptors.size(); ++m)
        sgd_step(head.adaptors[m], grads.adaptors[m], lr_adaptor, 0.0);
}

std::vector<int> argmax_rows(const Matrix& scores) {
    return argmax_rows_restricted(scores, {});
}

std::vector<int> argmax_rows_restricted(const Matrix& scores,
                                        const std::vector<int>& allowed) {
    if (scores.cols() == 0) throw ShapeError("argmax_rows: no columns");
    std::vector<int> cols;
    if (allowed.empty()) {
        cols.resize(scores.cols());
        for (std::size_t c = 0; c < scores.cols(); ++c) cols[c] = static_cast<int>(c);
    } else {
        cols = allowed;
        std::sort(cols.begin(), cols.end());
        for (int c : cols)
            if (c < 0 || static_cast<std::size_t>(c) >= scores.cols())
                throw DomainError("argmax_rows: allowed class " + std::to_string(c) +
                                  " outside the score columns");
    }
    std::vector<int> out(scores.rows());
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        const double* s = scores.row_ptr(i);
        int best = cols[0];
        double best_score = s[static_cast<std::size_t>(cols[0])];
        for (std::size_t k = 1; k < cols.size(); ++k) {
            double v = s[static_cast<std::size_t>(cols[k])];
            if (v > best_score) {
                best_score = v;
                best = cols[k];
            }
        }
        out[i] = best;
    }
    return out;
}

std::vector<int> prototype_nn_predict(const std::vector<Matrix>& adapted,
                                      const std::vector<PrototypeSet>& prototypes) {
    if (adapted.empty() || adapted.size() != prototypes.size())
        throw ShapeError("prototype_nn_predict: one block per prototype set required");
    std::size_t b = adapted[0].rows();
    std::size_t z = prototypes[0].classes();
    for (std::size_t m = 0; m < adapted.size(); ++m) {
        if (adapted[m].rows() != b)
            throw ShapeError("prototype_nn_predict: party blocks disagree on rows");
        if (prototypes[m].classes() != z)
            throw ShapeError("prototype_nn_predict: prototype sets disagree on classes");
        if (adapted[m].cols() != prototypes[m].dim())
            throw ShapeError("prototype_nn_predict: block and prototype dims differ");
    }
    Matrix scores(b, z);
    for (std::size_t m = 0; m < adapted.size(); ++m) {
        std::size_t d = adapted[m].cols();
        for (std::size_t i = 0; i < b; ++i) {
            const double* f = adapted[m].row_ptr(i);
            double fn = detail::norm2(f, d);
            if (fn < kNormEps) continue;  // zero vector carries no preference
            for (std::size_t c = 0; c < z; ++c) {
                const double* mu = prototypes[m].mu.row_ptr(c);
                double mn = detail::norm2(mu, d);
                if (mn < kNormEps) continue;
                scores(i, c) += detail::dot(f, mu, d) / (fn * mn);
            }
        }
    }
    return argmax_rows(scores);
}

}  // namespace evfl
