#pragma once

#include <cstdint>
#include <vector>

#include "evfl/matrix.hpp"
#include "evfl/mlp.hpp"
#include "evfl/prototypes.hpp"

namespace evfl {

// Trainable state owned by the active party: one adaptor per party mapping
// that party's uploaded representation into the shared latent space, a linear
// gate scoring parties per sample, and the fusion classifier.
struct HeadParams {
    std::vector<MlpParams> adaptors;
    Matrix gate_w;  // (parties * latent_dim) x parties, zero rows = uniform mixture
    MlpParams classifier;
};

struct HeadGrads {
    std::vector<GradBundle> adaptors;
    Matrix gate_w;
    GradBundle classifier;
};

// Empty adaptor_hidden initializes each adaptor as an exact identity map, so
// an untrained head is a plain uniform-mixture concatenation.
HeadParams init_head(int parties, int latent_dim, int classes,
                     const std::vector<int>& classifier_hidden,
                     const std::vector<int>& adaptor_hidden, std::uint64_t master_seed);

struct CeResult {
    double value = 0.0;
    Matrix dlogits;  // already divided by the batch size
};
CeResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels);

// Per-sample party mixture: softmax over gate scores of the concatenated
// adapted representations.
Matrix gate_mixture(const Matrix& concat_adapted, const Matrix& gate_w);

// Block m scaled row-wise by mixture column m, then concatenated.
Matrix fuse_blocks(const std::vector<Matrix>& adapted, const Matrix& mixture);

struct HeadEval {
    Matrix logits;
    Matrix mixture;
    std::vector<Matrix> adapted;
};
HeadEval head_forward(const HeadParams& head, const std::vector<Matrix>& blocks);

struct HeadLoss {
    double value = 0.0;
    HeadGrads grads;
    HeadEval eval;
};
HeadLoss head_loss(const HeadParams& head, const std::vector<Matrix>& blocks,
                   const std::vector<int>& labels);

void head_sgd_step(HeadParams& head, const HeadGrads& grads, double lr_classifier,
                   double lr_gate, double lr_adaptor);

std::vector<int> argmax_rows(const Matrix& scores);
// Ties resolve to the lowest class id. Empty allowed list means every column.
std::vector<int> argmax_rows_restricted(const Matrix& scores,
                                        const std::vector<int>& allowed);

// Summed cosine similarity against each party's prototype of a class; covers
// classes the classifier never saw a label for.
std::vector<int> prototype_nn_predict(const std::vector<Matrix>& adapted,
                                      const std::vector<PrototypeSet>& prototypes);

}  // namespace evfl
