#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "evfl/matrix.hpp"
#include "evfl/rng.hpp"

namespace evfl {

enum class Activation { relu, identity };

struct MlpLayer {
    Matrix weight;             // in x out
    std::vector<double> bias;  // out
    Activation act = Activation::identity;
};

// A feed-forward stack. An empty layer list is the identity map, which lets
// callers plug in "no network here" without special cases.
struct MlpParams {
    std::vector<MlpLayer> layers;

    std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
    std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().weight.cols(); }
};

struct ForwardTape {
    std::vector<Matrix> inputs;   // input to each layer; one entry per layer
    std::vector<Matrix> preacts;  // pre-activation of each layer
};

struct GradBundle {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
};

// Layer dims [d0, d1, ..., dL] with acts[l] applied after layer l.
// Weights drawn uniform in +-1/sqrt(fan_in); biases start at zero.
MlpParams mlp_init(const std::vector<std::size_t>& dims,
                   const std::vector<Activation>& acts, Rng& rng);

// relu hidden layers, identity output.
MlpParams make_mlp(std::size_t in, const std::vector<int>& hidden, std::size_t out,
                   Rng& rng);

// Single affine layer fixed at W = I, b = 0.
MlpParams identity_affine(std::size_t dim);

std::pair<Matrix, ForwardTape> mlp_forward(const MlpParams& p, const Matrix& x);
Matrix mlp_apply(const MlpParams& p, const Matrix& x);

// Exact reverse-mode gradients for the forward pass captured in the tape.
// Returns parameter gradients and the gradient wrt the input batch.
std::pair<GradBundle, Matrix> mlp_backward(const MlpParams& p, const ForwardTape& tape,
                                           const Matrix& out_grad);

// p' = p - lr * (g + weight_decay * p), elementwise.
void sgd_step(MlpParams& p, const GradBundle& g, double lr, double weight_decay);
void sgd_step(Matrix& p, const Matrix& g, double lr, double weight_decay);

GradBundle zero_grads_like(const MlpParams& p);
void grad_accumulate(GradBundle& acc, const GradBundle& g, double s = 1.0);
// g += phi * theta, the gradient of (phi/2) * ||theta||_F^2.
void add_weight_penalty(GradBundle& g, const MlpParams& p, double phi);

double params_frobenius_sq(const MlpParams& p);
std::size_t param_count(const MlpParams& p);

// Flattened parameter view used by finite-difference checks and digests.
std::vector<double> flatten_params(const MlpParams& p);
void unflatten_params(MlpParams& p, const std::vector<double>& flat);
std::vector<double> flatten_grads(const GradBundle& g);

}  // namespace evfl
