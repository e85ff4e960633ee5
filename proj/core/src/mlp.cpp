#include "evfl/mlp.hpp"

#include <cmath>

#include "evfl/errors.hpp"

namespace evfl {

MlpParams mlp_init(const std::vector<std::size_t>& dims,
                   const std::vector<Activation>& acts, Rng& rng) {
    if (dims.size() < 2) throw ShapeError("mlp_init: need at least two dims");
    if (acts.size() != dims.size() - 1)
        throw ShapeError("mlp_init: one activation per layer required");
    MlpParams p;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        MlpLayer layer;
        layer.weight = Matrix(dims[l], dims[l + 1]);
        double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
        layer.bias.assign(dims[l + 1], 0.0);
        layer.act = acts[l];
        p.layers.push_back(std::move(layer));
    }
    return p;
}

MlpParams make_mlp(std::size_t in, const std::vector<int>& hidden, std::size_t out,
                   Rng& rng) {
    std::vector<std::size_t> dims{in};
    std::vector<Activation> acts;
    for (int h : hidden) {
        if (h <= 0) throw ShapeError("make_mlp: hidden dim must be positive");
        dims.push_back(static_cast<std::size_t>(h));
        acts.push_back(Activation::relu);
    }
    dims.push_back(out);
    acts.push_back(Activation::identity);
    return mlp_init(dims, acts, rng);
}

MlpParams identity_affine(std::size_t dim) {
    MlpParams p;
    MlpLayer layer;
    layer.weight = Matrix::identity(dim);
    layer.bias.assign(dim, 0.0);
    layer.act = Activation::identity;
    p.layers.push_back(std::move(layer));
    return p;
}

namespace {

Matrix apply_activation(const Matrix& pre, Activation act) {
    if (act == Activation::identity) return pre;
    Matrix out = pre;
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

Matrix affine(const MlpLayer& layer, const Matrix& x) {
    Matrix pre = matmul(x, layer.weight);
    for (std::size_t i = 0; i < pre.rows(); ++i) {
        double* r = pre.row_ptr(i);
        for (std::size_t j = 0; j < pre.cols(); ++j) r[j] += layer.bias[j];
    }
    return pre;
}

}  // namespace

std::pair<Matrix, ForwardTape> mlp_forward(const MlpParams& p, const Matrix& x) {
    ForwardTape tape;
    Matrix cur = x;
    for (const MlpLayer& layer : p.layers) {
        if (cur.cols() != layer.weight.rows())
            throw ShapeError("mlp_forward: input width does not match layer");
        tape.inputs.push_back(cur);
        Matrix pre = affine(layer, cur);
        tape.preacts.push_back(pre);
        cur = apply_activation(pre, layer.act);
    }
    return {std::move(cur), std::move(tape)};
}

Matrix mlp_apply(const MlpParams& p, const Matrix& x) {
    Matrix cur = x;
    for (const MlpLayer& layer : p.layers) {
        if (cur.cols() != layer.weight.rows())
            throw ShapeError("mlp_apply: input width does not match layer");
        cur = apply_activation(affine(layer, cur), layer.act);
    }
    return cur;
}

std::pair<GradBundle, Matrix> mlp_backward(const MlpParams& p, const ForwardTape& tape,
                                           const Matrix& out_grad) {
    if (tape.inputs.size() != p.layers.size())
        throw ShapeError("mlp_backward: tape does not match params");
    GradBundle g = zero_grads_like(p);
    Matrix cur = out_grad;
    for (std::size_t li = p.layers.size(); li-- > 0;) {
        const MlpLayer& layer = p.layers[li];
        const Matrix& pre = tape.preacts[li];
        Matrix dpre = cur;
        if (layer.act == Activation::relu) {
            // relu pullback; the kink at exactly zero takes the zero branch.
            for (std::size_t i = 0; i < dpre.data().size(); ++i)
                if (pre.data()[i] <= 0.0) dpre.data()[i] = 0.0;
        }
        g.weights[li] = matmul_tn(tape.inputs[li], dpre);
        g.biases[li] = col_sums(dpre);
        cur = matmul_nt(dpre, layer.weight);
    }
    return {std::move(g), std::move(cur)};
}

void sgd_step(MlpParams& p, const GradBundle& g, double lr, double weight_decay) {
    if (g.weights.size() != p.layers.size())
        throw ShapeError("sgd_step: gradient does not match params");
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        sgd_step(p.layers[l].weight, g.weights[l], lr, weight_decay);
        std::vector<double>& b = p.layers[l].bias;
        const std::vector<double>& gb = g.biases[l];
        if (gb.size() != b.size()) throw ShapeError("sgd_step: bias gradient size");
        for (std::size_t i = 0; i < b.size(); ++i)
            b[i] -= lr * (gb[i] + weight_decay * b[i]);
    }
}

void sgd_step(Matrix& p, const Matrix& g, double lr, double weight_decay) {
    if (p.rows() != g.rows() || p.cols() != g.cols())
        throw ShapeError("sgd_step: shapes differ");
    for (std::size_t i = 0; i < p.data().size(); ++i)
        p.data()[i] -= lr * (g.data()[i] + weight_decay * p.data()[i]);
}

GradBundle zero_grads_like(const MlpParams& p) {
    GradBundle g;
    for (const MlpLayer& layer : p.layers) {
        g.weights.emplace_back(layer.weight.rows(), layer.weight.cols());
        g.biases.emplace_back(layer.bias.size(), 0.0);
    }
    return g;
}

void grad_accumulate(GradBundle& acc, const GradBundle& g, double s) {
    if (acc.weights.size() != g.weights.size())
        throw ShapeError("grad_accumulate: layer counts differ");
    for (std::size_t l = 0; l < acc.weights.size(); ++l) {
        axpy(acc.weights[l], s, g.weights[l]);
        for (std::size_t i = 0; i < acc.biases[l].size(); ++i)
            acc.biases[l][i] += s * g.biases[l][i];
    }
}

void add_weight_penalty(GradBundle& g, const MlpParams& p, double phi) {
    if (g.weights.size() != p.layers.size())
        throw ShapeError("add_weight_penalty: gradient does not match params");
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        axpy(g.weights[l], phi, p.layers[l].weight);
        for (std::size_t i = 0; i < g.biases[l].size(); ++i)
            g.biases[l][i] += phi * p.layers[l].bias[i];
    }
}

double params_frobenius_sq(const MlpParams& p) {
    double s = 0.0;
    for (const MlpLayer& layer : p.layers) {
        s += frobenius_sq(layer.weight);
        for (double b : layer.bias) s += b * b;
    }
    return s;
}

std::size_t param_count(const MlpParams& p) {
    std::size_t n = 0;
    for (const MlpLayer& layer : p.layers)
        n += layer.weight.data().size() + layer.bias.size();
    return n;
}

std::vector<double> flatten_params(const MlpParams& p) {
    std::vector<double> flat;
    flat.reserve(param_count(p));
    for (const MlpLayer& layer : p.layers) {
        flat.insert(flat.end(), layer.weight.data().begin(), layer.weight.data().end());
        flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
    }
    return flat;
}

void unflatten_params(MlpParams& p, const std::vector<double>& flat) {
    if (flat.size() != param_count(p))
        throw ShapeError("unflatten_params: size mismatch");
    std::size_t k = 0;
    for (MlpLayer& layer : p.layers) {
        for (double& w : layer.weight.data()) w = flat[k++];
        for (double& b : layer.bias) b = flat[k++];
    }
}

std::vector<double> flatten_grads(const GradBundle& g) {
    std::vector<double> flat;
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
        flat.insert(flat.end(), g.weights[l].data().begin(), g.weights[l].data().end());
        flat.insert(flat.end(), g.biases[l].begin(), g.biases[l].end());
    }
    return flat;
}

}  // namespace evfl
