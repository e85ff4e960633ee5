#include "evfl/prototypes.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "evfl/errors.hpp"

namespace evfl {

namespace {

constexpr double kNormEps = 1e-12;

void check_pair(const PrototypeSet& protos, const Matrix& reps) {
    if (protos.mu.empty()) throw DomainError("prototypes: empty set");
    if (reps.rows() == 0) throw DomainError("prototypes: empty batch");
    if (reps.cols() != protos.dim())
        throw ShapeError("prototypes: representation width differs from prototype width");
}

void check_plan(const TransportPlan& plan, PlanOrientation want, std::size_t rows,
                std::size_t cols) {
    if (plan.orientation != want)
        throw ShapeError("transport plan: wrong orientation");
    if (plan.probs.rows() != rows || plan.probs.cols() != cols)
        throw ShapeError("transport plan: shape does not match batch");
}

// Cosine cost and the cached norms needed for its gradient.
struct CosineCost {
    Matrix c;                      // B x Z
    std::vector<double> inv_rep;   // 1/|f_n|
    std::vector<double> inv_proto; // 1/|mu_z|
};

CosineCost cosine_cost(const PrototypeSet& protos, const Matrix& reps) {
    CosineCost out;
    std::size_t b = reps.rows(), z = protos.classes();
    out.c = Matrix(b, z);
    out.inv_rep.resize(b);
    out.inv_proto.resize(z);
    for (std::size_t n = 0; n < b; ++n) {
        double nn = row_norm(reps, n);
        if (nn < kNormEps) throw DomainError("cosine cost: zero-norm representation");
        out.inv_rep[n] = 1.0 / nn;
    }
    for (std::size_t k = 0; k < z; ++k) {
        double nn = row_norm(protos.mu, k);
        if (nn < kNormEps) throw DomainError("cosine cost: zero-norm prototype");
        out.inv_proto[k] = 1.0 / nn;
    }
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t k = 0; k < z; ++k)
            out.c(n, k) = 1.0 - detail::dot(reps.row_ptr(n), protos.mu.row_ptr(k),
                                            reps.cols()) *
                                    out.inv_rep[n] * out.inv_proto[k];
    return out;
}

// -log softmax_z(s_nz) cost plus the softmax itself (needed by the gradient).
struct NegLogCost {
    Matrix c;      // B x Z
    Matrix sigma;  // row softmax of the similarity matrix
};

NegLogCost neg_log_cost(const Matrix& sim) {
    NegLogCost out;
    out.sigma = softmax_rows(sim);
    out.c = Matrix(sim.rows(), sim.cols());
    for (std::size_t n = 0; n < sim.rows(); ++n) {
        const double* s = sim.row_ptr(n);
        double mx = s[0];
        for (std::size_t k = 1; k < sim.cols(); ++k) mx = std::max(mx, s[k]);
        double lse = 0.0;
        for (std::size_t k = 0; k < sim.cols(); ++k) lse += std::exp(s[k] - mx);
        lse = mx + std::log(lse);
        for (std::size_t k = 0; k < sim.cols(); ++k) out.c(n, k) = lse - s[k];
    }
    return out;
}

std::vector<double> batch_weights(const PrototypeSet& protos, const PriorVector& prior,
                                  const Matrix& reps, BatchWeighting weighting) {
    std::size_t b = reps.rows();
    if (weighting == BatchWeighting::uniform)
        return std::vector<double>(b, 1.0 / static_cast<double>(b));
    TransportPlan assign = plan_to_prototypes(protos, prior, reps);
    std::vector<double> w(b, 0.0);
    double total = 0.0;
    for (std::size_t n = 0; n < b; ++n) {
        const double* row = assign.probs.row_ptr(n);
        std::size_t best = 0;
        for (std::size_t k = 1; k < assign.probs.cols(); ++k)
            if (row[k] > row[best]) best = k;
        w[n] = prior.p[best];
        total += w[n];
    }
    if (total <= 0.0)
        throw DomainError("plan_to_samples: every pseudo-class weight is zero");
    return w;
}

}  // namespace

TransportPlan plan_to_prototypes(const PrototypeSet& protos, const PriorVector& prior,
                                 const Matrix& reps) {
    check_pair(protos, reps);
    validate_prior(prior);
    if (prior.classes() != protos.classes())
        throw ShapeError("plan_to_prototypes: prior length differs from class count");
    double mass = 0.0;
    for (double v : prior.p) mass += v;
    if (mass <= 0.0) throw DomainError("plan_to_prototypes: all-zero prior");

    Matrix sim = matmul_nt(reps, protos.mu);  // B x Z
    TransportPlan plan;
    plan.orientation = PlanOrientation::samples_to_protos;
    plan.probs = Matrix(sim.rows(), sim.cols());
    for (std::size_t n = 0; n < sim.rows(); ++n) {
        const double* s = sim.row_ptr(n);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < sim.cols(); ++k)
            if (prior.p[k] > 0.0) mx = std::max(mx, std::log(prior.p[k]) + s[k]);
        double sum = 0.0;
        double* row = plan.probs.row_ptr(n);
        for (std::size_t k = 0; k < sim.cols(); ++k) {
            row[k] = prior.p[k] > 0.0
                         ? std::exp(std::log(prior.p[k]) + s[k] - mx)
                         : 0.0;
            sum += row[k];
        }
        double inv = 1.0 / sum;
        for (std::size_t k = 0; k < sim.cols(); ++k) row[k] *= inv;
    }
    return plan;
}

TransportPlan plan_to_samples(const PrototypeSet& protos, const PriorVector& prior,
                              const Matrix& reps, BatchWeighting weighting) {
    check_pair(protos, reps);
    validate_prior(prior);
    if (prior.classes() != protos.classes())
        throw ShapeError("plan_to_samples: prior length differs from class count");

    std::vector<double> w = batch_weights(protos, prior, reps, weighting);
    Matrix sim = matmul_nt(reps, protos.mu);  // B x Z
    TransportPlan plan;
    plan.orientation = PlanOrientation::protos_to_samples;
    plan.probs = Matrix(protos.classes(), reps.rows());
    for (std::size_t k = 0; k < protos.classes(); ++k) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t n = 0; n < reps.rows(); ++n)
            if (w[n] > 0.0) mx = std::max(mx, std::log(w[n]) + sim(n, k));
        if (!std::isfinite(mx))
            throw DomainError("plan_to_samples: no usable batch weight");
        double sum = 0.0;
        double* row = plan.probs.row_ptr(k);
        for (std::size_t n = 0; n < reps.rows(); ++n) {
            row[n] = w[n] > 0.0 ? std::exp(std::log(w[n]) + sim(n, k) - mx) : 0.0;
            sum += row[n];
        }
        double inv = 1.0 / sum;
        for (std::size_t n = 0; n < reps.rows(); ++n) row[n] *= inv;
    }
    return plan;
}

LossGrads loss_f_to_mu(const TransportPlan& plan, const PrototypeSet& protos,
                       const Matrix& reps, CostMode mode) {
    check_pair(protos, reps);
    check_plan(plan, PlanOrientation::samples_to_protos, reps.rows(), protos.classes());
    std::size_t b = reps.rows(), z = protos.classes(), d = reps.cols();
    double invb = 1.0 / static_cast<double>(b);

    LossGrads out;
    out.d_reps = Matrix(b, d);
    out.d_protos = Matrix(z, d);
    Matrix g_s(b, z);  // gradient wrt the similarity matrix

    if (mode == CostMode::cosine) {
        CosineCost cost = cosine_cost(protos, reps);
        for (std::size_t n = 0; n < b; ++n) {
            const double* pi = plan.probs.row_ptr(n);
            const double* c = cost.c.row_ptr(n);
            double inner = detail::dot(pi, c, z);
            out.value += invb * inner;
            double* gs = g_s.row_ptr(n);
            const double* f = reps.row_ptr(n);
            double* df = out.d_reps.row_ptr(n);
            for (std::size_t k = 0; k < z; ++k) {
                // Plan path through the row softmax over classes.
                gs[k] = invb * pi[k] * (c[k] - inner);
                // Cost path of 1 - cos.
                double wgt = invb * pi[k];
                if (wgt == 0.0) continue;
                const double* mu = protos.mu.row_ptr(k);
                double* dmu = out.d_protos.row_ptr(k);
                double ir = cost.inv_rep[n], iq = cost.inv_proto[k];
                double cosv = 1.0 - c[k];
                for (std::size_t j = 0; j < d; ++j) {
                    df[j] += wgt * (-mu[j] * ir * iq + cosv * ir * ir * f[j]);
                    dmu[j] += wgt * (-f[j] * ir * iq + cosv * iq * iq * mu[j]);
                }
            }
        }
    } else {
        Matrix sim = matmul_nt(reps, protos.mu);
        NegLogCost cost = neg_log_cost(sim);
        for (std::size_t n = 0; n < b; ++n) {
            const double* pi = plan.probs.row_ptr(n);
            const double* c = cost.c.row_ptr(n);
            const double* sg = cost.sigma.row_ptr(n);
            double inner = detail::dot(pi, c, z);
            out.value += invb * inner;
            double* gs = g_s.row_ptr(n);
            for (std::size_t k = 0; k < z; ++k)
                gs[k] = invb * (pi[k] * (c[k] - inner)  // plan path
                                + sg[k] - pi[k]);       // cost path
        }
    }

    axpy(out.d_reps, 1.0, matmul(g_s, protos.mu));
    axpy(out.d_protos, 1.0, matmul_tn(g_s, reps));
    return out;
}

LossGrads loss_mu_to_f(const TransportPlan& plan, const PrototypeSet& protos,
                       const Matrix& reps, const PriorVector& prior, CostMode mode) {
    check_pair(protos, reps);
    check_plan(plan, PlanOrientation::protos_to_samples, protos.classes(), reps.rows());
    validate_prior(prior);
    if (prior.classes() != protos.classes())
        throw ShapeError("loss_mu_to_f: prior length differs from class count");
    std::size_t b = reps.rows(), z = protos.classes(), d = reps.cols();

    LossGrads out;
    out.d_reps = Matrix(b, d);
    out.d_protos = Matrix(z, d);
    Matrix g_s(b, z);

    if (mode == CostMode::cosine) {
        CosineCost cost = cosine_cost(protos, reps);
        for (std::size_t k = 0; k < z; ++k) {
            const double* pi = plan.probs.row_ptr(k);
            double pz = prior.p[k];
            double inner = 0.0;
            for (std::size_t n = 0; n < b; ++n) inner += pi[n] * cost.c(n, k);
            out.value += pz * inner;
            if (pz == 0.0) continue;
            const double* mu = protos.mu.row_ptr(k);
            double* dmu = out.d_protos.row_ptr(k);
            for (std::size_t n = 0; n < b; ++n) {
                double cnk = cost.c(n, k);
                // Plan path through the row softmax over the batch.
                g_s(n, k) += pz * pi[n] * (cnk - inner);
                double wgt = pz * pi[n];
                if (wgt == 0.0) continue;
                const double* f = reps.row_ptr(n);
                double* df = out.d_reps.row_ptr(n);
                double ir = cost.inv_rep[n], iq = cost.inv_proto[k];
                double cosv = 1.0 - cnk;
                for (std::size_t j = 0; j < d; ++j) {
                    df[j] += wgt * (-mu[j] * ir * iq + cosv * ir * ir * f[j]);
                    dmu[j] += wgt * (-f[j] * ir * iq + cosv * iq * iq * mu[j]);
                }
            }
        }
    } else {
        Matrix sim = matmul_nt(reps, protos.mu);
        NegLogCost cost = neg_log_cost(sim);
        // t_n = sum_z p_z pi_zn accumulates the cost-path softmax weight.
        std::vector<double> t(b, 0.0);
        for (std::size_t k = 0; k < z; ++k) {
            const double* pi = plan.probs.row_ptr(k);
            double pz = prior.p[k];
            double inner = 0.0;
            for (std::size_t n = 0; n < b; ++n) inner += pi[n] * cost.c(n, k);
            out.value += pz * inner;
            for (std::size_t n = 0; n < b; ++n) {
                g_s(n, k) += pz * pi[n] * (cost.c(n, k) - inner);  // plan path
                g_s(n, k) -= pz * pi[n];                           // cost path, -delta term
                t[n] += pz * pi[n];
            }
        }
        for (std::size_t n = 0; n < b; ++n) {
            const double* sg = cost.sigma.row_ptr(n);
            double* gs = g_s.row_ptr(n);
            for (std::size_t k = 0; k < z; ++k) gs[k] += t[n] * sg[k];
        }
    }

    axpy(out.d_reps, 1.0, matmul(g_s, protos.mu));
    axpy(out.d_protos, 1.0, matmul_tn(g_s, reps));
    return out;
}

LocalLossResult local_loss(const MlpParams& extractor, const Matrix& batch,
                           const PrototypeSet& protos, const PriorVector& prior,
                           const LocalLossOptions& opts) {
    if (batch.rows() == 0) throw DomainError("local_loss: empty batch");
    // Plans and costs take the raw representations: their inner products carry
    // the magnitude, and that is what keeps the class assignments decisive.
    // Row normalization belongs to the upload path, not here.
    auto [reps, tape] = mlp_forward(extractor, batch);

    // Drop dead rows, and below-confidence rows when the gate is on.
    std::vector<int> kept;
    bool filtered = false;
    {
        TransportPlan assign{};
        if (opts.theta_conf > 0.0) assign = plan_to_prototypes(protos, prior, reps);
        for (std::size_t n = 0; n < reps.rows(); ++n) {
            if (row_norm(reps, n) < kNormEps) {
                filtered = true;
                continue;
            }
            if (opts.theta_conf > 0.0) {
                const double* row = assign.probs.row_ptr(n);
                double mx = row[0];
                for (std::size_t k = 1; k < assign.probs.cols(); ++k)
                    mx = std::max(mx, row[k]);
                if (mx < opts.theta_conf) {
                    filtered = true;
                    continue;
                }
            }
            kept.push_back(static_cast<int>(n));
        }
        if (kept.empty()) {
            // Everything filtered: no transport signal this batch, only decay.
            LocalLossResult out;
            GradBundle grads = zero_grads_like(extractor);
            add_weight_penalty(grads, extractor, opts.phi);
            out.value = 0.5 * opts.phi * params_frobenius_sq(extractor);
            out.grads = std::move(grads);
            return out;
        }
        if (!filtered) kept.clear();  // empty means "all rows", the common path
    }
    Matrix active = kept.empty() ? reps : take_rows(reps, kept);

    TransportPlan forward_plan = plan_to_prototypes(protos, prior, active);
    TransportPlan reverse_plan = plan_to_samples(protos, prior, active, opts.weighting);
    LossGrads lf = loss_f_to_mu(forward_plan, protos, active, opts.cost);
    LossGrads lr = loss_mu_to_f(reverse_plan, protos, active, prior, opts.cost);

    Matrix d_raw(reps.rows(), reps.cols());
    if (kept.empty()) {
        d_raw = lf.d_reps;
        axpy(d_raw, 1.0, lr.d_reps);
    } else {
        for (std::size_t i = 0; i < kept.size(); ++i) {
            double* dst = d_raw.row_ptr(static_cast<std::size_t>(kept[i]));
            const double* a = lf.d_reps.row_ptr(i);
            const double* c = lr.d_reps.row_ptr(i);
            for (std::size_t j = 0; j < d_raw.cols(); ++j) dst[j] = a[j] + c[j];
        }
    }

    auto [grads, d_in] = mlp_backward(extractor, tape, d_raw);
    (void)d_in;
    add_weight_penalty(grads, extractor, opts.phi);

    LocalLossResult out;
    out.f_to_mu = lf.value;
    out.mu_to_f = lr.value;
    out.value = lf.value + lr.value + 0.5 * opts.phi * params_frobenius_sq(extractor);
    out.grads = std::move(grads);
    return out;
}

PrototypeSet init_prototypes(const Matrix& reps, const std::vector<int>& labels,
                             std::size_t classes, Rng& rng) {
    if (classes == 0) throw DomainError("init_prototypes: zero classes");
    if (reps.rows() != labels.size())
        throw ShapeError("init_prototypes: label count differs from batch");
    Matrix mu(classes, reps.cols());
    std::vector<long long> counts(classes, 0);
    for (std::size_t n = 0; n < reps.rows(); ++n) {
        int y = labels[n];
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw DomainError("init_prototypes: label out of range");
        counts[static_cast<std::size_t>(y)] += 1;
        const double* f = reps.row_ptr(n);
        double* m = mu.row_ptr(static_cast<std::size_t>(y));
        for (std::size_t j = 0; j < reps.cols(); ++j) m[j] += f[j];
    }
    for (std::size_t k = 0; k < classes; ++k) {
        double* m = mu.row_ptr(k);
        if (counts[k] > 0) {
            for (std::size_t j = 0; j < mu.cols(); ++j)
                m[j] /= static_cast<double>(counts[k]);
        } else {
            // Unrepresented class: seeded random direction on the unit sphere.
            double norm = 0.0;
            do {
                for (std::size_t j = 0; j < mu.cols(); ++j) m[j] = rng.gaussian(0.0, 1.0);
                norm = detail::norm2(m, mu.cols());
            } while (norm < kNormEps);
        }
    }
    PrototypeSet out{normalize_rows(mu)};
    return out;
}

PrototypeSet update_prototypes(const PrototypeSet& protos, const Matrix& reps,
                               const std::vector<int>& labels, double rho,
                               bool renormalize) {
    if (reps.rows() != labels.size())
        throw ShapeError("update_prototypes: label count differs from batch");
    if (reps.rows() > 0 && reps.cols() != protos.dim())
        throw ShapeError("update_prototypes: representation width differs");
    PrototypeSet out = protos;
    if (rho == 0.0) return out;  // bit-for-bit no-op by contract

    std::size_t z = protos.classes();
    Matrix sums(z, protos.dim());
    std::vector<long long> counts(z, 0);
    for (std::size_t n = 0; n < reps.rows(); ++n) {
        int y = labels[n];
        if (y < 0 || static_cast<std::size_t>(y) >= z)
            throw DomainError("update_prototypes: label out of range");
        counts[static_cast<std::size_t>(y)] += 1;
        const double* f = reps.row_ptr(n);
        double* s = sums.row_ptr(static_cast<std::size_t>(y));
        for (std::size_t j = 0; j < reps.cols(); ++j) s[j] += f[j];
    }
    for (std::size_t k = 0; k < z; ++k) {
        if (counts[k] == 0) continue;
        double* m = out.mu.row_ptr(k);
        const double* s = sums.row_ptr(k);
        double step = rho / static_cast<double>(counts[k]);
        for (std::size_t j = 0; j < out.mu.cols(); ++j) m[j] += step * s[j];
        if (renormalize) {
            double norm = detail::norm2(m, out.mu.cols());
            if (norm < kNormEps)
                throw DomainError("update_prototypes: drift collapsed a prototype");
            for (std::size_t j = 0; j < out.mu.cols(); ++j) m[j] /= norm;
        }
    }
    return out;
}

}  // namespace evfl
