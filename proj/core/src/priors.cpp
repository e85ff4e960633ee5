#include "evfl/priors.hpp"

#include <cmath>
#include <string>

#include "evfl/errors.hpp"
#include "evfl/prototypes.hpp"

namespace evfl {

namespace {
constexpr double kSimplexTol = 1e-9;

PriorVector renormalized(std::vector<double> p) {
    double sum = 0.0;
    for (double v : p) sum += v;
    if (sum <= 0.0) throw DomainError("prior: nonpositive mass");
    for (double& v : p) v /= sum;
    return PriorVector{std::move(p)};
}
}  // namespace

void validate_prior(const PriorVector& prior) {
    if (prior.p.empty()) throw DomainError("prior: empty");
    double sum = 0.0;
    for (double v : prior.p) {
        if (v < 0.0) throw DomainError("prior: negative entry");
        sum += v;
    }
    if (std::abs(sum - 1.0) > kSimplexTol)
        throw DomainError("prior: mass " + std::to_string(sum) + " is not 1");
}

PriorVector init_prior(std::size_t classes) {
    if (classes == 0) throw DomainError("init_prior: zero classes");
    return PriorVector{std::vector<double>(classes, 1.0 / static_cast<double>(classes))};
}

PriorVector estimate_local_prior(const Matrix& batch_reps, const PrototypeSet& protos,
                                 const PriorVector& prev_prior) {
    TransportPlan plan = plan_to_prototypes(protos, prev_prior, batch_reps);
    std::vector<double> sums = col_sums(plan.probs);
    double inv = 1.0 / static_cast<double>(plan.probs.rows());
    for (double& v : sums) v *= inv;
    return renormalized(std::move(sums));
}

PriorVector average_global_prior(const std::vector<PriorVector>& locals) {
    if (locals.empty()) throw DomainError("average_global_prior: no priors");
    std::size_t z = locals.front().classes();
    std::vector<double> acc(z, 0.0);
    for (const PriorVector& prior : locals) {
        if (prior.classes() != z)
            throw ShapeError("average_global_prior: class counts differ");
        validate_prior(prior);
        for (std::size_t i = 0; i < z; ++i) acc[i] += prior.p[i];
    }
    for (double& v : acc) v /= static_cast<double>(locals.size());
    return renormalized(std::move(acc));
}

GammaParam compute_gamma(const std::vector<long long>& counts) {
    if (counts.empty()) throw DomainError("compute_gamma: no counts");
    long long total = 0;
    long long mn = counts.front();
    for (long long c : counts) {
        if (c < 0) throw DomainError("compute_gamma: negative count");
        total += c;
        mn = std::min(mn, c);
    }
    GammaParam g;
    g.counts = counts;
    g.value = total == 0 ? 0.0
                         : static_cast<double>(mn) / static_cast<double>(total);
    return g;
}

PriorVector mix_prior(const PriorVector& global_prior, const PriorVector& local_prior,
                      double gamma) {
    if (gamma < 0.0 || gamma > 1.0)
        throw DomainError("mix_prior: gamma outside [0, 1]");
    if (global_prior.classes() != local_prior.classes())
        throw ShapeError("mix_prior: class counts differ");
    validate_prior(global_prior);
    validate_prior(local_prior);
    std::vector<double> out(global_prior.classes());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = gamma * global_prior.p[i] + (1.0 - gamma) * local_prior.p[i];
    return renormalized(std::move(out));
}

}  // namespace evfl
