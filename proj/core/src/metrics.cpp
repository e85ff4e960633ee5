#include "evfl/metrics.hpp"

#include <cmath>

#include "evfl/errors.hpp"

namespace evfl {

double mid(const std::vector<long long>& counts) {
    std::size_t z = counts.size();
    if (z < 2) throw DomainError("mid: needs at least two classes");
    long long total = 0;
    for (long long c : counts) {
        if (c < 0) throw DomainError("mid: negative count");
        total += c;
    }
    if (total == 0) throw DomainError("mid: empty counts");
    double n = static_cast<double>(total);
    double zf = static_cast<double>(z);
    double acc = 0.0;
    for (long long c : counts) {
        if (c == 0) continue;  // 0 ln 0 := 0
        double nc = static_cast<double>(c);
        acc += nc * std::log(zf * nc / n);
    }
    return acc / (n * std::log(zf));
}

double wcs(const std::vector<long long>& global_counts,
           const std::vector<std::vector<long long>>& local_counts) {
    std::size_t z = global_counts.size();
    if (z == 0) throw DomainError("wcs: empty global counts");
    double g1 = 0.0, g2 = 0.0;
    for (long long c : global_counts) {
        if (c < 0) throw DomainError("wcs: negative count");
        g1 += static_cast<double>(c);
        g2 += static_cast<double>(c) * static_cast<double>(c);
    }
    if (g1 == 0.0) throw DomainError("wcs: zero global mass");
    g2 = std::sqrt(g2);
    double out = 0.0;
    for (const std::vector<long long>& local : local_counts) {
        if (local.size() != z) throw ShapeError("wcs: class counts differ");
        double l1 = 0.0, l2 = 0.0, dot = 0.0;
        for (std::size_t k = 0; k < z; ++k) {
            double v = static_cast<double>(local[k]);
            if (v < 0.0) throw DomainError("wcs: negative count");
            l1 += v;
            l2 += v * v;
            dot += v * static_cast<double>(global_counts[k]);
        }
        if (l1 == 0.0) continue;  // empty pool carries zero weight
        out += (l1 / g1) * dot / (g2 * std::sqrt(l2));
    }
    return out;
}

std::vector<long long> class_counts(const std::vector<int>& labels, int classes) {
    if (classes <= 0) throw DomainError("class_counts: nonpositive class count");
    std::vector<long long> counts(static_cast<std::size_t>(classes), 0);
    for (int y : labels) {
        if (y < 0 || y >= classes) throw DomainError("class_counts: label out of range");
        counts[static_cast<std::size_t>(y)] += 1;
    }
    return counts;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
    if (predicted.size() != truth.size())
        throw ShapeError("accuracy: length mismatch");
    if (truth.empty()) throw DomainError("accuracy: empty inputs");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (predicted[i] == truth[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

std::vector<double> per_class_recall(const std::vector<int>& predicted,
                                     const std::vector<int>& truth, int classes) {
    if (predicted.size() != truth.size())
        throw ShapeError("per_class_recall: length mismatch");
    std::vector<long long> seen(static_cast<std::size_t>(classes), 0);
    std::vector<long long> hit(static_cast<std::size_t>(classes), 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        int y = truth[i];
        if (y < 0 || y >= classes)
            throw DomainError("per_class_recall: label out of range");
        seen[static_cast<std::size_t>(y)] += 1;
        if (predicted[i] == y) hit[static_cast<std::size_t>(y)] += 1;
    }
    std::vector<double> out(static_cast<std::size_t>(classes), -1.0);
    for (int k = 0; k < classes; ++k)
        if (seen[static_cast<std::size_t>(k)] > 0)
            out[static_cast<std::size_t>(k)] =
                static_cast<double>(hit[static_cast<std::size_t>(k)]) /
                static_cast<double>(seen[static_cast<std::size_t>(k)]);
    return out;
}

}  // namespace evfl
