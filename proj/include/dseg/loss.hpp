#pragma once

// Discriminative embedding loss for instance segmentation and its analytical
// gradient. Three terms act on the clusters induced by a label map:
//
//   variance:  (1/C) sum_c (1/N_c) sum_{i in c} [ ||mu_c - x_i|| - delta_v ]+^2
//   distance:  (1/(C(C-1))) sum_{a != b} [ 2*delta_d - ||mu_a - mu_b|| ]+^2
//   reg:       (1/C) sum_c ||mu_c||
//
// total = alpha*variance + beta*distance + gamma*reg. The distance sum runs
// over ordered pairs, so each unordered pair is counted twice and divided
// back out by the normalizer. Background pixels (label 0) take no part in
// any sum and receive zero gradient. All reductions are in double precision.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dseg/image.hpp"

namespace dseg {

enum class Norm { L1, L2 };

// How per-semantic-class losses combine in the multi-class case.
enum class ClassReduction { Sum, Mean };

struct LossConfig {
    double delta_v = 0.5;
    double delta_d = 1.5;
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 0.001;
    Norm norm = Norm::L2;
    ClassReduction class_reduction = ClassReduction::Sum;
};

// Throws on invalid fields; returns a warning when the margins void the
// threshold-clustering guarantee (delta_d <= delta_v).
inline std::optional<std::string> validate(const LossConfig& c) {
    if (!(c.delta_v > 0.0)) throw std::invalid_argument("LossConfig: delta_v must be > 0");
    if (!(c.delta_d > 0.0)) throw std::invalid_argument("LossConfig: delta_d must be > 0");
    if (c.alpha < 0.0 || c.beta < 0.0 || c.gamma < 0.0)
        throw std::invalid_argument("LossConfig: weights must be non-negative");
    if (c.delta_d <= c.delta_v)
        return "delta_d <= delta_v voids the threshold-clustering guarantee";
    return std::nullopt;
}

inline double hinge(double x) { return x > 0.0 ? x : 0.0; }

inline double distance(const double* a, const double* b, int dims, Norm norm) {
    double acc = 0.0;
    if (norm == Norm::L2) {
        for (int k = 0; k < dims; ++k) {
            const double d = a[k] - b[k];
            acc += d * d;
        }
        return std::sqrt(acc);
    }
    for (int k = 0; k < dims; ++k) acc += std::abs(a[k] - b[k]);
    return acc;
}

inline double vector_norm(const double* v, int dims, Norm norm) {
    double acc = 0.0;
    if (norm == Norm::L2) {
        for (int k = 0; k < dims; ++k) acc += v[k] * v[k];
        return std::sqrt(acc);
    }
    for (int k = 0; k < dims; ++k) acc += std::abs(v[k]);
    return acc;
}

// Subgradient of v -> ||v||, written into out. Zero at v = 0 for both norms,
// and componentwise sign(0) = 0 for L1.
inline void norm_subgradient(const double* v, int dims, Norm norm, double* out) {
    if (norm == Norm::L2) {
        double n = 0.0;
        for (int k = 0; k < dims; ++k) n += v[k] * v[k];
        n = std::sqrt(n);
        if (n == 0.0) {
            std::fill(out, out + dims, 0.0);
        } else {
            for (int k = 0; k < dims; ++k) out[k] = v[k] / n;
        }
        return;
    }
    for (int k = 0; k < dims; ++k)
        out[k] = v[k] > 0.0 ? 1.0 : (v[k] < 0.0 ? -1.0 : 0.0);
}

// Per-cluster mean embeddings and member counts, one entry per distinct
// nonzero label, ordered by label value.
struct ClusterStats {
    std::vector<int> labels;
    std::vector<double> means;  // C x D row-major
    std::vector<int> counts;
    int dims = 0;

    int count() const { return static_cast<int>(labels.size()); }
    const double* mean(int c) const { return means.data() + static_cast<std::size_t>(c) * dims; }
    int index_of(int label) const {
        auto it = std::lower_bound(labels.begin(), labels.end(), label);
        return static_cast<int>(it - labels.begin());
    }
};

struct LossBreakdown {
    double l_var = 0.0;
    double l_dist = 0.0;
    double l_reg = 0.0;
    double total = 0.0;

    LossBreakdown& operator+=(const LossBreakdown& o) {
        l_var += o.l_var;
        l_dist += o.l_dist;
        l_reg += o.l_reg;
        total += o.total;
        return *this;
    }
};

inline ClusterStats cluster_means(const EmbeddingMap& emb, const LabelMap& labels) {
    require_same_shape(emb, labels, "cluster_means");
    const int dims = emb.dims;

    std::map<int, std::pair<std::vector<double>, int>> acc;  // label -> (sum, count)
    for (std::size_t p = 0; p < labels.values.size(); ++p) {
        const int lab = labels.values[p];
        if (lab == 0) continue;
        auto [it, inserted] = acc.try_emplace(lab, std::vector<double>(dims, 0.0), 0);
        const double* x = emb.values.data() + p * dims;
        for (int k = 0; k < dims; ++k) it->second.first[k] += x[k];
        it->second.second += 1;
    }

    ClusterStats stats;
    stats.dims = dims;
    stats.labels.reserve(acc.size());
    stats.means.reserve(acc.size() * dims);
    stats.counts.reserve(acc.size());
    for (const auto& [lab, sum_count] : acc) {
        stats.labels.push_back(lab);
        stats.counts.push_back(sum_count.second);
        for (int k = 0; k < dims; ++k)
            stats.means.push_back(sum_count.first[k] / sum_count.second);
    }
    return stats;
}

inline double variance_term(const EmbeddingMap& emb, const LabelMap& labels,
                            const ClusterStats& stats, double delta_v, Norm norm) {
    require_same_shape(emb, labels, "variance_term");
    const int C = stats.count();
    if (C == 0) return 0.0;

    std::vector<double> per_cluster(C, 0.0);
    for (std::size_t p = 0; p < labels.values.size(); ++p) {
        const int lab = labels.values[p];
        if (lab == 0) continue;
        const int ci = stats.index_of(lab);
        const double d = distance(stats.mean(ci), emb.values.data() + p * emb.dims,
                                  emb.dims, norm);
        const double h = hinge(d - delta_v);
        per_cluster[ci] += h * h;
    }
    double total = 0.0;
    for (int c = 0; c < C; ++c) total += per_cluster[c] / stats.counts[c];
    return total / C;
}

inline double distance_term(const ClusterStats& stats, double delta_d, Norm norm) {
    const int C = stats.count();
    if (C <= 1) return 0.0;  // no pairs, no repulsion

    double total = 0.0;
    for (int a = 0; a < C; ++a) {
        for (int b = a + 1; b < C; ++b) {
            const double d = distance(stats.mean(a), stats.mean(b), stats.dims, norm);
            const double h = hinge(2.0 * delta_d - d);
            total += 2.0 * h * h;  // (a,b) and (b,a)
        }
    }
    return total / (static_cast<double>(C) * (C - 1));
}

inline double regularization_term(const ClusterStats& stats, Norm norm) {
    const int C = stats.count();
    if (C == 0) return 0.0;
    double total = 0.0;
    for (int c = 0; c < C; ++c) total += vector_norm(stats.mean(c), stats.dims, norm);
    return total / C;
}

namespace detail {

inline LossBreakdown loss_from_stats(const EmbeddingMap& emb, const LabelMap& labels,
                                     const ClusterStats& stats, const LossConfig& cfg) {
    LossBreakdown out;
    out.l_var = variance_term(emb, labels, stats, cfg.delta_v, cfg.norm);
    out.l_dist = distance_term(stats, cfg.delta_d, cfg.norm);
    out.l_reg = regularization_term(stats, cfg.norm);
    out.total = cfg.alpha * out.l_var + cfg.beta * out.l_dist + cfg.gamma * out.l_reg;
    return out;
}

}  // namespace detail

inline LossBreakdown discriminative_loss(const EmbeddingMap& emb, const LabelMap& labels,
                                         const LossConfig& cfg) {
    require_same_shape(emb, labels, "discriminative_loss");
    return detail::loss_from_stats(emb, labels, cluster_means(emb, labels), cfg);
}

// Loss plus d(total)/d(embedding). The mean of each cluster depends on its
// members, so every member picks up (1/N_c) of the gradient that flows into
// mu_c from all three terms, on top of the direct variance path.
inline std::pair<LossBreakdown, GradientMap> loss_backward(const EmbeddingMap& emb,
                                                           const LabelMap& labels,
                                                           const LossConfig& cfg) {
    require_same_shape(emb, labels, "loss_backward");
    const int dims = emb.dims;
    const ClusterStats stats = cluster_means(emb, labels);
    const LossBreakdown breakdown = detail::loss_from_stats(emb, labels, stats, cfg);

    GradientMap grad(emb.height, emb.width, dims);
    const int C = stats.count();
    if (C == 0) return {breakdown, grad};

    // d(total)/d(mu_c), all three terms.
    std::vector<double> mu_grad(static_cast<std::size_t>(C) * dims, 0.0);
    std::vector<double> sub(dims);

    // Direct variance path per pixel; mu path accumulated alongside.
    std::vector<double> diff(dims);
    for (std::size_t p = 0; p < labels.values.size(); ++p) {
        const int lab = labels.values[p];
        if (lab == 0) continue;
        const int ci = stats.index_of(lab);
        const double* mu = stats.mean(ci);
        const double* x = emb.values.data() + p * dims;
        for (int k = 0; k < dims; ++k) diff[k] = mu[k] - x[k];
        const double d = vector_norm(diff.data(), dims, cfg.norm);
        const double h = hinge(d - cfg.delta_v);
        if (h <= 0.0) continue;
        norm_subgradient(diff.data(), dims, cfg.norm, sub.data());  // d||diff||/d(diff)
        const double w = cfg.alpha * 2.0 * h / (static_cast<double>(C) * stats.counts[ci]);
        double* g = grad.values.data() + p * dims;
        double* gm = mu_grad.data() + static_cast<std::size_t>(ci) * dims;
        for (int k = 0; k < dims; ++k) {
            g[k] -= w * sub[k];   // d(diff)/d(x) = -I
            gm[k] += w * sub[k];  // d(diff)/d(mu) = +I
        }
    }

    // Distance term: ordered pairs, each unordered pair contributes twice.
    if (C > 1) {
        const double pair_norm = 1.0 / (static_cast<double>(C) * (C - 1));
        for (int a = 0; a < C; ++a) {
            for (int b = a + 1; b < C; ++b) {
                for (int k = 0; k < dims; ++k)
                    diff[k] = stats.mean(a)[k] - stats.mean(b)[k];
                const double d = vector_norm(diff.data(), dims, cfg.norm);
                const double h = hinge(2.0 * cfg.delta_d - d);
                if (h <= 0.0) continue;
                norm_subgradient(diff.data(), dims, cfg.norm, sub.data());
                const double w = cfg.beta * 4.0 * h * pair_norm;  // 2 ordered x 2 hinge'
                double* ga = mu_grad.data() + static_cast<std::size_t>(a) * dims;
                double* gb = mu_grad.data() + static_cast<std::size_t>(b) * dims;
                for (int k = 0; k < dims; ++k) {
                    ga[k] -= w * sub[k];
                    gb[k] += w * sub[k];
                }
            }
        }
    }

    // Regularization term.
    if (cfg.gamma != 0.0) {
        for (int c = 0; c < C; ++c) {
            norm_subgradient(stats.mean(c), dims, cfg.norm, sub.data());
            double* gm = mu_grad.data() + static_cast<std::size_t>(c) * dims;
            for (int k = 0; k < dims; ++k) gm[k] += cfg.gamma * sub[k] / C;
        }
    }

    // Distribute the mu gradients: d(mu_c)/d(x_i) = (1/N_c) I for members.
    for (std::size_t p = 0; p < labels.values.size(); ++p) {
        const int lab = labels.values[p];
        if (lab == 0) continue;
        const int ci = stats.index_of(lab);
        const double* gm = mu_grad.data() + static_cast<std::size_t>(ci) * dims;
        double* g = grad.values.data() + p * dims;
        for (int k = 0; k < dims; ++k) g[k] += gm[k] / stats.counts[ci];
    }

    return {breakdown, grad};
}

namespace detail {

inline std::vector<int> distinct_nonzero(const LabelMap& m) {
    std::vector<int> out(m.values.begin(), m.values.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    if (!out.empty() && out.front() == 0) out.erase(out.begin());
    return out;
}

inline LabelMap mask_to_class(const LabelMap& semantic, const LabelMap& instances,
                              int cls) {
    LabelMap out(instances.height, instances.width);
    for (std::size_t p = 0; p < out.values.size(); ++p)
        out.values[p] = semantic.values[p] == cls ? instances.values[p] : 0;
    return out;
}

}  // namespace detail

// Runs the loss independently per semantic class: instances of different
// classes exert no forces on each other and their clusters may overlap in
// embedding space.
inline LossBreakdown per_class_loss(const EmbeddingMap& emb, const LabelMap& semantic,
                                    const LabelMap& instances, const LossConfig& cfg) {
    require_same_shape(emb, semantic, "per_class_loss");
    require_same_shape(semantic, instances, "per_class_loss");

    const std::vector<int> classes = detail::distinct_nonzero(semantic);
    LossBreakdown out;
    for (int cls : classes)
        out += discriminative_loss(emb, detail::mask_to_class(semantic, instances, cls), cfg);
    if (cfg.class_reduction == ClassReduction::Mean && !classes.empty()) {
        const double inv = 1.0 / classes.size();
        out.l_var *= inv;
        out.l_dist *= inv;
        out.l_reg *= inv;
        out.total *= inv;
    }
    return out;
}

inline std::pair<LossBreakdown, GradientMap> per_class_loss_backward(
    const EmbeddingMap& emb, const LabelMap& semantic, const LabelMap& instances,
    const LossConfig& cfg) {
    require_same_shape(emb, semantic, "per_class_loss_backward");
    require_same_shape(semantic, instances, "per_class_loss_backward");

    const std::vector<int> classes = detail::distinct_nonzero(semantic);
    LossBreakdown out;
    GradientMap grad(emb.height, emb.width, emb.dims);
    for (int cls : classes) {
        auto [part, part_grad] =
            loss_backward(emb, detail::mask_to_class(semantic, instances, cls), cfg);
        out += part;
        for (std::size_t i = 0; i < grad.values.size(); ++i)
            grad.values[i] += part_grad.values[i];
    }
    if (cfg.class_reduction == ClassReduction::Mean && !classes.empty()) {
        const double inv = 1.0 / classes.size();
        out.l_var *= inv;
        out.l_dist *= inv;
        out.l_reg *= inv;
        out.total *= inv;
        for (double& g : grad.values) g *= inv;
    }
    return {out, grad};
}

}  // namespace dseg
