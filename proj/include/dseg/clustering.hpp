#pragma once

// Post-processing: turning an embedding map into discrete instances.
//
// Two routes. cluster_by_known_centers assigns pixels to the nearest of a
// given center list (the ground-truth-clustering ablation). mean_shift_cluster
// needs no centers: it seeds on an unlabeled pixel, thresholds a bandwidth-b
// hypersphere around the running mean and re-centers until the mean stops
// moving, then claims the selected pixels and repeats. When the margins of
// the training loss hold with delta_d > 2*delta_v and b = delta_v, every
// hypersphere around any embedding contains exactly its own cluster, so the
// procedure recovers the ground-truth partition for any seeding order.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dseg/image.hpp"
#include "dseg/loss.hpp"
#include "dseg/rng.hpp"

namespace dseg {

struct ClusterConfig {
    enum class SeedPolicy { ScanOrder, SeededRandom };

    double bandwidth = 0.5;
    // Clusters below this size dissolve back to background. Unset means
    // 0.5% of the foreground pixel count, floored at 1.
    std::optional<std::size_t> min_cluster_size;
    int max_shift_iters = 100;
    double shift_tolerance = 1e-4;
    SeedPolicy seed_policy = SeedPolicy::ScanOrder;
    std::uint64_t seed = 0;
};

inline void validate(const ClusterConfig& c) {
    if (!(c.bandwidth > 0.0)) throw std::invalid_argument("ClusterConfig: bandwidth must be > 0");
    if (c.max_shift_iters < 1) throw std::invalid_argument("ClusterConfig: max_shift_iters must be >= 1");
    if (!(c.shift_tolerance > 0.0)) throw std::invalid_argument("ClusterConfig: shift_tolerance must be > 0");
}

// Predicted labels 1..K plus the center and pixel count of each cluster.
struct ClusterAssignment {
    LabelMap labels;
    std::vector<double> centers;  // K x D row-major
    std::vector<int> sizes;
    int dims = 0;

    int count() const { return static_cast<int>(sizes.size()); }
    const double* center(int c) const { return centers.data() + static_cast<std::size_t>(c) * dims; }
};

// All foreground pixels whose embedding lies strictly within b of center.
inline std::vector<std::uint8_t> threshold_around(const EmbeddingMap& emb,
                                                  const LabelMap& fg,
                                                  const double* center, double b,
                                                  Norm norm) {
    require_same_shape(emb, fg, "threshold_around");
    std::vector<std::uint8_t> mask(emb.pixel_count(), 0);
    for (std::size_t p = 0; p < mask.size(); ++p) {
        if (fg.values[p] == 0) continue;
        const double d = distance(emb.values.data() + p * emb.dims, center, emb.dims, norm);
        mask[p] = d < b ? 1 : 0;
    }
    return mask;
}

// Nearest-center assignment: label i+1 for the closest center i when that
// distance is strictly within b, else 0. Equidistant pixels go to the lowest
// center index.
inline ClusterAssignment cluster_by_known_centers(
    const EmbeddingMap& emb, const LabelMap& fg,
    const std::vector<std::vector<double>>& centers, double b, Norm norm) {
    require_same_shape(emb, fg, "cluster_by_known_centers");
    ClusterAssignment out;
    out.dims = emb.dims;
    out.labels = LabelMap(emb.height, emb.width);
    out.sizes.assign(centers.size(), 0);
    for (const auto& c : centers) {
        if (static_cast<int>(c.size()) != emb.dims)
            throw std::invalid_argument("cluster_by_known_centers: center dimensionality mismatch");
        out.centers.insert(out.centers.end(), c.begin(), c.end());
    }
    if (centers.empty()) return out;

    for (std::size_t p = 0; p < out.labels.values.size(); ++p) {
        if (fg.values[p] == 0) continue;
        const double* x = emb.values.data() + p * emb.dims;
        int best = -1;
        double best_d = b;
        for (std::size_t c = 0; c < centers.size(); ++c) {
            const double d = distance(x, centers[c].data(), emb.dims, norm);
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        if (best >= 0) {
            out.labels.values[p] = best + 1;
            out.sizes[best] += 1;
        }
    }
    return out;
}

namespace detail {

inline std::size_t default_min_cluster_size(std::size_t fg_count) {
    const std::size_t half_percent = fg_count / 200;
    return half_percent > 0 ? half_percent : 1;
}

// Drops empty/undersized clusters and renumbers the survivors 1..K keeping
// their first-discovery order.
inline void dissolve_and_renumber(ClusterAssignment& out, std::size_t min_size) {
    const int k_before = out.count();
    std::vector<int> remap(k_before + 1, 0);
    std::vector<double> kept_centers;
    std::vector<int> kept_sizes;
    int next = 0;
    for (int c = 0; c < k_before; ++c) {
        if (static_cast<std::size_t>(out.sizes[c]) < min_size) continue;
        remap[c + 1] = ++next;
        kept_centers.insert(kept_centers.end(), out.center(c), out.center(c) + out.dims);
        kept_sizes.push_back(out.sizes[c]);
    }
    for (int& v : out.labels.values) v = remap[v];
    out.centers = std::move(kept_centers);
    out.sizes = std::move(kept_sizes);
}

}  // namespace detail

inline ClusterAssignment mean_shift_cluster(const EmbeddingMap& emb, const LabelMap& fg,
                                            const ClusterConfig& cfg, Norm norm) {
    require_same_shape(emb, fg, "mean_shift_cluster");
    validate(cfg);
    const int dims = emb.dims;
    const std::size_t n = emb.pixel_count();

    ClusterAssignment out;
    out.dims = dims;
    out.labels = LabelMap(emb.height, emb.width);

    // Pool of seedable pixels: foreground, unlabeled, not yet dissolved.
    std::vector<std::uint8_t> spent(n, 0);
    std::size_t pool = fg.foreground_count();
    const std::size_t min_size = cfg.min_cluster_size
                                     ? *cfg.min_cluster_size
                                     : detail::default_min_cluster_size(pool);
    Xoshiro256 rng(cfg.seed);
    std::size_t scan_cursor = 0;

    std::vector<double> mean(dims), next_mean(dims);
    while (pool > 0) {
        // Pick a seed.
        std::size_t seed_px = n;
        if (cfg.seed_policy == ClusterConfig::SeedPolicy::ScanOrder) {
            while (scan_cursor < n &&
                   (fg.values[scan_cursor] == 0 || spent[scan_cursor]))
                ++scan_cursor;
            seed_px = scan_cursor;
        } else {
            std::size_t target = static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(pool) - 1));
            for (std::size_t p = 0; p < n; ++p) {
                if (fg.values[p] == 0 || spent[p]) continue;
                if (target-- == 0) {
                    seed_px = p;
                    break;
                }
            }
        }

        // Shift the mean until it settles.
        const double* x = emb.values.data() + seed_px * dims;
        std::copy(x, x + dims, mean.begin());
        std::vector<std::uint8_t> sel =
            threshold_around(emb, fg, mean.data(), cfg.bandwidth, norm);
        for (int iter = 0; iter < cfg.max_shift_iters; ++iter) {
            std::fill(next_mean.begin(), next_mean.end(), 0.0);
            std::size_t count = 0;
            for (std::size_t p = 0; p < n; ++p) {
                if (!sel[p]) continue;
                const double* e = emb.values.data() + p * dims;
                for (int k = 0; k < dims; ++k) next_mean[k] += e[k];
                ++count;
            }
            for (int k = 0; k < dims; ++k) next_mean[k] /= static_cast<double>(count);
            if (distance(next_mean.data(), mean.data(), dims, norm) < cfg.shift_tolerance)
                break;
            std::swap(mean, next_mean);
            std::vector<std::uint8_t> next_sel =
                threshold_around(emb, fg, mean.data(), cfg.bandwidth, norm);
            bool any = false;
            for (std::uint8_t m : next_sel)
                if (m) {
                    any = true;
                    break;
                }
            if (!any) break;  // mean escaped all points; keep the last selection
            sel = std::move(next_sel);
        }

        // Claim unlabeled pixels in the final selection. Pixels claimed by an
        // earlier cluster keep their label.
        std::size_t claimed = 0;
        for (std::size_t p = 0; p < n; ++p) {
            if (!sel[p] || out.labels.values[p] != 0 || spent[p]) continue;
            ++claimed;
        }
        if (claimed == 0) {
            // The converged sphere holds only foreign pixels: dissolve the
            // seed as a singleton so the outer loop makes progress.
            spent[seed_px] = 1;
            --pool;
            continue;
        }
        const int label = out.count() + 1;
        for (std::size_t p = 0; p < n; ++p) {
            if (!sel[p] || out.labels.values[p] != 0 || spent[p]) continue;
            out.labels.values[p] = label;
            spent[p] = 1;
        }
        pool -= claimed;
        out.centers.insert(out.centers.end(), mean.begin(), mean.end());
        out.sizes.push_back(static_cast<int>(claimed));
    }

    detail::dissolve_and_renumber(out, min_size);
    return out;
}

// Multi-class inference: clusters each semantic class's pixels independently
// and stacks the label ranges in class order.
inline ClusterAssignment cluster_per_class(const EmbeddingMap& emb,
                                           const LabelMap& semantic,
                                           const ClusterConfig& cfg, Norm norm) {
    require_same_shape(emb, semantic, "cluster_per_class");
    ClusterAssignment out;
    out.dims = emb.dims;
    out.labels = LabelMap(emb.height, emb.width);

    for (int cls : detail::distinct_nonzero(semantic)) {
        LabelMap fg(semantic.height, semantic.width);
        for (std::size_t p = 0; p < fg.values.size(); ++p)
            fg.values[p] = semantic.values[p] == cls ? 1 : 0;
        ClusterAssignment part = mean_shift_cluster(emb, fg, cfg, norm);
        const int offset = out.count();
        for (std::size_t p = 0; p < fg.values.size(); ++p)
            if (part.labels.values[p] != 0)
                out.labels.values[p] = part.labels.values[p] + offset;
        out.centers.insert(out.centers.end(), part.centers.begin(), part.centers.end());
        out.sizes.insert(out.sizes.end(), part.sizes.begin(), part.sizes.end());
    }
    return out;
}

}  // namespace dseg
