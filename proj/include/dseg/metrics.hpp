#pragma once

// Instance-segmentation quality measures: Dice overlap, Symmetric Best Dice,
// difference-in-count, and a single-threshold average precision at IoU 0.5.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dseg/image.hpp"

namespace dseg {

using Mask = std::vector<std::uint8_t>;

// One binary mask per instance, together interpreted as a partition of the
// image foreground.
struct InstanceSet {
    int height = 0;
    int width = 0;
    std::vector<Mask> masks;

    int count() const { return static_cast<int>(masks.size()); }
};

inline InstanceSet instance_set_from_labels(const LabelMap& labels) {
    InstanceSet out;
    out.height = labels.height;
    out.width = labels.width;
    std::vector<int> ids(labels.values.begin(), labels.values.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    for (int id : ids) {
        if (id == 0) continue;
        Mask m(labels.values.size(), 0);
        for (std::size_t p = 0; p < m.size(); ++p) m[p] = labels.values[p] == id;
        out.masks.push_back(std::move(m));
    }
    return out;
}

// 2|a n b| / (|a| + |b|); two empty masks agree vacuously (1).
inline double dice(const Mask& a, const Mask& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dice: mask sizes differ");
    std::size_t inter = 0, size_a = 0, size_b = 0;
    for (std::size_t p = 0; p < a.size(); ++p) {
        size_a += a[p] != 0;
        size_b += b[p] != 0;
        inter += a[p] != 0 && b[p] != 0;
    }
    if (size_a + size_b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(size_a + size_b);
}

namespace detail {

// Best Dice of set A against set B: mean over A's objects of the best
// overlap with any object of B.
inline double best_dice(const InstanceSet& a, const InstanceSet& b) {
    if (a.masks.empty()) return 0.0;
    double total = 0.0;
    for (const Mask& ma : a.masks) {
        double best = 0.0;
        for (const Mask& mb : b.masks) best = std::max(best, dice(ma, mb));
        total += best;
    }
    return total / static_cast<double>(a.masks.size());
}

}  // namespace detail

// min(BD(pred|gt), BD(gt|pred)). Two empty sets score 1, exactly one empty
// scores 0.
inline double symmetric_best_dice(const InstanceSet& pred, const InstanceSet& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw std::invalid_argument("symmetric_best_dice: image shapes differ");
    if (pred.masks.empty() && gt.masks.empty()) return 1.0;
    if (pred.masks.empty() || gt.masks.empty()) return 0.0;
    return std::min(detail::best_dice(pred, gt), detail::best_dice(gt, pred));
}

// Difference in count over a set of images. The headline number is the
// absolute value of the mean signed difference; the mean of absolute
// differences is reported alongside since both readings circulate.
struct DicResult {
    double abs_of_mean = 0.0;
    double mean_of_abs = 0.0;
};

inline DicResult dic(const std::vector<int>& pred_counts,
                     const std::vector<int>& gt_counts) {
    if (pred_counts.size() != gt_counts.size())
        throw std::invalid_argument("dic: count lists differ in length");
    if (pred_counts.empty()) throw std::invalid_argument("dic: empty count lists");
    double sum = 0.0, sum_abs = 0.0;
    for (std::size_t i = 0; i < pred_counts.size(); ++i) {
        const double d = static_cast<double>(pred_counts[i]) - gt_counts[i];
        sum += d;
        sum_abs += std::abs(d);
    }
    const double n = static_cast<double>(pred_counts.size());
    return {std::abs(sum / n), sum_abs / n};
}

namespace detail {

inline double iou(const Mask& a, const Mask& b) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t p = 0; p < a.size(); ++p) {
        inter += a[p] != 0 && b[p] != 0;
        uni += a[p] != 0 || b[p] != 0;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace detail

// Single-operating-point average precision. Predictions carry no confidence
// scores, so they are ranked by pixel count descending and matched greedily
// one-to-one against ground truth at IoU >= the threshold. Returns
// TP / (TP + FP + FN); empty-vs-empty scores 1.
inline double ap50(const InstanceSet& pred, const InstanceSet& gt,
                   double iou_threshold = 0.5) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw std::invalid_argument("ap50: image shapes differ");
    if (pred.masks.empty() && gt.masks.empty()) return 1.0;

    std::vector<std::size_t> order(pred.masks.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> pixel_counts(pred.masks.size(), 0);
    for (std::size_t i = 0; i < pred.masks.size(); ++i)
        for (std::uint8_t v : pred.masks[i]) pixel_counts[i] += v != 0;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pixel_counts[a] > pixel_counts[b];
    });

    std::vector<std::uint8_t> gt_taken(gt.masks.size(), 0);
    int tp = 0;
    for (std::size_t i : order) {
        int best = -1;
        double best_iou = 0.0;
        for (std::size_t j = 0; j < gt.masks.size(); ++j) {
            if (gt_taken[j]) continue;
            const double v = detail::iou(pred.masks[i], gt.masks[j]);
            if (v > best_iou) {
                best_iou = v;
                best = static_cast<int>(j);
            }
        }
        if (best >= 0 && best_iou >= iou_threshold) {
            gt_taken[best] = 1;
            ++tp;
        }
    }
    const int fp = static_cast<int>(pred.masks.size()) - tp;
    const int fn = static_cast<int>(gt.masks.size()) - tp;
    return static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
}

// Aggregate report over a set of images.
struct MetricReport {
    struct PerImage {
        std::string name;
        double sbd = 0.0;
        double ap50 = 0.0;
        int pred_count = 0;
        int gt_count = 0;
    };

    double sbd = 0.0;
    double dic = 0.0;       // |mean(pred - gt)|
    double dic_abs = 0.0;   // mean(|pred - gt|)
    double ap50 = 0.0;
    std::vector<PerImage> images;
};

inline MetricReport evaluate_images(
    const std::vector<std::pair<InstanceSet, InstanceSet>>& pred_gt,
    const std::vector<std::string>& names = {}) {
    if (pred_gt.empty()) throw std::invalid_argument("evaluate_images: no images");
    MetricReport report;
    std::vector<int> pred_counts, gt_counts;
    for (std::size_t i = 0; i < pred_gt.size(); ++i) {
        const auto& [pred, gt] = pred_gt[i];
        MetricReport::PerImage img;
        img.name = i < names.size() ? names[i] : "image_" + std::to_string(i);
        img.sbd = symmetric_best_dice(pred, gt);
        img.ap50 = ap50(pred, gt);
        img.pred_count = pred.count();
        img.gt_count = gt.count();
        pred_counts.push_back(img.pred_count);
        gt_counts.push_back(img.gt_count);
        report.sbd += img.sbd;
        report.ap50 += img.ap50;
        report.images.push_back(std::move(img));
    }
    report.sbd /= static_cast<double>(pred_gt.size());
    report.ap50 /= static_cast<double>(pred_gt.size());
    const DicResult d = dic(pred_counts, gt_counts);
    report.dic = d.abs_of_mean;
    report.dic_abs = d.mean_of_abs;
    return report;
}

}  // namespace dseg
