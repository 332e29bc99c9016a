#pragma once

// Core pixel-grid containers shared by every module: per-pixel embedding
// vectors and integer instance labels. Everything is row-major and uses
// double precision storage; reductions elsewhere assume doubles.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dseg {

// H x W x D grid of per-pixel embedding vectors, row-major (y, x, d).
struct EmbeddingMap {
    int height = 0;
    int width = 0;
    int dims = 0;
    std::vector<double> values;

    EmbeddingMap() = default;
    EmbeddingMap(int h, int w, int d)
        : height(h), width(w), dims(d),
          values(static_cast<std::size_t>(h) * w * d, 0.0) {}

    double* at(int y, int x) {
        return values.data() + (static_cast<std::size_t>(y) * width + x) * dims;
    }
    const double* at(int y, int x) const {
        return values.data() + (static_cast<std::size_t>(y) * width + x) * dims;
    }

    std::size_t pixel_count() const {
        return static_cast<std::size_t>(height) * width;
    }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// Gradient of a scalar loss with respect to an EmbeddingMap; same layout.
using GradientMap = EmbeddingMap;

// H x W grid of non-negative instance labels; 0 marks background.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<int> values;

    LabelMap() = default;
    LabelMap(int h, int w)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0) {}

    int& at(int y, int x) {
        return values[static_cast<std::size_t>(y) * width + x];
    }
    int at(int y, int x) const {
        return values[static_cast<std::size_t>(y) * width + x];
    }

    std::size_t pixel_count() const {
        return static_cast<std::size_t>(height) * width;
    }

    std::size_t foreground_count() const {
        std::size_t n = 0;
        for (int v : values) n += (v != 0);
        return n;
    }
};

inline void require_same_shape(const EmbeddingMap& emb, const LabelMap& labels,
                               const char* where) {
    if (emb.height != labels.height || emb.width != labels.width)
        throw std::invalid_argument(std::string(where) + ": embedding " +
                                    std::to_string(emb.height) + "x" +
                                    std::to_string(emb.width) + " vs labels " +
                                    std::to_string(labels.height) + "x" +
                                    std::to_string(labels.width));
}

inline void require_same_shape(const LabelMap& a, const LabelMap& b,
                               const char* where) {
    if (a.height != b.height || a.width != b.width)
        throw std::invalid_argument(std::string(where) + ": label map shapes differ");
}

}  // namespace dseg
