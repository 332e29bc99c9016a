#pragma once

// Scattered-sticks scene generator: rotated rectangles drawn in order onto a
// dark background, later sticks occluding earlier ones. The label map records
// the topmost stick at every pixel, so crossings produce instances that are
// split into disconnected parts, which is exactly the occlusion structure the
// embedding loss is meant to cope with. Rendering is hard-edged (no
// anti-aliasing) to keep the ground truth unambiguous.
//
// All randomness flows through the xoshiro256** stream seeded from
// SticksConfig::seed, making scenes a pure function of the config.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "dseg/image.hpp"
#include "dseg/rng.hpp"

namespace dseg {

struct SticksConfig {
    int image_size = 64;
    int min_sticks = 2;
    int max_sticks = 6;
    int stick_length = 24;
    int stick_width = 4;
    std::uint64_t seed = 0;
};

inline void validate(const SticksConfig& c) {
    if (c.image_size < 1) throw std::invalid_argument("SticksConfig: image_size must be >= 1");
    if (c.min_sticks < 0 || c.max_sticks < c.min_sticks)
        throw std::invalid_argument("SticksConfig: need 0 <= min_sticks <= max_sticks");
    if (c.stick_length < 1 || c.stick_width < 1)
        throw std::invalid_argument("SticksConfig: stick dimensions must be >= 1");
    if (c.stick_length > c.image_size || c.stick_width > c.image_size)
        throw std::invalid_argument("SticksConfig: stick must fit in the image");
}

struct StickGeometry {
    double cx = 0.0, cy = 0.0;  // center, pixel units
    double angle = 0.0;         // radians
    double r = 0.0, g = 0.0, b = 0.0;
};

struct StickScene {
    int height = 0;
    int width = 0;
    std::vector<double> image;  // H x W x 3, values in [0,1]
    LabelMap instances;         // topmost stick per pixel, 0 = background
    std::uint64_t seed = 0;

    // Foreground = any labeled pixel.
    LabelMap fg_mask() const {
        LabelMap fg(instances.height, instances.width);
        for (std::size_t p = 0; p < fg.values.size(); ++p)
            fg.values[p] = instances.values[p] != 0 ? 1 : 0;
        return fg;
    }
};

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double* rgb) {
    const double hh = (h - std::floor(h)) * 6.0;
    const int sector = static_cast<int>(hh);
    const double f = hh - sector;
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (sector % 6) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
    }
}

constexpr double kBackgroundGray = 0.05;
constexpr double kGoldenRatioConjugate = 0.6180339887498949;

inline bool inside_stick(const StickGeometry& s, double px, double py,
                         double half_len, double half_wid) {
    const double dx = px - s.cx;
    const double dy = py - s.cy;
    const double c = std::cos(s.angle);
    const double sn = std::sin(s.angle);
    const double u = dx * c + dy * sn;
    const double v = -dx * sn + dy * c;
    return std::abs(u) <= half_len && std::abs(v) <= half_wid;
}

}  // namespace detail

// Stick placement and palette for a config; generate_scene rasterizes these
// in order. Exposed so the occlusion structure can be re-derived per stick.
inline std::vector<StickGeometry> sample_stick_geometries(const SticksConfig& cfg) {
    validate(cfg);
    Xoshiro256 rng(cfg.seed);
    const int n = static_cast<int>(rng.uniform_int(cfg.min_sticks, cfg.max_sticks));
    const double hue0 = rng.next_double();
    std::vector<StickGeometry> sticks(n);
    for (int i = 0; i < n; ++i) {
        StickGeometry& s = sticks[i];
        s.cx = rng.uniform(0.0, static_cast<double>(cfg.image_size));
        s.cy = rng.uniform(0.0, static_cast<double>(cfg.image_size));
        s.angle = rng.uniform(0.0, M_PI);
        double rgb[3];
        const double hue = hue0 + (i + 1) * detail::kGoldenRatioConjugate;
        detail::hsv_to_rgb(hue, 0.75, 0.95, rgb);
        s.r = rgb[0];
        s.g = rgb[1];
        s.b = rgb[2];
    }
    return sticks;
}

inline StickScene generate_scene(const SticksConfig& cfg) {
    const auto sticks = sample_stick_geometries(cfg);
    const int size = cfg.image_size;

    StickScene scene;
    scene.height = size;
    scene.width = size;
    scene.seed = cfg.seed;
    scene.image.assign(static_cast<std::size_t>(size) * size * 3,
                       detail::kBackgroundGray);
    scene.instances = LabelMap(size, size);

    const double half_len = cfg.stick_length / 2.0;
    const double half_wid = cfg.stick_width / 2.0;
    for (std::size_t i = 0; i < sticks.size(); ++i) {
        const StickGeometry& s = sticks[i];
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                if (!detail::inside_stick(s, x + 0.5, y + 0.5, half_len, half_wid))
                    continue;
                scene.instances.at(y, x) = static_cast<int>(i) + 1;
                double* px = scene.image.data() +
                             (static_cast<std::size_t>(y) * size + x) * 3;
                px[0] = s.r;
                px[1] = s.g;
                px[2] = s.b;
            }
        }
    }

    // Drop sticks with no visible pixels and renumber 1..K in draw order.
    std::vector<int> visible(sticks.size() + 1, 0);
    for (int v : scene.instances.values)
        if (v != 0) visible[v] = 1;
    int next = 0;
    for (std::size_t i = 1; i < visible.size(); ++i)
        if (visible[i]) visible[i] = ++next;
    for (int& v : scene.instances.values) v = visible[v];

    return scene;
}

enum class AugmentOp { FlipLR, Rot90, Rot180, Rot270 };

// Image, labels and the derived mask transform together. Rotations require a
// square scene.
inline StickScene augment(const StickScene& scene, AugmentOp op) {
    if (op != AugmentOp::FlipLR && scene.height != scene.width)
        throw std::invalid_argument("augment: rotations require a square scene");

    StickScene out;
    out.height = scene.height;
    out.width = scene.width;
    out.seed = scene.seed;
    out.image.resize(scene.image.size());
    out.instances = LabelMap(scene.height, scene.width);

    const int h = scene.height;
    const int w = scene.width;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int sy = y, sx = x;
            switch (op) {
                case AugmentOp::FlipLR: sy = y; sx = w - 1 - x; break;
                case AugmentOp::Rot90: sy = x; sx = w - 1 - y; break;   // 90 deg ccw source
                case AugmentOp::Rot180: sy = h - 1 - y; sx = w - 1 - x; break;
                case AugmentOp::Rot270: sy = h - 1 - x; sx = y; break;
            }
            out.instances.at(y, x) = scene.instances.at(sy, sx);
            const double* src =
                scene.image.data() + (static_cast<std::size_t>(sy) * w + sx) * 3;
            double* dst = out.image.data() + (static_cast<std::size_t>(y) * w + x) * 3;
            dst[0] = src[0];
            dst[1] = src[1];
            dst[2] = src[2];
        }
    }
    return out;
}

// Two-channel positional input: channel 0 ramps -1..1 left to right, channel
// 1 top to bottom. A single-pixel axis sits at the midpoint 0.
inline std::vector<double> coordinate_maps(int height, int width) {
    if (height < 1 || width < 1)
        throw std::invalid_argument("coordinate_maps: degenerate shape");
    std::vector<double> out(static_cast<std::size_t>(height) * width * 2);
    for (int y = 0; y < height; ++y) {
        const double fy = height > 1 ? -1.0 + 2.0 * y / (height - 1) : 0.0;
        for (int x = 0; x < width; ++x) {
            const double fx = width > 1 ? -1.0 + 2.0 * x / (width - 1) : 0.0;
            const std::size_t p = (static_cast<std::size_t>(y) * width + x) * 2;
            out[p] = fx;
            out[p + 1] = fy;
        }
    }
    return out;
}

}  // namespace dseg
