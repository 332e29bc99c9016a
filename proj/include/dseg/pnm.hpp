#pragma once

// Binary portable pixmap/graymap I/O. Images travel as 8-bit P6, label maps
// as 16-bit P5 (which caps instances per image at 65535). Multi-byte P5
// samples use the most-significant-byte-first order the netpbm standard
// prescribes, so the files open in ordinary viewers.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dseg/fileio.hpp"
#include "dseg/image.hpp"

namespace dseg {

namespace detail {

// Reads one whitespace-delimited header token, skipping '#' comments.
inline std::string pnm_token(const std::string& data, std::size_t& pos) {
    while (pos < data.size()) {
        const char c = data[pos];
        if (c == '#') {
            while (pos < data.size() && data[pos] != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos])))
        ++pos;
    if (start == pos) throw std::runtime_error("truncated PNM header");
    return data.substr(start, pos - start);
}

inline int pnm_int(const std::string& data, std::size_t& pos) {
    return std::stoi(pnm_token(data, pos));
}

}  // namespace detail

struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // H x W x 3
};

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
    std::string out = "P6\n" + std::to_string(img.width) + " " +
                      std::to_string(img.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    atomic_write_file(path, out);
}

inline RgbImage read_ppm(const std::filesystem::path& path) {
    const std::string data = read_binary_file(path);
    std::size_t pos = 0;
    if (detail::pnm_token(data, pos) != "P6")
        throw std::runtime_error(path.string() + ": not a binary PPM");
    RgbImage img;
    img.width = detail::pnm_int(data, pos);
    img.height = detail::pnm_int(data, pos);
    const int maxval = detail::pnm_int(data, pos);
    if (maxval != 255) throw std::runtime_error(path.string() + ": expected 8-bit PPM");
    ++pos;  // single whitespace after maxval
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height * 3;
    if (data.size() - pos < n) throw std::runtime_error(path.string() + ": truncated pixel data");
    img.pixels.assign(data.begin() + pos, data.begin() + pos + n);
    return img;
}

// Label maps as 16-bit graymaps.
inline void write_pgm16(const std::filesystem::path& path, const LabelMap& labels) {
    std::string out = "P5\n" + std::to_string(labels.width) + " " +
                      std::to_string(labels.height) + "\n65535\n";
    out.reserve(out.size() + labels.values.size() * 2);
    for (int v : labels.values) {
        if (v < 0 || v > 65535)
            throw std::runtime_error("label " + std::to_string(v) + " does not fit a 16-bit PGM");
        out.push_back(static_cast<char>((v >> 8) & 0xff));
        out.push_back(static_cast<char>(v & 0xff));
    }
    atomic_write_file(path, out);
}

// Accepts 8- or 16-bit P5.
inline LabelMap read_pgm(const std::filesystem::path& path) {
    const std::string data = read_binary_file(path);
    std::size_t pos = 0;
    if (detail::pnm_token(data, pos) != "P5")
        throw std::runtime_error(path.string() + ": not a binary PGM");
    const int width = detail::pnm_int(data, pos);
    const int height = detail::pnm_int(data, pos);
    const int maxval = detail::pnm_int(data, pos);
    ++pos;
    LabelMap labels(height, width);
    const std::size_t n = labels.values.size();
    if (maxval < 256) {
        if (data.size() - pos < n) throw std::runtime_error(path.string() + ": truncated pixel data");
        for (std::size_t p = 0; p < n; ++p)
            labels.values[p] = static_cast<std::uint8_t>(data[pos + p]);
    } else {
        if (data.size() - pos < n * 2) throw std::runtime_error(path.string() + ": truncated pixel data");
        for (std::size_t p = 0; p < n; ++p) {
            const auto hi = static_cast<std::uint8_t>(data[pos + p * 2]);
            const auto lo = static_cast<std::uint8_t>(data[pos + p * 2 + 1]);
            labels.values[p] = (hi << 8) | lo;
        }
    }
    return labels;
}

// [0,1] doubles to 8-bit with round-to-nearest.
inline RgbImage quantize_image(const std::vector<double>& image, int height, int width) {
    RgbImage img;
    img.height = height;
    img.width = width;
    img.pixels.resize(static_cast<std::size_t>(height) * width * 3);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        double v = image[i];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        img.pixels[i] = static_cast<std::uint8_t>(v * 255.0 + 0.5);
    }
    return img;
}

inline std::vector<double> dequantize_image(const RgbImage& img) {
    std::vector<double> out(img.pixels.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.pixels[i] / 255.0;
    return out;
}

}  // namespace dseg
