#pragma once

// Binary tensor container. One tensor serializes as
//
//   magic "DSEG" | version u16 | dtype u8 | ndim u8 | ndim x dim u32 | payload
//
// with every multi-byte field and payload element little-endian, row-major.
// An archive file is a plain concatenation of named records, each
//
//   name_len u16 | name bytes | tensor
//
// which is how checkpoints store one entry per named parameter.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dseg/fileio.hpp"

namespace dseg {

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1, U16 = 2, U8 = 3 };

inline std::size_t dtype_size(Dtype t) {
    switch (t) {
        case Dtype::F32: return 4;
        case Dtype::F64: return 8;
        case Dtype::U16: return 2;
        case Dtype::U8: return 1;
    }
    throw std::runtime_error("unknown dtype tag");
}

struct AnyTensor {
    std::vector<std::uint32_t> dims;
    std::variant<std::vector<float>, std::vector<double>, std::vector<std::uint16_t>,
                 std::vector<std::uint8_t>>
        data;

    Dtype dtype() const { return static_cast<Dtype>(data.index()); }

    std::size_t element_count() const {
        std::size_t n = 1;
        for (std::uint32_t d : dims) n *= d;
        return n;
    }

    const std::vector<double>& f64() const { return std::get<std::vector<double>>(data); }
    std::vector<double>& f64() { return std::get<std::vector<double>>(data); }
    const std::vector<std::uint16_t>& u16() const {
        return std::get<std::vector<std::uint16_t>>(data);
    }
};

namespace detail {

constexpr char kTensorMagic[4] = {'D', 'S', 'E', 'G'};
constexpr std::uint16_t kTensorVersion = 1;

template <typename T>
void append_le(std::string& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
            std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(const std::string& in, std::size_t& pos) {
    if (in.size() - pos < sizeof(T)) throw std::runtime_error("truncated tensor data");
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    if constexpr (std::endian::native == std::endian::big)
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
            std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

template <typename T>
void append_payload(std::string& out, const std::vector<T>& values) {
    for (const T& v : values) append_le(out, v);
}

}  // namespace detail

inline void append_tensor(std::string& out, const AnyTensor& tensor) {
    std::size_t n = 1;
    for (std::uint32_t d : tensor.dims) n *= d;
    const std::size_t stored =
        std::visit([](const auto& v) { return v.size(); }, tensor.data);
    if (stored != n) throw std::runtime_error("tensor payload does not match its dims");

    out.append(detail::kTensorMagic, 4);
    detail::append_le(out, detail::kTensorVersion);
    out.push_back(static_cast<char>(tensor.dtype()));
    out.push_back(static_cast<char>(tensor.dims.size()));
    for (std::uint32_t d : tensor.dims) detail::append_le(out, d);
    std::visit([&](const auto& v) { detail::append_payload(out, v); }, tensor.data);
}

inline AnyTensor parse_tensor(const std::string& in, std::size_t& pos) {
    if (in.size() - pos < 4 || std::memcmp(in.data() + pos, detail::kTensorMagic, 4) != 0)
        throw std::runtime_error("bad tensor magic");
    pos += 4;
    const auto version = detail::read_le<std::uint16_t>(in, pos);
    if (version != detail::kTensorVersion)
        throw std::runtime_error("unsupported tensor version " + std::to_string(version));
    const auto dtype = static_cast<Dtype>(detail::read_le<std::uint8_t>(in, pos));
    const auto ndim = detail::read_le<std::uint8_t>(in, pos);

    AnyTensor tensor;
    tensor.dims.resize(ndim);
    std::size_t n = 1;
    for (auto& d : tensor.dims) {
        d = detail::read_le<std::uint32_t>(in, pos);
        n *= d;
    }
    if (in.size() - pos < n * dtype_size(dtype))
        throw std::runtime_error("truncated tensor payload");

    const auto fill = [&](auto tag) {
        using T = decltype(tag);
        std::vector<T> values(n);
        for (auto& v : values) v = detail::read_le<T>(in, pos);
        tensor.data = std::move(values);
    };
    switch (dtype) {
        case Dtype::F32: fill(float{}); break;
        case Dtype::F64: fill(double{}); break;
        case Dtype::U16: fill(std::uint16_t{}); break;
        case Dtype::U8: fill(std::uint8_t{}); break;
        default: throw std::runtime_error("unknown dtype tag");
    }
    return tensor;
}

inline void write_tensor_file(const std::filesystem::path& path, const AnyTensor& t) {
    std::string out;
    append_tensor(out, t);
    atomic_write_file(path, out);
}

inline AnyTensor read_tensor_file(const std::filesystem::path& path) {
    const std::string data = read_binary_file(path);
    std::size_t pos = 0;
    AnyTensor t = parse_tensor(data, pos);
    if (pos != data.size()) throw std::runtime_error(path.string() + ": trailing bytes");
    return t;
}

// Named-record archive.

inline void append_named_tensor(std::string& out, std::string_view name,
                                const AnyTensor& tensor) {
    if (name.size() > 65535) throw std::runtime_error("tensor name too long");
    detail::append_le(out, static_cast<std::uint16_t>(name.size()));
    out.append(name.data(), name.size());
    append_tensor(out, tensor);
}

inline void write_tensor_archive(
    const std::filesystem::path& path,
    const std::vector<std::pair<std::string, AnyTensor>>& entries) {
    std::string out;
    for (const auto& [name, tensor] : entries) append_named_tensor(out, name, tensor);
    atomic_write_file(path, out);
}

inline std::map<std::string, AnyTensor> read_tensor_archive(
    const std::filesystem::path& path) {
    const std::string data = read_binary_file(path);
    std::map<std::string, AnyTensor> out;
    std::size_t pos = 0;
    while (pos < data.size()) {
        const auto name_len = detail::read_le<std::uint16_t>(data, pos);
        if (data.size() - pos < name_len)
            throw std::runtime_error(path.string() + ": truncated record name");
        std::string name = data.substr(pos, name_len);
        pos += name_len;
        out.emplace(std::move(name), parse_tensor(data, pos));
    }
    return out;
}

}  // namespace dseg
