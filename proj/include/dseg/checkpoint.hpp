#pragma once

// Network + optimizer persistence on top of the tensor archive: one named
// f64 entry per parameter tensor, the Adam moments alongside, and a small
// config record so inference can rebuild the architecture.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dseg/tensorfile.hpp"
#include "dseg/toynet.hpp"

namespace dseg {

namespace detail {

inline AnyTensor f64_tensor(std::vector<std::uint32_t> dims, std::vector<double> values) {
    AnyTensor t;
    t.dims = std::move(dims);
    t.data = std::move(values);
    return t;
}

inline const AnyTensor& archive_entry(const std::map<std::string, AnyTensor>& archive,
                                      const std::string& name) {
    auto it = archive.find(name);
    if (it == archive.end())
        throw std::runtime_error("checkpoint is missing entry '" + name + "'");
    return it->second;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const NetParams& net,
                            const AdamState& adam) {
    std::vector<std::pair<std::string, AnyTensor>> entries;
    const NetConfig& c = net.config;
    entries.emplace_back(
        "config",
        detail::f64_tensor({7}, {static_cast<double>(c.in_channels),
                                 static_cast<double>(c.hidden_channels),
                                 static_cast<double>(c.num_layers),
                                 static_cast<double>(c.kernel_size),
                                 static_cast<double>(c.out_dims),
                                 static_cast<double>(c.weight_init_seed & 0xffffffffULL),
                                 static_cast<double>(c.weight_init_seed >> 32)}));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const ConvLayer& layer = net.layers[l];
        const std::string prefix = "layer" + std::to_string(l);
        entries.emplace_back(
            prefix + ".weight",
            detail::f64_tensor({static_cast<std::uint32_t>(layer.out_ch),
                                static_cast<std::uint32_t>(layer.k),
                                static_cast<std::uint32_t>(layer.k),
                                static_cast<std::uint32_t>(layer.in_ch)},
                               layer.weights));
        entries.emplace_back(
            prefix + ".bias",
            detail::f64_tensor({static_cast<std::uint32_t>(layer.out_ch)}, layer.bias));
    }
    entries.emplace_back(
        "adam.scalars",
        detail::f64_tensor({5}, {adam.lr, adam.beta1, adam.beta2, adam.epsilon,
                                 static_cast<double>(adam.step)}));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const std::string prefix = "adam.layer" + std::to_string(l);
        const auto dim = [&](const std::vector<double>& v) {
            return std::vector<std::uint32_t>{static_cast<std::uint32_t>(v.size())};
        };
        entries.emplace_back(prefix + ".m_w", detail::f64_tensor(dim(adam.m_w[l]), adam.m_w[l]));
        entries.emplace_back(prefix + ".v_w", detail::f64_tensor(dim(adam.v_w[l]), adam.v_w[l]));
        entries.emplace_back(prefix + ".m_b", detail::f64_tensor(dim(adam.m_b[l]), adam.m_b[l]));
        entries.emplace_back(prefix + ".v_b", detail::f64_tensor(dim(adam.v_b[l]), adam.v_b[l]));
    }
    write_tensor_archive(path, entries);
}

inline std::pair<NetParams, AdamState> load_checkpoint(const std::filesystem::path& path) {
    const auto archive = read_tensor_archive(path);
    const auto& cfg_t = detail::archive_entry(archive, "config");
    if (cfg_t.element_count() != 7)
        throw std::runtime_error("checkpoint config record has the wrong size");
    const auto& cv = cfg_t.f64();

    NetConfig cfg;
    cfg.in_channels = static_cast<int>(cv[0]);
    cfg.hidden_channels = static_cast<int>(cv[1]);
    cfg.num_layers = static_cast<int>(cv[2]);
    cfg.kernel_size = static_cast<int>(cv[3]);
    cfg.out_dims = static_cast<int>(cv[4]);
    cfg.weight_init_seed = static_cast<std::uint64_t>(cv[5]) |
                           (static_cast<std::uint64_t>(cv[6]) << 32);
    validate(cfg);

    NetParams net = init_net(cfg);
    AdamState adam = init_adam(net);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        ConvLayer& layer = net.layers[l];
        const std::string prefix = "layer" + std::to_string(l);
        const auto& w = detail::archive_entry(archive, prefix + ".weight");
        const auto& b = detail::archive_entry(archive, prefix + ".bias");
        if (w.element_count() != layer.weights.size() ||
            b.element_count() != layer.bias.size())
            throw std::runtime_error("checkpoint layer " + std::to_string(l) +
                                     " does not match its config");
        layer.weights = w.f64();
        layer.bias = b.f64();

        const std::string aprefix = "adam.layer" + std::to_string(l);
        adam.m_w[l] = detail::archive_entry(archive, aprefix + ".m_w").f64();
        adam.v_w[l] = detail::archive_entry(archive, aprefix + ".v_w").f64();
        adam.m_b[l] = detail::archive_entry(archive, aprefix + ".m_b").f64();
        adam.v_b[l] = detail::archive_entry(archive, aprefix + ".v_b").f64();
        if (adam.m_w[l].size() != layer.weights.size() ||
            adam.m_b[l].size() != layer.bias.size())
            throw std::runtime_error("checkpoint optimizer state does not match layer " +
                                     std::to_string(l));
    }
    const auto& scalars = detail::archive_entry(archive, "adam.scalars").f64();
    if (scalars.size() != 5)
        throw std::runtime_error("checkpoint adam.scalars record has the wrong size");
    adam.lr = scalars[0];
    adam.beta1 = scalars[1];
    adam.beta2 = scalars[2];
    adam.epsilon = scalars[3];
    adam.step = static_cast<long>(scalars[4]);
    return {std::move(net), adam};
}

// Embeddings persist as H x W x D f64 tensors for the ablation pipeline.
inline AnyTensor tensor_from_embedding(const EmbeddingMap& emb) {
    return detail::f64_tensor({static_cast<std::uint32_t>(emb.height),
                               static_cast<std::uint32_t>(emb.width),
                               static_cast<std::uint32_t>(emb.dims)},
                              emb.values);
}

inline EmbeddingMap embedding_from_tensor(const AnyTensor& t) {
    if (t.dims.size() != 3) throw std::runtime_error("embedding tensor must be 3-D");
    EmbeddingMap emb(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
                     static_cast<int>(t.dims[2]));
    emb.values = t.f64();
    return emb;
}

}  // namespace dseg
