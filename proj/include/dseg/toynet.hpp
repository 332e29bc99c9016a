#pragma once

// A small fully convolutional network with hand-written backpropagation,
// enough to map an image (plus coordinate channels) to per-pixel embeddings
// and descend the discriminative loss. Stacked same-padded convolutions with
// a leaky rectifier (slope 0.1) between them and a linear final layer; output
// keeps the input's spatial resolution.
//
// Weights are stored (out, ky, kx, in) so the innermost accumulation runs
// contiguously over input channels. Everything is double precision and
// single-threaded, so results are bit-reproducible for a fixed seed.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dseg/image.hpp"
#include "dseg/loss.hpp"
#include "dseg/rng.hpp"
#include "dseg/synthdata.hpp"

namespace dseg {

struct NetConfig {
    int in_channels = 5;  // 3 image + 2 coordinate channels
    int hidden_channels = 32;
    int num_layers = 4;
    int kernel_size = 3;
    int out_dims = 8;
    std::uint64_t weight_init_seed = 0;
};

inline void validate(const NetConfig& c) {
    if (c.in_channels < 1 || c.hidden_channels < 1 || c.num_layers < 1)
        throw std::invalid_argument("NetConfig: channels and layer count must be >= 1");
    if (c.kernel_size < 1 || c.kernel_size % 2 == 0)
        throw std::invalid_argument("NetConfig: kernel_size must be odd and >= 1");
    if (c.out_dims < 2) throw std::invalid_argument("NetConfig: out_dims must be >= 2");
}

struct ConvLayer {
    int in_ch = 0;
    int out_ch = 0;
    int k = 0;
    std::vector<double> weights;  // out_ch x k x k x in_ch
    std::vector<double> bias;     // out_ch

    double& w(int o, int ky, int kx, int i) {
        return weights[((static_cast<std::size_t>(o) * k + ky) * k + kx) * in_ch + i];
    }
    double w(int o, int ky, int kx, int i) const {
        return weights[((static_cast<std::size_t>(o) * k + ky) * k + kx) * in_ch + i];
    }
};

struct NetParams {
    NetConfig config;
    std::vector<ConvLayer> layers;
};

// Per-layer gradients, same shapes as the parameters they belong to.
struct NetGrads {
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> bias;
};

constexpr double kLeakySlope = 0.1;

// Fan-in-scaled uniform init (variance 1/fan_in); biases start at zero.
inline NetParams init_net(const NetConfig& cfg) {
    validate(cfg);
    NetParams net;
    net.config = cfg;
    Xoshiro256 rng(cfg.weight_init_seed);
    for (int l = 0; l < cfg.num_layers; ++l) {
        ConvLayer layer;
        layer.in_ch = l == 0 ? cfg.in_channels : cfg.hidden_channels;
        layer.out_ch = l == cfg.num_layers - 1 ? cfg.out_dims : cfg.hidden_channels;
        layer.k = cfg.kernel_size;
        const std::size_t n = static_cast<std::size_t>(layer.out_ch) * layer.k *
                              layer.k * layer.in_ch;
        layer.weights.resize(n);
        const double bound =
            std::sqrt(3.0 / (static_cast<double>(layer.in_ch) * layer.k * layer.k));
        for (double& w : layer.weights) w = rng.uniform(-bound, bound);
        layer.bias.assign(layer.out_ch, 0.0);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

namespace detail {

inline void conv_same(const std::vector<double>& in, int h, int w,
                      const ConvLayer& layer, std::vector<double>& out) {
    const int k = layer.k;
    const int pad = k / 2;
    const int ic = layer.in_ch;
    const int oc = layer.out_ch;
    out.assign(static_cast<std::size_t>(h) * w * oc, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double* o_px = out.data() + (static_cast<std::size_t>(y) * w + x) * oc;
            for (int o = 0; o < oc; ++o) {
                double acc = layer.bias[o];
                for (int ky = 0; ky < k; ++ky) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int sx = x + kx - pad;
                        if (sx < 0 || sx >= w) continue;
                        const double* i_px =
                            in.data() + (static_cast<std::size_t>(sy) * w + sx) * ic;
                        const double* w_px =
                            layer.weights.data() +
                            ((static_cast<std::size_t>(o) * k + ky) * k + kx) * ic;
                        for (int i = 0; i < ic; ++i) acc += i_px[i] * w_px[i];
                    }
                }
                o_px[o] = acc;
            }
        }
    }
}

}  // namespace detail

// Activations recorded by a forward pass, consumed once by backward.
struct ForwardCache {
    int height = 0;
    int width = 0;
    std::vector<std::vector<double>> inputs;   // per layer: what the conv saw
    std::vector<std::vector<double>> preacts;  // per hidden layer: pre-rectifier
};

inline EmbeddingMap forward(const NetParams& net, const std::vector<double>& input,
                            int height, int width, ForwardCache* cache = nullptr) {
    if (input.size() !=
        static_cast<std::size_t>(height) * width * net.config.in_channels)
        throw std::invalid_argument("forward: input size does not match config");
    if (cache) {
        cache->height = height;
        cache->width = width;
        cache->inputs.clear();
        cache->preacts.clear();
    }

    std::vector<double> act = input;
    std::vector<double> next;
    const int last = static_cast<int>(net.layers.size()) - 1;
    for (int l = 0; l <= last; ++l) {
        if (cache) cache->inputs.push_back(act);
        detail::conv_same(act, height, width, net.layers[l], next);
        if (l != last) {
            if (cache) cache->preacts.push_back(next);
            for (double& v : next) v = v > 0.0 ? v : kLeakySlope * v;
        }
        act = std::move(next);
    }

    EmbeddingMap emb(height, width, net.config.out_dims);
    emb.values = std::move(act);
    return emb;
}

// Exact parameter gradients by the chain rule, given d(loss)/d(embedding).
inline NetGrads backward(const NetParams& net, const ForwardCache& cache,
                         const GradientMap& upstream) {
    const int h = cache.height;
    const int w = cache.width;
    if (upstream.height != h || upstream.width != w ||
        upstream.dims != net.config.out_dims)
        throw std::invalid_argument("backward: upstream gradient shape mismatch");
    if (cache.inputs.size() != net.layers.size())
        throw std::invalid_argument("backward: cache does not match the network");

    NetGrads grads;
    grads.weights.resize(net.layers.size());
    grads.bias.resize(net.layers.size());

    std::vector<double> g = upstream.values;
    std::vector<double> g_in;
    for (int l = static_cast<int>(net.layers.size()) - 1; l >= 0; --l) {
        const ConvLayer& layer = net.layers[l];
        const std::vector<double>& in = cache.inputs[l];
        const int k = layer.k;
        const int pad = k / 2;
        const int ic = layer.in_ch;
        const int oc = layer.out_ch;

        std::vector<double>& dw = grads.weights[l];
        std::vector<double>& db = grads.bias[l];
        dw.assign(layer.weights.size(), 0.0);
        db.assign(layer.bias.size(), 0.0);
        g_in.assign(static_cast<std::size_t>(h) * w * ic, 0.0);

        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double* g_px = g.data() + (static_cast<std::size_t>(y) * w + x) * oc;
                for (int o = 0; o < oc; ++o) {
                    const double go = g_px[o];
                    if (go == 0.0) continue;
                    db[o] += go;
                    for (int ky = 0; ky < k; ++ky) {
                        const int sy = y + ky - pad;
                        if (sy < 0 || sy >= h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int sx = x + kx - pad;
                            if (sx < 0 || sx >= w) continue;
                            const std::size_t in_off =
                                (static_cast<std::size_t>(sy) * w + sx) * ic;
                            const std::size_t w_off =
                                ((static_cast<std::size_t>(o) * k + ky) * k + kx) * ic;
                            for (int i = 0; i < ic; ++i) {
                                dw[w_off + i] += go * in[in_off + i];
                                g_in[in_off + i] += go * layer.weights[w_off + i];
                            }
                        }
                    }
                }
            }
        }

        if (l > 0) {
            const std::vector<double>& pre = cache.preacts[l - 1];
            for (std::size_t i = 0; i < g_in.size(); ++i)
                if (pre[i] <= 0.0) g_in[i] *= kLeakySlope;
        }
        g = std::move(g_in);
        g_in.clear();
    }
    return grads;
}

// Adam with bias correction. The learning-rate default follows the training
// setup the margins were tuned for.
struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::vector<std::vector<double>> m_w, v_w, m_b, v_b;
};

inline AdamState init_adam(const NetParams& net, double lr = 1e-4) {
    AdamState st;
    st.lr = lr;
    for (const ConvLayer& layer : net.layers) {
        st.m_w.emplace_back(layer.weights.size(), 0.0);
        st.v_w.emplace_back(layer.weights.size(), 0.0);
        st.m_b.emplace_back(layer.bias.size(), 0.0);
        st.v_b.emplace_back(layer.bias.size(), 0.0);
    }
    return st;
}

namespace detail {

inline void adam_update(std::vector<double>& param, const std::vector<double>& grad,
                        std::vector<double>& m, std::vector<double>& v,
                        const AdamState& st, double corr1, double corr2) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * grad[i];
        v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / corr1;
        const double v_hat = v[i] / corr2;
        param[i] -= st.lr * m_hat / (std::sqrt(v_hat) + st.epsilon);
    }
}

}  // namespace detail

inline void adam_step(NetParams& net, const NetGrads& grads, AdamState& st) {
    if (st.m_w.size() != net.layers.size())
        throw std::invalid_argument("adam_step: state does not match the network");
    st.step += 1;
    const double corr1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double corr2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        detail::adam_update(net.layers[l].weights, grads.weights[l], st.m_w[l],
                            st.v_w[l], st, corr1, corr2);
        detail::adam_update(net.layers[l].bias, grads.bias[l], st.m_b[l], st.v_b[l],
                            st, corr1, corr2);
    }
}

// One training example: interleaved input channels plus instance labels.
struct TrainSample {
    int height = 0;
    int width = 0;
    std::vector<double> input;  // H x W x in_channels
    LabelMap instances;
};

// Image channels concatenated with the coordinate ramps.
inline TrainSample sample_from_scene(const StickScene& scene) {
    TrainSample s;
    s.height = scene.height;
    s.width = scene.width;
    s.instances = scene.instances;
    const auto coords = coordinate_maps(scene.height, scene.width);
    const std::size_t n = scene.instances.pixel_count();
    s.input.resize(n * 5);
    for (std::size_t p = 0; p < n; ++p) {
        s.input[p * 5 + 0] = scene.image[p * 3 + 0];
        s.input[p * 5 + 1] = scene.image[p * 3 + 1];
        s.input[p * 5 + 2] = scene.image[p * 3 + 2];
        s.input[p * 5 + 3] = coords[p * 2 + 0];
        s.input[p * 5 + 4] = coords[p * 2 + 1];
    }
    return s;
}

// Batch-of-one training loop: forward, loss backward, net backward, Adam.
// Sample order reshuffles every epoch from `seed`; the loss of every step is
// returned. A non-finite loss aborts.
inline std::vector<LossBreakdown> train(NetParams& net, AdamState& adam,
                                        const std::vector<TrainSample>& dataset,
                                        const LossConfig& loss_cfg, int steps,
                                        std::uint64_t seed) {
    if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
    Xoshiro256 rng(seed);
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<LossBreakdown> trace;
    trace.reserve(steps);
    ForwardCache cache;
    for (int step = 0; step < steps; ++step) {
        const std::size_t slot = step % dataset.size();
        if (slot == 0) {
            for (std::size_t i = order.size() - 1; i > 0; --i) {
                const std::size_t j = static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(i)));
                std::swap(order[i], order[j]);
            }
        }
        const TrainSample& sample = dataset[order[slot]];
        EmbeddingMap emb = forward(net, sample.input, sample.height, sample.width, &cache);
        auto [loss, grad] = loss_backward(emb, sample.instances, loss_cfg);
        if (!std::isfinite(loss.total))
            throw std::runtime_error("train: loss diverged at step " +
                                     std::to_string(step));
        NetGrads grads = backward(net, cache, grad);
        adam_step(net, grads, adam);
        trace.push_back(loss);
    }
    return trace;
}

}  // namespace dseg
