#pragma once

// Shared helpers for the test suites: an independently coded reference
// forward path (direct per-element summation, no code shared with the
// engine's loop nests) and small random net generators.

#include <cmath>
#include <vector>

#include "edrs/net.hpp"
#include "edrs/rng.hpp"
#include "edrs/tensor.hpp"

namespace edrs::testutil {

// Reference conv: out[b,f,oy,ox] = bias_f + sum over (c,ky,kx) of
// w*mask*input, "same" padding, computed element by element.
template <typename T>
Tensor<T> oracle_conv(const ConvLayer<T>& layer, const Tensor<T>& in) {
    const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
    Tensor<T> out({B, layer.filters, H, W});
    const int ph = (layer.kh - 1) / 2, pw = (layer.kw - 1) / 2;
    for (int b = 0; b < B; ++b)
        for (int f = 0; f < layer.filters; ++f)
            for (int oy = 0; oy < H; ++oy)
                for (int ox = 0; ox < W; ++ox) {
                    T acc = layer.filter_alive[f] ? layer.biases[f] : T(0);
                    for (int c = 0; c < C; ++c)
                        for (int ky = 0; ky < layer.kh; ++ky)
                            for (int kx = 0; kx < layer.kw; ++kx) {
                                const int iy = oy + ky - ph, ix = ox + kx - pw;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                const std::size_t wi = layer.weights.offset(f, c, ky, kx);
                                acc += layer.weights.data[wi] * static_cast<T>(layer.mask.bits[wi]) *
                                       in.at(b, c, iy, ix);
                            }
                    out.at(b, f, oy, ox) = acc;
                }
    return out;
}

template <typename T>
Tensor<T> oracle_pool_relu(const Tensor<T>& pre) {
    const int B = pre.shape[0], F = pre.shape[1], H = pre.shape[2], W = pre.shape[3];
    Tensor<T> out({B, F, H / 2, W / 2});
    for (int b = 0; b < B; ++b)
        for (int f = 0; f < F; ++f)
            for (int oy = 0; oy < H / 2; ++oy)
                for (int ox = 0; ox < W / 2; ++ox) {
                    T m = pre.at(b, f, 2 * oy, 2 * ox);
                    m = std::max(m, pre.at(b, f, 2 * oy, 2 * ox + 1));
                    m = std::max(m, pre.at(b, f, 2 * oy + 1, 2 * ox));
                    m = std::max(m, pre.at(b, f, 2 * oy + 1, 2 * ox + 1));
                    out.at(b, f, oy, ox) = std::max(m, T(0));
                }
    return out;
}

template <typename T>
Tensor<T> oracle_forward(const SequencerNet<T>& net, const Tensor<T>& batch) {
    Tensor<T> x = batch;
    for (const auto& c : net.conv_layers) x = oracle_pool_relu(oracle_conv(c, x));
    const int B = x.shape[0];
    std::vector<T> flat(x.data.begin(), x.data.end());
    int dim = static_cast<int>(flat.size() / B);
    for (std::size_t l = 0; l < net.fc_layers.size(); ++l) {
        const auto& f = net.fc_layers[l];
        std::vector<T> next(static_cast<std::size_t>(B) * f.out_dim, T(0));
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < f.out_dim; ++o) {
                T acc = f.biases[o];
                for (int d = 0; d < dim; ++d)
                    acc += f.weights.at(0, 0, o, d) * flat[static_cast<std::size_t>(b) * dim + d];
                if (l + 1 < net.fc_layers.size()) acc = std::max(acc, T(0));
                next[static_cast<std::size_t>(b) * f.out_dim + o] = acc;
            }
        flat = std::move(next);
        dim = f.out_dim;
    }
    Tensor<T> logits({B, dim});
    logits.data = flat;
    return logits;
}

struct RandomNetOptions {
    int input_size = 8;
    int max_conv_layers = 2;
    int max_filters = 4;
    bool sparse = true;  // drop some synapses and filters
};

// Small random net with well-formed masks; parameter count stays in the low
// hundreds so finite differences are fast.
template <typename T>
SequencerNet<T> make_random_net(Rng& rng, const RandomNetOptions& opt = {}) {
    SequencerNet<T> net;
    net.input_channels = 1;
    net.input_h = opt.input_size;
    net.input_w = opt.input_size;
    const int n_conv = 1 + static_cast<int>(rng.below(opt.max_conv_layers));
    int ch = 1;
    for (int l = 0; l < n_conv; ++l) {
        const int f = 2 + static_cast<int>(rng.below(opt.max_filters - 1));
        net.conv_layers.emplace_back(f, ch, 3, 3);
        ch = f;
    }
    const int flat = static_cast<int>(net.flat_dim());
    const int hidden = 3 + static_cast<int>(rng.below(4));
    net.fc_layers.emplace_back(flat, hidden);
    net.fc_layers.emplace_back(hidden, 2);
    init_weights(net, rng.next());

    if (opt.sparse) {
        for (auto& c : net.conv_layers) {
            for (auto& b : c.mask.bits)
                if (rng.uniform() < 0.25) b = 0;
            for (int f = 0; f < c.filters; ++f)
                if (rng.uniform() < 0.2) c.filter_alive[f] = 0;
            // Keep the layer legal.
            bool any = false;
            for (auto a : c.filter_alive) any = any || a;
            if (!any) c.filter_alive[0] = 1;
            c.enforce_mask();
        }
    }
    net.validate();
    return net;
}

template <typename T>
Tensor<T> random_batch(Rng& rng, const SequencerNet<T>& net, int b) {
    Tensor<T> batch({b, net.input_channels, net.input_h, net.input_w});
    for (auto& v : batch.data) v = static_cast<T>(rng.uniform());
    return batch;
}

inline std::vector<int> random_labels(Rng& rng, int n) {
    std::vector<int> labels(n);
    for (auto& y : labels) y = rng.uniform() < 0.5 ? 1 : 0;
    return labels;
}

}  // namespace edrs::testutil
