#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "edrs/rng.hpp"
#include "edrs/tensor.hpp"

namespace edrs {

// Convolutional layer with per-synapse binary mask. A filter is the unit the
// evolution treats as a cluster; filter_alive[f] == 0 implies every mask bit
// of filter f is zero. The effective weight in the forward pass is always
// weights * mask. Convs use "same" padding and are followed by ReLU and a
// 2x2/stride-2 max-pool.
template <typename T>
struct ConvLayer {
    int filters = 0;
    int in_channels = 0;
    int kh = 0;
    int kw = 0;
    Tensor<T> weights;              // [filters x in_channels x kh x kw]
    std::vector<T> biases;          // [filters]
    Mask mask;                      // same shape as weights
    std::vector<std::uint8_t> filter_alive;  // [filters]

    ConvLayer() = default;
    ConvLayer(int f, int c, int h, int w)
        : filters(f),
          in_channels(c),
          kh(h),
          kw(w),
          weights(Tensor<T>({f, c, h, w})),
          biases(static_cast<std::size_t>(f), T(0)),
          mask(Mask({f, c, h, w})),
          filter_alive(static_cast<std::size_t>(f), 1) {}

    std::size_t synapses_per_filter() const {
        return static_cast<std::size_t>(in_channels) * kh * kw;
    }

    std::size_t active_synapses() const { return mask.count_ones(); }

    int alive_filters() const {
        int n = 0;
        for (auto b : filter_alive) n += b;
        return n;
    }

    // Re-applies the mask contract: dead filters lose bias and weights, dead
    // synapses hold weight zero.
    void enforce_mask() {
        const std::size_t per = synapses_per_filter();
        for (int f = 0; f < filters; ++f) {
            if (!filter_alive[f]) {
                biases[f] = T(0);
                for (std::size_t i = 0; i < per; ++i) mask.bits[f * per + i] = 0;
            }
        }
        for (std::size_t i = 0; i < weights.data.size(); ++i)
            if (!mask.bits[i]) weights.data[i] = T(0);
    }
};

template <typename T>
struct FCLayer {
    int in_dim = 0;
    int out_dim = 0;
    Tensor<T> weights;      // [out_dim x in_dim]
    std::vector<T> biases;  // [out_dim]

    FCLayer() = default;
    FCLayer(int in, int out)
        : in_dim(in), out_dim(out), weights(Tensor<T>({out, in})), biases(static_cast<std::size_t>(out), T(0)) {}
};

// The radiomic sequencer at one generation: conv stack (each conv followed by
// ReLU + 2x2 max-pool) feeding a small fully-connected head with 2 outputs.
template <typename T>
struct SequencerNet {
    int input_channels = 1;
    int input_h = 32;
    int input_w = 32;
    std::vector<ConvLayer<T>> conv_layers;
    std::vector<FCLayer<T>> fc_layers;
    int generation = 1;

    // Spatial extent after layer index l (post-pool). Pooling floors odd
    // extents.
    std::pair<int, int> spatial_after(int l) const {
        int h = input_h, w = input_w;
        for (int i = 0; i <= l; ++i) {
            h /= 2;
            w /= 2;
        }
        return {h, w};
    }

    std::size_t flat_dim() const {
        auto [h, w] = spatial_after(static_cast<int>(conv_layers.size()) - 1);
        return static_cast<std::size_t>(conv_layers.back().filters) * h * w;
    }

    template <typename U>
    SequencerNet<U> cast() const {
        SequencerNet<U> out;
        out.input_channels = input_channels;
        out.input_h = input_h;
        out.input_w = input_w;
        out.generation = generation;
        out.conv_layers.reserve(conv_layers.size());
        for (const auto& c : conv_layers) {
            ConvLayer<U> cc(c.filters, c.in_channels, c.kh, c.kw);
            cc.weights = c.weights.template cast<U>();
            for (int f = 0; f < c.filters; ++f) cc.biases[f] = static_cast<U>(c.biases[f]);
            cc.mask = c.mask;
            cc.filter_alive = c.filter_alive;
            out.conv_layers.push_back(std::move(cc));
        }
        out.fc_layers.reserve(fc_layers.size());
        for (const auto& f : fc_layers) {
            FCLayer<U> ff(f.in_dim, f.out_dim);
            ff.weights = f.weights.template cast<U>();
            for (int o = 0; o < f.out_dim; ++o) ff.biases[o] = static_cast<U>(f.biases[o]);
            out.fc_layers.push_back(std::move(ff));
        }
        return out;
    }

    void validate() const {
        if (conv_layers.empty() || fc_layers.empty())
            throw std::invalid_argument("SequencerNet: needs conv and fc layers");
        int ch = input_channels;
        for (std::size_t l = 0; l < conv_layers.size(); ++l) {
            const auto& c = conv_layers[l];
            if (c.in_channels != ch)
                throw std::invalid_argument("SequencerNet: channel chain broken at conv layer " + std::to_string(l));
            if (c.alive_filters() < 1)
                throw std::invalid_argument("SequencerNet: conv layer " + std::to_string(l) + " has no alive filter");
            ch = c.filters;
        }
        if (fc_layers.front().in_dim != static_cast<int>(flat_dim()))
            throw std::invalid_argument("SequencerNet: fc input dim mismatch");
        for (std::size_t l = 1; l < fc_layers.size(); ++l)
            if (fc_layers[l].in_dim != fc_layers[l - 1].out_dim)
                throw std::invalid_argument("SequencerNet: fc chain broken at layer " + std::to_string(l));
    }
};

// Active synapse count of the network. Only conv synapses take part in the
// evolutionary budget; FC layers are inherited, not sampled.
template <typename T>
std::size_t count_active_synapses(const SequencerNet<T>& net) {
    std::size_t n = 0;
    for (const auto& c : net.conv_layers) n += c.active_synapses();
    return n;
}

template <typename T>
int total_alive_filters(const SequencerNet<T>& net) {
    int n = 0;
    for (const auto& c : net.conv_layers) n += c.alive_filters();
    return n;
}

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 1;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
        if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("TrainConfig: momentum must be in [0,1)");
    }
};

// Glorot-uniform initialization of all weights; biases start at zero. Masked
// positions are zeroed afterwards so the mask contract holds from the start.
template <typename T>
void init_weights(SequencerNet<T>& net, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& c : net.conv_layers) {
        const double fan_in = static_cast<double>(c.in_channels) * c.kh * c.kw;
        const double fan_out = static_cast<double>(c.filters) * c.kh * c.kw;
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& w : c.weights.data) w = static_cast<T>(rng.uniform(-bound, bound));
        for (auto& b : c.biases) b = T(0);
        c.enforce_mask();
    }
    for (auto& f : net.fc_layers) {
        const double bound = std::sqrt(6.0 / (f.in_dim + f.out_dim));
        for (auto& w : f.weights.data) w = static_cast<T>(rng.uniform(-bound, bound));
        for (auto& b : f.biases) b = T(0);
    }
}

}  // namespace edrs
