#pragma once

#include <stdexcept>
#include <vector>

#include "edrs/net.hpp"

namespace edrs {

// A physically shrunk twin of a masked net: dead filters and the channels
// they feed removed from the tensors, surviving synapse masks carried over.
// Forward outputs are identical to the masked-dense net (dead contributions
// are exact zeros either way), so the twin can stand in wherever speed
// matters: benchmarking and retraining.
template <typename T>
struct ShrunkNet {
    SequencerNet<T> net;
    std::vector<std::vector<int>> kept_filters;  // per conv layer, original filter indices
};

template <typename T>
ShrunkNet<T> build_shrunk(const SequencerNet<T>& full) {
    ShrunkNet<T> out;
    out.net.input_channels = full.input_channels;
    out.net.input_h = full.input_h;
    out.net.input_w = full.input_w;
    out.net.generation = full.generation;

    std::vector<int> prev_kept;  // channels entering the current layer
    for (std::size_t l = 0; l < full.conv_layers.size(); ++l) {
        const auto& c = full.conv_layers[l];
        std::vector<int> kept;
        for (int f = 0; f < c.filters; ++f)
            if (c.filter_alive[f]) kept.push_back(f);
        if (kept.empty()) throw std::invalid_argument("build_shrunk: conv layer with no alive filter");

        const int in_ch = (l == 0) ? full.input_channels : static_cast<int>(prev_kept.size());
        ConvLayer<T> sc(static_cast<int>(kept.size()), in_ch, c.kh, c.kw);
        const std::size_t k_c = static_cast<std::size_t>(c.kh) * c.kw;
        for (std::size_t a = 0; a < kept.size(); ++a) {
            const int f = kept[a];
            sc.biases[a] = c.biases[f];
            for (int b = 0; b < in_ch; ++b) {
                const int ch = (l == 0) ? b : prev_kept[b];
                const std::size_t src = (static_cast<std::size_t>(f) * c.in_channels + ch) * k_c;
                const std::size_t dst = (a * static_cast<std::size_t>(in_ch) + b) * k_c;
                for (std::size_t k = 0; k < k_c; ++k) {
                    sc.weights.data[dst + k] = c.weights.data[src + k];
                    sc.mask.bits[dst + k] = c.mask.bits[src + k];
                }
            }
        }
        out.net.conv_layers.push_back(std::move(sc));
        out.kept_filters.push_back(kept);
        prev_kept = std::move(kept);
    }

    // First FC layer keeps only columns fed by surviving last-conv filters.
    auto [h, w] = full.spatial_after(static_cast<int>(full.conv_layers.size()) - 1);
    const int hw = h * w;
    const auto& kept_last = out.kept_filters.back();
    const auto& fc0 = full.fc_layers.front();
    FCLayer<T> sfc0(static_cast<int>(kept_last.size()) * hw, fc0.out_dim);
    for (int o = 0; o < fc0.out_dim; ++o) {
        const T* src = fc0.weights.ptr() + static_cast<std::size_t>(o) * fc0.in_dim;
        T* dst = sfc0.weights.ptr() + static_cast<std::size_t>(o) * sfc0.in_dim;
        for (std::size_t a = 0; a < kept_last.size(); ++a)
            for (int s = 0; s < hw; ++s) dst[a * hw + s] = src[static_cast<std::size_t>(kept_last[a]) * hw + s];
        sfc0.biases[o] = fc0.biases[o];
    }
    out.net.fc_layers.push_back(std::move(sfc0));
    for (std::size_t l = 1; l < full.fc_layers.size(); ++l) out.net.fc_layers.push_back(full.fc_layers[l]);

    out.net.validate();
    return out;
}

// Copies trained parameters of a shrunk twin back into the full-dimension
// net. Masks of the full net are untouched; only surviving coordinates can
// have moved.
template <typename T>
void scatter_back(const ShrunkNet<T>& shrunk, SequencerNet<T>& full) {
    if (shrunk.kept_filters.size() != full.conv_layers.size())
        throw std::invalid_argument("scatter_back: layer count mismatch");

    std::vector<int> prev_kept;
    for (std::size_t l = 0; l < full.conv_layers.size(); ++l) {
        auto& c = full.conv_layers[l];
        const auto& sc = shrunk.net.conv_layers[l];
        const auto& kept = shrunk.kept_filters[l];
        const int in_ch = sc.in_channels;
        const std::size_t k_c = static_cast<std::size_t>(c.kh) * c.kw;
        for (std::size_t a = 0; a < kept.size(); ++a) {
            const int f = kept[a];
            c.biases[f] = sc.biases[a];
            for (int b = 0; b < in_ch; ++b) {
                const int ch = (l == 0) ? b : prev_kept[b];
                const std::size_t dst = (static_cast<std::size_t>(f) * c.in_channels + ch) * k_c;
                const std::size_t src = (a * static_cast<std::size_t>(in_ch) + b) * k_c;
                for (std::size_t k = 0; k < k_c; ++k) c.weights.data[dst + k] = sc.weights.data[src + k];
            }
        }
        prev_kept = kept;
    }

    auto [h, w] = full.spatial_after(static_cast<int>(full.conv_layers.size()) - 1);
    const int hw = h * w;
    const auto& kept_last = shrunk.kept_filters.back();
    auto& fc0 = full.fc_layers.front();
    const auto& sfc0 = shrunk.net.fc_layers.front();
    for (int o = 0; o < fc0.out_dim; ++o) {
        T* dst = fc0.weights.ptr() + static_cast<std::size_t>(o) * fc0.in_dim;
        const T* src = sfc0.weights.ptr() + static_cast<std::size_t>(o) * sfc0.in_dim;
        for (std::size_t a = 0; a < kept_last.size(); ++a)
            for (int s = 0; s < hw; ++s) dst[static_cast<std::size_t>(kept_last[a]) * hw + s] = src[a * hw + s];
        fc0.biases[o] = sfc0.biases[o];
    }
    for (std::size_t l = 1; l < full.fc_layers.size(); ++l) full.fc_layers[l] = shrunk.net.fc_layers[l];
}

}  // namespace edrs
