#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "edrs/engine.hpp"
#include "edrs/net.hpp"
#include "edrs/tensor.hpp"

namespace edrs {

// Generation-1 architecture: 32x32x1 input; convs 32@3x3, 32@5x5, 64@3x3
// ("same" padding, each followed by ReLU and 2x2/stride-2 max-pool); fully
// connected 64 then 2. Last conv emits 4x4x64, so the dense radiomic
// sequence has length 16*64 = 1024.
struct SequencerArchitecture {
    static constexpr int input_h = 32;
    static constexpr int input_w = 32;
    static constexpr int input_channels = 1;
    static constexpr int conv_filters[3] = {32, 32, 64};
    static constexpr int conv_kernel[3] = {3, 5, 3};
    static constexpr int fc1_dim = 64;
    static constexpr int n_classes = 2;
};

// Dense generation-1 sequencer with Glorot-uniform weights; deterministic in
// the seed. Active conv synapse count is 44320.
template <typename T>
SequencerNet<T> build_initial(std::uint64_t seed) {
    SequencerNet<T> net;
    net.input_channels = SequencerArchitecture::input_channels;
    net.input_h = SequencerArchitecture::input_h;
    net.input_w = SequencerArchitecture::input_w;
    net.generation = 1;

    int ch = net.input_channels;
    for (int l = 0; l < 3; ++l) {
        const int f = SequencerArchitecture::conv_filters[l];
        const int k = SequencerArchitecture::conv_kernel[l];
        net.conv_layers.emplace_back(f, ch, k, k);
        ch = f;
    }
    const int flat = static_cast<int>(net.flat_dim());
    net.fc_layers.emplace_back(flat, SequencerArchitecture::fc1_dim);
    net.fc_layers.emplace_back(SequencerArchitecture::fc1_dim, SequencerArchitecture::n_classes);
    init_weights(net, seed);
    net.validate();
    return net;
}

template <typename T>
struct RadiomicSequence {
    std::vector<T> values;  // length = last-layer spatial size x alive last-conv filters
    int generation = 1;
};

// Flattened post-pool activation of the last conv layer, restricted to alive
// filters, for one 32x32 patch.
template <typename T>
RadiomicSequence<T> extract_sequence(const SequencerNet<T>& net, const Tensor<T>& patch) {
    Tensor<T> batch({1, net.input_channels, net.input_h, net.input_w});
    if (patch.rank() == 2 && patch.shape[0] == net.input_h && patch.shape[1] == net.input_w &&
        net.input_channels == 1) {
        std::copy(patch.data.begin(), patch.data.end(), batch.data.begin());
    } else if (patch.rank() == 3 && patch.shape[0] == net.input_channels && patch.shape[1] == net.input_h &&
               patch.shape[2] == net.input_w) {
        std::copy(patch.data.begin(), patch.data.end(), batch.data.begin());
    } else {
        throw std::invalid_argument("extract_sequence: patch shape " + shape_str(patch.shape) +
                                    " does not match net input");
    }

    ForwardTrace<T> tr;
    forward(net, batch, &tr);
    const Tensor<T>& feat = tr.pool_out.back();  // [1 x F x h x w]
    const auto& last = net.conv_layers.back();
    const int hw = feat.shape[2] * feat.shape[3];

    RadiomicSequence<T> seq;
    seq.generation = net.generation;
    seq.values.reserve(static_cast<std::size_t>(last.alive_filters()) * hw);
    for (int f = 0; f < last.filters; ++f) {
        if (!last.filter_alive[f]) continue;
        const T* p = feat.ptr() + static_cast<std::size_t>(f) * hw;
        seq.values.insert(seq.values.end(), p, p + hw);
    }
    return seq;
}

struct CompactnessMetrics {
    int total_alive_filters = 0;
    long long rsl_table = 0;       // 16 x total alive filters, the tabulated convention
    long long rsl_last_layer = 0;  // physically emitted sequence length
};

template <typename T>
CompactnessMetrics compactness_metrics(const SequencerNet<T>& net) {
    CompactnessMetrics m;
    m.total_alive_filters = total_alive_filters(net);
    m.rsl_table = 16LL * m.total_alive_filters;
    auto [h, w] = net.spatial_after(static_cast<int>(net.conv_layers.size()) - 1);
    m.rsl_last_layer = static_cast<long long>(h) * w * net.conv_layers.back().alive_filters();
    return m;
}

}  // namespace edrs
