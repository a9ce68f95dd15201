#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "edrs/net.hpp"
#include "edrs/rng.hpp"
#include "edrs/tensor.hpp"

namespace edrs {

template <typename T>
struct LabeledData {
    Tensor<T> images;         // [N x C x H x W]
    std::vector<int> labels;  // values in {0,1}

    std::size_t size() const { return labels.size(); }
};

// Everything backward needs from a forward pass: conv pre-activations,
// post-pool outputs, pool argmax positions, and fc pre-activations. The last
// fc pre-activation holds the logits.
template <typename T>
struct ForwardTrace {
    std::vector<Tensor<T>> conv_pre;
    std::vector<Tensor<T>> pool_out;
    std::vector<Tensor<int>> pool_idx;
    std::vector<Tensor<T>> fc_pre;

    const Tensor<T>& logits() const { return fc_pre.back(); }
};

template <typename T>
struct Gradients {
    std::vector<Tensor<T>> conv_w;
    std::vector<std::vector<T>> conv_b;
    std::vector<Tensor<T>> fc_w;
    std::vector<std::vector<T>> fc_b;
};

namespace detail {

// Effective weights = weights * mask, materialized once per pass so masked
// synapses contribute exactly zero no matter what value they store.
template <typename T>
std::vector<T> effective_weights(const ConvLayer<T>& c) {
    std::vector<T> w(c.weights.data.size());
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = c.mask.bits[i] ? c.weights.data[i] : T(0);
    return w;
}

template <typename T>
void conv_forward(const ConvLayer<T>& layer, const std::vector<T>& weff, const Tensor<T>& in,
                  Tensor<T>& out) {
    const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
    const int F = layer.filters, KH = layer.kh, KW = layer.kw;
    const int ph = (KH - 1) / 2, pw = (KW - 1) / 2;
    const std::size_t in_c = static_cast<std::size_t>(H) * W;
    const std::size_t k_c = static_cast<std::size_t>(KH) * KW;

    for (int b = 0; b < B; ++b) {
        const T* inb = in.ptr() + static_cast<std::size_t>(b) * C * in_c;
        T* outb = out.ptr() + static_cast<std::size_t>(b) * F * in_c;
        for (int f = 0; f < F; ++f) {
            T* of = outb + static_cast<std::size_t>(f) * in_c;
            // Dead filters contribute exactly zero, bias included.
            const T bias = layer.filter_alive[f] ? layer.biases[f] : T(0);
            for (std::size_t i = 0; i < in_c; ++i) of[i] = bias;
            if (!layer.filter_alive[f]) continue;
            const T* wf = weff.data() + static_cast<std::size_t>(f) * C * k_c;
            for (int c = 0; c < C; ++c) {
                const T* ic = inb + static_cast<std::size_t>(c) * in_c;
                const T* wc = wf + static_cast<std::size_t>(c) * k_c;
                for (int ky = 0; ky < KH; ++ky) {
                    for (int oy = std::max(0, ph - ky); oy < std::min(H, H + ph - ky); ++oy) {
                        const int iy = oy + ky - ph;
                        const T* irow = ic + static_cast<std::size_t>(iy) * W;
                        T* orow = of + static_cast<std::size_t>(oy) * W;
                        for (int kx = 0; kx < KW; ++kx) {
                            const T w = wc[ky * KW + kx];
                            if (w == T(0)) continue;
                            const int dx = kx - pw;
                            const int xlo = std::max(0, -dx), xhi = std::min(W, W - dx);
                            for (int ox = xlo; ox < xhi; ++ox) orow[ox] += w * irow[ox + dx];
                        }
                    }
                }
            }
        }
    }
}

// 2x2/stride-2 max-pool fused with ReLU: output = max(0, window max of the
// pre-activation). Argmax (first-wins scan order) recorded for backprop.
template <typename T>
void pool_forward(const Tensor<T>& pre, Tensor<T>& out, Tensor<int>* idx) {
    const int B = pre.shape[0], F = pre.shape[1], H = pre.shape[2], W = pre.shape[3];
    const int OH = H / 2, OW = W / 2;
    for (int b = 0; b < B; ++b) {
        for (int f = 0; f < F; ++f) {
            const T* pf = pre.ptr() + (static_cast<std::size_t>(b) * F + f) * H * W;
            T* of = out.ptr() + (static_cast<std::size_t>(b) * F + f) * OH * OW;
            int* xf = idx ? idx->ptr() + (static_cast<std::size_t>(b) * F + f) * OH * OW : nullptr;
            for (int oy = 0; oy < OH; ++oy) {
                for (int ox = 0; ox < OW; ++ox) {
                    const int iy = 2 * oy, ix = 2 * ox;
                    int best = iy * W + ix;
                    T m = pf[best];
                    const int cand[3] = {iy * W + ix + 1, (iy + 1) * W + ix, (iy + 1) * W + ix + 1};
                    for (int k = 0; k < 3; ++k)
                        if (pf[cand[k]] > m) {
                            m = pf[cand[k]];
                            best = cand[k];
                        }
                    of[oy * OW + ox] = m > T(0) ? m : T(0);
                    if (xf) xf[oy * OW + ox] = best;
                }
            }
        }
    }
}

template <typename T>
void fc_forward(const FCLayer<T>& layer, const T* in, int B, Tensor<T>& out) {
    const int D = layer.in_dim, O = layer.out_dim;
    for (int b = 0; b < B; ++b) {
        const T* xb = in + static_cast<std::size_t>(b) * D;
        T* yb = out.ptr() + static_cast<std::size_t>(b) * O;
        for (int o = 0; o < O; ++o) {
            const T* wrow = layer.weights.ptr() + static_cast<std::size_t>(o) * D;
            T acc = layer.biases[o];
            for (int d = 0; d < D; ++d) acc += wrow[d] * xb[d];
            yb[o] = acc;
        }
    }
}

}  // namespace detail

// Forward pass over a batch [B x C x H x W]. Masks are honored exactly. When
// `trace` is given, everything backward() needs is retained.
template <typename T>
Tensor<T> forward(const SequencerNet<T>& net, const Tensor<T>& batch, ForwardTrace<T>* trace = nullptr) {
    if (batch.rank() != 4)
        throw std::invalid_argument("forward: batch must be rank 4, got " + shape_str(batch.shape));
    if (batch.shape[1] != net.input_channels || batch.shape[2] != net.input_h || batch.shape[3] != net.input_w)
        throw std::invalid_argument("forward: batch shape " + shape_str(batch.shape) + " does not match net input [" +
                                    std::to_string(net.input_channels) + "x" + std::to_string(net.input_h) + "x" +
                                    std::to_string(net.input_w) + "]");
    const int B = batch.shape[0];
    const int n_conv = static_cast<int>(net.conv_layers.size());

    ForwardTrace<T> local;
    ForwardTrace<T>& tr = trace ? *trace : local;
    tr.conv_pre.assign(n_conv, {});
    tr.pool_out.assign(n_conv, {});
    tr.pool_idx.assign(n_conv, {});
    tr.fc_pre.assign(net.fc_layers.size(), {});

    const Tensor<T>* in = &batch;
    int h = net.input_h, w = net.input_w;
    for (int l = 0; l < n_conv; ++l) {
        const auto& c = net.conv_layers[l];
        auto weff = detail::effective_weights(c);
        tr.conv_pre[l] = Tensor<T>({B, c.filters, h, w});
        detail::conv_forward(c, weff, *in, tr.conv_pre[l]);
        h /= 2;
        w /= 2;
        tr.pool_out[l] = Tensor<T>({B, c.filters, h, w});
        if (trace) {
            tr.pool_idx[l] = Tensor<int>({B, c.filters, h, w});
            detail::pool_forward(tr.conv_pre[l], tr.pool_out[l], &tr.pool_idx[l]);
        } else {
            detail::pool_forward(tr.conv_pre[l], tr.pool_out[l], nullptr);
        }
        in = &tr.pool_out[l];
    }

    const T* x = tr.pool_out.back().ptr();
    std::vector<T> relu_buf;
    for (std::size_t l = 0; l < net.fc_layers.size(); ++l) {
        const auto& f = net.fc_layers[l];
        tr.fc_pre[l] = Tensor<T>({B, f.out_dim});
        detail::fc_forward(f, x, B, tr.fc_pre[l]);
        if (l + 1 < net.fc_layers.size()) {
            relu_buf.assign(tr.fc_pre[l].data.begin(), tr.fc_pre[l].data.end());
            for (auto& v : relu_buf) v = v > T(0) ? v : T(0);
            x = relu_buf.data();
        }
    }
    return tr.fc_pre.back();
}

// Softmax cross-entropy over two classes; returns mean loss and writes
// d(loss)/d(logits) when requested.
template <typename T>
double softmax_ce(const Tensor<T>& logits, const std::vector<int>& labels, Tensor<T>* dlogits = nullptr) {
    const int B = logits.shape[0], K = logits.shape[1];
    if (static_cast<int>(labels.size()) != B)
        throw std::invalid_argument("softmax_ce: labels size mismatch");
    for (int y : labels)
        if (y < 0 || y >= K) throw std::invalid_argument("softmax_ce: label outside {0,1}");
    if (dlogits) *dlogits = Tensor<T>({B, K});
    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
        const T* lb = logits.ptr() + static_cast<std::size_t>(b) * K;
        T m = lb[0];
        for (int k = 1; k < K; ++k) m = std::max(m, lb[k]);
        double sum = 0.0;
        for (int k = 0; k < K; ++k) sum += std::exp(static_cast<double>(lb[k] - m));
        const double lse = static_cast<double>(m) + std::log(sum);
        loss += lse - static_cast<double>(lb[labels[b]]);
        if (dlogits) {
            T* db = dlogits->ptr() + static_cast<std::size_t>(b) * K;
            for (int k = 0; k < K; ++k) {
                double p = std::exp(static_cast<double>(lb[k]) - lse);
                db[k] = static_cast<T>((p - (k == labels[b] ? 1.0 : 0.0)) / B);
            }
        }
    }
    return loss / B;
}

// Backpropagation of the softmax cross-entropy loss. Gradient entries of
// masked-out synapses are forced to zero. Returns the mean batch loss.
template <typename T>
double backward(const SequencerNet<T>& net, const Tensor<T>& batch, const std::vector<int>& labels,
                const ForwardTrace<T>& tr, Gradients<T>& g) {
    const int B = batch.shape[0];
    const int n_conv = static_cast<int>(net.conv_layers.size());
    const int n_fc = static_cast<int>(net.fc_layers.size());

    g.conv_w.assign(n_conv, {});
    g.conv_b.assign(n_conv, {});
    g.fc_w.assign(n_fc, {});
    g.fc_b.assign(n_fc, {});

    Tensor<T> delta;  // gradient w.r.t. current fc pre-activation
    const double loss = softmax_ce(tr.logits(), labels, &delta);

    // FC stack, last to first.
    std::vector<T> dx;
    for (int l = n_fc - 1; l >= 0; --l) {
        const auto& f = net.fc_layers[l];
        g.fc_w[l] = Tensor<T>({f.out_dim, f.in_dim});
        g.fc_b[l].assign(f.out_dim, T(0));

        // Input to this layer: relu(fc_pre[l-1]) or the flattened pool output.
        std::vector<T> xbuf;
        const T* x = nullptr;
        if (l == 0) {
            x = tr.pool_out.back().ptr();
        } else {
            xbuf.assign(tr.fc_pre[l - 1].data.begin(), tr.fc_pre[l - 1].data.end());
            for (auto& v : xbuf) v = v > T(0) ? v : T(0);
            x = xbuf.data();
        }
        for (int b = 0; b < B; ++b) {
            const T* db = delta.ptr() + static_cast<std::size_t>(b) * f.out_dim;
            const T* xb = x + static_cast<std::size_t>(b) * f.in_dim;
            for (int o = 0; o < f.out_dim; ++o) {
                const T d = db[o];
                if (d == T(0)) continue;
                g.fc_b[l][o] += d;
                T* grow = g.fc_w[l].ptr() + static_cast<std::size_t>(o) * f.in_dim;
                for (int i = 0; i < f.in_dim; ++i) grow[i] += d * xb[i];
            }
        }
        dx.assign(static_cast<std::size_t>(B) * f.in_dim, T(0));
        for (int b = 0; b < B; ++b) {
            const T* db = delta.ptr() + static_cast<std::size_t>(b) * f.out_dim;
            T* dxb = dx.data() + static_cast<std::size_t>(b) * f.in_dim;
            for (int o = 0; o < f.out_dim; ++o) {
                const T d = db[o];
                if (d == T(0)) continue;
                const T* wrow = f.weights.ptr() + static_cast<std::size_t>(o) * f.in_dim;
                for (int i = 0; i < f.in_dim; ++i) dxb[i] += d * wrow[i];
            }
        }
        if (l > 0) {
            delta = Tensor<T>({B, f.in_dim});
            const T* pre = tr.fc_pre[l - 1].ptr();
            for (std::size_t i = 0; i < delta.data.size(); ++i)
                delta.data[i] = pre[i] > T(0) ? dx[i] : T(0);
        }
    }

    // dx now holds the gradient w.r.t. the flattened last pool output.
    Tensor<T> dpool;
    dpool.shape = tr.pool_out.back().shape;
    dpool.data = std::move(dx);

    for (int l = n_conv - 1; l >= 0; --l) {
        const auto& c = net.conv_layers[l];
        const Tensor<T>& pre = tr.conv_pre[l];
        const int H = pre.shape[2], W = pre.shape[3];
        const int OH = dpool.shape[2], OW = dpool.shape[3];

        // Un-pool through the recorded argmax, gated by ReLU.
        Tensor<T> dpre({B, c.filters, H, W});
        for (int b = 0; b < B; ++b) {
            for (int f = 0; f < c.filters; ++f) {
                const std::size_t base_o = (static_cast<std::size_t>(b) * c.filters + f) * OH * OW;
                const std::size_t base_i = (static_cast<std::size_t>(b) * c.filters + f) * H * W;
                for (int i = 0; i < OH * OW; ++i) {
                    const T d = dpool.data[base_o + i];
                    if (d == T(0)) continue;
                    const int src = tr.pool_idx[l].data[base_o + i];
                    if (pre.data[base_i + src] > T(0)) dpre.data[base_i + src] += d;
                }
            }
        }

        const Tensor<T>& in = (l == 0) ? batch : tr.pool_out[l - 1];
        const int C = c.in_channels;
        const int ph = (c.kh - 1) / 2, pw = (c.kw - 1) / 2;
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        const std::size_t k_c = static_cast<std::size_t>(c.kh) * c.kw;

        g.conv_w[l] = Tensor<T>({c.filters, C, c.kh, c.kw});
        g.conv_b[l].assign(c.filters, T(0));
        Tensor<T> din;
        const bool need_din = l > 0;
        if (need_din) din = Tensor<T>({B, C, H, W});
        auto weff = detail::effective_weights(c);

        for (int b = 0; b < B; ++b) {
            const T* inb = in.ptr() + static_cast<std::size_t>(b) * C * plane;
            const T* dpb = dpre.ptr() + static_cast<std::size_t>(b) * c.filters * plane;
            for (int f = 0; f < c.filters; ++f) {
                const T* df = dpb + static_cast<std::size_t>(f) * plane;
                T bacc = T(0);
                for (std::size_t i = 0; i < plane; ++i) bacc += df[i];
                g.conv_b[l][f] += bacc;
                for (int ch = 0; ch < C; ++ch) {
                    const T* ic = inb + static_cast<std::size_t>(ch) * plane;
                    T* dw = g.conv_w[l].ptr() + (static_cast<std::size_t>(f) * C + ch) * k_c;
                    const T* wc = weff.data() + (static_cast<std::size_t>(f) * C + ch) * k_c;
                    T* dic = need_din ? din.ptr() + (static_cast<std::size_t>(b) * C + ch) * plane : nullptr;
                    for (int ky = 0; ky < c.kh; ++ky) {
                        for (int oy = std::max(0, ph - ky); oy < std::min(H, H + ph - ky); ++oy) {
                            const int iy = oy + ky - ph;
                            const T* irow = ic + static_cast<std::size_t>(iy) * W;
                            const T* drow = df + static_cast<std::size_t>(oy) * W;
                            for (int kx = 0; kx < c.kw; ++kx) {
                                const int dxo = kx - pw;
                                const int xlo = std::max(0, -dxo), xhi = std::min(W, W - dxo);
                                T acc = T(0);
                                for (int ox = xlo; ox < xhi; ++ox) acc += drow[ox] * irow[ox + dxo];
                                dw[ky * c.kw + kx] += acc;
                                if (need_din) {
                                    const T w = wc[ky * c.kw + kx];
                                    if (w != T(0)) {
                                        T* dirow = dic + static_cast<std::size_t>(iy) * W;
                                        for (int ox = xlo; ox < xhi; ++ox) dirow[ox + dxo] += w * drow[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }

        // Mask contract: pruned synapses get exactly zero gradient.
        for (std::size_t i = 0; i < g.conv_w[l].data.size(); ++i)
            if (!c.mask.bits[i]) g.conv_w[l].data[i] = T(0);
        for (int f = 0; f < c.filters; ++f)
            if (!c.filter_alive[f]) g.conv_b[l][f] = T(0);

        if (need_din) dpool = std::move(din);
    }
    return loss;
}

// Convenience wrapper matching the (net, batch, labels) contract.
template <typename T>
Gradients<T> backward(const SequencerNet<T>& net, const Tensor<T>& batch, const std::vector<int>& labels) {
    ForwardTrace<T> tr;
    forward(net, batch, &tr);
    Gradients<T> g;
    backward(net, batch, labels, tr, g);
    return g;
}

namespace detail {

template <typename T>
Tensor<T> gather_batch(const Tensor<T>& images, const std::vector<std::size_t>& order, std::size_t lo,
                       std::size_t hi) {
    const int C = images.shape[1], H = images.shape[2], W = images.shape[3];
    const std::size_t plane = static_cast<std::size_t>(C) * H * W;
    Tensor<T> out({static_cast<int>(hi - lo), C, H, W});
    for (std::size_t i = lo; i < hi; ++i)
        std::copy_n(images.ptr() + order[i] * plane, plane, out.ptr() + (i - lo) * plane);
    return out;
}

}  // namespace detail

// Mini-batch SGD with momentum. Masks are fixed for the whole run: masked
// synapses receive zero gradient, so their stored weights and velocities
// never move. Deterministic for a given cfg.seed.
template <typename T>
std::vector<double> train(SequencerNet<T>& net, const LabeledData<T>& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
    const std::size_t n = data.size();

    Gradients<T> vel;
    vel.conv_w.resize(net.conv_layers.size());
    vel.conv_b.resize(net.conv_layers.size());
    for (std::size_t l = 0; l < net.conv_layers.size(); ++l) {
        vel.conv_w[l] = Tensor<T>(net.conv_layers[l].weights.shape);
        vel.conv_b[l].assign(net.conv_layers[l].filters, T(0));
    }
    vel.fc_w.resize(net.fc_layers.size());
    vel.fc_b.resize(net.fc_layers.size());
    for (std::size_t l = 0; l < net.fc_layers.size(); ++l) {
        vel.fc_w[l] = Tensor<T>(net.fc_layers[l].weights.shape);
        vel.fc_b[l].assign(net.fc_layers[l].out_dim, T(0));
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(cfg.seed);

    const T lr = static_cast<T>(cfg.learning_rate);
    const T mu = static_cast<T>(cfg.momentum);
    std::vector<double> trace;
    trace.reserve(cfg.epochs);

    ForwardTrace<T> tr;
    Gradients<T> g;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
            const std::size_t hi = std::min(n, lo + cfg.batch_size);
            Tensor<T> batch = detail::gather_batch(data.images, order, lo, hi);
            std::vector<int> labels(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) labels[i - lo] = data.labels[order[i]];

            forward(net, batch, &tr);
            const double loss = backward(net, batch, labels, tr, g);
            epoch_loss += loss * static_cast<double>(hi - lo);

            auto update = [&](Tensor<T>& w, Tensor<T>& v, const Tensor<T>& grad) {
                for (std::size_t i = 0; i < w.data.size(); ++i) {
                    v.data[i] = mu * v.data[i] - lr * grad.data[i];
                    w.data[i] += v.data[i];
                }
            };
            for (std::size_t l = 0; l < net.conv_layers.size(); ++l) {
                auto& c = net.conv_layers[l];
                // Zero gradient at masked coords keeps velocity zero there, so
                // stored masked weights are untouched.
                update(c.weights, vel.conv_w[l], g.conv_w[l]);
                for (int f = 0; f < c.filters; ++f) {
                    vel.conv_b[l][f] = mu * vel.conv_b[l][f] - lr * g.conv_b[l][f];
                    c.biases[f] += vel.conv_b[l][f];
                }
            }
            for (std::size_t l = 0; l < net.fc_layers.size(); ++l) {
                auto& f = net.fc_layers[l];
                update(f.weights, vel.fc_w[l], g.fc_w[l]);
                for (int o = 0; o < f.out_dim; ++o) {
                    vel.fc_b[l][o] = mu * vel.fc_b[l][o] - lr * g.fc_b[l][o];
                    f.biases[o] += vel.fc_b[l][o];
                }
            }
        }
        trace.push_back(epoch_loss / static_cast<double>(n));
    }
    return trace;
}

struct TimingResult {
    double median_s = 0.0;
    std::vector<double> repeat_s;
};

// Median wall-clock seconds for full forward passes over n_samples random
// inputs. Input generation happens before the clock starts.
template <typename T>
TimingResult time_forward(const SequencerNet<T>& net, int n_samples, int batch_size, int repeats,
                          std::uint64_t seed = 12345) {
    if (n_samples < 1) throw std::invalid_argument("time_forward: n_samples must be >= 1");
    if (batch_size < 1 || repeats < 1) throw std::invalid_argument("time_forward: bad batch_size/repeats");

    Rng rng(seed);
    const int nb = std::min(n_samples, batch_size);
    Tensor<T> batch({nb, net.input_channels, net.input_h, net.input_w});
    for (auto& v : batch.data) v = static_cast<T>(rng.uniform());

    volatile double sink = 0.0;
    TimingResult res;
    res.repeat_s.reserve(repeats);
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        int done = 0;
        while (done < n_samples) {
            const int take = std::min(nb, n_samples - done);
            if (take == nb) {
                Tensor<T> logits = forward(net, batch);
                sink = sink + static_cast<double>(logits.data[0]);
            } else {
                Tensor<T> part({take, net.input_channels, net.input_h, net.input_w});
                std::copy_n(batch.ptr(), part.count(), part.ptr());
                Tensor<T> logits = forward(net, part);
                sink = sink + static_cast<double>(logits.data[0]);
            }
            done += take;
        }
        const auto t1 = std::chrono::steady_clock::now();
        res.repeat_s.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::vector<double> sorted = res.repeat_s;
    std::sort(sorted.begin(), sorted.end());
    res.median_s = sorted.size() % 2 ? sorted[sorted.size() / 2]
                                     : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
    (void)sink;
    return res;
}

}  // namespace edrs
