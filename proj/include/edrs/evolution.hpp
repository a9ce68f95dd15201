#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "edrs/net.hpp"
#include "edrs/rng.hpp"
#include "edrs/tensor.hpp"

namespace edrs {

// How ancestor weight magnitude maps to a synthesis probability. Both laws
// are monotone in |w|; Exp is the default, Linear is kept as a configurable
// alternative.
enum class ProbLaw { Exp, Linear };

inline ProbLaw prob_law_from_string(const std::string& s) {
    if (s == "exp") return ProbLaw::Exp;
    if (s == "linear") return ProbLaw::Linear;
    throw std::invalid_argument("unknown probability law: " + s);
}

inline const char* to_string(ProbLaw law) { return law == ProbLaw::Exp ? "exp" : "linear"; }

// Cluster-level and synapse-level synthesis probabilities derived from a
// trained ancestor's weights. One cluster == one convolutional filter.
struct ProbabilisticDNA {
    struct Layer {
        std::vector<double> cluster;  // per filter
        std::vector<double> synapse;  // per synapse, weight-tensor order
    };
    std::vector<Layer> layers;
    ProbLaw law = ProbLaw::Exp;
};

namespace detail {

inline double prob_of(double mag, double z, ProbLaw law) {
    if (law == ProbLaw::Linear) return mag / z;
    return std::exp(mag / z - 1.0);
}

}  // namespace detail

// Per-layer synapse probabilities: with Z the max |w| over the layer's active
// synapses, an active synapse gets p = exp(|w|/Z - 1) (range [1/e, 1]) and an
// inactive one exactly 0. An all-zero layer yields all zeros.
template <typename T>
std::vector<std::vector<double>> compute_synapse_probs(const SequencerNet<T>& ancestor,
                                                       ProbLaw law = ProbLaw::Exp) {
    std::vector<std::vector<double>> out;
    out.reserve(ancestor.conv_layers.size());
    for (const auto& c : ancestor.conv_layers) {
        const std::size_t n = c.weights.data.size();
        std::vector<double> probs(n, 0.0);
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (c.mask.bits[i]) z = std::max(z, std::abs(static_cast<double>(c.weights.data[i])));
        if (z > 0.0) {
            for (std::size_t i = 0; i < n; ++i)
                if (c.mask.bits[i])
                    probs[i] = detail::prob_of(std::abs(static_cast<double>(c.weights.data[i])), z, law);
        }
        out.push_back(std::move(probs));
    }
    return out;
}

// Per-layer cluster probabilities: for filter c with mean active-synapse
// magnitude m_c, p_c = exp(m_c/Z - 1) against the same layer Z. A filter with
// no active synapses gets exactly 0.
template <typename T>
std::vector<std::vector<double>> compute_cluster_probs(const SequencerNet<T>& ancestor,
                                                       ProbLaw law = ProbLaw::Exp) {
    std::vector<std::vector<double>> out;
    out.reserve(ancestor.conv_layers.size());
    for (const auto& c : ancestor.conv_layers) {
        const std::size_t per = c.synapses_per_filter();
        std::vector<double> probs(c.filters, 0.0);
        double z = 0.0;
        for (std::size_t i = 0; i < c.weights.data.size(); ++i)
            if (c.mask.bits[i]) z = std::max(z, std::abs(static_cast<double>(c.weights.data[i])));
        if (z > 0.0) {
            for (int f = 0; f < c.filters; ++f) {
                double sum = 0.0;
                std::size_t active = 0;
                for (std::size_t i = 0; i < per; ++i) {
                    const std::size_t idx = f * per + i;
                    if (c.mask.bits[idx]) {
                        sum += std::abs(static_cast<double>(c.weights.data[idx]));
                        ++active;
                    }
                }
                if (active > 0) probs[f] = detail::prob_of(sum / static_cast<double>(active), z, law);
            }
        }
        out.push_back(std::move(probs));
    }
    return out;
}

template <typename T>
ProbabilisticDNA compute_dna(const SequencerNet<T>& ancestor, ProbLaw law = ProbLaw::Exp) {
    ProbabilisticDNA dna;
    dna.law = law;
    auto cluster = compute_cluster_probs(ancestor, law);
    auto synapse = compute_synapse_probs(ancestor, law);
    dna.layers.resize(cluster.size());
    for (std::size_t l = 0; l < cluster.size(); ++l) {
        dna.layers[l].cluster = std::move(cluster[l]);
        dna.layers[l].synapse = std::move(synapse[l]);
    }
    return dna;
}

// The retained-synapse budget plus the scaling that enforces it: a single
// alpha multiplies cluster and synapse probabilities (clamped at 1) so the
// expected offspring active count meets round(retain_fraction * ancestor).
struct EnvironmentalFactor {
    double retain_fraction = 0.8;
    double alpha = 0.0;
    long long target_count = 0;
    double expected_count = 0.0;  // E(alpha) at the calibrated alpha
};

// Expected active synapse count of an offspring sampled at scaling alpha:
// E(alpha) = sum_c min(1, a*p_c) * sum_{i in c} min(1, a*p_i).
inline double expected_active(const ProbabilisticDNA& dna, double alpha,
                              const std::vector<std::size_t>& synapses_per_filter) {
    double total = 0.0;
    for (std::size_t l = 0; l < dna.layers.size(); ++l) {
        const auto& lay = dna.layers[l];
        const std::size_t per = synapses_per_filter[l];
        for (std::size_t f = 0; f < lay.cluster.size(); ++f) {
            const double qc = std::min(1.0, alpha * lay.cluster[f]);
            if (qc == 0.0) continue;
            double inner = 0.0;
            for (std::size_t i = 0; i < per; ++i)
                inner += std::min(1.0, alpha * lay.synapse[f * per + i]);
            total += qc * inner;
        }
    }
    return total;
}

template <typename T>
std::vector<std::size_t> synapses_per_filter_of(const SequencerNet<T>& net) {
    std::vector<std::size_t> out;
    out.reserve(net.conv_layers.size());
    for (const auto& c : net.conv_layers) out.push_back(c.synapses_per_filter());
    return out;
}

// Bisection on alpha: E is continuous and non-decreasing, so double an upper
// bound until E(A) >= target, then bisect until E lands within 0.1% of the
// target. Pure function of (dna, retain_fraction, ancestor_active).
inline EnvironmentalFactor calibrate_alpha(const ProbabilisticDNA& dna, double retain_fraction,
                                           long long ancestor_active,
                                           const std::vector<std::size_t>& synapses_per_filter) {
    if (!(retain_fraction > 0.0) || retain_fraction > 1.0)
        throw std::invalid_argument("calibrate_alpha: retain_fraction must be in (0,1]");
    if (ancestor_active < 0) throw std::invalid_argument("calibrate_alpha: negative ancestor_active");

    EnvironmentalFactor env;
    env.retain_fraction = retain_fraction;
    env.target_count = std::llround(retain_fraction * static_cast<double>(ancestor_active));
    if (env.target_count > ancestor_active)
        throw std::invalid_argument("calibrate_alpha: target exceeds ancestor active synapses");

    const double target = static_cast<double>(env.target_count);
    const double tol = std::max(1e-3 * target, 1e-9);

    // Saturation ceiling: every nonzero probability clamped to 1.
    double e_max = 0.0;
    for (std::size_t l = 0; l < dna.layers.size(); ++l) {
        const auto& lay = dna.layers[l];
        const std::size_t per = synapses_per_filter[l];
        for (std::size_t f = 0; f < lay.cluster.size(); ++f) {
            if (lay.cluster[f] <= 0.0) continue;
            std::size_t inner = 0;
            for (std::size_t i = 0; i < per; ++i)
                if (lay.synapse[f * per + i] > 0.0) ++inner;
            e_max += static_cast<double>(inner);
        }
    }
    if (target > e_max + tol)
        throw std::invalid_argument("calibrate_alpha: budget unreachable, expected ceiling " +
                                    std::to_string(e_max) + " below target " + std::to_string(env.target_count));

    double hi = 1.0;
    while (expected_active(dna, hi, synapses_per_filter) < target) {
        hi *= 2.0;
        if (hi > 1e12)
            throw std::runtime_error("calibrate_alpha: failed to bracket target");
    }
    // Bisect to interval exhaustion; E is continuous, so the limit point
    // satisfies the 0.1% expectation tolerance with plenty of margin.
    double lo = 0.0;
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (expected_active(dna, mid, synapses_per_filter) < target)
            lo = mid;
        else
            hi = mid;
    }
    env.alpha = 0.5 * (lo + hi);
    env.expected_count = expected_active(dna, env.alpha, synapses_per_filter);
    if (std::abs(env.expected_count - target) > tol)
        throw std::runtime_error("calibrate_alpha: calibration residual above tolerance");
    return env;
}

template <typename T>
EnvironmentalFactor calibrate_alpha(const ProbabilisticDNA& dna, double retain_fraction,
                                    const SequencerNet<T>& ancestor) {
    return calibrate_alpha(dna, retain_fraction, static_cast<long long>(count_active_synapses(ancestor)),
                           synapses_per_filter_of(ancestor));
}

// One sampled offspring structure: per-layer masks and filter survival, plus
// the realized active count of the sampled mask.
struct SynthesisOutcome {
    std::vector<Mask> offspring_mask;
    std::vector<std::vector<std::uint8_t>> offspring_filter_alive;
    long long realized_active_count = 0;
    std::uint64_t rng_seed = 0;
};

// Stochastic synthesis: each filter survives with probability min(1, a*p_c);
// a surviving filter's synapses survive independently with min(1, a*p_i). A
// layer that loses every filter gets its strongest filter forced back alive.
template <typename T>
SynthesisOutcome synthesize_offspring(const SequencerNet<T>& ancestor, const EnvironmentalFactor& env,
                                      const ProbabilisticDNA& dna, std::uint64_t seed) {
    if (dna.layers.size() != ancestor.conv_layers.size())
        throw std::invalid_argument("synthesize_offspring: dna/ancestor layer count mismatch");

    Rng rng(seed);
    SynthesisOutcome out;
    out.rng_seed = seed;
    out.offspring_mask.reserve(ancestor.conv_layers.size());
    out.offspring_filter_alive.reserve(ancestor.conv_layers.size());

    for (std::size_t l = 0; l < ancestor.conv_layers.size(); ++l) {
        const auto& c = ancestor.conv_layers[l];
        const auto& lay = dna.layers[l];
        const std::size_t per = c.synapses_per_filter();
        Mask mask(c.weights.shape, 0);
        std::vector<std::uint8_t> alive(c.filters, 0);

        auto sample_filter = [&](int f, bool forced) {
            const double qc = std::min(1.0, env.alpha * lay.cluster[f]);
            if (!forced && rng.uniform() >= qc) return false;
            for (std::size_t i = 0; i < per; ++i) {
                const std::size_t idx = f * per + i;
                const double qi = std::min(1.0, env.alpha * lay.synapse[idx]);
                if (qi <= 0.0) continue;
                if (rng.uniform() < qi) mask.bits[idx] = 1;
            }
            return true;
        };

        for (int f = 0; f < c.filters; ++f)
            if (sample_filter(f, false)) alive[f] = 1;

        if (std::count(alive.begin(), alive.end(), std::uint8_t(1)) == 0) {
            // Layer extinction guard: force the strongest cluster back.
            int best = 0;
            for (int f = 1; f < c.filters; ++f)
                if (lay.cluster[f] > lay.cluster[best]) best = f;
            sample_filter(best, true);
            alive[best] = 1;
        }

        out.realized_active_count += static_cast<long long>(mask.count_ones());
        out.offspring_mask.push_back(std::move(mask));
        out.offspring_filter_alive.push_back(std::move(alive));
    }
    return out;
}

// Zeroes first-FC weights that read features produced by dead last-conv
// filters. Those features are identically zero, so the weights stay frozen
// through any subsequent training.
template <typename T>
void zero_dead_feature_columns(SequencerNet<T>& net) {
    const auto& last = net.conv_layers.back();
    auto [h, w] = net.spatial_after(static_cast<int>(net.conv_layers.size()) - 1);
    const int hw = h * w;
    auto& fc = net.fc_layers.front();
    for (int f = 0; f < last.filters; ++f) {
        if (last.filter_alive[f]) continue;
        for (int o = 0; o < fc.out_dim; ++o) {
            T* row = fc.weights.ptr() + static_cast<std::size_t>(o) * fc.in_dim;
            for (int s = 0; s < hw; ++s) row[f * hw + s] = T(0);
        }
    }
}

// Builds the offspring network: ancestor weights inherited at surviving
// synapses, sampled masks applied, and synapses reading a channel whose
// producing filter died forced dead so the net stays equivalent to its
// physically shrunk form.
template <typename T>
SequencerNet<T> build_offspring_net(const SequencerNet<T>& ancestor, const SynthesisOutcome& outcome) {
    if (outcome.offspring_mask.size() != ancestor.conv_layers.size())
        throw std::invalid_argument("build_offspring_net: outcome/ancestor layer count mismatch");

    SequencerNet<T> net = ancestor;
    net.generation = ancestor.generation + 1;

    for (std::size_t l = 0; l < net.conv_layers.size(); ++l) {
        auto& c = net.conv_layers[l];
        const Mask& m = outcome.offspring_mask[l];
        if (m.shape != c.weights.shape)
            throw std::invalid_argument("build_offspring_net: mask shape mismatch at layer " + std::to_string(l));
        for (std::size_t i = 0; i < m.bits.size(); ++i)
            if (m.bits[i] && !c.mask.bits[i])
                throw std::invalid_argument("build_offspring_net: outcome not a subset of ancestor mask");
        c.mask = m;
        c.filter_alive = outcome.offspring_filter_alive[l];

        // Kill synapses that read a channel whose producing filter died.
        if (l > 0) {
            const auto& prev_alive = net.conv_layers[l - 1].filter_alive;
            const std::size_t k_c = static_cast<std::size_t>(c.kh) * c.kw;
            for (int f = 0; f < c.filters; ++f)
                for (int ch = 0; ch < c.in_channels; ++ch)
                    if (!prev_alive[ch]) {
                        const std::size_t base = (static_cast<std::size_t>(f) * c.in_channels + ch) * k_c;
                        for (std::size_t k = 0; k < k_c; ++k) c.mask.bits[base + k] = 0;
                    }
        }
        c.enforce_mask();
    }
    zero_dead_feature_columns(net);
    net.validate();
    return net;
}

}  // namespace edrs
