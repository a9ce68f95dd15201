#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace edrs {

// Confusion counts with malignant as the positive class.
struct ConfusionCounts {
    long long tp = 0, fp = 0, tn = 0, fn = 0;

    long long total() const { return tp + fp + tn + fn; }

    void add(int predicted, int label) {
        if (label == 1)
            (predicted == 1 ? tp : fn) += 1;
        else
            (predicted == 0 ? tn : fp) += 1;
    }
};

struct Metrics {
    double sensitivity = 0.0;  // NaN when no positive cases
    double specificity = 0.0;  // NaN when no negative cases
    double accuracy = 0.0;
};

inline Metrics compute_metrics(const ConfusionCounts& c) {
    if (c.total() == 0) throw std::invalid_argument("compute_metrics: empty confusion counts");
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    Metrics m;
    m.sensitivity = (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : nan;
    m.specificity = (c.tn + c.fp) > 0 ? static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp) : nan;
    m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    return m;
}

struct MeanStd {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double std_dev = std::numeric_limits<double>::quiet_NaN();
    int n = 0;
};

// Mean and sample standard deviation with NaN entries excluded (undefined
// per-fold metrics are flagged, not averaged).
inline MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd out;
    double sum = 0.0;
    for (double x : xs)
        if (!std::isnan(x)) {
            sum += x;
            ++out.n;
        }
    if (out.n == 0) return out;
    out.mean = sum / out.n;
    if (out.n == 1) {
        out.std_dev = 0.0;
        return out;
    }
    double ss = 0.0;
    for (double x : xs)
        if (!std::isnan(x)) ss += (x - out.mean) * (x - out.mean);
    out.std_dev = std::sqrt(ss / (out.n - 1));
    return out;
}

}  // namespace edrs
