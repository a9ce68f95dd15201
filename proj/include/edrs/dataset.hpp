#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "edrs/engine.hpp"
#include "edrs/rng.hpp"
#include "edrs/tensor.hpp"

namespace edrs {

inline constexpr int kPatchSize = 32;

// One labeled 32x32 patch with provenance. malignant = 1, benign = 0.
struct PatchRecord {
    Tensor<float> image;  // [32 x 32], intensities in [0,1]
    int label = 0;
    std::string patient_id;
    std::string lesion_id;
    double rotation_deg = 0.0;
    bool is_augmented = false;
};

struct AugmentConfig {
    double malignant_step_deg = 45.0;
    double benign_step_deg = 10.0;

    void validate() const {
        for (double step : {malignant_step_deg, benign_step_deg}) {
            if (!(step > 0.0) || std::abs(std::remainder(360.0, step)) > 1e-9)
                throw std::invalid_argument("AugmentConfig: step " + std::to_string(step) +
                                            " does not divide 360 evenly");
        }
    }
};

struct FoldSplit {
    int n_folds = 10;
    std::map<std::string, int> assignment;  // patient_id -> fold

    int fold_of(const std::string& patient_id) const {
        auto it = assignment.find(patient_id);
        if (it == assignment.end())
            throw std::invalid_argument("FoldSplit: unknown patient " + patient_id);
        return it->second;
    }
};

namespace detail {

// Smooth edge falloff; d is the signed distance outside the lesion boundary.
inline double edge_profile(double d, double width) { return 1.0 / (1.0 + std::exp(d / width)); }

}  // namespace detail

// Synthetic lung-nodule stand-in. Malignant lesions are anisotropic with a
// spiculated high-frequency boundary and speckled interior; benign lesions
// are near-isotropic with a smooth wide edge. Peak intensity, covered area
// and background level share the same distributions across classes, so a
// brightness threshold alone stays near chance while shape and texture carry
// the label.
inline std::vector<PatchRecord> generate_synthetic(int n_patients, int lesions_per_patient,
                                                   std::uint64_t seed) {
    if (n_patients < 1 || lesions_per_patient < 1)
        throw std::invalid_argument("generate_synthetic: counts must be >= 1");

    std::vector<PatchRecord> records;
    records.reserve(static_cast<std::size_t>(n_patients) * lesions_per_patient);

    for (int p = 1; p <= n_patients; ++p) {
        for (int l = 1; l <= lesions_per_patient; ++l) {
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(l), "lesion"));
            PatchRecord rec;
            rec.patient_id = "p" + std::to_string(p);
            rec.lesion_id = "l" + std::to_string(l);
            rec.label = rng.uniform() < 0.5 ? 1 : 0;

            const bool malignant = rec.label == 1;
            const double background = rng.uniform(0.10, 0.16);
            const double cx = 15.5 + rng.uniform(-3.0, 3.0);
            const double cy = 15.5 + rng.uniform(-3.0, 3.0);
            const double r0 = rng.uniform(5.5, 9.5);
            const double peak = rng.uniform(0.55, 0.80);
            const double phi = rng.uniform(0.0, 3.14159265358979323846);
            const double stretch = malignant ? rng.uniform(1.35, 1.80) : rng.uniform(1.00, 1.15);
            // Equal-area semi-axes: r0*sqrt(stretch) by r0/sqrt(stretch).
            const double ax = r0 * std::sqrt(stretch);
            const double ay = r0 / std::sqrt(stretch);
            const double edge_width = malignant ? rng.uniform(0.5, 0.9) : rng.uniform(1.8, 2.8);
            // Interior texture: malignant carries per-pixel speckle, benign a
            // smooth low-frequency modulation. Amplitudes are chosen so both
            // survive a 3x3 mean filter at about the same strength.
            const double speckle_amp = malignant ? 0.13 : 0.0;
            const double wave_amp = malignant ? 0.0 : 0.05;
            const double wave_kx = rng.uniform(-2.0, 2.0) * 6.283185307179586 / kPatchSize;
            const double wave_ky = rng.uniform(-2.0, 2.0) * 6.283185307179586 / kPatchSize;
            const double wave_phase = rng.uniform(0.0, 6.283185307179586);

            int n_spikes = 0;
            double spike_amp[3], spike_freq[3], spike_phase[3];
            if (malignant) {
                n_spikes = 3;
                for (int s = 0; s < 3; ++s) {
                    spike_amp[s] = rng.uniform(0.05, 0.11);
                    spike_freq[s] = 5.0 + 2.0 * s;
                    spike_phase[s] = rng.uniform(0.0, 6.283185307179586);
                }
            } else {
                n_spikes = 1;
                spike_amp[0] = rng.uniform(0.02, 0.05);
                spike_freq[0] = 2.0;
                spike_phase[0] = rng.uniform(0.0, 6.283185307179586);
            }

            rec.image = Tensor<float>({kPatchSize, kPatchSize});
            const double cphi = std::cos(phi), sphi = std::sin(phi);
            // Normalizing by the center response keeps the interior level
            // independent of the edge width.
            const double center_level = detail::edge_profile(-r0, edge_width);
            for (int y = 0; y < kPatchSize; ++y) {
                for (int x = 0; x < kPatchSize; ++x) {
                    const double dx = x - cx, dy = y - cy;
                    const double u = (dx * cphi + dy * sphi) / ax;
                    const double v = (-dx * sphi + dy * cphi) / ay;
                    const double rho = std::sqrt(u * u + v * v);
                    const double theta = std::atan2(v, u);
                    double boundary = 1.0;
                    for (int s = 0; s < n_spikes; ++s)
                        boundary += spike_amp[s] * std::sin(spike_freq[s] * theta + spike_phase[s]);
                    // rho is normalized: the lesion boundary sits at rho == boundary.
                    const double d = (rho - boundary) * r0;
                    double blob = peak * std::min(1.0, detail::edge_profile(d, edge_width) / center_level);
                    double texture = speckle_amp * rng.uniform(-1.0, 1.0) +
                                     wave_amp * std::sin(wave_kx * x + wave_ky * y + wave_phase);
                    blob *= 1.0 + texture;
                    double val = background + rng.normal() * 0.02 + blob;
                    rec.image.at(0, 0, y, x) = static_cast<float>(std::clamp(val, 0.0, 1.0));
                }
            }
            records.push_back(std::move(rec));
        }
    }
    return records;
}

// Bilinear rotation about the patch center; samples falling outside the
// source are filled with the mean of the source border ring.
inline Tensor<float> rotate_bilinear(const Tensor<float>& img, double degrees) {
    const int H = img.shape[0], W = img.shape[1];
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    const double rad = degrees * 3.14159265358979323846 / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);

    double border = 0.0;
    int border_n = 0;
    for (int x = 0; x < W; ++x) {
        border += img.data[x] + img.data[static_cast<std::size_t>(H - 1) * W + x];
        border_n += 2;
    }
    for (int y = 1; y + 1 < H; ++y) {
        border += img.data[static_cast<std::size_t>(y) * W] + img.data[static_cast<std::size_t>(y) * W + W - 1];
        border_n += 2;
    }
    const double fill = border / border_n;

    Tensor<float> out({H, W});
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            // Inverse map: rotate the output pixel back into source coords.
            const double sx = c * (x - cx) + s * (y - cy) + cx;
            const double sy = -s * (x - cx) + c * (y - cy) + cy;
            const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            auto sample = [&](int yy, int xx) -> double {
                if (yy < 0 || yy >= H || xx < 0 || xx >= W) return fill;
                return img.data[static_cast<std::size_t>(yy) * W + xx];
            };
            const double v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                             fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
            out.data[static_cast<std::size_t>(y) * W + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return out;
}

// Class-conditional rotation enrichment: malignant lesions every
// malignant_step_deg, benign every benign_step_deg, 0 deg included (the base
// record itself).
inline std::vector<PatchRecord> augment(const std::vector<PatchRecord>& records, const AugmentConfig& cfg) {
    cfg.validate();
    for (const auto& r : records)
        if (r.is_augmented)
            throw std::invalid_argument("augment: input already contains augmented records");

    std::vector<PatchRecord> out;
    for (const auto& r : records) {
        const double step = r.label == 1 ? cfg.malignant_step_deg : cfg.benign_step_deg;
        const int n = static_cast<int>(std::llround(360.0 / step));
        for (int k = 0; k < n; ++k) {
            if (k == 0) {
                out.push_back(r);
                continue;
            }
            PatchRecord rec = r;
            rec.rotation_deg = k * step;
            rec.is_augmented = true;
            rec.image = rotate_bilinear(r.image, rec.rotation_deg);
            out.push_back(std::move(rec));
        }
    }
    return out;
}

// Patient-level fold assignment: patients shuffled once, then dealt
// round-robin, so fold sizes differ by at most one patient.
inline FoldSplit split_folds(const std::vector<PatchRecord>& records, int n_folds, std::uint64_t seed) {
    if (n_folds < 1) throw std::invalid_argument("split_folds: n_folds must be >= 1");
    std::vector<std::string> patients;
    std::set<std::string> seen;
    for (const auto& r : records)
        if (seen.insert(r.patient_id).second) patients.push_back(r.patient_id);
    if (static_cast<int>(patients.size()) < n_folds)
        throw std::invalid_argument("split_folds: fewer patients (" + std::to_string(patients.size()) +
                                    ") than folds (" + std::to_string(n_folds) + ")");

    Rng rng(derive_seed(seed, 0, 0, "fold-split"));
    rng.shuffle(patients);
    FoldSplit split;
    split.n_folds = n_folds;
    for (std::size_t i = 0; i < patients.size(); ++i)
        split.assignment[patients[i]] = static_cast<int>(i % n_folds);
    return split;
}

// Materializes a subset of records as an engine batch tensor.
template <typename T>
LabeledData<T> to_labeled(const std::vector<PatchRecord>& records, const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw std::invalid_argument("to_labeled: empty selection");
    LabeledData<T> data;
    data.images = Tensor<T>({static_cast<int>(idx.size()), 1, kPatchSize, kPatchSize});
    data.labels.resize(idx.size());
    const std::size_t plane = static_cast<std::size_t>(kPatchSize) * kPatchSize;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& r = records[idx[i]];
        for (std::size_t j = 0; j < plane; ++j)
            data.images.data[i * plane + j] = static_cast<T>(r.image.data[j]);
        data.labels[i] = r.label;
    }
    return data;
}

}  // namespace edrs
