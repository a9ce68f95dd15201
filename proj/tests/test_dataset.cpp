#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "edrs/dataset.hpp"
#include "edrs/pgm_io.hpp"

using namespace edrs;

namespace {

// Best-threshold accuracy of a scalar feature over labeled samples, both
// polarities, threshold chosen with full knowledge of the labels. This is the
// bar the synthetic classes must stay under when the feature is brightness.
double best_threshold_accuracy(std::vector<std::pair<double, int>> feats) {
    std::sort(feats.begin(), feats.end());
    const int n = static_cast<int>(feats.size());
    int pos = 0;
    for (const auto& [f, y] : feats) pos += y;
    // Sweep: classify "feature > t as positive" and the reverse.
    int best = std::max(pos, n - pos);
    int pos_below = 0, below = 0;
    for (int i = 0; i < n; ++i) {
        pos_below += feats[i].second;
        ++below;
        const int correct_hi = (pos - pos_below) + (below - pos_below);  // above = positive
        const int correct_lo = pos_below + ((n - below) - (pos - pos_below));
        best = std::max({best, correct_hi, correct_lo});
    }
    return static_cast<double>(best) / n;
}

double box3_mean_max(const Tensor<float>& img) {
    const int H = img.shape[0], W = img.shape[1];
    double best = 0.0;
    for (int y = 1; y + 1 < H; ++y)
        for (int x = 1; x + 1 < W; ++x) {
            double s = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) s += img.data[static_cast<std::size_t>(y + dy) * W + x + dx];
            best = std::max(best, s / 9.0);
        }
    return best;
}

double patch_mean(const Tensor<float>& img) {
    double s = 0.0;
    for (float v : img.data) s += v;
    return s / static_cast<double>(img.data.size());
}

std::filesystem::path fresh_dir(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / "edrs_test" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic and well ranged") {
    auto records = generate_synthetic(93, 1, 42);
    REQUIRE(records.size() == 93);

    std::set<std::string> patients;
    int malignant = 0;
    for (const auto& r : records) {
        patients.insert(r.patient_id);
        malignant += r.label;
        REQUIRE_FALSE(r.is_augmented);
        REQUIRE(r.rotation_deg == 0.0);
        for (float v : r.image.data) {
            REQUIRE(std::isfinite(v));
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
        }
        const double m = patch_mean(r.image);
        REQUIRE(m > 0.0);
        REQUIRE(m < 1.0);
    }
    REQUIRE(patients.size() == 93);
    REQUIRE(malignant > 20);
    REQUIRE(malignant < 73);

    SECTION("same seed reproduces the byte-identical dataset") {
        auto again = generate_synthetic(93, 1, 42);
        for (std::size_t i = 0; i < records.size(); ++i) {
            REQUIRE(again[i].label == records[i].label);
            REQUIRE(again[i].image.data == records[i].image.data);
        }
        auto other = generate_synthetic(93, 1, 43);
        bool any_diff = false;
        for (std::size_t i = 0; i < records.size(); ++i)
            any_diff = any_diff || other[i].image.data != records[i].image.data;
        REQUIRE(any_diff);
    }

    SECTION("input validation") {
        REQUIRE_THROWS_AS(generate_synthetic(0, 1, 1), std::invalid_argument);
        REQUIRE_THROWS_AS(generate_synthetic(1, 0, 1), std::invalid_argument);
    }
}

TEST_CASE("brightness thresholds cannot separate the synthetic classes") {
    auto records = generate_synthetic(150, 1, 42);
    std::vector<std::pair<double, int>> by_box, by_mean;
    for (const auto& r : records) {
        by_box.emplace_back(box3_mean_max(r.image), r.label);
        by_mean.emplace_back(patch_mean(r.image), r.label);
    }
    REQUIRE(best_threshold_accuracy(by_box) < 0.75);
    REQUIRE(best_threshold_accuracy(by_mean) < 0.75);
}

TEST_CASE("augmentation produces 8 malignant and 36 benign variants per lesion") {
    auto records = generate_synthetic(30, 1, 7);
    int malignant = 0, benign = 0;
    for (const auto& r : records) (r.label == 1 ? malignant : benign) += 1;

    auto augmented = augment(records, AugmentConfig{});
    REQUIRE(augmented.size() == static_cast<std::size_t>(8 * malignant + 36 * benign));

    std::map<std::string, int> per_lesion;
    for (const auto& r : augmented) per_lesion[r.patient_id + "/" + r.lesion_id] += 1;
    for (const auto& r : records) {
        const int expect = r.label == 1 ? 8 : 36;
        REQUIRE(per_lesion[r.patient_id + "/" + r.lesion_id] == expect);
    }

    SECTION("the zero-degree record is the base image itself") {
        // First variant of each lesion is the unrotated original.
        REQUIRE(augmented[0].rotation_deg == 0.0);
        REQUIRE_FALSE(augmented[0].is_augmented);
        REQUIRE(augmented[0].image.data == records[0].image.data);
        REQUIRE(augmented[1].is_augmented);
        REQUIRE(augmented[1].rotation_deg > 0.0);
    }

    SECTION("augmenting twice is rejected") {
        REQUIRE_THROWS_AS(augment(augmented, AugmentConfig{}), std::invalid_argument);
    }

    SECTION("steps that do not divide 360 are rejected") {
        AugmentConfig bad;
        bad.benign_step_deg = 7.0;
        REQUIRE_THROWS_AS(augment(records, bad), std::invalid_argument);
    }
}

TEST_CASE("bilinear rotation is exact on axis-aligned cases") {
    SECTION("rotation by 0 degrees is the identity") {
        auto records = generate_synthetic(1, 1, 3);
        auto rot = rotate_bilinear(records[0].image, 0.0);
        for (std::size_t i = 0; i < rot.data.size(); ++i) REQUIRE(rot.data[i] == records[0].image.data[i]);
    }

    SECTION("rotation by 90 degrees maps a symmetric cross onto itself") {
        Tensor<float> cross({32, 32});
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                if ((x >= 14 && x <= 17) || (y >= 14 && y <= 17))
                    cross.data[static_cast<std::size_t>(y) * 32 + x] = 0.8f;
        auto rot = rotate_bilinear(cross, 90.0);
        for (std::size_t i = 0; i < rot.data.size(); ++i)
            REQUIRE(std::abs(rot.data[i] - cross.data[i]) <= 1e-6f);
    }

    SECTION("rotated values stay clamped to [0,1]") {
        auto records = generate_synthetic(2, 1, 9);
        auto rot = rotate_bilinear(records[0].image, 33.0);
        for (float v : rot.data) {
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
        }
    }
}

TEST_CASE("fold splitting is patient-disjoint with balanced sizes") {
    auto records = generate_synthetic(93, 2, 11);
    auto augmented = augment(records, AugmentConfig{});
    auto split = split_folds(augmented, 10, 1234);

    std::map<int, std::set<std::string>> patients_by_fold;
    for (const auto& [patient, fold] : split.assignment) {
        REQUIRE(fold >= 0);
        REQUIRE(fold < 10);
        patients_by_fold[fold].insert(patient);
    }
    REQUIRE(split.assignment.size() == 93);

    // 93 = 3 folds of 10 patients + 7 folds of 9.
    int tens = 0, nines = 0;
    for (const auto& [fold, ps] : patients_by_fold) {
        if (ps.size() == 10) ++tens;
        if (ps.size() == 9) ++nines;
    }
    REQUIRE(tens == 3);
    REQUIRE(nines == 7);

    SECTION("every augmented variant of a lesion lands in one fold") {
        std::map<std::string, std::set<int>> folds_per_lesion;
        for (const auto& r : augmented)
            folds_per_lesion[r.patient_id + "/" + r.lesion_id].insert(split.fold_of(r.patient_id));
        for (const auto& [lesion, folds] : folds_per_lesion) REQUIRE(folds.size() == 1);
    }

    SECTION("no patient appears in two folds by construction, and sides partition") {
        for (int f = 0; f < 10; ++f) {
            std::set<std::string> train_side, test_side;
            for (const auto& r : augmented)
                (split.fold_of(r.patient_id) == f ? test_side : train_side).insert(r.patient_id);
            std::vector<std::string> overlap;
            std::set_intersection(train_side.begin(), train_side.end(), test_side.begin(), test_side.end(),
                                  std::back_inserter(overlap));
            REQUIRE(overlap.empty());
            REQUIRE(train_side.size() + test_side.size() == 93);
        }
    }

    SECTION("deterministic in the seed") {
        auto again = split_folds(augmented, 10, 1234);
        REQUIRE(again.assignment == split.assignment);
        auto other = split_folds(augmented, 10, 99);
        REQUIRE(other.assignment != split.assignment);
    }

    SECTION("fewer patients than folds is rejected") {
        auto few = generate_synthetic(5, 1, 3);
        REQUIRE_THROWS_AS(split_folds(few, 10, 1), std::invalid_argument);
    }
}

TEST_CASE("pgm round-trip and the patch loader") {
    const auto dir = fresh_dir("loader");
    auto records = generate_synthetic(3, 1, 21);

    std::ofstream index(dir / "index.csv");
    index << "filename,patient_id,lesion_id,label\n";
    for (const auto& r : records) {
        const std::string name = r.patient_id + "_" + r.lesion_id + "_" + std::to_string(r.label) + ".pgm";
        write_pgm((dir / name).string(), r.image);
        index << name << "," << r.patient_id << "," << r.lesion_id << "," << r.label << "\n";
    }
    index.close();

    auto loaded = load_patches(dir.string());
    REQUIRE(loaded.size() == 3);
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        REQUIRE(loaded[i].patient_id == records[i].patient_id);
        REQUIRE(loaded[i].label == records[i].label);
        REQUIRE(loaded[i].image.shape == std::vector<int>{32, 32});
        // 8-bit quantization error only.
        for (std::size_t j = 0; j < loaded[i].image.data.size(); ++j)
            REQUIRE(std::abs(loaded[i].image.data[j] - records[i].image.data[j]) <= 0.5f / 255.0f + 1e-6f);
    }
}

TEST_CASE("the loader resamples non-32x32 images bilinearly") {
    const auto dir = fresh_dir("resample");
    Tensor<float> big({64, 64});
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) big.data[static_cast<std::size_t>(y) * 64 + x] = static_cast<float>(x) / 63.0f;
    write_pgm((dir / "p1_l1_0.pgm").string(), big);
    std::ofstream(dir / "index.csv") << "p1_l1_0.pgm,p1,l1,0\n";

    auto loaded = load_patches(dir.string());
    REQUIRE(loaded.size() == 1);
    REQUIRE(loaded[0].image.shape == std::vector<int>{32, 32});
    // The horizontal ramp survives resampling.
    REQUIRE(loaded[0].image.data[0] == Catch::Approx(0.0).margin(0.01));
    REQUIRE(loaded[0].image.data[31] == Catch::Approx(1.0).margin(0.01));
}

TEST_CASE("loader failures carry per-file diagnostics and abort the run") {
    SECTION("bad label names the file") {
        const auto dir = fresh_dir("badlabel");
        auto records = generate_synthetic(1, 1, 4);
        write_pgm((dir / "p1_l1_2.pgm").string(), records[0].image);
        std::ofstream(dir / "index.csv") << "p1_l1_2.pgm,p1,l1,2\n";
        REQUIRE_THROWS_WITH(load_patches(dir.string()), Catch::Matchers::ContainsSubstring("p1_l1_2.pgm"));
    }

    SECTION("missing image file names the file") {
        const auto dir = fresh_dir("missing");
        std::ofstream(dir / "index.csv") << "ghost.pgm,p1,l1,1\n";
        REQUIRE_THROWS_WITH(load_patches(dir.string()), Catch::Matchers::ContainsSubstring("ghost.pgm"));
    }

    SECTION("missing index file") {
        const auto dir = fresh_dir("noindex");
        REQUIRE_THROWS_WITH(load_patches(dir.string()), Catch::Matchers::ContainsSubstring("index"));
    }

    SECTION("malformed row is reported with its line number") {
        const auto dir = fresh_dir("malformed");
        std::ofstream(dir / "index.csv") << "only,three,columns\n";
        REQUIRE_THROWS_WITH(load_patches(dir.string()), Catch::Matchers::ContainsSubstring("expected 4 columns"));
    }
}
