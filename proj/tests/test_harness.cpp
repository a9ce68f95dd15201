#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "edrs/checkpoint.hpp"
#include "edrs/harness.hpp"
#include "edrs/report.hpp"

using namespace edrs;

namespace {

struct TinyRun {
    std::vector<PatchRecord> records;
    FoldSplit split;
    EvolutionRunConfig cfg;
};

TinyRun make_tiny_run() {
    TinyRun t;
    auto base = generate_synthetic(12, 1, 2024);
    t.records = augment(base, AugmentConfig{});
    t.split = split_folds(t.records, 3, 515);
    t.cfg.n_generations = 3;
    t.cfg.n_folds = 3;
    t.cfg.retain_fraction = 0.8;
    t.cfg.master_seed = 99;
    t.cfg.benchmark_samples = 0;
    t.cfg.train_cfg.epochs = 2;
    t.cfg.train_cfg.batch_size = 32;
    t.cfg.train_cfg.learning_rate = 0.02;
    t.cfg.jobs = 2;
    return t;
}

}  // namespace

TEST_CASE("a small evolution run produces ordered, monotone, reproducible records") {
    auto t = make_tiny_run();
    auto run = run_evolution(t.records, t.split, t.cfg);

    REQUIRE(run.report.records.size() == 9);  // folds x generations
    for (int f = 0; f < 3; ++f) {
        const auto& recs = run.folds[f].records;
        REQUIRE(recs.size() == 3);
        for (int g = 0; g < 3; ++g) {
            REQUIRE(recs[g].generation == g + 1);
            REQUIRE(recs[g].fold == f);
            REQUIRE(recs[g].confusion.total() > 0);
            REQUIRE(recs[g].accuracy >= 0.0);
            REQUIRE(recs[g].accuracy <= 1.0);
            REQUIRE(recs[g].rsl_table == 16 * recs[g].alive_filters_total);
        }
        // Generation 1 is the dense sequencer.
        REQUIRE(recs[0].active_synapses == 44320);
        REQUIRE(recs[0].alive_filters_total == 128);
        // Strictly decreasing compactness within every fold.
        for (int g = 1; g < 3; ++g) REQUIRE(recs[g].active_synapses < recs[g - 1].active_synapses);
        // Masks chain as subsets across the stored nets.
        for (int g = 1; g < 3; ++g)
            for (std::size_t l = 0; l < run.folds[f].nets[g].conv_layers.size(); ++l) {
                const auto& child = run.folds[f].nets[g].conv_layers[l];
                const auto& parent = run.folds[f].nets[g - 1].conv_layers[l];
                for (std::size_t i = 0; i < child.mask.bits.size(); ++i)
                    if (child.mask.bits[i]) REQUIRE(parent.mask.bits[i] == 1);
            }
    }

    // Cross-fold mean step ratios concentrate inside the budget band even
    // though single realizations move in whole-filter blocks.
    for (int g = 1; g < 3; ++g) {
        double realized_sum = 0.0, prev_sum = 0.0;
        for (int f = 0; f < 3; ++f) {
            realized_sum += static_cast<double>(run.folds[f].records[g].realized_active);
            prev_sum += static_cast<double>(run.folds[f].records[g - 1].active_synapses);
        }
        const double ratio = realized_sum / prev_sum;
        REQUIRE(ratio >= 0.75);
        REQUIRE(ratio <= 0.85);
    }

    SECTION("rerunning with the same seed is bit-identical, regardless of jobs") {
        auto cfg2 = t.cfg;
        cfg2.jobs = 1;
        auto again = run_evolution(t.records, t.split, cfg2);
        REQUIRE(again.report.records.size() == run.report.records.size());
        for (std::size_t i = 0; i < run.report.records.size(); ++i) {
            const auto& a = run.report.records[i];
            const auto& b = again.report.records[i];
            REQUIRE(a.generation == b.generation);
            REQUIRE(a.fold == b.fold);
            REQUIRE(a.active_synapses == b.active_synapses);
            REQUIRE(a.realized_active == b.realized_active);
            REQUIRE(a.confusion.tp == b.confusion.tp);
            REQUIRE(a.confusion.fn == b.confusion.fn);
            REQUIRE(a.accuracy == b.accuracy);
        }
        for (int f = 0; f < 3; ++f)
            for (int g = 0; g < 3; ++g)
                REQUIRE(run.folds[f].nets[g].conv_layers[0].weights.data ==
                        again.folds[f].nets[g].conv_layers[0].weights.data);
    }

    SECTION("no patient leaks between a fold's train and test sides") {
        for (int f = 0; f < 3; ++f) {
            std::set<std::string> train_patients, test_patients;
            for (const auto& r : t.records)
                (t.split.fold_of(r.patient_id) == f ? test_patients : train_patients).insert(r.patient_id);
            for (const auto& p : test_patients) REQUIRE(train_patients.count(p) == 0);
        }
    }

    SECTION("emitted summary files are byte-identical across re-emission and reruns") {
        namespace fs = std::filesystem;
        const auto dir_a = fs::temp_directory_path() / "edrs_test" / "run_a";
        const auto dir_b = fs::temp_directory_path() / "edrs_test" / "run_b";
        fs::remove_all(dir_a);
        fs::remove_all(dir_b);
        DatasetProvenance prov;
        prov.n_records = t.records.size();
        emit_report(run.report, dir_a.string(), prov);
        auto again = run_evolution(t.records, t.split, t.cfg);
        emit_report(again.report, dir_b.string(), prov);
        auto slurp = [](const fs::path& p) {
            std::ifstream in(p);
            std::stringstream ss;
            ss << in.rdbuf();
            return ss.str();
        };
        REQUIRE(slurp(dir_a / "summary.csv") == slurp(dir_b / "summary.csv"));
        REQUIRE(slurp(dir_a / "per_fold.csv") == slurp(dir_b / "per_fold.csv"));
    }

    SECTION("checkpoints are written per generation and fold and load back") {
        namespace fs = std::filesystem;
        const auto dir = fs::temp_directory_path() / "edrs_test" / "ckpt";
        fs::remove_all(dir);
        save_checkpoints(run, dir.string());
        for (int f = 0; f < 3; ++f)
            for (int g = 1; g <= 3; ++g) {
                const auto path = dir / ("gen" + std::to_string(g) + "_fold" + std::to_string(f) + ".edrs");
                REQUIRE(fs::exists(path));
            }
        auto net = load_checkpoint<float>((dir / "gen3_fold1.edrs").string());
        REQUIRE(net.generation == 3);
        REQUIRE(static_cast<long long>(count_active_synapses(net)) ==
                run.folds[1].records[2].active_synapses);
    }
}

TEST_CASE("config validation rejects out-of-range settings") {
    auto t = make_tiny_run();
    auto bad = t.cfg;
    bad.retain_fraction = 1.5;
    REQUIRE_THROWS_AS(run_evolution(t.records, t.split, bad), std::invalid_argument);
    bad = t.cfg;
    bad.n_generations = 0;
    REQUIRE_THROWS_AS(run_evolution(t.records, t.split, bad), std::invalid_argument);
    bad = t.cfg;
    bad.n_folds = 5;  // split disagreement
    REQUIRE_THROWS_AS(run_evolution(t.records, t.split, bad), std::invalid_argument);
}

TEST_CASE("the last-generation baseline reuses the final mask bit-for-bit") {
    auto t = make_tiny_run();
    t.cfg.n_generations = 2;
    auto run = run_evolution(t.records, t.split, t.cfg);

    std::vector<SequencerNet<float>> finals;
    for (const auto& fr : run.folds) finals.push_back(fr.nets.back());
    auto baseline = run_last_generation_baseline(t.records, t.split, t.cfg, finals);
    REQUIRE(baseline.size() == 3);

    for (int f = 0; f < 3; ++f) {
        REQUIRE(baseline[f].generation == 2);
        REQUIRE(baseline[f].active_synapses == run.folds[f].records[1].active_synapses);
        REQUIRE(baseline[f].confusion.total() == run.folds[f].records[1].confusion.total());
    }

    SECTION("baseline nets rebuilt from the final architecture zero their masked weights") {
        SequencerNet<float> net = finals[0];
        init_weights(net, derive_seed(t.cfg.master_seed, 0, net.generation, "baseline-init"));
        zero_dead_feature_columns(net);
        for (std::size_t l = 0; l < net.conv_layers.size(); ++l) {
            REQUIRE(net.conv_layers[l].mask == finals[0].conv_layers[l].mask);
            for (std::size_t i = 0; i < net.conv_layers[l].weights.data.size(); ++i)
                if (!net.conv_layers[l].mask.bits[i]) REQUIRE(net.conv_layers[l].weights.data[i] == 0.0f);
        }
        // Re-initialized weights differ from the evolved ones somewhere.
        bool differs = false;
        for (std::size_t i = 0; i < net.conv_layers[0].weights.data.size(); ++i)
            differs = differs || net.conv_layers[0].weights.data[i] != finals[0].conv_layers[0].weights.data[i];
        REQUIRE(differs);
    }
}

TEST_CASE("benchmarking fills timings and the standalone chain helper works") {
    auto t = make_tiny_run();
    t.cfg.n_generations = 2;
    t.cfg.benchmark_samples = 40;
    t.cfg.benchmark_repeats = 3;
    auto run = run_evolution(t.records, t.split, t.cfg);
    for (const auto& rec : run.report.records) REQUIRE(rec.forward_time_s > 0.0);
    REQUIRE(run.report.bench_log.size() == 6);  // folds x generations
    for (const auto& b : run.report.bench_log) REQUIRE(b.repeat_s.size() == 3);

    auto times = benchmark_generations(run.folds[0].nets, 40, 16, 3, 7);
    REQUIRE(times.size() == 2);
    for (const auto& tr : times) {
        REQUIRE(tr.median_s > 0.0);
        REQUIRE(tr.repeat_s.size() == 3);
    }
}
