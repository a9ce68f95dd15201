#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "edrs/checkpoint.hpp"
#include "edrs/dataset.hpp"
#include "edrs/engine.hpp"
#include "edrs/evolution.hpp"
#include "edrs/metrics.hpp"
#include "edrs/net.hpp"
#include "edrs/sequencer.hpp"
#include "edrs/shrink.hpp"

namespace edrs {

inline constexpr const char* kVersion = "0.1.0";

struct EvolutionRunConfig {
    int n_generations = 11;
    double retain_fraction = 0.8;
    int n_folds = 10;
    TrainConfig train_cfg;
    std::uint64_t master_seed = 7;
    int benchmark_samples = 1500;  // 0 disables the timing phase
    int benchmark_repeats = 3;
    int benchmark_batch = 64;
    int eval_batch = 64;
    int jobs = 0;  // 0 = hardware concurrency
    ProbLaw law = ProbLaw::Exp;

    void validate() const {
        if (n_generations < 1) throw std::invalid_argument("config: n_generations must be >= 1");
        if (!(retain_fraction > 0.0) || retain_fraction > 1.0)
            throw std::invalid_argument("config: retain_fraction must be in (0,1]");
        if (n_folds < 1) throw std::invalid_argument("config: n_folds must be >= 1");
        if (benchmark_samples < 0) throw std::invalid_argument("config: benchmark_samples must be >= 0");
        if (benchmark_repeats < 1 || benchmark_batch < 1 || eval_batch < 1)
            throw std::invalid_argument("config: benchmark/eval parameters must be >= 1");
        train_cfg.validate();
    }
};

struct GenerationRecord {
    int generation = 1;
    int fold = 0;
    int alive_filters_total = 0;
    long long rsl_table = 0;
    long long rsl_last_layer = 0;
    long long active_synapses = 0;
    long long realized_active = 0;  // sampled mask popcount (== active for generation 1)
    ConfusionCounts confusion;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double accuracy = 0.0;
    double forward_time_s = 0.0;
};

struct BenchSample {
    int generation = 1;
    int fold = 0;
    std::vector<double> repeat_s;
};

struct EvolutionReport {
    EvolutionRunConfig config;
    std::vector<GenerationRecord> records;   // ordered by (fold, generation)
    std::vector<GenerationRecord> baseline;  // one per fold when the baseline ran
    std::vector<BenchSample> bench_log;
};

struct FoldResult {
    std::vector<GenerationRecord> records;
    std::vector<SequencerNet<float>> nets;  // one per generation
};

struct RunResult {
    EvolutionReport report;
    std::vector<FoldResult> folds;
};

namespace detail {

inline ConfusionCounts evaluate(const SequencerNet<float>& net, const LabeledData<float>& data,
                                int eval_batch) {
    ConfusionCounts c;
    const std::size_t n = data.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t lo = 0; lo < n; lo += eval_batch) {
        const std::size_t hi = std::min(n, lo + eval_batch);
        Tensor<float> batch = detail::gather_batch(data.images, order, lo, hi);
        Tensor<float> logits = forward(net, batch);
        const int k = logits.shape[1];
        for (std::size_t i = lo; i < hi; ++i) {
            const float* lb = logits.ptr() + (i - lo) * k;
            c.add(lb[1] > lb[0] ? 1 : 0, data.labels[i]);
        }
    }
    return c;
}

inline void fill_metrics(GenerationRecord& rec) {
    const Metrics m = compute_metrics(rec.confusion);
    rec.sensitivity = m.sensitivity;
    rec.specificity = m.specificity;
    rec.accuracy = m.accuracy;
}

}  // namespace detail

// One fold of the protocol: generation 1 is the dense sequencer; every later
// generation is synthesized from its trained ancestor, retrained, and scored
// on the held-out fold. Training and evaluation run on the physically shrunk
// twin, which is forward-equivalent to the masked net.
inline FoldResult run_fold(int fold, const std::vector<PatchRecord>& records, const FoldSplit& split,
                           const EvolutionRunConfig& cfg) {
    cfg.validate();
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < records.size(); ++i)
        (split.fold_of(records[i].patient_id) == fold ? test_idx : train_idx).push_back(i);
    if (train_idx.empty() || test_idx.empty())
        throw std::runtime_error("run_fold: fold " + std::to_string(fold) + " has an empty train or test side");

    const LabeledData<float> train_data = to_labeled<float>(records, train_idx);
    const LabeledData<float> test_data = to_labeled<float>(records, test_idx);

    FoldResult out;
    for (int g = 1; g <= cfg.n_generations; ++g) {
        SequencerNet<float> net;
        long long realized = 0;
        if (g == 1) {
            net = build_initial<float>(derive_seed(cfg.master_seed, fold, 1, "init"));
            realized = static_cast<long long>(count_active_synapses(net));
        } else {
            const SequencerNet<float>& ancestor = out.nets.back();
            const ProbabilisticDNA dna = compute_dna(ancestor, cfg.law);
            const EnvironmentalFactor env = calibrate_alpha(dna, cfg.retain_fraction, ancestor);
            const SynthesisOutcome outcome =
                synthesize_offspring(ancestor, env, dna, derive_seed(cfg.master_seed, fold, g, "synthesis"));
            net = build_offspring_net(ancestor, outcome);
            realized = outcome.realized_active_count;
        }

        ShrunkNet<float> twin = build_shrunk(net);
        TrainConfig tc = cfg.train_cfg;
        tc.seed = derive_seed(cfg.master_seed, fold, g, "train");
        train(twin.net, train_data, tc);
        scatter_back(twin, net);

        GenerationRecord rec;
        rec.generation = g;
        rec.fold = fold;
        const CompactnessMetrics cm = compactness_metrics(net);
        rec.alive_filters_total = cm.total_alive_filters;
        rec.rsl_table = cm.rsl_table;
        rec.rsl_last_layer = cm.rsl_last_layer;
        rec.active_synapses = static_cast<long long>(count_active_synapses(net));
        rec.realized_active = realized;
        rec.confusion = detail::evaluate(twin.net, test_data, cfg.eval_batch);
        detail::fill_metrics(rec);
        out.records.push_back(rec);
        out.nets.push_back(std::move(net));
    }
    return out;
}

// Full protocol over all folds. Folds run concurrently up to cfg.jobs; the
// timing phase runs afterwards with nothing else in flight so medians stay
// meaningful.
inline RunResult run_evolution(const std::vector<PatchRecord>& records, const FoldSplit& split,
                               const EvolutionRunConfig& cfg) {
    cfg.validate();
    if (split.n_folds != cfg.n_folds)
        throw std::invalid_argument("run_evolution: config n_folds differs from the fold split");

    RunResult run;
    run.report.config = cfg;
    run.folds.resize(split.n_folds);

    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    const int jobs = std::max(1, std::min(cfg.jobs > 0 ? cfg.jobs : (hw > 0 ? hw : 1), split.n_folds));

    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::vector<std::string> errors(split.n_folds);
    for (int t = 0; t < jobs; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const int f = next.fetch_add(1);
                if (f >= split.n_folds) return;
                try {
                    run.folds[f] = run_fold(f, records, split, cfg);
                } catch (const std::exception& e) {
                    errors[f] = e.what();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (!e.empty()) throw std::runtime_error("run_evolution: " + e);

    if (cfg.benchmark_samples > 0) {
        for (int f = 0; f < split.n_folds; ++f) {
            for (int g = 0; g < cfg.n_generations; ++g) {
                const ShrunkNet<float> twin = build_shrunk(run.folds[f].nets[g]);
                const TimingResult t =
                    time_forward(twin.net, cfg.benchmark_samples, cfg.benchmark_batch, cfg.benchmark_repeats,
                                 derive_seed(cfg.master_seed, f, g + 1, "bench"));
                run.folds[f].records[g].forward_time_s = t.median_s;
                run.report.bench_log.push_back({g + 1, f, t.repeat_s});
            }
        }
    }

    for (int f = 0; f < split.n_folds; ++f)
        for (const auto& rec : run.folds[f].records) run.report.records.push_back(rec);
    return run;
}

// Times one representative chain of checkpoints, one net per generation.
inline std::vector<TimingResult> benchmark_generations(const std::vector<SequencerNet<float>>& nets_by_gen,
                                                       int n_samples, int batch, int repeats,
                                                       std::uint64_t seed) {
    std::vector<TimingResult> out;
    out.reserve(nets_by_gen.size());
    for (std::size_t g = 0; g < nets_by_gen.size(); ++g) {
        const ShrunkNet<float> twin = build_shrunk(nets_by_gen[g]);
        out.push_back(time_forward(twin.net, n_samples, batch, repeats, splitmix64(seed + g)));
    }
    return out;
}

// Last-Generation baseline: reuse each fold's final mask bit-for-bit,
// re-initialize the surviving weights, train from scratch with the same
// budget, and score on the same held-out fold.
inline std::vector<GenerationRecord> run_last_generation_baseline(
    const std::vector<PatchRecord>& records, const FoldSplit& split, const EvolutionRunConfig& cfg,
    const std::vector<SequencerNet<float>>& final_nets) {
    cfg.validate();
    if (static_cast<int>(final_nets.size()) != split.n_folds)
        throw std::invalid_argument("baseline: need one final net per fold");

    std::vector<GenerationRecord> out;
    for (int f = 0; f < split.n_folds; ++f) {
        std::vector<std::size_t> train_idx, test_idx;
        for (std::size_t i = 0; i < records.size(); ++i)
            (split.fold_of(records[i].patient_id) == f ? test_idx : train_idx).push_back(i);
        if (train_idx.empty() || test_idx.empty())
            throw std::runtime_error("baseline: fold " + std::to_string(f) + " has an empty train or test side");

        SequencerNet<float> net = final_nets[f];  // masks and dims; weights replaced below
        init_weights(net, derive_seed(cfg.master_seed, f, net.generation, "baseline-init"));
        zero_dead_feature_columns(net);

        ShrunkNet<float> twin = build_shrunk(net);
        TrainConfig tc = cfg.train_cfg;
        tc.seed = derive_seed(cfg.master_seed, f, net.generation, "baseline-train");
        train(twin.net, to_labeled<float>(records, train_idx), tc);
        scatter_back(twin, net);

        GenerationRecord rec;
        rec.generation = net.generation;
        rec.fold = f;
        const CompactnessMetrics cm = compactness_metrics(net);
        rec.alive_filters_total = cm.total_alive_filters;
        rec.rsl_table = cm.rsl_table;
        rec.rsl_last_layer = cm.rsl_last_layer;
        rec.active_synapses = static_cast<long long>(count_active_synapses(net));
        rec.realized_active = rec.active_synapses;
        rec.confusion = detail::evaluate(twin.net, to_labeled<float>(records, test_idx), cfg.eval_batch);
        detail::fill_metrics(rec);
        out.push_back(rec);
    }
    return out;
}

inline void save_checkpoints(const RunResult& run, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (std::size_t f = 0; f < run.folds.size(); ++f)
        for (std::size_t g = 0; g < run.folds[f].nets.size(); ++g)
            save_checkpoint(run.folds[f].nets[g],
                            (fs::path(dir) / ("gen" + std::to_string(g + 1) + "_fold" + std::to_string(f) + ".edrs"))
                                .string());
}

}  // namespace edrs
