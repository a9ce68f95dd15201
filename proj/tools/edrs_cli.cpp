// Command-line entry point for the evolutionary deep radiomic sequencer
// pipeline: dataset generation, evolution runs, the trained-from-scratch
// baseline, benchmark re-timing, report re-emission, and sequence extraction.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "edrs/checkpoint.hpp"
#include "edrs/dataset.hpp"
#include "edrs/harness.hpp"
#include "edrs/pgm_io.hpp"
#include "edrs/report.hpp"
#include "edrs/sequencer.hpp"

namespace fs = std::filesystem;
using namespace edrs;

namespace {

struct DatasetOpts {
    std::string data_dir;  // empty = synthetic
    int patients = 93;
    int lesions_per_patient = 1;
    std::uint64_t seed = 42;
    AugmentConfig augment;
};

struct Options {
    EvolutionRunConfig cfg;
    DatasetOpts data;
    std::string out_dir = "edrs_out";
};

// Flag overrides land only where the user gave a value; file settings fill
// the rest; hard defaults cover the remainder.
struct Overrides {
    std::optional<int> generations, folds, epochs, batch, bench_samples, bench_repeats, bench_batch, jobs,
        patients, lesions;
    std::optional<double> retain, lr, momentum, malignant_step, benign_step;
    std::optional<std::uint64_t> seed, data_seed;
    std::optional<std::string> law, data_dir;
    bool no_bench = false;

    void add_evolution_flags(CLI::App* app) {
        app->add_option("--generations", generations, "Number of generations (default 11)");
        app->add_option("--retain", retain, "Retained synapse fraction per generation (default 0.8)");
        app->add_option("--folds", folds, "Cross-validation folds (default 10)");
        app->add_option("--epochs", epochs, "Training epochs per generation (default 30)");
        app->add_option("--batch", batch, "Training batch size (default 32)");
        app->add_option("--lr", lr, "SGD learning rate (default 0.05)");
        app->add_option("--momentum", momentum, "SGD momentum (default 0.9)");
        app->add_option("--seed", seed, "Master seed (default 7)");
        app->add_option("--bench-samples", bench_samples, "Samples per timing pass (default 1500)");
        app->add_option("--bench-repeats", bench_repeats, "Timing repeats (default 3)");
        app->add_option("--bench-batch", bench_batch, "Timing batch size (default 64)");
        app->add_flag("--no-bench", no_bench, "Skip the timing phase (time_s reported as 0)");
        app->add_option("--jobs", jobs, "Concurrent folds, 0 = hardware threads");
        app->add_option("--law", law, "Probability law: exp or linear");
    }

    void add_dataset_flags(CLI::App* app) {
        app->add_option("--data", data_dir, "Load patches from a directory instead of generating");
        app->add_option("--patients", patients, "Synthetic patients (default 93)");
        app->add_option("--lesions-per-patient", lesions, "Lesions per patient (default 1)");
        app->add_option("--data-seed", data_seed, "Dataset seed (default 42)");
        app->add_option("--malignant-step", malignant_step, "Malignant rotation step in degrees (default 45)");
        app->add_option("--benign-step", benign_step, "Benign rotation step in degrees (default 10)");
    }

    void apply(Options& o) const {
        if (generations) o.cfg.n_generations = *generations;
        if (retain) o.cfg.retain_fraction = *retain;
        if (folds) o.cfg.n_folds = *folds;
        if (epochs) o.cfg.train_cfg.epochs = *epochs;
        if (batch) o.cfg.train_cfg.batch_size = *batch;
        if (lr) o.cfg.train_cfg.learning_rate = *lr;
        if (momentum) o.cfg.train_cfg.momentum = *momentum;
        if (seed) o.cfg.master_seed = *seed;
        if (bench_samples) o.cfg.benchmark_samples = *bench_samples;
        if (bench_repeats) o.cfg.benchmark_repeats = *bench_repeats;
        if (bench_batch) o.cfg.benchmark_batch = *bench_batch;
        if (no_bench) o.cfg.benchmark_samples = 0;
        if (jobs) o.cfg.jobs = *jobs;
        if (law) o.cfg.law = prob_law_from_string(*law);
        if (data_dir) o.data.data_dir = *data_dir;
        if (patients) o.data.patients = *patients;
        if (lesions) o.data.lesions_per_patient = *lesions;
        if (data_seed) o.data.seed = *data_seed;
        if (malignant_step) o.data.augment.malignant_step_deg = *malignant_step;
        if (benign_step) o.data.augment.benign_step_deg = *benign_step;
    }
};

void apply_config_kv(Options& o, const std::string& key, const std::string& value) {
    auto as_i = [&] { return std::stoi(value); };
    auto as_d = [&] { return std::stod(value); };
    auto as_u = [&] { return static_cast<std::uint64_t>(std::stoull(value)); };
    if (key == "generations") o.cfg.n_generations = as_i();
    else if (key == "retain_fraction") o.cfg.retain_fraction = as_d();
    else if (key == "folds") o.cfg.n_folds = as_i();
    else if (key == "epochs") o.cfg.train_cfg.epochs = as_i();
    else if (key == "batch_size") o.cfg.train_cfg.batch_size = as_i();
    else if (key == "learning_rate") o.cfg.train_cfg.learning_rate = as_d();
    else if (key == "momentum") o.cfg.train_cfg.momentum = as_d();
    else if (key == "master_seed") o.cfg.master_seed = as_u();
    else if (key == "benchmark_samples") o.cfg.benchmark_samples = as_i();
    else if (key == "benchmark_repeats") o.cfg.benchmark_repeats = as_i();
    else if (key == "benchmark_batch") o.cfg.benchmark_batch = as_i();
    else if (key == "eval_batch") o.cfg.eval_batch = as_i();
    else if (key == "jobs") o.cfg.jobs = as_i();
    else if (key == "prob_law") o.cfg.law = prob_law_from_string(value);
    else if (key == "data_dir") o.data.data_dir = value;
    else if (key == "patients") o.data.patients = as_i();
    else if (key == "lesions_per_patient") o.data.lesions_per_patient = as_i();
    else if (key == "dataset_seed") o.data.seed = as_u();
    else if (key == "malignant_step_deg") o.data.augment.malignant_step_deg = as_d();
    else if (key == "benign_step_deg") o.data.augment.benign_step_deg = as_d();
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

// Accepts either key=value text or a run manifest (JSON object).
void load_config_file(Options& o, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        const auto j = nlohmann::json::parse(text);
        const auto& c = j.at("config");
        o.cfg.n_generations = c.at("generations");
        o.cfg.retain_fraction = c.at("retain_fraction");
        o.cfg.n_folds = c.at("folds");
        o.cfg.train_cfg.epochs = c.at("epochs");
        o.cfg.train_cfg.batch_size = c.at("batch_size");
        o.cfg.train_cfg.learning_rate = c.at("learning_rate");
        o.cfg.train_cfg.momentum = c.at("momentum");
        o.cfg.master_seed = c.at("master_seed");
        o.cfg.benchmark_samples = c.at("benchmark_samples");
        o.cfg.benchmark_repeats = c.at("benchmark_repeats");
        o.cfg.benchmark_batch = c.at("benchmark_batch");
        o.cfg.eval_batch = c.at("eval_batch");
        o.cfg.jobs = c.at("jobs");
        o.cfg.law = prob_law_from_string(c.at("prob_law"));
        const auto& d = j.at("dataset");
        o.data.data_dir = d.value("data_dir", std::string());
        o.data.patients = d.at("patients");
        o.data.lesions_per_patient = d.at("lesions_per_patient");
        o.data.seed = d.at("seed");
        o.data.augment.malignant_step_deg = d.at("malignant_step_deg");
        o.data.augment.benign_step_deg = d.at("benign_step_deg");
        return;
    }
    std::istringstream lines(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        if (eq == std::string::npos)
            throw std::invalid_argument("config: " + path + ":" + std::to_string(line_no) +
                                        ": expected key=value");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        apply_config_kv(o, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

std::string resolve_out_dir(const std::string& flag_value) {
    const char* env = std::getenv("EDRS_OUT");
    if (env && *env) return env;
    return flag_value;
}

struct LoadedDataset {
    std::vector<PatchRecord> records;  // augmented
    FoldSplit split;
    DatasetProvenance provenance;
};

LoadedDataset prepare_dataset(const Options& o) {
    LoadedDataset out;
    std::vector<PatchRecord> base;
    if (o.data.data_dir.empty()) {
        base = generate_synthetic(o.data.patients, o.data.lesions_per_patient, o.data.seed);
        out.provenance.source = "synthetic";
    } else {
        base = load_patches(o.data.data_dir);
        out.provenance.source = "directory";
        out.provenance.data_dir = o.data.data_dir;
    }
    out.records = augment(base, o.data.augment);
    out.split = split_folds(out.records, o.cfg.n_folds, o.data.seed);
    out.provenance.n_patients = o.data.patients;
    out.provenance.lesions_per_patient = o.data.lesions_per_patient;
    out.provenance.seed = o.data.seed;
    out.provenance.augment = o.data.augment;
    out.provenance.n_base_lesions = base.size();
    out.provenance.n_records = out.records.size();
    return out;
}

void write_dataset_manifest(const LoadedDataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "patient_id,lesion_id,label,rotation_deg,is_augmented,fold\n";
    for (const auto& r : data.records)
        out << r.patient_id << "," << r.lesion_id << "," << r.label << "," << detail::fmt_fixed(r.rotation_deg, 1)
            << "," << (r.is_augmented ? 1 : 0) << "," << data.split.fold_of(r.patient_id) << "\n";
}

void print_summary(const EvolutionReport& report) {
    const auto rows = summarize(report.records);
    std::printf("%-4s %8s %10s %10s %12s %12s %12s %10s\n", "gen", "anf", "rsl_table", "rsl_last", "sensitivity",
                "specificity", "accuracy", "time_s");
    for (const auto& r : rows)
        std::printf("%-4d %8s %10s %10s %12s %12s %12s %10s\n", r.generation,
                    detail::fmt_tenths(r.anf_tenths).c_str(), detail::fmt_tenths(r.rsl_table_tenths).c_str(),
                    detail::fmt_tenths(r.rsl_last_tenths).c_str(), detail::fmt_fixed(r.sensitivity.mean, 4).c_str(),
                    detail::fmt_fixed(r.specificity.mean, 4).c_str(), detail::fmt_fixed(r.accuracy.mean, 4).c_str(),
                    detail::fmt_fixed(r.time_s_mean, 4).c_str());
}

int cmd_gen_data(const Options& o) {
    const auto data = prepare_dataset(o);
    fs::create_directories(o.out_dir);
    if (o.data.data_dir.empty()) {
        std::ofstream index(fs::path(o.out_dir) / "index.csv", std::ios::trunc);
        index << "filename,patient_id,lesion_id,label\n";
        for (const auto& r : data.records) {
            if (r.is_augmented || r.rotation_deg != 0.0) continue;
            const std::string name = r.patient_id + "_" + r.lesion_id + "_" + std::to_string(r.label) + ".pgm";
            write_pgm((fs::path(o.out_dir) / name).string(), r.image);
            index << name << "," << r.patient_id << "," << r.lesion_id << "," << r.label << "\n";
        }
    }
    write_dataset_manifest(data, (fs::path(o.out_dir) / "dataset_manifest.csv").string());
    {
        std::ofstream out(fs::path(o.out_dir) / "manifest.json", std::ios::trunc);
        out << manifest_json("gen-data", o.cfg, data.provenance).dump(2) << "\n";
    }
    std::printf("wrote %zu records (%zu base lesions) to %s\n", data.records.size(), data.provenance.n_base_lesions,
                o.out_dir.c_str());
    return 0;
}

int cmd_evolve(const Options& o) {
    const auto data = prepare_dataset(o);
    auto run = run_evolution(data.records, data.split, o.cfg);
    emit_report(run.report, o.out_dir, data.provenance);
    save_checkpoints(run, (fs::path(o.out_dir) / "checkpoints").string());
    write_dataset_manifest(data, (fs::path(o.out_dir) / "dataset_manifest.csv").string());
    print_summary(run.report);
    std::printf("report written to %s\n", o.out_dir.c_str());
    return 0;
}

Options options_from_manifest(const std::string& run_dir) {
    Options o;
    load_config_file(o, (fs::path(run_dir) / "manifest.json").string());
    return o;
}

int cmd_baseline(const std::string& run_dir, const std::string& out_flag) {
    Options o = options_from_manifest(run_dir);
    o.out_dir = out_flag.empty() ? run_dir : out_flag;
    const auto data = prepare_dataset(o);

    std::vector<SequencerNet<float>> finals;
    for (int f = 0; f < o.cfg.n_folds; ++f) {
        const auto path = fs::path(run_dir) / "checkpoints" /
                          ("gen" + std::to_string(o.cfg.n_generations) + "_fold" + std::to_string(f) + ".edrs");
        if (!fs::exists(path))
            throw std::runtime_error("baseline: missing final-generation checkpoint " + path.string());
        finals.push_back(load_checkpoint<float>(path.string()));
    }
    auto baseline = run_last_generation_baseline(data.records, data.split, o.cfg, finals);

    fs::create_directories(o.out_dir);
    {
        std::ofstream out(fs::path(o.out_dir) / "baseline.csv", std::ios::trunc);
        write_record_csv(out, baseline);
    }
    {
        std::ofstream out(fs::path(o.out_dir) / "baseline_summary.csv", std::ios::trunc);
        write_summary_csv(out, summarize(baseline));
    }
    const auto ms = [&] {
        std::vector<double> acc;
        for (const auto& r : baseline) acc.push_back(r.accuracy);
        return mean_std(acc);
    }();
    std::printf("last-generation baseline: mean accuracy %s over %d folds\n", detail::fmt_fixed(ms.mean, 4).c_str(),
                o.cfg.n_folds);
    std::printf("baseline written to %s\n", o.out_dir.c_str());
    return 0;
}

int cmd_bench(const std::string& run_dir, int fold, std::optional<int> samples, std::optional<int> repeats,
              std::optional<int> batch, const std::string& out_flag) {
    Options o = options_from_manifest(run_dir);
    const int n_samples = samples.value_or(o.cfg.benchmark_samples > 0 ? o.cfg.benchmark_samples : 1500);
    const int n_repeats = repeats.value_or(o.cfg.benchmark_repeats);
    const int n_batch = batch.value_or(o.cfg.benchmark_batch);

    std::vector<SequencerNet<float>> nets;
    for (int g = 1; g <= o.cfg.n_generations; ++g) {
        const auto path = fs::path(run_dir) / "checkpoints" /
                          ("gen" + std::to_string(g) + "_fold" + std::to_string(fold) + ".edrs");
        if (!fs::exists(path)) throw std::runtime_error("bench: missing checkpoint " + path.string());
        nets.push_back(load_checkpoint<float>(path.string()));
    }
    auto times = benchmark_generations(nets, n_samples, n_batch, n_repeats, o.cfg.master_seed);

    const std::string out_path = out_flag.empty() ? (fs::path(run_dir) / "bench.csv").string() : out_flag;
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw std::runtime_error("bench: cannot write " + out_path);
    out << "generation,median_s";
    for (int r = 0; r < n_repeats; ++r) out << ",repeat" << r;
    out << "\n";
    for (std::size_t g = 0; g < times.size(); ++g) {
        out << (g + 1) << "," << detail::fmt_fixed(times[g].median_s, 6);
        for (double t : times[g].repeat_s) out << "," << detail::fmt_fixed(t, 6);
        out << "\n";
        std::printf("generation %zu: median %.4fs over %d repeats of %d samples\n", g + 1, times[g].median_s,
                    n_repeats, n_samples);
    }
    std::printf("bench written to %s\n", out_path.c_str());
    return 0;
}

int cmd_report(const std::string& per_fold, const std::string& out_dir) {
    const auto records = parse_record_csv(per_fold);
    fs::create_directories(out_dir);
    const auto path = fs::path(out_dir) / "summary.csv";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("report: cannot write " + path.string());
    write_summary_csv(out, summarize(records));
    std::printf("summary re-emitted to %s\n", path.string().c_str());
    return 0;
}

int cmd_extract(const std::string& checkpoint, const std::string& patch_path, const std::string& out_path,
                std::string patch_id) {
    auto net = load_checkpoint<float>(checkpoint);
    auto img = resample_bilinear(read_pgm(patch_path), kPatchSize);
    auto seq = extract_sequence(net, img);
    if (patch_id.empty()) patch_id = fs::path(patch_path).stem().string();

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path, std::ios::trunc);
        if (!file) throw std::runtime_error("extract: cannot write " + out_path);
        out = &file;
    }
    *out << "patch_id,generation";
    for (std::size_t i = 0; i < seq.values.size(); ++i) *out << ",v" << i;
    *out << "\n" << patch_id << "," << seq.generation;
    char buf[32];
    for (float v : seq.values) {
        std::snprintf(buf, sizeof(buf), "%.8g", static_cast<double>(v));
        *out << "," << buf;
    }
    *out << "\n";
    if (!out_path.empty())
        std::printf("sequence of length %zu written to %s\n", seq.values.size(), out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"evolutionary deep radiomic sequencer discovery"};
    app.require_subcommand(1);

    Overrides ov;
    std::string config_file, out_flag, run_dir, per_fold_flag;

    auto* gen_data = app.add_subcommand("gen-data", "Generate the synthetic dataset and its manifest");
    ov.add_dataset_flags(gen_data);
    gen_data->add_option("--folds", ov.folds, "Folds recorded in the manifest (default 10)");
    gen_data->add_option("--out", out_flag, "Output directory");
    gen_data->add_option("--config", config_file, "key=value config file or run manifest");

    auto* evolve = app.add_subcommand("evolve", "Run the full evolution protocol");
    ov.add_evolution_flags(evolve);
    ov.add_dataset_flags(evolve);
    evolve->add_option("--out", out_flag, "Output directory");
    evolve->add_option("--config", config_file, "key=value config file or run manifest");

    auto* baseline = app.add_subcommand("baseline", "Train the final architecture from scratch");
    baseline->add_option("--run-dir", run_dir, "Directory of a finished evolve run")->required();
    baseline->add_option("--out", out_flag, "Output directory (default: the run directory)");

    auto* bench = app.add_subcommand("bench", "Re-time checkpoints of a finished run");
    bench->add_option("--run-dir", run_dir, "Directory of a finished evolve run")->required();
    int bench_fold = 0;
    std::optional<int> bench_samples, bench_repeats, bench_batch;
    bench->add_option("--fold", bench_fold, "Fold whose chain to time (default 0)");
    bench->add_option("--samples", bench_samples, "Samples per pass (default: manifest value or 1500)");
    bench->add_option("--repeats", bench_repeats, "Timing repeats");
    bench->add_option("--batch", bench_batch, "Timing batch size");
    bench->add_option("--out", out_flag, "Output CSV path");

    auto* report = app.add_subcommand("report", "Re-emit the summary from a per-fold CSV");
    report->add_option("--run-dir", run_dir, "Directory holding per_fold.csv");
    report->add_option("--per-fold", per_fold_flag, "Explicit per-fold CSV path");
    report->add_option("--out", out_flag, "Output directory (default: the run directory)");

    auto* extract = app.add_subcommand("extract", "Extract a radiomic sequence from a patch");
    std::string checkpoint_path, patch_path, patch_id;
    extract->add_option("--checkpoint", checkpoint_path, "Sequencer checkpoint (.edrs)")->required();
    extract->add_option("--patch", patch_path, "Patch image (PGM)")->required();
    extract->add_option("--out", out_flag, "Output CSV (default: stdout)");
    extract->add_option("--patch-id", patch_id, "Identifier recorded in the CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    // Assemble the effective configuration: defaults, then file, then flags.
    Options o;
    try {
        if (!config_file.empty()) load_config_file(o, config_file);
        ov.apply(o);
        if (!out_flag.empty()) o.out_dir = out_flag;
        o.out_dir = resolve_out_dir(o.out_dir);
        if (gen_data->parsed() || evolve->parsed()) {
            o.cfg.validate();
            o.data.augment.validate();
            if (o.data.patients < 1 || o.data.lesions_per_patient < 1)
                throw std::invalid_argument("dataset: counts must be >= 1");
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }

    try {
        if (gen_data->parsed()) return cmd_gen_data(o);
        if (evolve->parsed()) return cmd_evolve(o);
        if (baseline->parsed()) return cmd_baseline(run_dir, resolve_out_dir(out_flag));
        if (bench->parsed())
            return cmd_bench(run_dir, bench_fold, bench_samples, bench_repeats, bench_batch, out_flag);
        if (report->parsed()) {
            std::string per_fold = per_fold_flag;
            if (per_fold.empty()) {
                if (run_dir.empty()) throw std::invalid_argument("report: need --run-dir or --per-fold");
                per_fold = (fs::path(run_dir) / "per_fold.csv").string();
            }
            const std::string out_dir = !out_flag.empty() ? out_flag : (!run_dir.empty() ? run_dir : ".");
            return cmd_report(per_fold, resolve_out_dir(out_dir));
        }
        if (extract->parsed()) return cmd_extract(checkpoint_path, patch_path, out_flag, patch_id);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
