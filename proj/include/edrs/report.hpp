#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "edrs/harness.hpp"
#include "edrs/metrics.hpp"

namespace edrs {

namespace detail {

inline std::string fmt_fixed(double v, int prec) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

// One-decimal rendering via integer tenths; keeps the 16x identity exact in
// the emitted strings.
inline std::string fmt_tenths(long long tenths) {
    std::string sign = tenths < 0 ? "-" : "";
    const long long a = std::llabs(tenths);
    return sign + std::to_string(a / 10) + "." + std::to_string(a % 10);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    return cols;
}

}  // namespace detail

struct SummaryRow {
    int generation = 1;
    long long anf_tenths = 0;  // average number of filters, in tenths
    long long rsl_table_tenths = 0;
    long long rsl_last_tenths = 0;
    MeanStd sensitivity, specificity, accuracy;
    double time_s_mean = 0.0;
};

// Per-generation cross-fold aggregation. A.N.F is reported at one decimal and
// the tabulated R.S.L is exactly 16 x A.N.F by construction.
inline std::vector<SummaryRow> summarize(const std::vector<GenerationRecord>& records) {
    std::map<int, std::vector<const GenerationRecord*>> by_gen;
    for (const auto& r : records) by_gen[r.generation].push_back(&r);

    std::vector<SummaryRow> rows;
    for (const auto& [gen, recs] : by_gen) {
        SummaryRow row;
        row.generation = gen;
        double anf = 0.0, rsl_last = 0.0, time_sum = 0.0;
        std::vector<double> sens, spec, acc;
        for (const auto* r : recs) {
            anf += r->alive_filters_total;
            rsl_last += static_cast<double>(r->rsl_last_layer);
            time_sum += r->forward_time_s;
            sens.push_back(r->sensitivity);
            spec.push_back(r->specificity);
            acc.push_back(r->accuracy);
        }
        const double n = static_cast<double>(recs.size());
        row.anf_tenths = std::llround(anf / n * 10.0);
        row.rsl_table_tenths = 16 * row.anf_tenths;
        row.rsl_last_tenths = std::llround(rsl_last / n * 10.0);
        row.sensitivity = mean_std(sens);
        row.specificity = mean_std(spec);
        row.accuracy = mean_std(acc);
        row.time_s_mean = time_sum / n;
        rows.push_back(row);
    }
    return rows;
}

inline constexpr const char* kPerFoldHeader =
    "generation,fold,alive_filters_total,rsl_table,rsl_last_layer,active_synapses,realized_active,"
    "tp,fp,tn,fn,sensitivity,specificity,accuracy,forward_time_s";

inline constexpr const char* kSummaryHeader =
    "generation,anf,rsl_table,rsl_last_layer,sensitivity_mean,sensitivity_std,specificity_mean,"
    "specificity_std,accuracy_mean,accuracy_std,time_s";

inline void write_record_csv(std::ostream& out, const std::vector<GenerationRecord>& records) {
    out << kPerFoldHeader << "\n";
    for (const auto& r : records) {
        out << r.generation << "," << r.fold << "," << r.alive_filters_total << "," << r.rsl_table << ","
            << r.rsl_last_layer << "," << r.active_synapses << "," << r.realized_active << "," << r.confusion.tp
            << "," << r.confusion.fp << "," << r.confusion.tn << "," << r.confusion.fn << ","
            << detail::fmt_fixed(r.sensitivity, 6) << "," << detail::fmt_fixed(r.specificity, 6) << ","
            << detail::fmt_fixed(r.accuracy, 6) << "," << detail::fmt_fixed(r.forward_time_s, 6) << "\n";
    }
}

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
    out << kSummaryHeader << "\n";
    for (const auto& r : rows) {
        out << r.generation << "," << detail::fmt_tenths(r.anf_tenths) << ","
            << detail::fmt_tenths(r.rsl_table_tenths) << "," << detail::fmt_tenths(r.rsl_last_tenths) << ","
            << detail::fmt_fixed(r.sensitivity.mean, 6) << "," << detail::fmt_fixed(r.sensitivity.std_dev, 6)
            << "," << detail::fmt_fixed(r.specificity.mean, 6) << ","
            << detail::fmt_fixed(r.specificity.std_dev, 6) << "," << detail::fmt_fixed(r.accuracy.mean, 6) << ","
            << detail::fmt_fixed(r.accuracy.std_dev, 6) << "," << detail::fmt_fixed(r.time_s_mean, 6) << "\n";
    }
}

inline std::vector<GenerationRecord> parse_record_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("parse_record_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("parse_record_csv: empty file " + path);
    std::vector<GenerationRecord> records;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cols = detail::split_csv_line(line);
        if (cols.size() != 15)
            throw std::runtime_error("parse_record_csv: " + path + ":" + std::to_string(line_no) +
                                     ": expected 15 columns");
        GenerationRecord r;
        r.generation = std::stoi(cols[0]);
        r.fold = std::stoi(cols[1]);
        r.alive_filters_total = std::stoi(cols[2]);
        r.rsl_table = std::stoll(cols[3]);
        r.rsl_last_layer = std::stoll(cols[4]);
        r.active_synapses = std::stoll(cols[5]);
        r.realized_active = std::stoll(cols[6]);
        r.confusion.tp = std::stoll(cols[7]);
        r.confusion.fp = std::stoll(cols[8]);
        r.confusion.tn = std::stoll(cols[9]);
        r.confusion.fn = std::stoll(cols[10]);
        r.sensitivity = std::strtod(cols[11].c_str(), nullptr);
        r.specificity = std::strtod(cols[12].c_str(), nullptr);
        r.accuracy = std::strtod(cols[13].c_str(), nullptr);
        r.forward_time_s = std::strtod(cols[14].c_str(), nullptr);
        records.push_back(r);
    }
    return records;
}

struct DatasetProvenance {
    std::string source = "synthetic";  // or "directory"
    std::string data_dir;
    int n_patients = 93;
    int lesions_per_patient = 1;
    std::uint64_t seed = 42;
    AugmentConfig augment;
    std::size_t n_records = 0;
    std::size_t n_base_lesions = 0;
};

inline nlohmann::ordered_json manifest_json(const std::string& command, const EvolutionRunConfig& cfg,
                                            const DatasetProvenance& data) {
    nlohmann::ordered_json j;
    j["tool"] = "edrs";
    j["version"] = kVersion;
    j["command"] = command;
    j["config"] = {{"generations", cfg.n_generations},
                   {"retain_fraction", cfg.retain_fraction},
                   {"folds", cfg.n_folds},
                   {"epochs", cfg.train_cfg.epochs},
                   {"batch_size", cfg.train_cfg.batch_size},
                   {"learning_rate", cfg.train_cfg.learning_rate},
                   {"momentum", cfg.train_cfg.momentum},
                   {"master_seed", cfg.master_seed},
                   {"benchmark_samples", cfg.benchmark_samples},
                   {"benchmark_repeats", cfg.benchmark_repeats},
                   {"benchmark_batch", cfg.benchmark_batch},
                   {"eval_batch", cfg.eval_batch},
                   {"jobs", cfg.jobs},
                   {"prob_law", to_string(cfg.law)}};
    j["dataset"] = {{"source", data.source},
                    {"data_dir", data.data_dir},
                    {"patients", data.n_patients},
                    {"lesions_per_patient", data.lesions_per_patient},
                    {"seed", data.seed},
                    {"malignant_step_deg", data.augment.malignant_step_deg},
                    {"benign_step_deg", data.augment.benign_step_deg},
                    {"base_lesions", data.n_base_lesions},
                    {"records", data.n_records}};
    j["hardware"] = {{"hardware_concurrency", std::thread::hardware_concurrency()}};
    return j;
}

// Writes per-fold CSV, per-generation summary CSV, the run manifest, and the
// baseline CSV when present. Re-emitting the same report yields byte-identical
// files.
inline void emit_report(const EvolutionReport& report, const std::string& out_dir,
                        const DatasetProvenance& data, const std::string& command = "evolve") {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir))
        throw std::runtime_error("emit_report: cannot create output directory " + out_dir);

    auto open = [&](const std::string& name) {
        std::ofstream out(fs::path(out_dir) / name, std::ios::trunc);
        if (!out) throw std::runtime_error("emit_report: cannot write " + name + " in " + out_dir);
        return out;
    };

    {
        auto out = open("per_fold.csv");
        write_record_csv(out, report.records);
    }
    {
        auto out = open("summary.csv");
        write_summary_csv(out, summarize(report.records));
    }
    if (!report.baseline.empty()) {
        auto out = open("baseline.csv");
        write_record_csv(out, report.baseline);
        auto sout = open("baseline_summary.csv");
        write_summary_csv(sout, summarize(report.baseline));
    }
    if (!report.bench_log.empty()) {
        auto out = open("bench_log.csv");
        out << "generation,fold,repeat,seconds\n";
        for (const auto& b : report.bench_log)
            for (std::size_t r = 0; r < b.repeat_s.size(); ++r)
                out << b.generation << "," << b.fold << "," << r << "," << detail::fmt_fixed(b.repeat_s[r], 6)
                    << "\n";
    }
    {
        auto out = open("manifest.json");
        out << manifest_json(command, report.config, data).dump(2) << "\n";
    }
}

}  // namespace edrs
