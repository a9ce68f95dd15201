#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "edrs/dataset.hpp"
#include "edrs/tensor.hpp"

namespace edrs {

namespace detail {

inline int pgm_token(std::istream& in) {
    // Skips whitespace and '#' comments, then reads one non-negative integer.
    for (;;) {
        int c = in.peek();
        if (c == EOF) throw std::runtime_error("pgm: unexpected end of header");
        if (std::isspace(c)) {
            in.get();
            continue;
        }
        if (c == '#') {
            std::string line;
            std::getline(in, line);
            continue;
        }
        break;
    }
    int v = 0;
    if (!(in >> v) || v < 0) throw std::runtime_error("pgm: malformed header token");
    return v;
}

}  // namespace detail

// Reads an 8-bit grayscale PGM (binary P5 or ascii P2) as intensities in
// [0,1].
inline Tensor<float> read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("pgm: cannot open " + path);
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P5" && magic != "P2") throw std::runtime_error("pgm: unsupported format in " + path);
    const int w = detail::pgm_token(in);
    const int h = detail::pgm_token(in);
    const int maxval = detail::pgm_token(in);
    if (w < 1 || h < 1) throw std::runtime_error("pgm: bad dimensions in " + path);
    if (maxval < 1 || maxval > 255) throw std::runtime_error("pgm: not 8-bit (maxval " + std::to_string(maxval) + ") in " + path);

    Tensor<float> img({h, w});
    if (magic == "P5") {
        in.get();  // single whitespace after maxval
        std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (!in) throw std::runtime_error("pgm: truncated pixel data in " + path);
        for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = static_cast<float>(raw[i]) / maxval;
    } else {
        for (auto& v : img.data) {
            const int p = detail::pgm_token(in);
            if (p > maxval) throw std::runtime_error("pgm: pixel above maxval in " + path);
            v = static_cast<float>(p) / maxval;
        }
    }
    return img;
}

inline void write_pgm(const std::string& path, const Tensor<float>& img) {
    if (img.rank() != 2) throw std::invalid_argument("write_pgm: image must be rank 2");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("pgm: cannot open for writing " + path);
    out << "P5\n" << img.shape[1] << " " << img.shape[0] << "\n255\n";
    for (float v : img.data) {
        const int q = static_cast<int>(std::lround(std::fmin(std::fmax(v, 0.0f), 1.0f) * 255.0f));
        out.put(static_cast<char>(q));
    }
    if (!out) throw std::runtime_error("pgm: write failed " + path);
}

// Bilinear resample to size x size (no-op copy when the shape already
// matches).
inline Tensor<float> resample_bilinear(const Tensor<float>& img, int size) {
    const int H = img.shape[0], W = img.shape[1];
    if (H == size && W == size) return img;
    Tensor<float> out({size, size});
    const double sy = static_cast<double>(H - 1) / (size - 1);
    const double sx = static_cast<double>(W - 1) / (size - 1);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double fsy = y * sy, fsx = x * sx;
            const int y0 = std::min(static_cast<int>(fsy), H - 2);
            const int x0 = std::min(static_cast<int>(fsx), W - 2);
            const double fy = fsy - y0, fx = fsx - x0;
            const double v =
                (1 - fy) * ((1 - fx) * img.data[static_cast<std::size_t>(y0) * W + x0] +
                            fx * img.data[static_cast<std::size_t>(y0) * W + x0 + 1]) +
                fy * ((1 - fx) * img.data[static_cast<std::size_t>(y0 + 1) * W + x0] +
                      fx * img.data[static_cast<std::size_t>(y0 + 1) * W + x0 + 1]);
            out.data[static_cast<std::size_t>(y) * size + x] = static_cast<float>(v);
        }
    }
    return out;
}

// Loads user-supplied patches: a directory of 8-bit grayscale PGMs plus
// index.csv with rows filename,patient_id,lesion_id,label. Every problem is
// reported with its filename and the whole load aborts if any row fails.
inline std::vector<PatchRecord> load_patches(const std::string& directory) {
    namespace fs = std::filesystem;
    const fs::path dir(directory);
    const fs::path index = dir / "index.csv";
    std::ifstream in(index);
    if (!in) throw std::runtime_error("load_patches: missing index file " + index.string());

    std::vector<PatchRecord> records;
    std::vector<std::string> errors;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line.rfind("filename", 0) == 0) continue;  // optional header

        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() != 4) {
            errors.push_back(index.string() + ":" + std::to_string(line_no) + ": expected 4 columns");
            continue;
        }
        const std::string& fname = cols[0];
        if (cols[3] != "0" && cols[3] != "1") {
            errors.push_back(fname + ": label '" + cols[3] + "' not in {0,1}");
            continue;
        }
        PatchRecord rec;
        rec.patient_id = cols[1];
        rec.lesion_id = cols[2];
        rec.label = cols[3] == "1" ? 1 : 0;
        try {
            rec.image = resample_bilinear(read_pgm((dir / fname).string()), kPatchSize);
        } catch (const std::exception& e) {
            errors.push_back(fname + ": " + e.what());
            continue;
        }
        records.push_back(std::move(rec));
    }
    if (!errors.empty()) {
        std::string msg = "load_patches: " + std::to_string(errors.size()) + " error(s):";
        for (const auto& e : errors) msg += "\n  " + e;
        throw std::runtime_error(msg);
    }
    if (records.empty()) throw std::runtime_error("load_patches: no records in " + index.string());
    return records;
}

}  // namespace edrs
