#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "edrs/net.hpp"
#include "edrs/tensor.hpp"

// Checkpoint file layout (all integers and floats little-endian):
//
//   magic            4 bytes  "EDRS"
//   version          u32      currently 1
//   generation       u32
//   input_channels   u32
//   input_h, input_w u32, u32
//   n_conv           u32
//   per conv layer:  filters, in_channels, kh, kw (u32 each)
//   n_fc             u32
//   per fc layer:    in_dim, out_dim (u32 each)
//   per conv layer:
//     filter_alive   packed bits, ceil(filters/8) bytes, LSB-first
//     mask           packed bits, ceil(filters*in_channels*kh*kw/8) bytes
//     biases         f32 x filters
//     weights        f32 x filters*in_channels*kh*kw
//   per fc layer:
//     biases         f32 x out_dim
//     weights        f32 x out_dim*in_dim
//   checksum         u32      CRC-32 (0xEDB88320) of every preceding byte

namespace edrs {

namespace detail {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

struct ByteWriter {
    std::vector<std::uint8_t> buf;

    void u32(std::uint32_t v) {
        buf.push_back(static_cast<std::uint8_t>(v));
        buf.push_back(static_cast<std::uint8_t>(v >> 8));
        buf.push_back(static_cast<std::uint8_t>(v >> 16));
        buf.push_back(static_cast<std::uint8_t>(v >> 24));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void packed_bits(const std::uint8_t* bits, std::size_t n) {
        for (std::size_t i = 0; i < n; i += 8) {
            std::uint8_t byte = 0;
            for (std::size_t j = 0; j < 8 && i + j < n; ++j)
                if (bits[i + j]) byte |= static_cast<std::uint8_t>(1u << j);
            buf.push_back(byte);
        }
    }
};

struct ByteReader {
    const std::uint8_t* p;
    std::size_t n;
    std::size_t pos = 0;

    void need(std::size_t k) const {
        if (pos + k > n) throw std::runtime_error("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = static_cast<std::uint32_t>(p[pos]) | (static_cast<std::uint32_t>(p[pos + 1]) << 8) |
                          (static_cast<std::uint32_t>(p[pos + 2]) << 16) |
                          (static_cast<std::uint32_t>(p[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    void packed_bits(std::uint8_t* bits, std::size_t count) {
        need((count + 7) / 8);
        for (std::size_t i = 0; i < count; i += 8) {
            const std::uint8_t byte = p[pos++];
            for (std::size_t j = 0; j < 8 && i + j < count; ++j)
                bits[i + j] = (byte >> j) & 1u;
        }
    }
};

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Serializes the net with weights at 32-bit precision. Masks round-trip
// bit-exactly.
template <typename T>
void save_checkpoint(const SequencerNet<T>& net, const std::string& path) {
    detail::ByteWriter w;
    w.buf.insert(w.buf.end(), {'E', 'D', 'R', 'S'});
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(net.generation));
    w.u32(static_cast<std::uint32_t>(net.input_channels));
    w.u32(static_cast<std::uint32_t>(net.input_h));
    w.u32(static_cast<std::uint32_t>(net.input_w));
    w.u32(static_cast<std::uint32_t>(net.conv_layers.size()));
    for (const auto& c : net.conv_layers) {
        w.u32(static_cast<std::uint32_t>(c.filters));
        w.u32(static_cast<std::uint32_t>(c.in_channels));
        w.u32(static_cast<std::uint32_t>(c.kh));
        w.u32(static_cast<std::uint32_t>(c.kw));
    }
    w.u32(static_cast<std::uint32_t>(net.fc_layers.size()));
    for (const auto& f : net.fc_layers) {
        w.u32(static_cast<std::uint32_t>(f.in_dim));
        w.u32(static_cast<std::uint32_t>(f.out_dim));
    }
    for (const auto& c : net.conv_layers) {
        w.packed_bits(c.filter_alive.data(), c.filter_alive.size());
        w.packed_bits(c.mask.bits.data(), c.mask.bits.size());
        for (const auto& b : c.biases) w.f32(static_cast<float>(b));
        for (const auto& v : c.weights.data) w.f32(static_cast<float>(v));
    }
    for (const auto& f : net.fc_layers) {
        for (const auto& b : f.biases) w.f32(static_cast<float>(b));
        for (const auto& v : f.weights.data) w.f32(static_cast<float>(v));
    }
    w.u32(detail::crc32(w.buf.data(), w.buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

template <typename T>
SequencerNet<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 12 || buf[0] != 'E' || buf[1] != 'D' || buf[2] != 'R' || buf[3] != 'S')
        throw std::runtime_error("checkpoint: bad magic in " + path);
    detail::ByteReader r{buf.data(), buf.size() - 4, 4};
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) + " in " + path);
    const std::uint32_t stored = static_cast<std::uint32_t>(buf[buf.size() - 4]) |
                                 (static_cast<std::uint32_t>(buf[buf.size() - 3]) << 8) |
                                 (static_cast<std::uint32_t>(buf[buf.size() - 2]) << 16) |
                                 (static_cast<std::uint32_t>(buf[buf.size() - 1]) << 24);
    if (detail::crc32(buf.data(), buf.size() - 4) != stored)
        throw std::runtime_error("checkpoint: checksum mismatch in " + path);

    SequencerNet<T> net;
    net.generation = static_cast<int>(r.u32());
    net.input_channels = static_cast<int>(r.u32());
    net.input_h = static_cast<int>(r.u32());
    net.input_w = static_cast<int>(r.u32());
    const std::uint32_t n_conv = r.u32();
    std::vector<std::array<int, 4>> conv_dims;
    for (std::uint32_t l = 0; l < n_conv; ++l) {
        std::array<int, 4> d;
        for (auto& v : d) v = static_cast<int>(r.u32());
        conv_dims.push_back(d);
    }
    const std::uint32_t n_fc = r.u32();
    std::vector<std::pair<int, int>> fc_dims;
    for (std::uint32_t l = 0; l < n_fc; ++l) {
        const int in = static_cast<int>(r.u32());
        const int out = static_cast<int>(r.u32());
        fc_dims.emplace_back(in, out);
    }
    for (const auto& d : conv_dims) {
        ConvLayer<T> c(d[0], d[1], d[2], d[3]);
        r.packed_bits(c.filter_alive.data(), c.filter_alive.size());
        r.packed_bits(c.mask.bits.data(), c.mask.bits.size());
        for (auto& b : c.biases) b = static_cast<T>(r.f32());
        for (auto& v : c.weights.data) v = static_cast<T>(r.f32());
        net.conv_layers.push_back(std::move(c));
    }
    for (const auto& [in_dim, out_dim] : fc_dims) {
        FCLayer<T> f(in_dim, out_dim);
        for (auto& b : f.biases) b = static_cast<T>(r.f32());
        for (auto& v : f.weights.data) v = static_cast<T>(r.f32());
        net.fc_layers.push_back(std::move(f));
    }
    net.validate();
    return net;
}

}  // namespace edrs
