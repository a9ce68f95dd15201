#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "edrs/checkpoint.hpp"
#include "edrs/engine.hpp"
#include "edrs/evolution.hpp"
#include "edrs/sequencer.hpp"
#include "test_util.hpp"

using namespace edrs;
using namespace edrs::testutil;

namespace {

std::filesystem::path temp_file(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / "edrs_test";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("the initial sequencer matches the canonical architecture") {
    auto net = build_initial<double>(7);
    REQUIRE(net.generation == 1);
    REQUIRE(net.conv_layers.size() == 3);
    REQUIRE(net.fc_layers.size() == 2);
    REQUIRE(count_active_synapses(net) == 44320);  // 288 + 25600 + 18432

    // Dense mask everywhere.
    for (const auto& c : net.conv_layers) REQUIRE(c.active_synapses() == c.weights.data.size());

    SECTION("deterministic in the seed") {
        auto again = build_initial<double>(7);
        for (std::size_t l = 0; l < 3; ++l)
            REQUIRE(again.conv_layers[l].weights.data == net.conv_layers[l].weights.data);
        auto other = build_initial<double>(8);
        REQUIRE(other.conv_layers[0].weights.data != net.conv_layers[0].weights.data);
    }

    SECTION("last conv activation is 4x4x64 on a 32x32 batch") {
        Rng rng(1);
        auto batch = random_batch(rng, net, 2);
        ForwardTrace<double> tr;
        forward(net, batch, &tr);
        REQUIRE(tr.pool_out.back().shape == std::vector<int>{2, 64, 4, 4});
        REQUIRE(tr.fc_pre.back().shape == std::vector<int>{2, 2});
    }
}

TEST_CASE("per-layer dense synapse counts follow the layer specs") {
    auto net = build_initial<float>(3);
    REQUIRE(net.conv_layers[0].active_synapses() == 32u * 1 * 3 * 3);    // 288
    REQUIRE(net.conv_layers[1].active_synapses() == 32u * 32 * 5 * 5);   // 25600
    REQUIRE(net.conv_layers[2].active_synapses() == 64u * 32 * 3 * 3);   // 18432
    // A hypothetical all-dead layer contributes zero.
    auto& c = net.conv_layers[1];
    for (auto& a : c.filter_alive) a = 0;
    c.enforce_mask();
    REQUIRE(c.active_synapses() == 0);
    REQUIRE(count_active_synapses(net) == 288 + 18432);
}

TEST_CASE("extract_sequence returns the alive-filter features in order") {
    auto net = build_initial<double>(21);
    Rng rng(5);
    Tensor<double> patch({32, 32});
    for (auto& v : patch.data) v = rng.uniform();

    auto seq = extract_sequence(net, patch);
    REQUIRE(seq.values.size() == 1024);  // 16 x 64
    REQUIRE(seq.generation == 1);

    SECTION("length is 16 x alive filters after pruning the last layer") {
        auto& last = net.conv_layers.back();
        for (int f = 40; f < 64; ++f) last.filter_alive[f] = 0;
        last.enforce_mask();
        auto pruned = extract_sequence(net, patch);
        REQUIRE(pruned.values.size() == 16u * 40);
    }

    SECTION("zero input with zero biases gives the zero sequence") {
        Tensor<double> zero({32, 32});
        auto z = extract_sequence(net, zero);
        for (double v : z.values) REQUIRE(v == 0.0);
    }

    SECTION("wrong patch shape is rejected") {
        Tensor<double> bad({31, 32});
        REQUIRE_THROWS_AS(extract_sequence(net, bad), std::invalid_argument);
    }
}

TEST_CASE("compactness metrics reproduce the tabulated arithmetic") {
    auto net = build_initial<double>(12);
    auto m = compactness_metrics(net);
    REQUIRE(m.total_alive_filters == 128);
    REQUIRE(m.rsl_table == 2048);
    REQUIRE(m.rsl_last_layer == 1024);

    SECTION("16x identity holds for any alive-filter pattern") {
        Rng rng(2);
        for (int trial = 0; trial < 5; ++trial) {
            auto dna = compute_dna(net);
            auto env = calibrate_alpha(dna, 0.8, net);
            auto outcome = synthesize_offspring(net, env, dna, rng.next());
            net = build_offspring_net(net, outcome);
            auto mm = compactness_metrics(net);
            REQUIRE(mm.rsl_table == 16 * mm.total_alive_filters);
            REQUIRE(mm.rsl_last_layer == 16 * net.conv_layers.back().alive_filters());
            // The emitted sequence length equals rsl_last_layer.
            Tensor<double> patch({32, 32});
            auto seq = extract_sequence(net, patch);
            REQUIRE(static_cast<long long>(seq.values.size()) == mm.rsl_last_layer);
        }
    }

    SECTION("tabulated row arithmetic: 171.0 alive filters maps to 2736.0") {
        // One-decimal averages scale exactly: 16 * 171.0 == 2736.0.
        REQUIRE(16 * 1710 == 27360);
    }

    SECTION("one filter per layer") {
        for (auto& c : net.conv_layers) {
            for (int f = 1; f < c.filters; ++f) c.filter_alive[f] = 0;
            c.enforce_mask();
        }
        auto mm = compactness_metrics(net);
        REQUIRE(mm.total_alive_filters == 3);
        REQUIRE(mm.rsl_last_layer == 16);
    }
}

TEST_CASE("checkpoints round-trip masks bit-exactly and weights at 32-bit precision") {
    Rng rng(2025);
    auto net = build_initial<float>(404);
    // Evolve a few generations so masks and alive bits are nontrivial.
    for (int g = 0; g < 6; ++g) {
        auto dna = compute_dna(net);
        auto env = calibrate_alpha(dna, 0.8, net);
        auto outcome = synthesize_offspring(net, env, dna, rng.next());
        net = build_offspring_net(net, outcome);
    }
    REQUIRE(net.generation == 7);

    const auto path = temp_file("roundtrip.edrs");
    save_checkpoint(net, path.string());
    auto loaded = load_checkpoint<float>(path.string());

    REQUIRE(loaded.generation == 7);
    for (std::size_t l = 0; l < net.conv_layers.size(); ++l) {
        REQUIRE(loaded.conv_layers[l].mask == net.conv_layers[l].mask);
        REQUIRE(loaded.conv_layers[l].filter_alive == net.conv_layers[l].filter_alive);
        REQUIRE(loaded.conv_layers[l].weights.data == net.conv_layers[l].weights.data);
        REQUIRE(loaded.conv_layers[l].biases == net.conv_layers[l].biases);
    }
    for (std::size_t l = 0; l < net.fc_layers.size(); ++l)
        REQUIRE(loaded.fc_layers[l].weights.data == net.fc_layers[l].weights.data);

    // Forward outputs are identical at 32-bit.
    auto batch = random_batch(rng, net, 2);
    auto a = forward(net, batch);
    auto b = forward(loaded, batch);
    for (std::size_t i = 0; i < a.data.size(); ++i) REQUIRE(a.data[i] == b.data[i]);
}

TEST_CASE("checkpoint corruption and format errors give distinct diagnostics") {
    auto net = build_initial<float>(1);
    const auto path = temp_file("corrupt.edrs");
    save_checkpoint(net, path.string());

    SECTION("flipping a body byte is caught by the checksum") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(200);
        char c;
        f.seekg(200);
        f.get(c);
        f.seekp(200);
        f.put(static_cast<char>(c ^ 0x40));
        f.close();
        REQUIRE_THROWS_WITH(load_checkpoint<float>(path.string()),
                            Catch::Matchers::ContainsSubstring("checksum mismatch"));
    }

    SECTION("bad magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
        f.close();
        REQUIRE_THROWS_WITH(load_checkpoint<float>(path.string()),
                            Catch::Matchers::ContainsSubstring("bad magic"));
    }

    SECTION("version mismatch") {
        // Patch the version field and refresh the checksum so only the
        // version check can fire.
        std::ifstream in(path, std::ios::binary);
        std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        buf[4] = 99;
        const std::uint32_t crc = edrs::detail::crc32(buf.data(), buf.size() - 4);
        for (int i = 0; i < 4; ++i) buf[buf.size() - 4 + i] = static_cast<std::uint8_t>(crc >> (8 * i));
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        out.close();
        REQUIRE_THROWS_WITH(load_checkpoint<float>(path.string()),
                            Catch::Matchers::ContainsSubstring("unsupported version"));
    }

    SECTION("missing file") {
        REQUIRE_THROWS_WITH(load_checkpoint<float>("/nonexistent/nope.edrs"),
                            Catch::Matchers::ContainsSubstring("cannot open"));
    }
}

TEST_CASE("checkpoints preserve double nets at 32-bit precision") {
    auto net = build_initial<double>(50);
    const auto path = temp_file("cast.edrs");
    save_checkpoint(net, path.string());
    auto loaded = load_checkpoint<double>(path.string());
    for (std::size_t l = 0; l < net.conv_layers.size(); ++l)
        for (std::size_t i = 0; i < net.conv_layers[l].weights.data.size(); ++i)
            REQUIRE(loaded.conv_layers[l].weights.data[i] ==
                    static_cast<double>(static_cast<float>(net.conv_layers[l].weights.data[i])));
}
