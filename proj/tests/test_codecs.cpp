// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <random>

#include "ggq/codecs.hpp"
#include "ggq/inventory.hpp"
#include "test_util.hpp"

using namespace ggq;
using ggq::test::gaussian_tensor;
using ggq::test::random_tensor;

namespace {

// ---- test-local oracle helpers (independent of the codec decode path) ----

float oracle_scale(const std::uint8_t* block) {
    return f32_from_f16(static_cast<half_t>(block[0] | (block[1] << 8)));
}

// Unpacks the signed codes of a symmetric legacy block with local logic.
std::vector<int> oracle_codes(const std::uint8_t* block, Format f) {
    std::vector<int> q(32);
    if (f == Format::Q8_0) {
        for (int i = 0; i < 32; ++i) q[i] = static_cast<std::int8_t>(block[2 + i]);
    } else if (f == Format::Q4_0) {
        for (int i = 0; i < 32; ++i) {
            const std::uint8_t b = block[2 + i / 2];
            q[i] = ((i % 2 == 0) ? (b & 0x0f) : (b >> 4)) - 8;
        }
    } else if (f == Format::Q5_0) {
        for (int i = 0; i < 32; ++i) {
            const std::uint8_t b = block[6 + i / 2];
            const int lo = (i % 2 == 0) ? (b & 0x0f) : (b >> 4);
            const int hi = (block[2 + i / 8] >> (i % 8)) & 1;
            q[i] = (lo | (hi << 4)) - 16;
        }
    }
    return q;
}

// Brute-force nearest code over the full range; ties away from zero.
int brute_force_code(float v, float s, int qmin, int qmax) {
    int best = qmin;
    double best_err = std::fabs(static_cast<double>(v) - static_cast<double>(s) * qmin);
    for (int q = qmin + 1; q <= qmax; ++q) {
        const double err = std::fabs(static_cast<double>(v) - static_cast<double>(s) * q);
        if (err < best_err || (err == best_err && std::abs(q) > std::abs(best))) {
            best_err = err;
            best = q;
        }
    }
    return best;
}

const Format kQuantFormats[] = {Format::Q4_0, Format::Q4_1, Format::Q5_0, Format::Q5_1, Format::Q8_0,
                                Format::Q3_K, Format::Q4_K, Format::Q5_K, Format::Q6_K};

} // namespace

TEST_CASE("symmetric legacy codes match the brute-force nearest-code oracle") {
    struct Sym { Format f; int center; };
    const Sym syms[] = {{Format::Q4_0, 8}, {Format::Q5_0, 16}, {Format::Q8_0, 128}};
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::uniform_real_distribution<float> scale(0.01f, 100.0f);
    for (const auto& sym : syms) {
        const auto& l = layout_of(sym.f);
        for (int trial = 0; trial < 3000; ++trial) {
            float v[32];
            const float s0 = scale(rng);
            for (auto& x : v) x = u(rng) * s0;
            const auto block = quantize_block({v, 32}, l);
            const float s = oracle_scale(block.data());
            if (s == 0.0f) continue;
            const auto q = oracle_codes(block.data(), sym.f);
            for (int i = 0; i < 32; ++i) {
                CAPTURE(l.name, trial, i, v[i], s);
                REQUIRE(q[i] == brute_force_code(v[i], s, -sym.center, sym.center - 1));
            }
        }
    }
}

TEST_CASE("symmetric quantization maps the extreme exactly and bounds the error") {
    // Q8_0 on random data: per-element error <= half the actual step away from
    // the clipped end, and <= the model step 2*max|v|/255 everywhere.
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    const auto& l = layout_of(Format::Q8_0);
    for (int trial = 0; trial < 500; ++trial) {
        float v[32];
        float amax = 0.0f;
        for (auto& x : v) {
            x = u(rng);
            amax = std::max(amax, std::fabs(x));
        }
        const auto block = quantize_block({v, 32}, l);
        const auto rec = dequantize_block(block, l);
        const float s = oracle_scale(block.data());
        const auto q = oracle_codes(block.data(), Format::Q8_0);
        const float model_delta = 2.0f * amax / 255.0f;
        int star = 0;
        for (int i = 1; i < 32; ++i) {
            if (std::fabs(v[i]) > std::fabs(v[star]) ||
                (std::fabs(v[i]) == std::fabs(v[star]) && v[i] < v[star])) {
                star = i;
            }
        }
        for (int i = 0; i < 32; ++i) {
            const float err = std::fabs(v[i] - rec[i]);
            REQUIRE(err <= model_delta + 1e-7f);
            if (q[i] != 127 || std::fabs(v[i] / s - 127.0f) < 0.5f) {
                REQUIRE(err <= std::fabs(s) * 0.5f + 1e-7f); // non-clipped elements
            }
        }
        // the max-magnitude element sits on the extreme code,
        // exact up to the binary16 rounding of the stored scale
        REQUIRE(q[star] == -128);
        REQUIRE(v[star] == Catch::Approx(-128.0 * s).epsilon(0.001));
    }
}

TEST_CASE("quantize_block trivial cases") {
    const auto& q40 = layout_of(Format::Q4_0);
    SECTION("zero block") {
        float v[32] = {};
        const auto block = quantize_block({v, 32}, q40);
        CHECK(oracle_scale(block.data()) == 0.0f);
        for (const float x : dequantize_block(block, q40)) CHECK(x == 0.0f);
    }
    SECTION("constant affine block reconstructs exactly") {
        float v[32];
        std::fill_n(v, 32, 2.75f); // representable in binary16
        const auto block = quantize_block({v, 32}, layout_of(Format::Q4_1));
        for (const float x : dequantize_block(block, layout_of(Format::Q4_1))) CHECK(x == 2.75f);
    }
    SECTION("non-finite input rejected") {
        float v[32] = {};
        v[5] = std::numeric_limits<float>::infinity();
        CHECK_THROWS_AS(quantize_block({v, 32}, q40), std::invalid_argument);
        v[5] = std::numeric_limits<float>::quiet_NaN();
        CHECK_THROWS_AS(quantize_block({v, 32}, q40), std::invalid_argument);
    }
    SECTION("wrong block length rejected") {
        float v[16] = {};
        CHECK_THROWS_AS(quantize_block({v, 16}, q40), std::invalid_argument);
    }
}

TEST_CASE("dequantize_block trivial cases") {
    SECTION("Q4_0: s=0.5, all codes -8 dequantize to -4") {
        std::uint8_t block[18] = {};
        block[0] = 0x00;
        block[1] = 0x38; // f16(0.5)
        // stored code = q+8 = 0 -> nibbles already zero
        for (const float x : dequantize_block({block, 18}, layout_of(Format::Q4_0))) {
            CHECK(x == -4.0f);
        }
    }
    SECTION("Q4_1: s=0.1, m=2.0, q=15 -> 3.5 at binary16 precision") {
        std::uint8_t block[20] = {};
        const half_t d = f16_from_f32(0.1f);
        const half_t m = f16_from_f32(2.0f);
        block[0] = d & 0xff; block[1] = d >> 8;
        block[2] = m & 0xff; block[3] = m >> 8;
        std::memset(block + 4, 0xff, 16); // all codes 15
        for (const float x : dequantize_block({block, 20}, layout_of(Format::Q4_1))) {
            CHECK(x == Catch::Approx(3.5).margin(0.001));
        }
    }
    SECTION("corrupted length rejected") {
        std::uint8_t block[17] = {};
        CHECK_THROWS_AS(dequantize_block({block, 17}, layout_of(Format::Q4_0)), std::invalid_argument);
    }
}

TEST_CASE("packed layout is bit-exact as documented") {
    SECTION("Q4_0 nibble order: low nibble = even index") {
        float v[32];
        // v* = -4.0 -> s = 0.5; v_i = s*q_i gives stored codes i%16
        for (int i = 0; i < 32; ++i) v[i] = 0.5f * static_cast<float>((i % 16) - 8);
        const auto block = quantize_block({v, 32}, layout_of(Format::Q4_0));
        CHECK(block[0] == 0x00);
        CHECK(block[1] == 0x38); // d = f16(0.5), little-endian
        for (int k = 0; k < 16; ++k) {
            const std::uint8_t want =
                static_cast<std::uint8_t>(((2 * k) % 16) | (((2 * k + 1) % 16) << 4));
            CHECK(block[2 + k] == want);
        }
    }
    SECTION("Q5_0 high bit: bit j of qh byte k belongs to element 8k+j") {
        float v[32];
        for (int i = 0; i < 32; ++i) v[i] = 0.25f * static_cast<float>(i - 16); // codes -16..15
        const auto block = quantize_block({v, 32}, layout_of(Format::Q5_0));
        // stored = q+16 = i; bit 4 set for i >= 16 -> qh = 00 00 ff ff
        CHECK(block[2] == 0x00);
        CHECK(block[3] == 0x00);
        CHECK(block[4] == 0xff);
        CHECK(block[5] == 0xff);
    }
    SECTION("Q8_0 stores two's-complement bytes") {
        float v[32] = {};
        v[0] = -1.0f; // code -128, scale 1/128
        const auto block = quantize_block({v, 32}, layout_of(Format::Q8_0));
        CHECK(static_cast<std::int8_t>(block[2]) == -128);
        CHECK(static_cast<std::int8_t>(block[3]) == 0);
    }
}

TEST_CASE("round-trip error variance matches the uniform model within 25%") {
    for (const Format f : kQuantFormats) {
        const auto& l = layout_of(f);
        const auto t = random_tensor("blk.0.ffn_up.weight", {512, 256}, 1000 + static_cast<int>(f));
        const auto q = quantize_tensor_as(t, f);
        const auto rec = dequantize_tensor(q);
        const auto st = error_stats(t, rec, l);
        CAPTURE(l.name, st.empirical_var, st.predicted_var);
        REQUIRE(st.predicted_var > 0.0);
        const double ratio = st.empirical_var / st.predicted_var;
        CHECK(ratio > 0.75);
        CHECK(ratio < 1.25);
    }
}

TEST_CASE("one extra bit shrinks rmse by about a factor of two") {
    const auto t = gaussian_tensor("blk.0.ffn_up.weight", {256, 256}, 42);
    const auto r4 = error_stats(t, dequantize_tensor(quantize_tensor_as(t, Format::Q4_0)), layout_of(Format::Q4_0));
    const auto r5 = error_stats(t, dequantize_tensor(quantize_tensor_as(t, Format::Q5_0)), layout_of(Format::Q5_0));
    CHECK(r5.rmse < r4.rmse);
    const double ratio = r4.rmse / r5.rmse;
    CHECK(ratio > 1.5);
    CHECK(ratio < 2.8);
}

TEST_CASE("rmse orders by effective bit-width over random tensors") {
    const Scheme ladder[] = {Scheme::Q8_0, Scheme::Q6_K, Scheme::Q5_K_M, Scheme::Q4_K_M, Scheme::Q3_K_M};
    int inversions = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto t = gaussian_tensor("blk.0.ffn_up.weight", {8, 512}, 9000 + trial);
        double prev = -1.0;
        for (const Scheme s : ladder) {
            const auto q = quantize_tensor(t, s);
            const auto st = error_stats(t, dequantize_tensor(q), layout_of(q.format));
            if (prev >= 0.0 && st.rmse < prev) ++inversions;
            prev = st.rmse;
        }
    }
    CHECK(inversions <= 1);
}

TEST_CASE("quantize-dequantize-quantize is idempotent on payload bytes") {
    for (const Format f : kQuantFormats) {
        const auto& l = layout_of(f);
        // mixed content: random rows, a zero row, constant rows
        auto t = random_tensor("blk.0.ffn_up.weight", {8, 512}, 31337 + static_cast<int>(f), -3.0f, 3.0f);
        for (int i = 0; i < 512; ++i) t.data[512 * 2 + i] = 0.0f;
        for (int i = 0; i < 512; ++i) t.data[512 * 3 + i] = 1.5f;
        for (int i = 0; i < 512; ++i) t.data[512 * 4 + i] = -0.375f;
        const auto q1 = quantize_tensor_as(t, f);
        const auto d1 = dequantize_tensor(q1);
        const auto q2 = quantize_tensor_as(d1, f);
        CAPTURE(l.name);
        REQUIRE(q1.payload == q2.payload);
    }
}

TEST_CASE("dequantize stays finite for adversarial payloads") {
    std::mt19937_64 rng(4242);
    std::uniform_int_distribution<int> byte(0, 255);
    for (const Format f : kQuantFormats) {
        const auto& l = layout_of(f);
        std::vector<std::uint8_t> block(static_cast<std::size_t>(l.block_bytes));
        for (int trial = 0; trial < 200; ++trial) {
            for (auto& b : block) b = static_cast<std::uint8_t>(byte(rng));
            // keep stored scales finite: clear the f16 exponent top bits of d (and dmin)
            block[1] &= 0x7b;
            if (l.has_offset) block[3] &= 0x7b;
            for (const float x : dequantize_block(block, l)) {
                CAPTURE(l.name, trial);
                REQUIRE(std::isfinite(x));
            }
        }
    }
}

TEST_CASE("tensor quantization is deterministic and thread-count independent") {
    const auto t = random_tensor("blk.0.ffn_gate.weight", {64, 512}, 555);
    for (const Format f : {Format::Q4_0, Format::Q6_K, Format::Q4_K}) {
        const auto a = quantize_tensor_as(t, f, 1);
        const auto b = quantize_tensor_as(t, f, 3);
        const auto c = quantize_tensor_as(t, f, 8);
        CHECK(a.payload == b.payload);
        CHECK(a.payload == c.payload);
    }
}

TEST_CASE("tensor-level rules: norms stay f32, F16 passes through") {
    auto norm = random_tensor("blk.0.attn_norm.weight", {512}, 99);
    const auto qn = quantize_tensor(norm, Scheme::Q4_K_M);
    CHECK(qn.format == Format::F32);
    const auto back = dequantize_tensor(qn);
    CHECK(back.data == norm.data);

    auto w = random_tensor("blk.0.ffn_up.weight", {4, 256}, 98);
    const auto qf = quantize_tensor(w, Scheme::F16);
    CHECK(qf.format == Format::F16);
    CHECK(qf.payload.size() == w.data.size() * 2);

    // divisibility failure names the tensor
    auto bad = random_tensor("blk.0.ffn_up.weight", {4, 48}, 97);
    CHECK_THROWS_WITH(quantize_tensor(bad, Scheme::Q6_K), Catch::Matchers::ContainsSubstring("ffn_up"));
}

TEST_CASE("payload accounting identity: codec output equals predicted size") {
    Inventory inv;
    inv.model = "tiny";
    inv.n_layers = 2;
    inv.tensors.push_back({"token_embd.weight", {512, 256}});
    for (int i = 0; i < 2; ++i) {
        const std::string p = "blk." + std::to_string(i) + ".";
        inv.tensors.push_back({p + "attn_norm.weight", {256}});
        inv.tensors.push_back({p + "attn_q.weight", {256, 256}});
        inv.tensors.push_back({p + "attn_k.weight", {64, 256}});
        inv.tensors.push_back({p + "attn_v.weight", {64, 256}});
        inv.tensors.push_back({p + "attn_output.weight", {256, 256}});
        inv.tensors.push_back({p + "ffn_norm.weight", {256}});
        inv.tensors.push_back({p + "ffn_gate.weight", {512, 256}});
        inv.tensors.push_back({p + "ffn_up.weight", {512, 256}});
        inv.tensors.push_back({p + "ffn_down.weight", {256, 512}});
    }
    inv.tensors.push_back({"output_norm.weight", {256}});
    inv.tensors.push_back({"output.weight", {512, 256}});
    inv.tensors.push_back({"rope_freqs.weight", {32}});

    std::uint64_t seed = 1;
    for (const auto& si : kSchemeTable) {
        const MixRule mix = default_mix_rule(si.id);
        std::int64_t actual = 0;
        for (const auto& spec : inv.tensors) {
            const auto t = random_tensor(spec.name, spec.shape, seed++);
            actual += static_cast<std::int64_t>(quantize_tensor(t, si.id, mix, inv.n_layers).payload.size());
        }
        CAPTURE(si.name);
        CHECK(actual == predict_model_size(inv, si.id, mix).payload_bytes);
    }
}

TEST_CASE("error_stats basics") {
    const auto t = random_tensor("x", {4, 256}, 3);
    const auto st = error_stats(t, t, layout_of(Format::Q4_0));
    CHECK(st.rmse == 0.0);
    CHECK(st.max_abs_err == 0.0);
    CHECK(st.empirical_var <= st.max_abs_err * st.max_abs_err + 1e-18);

    auto other = t;
    other.shape = {256, 4};
    CHECK_THROWS_AS(error_stats(t, other, layout_of(Format::Q4_0)), std::invalid_argument);

    // moments are finite, var <= max^2 on real reconstructions
    const auto q = quantize_tensor_as(t, Format::Q5_K);
    const auto st2 = error_stats(t, dequantize_tensor(q), layout_of(Format::Q5_K));
    CHECK(st2.rmse > 0.0);
    CHECK(st2.empirical_var <= st2.max_abs_err * st2.max_abs_err + 1e-18);
}
