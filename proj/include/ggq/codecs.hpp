// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

#include "ggq/half.hpp"
#include "ggq/schemes.hpp"
#include "ggq/tensor.hpp"

// Block codecs for every storage format.
//
// Packed layouts (byte offsets inside one block; all multi-byte fields
// little-endian, scales/offsets binary16):
//
//   Q4_0 (18B, 32 w):  d@0        qs@2  (16B nibbles, stored code = q+8)
//   Q4_1 (20B, 32 w):  d@0  m@2   qs@4  (16B nibbles, codes 0..15)
//   Q5_0 (22B, 32 w):  d@0  qh@2  qs@6  (qh 4B = bit 4 of each code; stored = q+16)
//   Q5_1 (24B, 32 w):  d@0  m@2 qh@4 qs@8
//   Q8_0 (34B, 32 w):  d@0        qs@2  (32 signed bytes)
//   Q3_K (110B, 256 w): d@0 scales@2 (16 x 6-bit, value-32 signed) qs@14 (64B 2-bit)
//                       hmask@78 (32B high bits); stored code = q+4, 16 sub-blocks of 16
//   Q4_K (144B, 256 w): d@0 dmin@2 scales@4 (8 x 6-bit scales then 8 x 6-bit mins)
//                       qs@16 (128B nibbles); v = d*sc*q - dmin*mn, 8 sub-blocks of 32
//   Q5_K (176B, 256 w): d@0 dmin@2 scales@4 qh@16 (32B bit 4) qs@48 (128B low nibbles)
//   Q6_K (210B, 256 w): d@0 scales@2 (16 signed bytes) ql@18 (128B nibbles)
//                       qh@146 (64B, 2 high bits per code); stored = q+32, 16 sub-blocks of 16
//
// Nibble order: low nibble = even element index. High-bit bytes: bit j of
// byte k belongs to element 8k+j; Q6_K 2-bit pairs: bits [2j,2j+2) of byte k
// belong to element 4k+j. 6-bit metadata is an LSB-first bit stream.
//
// Every block decodes through the affine view  v_i = S_sub * code_i + O_sub
// with unpacked unsigned codes (Q8_0 codes are biased by +128 on unpack).

namespace ggq {

namespace detail {

/// Round half away from zero; saturates far outside any code range.
inline int nearest_int(float x) {
    x = std::clamp(x, -2.0e9f, 2.0e9f);
    return static_cast<int>(std::lround(x));
}

inline std::uint16_t load_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (static_cast<std::uint16_t>(p[1]) << 8));
}
inline void store_u16(std::uint8_t* p, std::uint16_t v) {
    p[0] = static_cast<std::uint8_t>(v & 0xff);
    p[1] = static_cast<std::uint8_t>(v >> 8);
}

inline std::uint32_t get_bitfield(const std::uint8_t* base, int index, int width) {
    const int bit = index * width;
    std::uint32_t v = 0;
    for (int i = 0; i < width; ++i) {
        const int b = bit + i;
        v |= static_cast<std::uint32_t>((base[b >> 3] >> (b & 7)) & 1u) << i;
    }
    return v;
}
inline void put_bitfield(std::uint8_t* base, int index, int width, std::uint32_t value) {
    const int bit = index * width;
    for (int i = 0; i < width; ++i) {
        const int b = bit + i;
        const std::uint8_t mask = static_cast<std::uint8_t>(1u << (b & 7));
        if ((value >> i) & 1u) base[b >> 3] |= mask;
        else base[b >> 3] &= static_cast<std::uint8_t>(~mask);
    }
}

inline void pack_nibbles(const std::uint8_t* codes, int n, std::uint8_t* out) {
    for (int k = 0; k < n / 2; ++k) {
        out[k] = static_cast<std::uint8_t>((codes[2 * k] & 0x0f) | (codes[2 * k + 1] << 4));
    }
}
inline void unpack_nibbles(const std::uint8_t* in, int n, std::uint8_t* codes) {
    for (int k = 0; k < n / 2; ++k) {
        codes[2 * k] = in[k] & 0x0f;
        codes[2 * k + 1] = in[k] >> 4;
    }
}

/// Index of the max-magnitude element; ties prefer the negative extreme,
/// then the lowest index.
inline int max_magnitude_index(std::span<const float> v) {
    int best = 0;
    float amax = std::fabs(v[0]);
    for (int i = 1; i < static_cast<int>(v.size()); ++i) {
        const float a = std::fabs(v[i]);
        if (a > amax || (a == amax && v[i] < v[best])) {
            amax = a;
            best = i;
        }
    }
    return best;
}

struct MinMax {
    float mn;
    float mx;
    int imin; ///< first index attaining mn
    int imax; ///< first index attaining mx
};
inline MinMax min_max(std::span<const float> v) {
    MinMax r{v[0], v[0], 0, 0};
    for (int i = 1; i < static_cast<int>(v.size()); ++i) {
        if (v[i] < r.mn) { r.mn = v[i]; r.imin = i; }
        if (v[i] > r.mx) { r.mx = v[i]; r.imax = i; }
    }
    return r;
}

// --- legacy symmetric (Q4_0 / Q5_0 / Q8_0) ---------------------------------

/// center = 2^(bits-1); codes live in [-center, center-1].
/// Scale convention: s = v* / -center with v* the signed max-magnitude
/// element, so v* lands exactly on the negative extreme code.
inline void encode_legacy_symmetric(std::span<const float> v, int center, std::uint8_t* codes_out,
                                    std::uint16_t& d16) {
    const int n = static_cast<int>(v.size());
    const int star = max_magnitude_index(v);
    const float vstar = v[star];
    if (vstar == 0.0f) {
        d16 = 0;
        std::fill_n(codes_out, n, static_cast<std::uint8_t>(center));
        return;
    }
    d16 = f16_from_f32_saturate(vstar / static_cast<float>(-center));
    const float s = f32_from_f16(d16);
    if (s == 0.0f) {
        d16 = 0;
        std::fill_n(codes_out, n, static_cast<std::uint8_t>(center));
        return;
    }
    for (int i = 0; i < n; ++i) {
        const int q = std::clamp(nearest_int(v[i] / s), -center, center - 1);
        codes_out[i] = static_cast<std::uint8_t>(q + center);
    }
}

// --- legacy affine (Q4_1 / Q5_1) -------------------------------------------

inline void encode_legacy_affine(std::span<const float> v, int qmax, std::uint8_t* codes_out,
                                 std::uint16_t& d16, std::uint16_t& m16) {
    const int n = static_cast<int>(v.size());
    const auto mm = min_max(v);
    m16 = f16_from_f32_saturate(mm.mn);
    if (!(mm.mx > mm.mn)) { // constant block (incl. all zero): exact offset, zero scale
        d16 = 0;
        std::fill_n(codes_out, n, 0);
        return;
    }
    d16 = f16_from_f32_saturate((mm.mx - mm.mn) / static_cast<float>(qmax));
    const float s = f32_from_f16(d16);
    const float m = f32_from_f16(m16);
    if (s == 0.0f) {
        d16 = 0;
        std::fill_n(codes_out, n, 0);
        return;
    }
    for (int i = 0; i < n; ++i) {
        codes_out[i] = static_cast<std::uint8_t>(std::clamp(nearest_int((v[i] - m) / s), 0, qmax));
    }
}

// --- K-quant symmetric (Q3_K / Q6_K) ---------------------------------------

/// Sub-block scales are fitted from the max-magnitude element of each
/// sub-block, quantized against the binary16 super-scale, and codes are
/// re-assigned against the quantized scales. The sub-block anchor element
/// keeps its exact extreme code so re-encoding decoded data is stable.
struct KSymParams {
    int center;    ///< 4 for Q3_K, 32 for Q6_K
    int scale_max; ///< 31 for Q3_K (6-bit, value-32), 127 for Q6_K (signed byte)
};

inline void encode_ksym(std::span<const float> v, int sub_size, const KSymParams& p, std::uint8_t* codes_out,
                        std::uint16_t& d16, int* scales_out /*signed values*/) {
    const int n = static_cast<int>(v.size());
    const int n_sub = n / sub_size;
    std::vector<float> r(n_sub);
    std::vector<int> star(n_sub);
    float rmax = 0.0f;
    for (int j = 0; j < n_sub; ++j) {
        const auto sub = v.subspan(static_cast<std::size_t>(j) * sub_size, sub_size);
        star[j] = max_magnitude_index(sub);
        r[j] = sub[star[j]] / static_cast<float>(-p.center);
        rmax = std::max(rmax, std::fabs(r[j]));
    }
    d16 = (rmax == 0.0f) ? 0 : f16_from_f32_saturate(rmax / static_cast<float>(p.scale_max));
    const float d = f32_from_f16(d16);
    for (int j = 0; j < n_sub; ++j) {
        const int isc = (d == 0.0f) ? 0 : std::clamp(nearest_int(r[j] / d), -p.scale_max, p.scale_max);
        scales_out[j] = isc;
        const float s = d * static_cast<float>(isc);
        std::uint8_t* codes = codes_out + static_cast<std::size_t>(j) * sub_size;
        if (s == 0.0f) {
            std::fill_n(codes, sub_size, static_cast<std::uint8_t>(p.center));
            continue;
        }
        const float* sub = v.data() + static_cast<std::size_t>(j) * sub_size;
        for (int i = 0; i < sub_size; ++i) {
            const int q = std::clamp(nearest_int(sub[i] / s), -p.center, p.center - 1);
            codes[i] = static_cast<std::uint8_t>(q + p.center);
        }
        codes[star[j]] = 0; // anchor: max magnitude -> negative extreme
    }
}

// --- K-quant affine (Q4_K / Q5_K) ------------------------------------------

inline void encode_kaff(std::span<const float> v, int sub_size, int qmax, std::uint8_t* codes_out,
                        std::uint16_t& d16, std::uint16_t& dmin16, int* sc_out, int* mn_out) {
    const int n = static_cast<int>(v.size());
    const int n_sub = n / sub_size;
    std::vector<float> s_raw(n_sub), m_raw(n_sub);
    std::vector<MinMax> mm(n_sub);
    std::vector<bool> clamped(n_sub);
    float smax = 0.0f, mmax = 0.0f;
    for (int j = 0; j < n_sub; ++j) {
        const auto sub = v.subspan(static_cast<std::size_t>(j) * sub_size, sub_size);
        mm[j] = min_max(sub);
        clamped[j] = mm[j].mn > 0.0f; // minima are stored unsigned, so positive minima clamp to 0
        const float mn = clamped[j] ? 0.0f : mm[j].mn;
        s_raw[j] = (mm[j].mx > mn) ? (mm[j].mx - mn) / static_cast<float>(qmax) : 0.0f;
        m_raw[j] = -mn;
        smax = std::max(smax, s_raw[j]);
        mmax = std::max(mmax, m_raw[j]);
    }
    d16 = (smax == 0.0f) ? 0 : f16_from_f32_saturate(smax / 63.0f);
    dmin16 = (mmax == 0.0f) ? 0 : f16_from_f32_saturate(mmax / 63.0f);
    const float d = f32_from_f16(d16);
    const float dmin = f32_from_f16(dmin16);
    for (int j = 0; j < n_sub; ++j) {
        const int isc = (d == 0.0f) ? 0 : std::clamp(nearest_int(s_raw[j] / d), 0, 63);
        const int imn = (dmin == 0.0f) ? 0 : std::clamp(nearest_int(m_raw[j] / dmin), 0, 63);
        sc_out[j] = isc;
        mn_out[j] = imn;
        const float s = d * static_cast<float>(isc);
        const float m = dmin * static_cast<float>(imn);
        std::uint8_t* codes = codes_out + static_cast<std::size_t>(j) * sub_size;
        if (s == 0.0f) {
            std::fill_n(codes, sub_size, 0); // constant sub-block decodes to -m
            continue;
        }
        const float* sub = v.data() + static_cast<std::size_t>(j) * sub_size;
        for (int i = 0; i < sub_size; ++i) {
            codes[i] = static_cast<std::uint8_t>(std::clamp(nearest_int((sub[i] + m) / s), 0, qmax));
        }
        codes[mm[j].imax] = static_cast<std::uint8_t>(qmax); // anchor the range ends
        if (!clamped[j]) codes[mm[j].imin] = 0;
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Unified decoded view
// ---------------------------------------------------------------------------

/// Per-sub-block affine parameters of one decoded block: v_i = S*code_i + O.
struct BlockSubParams {
    float scale[16];
    float offset[16];
    int sub_size;
    int n_sub;
};

/// Unpacks the integer codes of one block into `codes` (unsigned; Q8_0 is
/// biased by +128) and fills the per-sub-block affine parameters.
inline void decode_block_params(const std::uint8_t* block, const FormatLayout& l, std::uint8_t* codes,
                                BlockSubParams& p) {
    using namespace detail;
    const int K = l.block_weights;
    p.n_sub = l.sub_blocks;
    p.sub_size = K / l.sub_blocks;
    switch (l.id) {
        case Format::Q4_0: {
            const float s = f32_from_f16(load_u16(block));
            unpack_nibbles(block + 2, 32, codes);
            p.scale[0] = s;
            p.offset[0] = -8.0f * s;
            break;
        }
        case Format::Q4_1: {
            const float s = f32_from_f16(load_u16(block));
            const float m = f32_from_f16(load_u16(block + 2));
            unpack_nibbles(block + 4, 32, codes);
            p.scale[0] = s;
            p.offset[0] = m;
            break;
        }
        case Format::Q5_0: {
            const float s = f32_from_f16(load_u16(block));
            const std::uint8_t* qh = block + 2;
            unpack_nibbles(block + 6, 32, codes);
            for (int i = 0; i < 32; ++i) {
                codes[i] |= static_cast<std::uint8_t>(((qh[i >> 3] >> (i & 7)) & 1u) << 4);
            }
            p.scale[0] = s;
            p.offset[0] = -16.0f * s;
            break;
        }
        case Format::Q5_1: {
            const float s = f32_from_f16(load_u16(block));
            const float m = f32_from_f16(load_u16(block + 2));
            const std::uint8_t* qh = block + 4;
            unpack_nibbles(block + 8, 32, codes);
            for (int i = 0; i < 32; ++i) {
                codes[i] |= static_cast<std::uint8_t>(((qh[i >> 3] >> (i & 7)) & 1u) << 4);
            }
            p.scale[0] = s;
            p.offset[0] = m;
            break;
        }
        case Format::Q8_0: {
            const float s = f32_from_f16(load_u16(block));
            const std::uint8_t* qs = block + 2;
            for (int i = 0; i < 32; ++i) codes[i] = static_cast<std::uint8_t>(qs[i] ^ 0x80u); // bias +128
            p.scale[0] = s;
            p.offset[0] = -128.0f * s;
            break;
        }
        case Format::Q3_K: {
            const float d = f32_from_f16(load_u16(block));
            const std::uint8_t* scales = block + 2;
            const std::uint8_t* qs = block + 14;
            const std::uint8_t* hmask = block + 78;
            for (int i = 0; i < 256; ++i) {
                const std::uint8_t lo = (qs[i >> 2] >> ((i & 3) * 2)) & 3u;
                const std::uint8_t hi = (hmask[i >> 3] >> (i & 7)) & 1u;
                codes[i] = static_cast<std::uint8_t>(lo | (hi << 2));
            }
            for (int j = 0; j < 16; ++j) {
                const int isc = static_cast<int>(get_bitfield(scales, j, 6)) - 32;
                const float s = d * static_cast<float>(isc);
                p.scale[j] = s;
                p.offset[j] = -4.0f * s;
            }
            break;
        }
        case Format::Q4_K: {
            const float d = f32_from_f16(load_u16(block));
            const float dmin = f32_from_f16(load_u16(block + 2));
            const std::uint8_t* scales = block + 4;
            unpack_nibbles(block + 16, 256, codes);
            for (int j = 0; j < 8; ++j) {
                p.scale[j] = d * static_cast<float>(get_bitfield(scales, j, 6));
                p.offset[j] = -(dmin * static_cast<float>(get_bitfield(scales, 8 + j, 6)));
            }
            break;
        }
        case Format::Q5_K: {
            const float d = f32_from_f16(load_u16(block));
            const float dmin = f32_from_f16(load_u16(block + 2));
            const std::uint8_t* scales = block + 4;
            const std::uint8_t* qh = block + 16;
            unpack_nibbles(block + 48, 256, codes);
            for (int i = 0; i < 256; ++i) {
                codes[i] |= static_cast<std::uint8_t>(((qh[i >> 3] >> (i & 7)) & 1u) << 4);
            }
            for (int j = 0; j < 8; ++j) {
                p.scale[j] = d * static_cast<float>(get_bitfield(scales, j, 6));
                p.offset[j] = -(dmin * static_cast<float>(get_bitfield(scales, 8 + j, 6)));
            }
            break;
        }
        case Format::Q6_K: {
            const float d = f32_from_f16(load_u16(block));
            const std::int8_t* scales = reinterpret_cast<const std::int8_t*>(block + 2);
            const std::uint8_t* ql = block + 18;
            const std::uint8_t* qh = block + 146;
            unpack_nibbles(ql, 256, codes);
            for (int i = 0; i < 256; ++i) {
                codes[i] |= static_cast<std::uint8_t>(((qh[i >> 2] >> ((i & 3) * 2)) & 3u) << 4);
            }
            for (int j = 0; j < 16; ++j) {
                const float s = d * static_cast<float>(scales[j]);
                p.scale[j] = s;
                p.offset[j] = -32.0f * s;
            }
            break;
        }
        default:
            throw std::invalid_argument(std::string("decode_block_params: not a block format: ") + l.name);
    }
}

// ---------------------------------------------------------------------------
// Block-level API
// ---------------------------------------------------------------------------

inline void quantize_block_into(std::span<const float> values, const FormatLayout& l, std::uint8_t* out) {
    using namespace detail;
    if (static_cast<int>(values.size()) != l.block_weights) {
        throw std::invalid_argument(std::string("quantize_block: expected ") + std::to_string(l.block_weights) +
                                    " values for " + l.name);
    }
    for (const float x : values) {
        if (!std::isfinite(x)) throw std::invalid_argument("quantize_block: non-finite input");
    }
    std::uint8_t codes[256];
    std::uint16_t d16 = 0, m16 = 0;
    int sc[16], mn[16];
    std::memset(out, 0, static_cast<std::size_t>(l.block_bytes));
    switch (l.id) {
        case Format::Q4_0:
            encode_legacy_symmetric(values, 8, codes, d16);
            store_u16(out, d16);
            pack_nibbles(codes, 32, out + 2);
            break;
        case Format::Q4_1:
            encode_legacy_affine(values, 15, codes, d16, m16);
            store_u16(out, d16);
            store_u16(out + 2, m16);
            pack_nibbles(codes, 32, out + 4);
            break;
        case Format::Q5_0: {
            encode_legacy_symmetric(values, 16, codes, d16);
            store_u16(out, d16);
            std::uint8_t* qh = out + 2;
            std::uint8_t lo[32];
            for (int i = 0; i < 32; ++i) {
                lo[i] = codes[i] & 0x0f;
                if (codes[i] & 0x10) qh[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
            }
            pack_nibbles(lo, 32, out + 6);
            break;
        }
        case Format::Q5_1: {
            encode_legacy_affine(values, 31, codes, d16, m16);
            store_u16(out, d16);
            store_u16(out + 2, m16);
            std::uint8_t* qh = out + 4;
            std::uint8_t lo[32];
            for (int i = 0; i < 32; ++i) {
                lo[i] = codes[i] & 0x0f;
                if (codes[i] & 0x10) qh[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
            }
            pack_nibbles(lo, 32, out + 8);
            break;
        }
        case Format::Q8_0:
            encode_legacy_symmetric(values, 128, codes, d16);
            store_u16(out, d16);
            for (int i = 0; i < 32; ++i) out[2 + i] = static_cast<std::uint8_t>(codes[i] ^ 0x80u);
            break;
        case Format::Q3_K: {
            encode_ksym(values, 16, {4, 31}, codes, d16, sc);
            store_u16(out, d16);
            std::uint8_t* scales = out + 2;
            std::uint8_t* qs = out + 14;
            std::uint8_t* hmask = out + 78;
            for (int j = 0; j < 16; ++j) put_bitfield(scales, j, 6, static_cast<std::uint32_t>(sc[j] + 32));
            for (int i = 0; i < 256; ++i) {
                qs[i >> 2] |= static_cast<std::uint8_t>((codes[i] & 3u) << ((i & 3) * 2));
                if (codes[i] & 4u) hmask[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
            }
            break;
        }
        case Format::Q4_K: {
            encode_kaff(values, 32, 15, codes, d16, m16, sc, mn);
            store_u16(out, d16);
            store_u16(out + 2, m16);
            std::uint8_t* scales = out + 4;
            for (int j = 0; j < 8; ++j) {
                put_bitfield(scales, j, 6, static_cast<std::uint32_t>(sc[j]));
                put_bitfield(scales, 8 + j, 6, static_cast<std::uint32_t>(mn[j]));
            }
            pack_nibbles(codes, 256, out + 16);
            break;
        }
        case Format::Q5_K: {
            encode_kaff(values, 32, 31, codes, d16, m16, sc, mn);
            store_u16(out, d16);
            store_u16(out + 2, m16);
            std::uint8_t* scales = out + 4;
            std::uint8_t* qh = out + 16;
            for (int j = 0; j < 8; ++j) {
                put_bitfield(scales, j, 6, static_cast<std::uint32_t>(sc[j]));
                put_bitfield(scales, 8 + j, 6, static_cast<std::uint32_t>(mn[j]));
            }
            std::uint8_t lo[256];
            for (int i = 0; i < 256; ++i) {
                lo[i] = codes[i] & 0x0f;
                if (codes[i] & 0x10) qh[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
            }
            pack_nibbles(lo, 256, out + 48);
            break;
        }
        case Format::Q6_K: {
            encode_ksym(values, 16, {32, 127}, codes, d16, sc);
            store_u16(out, d16);
            std::int8_t* scales = reinterpret_cast<std::int8_t*>(out + 2);
            std::uint8_t* ql = out + 18;
            std::uint8_t* qh = out + 146;
            for (int j = 0; j < 16; ++j) scales[j] = static_cast<std::int8_t>(sc[j]);
            std::uint8_t lo[256];
            for (int i = 0; i < 256; ++i) {
                lo[i] = codes[i] & 0x0f;
                qh[i >> 2] |= static_cast<std::uint8_t>(((codes[i] >> 4) & 3u) << ((i & 3) * 2));
            }
            pack_nibbles(lo, 256, ql);
            break;
        }
        default:
            throw std::invalid_argument(std::string("quantize_block: not a block format: ") + l.name);
    }
}

inline std::vector<std::uint8_t> quantize_block(std::span<const float> values, const FormatLayout& l) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(l.block_bytes));
    quantize_block_into(values, l, out.data());
    return out;
}

inline void dequantize_block_into(const std::uint8_t* block, const FormatLayout& l, float* out) {
    std::uint8_t codes[256];
    BlockSubParams p;
    decode_block_params(block, l, codes, p);
    for (int j = 0; j < p.n_sub; ++j) {
        const float s = p.scale[j];
        const float o = p.offset[j];
        float* dst = out + static_cast<std::size_t>(j) * p.sub_size;
        const std::uint8_t* c = codes + static_cast<std::size_t>(j) * p.sub_size;
        for (int i = 0; i < p.sub_size; ++i) dst[i] = s * static_cast<float>(c[i]) + o;
    }
}

inline std::vector<float> dequantize_block(std::span<const std::uint8_t> block, const FormatLayout& l) {
    if (static_cast<int>(block.size()) != l.block_bytes) {
        throw std::invalid_argument(std::string("dequantize_block: corrupted block length for ") + l.name +
                                    ": got " + std::to_string(block.size()) + ", want " +
                                    std::to_string(l.block_bytes));
    }
    std::vector<float> out(static_cast<std::size_t>(l.block_weights));
    dequantize_block_into(block.data(), l, out.data());
    return out;
}

// ---------------------------------------------------------------------------
// Tensor-level API
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fn>
inline void parallel_chunks(std::int64_t n_items, int threads, Fn&& fn) {
    if (threads <= 1 || n_items <= 1) {
        fn(0, n_items);
        return;
    }
    const int t = static_cast<int>(std::min<std::int64_t>(threads, n_items));
    const std::int64_t chunk = (n_items + t - 1) / t;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(t));
    for (int w = 0; w < t; ++w) {
        const std::int64_t lo = w * chunk;
        const std::int64_t hi = std::min<std::int64_t>(n_items, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

} // namespace detail

/// Encodes a tensor with an explicit storage format. Block partitioning runs
/// along the contiguous dimension; output is identical for any thread count.
inline QuantizedTensor quantize_tensor_as(const TensorF32& t, Format fmt, int threads = 1) {
    check_tensor(t);
    const FormatLayout& l = layout_of(fmt);
    const std::int64_t elems = element_count(t.shape);
    QuantizedTensor q;
    q.name = t.name;
    q.format = fmt;
    q.shape = t.shape;
    if (fmt == Format::F32) {
        q.payload.resize(static_cast<std::size_t>(elems) * 4);
        std::memcpy(q.payload.data(), t.data.data(), q.payload.size());
        return q;
    }
    if (fmt == Format::F16) {
        q.payload.resize(static_cast<std::size_t>(elems) * 2);
        for (std::int64_t i = 0; i < elems; ++i) {
            detail::store_u16(q.payload.data() + 2 * i, f16_from_f32_saturate(t.data[static_cast<std::size_t>(i)]));
        }
        return q;
    }
    const std::int64_t cols = contiguous_dim(t.shape);
    if (cols % l.block_weights != 0) {
        throw std::invalid_argument("tensor '" + t.name + "': contiguous dimension " + std::to_string(cols) +
                                    " not divisible by block size " + std::to_string(l.block_weights) + " of " +
                                    l.name);
    }
    for (const float x : t.data) {
        if (!std::isfinite(x)) throw std::invalid_argument("tensor '" + t.name + "': non-finite input");
    }
    const std::int64_t n_blocks = elems / l.block_weights;
    q.payload.resize(static_cast<std::size_t>(n_blocks) * l.block_bytes);
    detail::parallel_chunks(n_blocks, threads, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t b = lo; b < hi; ++b) {
            quantize_block_into({t.data.data() + b * l.block_weights, static_cast<std::size_t>(l.block_weights)},
                                l, q.payload.data() + b * l.block_bytes);
        }
    });
    return q;
}

/// Encodes a tensor under a scheme, resolving the storage format from the
/// tensor's role and layer via the mix rule.
inline QuantizedTensor quantize_tensor(const TensorF32& t, Scheme scheme, const MixRule& mix, int n_layers,
                                       int threads = 1) {
    const TensorRole role = role_from_name(t.name);
    const int layer = layer_from_name(t.name);
    return quantize_tensor_as(t, resolve_format(scheme, role, layer, n_layers, mix), threads);
}

inline QuantizedTensor quantize_tensor(const TensorF32& t, Scheme scheme, int threads = 1) {
    const MixRule mix = default_mix_rule(scheme);
    int n_layers = layer_from_name(t.name) + 1;
    return quantize_tensor(t, scheme, mix, n_layers, threads);
}

inline TensorF32 dequantize_tensor(const QuantizedTensor& q, int threads = 1) {
    const FormatLayout& l = layout_of(q.format);
    const std::int64_t elems = element_count(q.shape);
    const std::int64_t want = payload_size_bytes(q.shape, l);
    if (static_cast<std::int64_t>(q.payload.size()) != want) {
        throw std::invalid_argument("tensor '" + q.name + "': corrupted payload length " +
                                    std::to_string(q.payload.size()) + ", want " + std::to_string(want));
    }
    TensorF32 t;
    t.name = q.name;
    t.shape = q.shape;
    t.data.resize(static_cast<std::size_t>(elems));
    if (q.format == Format::F32) {
        std::memcpy(t.data.data(), q.payload.data(), q.payload.size());
        return t;
    }
    if (q.format == Format::F16) {
        for (std::int64_t i = 0; i < elems; ++i) {
            t.data[static_cast<std::size_t>(i)] = f32_from_f16(detail::load_u16(q.payload.data() + 2 * i));
        }
        return t;
    }
    const std::int64_t n_blocks = elems / l.block_weights;
    detail::parallel_chunks(n_blocks, threads, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t b = lo; b < hi; ++b) {
            dequantize_block_into(q.payload.data() + b * l.block_bytes, l, t.data.data() + b * l.block_weights);
        }
    });
    return t;
}

// ---------------------------------------------------------------------------
// Reconstruction-error statistics
// ---------------------------------------------------------------------------

struct ErrorStats {
    double rmse = 0.0;
    double max_abs_err = 0.0;
    double mean_err = 0.0;
    double empirical_var = 0.0;
    double predicted_var = 0.0; ///< high-resolution model: (mean sub-block step)^2 / 12
};

/// Empirical error moments plus the uniform-error model prediction. The model
/// step per sub-block is 2*max|v|/(2^b - 1) for symmetric layouts and
/// (max-min)/(2^b - 1) for affine ones, averaged over all sub-blocks.
inline ErrorStats error_stats(const TensorF32& original, const TensorF32& reconstructed, const FormatLayout& l) {
    if (original.shape != reconstructed.shape) {
        throw std::invalid_argument("error_stats: shape mismatch");
    }
    check_tensor(original);
    check_tensor(reconstructed);
    const std::int64_t n = element_count(original.shape);
    double sum_e = 0.0, sum_e2 = 0.0, max_abs = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double e = static_cast<double>(original.data[static_cast<std::size_t>(i)]) -
                         static_cast<double>(reconstructed.data[static_cast<std::size_t>(i)]);
        sum_e += e;
        sum_e2 += e * e;
        max_abs = std::max(max_abs, std::fabs(e));
    }
    ErrorStats st;
    st.mean_err = sum_e / static_cast<double>(n);
    st.rmse = std::sqrt(sum_e2 / static_cast<double>(n));
    st.empirical_var = sum_e2 / static_cast<double>(n) - st.mean_err * st.mean_err;
    st.max_abs_err = max_abs;
    if (l.code_bits > 0) {
        const int sub = l.block_weights / l.sub_blocks;
        const double levels = static_cast<double>((1 << l.code_bits) - 1);
        const std::int64_t n_sub = n / sub;
        double delta_sum = 0.0;
        for (std::int64_t b = 0; b < n_sub; ++b) {
            const std::span<const float> v{original.data.data() + b * sub, static_cast<std::size_t>(sub)};
            if (l.has_offset) {
                const auto mm = detail::min_max(v);
                delta_sum += (static_cast<double>(mm.mx) - static_cast<double>(mm.mn)) / levels;
            } else {
                float amax = 0.0f;
                for (const float x : v) amax = std::max(amax, std::fabs(x));
                delta_sum += 2.0 * static_cast<double>(amax) / levels;
            }
        }
        const double delta_bar = delta_sum / static_cast<double>(n_sub);
        st.predicted_var = delta_bar * delta_bar / 12.0;
    }
    return st;
}

} // namespace ggq
