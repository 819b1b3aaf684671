// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>

namespace ggq {

/// IEEE 754 binary16 stored as raw bits. Scales and offsets in block
/// payloads are kept in this form; conversion to/from binary32 uses
/// round-to-nearest-even.
using half_t = std::uint16_t;

inline float f32_from_f16(half_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    const std::uint32_t em = h & 0x7fffu;
    if (em >= 0x7c00u) { // inf / nan
        return std::bit_cast<float>(sign | 0x7f800000u | (static_cast<std::uint32_t>(em & 0x3ffu) << 13));
    }
    if (em < 0x400u) { // zero / subnormal: value = em * 2^-24, exact in f32
        const float v = static_cast<float>(em) * 0x1p-24f;
        return (h & 0x8000u) ? -v : v;
    }
    return std::bit_cast<float>(sign | ((static_cast<std::uint32_t>(em >> 10) + 112u) << 23) |
                                (static_cast<std::uint32_t>(em & 0x3ffu) << 13));
}

inline half_t f16_from_f32(float value) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
    const std::uint32_t sign = (bits >> 16) & 0x8000u;
    bits &= 0x7fffffffu;
    if (bits > 0x7f800000u) return static_cast<half_t>(sign | 0x7e00u); // nan
    if (bits >= 0x47800000u) return static_cast<half_t>(sign | 0x7c00u); // overflow -> inf
    if (bits < 0x38800000u) { // subnormal half (or zero)
        if (bits < 0x33000000u) return static_cast<half_t>(sign); // underflow -> signed zero
        const std::uint32_t shift = 126u - (bits >> 23);
        const std::uint32_t mant = (bits & 0x7fffffu) | 0x800000u;
        std::uint32_t q = mant >> shift;
        const std::uint32_t rem = mant & ((1u << shift) - 1u);
        const std::uint32_t half_ulp = 1u << (shift - 1u);
        if (rem > half_ulp || (rem == half_ulp && (q & 1u))) ++q;
        return static_cast<half_t>(sign | q);
    }
    std::uint32_t q = ((bits >> 13) & 0x3ffu) | ((((bits >> 23) - 112u) & 0x1fu) << 10);
    const std::uint32_t rem = bits & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (q & 1u))) ++q; // carry may bump the exponent, which is correct
    return static_cast<half_t>(sign | q);
}

/// Conversion for quantizer scales: out-of-range magnitudes saturate to
/// +-65504 instead of rounding to infinity, so dequantization stays finite.
inline half_t f16_from_f32_saturate(float value) {
    const half_t h = f16_from_f32(value);
    if ((h & 0x7fffu) == 0x7c00u && value == value) { // inf from a finite input
        return static_cast<half_t>((h & 0x8000u) | 0x7bffu);
    }
    return h;
}

} // namespace ggq
