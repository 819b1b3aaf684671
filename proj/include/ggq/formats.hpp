// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ggq {

/// Per-tensor storage formats. These are the on-disk tensor types; a model
/// level scheme (see schemes.hpp) mixes several of them across tensor roles.
enum class Format : std::uint8_t {
    F32,
    F16,
    Q4_0,
    Q4_1,
    Q5_0,
    Q5_1,
    Q8_0,
    Q3_K,
    Q4_K,
    Q5_K,
    Q6_K,
};

inline constexpr int kFormatCount = 11;

/// Exact block layout of one storage format.
///
/// Packing conventions shared by every format (emitted by `layout-doc`):
///   * byte order: little-endian; scales/offsets are binary16
///   * nibble order: low nibble = even element index (byte k holds
///     elements 2k and 2k+1)
///   * high bits (Q5 qh, Q3_K hmask): bit j of byte k belongs to element 8k+j
///   * Q6_K high 2-bit pairs: bits [2j,2j+2) of byte k belong to element 4k+j
///   * 6-bit sub-block metadata is an LSB-first bit stream
struct FormatLayout {
    Format id;
    const char* name;
    int block_weights; ///< weights per block (1 for unquantized storage)
    int block_bytes;   ///< packed bytes per block
    int code_bits;     ///< bits per packed integer code (0 = unquantized)
    bool has_offset;   ///< affine formats store an offset/minimum
    int sub_blocks;    ///< sub-blocks per block (1 for legacy formats)
    int scale_bits;    ///< bits per quantized sub-block scale (superblocks only)
    int min_bits;      ///< bits per quantized sub-block minimum (superblocks only)
    std::uint32_t ggml_type; ///< on-disk tensor type id (GGUF interop)
};

inline constexpr FormatLayout kFormatTable[kFormatCount] = {
    // id           name    K    bytes bits offs subs scl min ggml
    {Format::F32,  "F32",     1,   4,  0, false,  1, 0, 0,  0},
    {Format::F16,  "F16",     1,   2,  0, false,  1, 0, 0,  1},
    {Format::Q4_0, "Q4_0",   32,  18,  4, false,  1, 0, 0,  2},
    {Format::Q4_1, "Q4_1",   32,  20,  4, true,   1, 0, 0,  3},
    {Format::Q5_0, "Q5_0",   32,  22,  5, false,  1, 0, 0,  6},
    {Format::Q5_1, "Q5_1",   32,  24,  5, true,   1, 0, 0,  7},
    {Format::Q8_0, "Q8_0",   32,  34,  8, false,  1, 0, 0,  8},
    {Format::Q3_K, "Q3_K",  256, 110,  3, false, 16, 6, 0, 11},
    {Format::Q4_K, "Q4_K",  256, 144,  4, true,   8, 6, 6, 12},
    {Format::Q5_K, "Q5_K",  256, 176,  5, true,   8, 6, 6, 13},
    {Format::Q6_K, "Q6_K",  256, 210,  6, false, 16, 8, 0, 14},
};

inline const FormatLayout& layout_of(Format f) {
    return kFormatTable[static_cast<std::size_t>(f)];
}

inline const char* format_name(Format f) { return layout_of(f).name; }

/// Average storage bits per weight of one format, metadata included.
inline double format_bits_per_weight(const FormatLayout& l) {
    return 8.0 * l.block_bytes / l.block_weights;
}

inline bool is_quantized(Format f) { return layout_of(f).code_bits != 0; }

inline std::optional<Format> format_from_name(std::string_view name) {
    for (const auto& l : kFormatTable) {
        if (name == l.name) return l.id;
    }
    return std::nullopt;
}

inline std::optional<Format> format_from_ggml_type(std::uint32_t t) {
    for (const auto& l : kFormatTable) {
        if (l.ggml_type == t) return l.id;
    }
    return std::nullopt;
}

inline Format require_format(std::string_view name) {
    if (auto f = format_from_name(name)) return *f;
    throw std::invalid_argument("unknown storage format: " + std::string(name));
}

} // namespace ggq
