// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ggq/formats.hpp"

namespace ggq {

/// Dense row-major f32 tensor; the last dimension is contiguous and is the
/// one block quantization runs along.
struct TensorF32 {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<float> data;
};

inline std::int64_t element_count(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape dimension must be positive");
        n *= d;
    }
    return n;
}

inline std::int64_t contiguous_dim(const std::vector<std::int64_t>& shape) {
    return shape.empty() ? 1 : shape.back();
}

inline void check_tensor(const TensorF32& t) {
    if (static_cast<std::int64_t>(t.data.size()) != element_count(t.shape)) {
        throw std::invalid_argument("tensor '" + t.name + "': data length does not match shape");
    }
}

/// Packed block payload plus the storage format it was encoded with.
struct QuantizedTensor {
    std::string name;
    Format format = Format::F32;
    std::vector<std::int64_t> shape;
    std::vector<std::uint8_t> payload;
};

/// Payload bytes a tensor of this shape occupies under `layout`.
inline std::int64_t payload_size_bytes(const std::vector<std::int64_t>& shape, const FormatLayout& layout) {
    const std::int64_t elems = element_count(shape);
    if (layout.block_weights == 1) return elems * layout.block_bytes;
    const std::int64_t cols = contiguous_dim(shape);
    if (cols % layout.block_weights != 0) {
        throw std::invalid_argument(std::string("contiguous dimension not divisible by block size of ") + layout.name);
    }
    return elems / layout.block_weights * layout.block_bytes;
}

} // namespace ggq
