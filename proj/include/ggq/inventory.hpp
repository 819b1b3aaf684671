// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ggq/schemes.hpp"
#include "ggq/tensor.hpp"

namespace ggq {

inline constexpr double kMiB = 1024.0 * 1024.0;

/// Shape-only description of one model tensor (row-major dims, last contiguous).
struct TensorSpec {
    std::string name;
    std::vector<std::int64_t> shape;
};

/// Shape inventory of a model, loadable from the shipped data file.
struct Inventory {
    std::string model;
    int version = 0;
    int n_layers = 0;
    std::vector<TensorSpec> tensors;

    std::int64_t total_elements() const {
        std::int64_t n = 0;
        for (const auto& t : tensors) n += element_count(t.shape);
        return n;
    }
};

/// Parses the inventory text format:
///   # comments
///   model = <name>
///   version = <int>
///   layers = <int>
///   tensor <name> <dim0> [dim1 ...]
inline Inventory parse_inventory(std::istream& in) {
    Inventory inv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos || line[start] == '#') continue;
        std::istringstream ls(line);
        std::string head;
        ls >> head;
        if (head == "tensor") {
            TensorSpec t;
            ls >> t.name;
            std::int64_t d;
            while (ls >> d) t.shape.push_back(d);
            if (t.name.empty() || t.shape.empty()) {
                throw std::invalid_argument("inventory line " + std::to_string(lineno) + ": malformed tensor entry");
            }
            inv.tensors.push_back(std::move(t));
        } else {
            std::string eq, value;
            ls >> eq >> value;
            if (eq != "=") throw std::invalid_argument("inventory line " + std::to_string(lineno) + ": expected key = value");
            if (head == "model") inv.model = value;
            else if (head == "version") inv.version = std::stoi(value);
            else if (head == "layers") inv.n_layers = std::stoi(value);
            else throw std::invalid_argument("inventory line " + std::to_string(lineno) + ": unknown key '" + head + "'");
        }
    }
    if (inv.n_layers == 0) {
        for (const auto& t : inv.tensors) inv.n_layers = std::max(inv.n_layers, layer_from_name(t.name) + 1);
    }
    return inv;
}

inline Inventory load_inventory(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open inventory file: " + path);
    return parse_inventory(f);
}

struct SizePrediction {
    std::int64_t payload_bytes = 0;
    double size_mib = 0.0;
    double bits_per_weight = 0.0;
};

/// Sums block-count x block-bytes over the inventory under the scheme's mix
/// rule. Sizes follow the quantizer's accounting convention (tensor payload
/// bytes; directory/metadata excluded).
inline SizePrediction predict_model_size(const Inventory& inv, Scheme scheme, const MixRule& mix) {
    if (inv.tensors.empty()) throw std::invalid_argument("predict_model_size: empty tensor inventory");
    std::int64_t bytes = 0;
    for (const auto& t : inv.tensors) {
        const TensorRole role = role_from_name(t.name);
        const int layer = layer_from_name(t.name);
        const Format fmt = resolve_format(scheme, role, layer, inv.n_layers, mix);
        const FormatLayout& l = layout_of(fmt);
        const std::int64_t cols = contiguous_dim(t.shape);
        if (l.block_weights > 1 && cols % l.block_weights != 0) {
            throw std::invalid_argument("tensor '" + t.name + "': contiguous dimension " + std::to_string(cols) +
                                        " not divisible by block size " + std::to_string(l.block_weights) + " of " +
                                        l.name);
        }
        bytes += payload_size_bytes(t.shape, l);
    }
    SizePrediction p;
    p.payload_bytes = bytes;
    p.size_mib = static_cast<double>(bytes) / kMiB;
    p.bits_per_weight = 8.0 * static_cast<double>(bytes) / static_cast<double>(inv.total_elements());
    return p;
}

inline SizePrediction predict_model_size(const Inventory& inv, Scheme scheme) {
    return predict_model_size(inv, scheme, default_mix_rule(scheme));
}

/// Element-weighted average storage bits per weight over the inventory.
inline double bits_per_weight(const Inventory& inv, Scheme scheme, const MixRule& mix) {
    return predict_model_size(inv, scheme, mix).bits_per_weight;
}

inline double bits_per_weight(const Inventory& inv, Scheme scheme) {
    return bits_per_weight(inv, scheme, default_mix_rule(scheme));
}

/// 100 * (1 - S_q / S_f16).
inline double size_reduction(double quantized_mib, double f16_mib) {
    if (!(f16_mib > 0.0)) throw std::invalid_argument("size_reduction: baseline size must be positive");
    if (!(quantized_mib > 0.0)) throw std::invalid_argument("size_reduction: quantized size must be positive");
    return 100.0 * (1.0 - quantized_mib / f16_mib);
}

} // namespace ggq
