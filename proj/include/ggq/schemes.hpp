// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ggq/formats.hpp"

namespace ggq {

/// Model-level quantization schemes. A scheme picks a base storage format
/// and a mix rule that upgrades selected tensor roles.
enum class Scheme : std::uint8_t {
    F16,
    Q3_K_S,
    Q3_K_M,
    Q3_K_L,
    Q4_0,
    Q4_1,
    Q4_K_S,
    Q4_K_M,
    Q5_0,
    Q5_1,
    Q5_K_S,
    Q5_K_M,
    Q6_K,
    Q8_0,
};

inline constexpr int kSchemeCount = 14;

enum class Family : std::uint8_t { none, legacy, kquant };
enum class QuantKind : std::uint8_t { passthrough, symmetric, affine, superblock };

struct QuantScheme {
    Scheme id;
    const char* name;
    Family family;
    int nominal_bits;
    QuantKind kind;
    Format base_format;       ///< default storage format for quantizable tensors
    std::uint32_t gguf_file_type; ///< general.file_type value (GGUF interop)
};

inline constexpr QuantScheme kSchemeTable[kSchemeCount] = {
    {Scheme::F16,    "F16",    Family::none,   16, QuantKind::passthrough, Format::F16,  1},
    {Scheme::Q3_K_S, "Q3_K_S", Family::kquant,  3, QuantKind::superblock,  Format::Q3_K, 11},
    {Scheme::Q3_K_M, "Q3_K_M", Family::kquant,  3, QuantKind::superblock,  Format::Q3_K, 12},
    {Scheme::Q3_K_L, "Q3_K_L", Family::kquant,  3, QuantKind::superblock,  Format::Q3_K, 13},
    {Scheme::Q4_0,   "Q4_0",   Family::legacy,  4, QuantKind::symmetric,   Format::Q4_0, 2},
    {Scheme::Q4_1,   "Q4_1",   Family::legacy,  4, QuantKind::affine,      Format::Q4_1, 3},
    {Scheme::Q4_K_S, "Q4_K_S", Family::kquant,  4, QuantKind::superblock,  Format::Q4_K, 14},
    {Scheme::Q4_K_M, "Q4_K_M", Family::kquant,  4, QuantKind::superblock,  Format::Q4_K, 15},
    {Scheme::Q5_0,   "Q5_0",   Family::legacy,  5, QuantKind::symmetric,   Format::Q5_0, 8},
    {Scheme::Q5_1,   "Q5_1",   Family::legacy,  5, QuantKind::affine,      Format::Q5_1, 9},
    {Scheme::Q5_K_S, "Q5_K_S", Family::kquant,  5, QuantKind::superblock,  Format::Q5_K, 16},
    {Scheme::Q5_K_M, "Q5_K_M", Family::kquant,  5, QuantKind::superblock,  Format::Q5_K, 17},
    {Scheme::Q6_K,   "Q6_K",   Family::kquant,  6, QuantKind::superblock,  Format::Q6_K, 18},
    {Scheme::Q8_0,   "Q8_0",   Family::legacy,  8, QuantKind::symmetric,   Format::Q8_0, 7},
};

inline const QuantScheme& scheme_info(Scheme s) {
    return kSchemeTable[static_cast<std::size_t>(s)];
}

inline const char* scheme_name(Scheme s) { return scheme_info(s).name; }

inline std::optional<Scheme> scheme_from_name(std::string_view name) {
    for (const auto& s : kSchemeTable) {
        if (name == s.name) return s.id;
    }
    return std::nullopt;
}

inline std::string valid_scheme_names() {
    std::string out;
    for (const auto& s : kSchemeTable) {
        if (!out.empty()) out += ", ";
        out += s.name;
    }
    return out;
}

inline Scheme require_scheme(std::string_view name) {
    if (auto s = scheme_from_name(name)) return *s;
    throw std::invalid_argument("unknown scheme '" + std::string(name) + "' (valid: " + valid_scheme_names() + ")");
}

// ---------------------------------------------------------------------------
// Tensor roles and mix rules
// ---------------------------------------------------------------------------

/// Roles derived from canonical Llama-style tensor names; per-tensor format
/// selection inside a scheme is keyed on these.
enum class TensorRole : std::uint8_t {
    token_embedding,
    output_head,
    attn_q,
    attn_k,
    attn_v,
    attn_output,
    ffn_gate,
    ffn_up,
    ffn_down,
    norm,
    other, ///< small auxiliary tensors (e.g. rope frequencies); never quantized
};

inline const char* role_name(TensorRole r) {
    switch (r) {
        case TensorRole::token_embedding: return "token_embedding";
        case TensorRole::output_head:     return "output_head";
        case TensorRole::attn_q:          return "attn_q";
        case TensorRole::attn_k:          return "attn_k";
        case TensorRole::attn_v:          return "attn_v";
        case TensorRole::attn_output:     return "attn_output";
        case TensorRole::ffn_gate:        return "ffn_gate";
        case TensorRole::ffn_up:          return "ffn_up";
        case TensorRole::ffn_down:        return "ffn_down";
        case TensorRole::norm:            return "norm";
        case TensorRole::other:           return "other";
    }
    return "other";
}

inline std::optional<TensorRole> role_from_text(std::string_view text) {
    for (int i = 0; i <= static_cast<int>(TensorRole::other); ++i) {
        const auto r = static_cast<TensorRole>(i);
        if (text == role_name(r)) return r;
    }
    return std::nullopt;
}

inline TensorRole role_from_name(std::string_view name) {
    const auto has = [&](std::string_view pat) { return name.find(pat) != std::string_view::npos; };
    if (has("norm")) return TensorRole::norm; // attn_norm / ffn_norm / output_norm
    if (has("token_embd")) return TensorRole::token_embedding;
    if (has("attn_output")) return TensorRole::attn_output;
    if (has("attn_q")) return TensorRole::attn_q;
    if (has("attn_k")) return TensorRole::attn_k;
    if (has("attn_v")) return TensorRole::attn_v;
    if (has("ffn_gate")) return TensorRole::ffn_gate;
    if (has("ffn_up")) return TensorRole::ffn_up;
    if (has("ffn_down")) return TensorRole::ffn_down;
    if (name == "output.weight" || name == "output.bias") return TensorRole::output_head;
    return TensorRole::other;
}

/// Layer index from "blk.N." names, or -1 for layer-less tensors.
inline int layer_from_name(std::string_view name) {
    constexpr std::string_view prefix = "blk.";
    if (name.substr(0, prefix.size()) != prefix) return -1;
    int v = 0;
    std::size_t i = prefix.size();
    if (i >= name.size() || name[i] < '0' || name[i] > '9') return -1;
    for (; i < name.size() && name[i] >= '0' && name[i] <= '9'; ++i) v = v * 10 + (name[i] - '0');
    return (i < name.size() && name[i] == '.') ? v : -1;
}

/// Which layers of a role an upgrade entry applies to.
///   all      — every layer (and layer-less tensors of that role)
///   first_n  — layers [0, n)
///   spread   — first eighth, last eighth, and every third layer between
enum class LayerSelect : std::uint8_t { all, first_n, spread };

inline bool spread_selects(int layer, int n_layers) {
    if (n_layers <= 0) return false;
    const int lo = n_layers / 8;
    return layer < lo || layer >= 7 * n_layers / 8 || (layer - lo) % 3 == 2;
}

struct MixEntry {
    TensorRole role;
    LayerSelect select = LayerSelect::all;
    int first_n = 0; ///< used when select == first_n
    Format format;
};

/// Per-scheme assignment of storage formats to tensor roles. Entries are
/// checked in order and the first match wins; `base` covers the rest.
/// Norm and `other` tensors always resolve to F32 storage.
struct MixRule {
    Format base = Format::F16;
    std::vector<MixEntry> entries;
};

inline bool mix_entry_matches(const MixEntry& e, TensorRole role, int layer, int n_layers) {
    if (e.role != role) return false;
    switch (e.select) {
        case LayerSelect::all: return true;
        case LayerSelect::first_n: return layer >= 0 && layer < e.first_n;
        case LayerSelect::spread: return layer >= 0 && spread_selects(layer, n_layers);
    }
    return false;
}

/// Built-in mix table. Tuned so whole-model predicted sizes for the shipped
/// Llama-3.1-8B inventory land on the reference converter's outputs; the
/// first_n counts are literal for 32-layer models and user-overridable.
inline MixRule default_mix_rule(Scheme scheme) {
    using R = TensorRole;
    using S = LayerSelect;
    const Format base = scheme_info(scheme).base_format;
    MixRule mix{base, {}};
    const auto up = [&](R role, S sel, int n, Format f) { mix.entries.push_back({role, sel, n, f}); };
    switch (scheme) {
        case Scheme::F16:
        case Scheme::Q8_0:
        case Scheme::Q6_K:
            break; // uniform, output head included
        case Scheme::Q4_0:
        case Scheme::Q4_1:
        case Scheme::Q5_0:
        case Scheme::Q5_1:
        case Scheme::Q3_K_S:
        case Scheme::Q5_K_S:
            up(R::output_head, S::all, 0, Format::Q6_K);
            break;
        case Scheme::Q3_K_M:
            up(R::attn_v, S::first_n, 2, Format::Q5_K);
            up(R::attn_v, S::all, 0, Format::Q4_K);
            up(R::attn_output, S::all, 0, Format::Q4_K);
            up(R::ffn_down, S::first_n, 2, Format::Q5_K);
            up(R::ffn_down, S::all, 0, Format::Q4_K);
            up(R::output_head, S::all, 0, Format::Q6_K);
            break;
        case Scheme::Q3_K_L:
            up(R::attn_v, S::all, 0, Format::Q5_K);
            up(R::attn_output, S::all, 0, Format::Q5_K);
            up(R::ffn_down, S::all, 0, Format::Q5_K);
            up(R::output_head, S::all, 0, Format::Q6_K);
            break;
        case Scheme::Q4_K_S:
            up(R::attn_v, S::first_n, 4, Format::Q5_K);
            up(R::ffn_down, S::first_n, 4, Format::Q5_K);
            up(R::output_head, S::all, 0, Format::Q6_K);
            break;
        case Scheme::Q4_K_M:
        case Scheme::Q5_K_M:
            up(R::attn_v, S::spread, 0, Format::Q6_K);
            up(R::ffn_down, S::spread, 0, Format::Q6_K);
            up(R::output_head, S::all, 0, Format::Q6_K);
            break;
    }
    return mix;
}

/// Storage format for one tensor under a scheme's mix rule.
/// Norm tensors and auxiliary tensors are never quantized.
inline Format resolve_format(Scheme scheme, TensorRole role, int layer, int n_layers, const MixRule& mix) {
    if (role == TensorRole::norm || role == TensorRole::other) return Format::F32;
    if (scheme == Scheme::F16) return Format::F16;
    for (const auto& e : mix.entries) {
        if (mix_entry_matches(e, role, layer, n_layers)) return e.format;
    }
    return mix.base;
}

inline Format resolve_format(Scheme scheme, TensorRole role, int layer = -1, int n_layers = 0) {
    const MixRule mix = default_mix_rule(scheme);
    return resolve_format(scheme, role, layer, n_layers, mix);
}

inline const FormatLayout& resolve_layout(Scheme scheme, TensorRole role, int layer = -1, int n_layers = 0) {
    return layout_of(resolve_format(scheme, role, layer, n_layers));
}

/// Text-keyed variant used by config paths; unknown role names are rejected.
inline const FormatLayout& resolve_layout(Scheme scheme, std::string_view role_text, int layer = -1,
                                          int n_layers = 0) {
    const auto role = role_from_text(role_text);
    if (!role) throw std::invalid_argument("unknown tensor role: " + std::string(role_text));
    return resolve_layout(scheme, *role, layer, n_layers);
}

} // namespace ggq
