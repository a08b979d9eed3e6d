#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "csfc/errors.hpp"

namespace csfc {

/// Special token ids shared by every vocabulary.
inline constexpr int pad_id = 0;
inline constexpr int sos_id = 1;
inline constexpr int eos_id = 2;
inline constexpr int unk_id = 3;

enum class Variant { fc, vanilla, alt, comb };

Variant parse_variant(std::string_view name);
const char* variant_name(Variant v);

struct ModelConfig {
    std::size_t n = 2;  // file-context subroutines
    std::size_t m = 3;  // tokens per file-context subroutine
    std::size_t t = 4;  // tokens in the target subroutine
    std::size_t w = 3;  // summary length
    std::size_t v = 20; // source vocabulary size
    std::size_t z = 20; // summary vocabulary size
    std::size_t e = 8;  // embedding dim
    std::size_t L = 1;  // stacked block layers
    std::size_t h = 2;  // attention heads
    std::size_t b = 2;  // batch size
    double r = 3e-4;    // learning rate
    Variant variant = Variant::fc;
    std::uint64_t seed = 0;
    double dropout = 0.1;
    bool swap_cross = false; // ablation: attend target code before file context

    /// Length of the encoder input sequence: t, except comb folds the file
    /// context into one window of t + n*m.
    std::size_t target_len() const {
        return variant == Variant::comb ? t + n * m : t;
    }
    bool has_file_context_encoder() const {
        return variant == Variant::fc || variant == Variant::alt;
    }

    void validate() const;
};

/// Parses line-oriented `key = value` text. Every ModelConfig key must appear
/// exactly once; unknown keys are rejected. `#` starts a comment; blank lines
/// are skipped. `swap_cross` is the one optional key.
ModelConfig parse_model_config(const std::string& text);
ModelConfig load_model_config(const std::string& path);
std::string serialize_model_config(const ModelConfig& cfg);

} // namespace csfc
