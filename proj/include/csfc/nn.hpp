#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "csfc/tensor.hpp"

namespace csfc {

/// Learned lookup table: rows indexed by token or position id, one `dim`-wide
/// vector per row.
template <typename T>
struct EmbeddingTable {
    Tensor<T> table; // [entry, dim]

    std::size_t rows() const { return table.axes()[0].size; }
    std::size_t dim() const { return table.axes()[1].size; }
};

template <typename T>
EmbeddingTable<T> make_embedding(std::size_t rows, std::size_t dim, Rng& rng);

/// Looks up one table row per id; output axes are id_axes + [dim]. Ids out
/// of range throw rather than clamp.
template <typename T>
Tensor<T> embed(const EmbeddingTable<T>& table, const std::vector<int>& ids, Axes id_axes);

/// Position ids restarting at 0 inside every subroutine: n=2, m=3 gives
/// [0,1,2,0,1,2].
std::vector<int> per_subroutine_positions(std::size_t n, std::size_t m);
std::vector<int> flat_positions(std::size_t len);

/// Position embedding over an [fcn, token] grid with per-subroutine ids.
template <typename T>
Tensor<T> positional_embed_per_subroutine(const EmbeddingTable<T>& table,
                                          std::string_view fcn_axis, std::size_t n,
                                          std::string_view token_axis, std::size_t m);

/// Position embedding for a flat sequence 0..len.
template <typename T>
Tensor<T> positional_embed_flat(const EmbeddingTable<T>& table, std::string_view axis,
                                std::size_t len);

/// Attention admission mask over query rows and key columns; keep[q*k_len+k]
/// nonzero means query q may attend to key k.
struct AttnMask {
    std::size_t q_len = 0;
    std::size_t k_len = 0;
    std::vector<std::uint8_t> keep;
};

AttnMask causal_mask(std::size_t len);
/// Admits only keys whose token id differs from pad_id, for every query row.
AttnMask key_padding_mask(std::size_t q_len, const std::vector<int>& key_ids,
                          int pad_id = 0);
/// Elementwise AND of two masks over the same query/key extent.
AttnMask combine(const AttnMask& a, const AttnMask& b);

/// Per-head projections. Inputs and outputs carry `dim`; each head works in
/// a `hdim`-wide subspace with dim = heads * hdim.
template <typename T>
struct MhaParams {
    std::vector<Tensor<T>> wq; // [dim, hdim] each
    std::vector<Tensor<T>> wk;
    std::vector<Tensor<T>> wv;
    std::vector<Tensor<T>> wo; // [hdim, dim] each; summing realizes the
                               // concatenated-head output projection

    std::size_t heads() const { return wq.size(); }
};

template <typename T>
MhaParams<T> make_mha_params(std::size_t dim, std::size_t heads, Rng& rng);

/// Scaled dot-product attention over named axes. q is [q_seq, dim]; k and v
/// share their sequence axis and carry [k_seq, dim]. Masked-out positions are
/// excluded from the softmax; a query row with no admissible key yields the
/// zero vector.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const MhaParams<T>& params, const AttnMask* mask);

/// One attention + feed-forward block: post-norm residuals, ReLU inner layer
/// of width 4*dim.
template <typename T>
struct XFormBlockParams {
    MhaParams<T> attn;
    Tensor<T> ff_w1; // [dim, ff]
    Tensor<T> ff_b1; // [ff]
    Tensor<T> ff_w2; // [ff, dim]
    Tensor<T> ff_b2; // [dim]
    Tensor<T> ln1_g; // [dim]
    Tensor<T> ln1_b;
    Tensor<T> ln2_g;
    Tensor<T> ln2_b;
};

template <typename T>
XFormBlockParams<T> make_xform_params(std::size_t dim, std::size_t heads, Rng& rng);

/// norm(Q + drop(attention)) then norm(x + drop(feed_forward(x))). Output has
/// Q's sequence axis and dim. rng == nullptr runs in evaluation mode.
template <typename T>
Tensor<T> xform_block(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                      const XFormBlockParams<T>& params, const AttnMask* mask,
                      T dropout_rate, Rng* rng);

/// Stable enumeration of every tensor in the block, for checkpointing and
/// optimizer registration.
template <typename T, typename Fn>
void visit_params(MhaParams<T>& p, const std::string& prefix, Fn&& fn) {
    for (std::size_t i = 0; i < p.wq.size(); ++i) {
        const std::string head = prefix + ".h" + std::to_string(i);
        fn(head + ".wq", p.wq[i]);
        fn(head + ".wk", p.wk[i]);
        fn(head + ".wv", p.wv[i]);
        fn(head + ".wo", p.wo[i]);
    }
}

template <typename T, typename Fn>
void visit_params(XFormBlockParams<T>& p, const std::string& prefix, Fn&& fn) {
    visit_params(p.attn, prefix + ".attn", fn);
    fn(prefix + ".ff_w1", p.ff_w1);
    fn(prefix + ".ff_b1", p.ff_b1);
    fn(prefix + ".ff_w2", p.ff_w2);
    fn(prefix + ".ff_b2", p.ff_b2);
    fn(prefix + ".ln1_g", p.ln1_g);
    fn(prefix + ".ln1_b", p.ln1_b);
    fn(prefix + ".ln2_g", p.ln2_g);
    fn(prefix + ".ln2_b", p.ln2_b);
}

} // namespace csfc
