#include "csfc/nn.hpp"

#include <cmath>

namespace csfc {

namespace {

template <typename T>
Tensor<T> xavier(Axes axes, Rng& rng) {
    const double fan_in = static_cast<double>(axes[0].size);
    const double fan_out = static_cast<double>(axes[1].size);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    return Tensor<T>::uniform(std::move(axes), static_cast<T>(-bound),
                              static_cast<T>(bound), rng);
}

} // namespace

template <typename T>
EmbeddingTable<T> make_embedding(std::size_t rows, std::size_t dim, Rng& rng) {
    return {xavier<T>({{"entry", rows}, {"dim", dim}}, rng)};
}

template <typename T>
Tensor<T> embed(const EmbeddingTable<T>& table, const std::vector<int>& ids, Axes id_axes) {
    return gather_rows(table.table, ids, std::move(id_axes));
}

std::vector<int> per_subroutine_positions(std::size_t n, std::size_t m) {
    std::vector<int> ids;
    ids.reserve(n * m);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t p = 0; p < m; ++p) {
            ids.push_back(static_cast<int>(p));
        }
    }
    return ids;
}

std::vector<int> flat_positions(std::size_t len) {
    std::vector<int> ids(len);
    for (std::size_t p = 0; p < len; ++p) ids[p] = static_cast<int>(p);
    return ids;
}

template <typename T>
Tensor<T> positional_embed_per_subroutine(const EmbeddingTable<T>& table,
                                          std::string_view fcn_axis, std::size_t n,
                                          std::string_view token_axis, std::size_t m) {
    if (table.rows() < m) {
        throw ConfigError("positional embedding holds " + std::to_string(table.rows()) +
                          " positions but subroutines are " + std::to_string(m) +
                          " tokens long");
    }
    return embed(table, per_subroutine_positions(n, m),
                 {{std::string(fcn_axis), n}, {std::string(token_axis), m}});
}

template <typename T>
Tensor<T> positional_embed_flat(const EmbeddingTable<T>& table, std::string_view axis,
                                std::size_t len) {
    if (table.rows() < len) {
        throw ConfigError("positional embedding holds " + std::to_string(table.rows()) +
                          " positions but the sequence is " + std::to_string(len) +
                          " tokens long");
    }
    return embed(table, flat_positions(len), {{std::string(axis), len}});
}

AttnMask causal_mask(std::size_t len) {
    AttnMask m{len, len, std::vector<std::uint8_t>(len * len, 0)};
    for (std::size_t q = 0; q < len; ++q) {
        for (std::size_t k = 0; k <= q; ++k) {
            m.keep[q * len + k] = 1;
        }
    }
    return m;
}

AttnMask key_padding_mask(std::size_t q_len, const std::vector<int>& key_ids, int pad_id) {
    AttnMask m{q_len, key_ids.size(), std::vector<std::uint8_t>(q_len * key_ids.size(), 0)};
    for (std::size_t q = 0; q < q_len; ++q) {
        for (std::size_t k = 0; k < key_ids.size(); ++k) {
            m.keep[q * key_ids.size() + k] = key_ids[k] != pad_id ? 1 : 0;
        }
    }
    return m;
}

AttnMask combine(const AttnMask& a, const AttnMask& b) {
    if (a.q_len != b.q_len || a.k_len != b.k_len) {
        throw ShapeError("combine: masks cover " + std::to_string(a.q_len) + "x" +
                         std::to_string(a.k_len) + " vs " + std::to_string(b.q_len) + "x" +
                         std::to_string(b.k_len));
    }
    AttnMask out = a;
    for (std::size_t i = 0; i < out.keep.size(); ++i) {
        out.keep[i] = out.keep[i] && b.keep[i] ? 1 : 0;
    }
    return out;
}

template <typename T>
MhaParams<T> make_mha_params(std::size_t dim, std::size_t heads, Rng& rng) {
    if (heads == 0 || dim % heads != 0) {
        throw ConfigError("attention dim " + std::to_string(dim) +
                          " is not divisible into " + std::to_string(heads) + " heads");
    }
    const std::size_t hdim = dim / heads;
    MhaParams<T> p;
    for (std::size_t i = 0; i < heads; ++i) {
        p.wq.push_back(xavier<T>({{"dim", dim}, {"hdim", hdim}}, rng));
        p.wk.push_back(xavier<T>({{"dim", dim}, {"hdim", hdim}}, rng));
        p.wv.push_back(xavier<T>({{"dim", dim}, {"hdim", hdim}}, rng));
        p.wo.push_back(xavier<T>({{"hdim", hdim}, {"dim", dim}}, rng));
    }
    return p;
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const MhaParams<T>& params, const AttnMask* mask) {
    if (params.wq.empty()) {
        throw ConfigError("attention requires at least one head");
    }
    if (q.rank() != 2 || q.axes()[1].name != "dim" || k.rank() != 2 ||
        k.axes()[1].name != "dim" || v.rank() != 2 || v.axes()[1].name != "dim") {
        throw ShapeError("attention operands must be [sequence, dim]");
    }
    if (k.axes()[0].name != v.axes()[0].name || k.axes()[0].size != v.axes()[0].size) {
        throw ShapeError("key and value must share a sequence axis, got " +
                         axes_to_string(k.axes()) + " vs " + axes_to_string(v.axes()));
    }
    const std::string q_axis = q.axes()[0].name;
    const std::size_t q_len = q.axes()[0].size;
    const std::size_t k_len = k.axes()[0].size;
    if (mask != nullptr && (mask->q_len != q_len || mask->k_len != k_len)) {
        throw ShapeError("mask covers " + std::to_string(mask->q_len) + "x" +
                         std::to_string(mask->k_len) + " but attention is " +
                         std::to_string(q_len) + "x" + std::to_string(k_len));
    }

    // Keys and values get a private sequence name so self-attention does not
    // collide with the query axis.
    const std::string key_axis = q_axis + "_k";
    const Tensor<T> kk = k.axes()[0].name == key_axis ? k : rename_axis(k, k.axes()[0].name, key_axis);
    const Tensor<T> vv = v.axes()[0].name == key_axis ? v : rename_axis(v, v.axes()[0].name, key_axis);

    const std::size_t hdim = params.wq[0].axes()[1].size;
    const T scale_factor = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hdim)));

    Tensor<T> out;
    for (std::size_t i = 0; i < params.heads(); ++i) {
        auto qh = contract(q, params.wq[i], "dim");
        auto kh = contract(kk, params.wk[i], "dim");
        auto vh = contract(vv, params.wv[i], "dim");
        auto scores = scale(contract(qh, kh, "hdim"), scale_factor);
        auto weights = mask != nullptr ? masked_softmax(scores, mask->keep, key_axis)
                                       : softmax(scores, key_axis);
        auto head = contract(contract(weights, vh, key_axis), params.wo[i], "hdim");
        out = out.valid() ? add(out, head) : head;
    }
    return out;
}

template <typename T>
XFormBlockParams<T> make_xform_params(std::size_t dim, std::size_t heads, Rng& rng) {
    XFormBlockParams<T> p;
    p.attn = make_mha_params<T>(dim, heads, rng);
    const std::size_t ff = 4 * dim;
    p.ff_w1 = xavier<T>({{"dim", dim}, {"ff", ff}}, rng);
    p.ff_b1 = Tensor<T>::zeros({{"ff", ff}});
    p.ff_w2 = xavier<T>({{"ff", ff}, {"dim", dim}}, rng);
    p.ff_b2 = Tensor<T>::zeros({{"dim", dim}});
    p.ln1_g = Tensor<T>::full({{"dim", dim}}, T(1));
    p.ln1_b = Tensor<T>::zeros({{"dim", dim}});
    p.ln2_g = Tensor<T>::full({{"dim", dim}}, T(1));
    p.ln2_b = Tensor<T>::zeros({{"dim", dim}});
    return p;
}

template <typename T>
Tensor<T> xform_block(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                      const XFormBlockParams<T>& params, const AttnMask* mask,
                      T dropout_rate, Rng* rng) {
    const T eps = static_cast<T>(1e-5);
    auto attended = multi_head_attention(q, k, v, params.attn, mask);
    auto x = layer_norm(add(q, dropout(attended, dropout_rate, rng)), "dim",
                        params.ln1_g, params.ln1_b, eps);

    const Axis seq = x.axes()[0];
    auto inner = relu(add(contract(x, params.ff_w1, "dim"),
                          expand_front(params.ff_b1, seq)));
    auto ff = add(contract(inner, params.ff_w2, "ff"),
                  expand_front(params.ff_b2, seq));
    return layer_norm(add(x, dropout(ff, dropout_rate, rng)), "dim", params.ln2_g,
                      params.ln2_b, eps);
}

#define CSFC_INSTANTIATE_NN(T)                                                            \
    template struct EmbeddingTable<T>;                                                    \
    template EmbeddingTable<T> make_embedding<T>(std::size_t, std::size_t, Rng&);         \
    template Tensor<T> embed<T>(const EmbeddingTable<T>&, const std::vector<int>&, Axes); \
    template Tensor<T> positional_embed_per_subroutine<T>(const EmbeddingTable<T>&,       \
                                                          std::string_view, std::size_t, \
                                                          std::string_view, std::size_t); \
    template Tensor<T> positional_embed_flat<T>(const EmbeddingTable<T>&,                 \
                                                std::string_view, std::size_t);           \
    template MhaParams<T> make_mha_params<T>(std::size_t, std::size_t, Rng&);             \
    template Tensor<T> multi_head_attention<T>(const Tensor<T>&, const Tensor<T>&,        \
                                               const Tensor<T>&, const MhaParams<T>&,    \
                                               const AttnMask*);                          \
    template XFormBlockParams<T> make_xform_params<T>(std::size_t, std::size_t, Rng&);    \
    template Tensor<T> xform_block<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                      const Tensor<T>&, const XFormBlockParams<T>&,      \
                                      const AttnMask*, T, Rng*);

CSFC_INSTANTIATE_NN(float)
CSFC_INSTANTIATE_NN(double)

#undef CSFC_INSTANTIATE_NN

} // namespace csfc
