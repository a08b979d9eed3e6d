#pragma once

#include <span>
#include <string>
#include <vector>

#include "csfc/config.hpp"
#include "csfc/nn.hpp"

namespace csfc {

/// One id-encoded example, padded/truncated to the model's fixed widths.
struct EncodedSample {
    std::string id;
    std::vector<int> x_s;   // encoder input, length target_len()
    std::vector<int> x_fc;  // n*m row-major file-context ids; empty unless
                            // the variant has a file-context encoder
    std::vector<int> y_in;  // decoder input, length w, starts with sos
    std::vector<int> y_out; // decoder targets, length w, summary + eos + pads
};

/// Arranges raw id sequences into the shape each variant consumes:
/// fc keeps both inputs, alt replaces the file context with the target code
/// repeated n times, vanilla drops the file context, comb concatenates
/// everything into one window of t + n*m.
EncodedSample variant_input(const std::vector<int>& target_ids,
                            const std::vector<std::vector<int>>& fc_rows,
                            const std::vector<int>& summary_ids, const ModelConfig& cfg);

/// Dual-encoder summarizer. The decoder runs a (self, cross-to-A, cross-to-B)
/// block triple per layer; variants without a file-context encoder skip the
/// A pieces entirely.
template <typename T>
struct Model {
    ModelConfig cfg;

    EmbeddingTable<T> fc_tok, fc_pos;
    std::vector<XFormBlockParams<T>> fc_blocks;

    EmbeddingTable<T> s_tok, s_pos;
    std::vector<XFormBlockParams<T>> s_blocks;

    EmbeddingTable<T> d_tok, d_pos;
    std::vector<XFormBlockParams<T>> dec_self, dec_cross_a, dec_cross_b;

    Tensor<T> out_w; // [dim, vocab]
    Tensor<T> out_b; // [vocab]
};

template <typename T>
Model<T> make_model(const ModelConfig& cfg, Rng& rng);

/// Stable name -> tensor enumeration; the single source of truth for
/// checkpoints, the optimizer, and gradient checks.
template <typename T, typename Fn>
void visit_model_params(Model<T>& model, Fn&& fn) {
    if (model.cfg.has_file_context_encoder()) {
        fn("fc.tok", model.fc_tok.table);
        fn("fc.pos", model.fc_pos.table);
        for (std::size_t i = 0; i < model.fc_blocks.size(); ++i) {
            visit_params(model.fc_blocks[i], "fc.blk" + std::to_string(i), fn);
        }
    }
    fn("s.tok", model.s_tok.table);
    fn("s.pos", model.s_pos.table);
    for (std::size_t i = 0; i < model.s_blocks.size(); ++i) {
        visit_params(model.s_blocks[i], "s.blk" + std::to_string(i), fn);
    }
    fn("dec.tok", model.d_tok.table);
    fn("dec.pos", model.d_pos.table);
    for (std::size_t i = 0; i < model.dec_self.size(); ++i) {
        const std::string layer = "dec.l" + std::to_string(i);
        visit_params(model.dec_self[i], layer + ".self", fn);
        if (model.cfg.has_file_context_encoder()) {
            visit_params(model.dec_cross_a[i], layer + ".cross_a", fn);
        }
        visit_params(model.dec_cross_b[i], layer + ".cross_b", fn);
    }
    fn("out.w", model.out_w);
    fn("out.b", model.out_b);
}

template <typename T>
std::size_t parameter_count(Model<T>& model) {
    std::size_t count = 0;
    visit_model_params(model, [&](const std::string&, Tensor<T>& t) { count += t.size(); });
    return count;
}

template <typename T>
void set_training_mode(Model<T>& model, bool training) {
    visit_model_params(model,
                       [&](const std::string&, Tensor<T>& t) { t.set_requires_grad(training); });
}

/// A = stacked self-attention over the merged [fcn*token, dim] embedding with
/// per-subroutine positions. rng enables dropout (training); nullptr is eval.
template <typename T>
Tensor<T> encode_file_context(Model<T>& model, const std::vector<int>& x_fc, Rng* rng);

/// B = stacked self-attention over [target_len, dim] with flat positions.
template <typename T>
Tensor<T> encode_target(Model<T>& model, const std::vector<int>& x_s, Rng* rng);

/// Causally masked decoder over y_in; cross-attends to A (when present) and
/// then B, the order flipping under cfg.swap_cross. Returns [word, vocab]
/// logits (no softmax).
template <typename T>
Tensor<T> decode(Model<T>& model, const std::vector<int>& y_in, const Tensor<T>* a,
                 const std::vector<int>& x_fc_ids, const Tensor<T>& b,
                 const std::vector<int>& x_s_ids, Rng* rng);

template <typename T>
Tensor<T> forward_logits(Model<T>& model, const EncodedSample& sample, Rng* rng);

/// Mean cross entropy over the sample's non-pad target positions.
template <typename T>
Tensor<T> example_loss(Model<T>& model, const EncodedSample& sample, Rng* rng);

/// Mean of the per-example losses.
template <typename T>
Tensor<T> forward_loss(Model<T>& model, std::span<const EncodedSample> batch, Rng* rng);

/// Bit-exact binary snapshot: tensors in visit order plus a config echo that
/// lets the loader rebuild the model without any side files.
void save_checkpoint(const std::string& path, Model<float>& model);
Model<float> load_checkpoint(const std::string& path);

} // namespace csfc
