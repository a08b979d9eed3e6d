#pragma once

#include <string>
#include <utility>
#include <vector>

#include "csfc/corpus.hpp"
#include "csfc/model.hpp"

namespace csfc {

/// Greedy autoregressive decode: start from sos, take the argmax at each
/// position (ties go to the lowest id), feed it back, and stop at eos or
/// after max_len tokens (clamped to the model's summary width). The
/// returned ids exclude sos, eos, and pad. One full decoder pass per step.
/// vocab_limit restricts the argmax to the first ids, for vocabularies
/// smaller than the model's output width; 0 means no restriction.
template <typename T>
std::vector<int> greedy_decode(Model<T>& model, const EncodedSample& sample,
                               std::size_t max_len, std::size_t vocab_limit = 0);

/// Space-joined words; pad/sos/eos are dropped, unk renders as "<unk>".
/// Ids outside the vocabulary raise IndexError.
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

/// Predictions file: one `<id>\t<summary words>` line per sample, in the
/// given order.
void write_predictions(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& preds);
std::vector<std::pair<std::string, std::string>> load_predictions(
    const std::string& path);

} // namespace csfc
