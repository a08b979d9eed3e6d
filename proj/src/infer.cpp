#include "csfc/infer.hpp"

#include <algorithm>
#include <fstream>

namespace csfc {

template <typename T>
std::vector<int> greedy_decode(Model<T>& model, const EncodedSample& sample,
                               std::size_t max_len, std::size_t vocab_limit) {
    const ModelConfig& cfg = model.cfg;
    const std::size_t cap = std::min(max_len, cfg.w);

    Tensor<T> b = encode_target(model, sample.x_s, nullptr);
    Tensor<T> a;
    if (cfg.has_file_context_encoder()) {
        a = encode_file_context(model, sample.x_fc, nullptr);
    }

    // the buffer stays w wide; positions past the current step hold pad,
    // which the causal and key-padding masks keep out of reach
    std::vector<int> y(cfg.w, pad_id);
    y[0] = sos_id;
    std::vector<int> out;
    for (std::size_t k = 0; k < cap; ++k) {
        const auto logits =
            a.valid() ? decode(model, y, &a, sample.x_fc, b, sample.x_s, nullptr)
                      : decode<T>(model, y, nullptr, {}, b, sample.x_s, nullptr);
        const std::size_t vocab = logits.axes()[1].size;
        const auto row = logits.data().subspan(k * vocab, vocab);
        const std::size_t live =
            vocab_limit == 0 ? vocab : std::min(vocab_limit, vocab);
        int best = 0;
        for (std::size_t i = 1; i < live; ++i) {
            if (row[i] > row[best]) best = static_cast<int>(i);
        }
        if (best == eos_id) break;
        if (best != pad_id && best != sos_id) out.push_back(best);
        if (k + 1 < cfg.w) y[k + 1] = best;
    }
    return out;
}

template std::vector<int> greedy_decode<float>(Model<float>&, const EncodedSample&,
                                               std::size_t, std::size_t);
template std::vector<int> greedy_decode<double>(Model<double>&, const EncodedSample&,
                                                std::size_t, std::size_t);

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string out;
    for (const int id : ids) {
        if (id == pad_id || id == sos_id || id == eos_id) continue;
        const std::string& word = vocab.decode(id);
        if (!out.empty()) out.push_back(' ');
        out += word;
    }
    return out;
}

void write_predictions(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& preds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write predictions file " + path);
    for (const auto& [id, summary] : preds) {
        out << id << '\t' << summary << '\n';
    }
}

std::vector<std::pair<std::string, std::string>> load_predictions(
    const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read predictions file " + path);
    std::vector<std::pair<std::string, std::string>> preds;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": expected <id>\\t<summary>");
        }
        preds.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    return preds;
}

} // namespace csfc
