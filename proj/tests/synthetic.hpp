#pragma once

// Synthetic corpora for exercising the training loop end to end: a small
// memorization set, and a keyword task whose answer is visible only in the
// file context.

#include <string>
#include <vector>

#include "csfc/model.hpp"
#include "csfc/rng.hpp"

namespace csfc::synth {

inline int random_word(Rng& rng, std::size_t vocab) {
    // ids below 4 are reserved
    return static_cast<int>(4 + rng.below(vocab - 4));
}

/// Random (target, fc, summary) triples; small enough sets are learnable
/// by pure memorization.
inline std::vector<EncodedSample> memorization_set(const ModelConfig& cfg,
                                                   std::size_t count, Rng& rng) {
    std::vector<EncodedSample> samples;
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<int> target(cfg.t);
        for (auto& id : target) id = random_word(rng, cfg.v);
        std::vector<std::vector<int>> fc(cfg.n, std::vector<int>(cfg.m));
        for (auto& row : fc) {
            for (auto& id : row) id = random_word(rng, cfg.v);
        }
        std::vector<int> summary(cfg.w - 1);
        for (auto& id : summary) id = random_word(rng, cfg.z);
        auto sample = variant_input(target, fc, summary, cfg);
        sample.id = "synth#" + std::to_string(i);
        samples.push_back(std::move(sample));
    }
    return samples;
}

struct KeywordTask {
    std::vector<EncodedSample> train;
    std::vector<EncodedSample> test;
    std::vector<int> test_keywords; // summary-vocab id each test sample must emit
};

/// Every sample's summary starts with a keyword that appears in exactly one
/// file-context row and never in the target code, so only a model that reads
/// the file context can predict it. Source and summary ids for keyword k are
/// aligned (same id in both vocabularies) to keep the mapping learnable.
inline KeywordTask keyword_task(const ModelConfig& cfg, std::size_t train_count,
                                std::size_t test_count, std::size_t keywords,
                                Rng& rng) {
    // source-id space: [4, 4+keywords) are keywords, the rest is filler
    const int filler_lo = static_cast<int>(4 + keywords);
    const auto filler = [&] {
        return static_cast<int>(filler_lo +
                                rng.below(cfg.v - static_cast<std::size_t>(filler_lo)));
    };

    KeywordTask task;
    const std::size_t total = train_count + test_count;
    for (std::size_t i = 0; i < total; ++i) {
        const int keyword = static_cast<int>(4 + rng.below(keywords));

        std::vector<int> target(cfg.t);
        for (auto& id : target) id = filler();
        std::vector<std::vector<int>> fc(cfg.n, std::vector<int>(cfg.m));
        for (auto& row : fc) {
            for (auto& id : row) id = filler();
        }
        const std::size_t row = rng.below(cfg.n);
        const std::size_t col = rng.below(cfg.m);
        fc[row][col] = keyword;

        std::vector<int> summary(cfg.w - 1);
        summary[0] = keyword;
        for (std::size_t k = 1; k < summary.size(); ++k) {
            summary[k] = static_cast<int>(4 + rng.below(cfg.z - 4));
        }
        auto sample = variant_input(target, fc, summary, cfg);
        sample.id = "kw#" + std::to_string(i);
        if (i < train_count) {
            task.train.push_back(std::move(sample));
        } else {
            task.test.push_back(std::move(sample));
            task.test_keywords.push_back(keyword);
        }
    }
    return task;
}

} // namespace csfc::synth
