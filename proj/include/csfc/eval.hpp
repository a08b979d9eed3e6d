#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "csfc/corpus.hpp"

namespace csfc {

/// Word-overlap audit record: wo counts the reference-summary words that
/// appear somewhere in the file context but not in the target subroutine,
/// i.e. the size of (FCW - MW) intersected with SW over word sets.
struct WoRecord {
    std::string id;
    std::size_t wo = 0;
    std::set<std::string> fcw, mw, sw;
};

WoRecord word_overlap(const Sample& sample);

/// Sentence BLEU-4 in [0, 100]: modified n-gram precision with add-one
/// smoothing for n >= 2 (unigrams unsmoothed, so zero-match pairs score 0)
/// and brevity penalty exp(1 - r/c) when the prediction is shorter.
double bleu(const std::vector<std::string>& pred, const std::vector<std::string>& ref);

/// Two-step suffix stemmer: plural endings first (es, or a lone s), then
/// one of ing/ed/ly, each stripped only when at least three characters remain.
std::string stem_word(const std::string& word);

/// METEOR in [0, 1]: exact then suffix-stemmed unigram alignment,
/// Fmean = 10PR / (R + 9P), fragmentation penalty 0.5 * (chunks/matches)^3,
/// score = Fmean * (1 - penalty). No synonym or paraphrase stages.
double meteor(const std::vector<std::string>& pred,
              const std::vector<std::string>& ref);

/// Mean of the sentence scores over id-aligned pairs.
double corpus_bleu(const std::vector<std::vector<std::string>>& preds,
                   const std::vector<std::vector<std::string>>& refs);
double corpus_meteor(const std::vector<std::vector<std::string>>& preds,
                     const std::vector<std::vector<std::string>>& refs);

/// Embeddings file: one `<id>\t<comma separated floats>` line per sample.
std::map<std::string, std::vector<double>> load_embeddings(const std::string& path);

/// Per-id cosine similarity. The files must cover exactly the same ids;
/// anything missing on either side raises MismatchError naming the ids.
std::map<std::string, double> embedding_similarity_by_id(
    const std::map<std::string, std::vector<double>>& pred,
    const std::map<std::string, std::vector<double>>& ref);

/// Mean cosine similarity over ids, reported on a 0..100 scale.
double embedding_similarity(const std::map<std::string, std::vector<double>>& pred,
                            const std::map<std::string, std::vector<double>>& ref);

struct BucketStats {
    std::string label;
    std::size_t count = 0;
    double mean_meteor = 0.0;
    double mean_bleu = 0.0;
    double mean_embed = 0.0;
    bool has_embed = false;
    bool suppressed = false; // too few samples: renderers withhold the means
};

/// Per-bucket means over exact word-overlap values {0,1,2,3,>=4} and the
/// cumulative thresholds {=0,>=1,>=2,>=3,>=4}.
struct StratifiedReport {
    std::vector<BucketStats> exact;
    std::vector<BucketStats> cumulative;
    std::size_t total = 0;
    std::size_t min_count = 60;

    std::string to_text() const;  // aligned table with metric notes up top
    std::string to_json() const;  // same content, machine readable
};

/// Scores every prediction against its sample's reference summary and
/// groups by word overlap. Prediction ids and sample ids must match
/// exactly. embed, when given, must cover every id. Buckets smaller than
/// min_count are marked suppressed.
StratifiedReport stratify(
    const std::vector<std::pair<std::string, std::string>>& preds,
    const std::vector<Sample>& samples,
    const std::map<std::string, double>* embed = nullptr,
    std::size_t min_count = 60);

} // namespace csfc
