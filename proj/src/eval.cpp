#include "csfc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace csfc {

WoRecord word_overlap(const Sample& sample) {
    WoRecord record;
    record.id = sample.id;
    record.mw.insert(sample.target.begin(), sample.target.end());
    for (const auto& row : sample.fc) {
        record.fcw.insert(row.begin(), row.end());
    }
    record.sw.insert(sample.summary.begin(), sample.summary.end());
    for (const auto& word : record.sw) {
        if (record.fcw.count(word) != 0 && record.mw.count(word) == 0) {
            ++record.wo;
        }
    }
    return record;
}

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(
    const std::vector<std::string>& words, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> counts;
    if (words.size() < n) return counts;
    for (std::size_t i = 0; i + n <= words.size(); ++i) {
        ++counts[std::vector<std::string>(words.begin() + i, words.begin() + i + n)];
    }
    return counts;
}

} // namespace

double bleu(const std::vector<std::string>& pred,
            const std::vector<std::string>& ref) {
    if (pred.empty()) return 0.0;
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
        const auto pred_grams = ngram_counts(pred, n);
        const auto ref_grams = ngram_counts(ref, n);
        std::size_t matched = 0;
        std::size_t total = 0;
        for (const auto& [gram, count] : pred_grams) {
            total += count;
            const auto it = ref_grams.find(gram);
            if (it != ref_grams.end()) matched += std::min(count, it->second);
        }
        double precision;
        if (n == 1) {
            precision = static_cast<double>(matched) / static_cast<double>(total);
            if (precision == 0.0) return 0.0;
        } else {
            precision = static_cast<double>(matched + 1) /
                        static_cast<double>(total + 1);
        }
        log_sum += 0.25 * std::log(precision);
    }
    const double c = static_cast<double>(pred.size());
    const double r = static_cast<double>(ref.size());
    const double brevity = c >= r ? 1.0 : std::exp(1.0 - r / c);
    return 100.0 * brevity * std::exp(log_sum);
}

std::string stem_word(const std::string& word) {
    const auto strip = [](std::string& w, const char* suffix) {
        const std::size_t len = std::char_traits<char>::length(suffix);
        if (w.size() >= len + 3 && w.compare(w.size() - len, len, suffix) == 0) {
            w.erase(w.size() - len);
            return true;
        }
        return false;
    };
    std::string out = word;
    if (!strip(out, "es")) {
        // a bare trailing s, but never the second s of an ss ending
        if (out.size() >= 4 && out.back() == 's' && out[out.size() - 2] != 's') {
            out.pop_back();
        }
    }
    if (!strip(out, "ing") && !strip(out, "ed")) strip(out, "ly");
    return out;
}

double meteor(const std::vector<std::string>& pred,
              const std::vector<std::string>& ref) {
    if (pred.empty() || ref.empty()) return 0.0;

    // alignment[i] = ref position matched to pred position i, or npos
    constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::vector<std::size_t> alignment(pred.size(), npos);
    std::vector<bool> ref_used(ref.size(), false);

    const auto align_stage = [&](auto&& same) {
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (alignment[i] != npos) continue;
            // prefer extending the previous chunk, else the leftmost slot
            std::size_t pick = npos;
            if (i > 0 && alignment[i - 1] != npos) {
                const std::size_t next = alignment[i - 1] + 1;
                if (next < ref.size() && !ref_used[next] && same(pred[i], ref[next])) {
                    pick = next;
                }
            }
            if (pick == npos) {
                for (std::size_t j = 0; j < ref.size(); ++j) {
                    if (!ref_used[j] && same(pred[i], ref[j])) {
                        pick = j;
                        break;
                    }
                }
            }
            if (pick != npos) {
                alignment[i] = pick;
                ref_used[pick] = true;
            }
        }
    };
    align_stage([](const std::string& a, const std::string& b) { return a == b; });
    align_stage([](const std::string& a, const std::string& b) {
        return stem_word(a) == stem_word(b);
    });

    std::size_t matches = 0;
    std::size_t chunks = 0;
    std::size_t prev_pred = npos;
    std::size_t prev_ref = npos;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (alignment[i] == npos) continue;
        ++matches;
        const bool contiguous =
            prev_pred != npos && i == prev_pred + 1 && alignment[i] == prev_ref + 1;
        if (!contiguous) ++chunks;
        prev_pred = i;
        prev_ref = alignment[i];
    }
    if (matches == 0) return 0.0;

    const double p = static_cast<double>(matches) / static_cast<double>(pred.size());
    const double r = static_cast<double>(matches) / static_cast<double>(ref.size());
    const double fmean = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(chunks) / static_cast<double>(matches);
    const double penalty = 0.5 * frag * frag * frag;
    return fmean * (1.0 - penalty);
}

namespace {

double mean_over_pairs(const std::vector<std::vector<std::string>>& preds,
                       const std::vector<std::vector<std::string>>& refs,
                       double (*score)(const std::vector<std::string>&,
                                       const std::vector<std::string>&)) {
    if (preds.size() != refs.size()) {
        throw MismatchError("got " + std::to_string(preds.size()) +
                            " predictions for " + std::to_string(refs.size()) +
                            " references");
    }
    if (preds.empty()) {
        throw ConfigError("cannot average a metric over zero samples");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) sum += score(preds[i], refs[i]);
    return sum / static_cast<double>(preds.size());
}

} // namespace

double corpus_bleu(const std::vector<std::vector<std::string>>& preds,
                   const std::vector<std::vector<std::string>>& refs) {
    return mean_over_pairs(preds, refs, bleu);
}

double corpus_meteor(const std::vector<std::vector<std::string>>& preds,
                     const std::vector<std::vector<std::string>>& refs) {
    return mean_over_pairs(preds, refs, meteor);
}

std::map<std::string, std::vector<double>> load_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read embeddings file " + path);
    std::map<std::string, std::vector<double>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto where = path + ":" + std::to_string(line_no);
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(where + ": expected <id>\\t<csv floats>");
        }
        const std::string id = line.substr(0, tab);
        if (out.count(id) != 0) {
            throw DataError(where + ": duplicate id '" + id + "'");
        }
        std::vector<double> vec;
        std::stringstream csv(line.substr(tab + 1));
        std::string cell;
        while (std::getline(csv, cell, ',')) {
            std::size_t used = 0;
            double value = 0.0;
            try {
                value = std::stod(cell, &used);
            } catch (const std::exception&) {
                throw DataError(where + ": bad float '" + cell + "'");
            }
            while (used < cell.size() && std::isspace(static_cast<unsigned char>(
                                             cell[used]))) {
                ++used;
            }
            if (used != cell.size()) {
                throw DataError(where + ": bad float '" + cell + "'");
            }
            vec.push_back(value);
        }
        if (vec.empty()) throw DataError(where + ": empty vector");
        out.emplace(id, std::move(vec));
    }
    return out;
}

namespace {

void require_same_ids(const std::map<std::string, std::vector<double>>& pred,
                      const std::map<std::string, std::vector<double>>& ref) {
    std::vector<std::string> missing;
    for (const auto& [id, vec] : pred) {
        if (ref.count(id) == 0) missing.push_back(id + " (reference side)");
    }
    for (const auto& [id, vec] : ref) {
        if (pred.count(id) == 0) missing.push_back(id + " (prediction side)");
    }
    if (!missing.empty()) {
        std::string joined;
        const std::size_t shown = std::min<std::size_t>(missing.size(), 10);
        for (std::size_t i = 0; i < shown; ++i) {
            if (!joined.empty()) joined += ", ";
            joined += missing[i];
        }
        if (missing.size() > shown) {
            joined += ", and " + std::to_string(missing.size() - shown) + " more";
        }
        throw MismatchError("embedding ids missing: " + joined);
    }
}

} // namespace

std::map<std::string, double> embedding_similarity_by_id(
    const std::map<std::string, std::vector<double>>& pred,
    const std::map<std::string, std::vector<double>>& ref) {
    require_same_ids(pred, ref);
    std::map<std::string, double> out;
    for (const auto& [id, p] : pred) {
        const auto& r = ref.at(id);
        if (p.size() != r.size()) {
            throw DataError("embedding dimension mismatch for id '" + id + "': " +
                            std::to_string(p.size()) + " vs " +
                            std::to_string(r.size()));
        }
        double dot = 0.0, pp = 0.0, rr = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            dot += p[i] * r[i];
            pp += p[i] * p[i];
            rr += r[i] * r[i];
        }
        const double denom = std::sqrt(pp) * std::sqrt(rr);
        out[id] = denom == 0.0 ? 0.0 : dot / denom;
    }
    return out;
}

double embedding_similarity(const std::map<std::string, std::vector<double>>& pred,
                            const std::map<std::string, std::vector<double>>& ref) {
    const auto by_id = embedding_similarity_by_id(pred, ref);
    if (by_id.empty()) throw ConfigError("no embeddings to average");
    double sum = 0.0;
    for (const auto& [id, cos] : by_id) sum += cos;
    return 100.0 * sum / static_cast<double>(by_id.size());
}

namespace {

const char* meteor_note =
    "METEOR here aligns exact and suffix-stemmed unigrams only; the synonym "
    "and paraphrase stages of the reference metric are not applied";
const char* bleu_note =
    "BLEU here is sentence-level BLEU-4 with add-one smoothing on n >= 2, "
    "averaged over samples (not corpus-level clipped counts)";

struct BucketAccumulator {
    std::size_t count = 0;
    double meteor_sum = 0.0;
    double bleu_sum = 0.0;
    double embed_sum = 0.0;

    void add(double m, double b, const double* e) {
        ++count;
        meteor_sum += m;
        bleu_sum += b;
        if (e != nullptr) embed_sum += *e;
    }

    BucketStats finish(std::string label, bool has_embed,
                       std::size_t min_count) const {
        BucketStats stats;
        stats.label = std::move(label);
        stats.count = count;
        stats.has_embed = has_embed;
        stats.suppressed = count < min_count;
        if (count > 0) {
            stats.mean_meteor = meteor_sum / static_cast<double>(count);
            stats.mean_bleu = bleu_sum / static_cast<double>(count);
            if (has_embed) stats.mean_embed = embed_sum / static_cast<double>(count);
        }
        return stats;
    }
};

std::string number_cell(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%10.4f", value);
    return buf;
}

std::string text_cell(const char* text) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%10s", text);
    return buf;
}

void render_rows(std::ostringstream& out, const std::vector<BucketStats>& rows,
                 const char* heading, bool embed) {
    out << heading << "\n";
    for (const auto& row : rows) {
        char head[64];
        std::snprintf(head, sizeof(head), "  %-6s %8zu", row.label.c_str(),
                      row.count);
        out << head;
        if (row.suppressed) {
            out << text_cell("-") << text_cell("-");
            if (embed) out << text_cell("-");
            out << "  (suppressed)";
        } else {
            out << number_cell(row.mean_meteor) << number_cell(row.mean_bleu);
            if (embed) out << number_cell(row.mean_embed);
        }
        out << "\n";
    }
}

} // namespace

std::string StratifiedReport::to_text() const {
    const bool embed = !exact.empty() && exact.front().has_embed;
    std::ostringstream out;
    out << "word-overlap stratified report over " << total << " samples\n";
    out << "buckets under " << min_count << " samples are suppressed\n";
    out << "note: " << meteor_note << "\n";
    out << "note: " << bleu_note << "\n\n";
    out << "  bucket    count" << text_cell("meteor") << text_cell("bleu");
    if (embed) out << text_cell("embed");
    out << "\n";
    render_rows(out, exact, "exact word overlap", embed);
    render_rows(out, cumulative, "cumulative word overlap", embed);
    return out.str();
}

std::string StratifiedReport::to_json() const {
    nlohmann::json j;
    j["total"] = total;
    j["min_count"] = min_count;
    j["notes"] = {meteor_note, bleu_note};
    const auto rows = [](const std::vector<BucketStats>& stats) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& row : stats) {
            nlohmann::json rj;
            rj["label"] = row.label;
            rj["count"] = row.count;
            rj["suppressed"] = row.suppressed;
            if (!row.suppressed) {
                rj["meteor"] = row.mean_meteor;
                rj["bleu"] = row.mean_bleu;
                if (row.has_embed) rj["embed"] = row.mean_embed;
            }
            arr.push_back(std::move(rj));
        }
        return arr;
    };
    j["exact"] = rows(exact);
    j["cumulative"] = rows(cumulative);
    return j.dump(2);
}

StratifiedReport stratify(
    const std::vector<std::pair<std::string, std::string>>& preds,
    const std::vector<Sample>& samples,
    const std::map<std::string, double>* embed, std::size_t min_count) {
    std::map<std::string, const Sample*> by_id;
    for (const auto& sample : samples) {
        if (!by_id.emplace(sample.id, &sample).second) {
            throw DataError("duplicate sample id '" + sample.id + "'");
        }
    }
    if (preds.size() != samples.size()) {
        throw MismatchError("got " + std::to_string(preds.size()) +
                            " predictions for " + std::to_string(samples.size()) +
                            " samples");
    }

    std::array<BucketAccumulator, 5> exact;
    std::array<BucketAccumulator, 5> cumulative;
    std::set<std::string> seen;
    for (const auto& [id, text] : preds) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw MismatchError("prediction id '" + id + "' has no sample");
        }
        if (!seen.insert(id).second) {
            throw DataError("duplicate prediction id '" + id + "'");
        }
        const Sample& sample = *it->second;

        const double* e = nullptr;
        double e_value = 0.0;
        if (embed != nullptr) {
            const auto eit = embed->find(id);
            if (eit == embed->end()) {
                throw MismatchError("no embedding similarity for id '" + id + "'");
            }
            e_value = eit->second;
            e = &e_value;
        }

        std::vector<std::string> pred_words;
        std::istringstream stream(text);
        std::string word;
        while (stream >> word) pred_words.push_back(word);

        const double m = meteor(pred_words, sample.summary);
        const double b = bleu(pred_words, sample.summary);
        const std::size_t wo = word_overlap(sample).wo;

        exact[std::min<std::size_t>(wo, 4)].add(m, b, e);
        for (std::size_t k = 1; k <= 4; ++k) {
            if (wo >= k) cumulative[k].add(m, b, e);
        }
    }
    // the first cumulative row is "= 0", which is the first exact bucket
    cumulative[0] = exact[0];

    StratifiedReport report;
    report.total = preds.size();
    report.min_count = min_count;
    const bool has_embed = embed != nullptr;
    const char* exact_labels[5] = {"0", "1", "2", "3", ">=4"};
    const char* cum_labels[5] = {"=0", ">=1", ">=2", ">=3", ">=4"};
    for (std::size_t k = 0; k < 5; ++k) {
        report.exact.push_back(exact[k].finish(exact_labels[k], has_embed, min_count));
        report.cumulative.push_back(
            cumulative[k].finish(cum_labels[k], has_embed, min_count));
    }
    return report;
}

} // namespace csfc
