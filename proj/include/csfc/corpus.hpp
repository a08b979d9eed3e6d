#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "csfc/config.hpp"
#include "csfc/errors.hpp"
#include "csfc/lexer.hpp"
#include "csfc/model.hpp"

namespace csfc {

/// One function pulled out of a source file.
struct FunctionRecord {
    std::string project;
    std::string file;
    std::size_t index = 0;              // position within the file, 0-based
    std::vector<std::string> code;      // lowercase words + literal sentinels
    std::vector<std::string> summary;   // first doc sentence, may be empty
};

/// One trainable example: a target function, its file context, and the
/// reference summary. Token lists are stored as words; encode_sample
/// turns them into padded id rows.
struct Sample {
    std::string id;                     // "<file>#<index>"
    std::string project;
    std::vector<std::string> target;
    std::vector<std::vector<std::string>> fc;
    std::vector<std::string> summary;
};

/// Printable strings for the reserved ids pad/sos/eos/unk (0..3).
inline const std::array<std::string, 4> special_tokens = {"<pad>", "<sos>", "<eos>",
                                                          "<unk>"};

/// Normalizes raw source into record-level code tokens: comments and
/// docstrings dropped, literals collapsed to sentinels, identifiers split
/// and lowercased, punctuation removed.
std::vector<std::string> code_tokens_from_source(const std::string& text, Lang lang);

/// Splits free text (a doc sentence) into lowercase words with the same
/// identifier-splitting rules applied to each whitespace chunk.
std::vector<std::string> split_and_lower_words(const std::string& text);

/// Pulls every function out of one file. Java methods are found by a
/// signature pattern plus brace matching; Python defs by indentation.
/// The doc summary is the first sentence of the Javadoc immediately above
/// the declaration, or of the leading docstring.
std::vector<FunctionRecord> extract_functions(const std::string& text, Lang lang,
                                              const std::string& project = "",
                                              const std::string& file = "");

/// Fixed-size token table. Ids 0..3 are the reserved specials; the rest
/// are the most frequent corpus tokens, ties broken lexicographically.
class Vocabulary {
public:
    static Vocabulary build(const std::unordered_map<std::string, std::size_t>& freq,
                            std::size_t cap);

    int encode(const std::string& token) const;   // unk_id when absent
    const std::string& decode(int id) const;      // IndexError when out of range
    std::size_t size() const { return id_to_token_.size(); }

    void save(const std::string& path) const;     // one token per line, line = id
    static Vocabulary load(const std::string& path);

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

/// Source-side vocabulary counts target and file-context tokens jointly;
/// the summary vocabulary counts summary words. Build from the training
/// split only.
Vocabulary build_source_vocab(const std::vector<Sample>& train, std::size_t cap);
Vocabulary build_summary_vocab(const std::vector<Sample>& train, std::size_t cap);

/// One Sample per record with a summary of at least two words. The file
/// context is the first n other functions from the same file, in file
/// order; each row keeps its first m tokens, the target its first t, the
/// summary its first w-1 words.
std::vector<Sample> build_samples(const std::vector<FunctionRecord>& records,
                                  const ModelConfig& cfg);

struct SplitSet {
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
};

/// Assigns whole projects to splits by seeded shuffle, filling train, then
/// val, then test up to sample-count targets derived from the ratios.
/// Every split with a nonzero ratio receives at least one project.
SplitSet split_by_project(const std::vector<Sample>& samples,
                          const std::array<double, 3>& ratios, std::uint64_t seed);

/// One JSON object per line with fields id, project, target, fc, summary.
/// Records are written sorted by id.
void save_samples_jsonl(const std::vector<Sample>& samples, const std::string& path);
std::vector<Sample> load_samples_jsonl(const std::string& path);

/// Bridges words to ids and builds the variant-specific encoder inputs.
EncodedSample encode_sample(const Sample& sample, const Vocabulary& src,
                            const Vocabulary& sum, const ModelConfig& cfg);
std::vector<EncodedSample> encode_samples(const std::vector<Sample>& samples,
                                          const Vocabulary& src, const Vocabulary& sum,
                                          const ModelConfig& cfg);

/// Walks a directory tree for .java / .py files (sorted by path), extracts
/// functions from each, and skips files that fail to lex or extract,
/// logging one line per skipped file to stderr. The project id is the
/// first path component below the root.
std::vector<FunctionRecord> load_corpus_dir(const std::string& dir, Lang lang);

} // namespace csfc
