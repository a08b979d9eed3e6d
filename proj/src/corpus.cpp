#include "csfc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "csfc/rng.hpp"

namespace csfc {

namespace {

/// Appends one lexed token's record-level form: identifiers split and
/// lowercased, literals as sentinels, punctuation and comments dropped.
void append_code_token(const Token& token, std::vector<std::string>& out) {
    switch (token.kind) {
    case Token::Kind::word: {
        auto words = split_identifier(token.text);
        out.insert(out.end(), words.begin(), words.end());
        break;
    }
    case Token::Kind::number:
    case Token::Kind::string:
        out.push_back(token.text);
        break;
    case Token::Kind::punct:
    case Token::Kind::comment:
    case Token::Kind::docstring:
        break;
    }
}

std::vector<std::string> code_tokens_from_span(const std::vector<Token>& tokens,
                                               std::size_t first, std::size_t last) {
    std::vector<std::string> out;
    for (std::size_t i = first; i <= last; ++i) append_code_token(tokens[i], out);
    return out;
}

/// First sentence of a doc comment body: javadoc '*' gutters stripped,
/// lines joined, cut at the first sentence end or tag marker.
std::string first_doc_sentence(const std::string& raw) {
    std::string joined;
    std::istringstream lines(raw);
    std::string line;
    while (std::getline(lines, line)) {
        std::size_t begin = line.find_first_not_of(" \t*");
        if (begin == std::string::npos) continue;
        std::size_t end = line.find_last_not_of(" \t\r");
        if (!joined.empty()) joined.push_back(' ');
        joined.append(line, begin, end - begin + 1);
    }
    for (std::size_t i = 0; i < joined.size(); ++i) {
        const char c = joined[i];
        if (c == '.' && (i + 1 == joined.size() || joined[i + 1] == ' ')) {
            return joined.substr(0, i);
        }
        if (c == '@' && (i == 0 || joined[i - 1] == ' ')) {
            return joined.substr(0, i);
        }
    }
    return joined;
}

std::vector<std::string> doc_summary_words(const std::string& raw) {
    return split_and_lower_words(first_doc_sentence(raw));
}

bool is_punct(const Token& token, std::string_view text) {
    return token.kind == Token::Kind::punct && token.text == text;
}

bool is_word(const Token& token, std::string_view text) {
    return token.kind == Token::Kind::word && token.text == text;
}

const std::vector<std::string> java_non_method_words = {
    "if",   "for",    "while", "switch", "catch",  "synchronized",
    "do",   "else",   "try",   "return", "new",    "assert",
    "throw", "super", "this",  "instanceof"};

bool java_method_name_at(const std::vector<Token>& tokens, std::size_t i) {
    if (tokens[i].kind != Token::Kind::word) return false;
    if (i + 1 >= tokens.size() || !is_punct(tokens[i + 1], "(")) return false;
    const auto& name = tokens[i].text;
    if (std::find(java_non_method_words.begin(), java_non_method_words.end(), name) !=
        java_non_method_words.end()) {
        return false;
    }
    if (i == 0) return false;
    const Token& prev = tokens[i - 1];
    if (prev.kind == Token::Kind::word) {
        return std::find(java_non_method_words.begin(), java_non_method_words.end(),
                         prev.text) == java_non_method_words.end();
    }
    // generic or array return type: List<T> foo(...), int[] foo(...)
    return is_punct(prev, ">") || is_punct(prev, "]");
}

/// Walks back from the method name over the return type and modifiers to
/// the first token of the declaration.
std::size_t java_decl_start(const std::vector<Token>& tokens, std::size_t name) {
    static const std::vector<std::string> decl_punct = {"<", ">", ",", ".",
                                                        "[", "]", "?"};
    std::size_t start = name;
    while (start > 0) {
        const Token& prev = tokens[start - 1];
        const bool keep =
            prev.kind == Token::Kind::word ||
            (prev.kind == Token::Kind::punct &&
             std::find(decl_punct.begin(), decl_punct.end(), prev.text) !=
                 decl_punct.end());
        if (!keep) break;
        --start;
    }
    // drop a leading annotation word left behind by the walk
    while (start < name && start > 0 && is_punct(tokens[start - 1], "@")) ++start;
    return start;
}

/// Scans forward from an opening delimiter to its match; returns the index
/// of the closing token.
std::size_t match_forward(const std::vector<Token>& tokens, std::size_t open,
                          std::string_view open_text, std::string_view close_text) {
    int depth = 0;
    for (std::size_t i = open; i < tokens.size(); ++i) {
        if (is_punct(tokens[i], open_text)) ++depth;
        if (is_punct(tokens[i], close_text) && --depth == 0) return i;
    }
    throw DataError("unbalanced '" + std::string(open_text) + "' at line " +
                    std::to_string(tokens[open].line));
}

std::vector<FunctionRecord> extract_java(const std::vector<Token>& tokens,
                                         const std::string& project,
                                         const std::string& file) {
    std::vector<FunctionRecord> records;
    std::size_t i = 0;
    while (i < tokens.size()) {
        if (!java_method_name_at(tokens, i)) {
            ++i;
            continue;
        }
        const std::size_t params_close = match_forward(tokens, i + 1, "(", ")");
        // skip an optional throws clause, then require a body
        std::size_t j = params_close + 1;
        if (j < tokens.size() && is_word(tokens[j], "throws")) {
            ++j;
            while (j < tokens.size() &&
                   (tokens[j].kind == Token::Kind::word || is_punct(tokens[j], ",") ||
                    is_punct(tokens[j], "."))) {
                ++j;
            }
        }
        if (j >= tokens.size() || !is_punct(tokens[j], "{")) {
            i = params_close + 1; // abstract declaration or false positive
            continue;
        }
        const std::size_t body_close = match_forward(tokens, j, "{", "}");
        const std::size_t start = java_decl_start(tokens, i);

        FunctionRecord record;
        record.project = project;
        record.file = file;
        record.index = records.size();
        record.code = code_tokens_from_span(tokens, start, body_close);
        if (start > 0 && tokens[start - 1].kind == Token::Kind::comment &&
            !tokens[start - 1].raw.empty() && tokens[start - 1].raw[0] == '*') {
            record.summary = doc_summary_words(tokens[start - 1].raw);
        }
        records.push_back(std::move(record));
        i = body_close + 1;
    }
    return records;
}

int bracket_delta(const Token& token) {
    if (token.kind != Token::Kind::punct || token.text.size() != 1) return 0;
    const char c = token.text[0];
    if (c == '(' || c == '[' || c == '{') return 1;
    if (c == ')' || c == ']' || c == '}') return -1;
    return 0;
}

std::vector<FunctionRecord> extract_python(const std::vector<Token>& tokens,
                                           const std::string& project,
                                           const std::string& file) {
    std::vector<FunctionRecord> records;
    std::size_t i = 0;
    while (i < tokens.size()) {
        const bool line_start = i == 0 || tokens[i - 1].line < tokens[i].line;
        const bool after_async = i > 0 && is_word(tokens[i - 1], "async") &&
                                 tokens[i - 1].line == tokens[i].line;
        if (!is_word(tokens[i], "def") || !(line_start || after_async)) {
            ++i;
            continue;
        }
        const std::size_t def_col = after_async ? tokens[i - 1].col : tokens[i].col;
        const std::size_t header_start = after_async ? i - 1 : i;

        // the header ends at the first ':' outside brackets
        std::size_t colon = i + 1;
        int depth = 0;
        while (colon < tokens.size() && !(depth == 0 && is_punct(tokens[colon], ":"))) {
            depth += bracket_delta(tokens[colon]);
            ++colon;
        }
        if (colon >= tokens.size()) {
            throw DataError("def without body at line " + std::to_string(tokens[i].line));
        }

        // the body runs while new lines stay indented past the def
        std::size_t last = colon;
        std::size_t prev_line = tokens[colon].line;
        depth = 0;
        std::size_t j = colon + 1;
        std::size_t doc_token = tokens.size();
        for (; j < tokens.size(); ++j) {
            const Token& t = tokens[j];
            if (t.kind == Token::Kind::comment) continue;
            if (depth == 0 && t.line > prev_line && t.col <= def_col) break;
            if (doc_token == tokens.size()) doc_token = j;
            depth += bracket_delta(t);
            prev_line = t.line;
            last = j;
        }
        if (last == colon) {
            throw DataError("def without body at line " + std::to_string(tokens[i].line));
        }

        FunctionRecord record;
        record.project = project;
        record.file = file;
        record.index = records.size();
        record.code = code_tokens_from_span(tokens, header_start, last);
        if (doc_token < tokens.size() &&
            tokens[doc_token].kind == Token::Kind::docstring) {
            record.summary = doc_summary_words(tokens[doc_token].raw);
        }
        records.push_back(std::move(record));
        i = last + 1;
    }
    return records;
}

template <typename Count>
void count_tokens(const std::vector<std::string>& tokens, Count& freq) {
    for (const auto& token : tokens) ++freq[token];
}

} // namespace

std::vector<std::string> code_tokens_from_source(const std::string& text, Lang lang) {
    std::vector<std::string> out;
    for (const auto& token : lex_tokens(text, lang)) append_code_token(token, out);
    return out;
}

std::vector<std::string> split_and_lower_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream stream(text);
    std::string chunk;
    while (stream >> chunk) {
        auto words = split_identifier(chunk);
        out.insert(out.end(), words.begin(), words.end());
    }
    return out;
}

std::vector<FunctionRecord> extract_functions(const std::string& text, Lang lang,
                                              const std::string& project,
                                              const std::string& file) {
    const auto tokens = lex_tokens(text, lang);
    return lang == Lang::java ? extract_java(tokens, project, file)
                              : extract_python(tokens, project, file);
}

Vocabulary Vocabulary::build(const std::unordered_map<std::string, std::size_t>& freq,
                             std::size_t cap) {
    if (cap < special_tokens.size() + 1) {
        throw ConfigError("vocabulary cap must be at least " +
                          std::to_string(special_tokens.size() + 1) + ", got " +
                          std::to_string(cap));
    }
    std::vector<std::pair<std::string, std::size_t>> ranked;
    ranked.reserve(freq.size());
    for (const auto& [token, count] : freq) {
        if (std::find(special_tokens.begin(), special_tokens.end(), token) ==
            special_tokens.end()) {
            ranked.emplace_back(token, count);
        }
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (ranked.size() > cap - special_tokens.size()) {
        ranked.resize(cap - special_tokens.size());
    }

    Vocabulary vocab;
    vocab.id_to_token_.assign(special_tokens.begin(), special_tokens.end());
    for (auto& [token, count] : ranked) {
        vocab.id_to_token_.push_back(std::move(token));
    }
    for (std::size_t id = 0; id < vocab.id_to_token_.size(); ++id) {
        vocab.token_to_id_.emplace(vocab.id_to_token_[id], static_cast<int>(id));
    }
    return vocab;
}

int Vocabulary::encode(const std::string& token) const {
    const auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? unk_id : it->second;
}

const std::string& Vocabulary::decode(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
        throw IndexError("token id " + std::to_string(id) +
                         " outside vocabulary of size " +
                         std::to_string(id_to_token_.size()));
    }
    return id_to_token_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file " + path);
    for (const auto& token : id_to_token_) out << token << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read vocabulary file " + path);
    Vocabulary vocab;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        vocab.id_to_token_.push_back(line);
    }
    if (vocab.id_to_token_.size() < special_tokens.size()) {
        throw DataError("vocabulary file " + path + " has fewer than " +
                        std::to_string(special_tokens.size()) + " entries");
    }
    for (std::size_t i = 0; i < special_tokens.size(); ++i) {
        if (vocab.id_to_token_[i] != special_tokens[i]) {
            throw DataError("vocabulary file " + path + " line " + std::to_string(i) +
                            " must be " + special_tokens[i]);
        }
    }
    for (std::size_t id = 0; id < vocab.id_to_token_.size(); ++id) {
        const bool fresh =
            vocab.token_to_id_.emplace(vocab.id_to_token_[id], static_cast<int>(id))
                .second;
        if (!fresh) {
            throw DataError("duplicate token '" + vocab.id_to_token_[id] +
                            "' in vocabulary file " + path);
        }
    }
    return vocab;
}

Vocabulary build_source_vocab(const std::vector<Sample>& train, std::size_t cap) {
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& sample : train) {
        count_tokens(sample.target, freq);
        for (const auto& row : sample.fc) count_tokens(row, freq);
    }
    return Vocabulary::build(freq, cap);
}

Vocabulary build_summary_vocab(const std::vector<Sample>& train, std::size_t cap) {
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& sample : train) count_tokens(sample.summary, freq);
    return Vocabulary::build(freq, cap);
}

std::vector<Sample> build_samples(const std::vector<FunctionRecord>& records,
                                  const ModelConfig& cfg) {
    std::unordered_map<std::string, std::vector<std::size_t>> by_file;
    for (std::size_t i = 0; i < records.size(); ++i) {
        by_file[records[i].file].push_back(i);
    }
    for (auto& [file, indices] : by_file) {
        std::sort(indices.begin(), indices.end(), [&](std::size_t a, std::size_t b) {
            return records[a].index < records[b].index;
        });
    }

    const auto head = [](const std::vector<std::string>& tokens, std::size_t cap) {
        return std::vector<std::string>(tokens.begin(),
                                        tokens.begin() +
                                            std::min(tokens.size(), cap));
    };

    std::vector<Sample> samples;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& record = records[i];
        if (record.summary.size() < 2) continue;

        Sample sample;
        sample.id = record.file + "#" + std::to_string(record.index);
        sample.project = record.project;
        sample.target = head(record.code, cfg.t);
        sample.summary = head(record.summary, cfg.w - 1);
        for (const std::size_t other : by_file[record.file]) {
            if (other == i) continue;
            if (sample.fc.size() == cfg.n) break;
            sample.fc.push_back(head(records[other].code, cfg.m));
        }
        samples.push_back(std::move(sample));
    }
    return samples;
}

SplitSet split_by_project(const std::vector<Sample>& samples,
                          const std::array<double, 3>& ratios, std::uint64_t seed) {
    double sum = 0.0;
    for (const double r : ratios) {
        if (r < 0.0) throw ConfigError("split ratios must be nonnegative");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("split ratios must sum to 1");
    }

    std::map<std::string, std::vector<std::size_t>> by_project;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        by_project[samples[i].project].push_back(i);
    }
    std::vector<std::string> projects;
    projects.reserve(by_project.size());
    for (const auto& [project, indices] : by_project) projects.push_back(project);

    std::size_t wanted_splits = 0;
    for (const double r : ratios) wanted_splits += r > 0.0 ? 1 : 0;
    if (projects.size() < wanted_splits) {
        throw ConfigError("need at least " + std::to_string(wanted_splits) +
                          " projects to form the requested splits, got " +
                          std::to_string(projects.size()));
    }

    Rng rng(seed);
    rng.shuffle(projects);

    const double total = static_cast<double>(samples.size());
    const std::array<double, 3> cumulative = {ratios[0] * total,
                                              (ratios[0] + ratios[1]) * total, total};
    std::array<std::vector<Sample>, 3> splits;
    std::size_t s = 0;
    std::size_t assigned = 0;
    for (std::size_t p = 0; p < projects.size(); ++p) {
        // once only as many projects remain as there are unfed nonzero-ratio
        // splits, hand one project to each of them
        std::vector<std::size_t> unfed;
        for (std::size_t k = s; k < 3; ++k) {
            if (ratios[k] > 0.0 && splits[k].empty()) unfed.push_back(k);
        }
        if (!unfed.empty() && projects.size() - p <= unfed.size()) s = unfed.front();

        for (const std::size_t i : by_project[projects[p]]) {
            splits[s].push_back(samples[i]);
        }
        assigned += by_project[projects[p]].size();
        // advance when the sample-count target is met, but never skip a
        // nonzero-ratio split that has not received a project yet
        while (s < 2 && static_cast<double>(assigned) >= cumulative[s] &&
               (ratios[s] == 0.0 || !splits[s].empty())) {
            ++s;
        }
    }
    return {std::move(splits[0]), std::move(splits[1]), std::move(splits[2])};
}

void save_samples_jsonl(const std::vector<Sample>& samples, const std::string& path) {
    std::vector<const Sample*> ordered;
    ordered.reserve(samples.size());
    for (const auto& sample : samples) ordered.push_back(&sample);
    std::sort(ordered.begin(), ordered.end(),
              [](const Sample* a, const Sample* b) { return a->id < b->id; });

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write dataset file " + path);
    for (const Sample* sample : ordered) {
        nlohmann::json j;
        j["id"] = sample->id;
        j["project"] = sample->project;
        j["target"] = sample->target;
        j["fc"] = sample->fc;
        j["summary"] = sample->summary;
        out << j.dump() << '\n';
    }
}

std::vector<Sample> load_samples_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read dataset file " + path);
    std::vector<Sample> samples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        const auto context = path + ":" + std::to_string(line_no);
        try {
            Sample sample;
            sample.id = j.at("id").get<std::string>();
            sample.project = j.at("project").get<std::string>();
            sample.target = j.at("target").get<std::vector<std::string>>();
            sample.fc = j.at("fc").get<std::vector<std::vector<std::string>>>();
            sample.summary = j.at("summary").get<std::vector<std::string>>();
            samples.push_back(std::move(sample));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(context + ": " + e.what());
        }
    }
    return samples;
}

EncodedSample encode_sample(const Sample& sample, const Vocabulary& src,
                            const Vocabulary& sum, const ModelConfig& cfg) {
    const auto encode_all = [](const Vocabulary& vocab,
                               const std::vector<std::string>& words) {
        std::vector<int> ids;
        ids.reserve(words.size());
        for (const auto& word : words) ids.push_back(vocab.encode(word));
        return ids;
    };
    std::vector<std::vector<int>> fc;
    fc.reserve(sample.fc.size());
    for (const auto& row : sample.fc) fc.push_back(encode_all(src, row));

    EncodedSample encoded = variant_input(encode_all(src, sample.target), fc,
                                          encode_all(sum, sample.summary), cfg);
    encoded.id = sample.id;
    return encoded;
}

std::vector<EncodedSample> encode_samples(const std::vector<Sample>& samples,
                                          const Vocabulary& src, const Vocabulary& sum,
                                          const ModelConfig& cfg) {
    std::vector<EncodedSample> encoded;
    encoded.reserve(samples.size());
    for (const auto& sample : samples) {
        encoded.push_back(encode_sample(sample, src, sum, cfg));
    }
    return encoded;
}

std::vector<FunctionRecord> load_corpus_dir(const std::string& dir, Lang lang) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    if (!fs::is_directory(root)) {
        throw DataError("source directory not found: " + dir);
    }
    const std::string extension = lang == Lang::java ? ".java" : ".py";

    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file() && entry.path().extension() == extension) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());

    std::vector<FunctionRecord> records;
    for (const auto& file : files) {
        const fs::path rel = fs::relative(file, root);
        const std::string project = rel.begin()->string();

        std::ifstream in(file, std::ios::binary);
        std::ostringstream text;
        text << in.rdbuf();
        try {
            auto extracted =
                extract_functions(text.str(), lang, project, rel.generic_string());
            records.insert(records.end(), std::make_move_iterator(extracted.begin()),
                           std::make_move_iterator(extracted.end()));
        } catch (const Error& e) {
            std::cerr << "skipping " << rel.generic_string() << ": " << e.what()
                      << "\n";
        }
    }
    return records;
}

} // namespace csfc
