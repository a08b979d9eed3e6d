#include "csfc/lexer.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace csfc {

Lang parse_lang(std::string_view name) {
    if (name == "java") return Lang::java;
    if (name == "python") return Lang::python;
    throw ConfigError("unknown language '" + std::string(name) +
                      "' (expected java or python)");
}

const char* lang_name(Lang lang) {
    return lang == Lang::java ? "java" : "python";
}

std::vector<std::string> split_identifier(std::string_view token) {
    std::vector<std::string> words;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            words.push_back(current);
            current.clear();
        }
    };
    const auto upper = [](char c) { return c >= 'A' && c <= 'Z'; };
    const auto lower = [](char c) { return c >= 'a' && c <= 'z'; };
    const auto digit = [](char c) { return c >= '0' && c <= '9'; };

    for (std::size_t i = 0; i < token.size(); ++i) {
        const char c = token[i];
        if (!upper(c) && !lower(c) && !digit(c)) {
            flush();
            continue;
        }
        if (!current.empty()) {
            const char prev = token[i - 1];
            const bool case_boundary = (lower(prev) || digit(prev)) && upper(c);
            // an upper run breaks before its last letter when a lower
            // follows: HTTPServer -> HTTP | Server
            const bool acronym_boundary =
                upper(prev) && upper(c) && i + 1 < token.size() && lower(token[i + 1]);
            if (case_boundary || acronym_boundary) flush();
        }
        current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    flush();
    return words;
}

namespace {

class Cursor {
public:
    explicit Cursor(const std::string& text) : text_(text) {}

    bool done() const { return pos_ >= text_.size(); }
    char peek(std::size_t ahead = 0) const {
        return pos_ + ahead < text_.size() ? text_[pos_ + ahead] : '\0';
    }
    bool starts_with(std::string_view s) const {
        return text_.compare(pos_, s.size(), s) == 0;
    }
    char advance() {
        const char c = text_[pos_++];
        if (c == '\n') {
            ++line_;
            col_ = 0;
        } else {
            ++col_;
        }
        return c;
    }
    void advance_by(std::size_t count) {
        for (std::size_t i = 0; i < count && !done(); ++i) advance();
    }
    std::size_t line() const { return line_; }
    std::size_t col() const { return col_; }

private:
    const std::string& text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
    std::size_t col_ = 0;
};

bool ident_start(char c, Lang lang) {
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return true;
    return lang == Lang::java && c == '$';
}

bool ident_part(char c, Lang lang) {
    return ident_start(c, lang) || std::isdigit(static_cast<unsigned char>(c));
}

std::string read_number(Cursor& cur) {
    std::string out;
    bool seen_exp = false;
    while (!cur.done()) {
        const char c = cur.peek();
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_') {
            seen_exp = (c == 'e' || c == 'E') && out.find('x') == std::string::npos &&
                       out.find('X') == std::string::npos;
            out.push_back(cur.advance());
            continue;
        }
        if ((c == '+' || c == '-') && seen_exp &&
            (out.back() == 'e' || out.back() == 'E')) {
            out.push_back(cur.advance());
            continue;
        }
        break;
    }
    return out;
}

/// Reads a quoted literal starting at the opening quote; returns the inner
/// text. Multi-line only when `triple` quoting is active.
std::string read_quoted(Cursor& cur, Lang lang) {
    const std::size_t start_line = cur.line();
    const char quote = cur.peek();
    bool triple = false;
    if (lang == Lang::python && cur.peek(1) == quote && cur.peek(2) == quote) {
        triple = true;
        cur.advance_by(3);
    } else {
        cur.advance();
    }
    std::string body;
    while (true) {
        if (cur.done()) {
            throw DataError("unterminated string starting at line " +
                            std::to_string(start_line));
        }
        const char c = cur.peek();
        if (c == '\\') {
            body.push_back(cur.advance());
            if (!cur.done()) body.push_back(cur.advance());
            continue;
        }
        if (!triple && c == '\n') {
            throw DataError("unterminated string starting at line " +
                            std::to_string(start_line));
        }
        if (c == quote) {
            if (!triple) {
                cur.advance();
                return body;
            }
            if (cur.peek(1) == quote && cur.peek(2) == quote) {
                cur.advance_by(3);
                return body;
            }
        }
        body.push_back(cur.advance());
    }
}

const std::array<std::string_view, 25> java_operators = {
    ">>>=", ">>=", "<<=", ">>>", "->", "::", "==", "!=", "<=", ">=", "&&", "||", "++",
    "--",   "+=",  "-=",  "*=",  "/=", "%=", "&=", "|=", "^=", "<<", ">>", "..."};

const std::array<std::string_view, 23> python_operators = {
    "**=", "//=", "<<=", ">>=", "->", ":=", "==", "!=", "<=", ">=", "@=", "**",
    "//",  "<<",  ">>",  "+=",  "-=", "*=", "/=", "%=", "&=", "|=", "^="};

bool is_python_string_prefix(const std::string& word) {
    if (word.empty() || word.size() > 2) return false;
    return std::all_of(word.begin(), word.end(), [](char c) {
        const char l = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return l == 'r' || l == 'b' || l == 'f' || l == 'u';
    });
}

std::vector<Token> lex_java(const std::string& text) {
    std::vector<Token> tokens;
    Cursor cur(text);
    while (!cur.done()) {
        const char c = cur.peek();
        const std::size_t line = cur.line();
        const std::size_t col = cur.col();
        if (std::isspace(static_cast<unsigned char>(c))) {
            cur.advance();
            continue;
        }
        if (cur.starts_with("//")) {
            cur.advance_by(2);
            std::string body;
            while (!cur.done() && cur.peek() != '\n') body.push_back(cur.advance());
            tokens.push_back({Token::Kind::comment, "", body, line, col});
            continue;
        }
        if (cur.starts_with("/*")) {
            cur.advance_by(2);
            std::string body;
            while (!cur.starts_with("*/")) {
                if (cur.done()) {
                    throw DataError("unterminated block comment starting at line " +
                                    std::to_string(line));
                }
                body.push_back(cur.advance());
            }
            cur.advance_by(2);
            tokens.push_back({Token::Kind::comment, "", body, line, col});
            continue;
        }
        if (c == '"' || c == '\'') {
            const std::string body = read_quoted(cur, Lang::java);
            tokens.push_back({Token::Kind::string, str_sentinel, body, line, col});
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && std::isdigit(static_cast<unsigned char>(cur.peek(1))))) {
            const std::string body = read_number(cur);
            tokens.push_back({Token::Kind::number, num_sentinel, body, line, col});
            continue;
        }
        if (ident_start(c, Lang::java)) {
            std::string word;
            while (!cur.done() && ident_part(cur.peek(), Lang::java)) {
                word.push_back(cur.advance());
            }
            tokens.push_back({Token::Kind::word, word, "", line, col});
            continue;
        }
        bool matched = false;
        for (const auto op : java_operators) {
            if (cur.starts_with(op)) {
                cur.advance_by(op.size());
                tokens.push_back({Token::Kind::punct, std::string(op), "", line, col});
                matched = true;
                break;
            }
        }
        if (!matched) {
            cur.advance();
            tokens.push_back({Token::Kind::punct, std::string(1, c), "", line, col});
        }
    }
    return tokens;
}

std::vector<Token> lex_python(const std::string& text) {
    std::vector<Token> tokens;
    Cursor cur(text);
    while (!cur.done()) {
        const char c = cur.peek();
        const std::size_t line = cur.line();
        const std::size_t col = cur.col();
        if (std::isspace(static_cast<unsigned char>(c))) {
            cur.advance();
            continue;
        }
        if (c == '#') {
            std::string body;
            cur.advance();
            while (!cur.done() && cur.peek() != '\n') body.push_back(cur.advance());
            tokens.push_back({Token::Kind::comment, "", body, line, col});
            continue;
        }
        if (c == '"' || c == '\'') {
            const std::string body = read_quoted(cur, Lang::python);
            tokens.push_back({Token::Kind::string, str_sentinel, body, line, col});
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && std::isdigit(static_cast<unsigned char>(cur.peek(1))))) {
            const std::string body = read_number(cur);
            tokens.push_back({Token::Kind::number, num_sentinel, body, line, col});
            continue;
        }
        if (ident_start(c, Lang::python)) {
            std::string word;
            while (!cur.done() && ident_part(cur.peek(), Lang::python)) {
                word.push_back(cur.advance());
            }
            if (is_python_string_prefix(word) && (cur.peek() == '"' || cur.peek() == '\'')) {
                const std::string body = read_quoted(cur, Lang::python);
                tokens.push_back({Token::Kind::string, str_sentinel, body, line, col});
            } else {
                tokens.push_back({Token::Kind::word, word, "", line, col});
            }
            continue;
        }
        bool matched = false;
        for (const auto op : python_operators) {
            if (cur.starts_with(op)) {
                cur.advance_by(op.size());
                tokens.push_back({Token::Kind::punct, std::string(op), "", line, col});
                matched = true;
                break;
            }
        }
        if (!matched) {
            cur.advance();
            tokens.push_back({Token::Kind::punct, std::string(1, c), "", line, col});
        }
    }

    // a string statement alone on its line is a docstring
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].kind != Token::Kind::string) continue;
        const bool first_on_line = i == 0 || tokens[i - 1].line < tokens[i].line;
        const bool last_on_line =
            i + 1 == tokens.size() || tokens[i + 1].line > tokens[i].line;
        if (first_on_line && last_on_line) {
            tokens[i].kind = Token::Kind::docstring;
        }
    }
    return tokens;
}

} // namespace

std::vector<Token> lex_tokens(const std::string& text, Lang lang) {
    return lang == Lang::java ? lex_java(text) : lex_python(text);
}

std::vector<std::string> lex_source(const std::string& text, Lang lang) {
    std::vector<std::string> out;
    for (const auto& token : lex_tokens(text, lang)) {
        if (token.kind == Token::Kind::comment || token.kind == Token::Kind::docstring) {
            continue;
        }
        out.push_back(token.text);
    }
    return out;
}

} // namespace csfc
