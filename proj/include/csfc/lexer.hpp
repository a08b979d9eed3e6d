#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "csfc/errors.hpp"

namespace csfc {

enum class Lang { java, python };

Lang parse_lang(std::string_view name);
const char* lang_name(Lang lang);

/// Literal sentinels emitted in place of string/number contents.
inline constexpr const char* str_sentinel = "<str>";
inline constexpr const char* num_sentinel = "<num>";

struct Token {
    enum class Kind {
        word,      // identifier or keyword
        number,    // numeric literal (emitted as <num>)
        string,    // string/char literal (emitted as <str>)
        punct,     // operator or delimiter
        comment,   // full comment body; never part of code output
        docstring, // python string statement; never part of code output
    };
    Kind kind = Kind::word;
    std::string text; // emission form: identifier, operator, or sentinel
    std::string raw;  // original content for comments/strings/docstrings
    std::size_t line = 1; // 1-based
    std::size_t col = 0;  // 0-based column of the first character
};

/// Full-fidelity token stream, comments and docstrings included.
std::vector<Token> lex_tokens(const std::string& text, Lang lang);

/// Code tokens only: comments/docstrings dropped, literals collapsed to
/// sentinels. Unterminated strings or block comments raise a lex error
/// naming the line.
std::vector<std::string> lex_source(const std::string& text, Lang lang);

/// Splits at underscores, lower/digit-to-upper boundaries, and before the
/// last upper of an upper run followed by a lower (HTTPServer -> http,
/// server); lowercases; drops anything non-alphanumeric.
std::vector<std::string> split_identifier(std::string_view token);

} // namespace csfc
