#pragma once

#include <cctype>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "expertforge/common.hpp"

// Minimal TOML reader covering the subset the config files use: bare and
// dotted keys, basic/literal strings, integers, floats, booleans, arrays
// (including multiline), [table] and [[array-of-table]] headers, and #
// comments. Parses into nlohmann::json; errors carry file:line positions.

namespace expertforge::toml {

namespace detail {

class Parser {
 public:
  Parser(std::string text, std::string origin)
      : text_(std::move(text)), origin_(std::move(origin)) {}

  nlohmann::json parse() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* current = &root;
    skip_trivia(true);
    while (!eof()) {
      if (peek() == '[') {
        current = parse_table_header(root);
      } else {
        parse_keyvalue(*current);
      }
      skip_trivia(true);
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(origin_ + ":" + std::to_string(line_) + ": " + msg);
  }

  bool eof() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }
  char get() {
    char c = text_[pos_++];
    if (c == '\n') ++line_;
    return c;
  }

  void skip_trivia(bool cross_lines) {
    while (!eof()) {
      char c = peek();
      if (c == ' ' || c == '\t' || c == '\r') {
        get();
      } else if (c == '#') {
        while (!eof() && peek() != '\n') get();
      } else if (c == '\n' && cross_lines) {
        get();
      } else {
        break;
      }
    }
  }

  void expect_line_end() {
    skip_trivia(false);
    if (eof()) return;
    if (peek() != '\n') fail("expected end of line");
    get();
  }

  std::string parse_key() {
    skip_trivia(false);
    if (eof()) fail("expected a key");
    if (peek() == '"' || peek() == '\'') return parse_string();
    std::string key;
    while (!eof()) {
      char c = peek();
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') {
        key.push_back(get());
      } else {
        break;
      }
    }
    if (key.empty()) fail("expected a key");
    return key;
  }

  std::vector<std::string> parse_key_path() {
    std::vector<std::string> path{parse_key()};
    skip_trivia(false);
    while (!eof() && peek() == '.') {
      get();
      path.push_back(parse_key());
      skip_trivia(false);
    }
    return path;
  }

  nlohmann::json* parse_table_header(nlohmann::json& root) {
    get();  // '['
    bool array_table = !eof() && peek() == '[';
    if (array_table) get();
    auto path = parse_key_path();
    skip_trivia(false);
    if (eof() || get() != ']') fail("unterminated table header");
    if (array_table) {
      if (eof() || get() != ']') fail("expected ']]' closing array-of-tables header");
    }
    expect_line_end();

    nlohmann::json* node = &root;
    for (std::size_t i = 0; i < path.size(); ++i) {
      const bool last = i + 1 == path.size();
      nlohmann::json& slot = (*node)[path[i]];
      if (last && array_table) {
        if (slot.is_null()) slot = nlohmann::json::array();
        if (!slot.is_array()) fail("'" + path[i] + "' is not an array of tables");
        slot.push_back(nlohmann::json::object());
        node = &slot.back();
      } else {
        if (slot.is_null()) slot = nlohmann::json::object();
        if (slot.is_array()) {
          if (slot.empty()) fail("'" + path[i] + "' is an empty array of tables");
          node = &slot.back();
        } else if (slot.is_object()) {
          node = &slot;
        } else {
          fail("'" + path[i] + "' is already a value");
        }
      }
    }
    return node;
  }

  void parse_keyvalue(nlohmann::json& table) {
    auto path = parse_key_path();
    skip_trivia(false);
    if (eof() || get() != '=') fail("expected '=' after key");
    nlohmann::json value = parse_value();
    expect_line_end();
    nlohmann::json* node = &table;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      nlohmann::json& slot = (*node)[path[i]];
      if (slot.is_null()) slot = nlohmann::json::object();
      if (!slot.is_object()) fail("'" + path[i] + "' is already a value");
      node = &slot;
    }
    if (node->contains(path.back())) fail("duplicate key '" + path.back() + "'");
    (*node)[path.back()] = std::move(value);
  }

  nlohmann::json parse_value() {
    skip_trivia(false);
    if (eof()) fail("expected a value");
    char c = peek();
    if (c == '"' || c == '\'') return parse_string();
    if (c == '[') return parse_array();
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::string word;
      while (!eof() && std::isalpha(static_cast<unsigned char>(peek())))
        word.push_back(get());
      if (word == "true") return true;
      if (word == "false") return false;
      fail("unexpected token '" + word + "'");
    }
    return parse_number();
  }

  std::string parse_string() {
    char quote = get();
    std::string out;
    while (true) {
      if (eof()) fail("unterminated string");
      char c = get();
      if (c == quote) break;
      if (c == '\n') fail("newline inside string");
      if (quote == '"' && c == '\\') {
        if (eof()) fail("dangling escape");
        char esc = get();
        switch (esc) {
          case 'n': out.push_back('\n'); break;
          case 't': out.push_back('\t'); break;
          case 'r': out.push_back('\r'); break;
          case '"': out.push_back('"'); break;
          case '\\': out.push_back('\\'); break;
          default: fail(std::string("unsupported escape '\\") + esc + "'");
        }
      } else {
        out.push_back(c);
      }
    }
    return out;
  }

  nlohmann::json parse_array() {
    get();  // '['
    nlohmann::json arr = nlohmann::json::array();
    skip_trivia(true);
    while (!eof() && peek() != ']') {
      arr.push_back(parse_value());
      skip_trivia(true);
      if (!eof() && peek() == ',') {
        get();
        skip_trivia(true);
      }
    }
    if (eof()) fail("unterminated array");
    get();  // ']'
    return arr;
  }

  nlohmann::json parse_number() {
    std::string tok;
    while (!eof()) {
      char c = peek();
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '+' || c == '-' ||
          c == '.' || c == 'e' || c == 'E' || c == '_') {
        if (c != '_') tok.push_back(c);
        get();
      } else {
        break;
      }
    }
    if (tok.empty()) fail("expected a value");
    const bool is_float = tok.find_first_of(".eE") != std::string::npos;
    try {
      std::size_t used = 0;
      if (is_float) {
        double v = std::stod(tok, &used);
        if (used != tok.size()) fail("malformed number '" + tok + "'");
        return v;
      }
      long long v = std::stoll(tok, &used);
      if (used != tok.size()) fail("malformed number '" + tok + "'");
      return v;
    } catch (const std::exception&) {
      fail("malformed number '" + tok + "'");
    }
  }

  std::string text_;
  std::string origin_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
};

}  // namespace detail

inline nlohmann::json parse(const std::string& text, const std::string& origin = "<toml>") {
  return detail::Parser(text, origin).parse();
}

inline nlohmann::json parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("missing config file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return detail::Parser(ss.str(), path).parse();
}

}  // namespace expertforge::toml
