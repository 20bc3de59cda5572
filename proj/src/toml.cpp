#include "rsn/toml.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "rsn/error.hpp"

namespace rsn {

namespace {

struct Cursor {
  const std::string& s;
  std::size_t pos = 0;
  int line = 1;

  bool done() const { return pos >= s.size(); }
  char peek() const { return s[pos]; }
  char take() { return s[pos++]; }
  void skip_ws() {
    while (!done() && (peek() == ' ' || peek() == '\t')) ++pos;
  }
};

[[noreturn]] void parse_fail(const Cursor& c, const std::string& what) {
  fail("ConfigParseError", what + " at line " + std::to_string(c.line));
}

std::string parse_bare_key(Cursor& c) {
  std::string key;
  while (!c.done()) {
    const char ch = c.peek();
    if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-') {
      key.push_back(c.take());
    } else {
      break;
    }
  }
  if (key.empty()) parse_fail(c, "expected a key");
  return key;
}

std::string parse_quoted_string(Cursor& c) {
  if (c.take() != '"') parse_fail(c, "expected opening quote");
  std::string out;
  while (true) {
    if (c.done()) parse_fail(c, "unterminated string");
    char ch = c.take();
    if (ch == '"') break;
    if (ch == '\n') parse_fail(c, "newline inside string");
    if (ch == '\\') {
      if (c.done()) parse_fail(c, "dangling escape");
      const char esc = c.take();
      switch (esc) {
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        default: parse_fail(c, std::string("unsupported escape \\") + esc);
      }
    } else {
      out.push_back(ch);
    }
  }
  return out;
}

nlohmann::json parse_scalar(Cursor& c) {
  c.skip_ws();
  if (c.done()) parse_fail(c, "expected a value");
  const char ch = c.peek();
  if (ch == '"') return parse_quoted_string(c);
  std::string tok;
  while (!c.done()) {
    const char t = c.peek();
    if (t == ',' || t == ']' || t == '#' || t == '\n' || t == ' ' || t == '\t') break;
    tok.push_back(c.take());
  }
  if (tok == "true") return true;
  if (tok == "false") return false;
  if (tok.empty()) parse_fail(c, "expected a value");
  // integer or float
  bool is_float = false;
  for (char t : tok)
    if (t == '.' || t == 'e' || t == 'E') is_float = true;
  try {
    std::size_t used = 0;
    if (is_float) {
      const double v = std::stod(tok, &used);
      if (used != tok.size()) parse_fail(c, "bad number \"" + tok + "\"");
      return v;
    }
    const long long v = std::stoll(tok, &used);
    if (used != tok.size()) parse_fail(c, "bad number \"" + tok + "\"");
    return v;
  } catch (const std::exception&) {
    parse_fail(c, "bad value \"" + tok + "\"");
  }
}

nlohmann::json parse_value(Cursor& c) {
  c.skip_ws();
  if (c.done()) parse_fail(c, "expected a value");
  if (c.peek() != '[') return parse_scalar(c);
  c.take(); // '['
  nlohmann::json arr = nlohmann::json::array();
  c.skip_ws();
  if (!c.done() && c.peek() == ']') {
    c.take();
    return arr;
  }
  while (true) {
    arr.push_back(parse_scalar(c));
    c.skip_ws();
    if (c.done()) parse_fail(c, "unterminated array");
    const char t = c.take();
    if (t == ']') break;
    if (t != ',') parse_fail(c, "expected ',' or ']' in array");
    c.skip_ws();
  }
  return arr;
}

void skip_to_eol(Cursor& c, bool allow_content) {
  c.skip_ws();
  if (!c.done() && c.peek() == '#') {
    while (!c.done() && c.peek() != '\n') c.take();
  }
  if (!c.done() && c.peek() == '\n') {
    c.take();
    ++c.line;
    return;
  }
  if (c.done()) return;
  if (!allow_content) parse_fail(c, "unexpected trailing content");
}

} // namespace

nlohmann::json toml_parse(const std::string& text) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* table = &root;
  Cursor c{text};
  while (!c.done()) {
    c.skip_ws();
    if (c.done()) break;
    const char ch = c.peek();
    if (ch == '\n' || ch == '#') {
      skip_to_eol(c, false);
      continue;
    }
    if (ch == '[') {
      c.take();
      table = &root;
      while (true) {
        const std::string part = parse_bare_key(c);
        if (table->contains(part) && !(*table)[part].is_object())
          parse_fail(c, "table name collides with key \"" + part + "\"");
        table = &(*table)[part];
        if (table->is_null()) *table = nlohmann::json::object();
        if (c.done()) parse_fail(c, "unterminated table header");
        const char t = c.take();
        if (t == ']') break;
        if (t != '.') parse_fail(c, "expected '.' or ']' in table header");
      }
      skip_to_eol(c, false);
      continue;
    }
    const std::string key = parse_bare_key(c);
    c.skip_ws();
    if (c.done() || c.take() != '=') parse_fail(c, "expected '=' after key \"" + key + "\"");
    nlohmann::json value = parse_value(c);
    if (table->contains(key)) parse_fail(c, "duplicate key \"" + key + "\"");
    (*table)[key] = std::move(value);
    skip_to_eol(c, false);
  }
  return root;
}

nlohmann::json toml_parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("IoError", "cannot open config: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return toml_parse(ss.str());
}

} // namespace rsn
