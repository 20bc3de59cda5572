#include "rsn/labels.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "rsn/error.hpp"

namespace rsn {

RsnLabel parse_label(const std::string& raw) {
  if (raw.empty()) fail("EmptyLabel", "label string is empty");
  std::string upper;
  upper.reserve(raw.size());
  for (char c : raw) upper.push_back(char(std::toupper(static_cast<unsigned char>(c))));

  RsnLabel label;
  label.raw = upper;
  std::string token;
  auto flush = [&]() {
    if (token.empty()) fail("EmptyToken", "empty token in label \"" + raw + "\"");
    label.tokens.push_back(token);
    token.clear();
  };
  for (char c : upper) {
    if (c == '-') {
      flush();
    } else if (std::isalnum(static_cast<unsigned char>(c))) {
      token.push_back(c);
    } else {
      fail("InvalidLabelCharacter",
           std::string("label \"") + raw + "\" contains non-alphanumeric character '" + c + "'");
    }
  }
  flush();
  return label;
}

LabelSet::LabelSet() {
  add("NOISE");
  add("UNKNOWN");
}

LabelSet::LabelSet(const std::vector<std::string>& labels) : LabelSet() {
  for (const auto& l : labels) add(l);
}

int LabelSet::add(const std::string& label) {
  const RsnLabel parsed = parse_label(label);
  auto it = index_.find(parsed.raw);
  if (it != index_.end()) return it->second;
  const int idx = int(ordered_.size());
  ordered_.push_back(parsed.raw);
  index_[parsed.raw] = idx;
  return idx;
}

int LabelSet::index_of(const std::string& label) const {
  auto it = index_.find(label);
  return it == index_.end() ? -1 : it->second;
}

const std::string& LabelSet::name(int index) const {
  if (index < 0 || index >= size()) fail("IndexOutOfRange", "label index out of range");
  return ordered_[std::size_t(index)];
}

void LabelSet::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) fail("IoError", "cannot open for write: " + path);
  for (int i = 0; i < size(); ++i) f << i << '\t' << ordered_[std::size_t(i)] << '\n';
  if (!f.good()) fail("IoError", "short write: " + path);
}

LabelSet LabelSet::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("IoError", "cannot open: " + path);
  LabelSet set;
  std::string line;
  int expected = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    int idx;
    std::string label;
    if (!(ss >> idx >> label)) fail("MalformedTable", "bad label row: " + line);
    if (idx != expected++) fail("MalformedTable", "label indices must be consecutive");
    const int got = set.add(label);
    if (got != idx) fail("MalformedTable", "duplicate label " + label);
  }
  return set;
}

std::vector<std::string> read_component_labels(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("IoError", "cannot open: " + path);
  std::map<int, std::string> rows;
  std::string line;
  int max_idx = -1;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    int idx;
    std::string label;
    if (!(ss >> idx >> label)) fail("MalformedTable", "bad component label row: " + line);
    if (idx < 0) fail("MalformedTable", "negative component index");
    if (rows.count(idx)) fail("MalformedTable", "duplicate component index " + std::to_string(idx));
    rows[idx] = parse_label(label).raw;
    max_idx = std::max(max_idx, idx);
  }
  std::vector<std::string> out;
  for (int i = 0; i <= max_idx; ++i) {
    auto it = rows.find(i);
    if (it == rows.end())
      fail("MissingLabel", "component " + std::to_string(i) + " has no label");
    out.push_back(it->second);
  }
  return out;
}

void write_component_labels(const std::vector<std::string>& labels,
                            const std::string& path) {
  std::ofstream f(path);
  if (!f) fail("IoError", "cannot open for write: " + path);
  for (std::size_t i = 0; i < labels.size(); ++i) f << i << '\t' << labels[i] << '\n';
  if (!f.good()) fail("IoError", "short write: " + path);
}

} // namespace rsn
