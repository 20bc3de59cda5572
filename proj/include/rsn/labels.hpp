#pragma once

#include <map>
#include <string>
#include <vector>

namespace rsn {

// Hierarchical RSN label: uppercase alphanumeric tokens joined by '-',
// functional name first ("DMN-PCC-MID").
struct RsnLabel {
  std::string raw;
  std::vector<std::string> tokens;
};

RsnLabel parse_label(const std::string& raw);

// Ordered unique labels with stable indices. NOISE and UNKNOWN are always
// present.
class LabelSet {
public:
  LabelSet();
  explicit LabelSet(const std::vector<std::string>& labels);

  int add(const std::string& label);      // returns the (possibly existing) index
  int index_of(const std::string& label) const; // -1 when absent
  const std::string& name(int index) const;
  int size() const { return int(ordered_.size()); }
  const std::vector<std::string>& ordered() const { return ordered_; }

  void save(const std::string& path) const;
  static LabelSet load(const std::string& path);

private:
  std::vector<std::string> ordered_;
  std::map<std::string, int> index_;
};

// Component label table: one "index<TAB>LABEL" row per component.
std::vector<std::string> read_component_labels(const std::string& path);
void write_component_labels(const std::vector<std::string>& labels,
                            const std::string& path);

} // namespace rsn
