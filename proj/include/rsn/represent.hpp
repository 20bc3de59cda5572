#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsn/dualreg.hpp"
#include "rsn/labels.hpp"
#include "rsn/volume.hpp"

namespace rsn {

// Three orthogonal sum-projections of a 3D map packed into the R, G and B
// channels of one square 8-bit image. Projections are min-max scaled to
// 0..255 first, then center-padded, so a constant intensity shift of the
// volume leaves the image bytes unchanged.
struct Rgb2p5 {
  int side = 0;
  std::vector<std::uint8_t> r, g, b;             // side*side, row-major (row, col)
  std::array<std::array<double, 2>, 3> scale_record{}; // per channel (min, max)

  std::uint8_t& pixel(std::vector<std::uint8_t>& ch, int row, int col) {
    return ch[std::size_t(row) * side + col];
  }
  std::uint8_t pixel(const std::vector<std::uint8_t>& ch, int row, int col) const {
    return ch[std::size_t(row) * side + col];
  }
};

// Axial (sum over z, nx x ny) -> R, sagittal (sum over x, ny x nz) -> G,
// coronal (sum over y, nx x nz) -> B; each projection indexed (first axis
// = image row, second axis = image column) and centered in the square.
Rgb2p5 project_2p5d(const Volume3D& map);

// The raw projection planes before scaling/padding (exposed for oracles).
Eigen::MatrixXd projection_plane(const Volume3D& map, int summed_axis);

struct SplitSpec {
  std::array<double, 3> ratios{0.70, 0.10, 0.20}; // train, val, test
  std::uint64_t seed = 0;
};

struct SubjectSplit {
  std::vector<std::string> train, val, test;
};

// Seeded shuffle, then floor(0.7 N) / floor(0.1 N) / remainder.
SubjectSplit split_subjects(std::vector<std::string> subject_ids, const SplitSpec& spec);

enum class FeatureMode { Flat, Rgb };

struct Example {
  std::string subject_id;
  int component_index = 0;
  int class_index = 0;
};

// Labeled examples, one per (subject, component). In flat mode features
// are the per-example z-scored whole-grid flattening of each map (columns
// of `features`); in rgb mode `images` holds one projection per example.
struct Dataset {
  FeatureMode mode = FeatureMode::Flat;
  Eigen::MatrixXd features; // D x N (flat mode)
  std::vector<Rgb2p5> images; // N (rgb mode)
  std::vector<Example> examples;
  LabelSet labels;
  std::array<int, 3> grid_dim{0, 0, 0};

  int count() const { return int(examples.size()); }
  int feature_dim() const { return int(features.rows()); }
  std::vector<int> indices_for_subjects(const std::vector<std::string>& ids) const;
};

// component_labels[k] names component k; every subject must share K and grid.
Dataset build_dataset(const std::vector<SubjectComponents>& subjects,
                      const std::vector<std::string>& component_labels,
                      const BrainMask& mask, FeatureMode mode);

void export_png(const Rgb2p5& img, const std::string& path);
Rgb2p5 import_png(const std::string& path); // test/tooling helper

// dataset.bin: "RSND0001", int64 D, int64 N, then column-major float64
// features; metadata lives in a JSON index next to it.
void save_dataset(const Dataset& ds, const std::string& bin_path,
                  const std::string& index_path);
Dataset load_dataset(const std::string& bin_path, const std::string& index_path);

void save_split(const SubjectSplit& split, const SplitSpec& spec, const std::string& path);
SubjectSplit load_split(const std::string& path);

} // namespace rsn
