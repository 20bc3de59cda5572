#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsn/volume.hpp"

namespace rsn {

struct Blob {
  std::array<double, 3> center_vox{0, 0, 0};
  double radius_vox = 4.0; // Gaussian sigma; support truncated at 3*radius
};

struct SynthSpec {
  int n_subjects = 12;
  std::array<int, 3> grid{40, 48, 40};
  int n_timepoints = 60;
  double tr_s = 2.0;
  int n_networks = 6;
  std::vector<Blob> blobs;        // auto-placed when empty
  double amplitude_jitter = 0.1;  // per-subject network amplitude sigma
  double shift_jitter_vox = 0.5;  // per-subject blob center shift sigma
  double noise_sigma = 0.05;      // relative to signal_amplitude
  double signal_amplitude = 1.0;
  double baseline = 100.0;        // head ellipsoid intensity, constant in time
  std::array<double, 3> voxel_mm{3.0, 3.0, 3.0};
  std::uint64_t seed = 0;
};

struct SubjectTruth {
  std::vector<double> amplitudes;                 // G
  std::vector<std::array<double, 3>> shifts_vox;  // G
  Eigen::MatrixXd timecourses;                    // T x G, zero mean, unit variance
};

struct GroundTruth {
  SynthSpec spec;
  std::vector<Blob> blobs;                 // resolved canonical placement
  std::vector<std::string> labels;         // per network, SYNTH-NET-XX
  Eigen::MatrixXd source_maps;             // G x (full grid voxels)
  std::vector<std::uint8_t> foreground;    // head voxels (1 = inside)
  std::vector<SubjectTruth> subjects;
};

struct SynthOutput {
  std::vector<std::string> subject_files; // one 4D NIfTI per subject
  std::string truth_json;
  std::string truth_maps_file;      // G-frame NIfTI of canonical maps
  std::string foreground_file;
  GroundTruth truth;
};

// Y_s = baseline*head + sum_g a_sg * tc_sg(t) * S_sg(v) + noise. Per-subject
// RNG streams are derived from (seed, subject), so output is independent of
// generation order. Canonical source maps are checked for pairwise
// |corr| < 0.3 at generation.
SynthOutput synth_generate(const SynthSpec& spec, const std::string& out_dir);

GroundTruth load_ground_truth(const std::string& json_path);

// In-memory generation of one subject (exposed for tests).
Volume4D synth_subject_volume(const GroundTruth& truth, int subject);

struct ComponentMatch {
  int truth_index = 0;
  int estimated_index = 0;
  double correlation = 0.0; // signed Pearson
};

// Greedy maximum-|correlation| assignment without replacement; requires at
// least as many estimated rows as truth rows.
std::vector<ComponentMatch> match_components(const Eigen::MatrixXd& estimated,
                                             const Eigen::MatrixXd& truth);

// Component labels from a matching: matched nets with |corr| >= min_abs_corr
// take the network label, weak matches become UNKNOWN, the rest NOISE.
std::vector<std::string> auto_label(const std::vector<ComponentMatch>& matches,
                                    const std::vector<std::string>& network_labels,
                                    int n_components, double min_abs_corr = 0.5);

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

} // namespace rsn
