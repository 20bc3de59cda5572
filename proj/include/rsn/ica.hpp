#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsn/volume.hpp"

namespace rsn {

// In-mask voxels in x-fastest scan order; voxel_index_map[flat voxel] is the
// column index in the data matrix, or -1 outside the mask.
struct BrainMask {
  std::array<int, 3> dim{0, 0, 0};
  std::vector<std::uint8_t> in_mask;       // one per grid voxel
  std::vector<std::int64_t> voxel_index_map;
  std::vector<std::int64_t> mask_to_voxel; // column -> flat voxel index

  std::int64_t count() const { return std::int64_t(mask_to_voxel.size()); }
};

// Concatenated-timepoints by in-mask-voxels matrix, stacked subject after
// subject, each voxel temporally demeaned and variance normalized.
struct DataMatrix {
  Eigen::MatrixXd values;            // (sum_s T_s) x V
  std::vector<int> row_subject;      // row -> subject index
  std::vector<int> subject_rows;     // subject -> number of rows
};

struct IcaResult {
  int model_order = 0;
  Eigen::MatrixXd spatial_maps; // K x V, z-scored per map
  Eigen::MatrixXd mixing;       // (sum T_s) x K
  Eigen::MatrixXd unmixing;     // K x K orthonormal W
  std::uint64_t seed = 0;
  int iterations_used = 0;
  bool converged = false;
};

enum class IcaContrast { Tanh, Pow3 };

BrainMask build_mask(const std::vector<Volume4D>& vols, double threshold_fraction);
BrainMask mask_from_volume(const Volume3D& vol, double level = 0.5);
Volume3D mask_to_volume(const BrainMask& mask, const NiftiHeader& grid);

DataMatrix concat_normalize(const std::vector<Volume4D>& vols, const BrainMask& mask);

struct PcaResult {
  Eigen::MatrixXd reduced;      // K x V, whitened (unit row variance)
  Eigen::MatrixXd basis;        // rows x K, X ~ basis * reduced
  Eigen::VectorXd eigenvalues;  // K, descending
};

// Top-K eigendecomposition of the rows x rows covariance (X X^T / V).
PcaResult pca_reduce(const Eigen::MatrixXd& X, int K);

IcaResult fastica(const Eigen::MatrixXd& whitened, const PcaResult& pca,
                  std::uint64_t seed, double tol = 1e-4, int max_iter = 200,
                  IcaContrast contrast = IcaContrast::Tanh);

Eigen::VectorXd zscore_map(const Eigen::VectorXd& map);

// Serialization: K spatial maps as a 4D NIfTI (K frames, zeros off-mask),
// the mixing matrix as a plain-text table, and a JSON metadata file.
void write_ica_result(const IcaResult& r, const BrainMask& mask,
                      const NiftiHeader& grid, const std::string& maps_path,
                      const std::string& mixing_path, const std::string& meta_path);

Eigen::MatrixXd read_text_matrix(const std::string& path);
void write_text_matrix(const Eigen::MatrixXd& m, const std::string& path);

} // namespace rsn
