#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsn/kernels.hpp"
#include "rsn/volume.hpp"

namespace rsn {

struct RigidTransform {
  std::array<double, 3> rotations_rad{0, 0, 0};
  std::array<double, 3> translations_mm{0, 0, 0};

  // World-space map rotating about `center_mm` (Rz*Ry*Rx) then translating.
  Eigen::Matrix4d to_matrix(const Eigen::Vector3d& center_mm) const;
};

struct AffineTransform {
  Eigen::Matrix4d matrix = Eigen::Matrix4d::Identity(); // world mm -> world mm
};

struct SmoothingSpec {
  double fwhm_mm = 7.0;
};

struct HighpassSpec {
  double cutoff_s = 100.0;
  double tr_s = 2.0;
};

// FWHM = 2*sqrt(2 ln 2) * sigma.
double sigma_vox_from_fwhm(double fwhm_mm, double voxel_mm);

// Separable Gaussian smoothing of every frame; fwhm 0 is the identity.
Volume4D gaussian_smooth(const Volume4D& vol, const SmoothingSpec& spec,
                         kernels::Exec exec = kernels::Exec::Parallel);

// Gaussian-weighted running-line highpass with the voxel mean re-added.
// sigma_t = cutoff_s/2 seconds, converted to frames. Throws CutoffTooLow
// when cutoff_s <= 2*tr_s.
Volume4D highpass_temporal(const Volume4D& vol, const HighpassSpec& spec,
                           kernels::Exec exec = kernels::Exec::Parallel);

// The nt x nt running-line smoothing operator used by highpass_temporal;
// exposed so tests can check it directly.
Eigen::MatrixXd highpass_trend_matrix(int nt, double sigma_frames);

struct MotionResult {
  Volume4D corrected;
  std::vector<RigidTransform> parameters; // one per frame
};

// Rigid registration of every frame to frames[ref_index] by maximizing
// normalized cross-correlation with 2-level multi-resolution coordinate
// descent. The reported transform maps reference voxel/world coordinates
// into the frame (it is the map used to resample the frame).
MotionResult motion_correct(const Volume4D& vol, int ref_index,
                            kernels::Exec exec = kernels::Exec::Parallel);

// Affine registration: returns the transform X (moving world -> fixed world)
// such that resample_to_grid(moving, X, fixed.header) best matches fixed.
// dof 6 = rigid, dof 12 = rigid + scale + shear.
AffineTransform register_affine(const Volume3D& moving, const Volume3D& fixed,
                                int dof, kernels::Exec exec = kernels::Exec::Parallel);

// Trilinear resampling through (target voxel->world) * xfm^-1 * (world ->
// moving voxel); zero outside the source field of view.
Volume4D resample_to_grid(const Volume4D& vol, const AffineTransform& xfm,
                          const NiftiHeader& target,
                          kernels::Exec exec = kernels::Exec::Parallel);

// Plain-text table: one row per frame, "rx ry rz tx ty tz" (rad, mm).
void write_motion_parameters(const std::vector<RigidTransform>& params,
                             const std::string& path);
std::vector<RigidTransform> read_motion_parameters(const std::string& path);

} // namespace rsn
