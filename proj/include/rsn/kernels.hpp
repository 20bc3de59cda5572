#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace rsn::kernels {

// Every kernel comes in a serial reference version and an OpenMP version.
// The parallel variants split work over independent outputs (or fixed-size
// blocks for reductions), so results are bitwise identical to the serial
// path for any thread count. Tests assert that equality.
enum class Exec { Serial, Parallel };

// Gaussian taps at integer offsets, truncated at 4*sigma and normalized to
// sum 1. sigma <= 0 returns the identity kernel {1}.
std::vector<double> gaussian_taps(double sigma_vox);

// Separable convolution of one 3D frame along `axis` (0=x,1=y,2=z) with an
// odd-length tap vector. Near the border the kernel is renormalized over
// the in-bounds taps.
void convolve_axis(const double* in, double* out, int nx, int ny, int nz,
                   int axis, const std::vector<double>& taps, Exec exec);

// Per-voxel temporal detrend: out_row = row - trend*row + mean(row).
// `series` is nvox rows by nt columns, row-major. `trend` is an nt*nt
// row-major linear smoothing operator.
void detrend_rows(const double* series, double* out, std::int64_t nvox, int nt,
                  const double* trend, Exec exec);

// Resample `src` onto a (tx,ty,tz) grid: for each target voxel apply the
// homogeneous map tgt_to_src (target voxel coords -> source voxel coords)
// and interpolate trilinearly; voxels mapping outside the source field are 0.
void warp_trilinear(const double* src, int sx, int sy, int sz,
                    const Eigen::Matrix4d& tgt_to_src, double* out, int tx,
                    int ty, int tz, Exec exec);

double sample_trilinear(const double* src, int sx, int sy, int sz, double x,
                        double y, double z, bool* in_field = nullptr);

// Normalized cross-correlation between `fixed` and `moving` warped through
// fixed_to_moving (fixed voxel coords -> moving voxel coords). Only fixed
// voxels whose mapped sample is fully inside the moving field contribute.
// Partial sums are per fixed z-slice and combined in slice order, so the
// value does not depend on the thread count. Returns NaN when fewer than
// two voxels overlap or either patch is constant.
double ncc_warped(const double* fixed, int fx, int fy, int fz,
                  const double* moving, int mx, int my, int mz,
                  const Eigen::Matrix4d& fixed_to_moving, Exec exec);

// 2x box downsample of a 3D frame (mean over each 2x2x2 cell, truncating
// odd borders); used by the multi-resolution registration.
void downsample2(const double* in, int nx, int ny, int nz, std::vector<double>& out,
                 int& ox, int& oy, int& oz);

} // namespace rsn::kernels
