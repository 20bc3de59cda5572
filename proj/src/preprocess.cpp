#include "rsn/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rsn/error.hpp"

namespace rsn {

namespace {

constexpr double kFwhmToSigma = 2.3548200450309493; // 2*sqrt(2 ln 2)

Eigen::Matrix3d rotation_zyx(double rx, double ry, double rz) {
  Eigen::Matrix3d mx, my, mz;
  mx << 1, 0, 0, 0, std::cos(rx), -std::sin(rx), 0, std::sin(rx), std::cos(rx);
  my << std::cos(ry), 0, std::sin(ry), 0, 1, 0, -std::sin(ry), 0, std::cos(ry);
  mz << std::cos(rz), -std::sin(rz), 0, std::sin(rz), std::cos(rz), 0, 0, 0, 1;
  return mz * my * mx;
}

Eigen::Vector3d volume_center_world(const NiftiHeader& h) {
  Eigen::Vector4d c((h.nx() - 1) / 2.0, (h.ny() - 1) / 2.0, (h.nz() - 1) / 2.0, 1.0);
  return (h.affine * c).head<3>();
}

bool is_constant(const std::vector<double>& v) {
  for (double x : v)
    if (x != v[0]) return false;
  return true;
}

// 12-parameter vector: rx ry rz (rad), tx ty tz (mm), sx sy sz, kxy kxz kyz.
Eigen::Matrix4d params_to_world(const double* p, const Eigen::Vector3d& center) {
  const Eigen::Matrix3d r = rotation_zyx(p[0], p[1], p[2]);
  Eigen::Matrix3d shear = Eigen::Matrix3d::Identity();
  shear(0, 1) = p[9];
  shear(0, 2) = p[10];
  shear(1, 2) = p[11];
  Eigen::Matrix3d scale = Eigen::Matrix3d::Identity();
  scale(0, 0) = 1.0 + p[6];
  scale(1, 1) = 1.0 + p[7];
  scale(2, 2) = 1.0 + p[8];
  const Eigen::Matrix3d lin = r * shear * scale;
  const Eigen::Vector3d t(p[3], p[4], p[5]);
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) = lin;
  m.block<3, 1>(0, 3) = t + center - lin * center;
  return m;
}

struct Pyramid {
  std::vector<double> data;
  int nx, ny, nz;
  Eigen::Matrix4d affine; // voxel -> world
};

Pyramid full_level(const Volume3D& v) {
  return {v.data, v.header.nx(), v.header.ny(), v.header.nz(), v.header.affine};
}

Pyramid coarse_level(const Pyramid& fine) {
  Pyramid c;
  kernels::downsample2(fine.data.data(), fine.nx, fine.ny, fine.nz, c.data, c.nx, c.ny, c.nz);
  Eigen::Matrix4d scale = Eigen::Matrix4d::Identity();
  scale(0, 0) = scale(1, 1) = scale(2, 2) = 2.0;
  scale(0, 3) = scale(1, 3) = scale(2, 3) = 0.5;
  c.affine = fine.affine * scale;
  return c;
}

struct OptimizerSettings {
  int dof = 6;
  int max_sweeps = 200;
  double min_scale = 1.0 / 512.0;
};

// Derivative-free coordinate descent with step halving over the world-space
// map C(theta): fixed world -> moving world. Probes that do not improve the
// NCC are rejected, so the objective is non-decreasing by construction.
class CoordinateDescent {
public:
  CoordinateDescent(const Pyramid& fixed, const Pyramid& moving, kernels::Exec exec)
      : fixed_(fixed), moving_(moving), exec_(exec),
        center_(volume_center_world_()),
        moving_affine_inv_(moving_.affine.inverse()) {}

  double objective(const double* p) const {
    const Eigen::Matrix4d world = params_to_world(p, center_);
    const Eigen::Matrix4d vox = moving_affine_inv_ * world * fixed_.affine;
    return kernels::ncc_warped(fixed_.data.data(), fixed_.nx, fixed_.ny, fixed_.nz,
                               moving_.data.data(), moving_.nx, moving_.ny, moving_.nz,
                               vox, exec_);
  }

  double run(double* params, const OptimizerSettings& s, double start_scale) {
    static const double kSteps[12] = {
        0.0349065850398866, 0.0349065850398866, 0.0349065850398866, // 2 deg
        2.0, 2.0, 2.0,                                              // 2 mm
        0.05, 0.05, 0.05,                                           // 5 % scale
        0.05, 0.05, 0.05};                                          // shear
    double best = objective(params);
    double scale = start_scale;
    int sweeps = 0;
    while (sweeps < s.max_sweeps && scale >= s.min_scale) {
      ++sweeps;
      bool improved = false;
      for (int p = 0; p < s.dof; ++p) {
        for (int dir : {+1, -1}) {
          double trial[12];
          std::copy(params, params + 12, trial);
          trial[p] += dir * kSteps[p] * scale;
          const double v = objective(trial);
          if (std::isfinite(v) && (!std::isfinite(best) || v > best)) {
            std::copy(trial, trial + 12, params);
            best = v;
            improved = true;
            break;
          }
        }
      }
      if (!improved) scale *= 0.5;
    }
    return best;
  }

private:
  Eigen::Vector3d volume_center_world_() const {
    Eigen::Vector4d c((fixed_.nx - 1) / 2.0, (fixed_.ny - 1) / 2.0, (fixed_.nz - 1) / 2.0, 1.0);
    return (fixed_.affine * c).head<3>();
  }

  Pyramid fixed_;
  Pyramid moving_;
  kernels::Exec exec_;
  Eigen::Vector3d center_;
  Eigen::Matrix4d moving_affine_inv_ = Eigen::Matrix4d::Identity();
};

// Two-level estimate. Returns the 12-vector and the final fine-level NCC.
double estimate_world_map(const Volume3D& moving, const Volume3D& fixed, int dof,
                          kernels::Exec exec, double* params) {
  std::fill(params, params + 12, 0.0);
  const Pyramid fine_fixed = full_level(fixed);
  const Pyramid fine_moving = full_level(moving);
  OptimizerSettings s;
  s.dof = dof;

  const bool use_coarse = fixed.header.nx() >= 16 && fixed.header.ny() >= 16 &&
                          fixed.header.nz() >= 16;
  if (use_coarse) {
    CoordinateDescent coarse(coarse_level(fine_fixed), coarse_level(fine_moving), exec);
    coarse.run(params, s, 1.0);
  }
  CoordinateDescent fine(fine_fixed, fine_moving, exec);
  const double start = use_coarse ? 0.25 : 1.0;
  const double initial = fine.objective(params);
  const double final_ncc = fine.run(params, s, start);
  if (std::isfinite(initial) && std::isfinite(final_ncc) && final_ncc < initial - 1e-12)
    fail("OptimizerDiverged", "objective worsened during optimization");
  return final_ncc;
}

} // namespace

Eigen::Matrix4d RigidTransform::to_matrix(const Eigen::Vector3d& center_mm) const {
  double p[12] = {rotations_rad[0], rotations_rad[1], rotations_rad[2],
                  translations_mm[0], translations_mm[1], translations_mm[2],
                  0, 0, 0, 0, 0, 0};
  return params_to_world(p, center_mm);
}

double sigma_vox_from_fwhm(double fwhm_mm, double voxel_mm) {
  return fwhm_mm / (kFwhmToSigma * voxel_mm);
}

Volume4D gaussian_smooth(const Volume4D& vol, const SmoothingSpec& spec,
                         kernels::Exec exec) {
  if (spec.fwhm_mm < 0.0) fail("InvalidArgument", "fwhm_mm must be >= 0");
  if (spec.fwhm_mm == 0.0) return vol;
  const auto& h = vol.header;
  std::array<std::vector<double>, 3> taps;
  for (int a = 0; a < 3; ++a)
    taps[a] = kernels::gaussian_taps(sigma_vox_from_fwhm(spec.fwhm_mm, h.voxel_size_mm[a]));

  Volume4D out = vol;
  std::vector<double> tmp(std::size_t(h.frame_voxels()));
  const int nt = h.nt();
  auto smooth_frame = [&](double* frame, double* scratch, kernels::Exec e) {
    kernels::convolve_axis(frame, scratch, h.nx(), h.ny(), h.nz(), 0, taps[0], e);
    kernels::convolve_axis(scratch, frame, h.nx(), h.ny(), h.nz(), 1, taps[1], e);
    kernels::convolve_axis(frame, scratch, h.nx(), h.ny(), h.nz(), 2, taps[2], e);
    std::copy(scratch, scratch + h.frame_voxels(), frame);
  };
  if (exec == kernels::Exec::Parallel && nt > 1) {
#pragma omp parallel
    {
      std::vector<double> scratch(std::size_t(h.frame_voxels()));
#pragma omp for schedule(static)
      for (int t = 0; t < nt; ++t)
        smooth_frame(out.frame_ptr(t), scratch.data(), kernels::Exec::Serial);
    }
  } else {
    for (int t = 0; t < nt; ++t) smooth_frame(out.frame_ptr(t), tmp.data(), exec);
  }
  return out;
}

Eigen::MatrixXd highpass_trend_matrix(int nt, double sigma_frames) {
  Eigen::MatrixXd m(nt, nt);
  const double s2 = 2.0 * sigma_frames * sigma_frames;
  for (int t = 0; t < nt; ++t) {
    double w_sum = 0.0, sx = 0.0, sxx = 0.0;
    Eigen::VectorXd w(nt);
    for (int i = 0; i < nt; ++i) {
      const double d = i - t;
      w(i) = std::exp(-d * d / s2);
      w_sum += w(i);
      sx += w(i) * d;
      sxx += w(i) * d * d;
    }
    const double denom = w_sum * sxx - sx * sx;
    if (std::abs(denom) > 1e-12 * w_sum * sxx + 1e-300) {
      for (int i = 0; i < nt; ++i)
        m(t, i) = w(i) * (sxx - sx * (i - t)) / denom;
    } else {
      for (int i = 0; i < nt; ++i) m(t, i) = w(i) / w_sum; // weighted mean fallback
    }
  }
  return m;
}

Volume4D highpass_temporal(const Volume4D& vol, const HighpassSpec& spec,
                           kernels::Exec exec) {
  const auto& h = vol.header;
  if (h.nt() < 3) fail("DimensionMismatch", "highpass needs at least 3 timepoints");
  if (!(spec.tr_s > 0.0)) fail("InvalidArgument", "tr_s must be > 0");
  if (spec.cutoff_s <= 2.0 * spec.tr_s)
    fail("CutoffTooLow", "cutoff_s must exceed 2*tr_s");
  const double sigma_frames = (spec.cutoff_s / 2.0) / spec.tr_s;
  const Eigen::MatrixXd trend = highpass_trend_matrix(h.nt(), sigma_frames);
  // Row-major copy of the operator for the kernel.
  std::vector<double> trend_rm(std::size_t(h.nt()) * h.nt());
  for (int t = 0; t < h.nt(); ++t)
    for (int i = 0; i < h.nt(); ++i) trend_rm[std::size_t(t) * h.nt() + i] = trend(t, i);

  const std::int64_t nvox = h.frame_voxels();
  const int nt = h.nt();
  std::vector<double> series(std::size_t(nvox) * nt);
  for (int t = 0; t < nt; ++t) {
    const double* f = vol.frame_ptr(t);
    for (std::int64_t v = 0; v < nvox; ++v) series[std::size_t(v) * nt + t] = f[v];
  }
  std::vector<double> filtered(series.size());
  kernels::detrend_rows(series.data(), filtered.data(), nvox, nt, trend_rm.data(), exec);

  Volume4D out = vol;
  for (int t = 0; t < nt; ++t) {
    double* f = out.frame_ptr(t);
    for (std::int64_t v = 0; v < nvox; ++v) f[v] = filtered[std::size_t(v) * nt + t];
  }
  return out;
}

MotionResult motion_correct(const Volume4D& vol, int ref_index, kernels::Exec exec) {
  const auto& h = vol.header;
  if (ref_index < 0 || ref_index >= h.nt())
    fail("IndexOutOfRange", "reference index out of range");
  MotionResult res;
  res.corrected = vol;
  res.parameters.assign(std::size_t(h.nt()), RigidTransform{});
  if (h.nt() == 1) return res;

  const Volume3D ref = extract_frame(vol, ref_index);
  const Eigen::Vector3d center = volume_center_world(h);
  const Eigen::Matrix4d affine_inv = h.affine.inverse();
  const bool ref_const = is_constant(ref.data);

  auto correct_frame = [&](int t, kernels::Exec inner) {
    if (t == ref_index) return;
    Volume3D frame = extract_frame(vol, t);
    if (ref_const || is_constant(frame.data)) return; // nothing to align on
    double p[12];
    estimate_world_map(frame, ref, 6, inner, p);
    RigidTransform rt;
    rt.rotations_rad = {p[0], p[1], p[2]};
    rt.translations_mm = {p[3], p[4], p[5]};
    res.parameters[std::size_t(t)] = rt;
    const Eigen::Matrix4d vox_map = affine_inv * rt.to_matrix(center) * h.affine;
    kernels::warp_trilinear(frame.data.data(), h.nx(), h.ny(), h.nz(), vox_map,
                            res.corrected.frame_ptr(t), h.nx(), h.ny(), h.nz(), inner);
  };

  if (exec == kernels::Exec::Parallel) {
#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < h.nt(); ++t) correct_frame(t, kernels::Exec::Serial);
  } else {
    for (int t = 0; t < h.nt(); ++t) correct_frame(t, kernels::Exec::Serial);
  }
  return res;
}

AffineTransform register_affine(const Volume3D& moving, const Volume3D& fixed,
                                int dof, kernels::Exec exec) {
  require_volume3d(moving, "register_affine");
  require_volume3d(fixed, "register_affine");
  if (dof != 6 && dof != 12) fail("InvalidArgument", "dof must be 6 or 12");
  if (is_constant(moving.data) || is_constant(fixed.data))
    fail("DegenerateInput", "cannot register a constant image");
  double p[12];
  const double ncc = estimate_world_map(moving, fixed, dof, exec, p);
  if (!std::isfinite(ncc))
    fail("OptimizerDiverged", "no overlap between volumes");
  const Eigen::Vector3d center = volume_center_world(fixed.header);
  const Eigen::Matrix4d fixed_to_moving = params_to_world(p, center);
  AffineTransform out;
  out.matrix = fixed_to_moving.inverse(); // moving world -> fixed world
  return out;
}

Volume4D resample_to_grid(const Volume4D& vol, const AffineTransform& xfm,
                          const NiftiHeader& target, kernels::Exec exec) {
  auto violations = validate_header(target);
  if (!violations.empty()) fail("InvalidHeader", violations.front());
  if (std::abs(xfm.matrix.block<3, 3>(0, 0).determinant()) < 1e-12)
    fail("SingularTransform", "transform 3x3 block is singular");
  const Eigen::Matrix4d map =
      vol.header.affine.inverse() * xfm.matrix.inverse() * target.affine;

  NiftiHeader out_h = target;
  out_h.dim[3] = vol.header.nt();
  out_h.tr_s = vol.header.tr_s;
  out_h.datatype_code = vol.header.datatype_code;
  Volume4D out = make_volume(out_h);
  const int nt = vol.header.nt();
  auto warp_frame = [&](int t, kernels::Exec inner) {
    kernels::warp_trilinear(vol.frame_ptr(t), vol.header.nx(), vol.header.ny(),
                            vol.header.nz(), map, out.frame_ptr(t), out_h.nx(),
                            out_h.ny(), out_h.nz(), inner);
  };
  if (exec == kernels::Exec::Parallel && nt > 1) {
#pragma omp parallel for schedule(static)
    for (int t = 0; t < nt; ++t) warp_frame(t, kernels::Exec::Serial);
  } else {
    for (int t = 0; t < nt; ++t) warp_frame(t, exec);
  }
  return out;
}

void write_motion_parameters(const std::vector<RigidTransform>& params,
                             const std::string& path) {
  std::ofstream f(path);
  if (!f) fail("IoError", "cannot open for write: " + path);
  f.precision(12);
  for (const auto& p : params) {
    f << p.rotations_rad[0] << ' ' << p.rotations_rad[1] << ' ' << p.rotations_rad[2]
      << ' ' << p.translations_mm[0] << ' ' << p.translations_mm[1] << ' '
      << p.translations_mm[2] << '\n';
  }
  if (!f.good()) fail("IoError", "short write: " + path);
}

std::vector<RigidTransform> read_motion_parameters(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("IoError", "cannot open: " + path);
  std::vector<RigidTransform> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    RigidTransform p;
    if (!(ss >> p.rotations_rad[0] >> p.rotations_rad[1] >> p.rotations_rad[2] >>
          p.translations_mm[0] >> p.translations_mm[1] >> p.translations_mm[2]))
      fail("MalformedTable", "bad motion parameter row: " + line);
    out.push_back(p);
  }
  return out;
}

} // namespace rsn
