#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "rsn/error.hpp"
#include "rsn/kernels.hpp"
#include "rsn/preprocess.hpp"
#include "rsn/rng.hpp"

using namespace rsn;

namespace {

// Smooth multi-bump field with enough structure for registration.
Volume3D bumpy_volume(int nx, int ny, int nz, double voxel = 3.0) {
  Volume3D v = make_volume(make_grid(nx, ny, nz, 1, voxel, voxel, voxel));
  const double cx = (nx - 1) / 2.0, cy = (ny - 1) / 2.0, cz = (nz - 1) / 2.0;
  struct Bump { double x, y, z, s, a; };
  const Bump bumps[] = {{cx - 6, cy, cz, 3.0, 1.0},
                        {cx + 5, cy + 4, cz - 3, 2.5, 0.8},
                        {cx, cy - 6, cz + 4, 3.5, 1.2},
                        {cx + 2, cy + 7, cz + 5, 2.0, 0.6}};
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        double val = 0.0;
        for (const auto& b : bumps) {
          const double r2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y) + (z - b.z) * (z - b.z);
          val += b.a * std::exp(-r2 / (2.0 * b.s * b.s));
        }
        v.at(x, y, z) = val;
      }
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

} // namespace

TEST_SUITE("preprocess") {

TEST_CASE("sigma in voxels from FWHM: paper setting") {
  // oracle: 7 / (2*sqrt(2 ln 2) * 3) computed independently
  const double expected = 7.0 / (2.0 * std::sqrt(2.0 * std::log(2.0)) * 3.0);
  CHECK(sigma_vox_from_fwhm(7.0, 3.0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(sigma_vox_from_fwhm(7.0, 3.0) == doctest::Approx(0.9909).epsilon(1e-4));
}

TEST_CASE("fwhm 0 is the identity") {
  Volume4D v = bumpy_volume(12, 12, 12);
  const Volume4D out = gaussian_smooth(v, SmoothingSpec{0.0});
  REQUIRE(out.data == v.data);
}

TEST_CASE("unit impulse response: normalized Gaussian samples, sum 1") {
  const int n = 25;
  Volume4D v = make_volume(make_grid(n, n, n, 1));
  v.at(12, 12, 12) = 1.0;
  const SmoothingSpec spec{7.0};
  const Volume4D out = gaussian_smooth(v, spec);

  double sum = 0.0;
  for (double x : out.data) sum += x;
  CHECK(std::abs(sum - 1.0) <= 1e-9);

  // Direct kernel evaluation oracle: response equals the separable product.
  const double sigma = sigma_vox_from_fwhm(7.0, 3.0);
  const auto taps = kernels::gaussian_taps(sigma);
  const int radius = int(taps.size() / 2);
  for (int dz = -radius; dz <= radius; ++dz)
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        const double expected = taps[std::size_t(dx + radius)] *
                                taps[std::size_t(dy + radius)] *
                                taps[std::size_t(dz + radius)];
        CHECK(out.at(12 + dx, 12 + dy, 12 + dz) == doctest::Approx(expected).epsilon(1e-12));
      }
}

TEST_CASE("interior frame sum is preserved") {
  const int n = 31;
  Volume4D v = make_volume(make_grid(n, n, n, 1));
  Rng rng = make_rng(9);
  // support away from the border by > 4 sigma
  for (int z = 10; z < 21; ++z)
    for (int y = 10; y < 21; ++y)
      for (int x = 10; x < 21; ++x) v.at(x, y, z) = uniform01(rng);
  double before = 0.0;
  for (double x : v.data) before += x;
  const Volume4D out = gaussian_smooth(v, SmoothingSpec{7.0});
  double after = 0.0;
  for (double x : out.data) after += x;
  CHECK(std::abs(after - before) / before <= 1e-9);
}

TEST_CASE("smoothing is linear") {
  Volume4D u = bumpy_volume(14, 13, 12);
  Volume4D v = bumpy_volume(14, 13, 12);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = std::sin(double(i));
  const double a = 1.7, b = -0.6;
  Volume4D combo = u;
  for (std::size_t i = 0; i < combo.data.size(); ++i)
    combo.data[i] = a * u.data[i] + b * v.data[i];
  const SmoothingSpec spec{7.0};
  const Volume4D su = gaussian_smooth(u, spec);
  const Volume4D sv = gaussian_smooth(v, spec);
  const Volume4D sc = gaussian_smooth(combo, spec);
  double worst = 0.0;
  for (std::size_t i = 0; i < sc.data.size(); ++i)
    worst = std::max(worst, std::abs(sc.data[i] - (a * su.data[i] + b * sv.data[i])));
  CHECK(worst <= 1e-9);
}

TEST_CASE("double smoothing composes: sigma1, sigma2 vs sqrt(sigma1^2+sigma2^2)") {
  // Sigmas from a 3-4-5 triple so all three kernels truncate at an integer
  // radius of exactly 4 sigma; the field varies along x only and slowly
  // enough that the discrete-kernel mismatch stays below the tolerance.
  const int nx = 320, ny = 24, nz = 24;
  Volume4D v = make_volume(make_grid(nx, ny, nz, 1, 1.0, 1.0, 1.0));
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) v.at(x, y, z) = std::sin(2.0 * M_PI * x / nx);
  const double k = 2.3548200450309493; // FWHM per unit sigma
  const double f1 = k * 2.25, f2 = k * 3.0, fc = k * 3.75;
  const Volume4D twice = gaussian_smooth(gaussian_smooth(v, SmoothingSpec{f1}), SmoothingSpec{f2});
  const Volume4D once = gaussian_smooth(v, SmoothingSpec{fc});
  const int margin = 28; // > 4*(sigma1+sigma2) along the varying axis
  double worst = 0.0;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = margin; x < nx - margin; ++x)
        worst = std::max(worst, std::abs(twice.at(x, y, z) - once.at(x, y, z)));
  CHECK(worst <= 1e-6);
}

TEST_CASE("highpass: constant series is unchanged") {
  Volume4D v = make_volume(make_grid(3, 3, 3, 20));
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = 7.25;
  const Volume4D out = highpass_temporal(v, HighpassSpec{100.0, 2.0});
  double worst = max_abs_diff(out.data, v.data);
  CHECK(worst <= 1e-9);
}

TEST_CASE("highpass: linear ramp collapses to the series mean") {
  const int nt = 60;
  Volume4D v = make_volume(make_grid(2, 2, 2, nt));
  const double a = 3.0, b = 0.5;
  for (int t = 0; t < nt; ++t)
    for (int i = 0; i < 8; ++i) v.frame_ptr(t)[i] = a + b * t;
  const double mean = a + b * (nt - 1) / 2.0;
  const Volume4D out = highpass_temporal(v, HighpassSpec{100.0, 2.0});
  for (int t = 0; t < nt; ++t)
    CHECK(std::abs(out.frame_ptr(t)[0] - mean) <= 1e-6);
}

TEST_CASE("highpass: 25 s sinusoid passes at >= 0.9 amplitude (TR 2 s, cutoff 100 s)") {
  const int nt = 100;
  Volume4D v = make_volume(make_grid(2, 2, 2, nt));
  const double amp = 2.0;
  for (int t = 0; t < nt; ++t) {
    const double x = amp * std::sin(2.0 * M_PI * (t * 2.0) / 25.0);
    for (int i = 0; i < 8; ++i) v.frame_ptr(t)[i] = x;
  }
  const Volume4D out = highpass_temporal(v, HighpassSpec{100.0, 2.0});
  // amplitude via rms of the demeaned interior
  double mean = 0.0;
  for (int t = 10; t < nt - 10; ++t) mean += out.frame_ptr(t)[0];
  mean /= (nt - 20);
  double rms = 0.0;
  for (int t = 10; t < nt - 10; ++t) {
    const double d = out.frame_ptr(t)[0] - mean;
    rms += d * d;
  }
  rms = std::sqrt(rms / (nt - 20));
  const double amp_out = rms * std::sqrt(2.0);
  CHECK(amp_out >= 0.9 * amp);
}

TEST_CASE("highpass is idempotent") {
  const HighpassSpec spec{100.0, 2.0};

  SUBCASE("exactly, on series the running line reproduces") {
    const int nt = 40;
    Volume4D v = make_volume(make_grid(2, 1, 1, nt));
    for (int t = 0; t < nt; ++t) {
      v.frame_ptr(t)[0] = 4.0;            // constant
      v.frame_ptr(t)[1] = 1.0 + 0.3 * t;  // ramp
    }
    const Volume4D once = highpass_temporal(v, spec);
    const Volume4D twice = highpass_temporal(once, spec);
    CHECK(max_abs_diff(once.data, twice.data) <= 1e-12);
  }

  SUBCASE("within 1e-6 on passband signals") {
    // Envelope the oscillation to zero at the series ends; the one-sided
    // window fits at the boundary otherwise leak a small constant through
    // the mean re-add and dominate the comparison.
    const int nt = 2400;
    Volume4D v = make_volume(make_grid(2, 1, 1, nt));
    for (int t = 0; t < nt; ++t) {
      const double env = std::pow(std::sin(M_PI * t / (nt - 1.0)), 2);
      const double x = env * (std::sin(2.0 * M_PI * t / 12.0) +
                              0.4 * std::cos(2.0 * M_PI * t / 9.0)) +
                       0.05 * t + 3.0;
      v.frame_ptr(t)[0] = x;
      v.frame_ptr(t)[1] = x - 7.5;
    }
    const Volume4D once = highpass_temporal(v, spec);
    const Volume4D twice = highpass_temporal(once, spec);
    CHECK(max_abs_diff(once.data, twice.data) <= 1e-6);
  }
}

TEST_CASE("highpass rejects cutoffs at or below 2 TR and short series") {
  Volume4D v = make_volume(make_grid(2, 2, 2, 10));
  CHECK_THROWS_WITH_AS(highpass_temporal(v, HighpassSpec{4.0, 2.0}),
                       doctest::Contains("CutoffTooLow"), Error);
  Volume4D short_v = make_volume(make_grid(2, 2, 2, 2));
  CHECK_THROWS_AS(highpass_temporal(short_v, HighpassSpec{100.0, 2.0}), Error);
}

TEST_CASE("motion correction: identical frames give zero parameters") {
  const Volume3D frame = bumpy_volume(16, 16, 16);
  Volume4D v = make_volume(make_grid(16, 16, 16, 3));
  for (int t = 0; t < 3; ++t)
    std::copy(frame.data.begin(), frame.data.end(), v.frame_ptr(t));
  const MotionResult res = motion_correct(v, 0);
  REQUIRE(res.parameters.size() == 3);
  for (const auto& p : res.parameters) {
    for (double r : p.rotations_rad) CHECK(std::abs(r) <= 1e-3);
    for (double t : p.translations_mm) CHECK(std::abs(t) <= 1e-3);
  }
}

TEST_CASE("motion correction: single-frame volume returns identity") {
  Volume4D v = bumpy_volume(12, 12, 12);
  const MotionResult res = motion_correct(v, 0);
  REQUIRE(res.parameters.size() == 1);
  for (double r : res.parameters[0].rotations_rad) CHECK(r == 0.0);
  REQUIRE(res.corrected.data == v.data);
}

TEST_CASE("motion correction recovers a known 2-voxel translation") {
  const int n = 24;
  const Volume3D ref = bumpy_volume(n, n, n); // 3mm voxels
  Volume4D v = make_volume(make_grid(n, n, n, 2));
  std::copy(ref.data.begin(), ref.data.end(), v.frame_ptr(0));

  // Self-consistency oracle: frame 1 is ref warped through a +2 voxel map.
  Eigen::Matrix4d shift = Eigen::Matrix4d::Identity();
  shift(0, 3) = 2.0;
  kernels::warp_trilinear(ref.data.data(), n, n, n, shift, v.frame_ptr(1), n, n, n,
                          kernels::Exec::Serial);

  const MotionResult res = motion_correct(v, 0);
  const auto& p = res.parameters[1];
  // The reported map takes reference coordinates into the frame; the frame
  // content sits at -2 voxels, so the estimate is -2 voxels = -6 mm in x.
  CHECK(std::abs(p.translations_mm[0] - (-6.0)) <= 0.3); // 0.1 voxel at 3 mm
  CHECK(std::abs(p.translations_mm[1]) <= 0.3);
  CHECK(std::abs(p.translations_mm[2]) <= 0.3);
  for (double r : p.rotations_rad) CHECK(std::abs(r) <= 0.01);

  // And the corrected frame matches the reference over the interior.
  double worst = 0.0;
  for (int z = 4; z < n - 4; ++z)
    for (int y = 4; y < n - 4; ++y)
      for (int x = 4; x < n - 4; ++x)
        worst = std::max(worst, std::abs(res.corrected.at(x, y, z, 1) - ref.at(x, y, z)));
  CHECK(worst <= 0.05);
}

TEST_CASE("motion correction is deterministic") {
  const int n = 16;
  const Volume3D ref = bumpy_volume(n, n, n);
  Volume4D v = make_volume(make_grid(n, n, n, 2));
  std::copy(ref.data.begin(), ref.data.end(), v.frame_ptr(0));
  Eigen::Matrix4d shift = Eigen::Matrix4d::Identity();
  shift(0, 3) = 1.0;
  shift(1, 3) = -0.5;
  kernels::warp_trilinear(ref.data.data(), n, n, n, shift, v.frame_ptr(1), n, n, n,
                          kernels::Exec::Serial);
  const MotionResult a = motion_correct(v, 0);
  const MotionResult b = motion_correct(v, 0);
  REQUIRE(a.corrected.data == b.corrected.data);
  for (int t = 0; t < 2; ++t) {
    REQUIRE(a.parameters[t].rotations_rad == b.parameters[t].rotations_rad);
    REQUIRE(a.parameters[t].translations_mm == b.parameters[t].translations_mm);
  }
}

TEST_CASE("register_affine: identical volumes give the identity") {
  const Volume3D v = bumpy_volume(18, 18, 18);
  const AffineTransform x = register_affine(v, v, 6);
  const Eigen::Matrix4d diff = x.matrix - Eigen::Matrix4d::Identity();
  CHECK(diff.cwiseAbs().maxCoeff() <= 1e-3);
}

TEST_CASE("register_affine rejects constant images") {
  Volume3D flat = make_volume(make_grid(10, 10, 10, 1));
  const Volume3D v = bumpy_volume(10, 10, 10);
  CHECK_THROWS_WITH_AS(register_affine(flat, v, 6), doctest::Contains("DegenerateInput"), Error);
}

TEST_CASE("register_affine recovers a 1.1x isotropic scale with dof=12") {
  const int n = 24;
  const Volume3D moving = bumpy_volume(n, n, n);
  // fixed = moving enlarged 1.1x about the volume center
  Eigen::Vector4d center((n - 1) / 2.0, (n - 1) / 2.0, (n - 1) / 2.0, 1.0);
  const Eigen::Vector3d center_mm = (moving.header.affine * center).head<3>();
  Eigen::Matrix4d xfm_true = Eigen::Matrix4d::Identity();
  xfm_true(0, 0) = xfm_true(1, 1) = xfm_true(2, 2) = 1.1;
  xfm_true.block<3, 1>(0, 3) = center_mm - 1.1 * center_mm;

  const Volume3D fixed = resample_to_grid(moving, AffineTransform{xfm_true}, moving.header);
  const AffineTransform est = register_affine(moving, fixed, 12);
  for (int i = 0; i < 3; ++i)
    CHECK(est.matrix(i, i) == doctest::Approx(1.1).epsilon(0.02));

  // dof=6 cannot express the scale: its objective is strictly worse.
  const AffineTransform rigid = register_affine(moving, fixed, 6);
  auto ncc_of = [&](const AffineTransform& t) {
    const Eigen::Matrix4d map = moving.header.affine.inverse() * t.matrix.inverse() *
                                fixed.header.affine;
    return kernels::ncc_warped(fixed.data.data(), n, n, n, moving.data.data(), n, n, n, map,
                               kernels::Exec::Serial);
  };
  CHECK(ncc_of(est) > ncc_of(rigid));
}

TEST_CASE("resample_to_grid: identity transform on the source grid") {
  Volume4D v = bumpy_volume(13, 12, 11);
  const Volume4D out = resample_to_grid(v, AffineTransform{}, v.header);
  REQUIRE(out.data == v.data);
}

TEST_CASE("resample_to_grid: exact 1-voxel lattice translation") {
  const int n = 10;
  Volume4D v = bumpy_volume(n, n, n);
  AffineTransform xfm;
  xfm.matrix(0, 3) = -3.0; // -1 voxel in world mm: content shifts by one index
  const Volume4D out = resample_to_grid(v, xfm, v.header);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n - 1; ++x)
        CHECK(out.at(x, y, z) == doctest::Approx(v.at(x + 1, y, z)).epsilon(1e-12));
      CHECK(out.at(n - 1, y, z) == 0.0); // border zero-fill
    }
}

TEST_CASE("resample_to_grid: paper-sized target grid") {
  Volume4D v = bumpy_volume(50, 60, 50);
  const NiftiHeader target = make_grid(45, 54, 45, 1);
  const Volume4D out = resample_to_grid(v, AffineTransform{}, target);
  CHECK(out.header.dim == std::array<int, 4>{45, 54, 45, 1});
  CHECK(out.data.size() == std::size_t(45) * 54 * 45);
}

TEST_CASE("resample round trip through xfm and its inverse") {
  const int n = 40;
  Volume3D v = make_volume(make_grid(n, n, n, 1));
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        v.at(x, y, z) = std::sin(2.0 * M_PI * x / n) + std::sin(2.0 * M_PI * y / n) +
                        std::sin(2.0 * M_PI * z / n);
  AffineTransform xfm;
  xfm.matrix(0, 3) = 2.0;
  xfm.matrix(1, 3) = -1.5;
  AffineTransform inv;
  inv.matrix = xfm.matrix.inverse();
  const Volume3D fwd = resample_to_grid(v, xfm, v.header);
  const Volume3D back = resample_to_grid(fwd, inv, v.header);
  double worst = 0.0;
  double scale = 0.0;
  for (int z = 4; z < n - 4; ++z)
    for (int y = 4; y < n - 4; ++y)
      for (int x = 4; x < n - 4; ++x) {
        worst = std::max(worst, std::abs(back.at(x, y, z) - v.at(x, y, z)));
        scale = std::max(scale, std::abs(v.at(x, y, z)));
      }
  CHECK(worst / scale <= 1e-2);
}

TEST_CASE("singular transforms are rejected") {
  Volume4D v = bumpy_volume(8, 8, 8);
  AffineTransform xfm;
  xfm.matrix(0, 0) = 0.0;
  CHECK_THROWS_WITH_AS(resample_to_grid(v, xfm, v.header),
                       doctest::Contains("SingularTransform"), Error);
}

TEST_CASE("motion parameter table round trips") {
  std::vector<RigidTransform> params(3);
  params[1].rotations_rad = {0.01, -0.02, 0.03};
  params[1].translations_mm = {1.5, -2.5, 0.25};
  const std::string path =
      (std::filesystem::temp_directory_path() / "rsn_motion.par").string();
  write_motion_parameters(params, path);
  const auto back = read_motion_parameters(path);
  REQUIRE(back.size() == 3);
  CHECK(back[1].rotations_rad == params[1].rotations_rad);
  CHECK(back[1].translations_mm == params[1].translations_mm);
}

} // TEST_SUITE
