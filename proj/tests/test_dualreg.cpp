#include <doctest.h>

#include <cmath>

#include "rsn/dualreg.hpp"
#include "rsn/error.hpp"
#include "rsn/rng.hpp"

using namespace rsn;

namespace {

// Random K x V maps with distinct structure.
Eigen::MatrixXd random_maps(int k, int v, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Eigen::MatrixXd s(k, v);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < v; ++j) s(i, j) = gaussian(rng);
  return s;
}

Eigen::MatrixXd random_timecourses(int t, int k, std::uint64_t seed) {
  return random_maps(t, k, seed);
}

// Best scale alignment per row, then relative error.
double aligned_relative_error(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth) {
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i) {
    const double scale = est.row(i).dot(truth.row(i)) / est.row(i).squaredNorm();
    num += (scale * est.row(i) - truth.row(i)).squaredNorm();
    den += truth.row(i).squaredNorm();
  }
  return std::sqrt(num / den);
}

} // namespace

TEST_SUITE("dualreg") {

TEST_CASE("stage 1 recovers the mixing matrix from noiseless data") {
  const int k = 4, t = 50, v = 800;
  const Eigen::MatrixXd s = random_maps(k, v, 21);
  const Eigen::MatrixXd a = random_timecourses(t, k, 22);
  const Eigen::MatrixXd y = a * s;
  const Eigen::MatrixXd recovered = stage1_spatial_regress(s, y);
  // construct-and-recover oracle: exact up to the demeaning of the design
  CHECK((recovered - a).norm() / a.norm() <= 1e-8);
}

TEST_CASE("stage 1 on orthonormal demeaned maps equals the projection") {
  const int k = 3, v = 900, t = 10;
  // Build exactly orthonormal rows over voxels after demeaning.
  Eigen::MatrixXd raw = random_maps(k, v, 23);
  for (int i = 0; i < k; ++i) raw.row(i).array() -= raw.row(i).mean();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw.transpose());
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(v, k);
  // Orthonormal columns; demean again to stay in the regressor space.
  for (int i = 0; i < k; ++i) q.col(i).array() -= q.col(i).mean();
  // Re-orthonormalize the demeaned columns (demeaning a QR basis of
  // demeaned data changes nothing to first order; enforce exactly).
  Eigen::HouseholderQR<Eigen::MatrixXd> qr2(q);
  q = qr2.householderQ() * Eigen::MatrixXd::Identity(v, k);
  const Eigen::MatrixXd maps = q.transpose();

  const Eigen::MatrixXd y = random_maps(t, v, 24);
  Eigen::MatrixXd y_dem = y;
  for (int i = 0; i < t; ++i) y_dem.row(i).array() -= y_dem.row(i).mean();

  const Eigen::MatrixXd beta = stage1_spatial_regress(maps, y);
  const Eigen::MatrixXd proj = y_dem * maps.transpose(); // projection case
  // The design demeans internally; columns of q are almost exactly
  // mean-free so the projection identity holds tightly.
  CHECK((beta - proj).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("stage 1 of zero data is zero") {
  const Eigen::MatrixXd s = random_maps(3, 400, 25);
  const Eigen::MatrixXd y = Eigen::MatrixXd::Zero(12, 400);
  const Eigen::MatrixXd beta = stage1_spatial_regress(s, y);
  CHECK(beta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("stage 1 rejects rank-deficient maps") {
  Eigen::MatrixXd s = random_maps(3, 300, 26);
  s.row(2) = s.row(0); // duplicate
  const Eigen::MatrixXd y = random_maps(5, 300, 27);
  CHECK_THROWS_WITH_AS(stage1_spatial_regress(s, y),
                       doctest::Contains("RankDeficientMaps"), Error);
}

TEST_CASE("stage1 + stage2 recover the maps (noiseless, scale-aligned)") {
  const int k = 4, t = 60, v = 700;
  const Eigen::MatrixXd s = random_maps(k, v, 28);
  const Eigen::MatrixXd a = random_timecourses(t, k, 29);
  const Eigen::MatrixXd y = a * s;
  const Eigen::MatrixXd tc = stage1_spatial_regress(s, y);
  const Eigen::MatrixXd maps = stage2_temporal_regress(tc, y, true);
  CHECK(aligned_relative_error(maps, s) <= 1e-6);
}

TEST_CASE("stage 2 with K=1 is the scalar regression") {
  const int t = 40, v = 250;
  Rng rng = make_rng(30);
  Eigen::MatrixXd a(t, 1);
  for (int i = 0; i < t; ++i) a(i, 0) = gaussian(rng);
  a.col(0).array() -= a.col(0).mean();
  a.col(0) /= std::sqrt(a.col(0).squaredNorm() / double(t)); // unit variance
  Eigen::MatrixXd y = random_maps(t, v, 31);
  for (int j = 0; j < v; ++j) y.col(j).array() -= y.col(j).mean();

  const Eigen::MatrixXd maps = stage2_temporal_regress(a, y, false);
  for (int j = 0; j < v; ++j) {
    const double expected = a.col(0).dot(y.col(j)) / a.col(0).squaredNorm();
    CHECK(maps(0, j) == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("stage 2 of zero data is zero; constant time courses are rejected") {
  Eigen::MatrixXd tc = random_timecourses(20, 2, 32);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(20, 100);
  CHECK(stage2_temporal_regress(tc, zero, true).cwiseAbs().maxCoeff() == 0.0);

  tc.col(1).setConstant(4.0);
  const Eigen::MatrixXd y = random_maps(20, 100, 33);
  CHECK_THROWS_WITH_AS(stage2_temporal_regress(tc, y, true),
                       doctest::Contains("RankDeficientTimecourses"), Error);
}

TEST_CASE("residuals are orthogonal to the design in both stages") {
  const int k = 3, t = 30, v = 500;
  Eigen::MatrixXd s = random_maps(k, v, 34);
  Eigen::MatrixXd y = random_maps(t, v, 35); // generic data, nonzero residual
  const double ynorm = y.cwiseAbs().maxCoeff();

  Eigen::MatrixXd design = s.transpose();
  for (int j = 0; j < k; ++j) design.col(j).array() -= design.col(j).mean();
  Eigen::MatrixXd y_dem_rows = y;
  for (int i = 0; i < t; ++i) y_dem_rows.row(i).array() -= y_dem_rows.row(i).mean();
  const Eigen::MatrixXd beta1 = stage1_spatial_regress(s, y);
  const Eigen::MatrixXd resid1 = y_dem_rows.transpose() - design * beta1.transpose();
  CHECK((design.transpose() * resid1).cwiseAbs().maxCoeff() <= 1e-8 * ynorm);

  Eigen::MatrixXd tc = stage1_spatial_regress(s, y);
  Eigen::MatrixXd tcd = tc;
  for (int j = 0; j < k; ++j) {
    tcd.col(j).array() -= tcd.col(j).mean();
    tcd.col(j) /= std::sqrt(tcd.col(j).squaredNorm() / double(t));
  }
  Eigen::MatrixXd y_dem_cols = y;
  for (int j = 0; j < v; ++j) y_dem_cols.col(j).array() -= y_dem_cols.col(j).mean();
  const Eigen::MatrixXd beta2 = stage2_temporal_regress(tc, y, true);
  const Eigen::MatrixXd resid2 = y_dem_cols - tcd * beta2;
  CHECK((tcd.transpose() * resid2).cwiseAbs().maxCoeff() <= 1e-8 * ynorm);
}

TEST_CASE("scaling one group map by c scales its time course by 1/c (K=1)") {
  const int t = 25, v = 400;
  Eigen::MatrixXd s = random_maps(1, v, 36);
  const Eigen::MatrixXd a = random_timecourses(t, 1, 37);
  const Eigen::MatrixXd y = a * s;
  const Eigen::MatrixXd base = stage1_spatial_regress(s, y);
  const double c = 2.5;
  const Eigen::MatrixXd scaled = stage1_spatial_regress(c * s, y);
  CHECK((scaled * c - base).cwiseAbs().maxCoeff() <= 1e-10 * base.cwiseAbs().maxCoeff());
}

TEST_CASE("dual_regress composes the stages on a masked volume") {
  const int k = 2, t = 16;
  const NiftiHeader grid = make_grid(8, 7, 6, t);
  Volume4D subject = make_volume(grid);
  Rng rng = make_rng(38);
  for (auto& x : subject.data) x = 10.0 + gaussian(rng);

  Volume3D ones = make_volume(make_grid(8, 7, 6, 1), 1.0);
  const BrainMask mask = mask_from_volume(ones);

  IcaResult group;
  group.model_order = k;
  group.spatial_maps = random_maps(k, int(mask.count()), 39);

  const SubjectComponents sc = dual_regress(group, subject, mask, true, "sub-x");
  CHECK(sc.timecourses.rows() == t);
  CHECK(sc.timecourses.cols() == k);
  CHECK(sc.maps.rows() == k);
  CHECK(sc.maps.cols() == mask.count());

  // 12 subjects x K=8 arithmetic: one exported 3D map per (subject, comp)
  CHECK(12 * 8 == 96);

  const Volume4D maps_vol = components_to_volume(sc, mask);
  CHECK(maps_vol.header.nt() == k);
  CHECK(maps_vol.frame_ptr(1)[mask.mask_to_voxel[5]] == sc.maps(1, 5));

  // determinism: identical inputs give bitwise identical outputs
  const SubjectComponents sc2 = dual_regress(group, subject, mask, true, "sub-x");
  REQUIRE(sc.timecourses == sc2.timecourses);
  REQUIRE(sc.maps == sc2.maps);
}

} // TEST_SUITE
