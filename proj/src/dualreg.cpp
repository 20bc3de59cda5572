#include "rsn/dualreg.hpp"

#include <cmath>
#include <limits>

#include "rsn/error.hpp"

namespace rsn {

namespace {

// Condition estimate via the Gram matrix spectrum.
double gram_condition(const Eigen::MatrixXd& design) {
  const Eigen::MatrixXd gram = design.transpose() * design;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

} // namespace

Eigen::MatrixXd stage1_spatial_regress(const Eigen::MatrixXd& group_maps,
                                       const Eigen::MatrixXd& subject_data) {
  const auto k = group_maps.rows();
  const auto v = group_maps.cols();
  if (subject_data.cols() != v)
    fail("DimensionMismatch", "subject data and group maps disagree on voxel count");

  // Design: demeaned maps as columns, V x K; the intercept is absorbed by
  // demeaning each data row over voxels.
  Eigen::MatrixXd design = group_maps.transpose();
  for (Eigen::Index j = 0; j < k; ++j) design.col(j).array() -= design.col(j).mean();
  if (gram_condition(design) >= 1e8)
    fail("RankDeficientMaps", "group map design is rank deficient");

  Eigen::MatrixXd y = subject_data.transpose(); // V x T
  for (Eigen::Index j = 0; j < y.cols(); ++j) y.col(j).array() -= y.col(j).mean();

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(design);
  return qr.solve(y).transpose(); // T x K
}

Eigen::MatrixXd stage2_temporal_regress(const Eigen::MatrixXd& timecourses,
                                        const Eigen::MatrixXd& subject_data,
                                        bool variance_normalize) {
  const auto t = timecourses.rows();
  const auto k = timecourses.cols();
  if (subject_data.rows() != t)
    fail("DimensionMismatch", "subject data and time courses disagree on timepoints");

  Eigen::MatrixXd design = timecourses;
  for (Eigen::Index j = 0; j < k; ++j) {
    design.col(j).array() -= design.col(j).mean();
    if (variance_normalize) {
      const double sd = std::sqrt(design.col(j).squaredNorm() / double(t));
      if (sd < 1e-12)
        fail("RankDeficientTimecourses", "time course " + std::to_string(j) + " is constant");
      design.col(j) /= sd;
    }
  }
  if (gram_condition(design) >= 1e8)
    fail("RankDeficientTimecourses", "time course design is rank deficient");

  Eigen::MatrixXd y = subject_data;
  for (Eigen::Index j = 0; j < y.cols(); ++j) y.col(j).array() -= y.col(j).mean();

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(design);
  return qr.solve(y); // K x V
}

Eigen::MatrixXd masked_data_matrix(const Volume4D& subject, const BrainMask& mask) {
  const auto& h = subject.header;
  if (mask.dim[0] != h.nx() || mask.dim[1] != h.ny() || mask.dim[2] != h.nz())
    fail("GridMismatch", "subject volume is not on the mask grid");
  const int nt = h.nt();
  const std::int64_t nvox = h.frame_voxels();
  Eigen::MatrixXd y(nt, mask.count());
  for (int t = 0; t < nt; ++t) {
    const double* f = subject.data.data() + std::size_t(t) * nvox;
    for (std::int64_t c = 0; c < mask.count(); ++c)
      y(t, c) = f[mask.mask_to_voxel[std::size_t(c)]];
  }
  return y;
}

SubjectComponents dual_regress(const IcaResult& group, const Volume4D& subject,
                               const BrainMask& mask, bool variance_normalize,
                               const std::string& subject_id) {
  if (group.spatial_maps.cols() != mask.count())
    fail("GridMismatch", "group maps and mask disagree on voxel count");
  const Eigen::MatrixXd y = masked_data_matrix(subject, mask);
  SubjectComponents sc;
  sc.subject_id = subject_id;
  sc.grid = subject.header;
  sc.grid.dim[3] = group.model_order;
  sc.timecourses = stage1_spatial_regress(group.spatial_maps, y);
  sc.maps = stage2_temporal_regress(sc.timecourses, y, variance_normalize);
  if (!sc.timecourses.allFinite() || !sc.maps.allFinite())
    fail("NumericalFailure", "dual regression produced non-finite values");
  return sc;
}

Volume4D components_to_volume(const SubjectComponents& sc, const BrainMask& mask) {
  if (sc.maps.cols() != mask.count())
    fail("GridMismatch", "component maps and mask disagree on voxel count");
  NiftiHeader h = sc.grid;
  h.dim[3] = int(sc.maps.rows());
  Volume4D out = make_volume(h);
  for (Eigen::Index k = 0; k < sc.maps.rows(); ++k) {
    double* f = out.frame_ptr(int(k));
    for (std::int64_t c = 0; c < mask.count(); ++c)
      f[mask.mask_to_voxel[std::size_t(c)]] = sc.maps(k, c);
  }
  return out;
}

} // namespace rsn
