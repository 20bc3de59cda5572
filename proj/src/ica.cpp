#include "rsn/ica.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rsn/error.hpp"
#include "rsn/nifti.hpp"
#include "rsn/rng.hpp"

namespace rsn {

namespace {

void require_shared_grid(const std::vector<Volume4D>& vols) {
  if (vols.empty()) fail("InvalidArgument", "no input volumes");
  for (const auto& v : vols) {
    if (!v.header.same_grid(vols.front().header))
      fail("GridMismatch", "volumes are not on a shared grid");
  }
}

BrainMask finalize_mask(std::array<int, 3> dim, std::vector<std::uint8_t> in) {
  BrainMask m;
  m.dim = dim;
  m.in_mask = std::move(in);
  m.voxel_index_map.assign(m.in_mask.size(), -1);
  for (std::size_t i = 0; i < m.in_mask.size(); ++i) {
    if (m.in_mask[i]) {
      m.voxel_index_map[i] = std::int64_t(m.mask_to_voxel.size());
      m.mask_to_voxel.push_back(std::int64_t(i));
    }
  }
  if (m.mask_to_voxel.empty()) fail("EmptyMask", "mask has no voxels");
  return m;
}

} // namespace

BrainMask build_mask(const std::vector<Volume4D>& vols, double threshold_fraction) {
  require_shared_grid(vols);
  const auto& h = vols.front().header;
  const std::int64_t nvox = h.frame_voxels();
  std::vector<double> mean(std::size_t(nvox), 0.0);
  std::int64_t total_frames = 0;
  for (const auto& v : vols) {
    for (int t = 0; t < v.header.nt(); ++t) {
      const double* f = v.frame_ptr(t);
      for (std::int64_t i = 0; i < nvox; ++i) mean[std::size_t(i)] += f[i];
    }
    total_frames += v.header.nt();
  }
  double global = 0.0;
  for (auto& m : mean) {
    m /= double(total_frames);
    global += m;
  }
  global /= double(nvox);

  std::vector<std::uint8_t> in(std::size_t(nvox), 0);
  const double cut = threshold_fraction * global;
  for (std::int64_t i = 0; i < nvox; ++i)
    in[std::size_t(i)] = (mean[std::size_t(i)] > 0.0 && mean[std::size_t(i)] >= cut) ? 1 : 0;
  return finalize_mask({h.nx(), h.ny(), h.nz()}, std::move(in));
}

BrainMask mask_from_volume(const Volume3D& vol, double level) {
  require_volume3d(vol, "mask_from_volume");
  std::vector<std::uint8_t> in(vol.data.size());
  for (std::size_t i = 0; i < vol.data.size(); ++i) in[i] = vol.data[i] > level ? 1 : 0;
  return finalize_mask({vol.header.nx(), vol.header.ny(), vol.header.nz()}, std::move(in));
}

Volume3D mask_to_volume(const BrainMask& mask, const NiftiHeader& grid) {
  NiftiHeader h = grid;
  h.dim[3] = 1;
  Volume3D out = make_volume(h);
  for (std::int64_t v : mask.mask_to_voxel) out.data[std::size_t(v)] = 1.0;
  return out;
}

DataMatrix concat_normalize(const std::vector<Volume4D>& vols, const BrainMask& mask) {
  require_shared_grid(vols);
  const auto& h = vols.front().header;
  if (mask.dim[0] != h.nx() || mask.dim[1] != h.ny() || mask.dim[2] != h.nz())
    fail("GridMismatch", "mask grid does not match volumes");
  std::int64_t rows = 0;
  for (const auto& v : vols) {
    if (v.header.nt() < 2) fail("InvalidArgument", "each subject needs nt >= 2");
    rows += v.header.nt();
  }
  const std::int64_t V = mask.count();
  DataMatrix dm;
  dm.values.resize(rows, V);
  dm.row_subject.resize(std::size_t(rows));
  std::int64_t r0 = 0;
  for (std::size_t s = 0; s < vols.size(); ++s) {
    const auto& vol = vols[s];
    const int nt = vol.header.nt();
    dm.subject_rows.push_back(nt);
    for (int t = 0; t < nt; ++t) dm.row_subject[std::size_t(r0 + t)] = int(s);
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < V; ++c) {
      const std::int64_t vox = mask.mask_to_voxel[std::size_t(c)];
      const std::int64_t stride = vol.header.frame_voxels();
      double mean = 0.0;
      for (int t = 0; t < nt; ++t) mean += vol.data[std::size_t(vox + t * stride)];
      mean /= nt;
      double var = 0.0;
      for (int t = 0; t < nt; ++t) {
        const double d = vol.data[std::size_t(vox + t * stride)] - mean;
        var += d * d;
      }
      const double sd = std::sqrt(var / nt);
      if (sd < 1e-12) {
        for (int t = 0; t < nt; ++t) dm.values(r0 + t, c) = 0.0;
      } else {
        for (int t = 0; t < nt; ++t)
          dm.values(r0 + t, c) = (vol.data[std::size_t(vox + t * stride)] - mean) / sd;
      }
    }
    r0 += nt;
  }
  return dm;
}

PcaResult pca_reduce(const Eigen::MatrixXd& X, int K) {
  const auto rows = X.rows();
  const auto V = X.cols();
  if (K < 1) fail("InvalidArgument", "model order must be >= 1");
  if (K > std::min(rows, V))
    fail("RankDeficient", "model order " + std::to_string(K) + " exceeds min(rows, voxels) = " +
                              std::to_string(std::min(rows, V)));
  Eigen::MatrixXd cov = (X * X.transpose()) / double(V);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) fail("NumericalFailure", "eigendecomposition failed");

  PcaResult r;
  r.eigenvalues.resize(K);
  Eigen::MatrixXd u(rows, K);
  for (int k = 0; k < K; ++k) {
    const auto src = rows - 1 - k; // ascending -> descending
    r.eigenvalues(k) = eig.eigenvalues()(src);
    u.col(k) = eig.eigenvectors().col(src);
    // canonical sign: largest-magnitude loading is positive
    Eigen::Index imax;
    u.col(k).cwiseAbs().maxCoeff(&imax);
    if (u(imax, k) < 0.0) u.col(k) = -u.col(k);
  }
  if (r.eigenvalues(K - 1) <= 1e-10)
    fail("RankDeficient", "fewer than K eigenvalues exceed 1e-10");
  const Eigen::VectorXd inv_sqrt = r.eigenvalues.cwiseSqrt().cwiseInverse();
  r.reduced = inv_sqrt.asDiagonal() * (u.transpose() * X);
  r.basis = u * r.eigenvalues.cwiseSqrt().asDiagonal();
  return r;
}

namespace {

// Inverse matrix square root of a symmetric positive definite matrix.
Eigen::MatrixXd inv_sqrt_spd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 0.0)
    fail("NumericalFailure", "symmetric decorrelation failed");
  return eig.eigenvectors() *
         eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
         eig.eigenvectors().transpose();
}

} // namespace

IcaResult fastica(const Eigen::MatrixXd& whitened, const PcaResult& pca,
                  std::uint64_t seed, double tol, int max_iter, IcaContrast contrast) {
  const int K = int(whitened.rows());
  const auto V = whitened.cols();
  if (K < 1 || V < 1) fail("InvalidArgument", "empty input");
  const Eigen::MatrixXd cov = (whitened * whitened.transpose()) / double(V);
  const double white_err = (cov - Eigen::MatrixXd::Identity(K, K)).cwiseAbs().maxCoeff();
  if (white_err > 1e-6)
    fail("NotWhitened", "row covariance deviates from identity by " + std::to_string(white_err));

  // Random orthonormal start: QR of a seeded Gaussian with positive R diagonal.
  Rng rng = make_rng(seed);
  Eigen::MatrixXd g(K, K);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) g(i, j) = gaussian(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd w = qr.householderQ() * Eigen::MatrixXd::Identity(K, K);
  const Eigen::MatrixXd rmat = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int k = 0; k < K; ++k)
    if (rmat(k, k) < 0.0) w.col(k) = -w.col(k);

  IcaResult res;
  res.model_order = K;
  res.seed = seed;
  res.converged = false;

  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd y = w * whitened; // K x V source estimates
    Eigen::MatrixXd gy(K, V);
    Eigen::VectorXd gprime_mean(K);
    if (contrast == IcaContrast::Tanh) {
      gy = y.array().tanh().matrix();
      gprime_mean = (1.0 - gy.array().square()).matrix().rowwise().mean();
    } else {
      gy = y.array().cube().matrix();
      gprime_mean = (3.0 * y.array().square()).matrix().rowwise().mean();
    }
    Eigen::MatrixXd w_raw =
        (gy * whitened.transpose()) / double(V) - gprime_mean.asDiagonal() * w;
    Eigen::MatrixXd w_new = inv_sqrt_spd(w_raw * w_raw.transpose()) * w_raw;
    const double delta =
        ((w_new * w.transpose()).diagonal().cwiseAbs().array() - 1.0).abs().maxCoeff();
    w = w_new;
    res.iterations_used = it + 1;
    if (delta < tol) {
      res.converged = true;
      break;
    }
  }

  Eigen::MatrixXd maps = w * whitened;
  for (int k = 0; k < K; ++k) maps.row(k) = zscore_map(maps.row(k).transpose()).transpose();
  res.spatial_maps = std::move(maps);
  res.mixing = pca.basis * w.transpose();
  res.unmixing = std::move(w);
  return res;
}

Eigen::VectorXd zscore_map(const Eigen::VectorXd& map) {
  const auto n = map.size();
  if (n < 1) fail("InvalidArgument", "empty map");
  const double mean = map.mean();
  const double sd = std::sqrt((map.array() - mean).square().sum() / double(n));
  if (sd < 1e-12) fail("ConstantMap", "cannot z-score a constant map");
  return ((map.array() - mean) / sd).matrix();
}

void write_ica_result(const IcaResult& r, const BrainMask& mask,
                      const NiftiHeader& grid, const std::string& maps_path,
                      const std::string& mixing_path, const std::string& meta_path) {
  NiftiHeader h = grid;
  h.dim[3] = r.model_order;
  Volume4D maps = make_volume(h);
  for (int k = 0; k < r.model_order; ++k) {
    double* f = maps.frame_ptr(k);
    for (std::int64_t c = 0; c < mask.count(); ++c)
      f[mask.mask_to_voxel[std::size_t(c)]] = r.spatial_maps(k, c);
  }
  write_nifti(maps, maps_path, true);
  write_text_matrix(r.mixing, mixing_path);

  nlohmann::ordered_json meta;
  meta["model_order"] = r.model_order;
  meta["seed"] = r.seed;
  meta["iterations_used"] = r.iterations_used;
  meta["converged"] = r.converged;
  std::ofstream f(meta_path);
  if (!f) fail("IoError", "cannot open for write: " + meta_path);
  f << meta.dump(2) << '\n';
}

Eigen::MatrixXd read_text_matrix(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("IoError", "cannot open: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<double> row;
    double x;
    while (ss >> x) row.push_back(x);
    if (!rows.empty() && row.size() != rows.front().size())
      fail("MalformedTable", "ragged rows in " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail("MalformedTable", "empty matrix in " + path);
  Eigen::MatrixXd m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(Eigen::Index(i), Eigen::Index(j)) = rows[i][j];
  return m;
}

void write_text_matrix(const Eigen::MatrixXd& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail("IoError", "cannot open for write: " + path);
  f.precision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) f << ' ';
      f << m(i, j);
    }
    f << '\n';
  }
  if (!f.good()) fail("IoError", "short write: " + path);
}

} // namespace rsn
