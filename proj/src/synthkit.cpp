#include "rsn/synthkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "rsn/error.hpp"
#include "rsn/nifti.hpp"
#include "rsn/rng.hpp"

namespace rsn {

namespace {

NiftiHeader grid_header(const SynthSpec& spec) {
  return make_grid(spec.grid[0], spec.grid[1], spec.grid[2], spec.n_timepoints,
                   spec.voxel_mm[0], spec.voxel_mm[1], spec.voxel_mm[2], spec.tr_s);
}

std::vector<std::uint8_t> head_ellipsoid(const SynthSpec& spec) {
  const double cx = (spec.grid[0] - 1) / 2.0;
  const double cy = (spec.grid[1] - 1) / 2.0;
  const double cz = (spec.grid[2] - 1) / 2.0;
  const double ax = 0.42 * spec.grid[0];
  const double ay = 0.42 * spec.grid[1];
  const double az = 0.42 * spec.grid[2];
  std::vector<std::uint8_t> head(std::size_t(spec.grid[0]) * spec.grid[1] * spec.grid[2]);
  std::size_t i = 0;
  for (int z = 0; z < spec.grid[2]; ++z)
    for (int y = 0; y < spec.grid[1]; ++y)
      for (int x = 0; x < spec.grid[0]; ++x, ++i) {
        const double q = std::pow((x - cx) / ax, 2) + std::pow((y - cy) / ay, 2) +
                         std::pow((z - cz) / az, 2);
        head[i] = q <= 1.0 ? 1 : 0;
      }
  return head;
}

std::vector<Blob> auto_place_blobs(const SynthSpec& spec) {
  std::vector<Blob> blobs;
  const double cx = (spec.grid[0] - 1) / 2.0;
  const double cy = (spec.grid[1] - 1) / 2.0;
  const double cz = (spec.grid[2] - 1) / 2.0;
  const double ring = 0.25 * std::min(spec.grid[0], spec.grid[1]);
  const double zoff = 0.15 * spec.grid[2];
  for (int g = 0; g < spec.n_networks; ++g) {
    const double theta = 2.0 * M_PI * g / spec.n_networks;
    Blob b;
    b.center_vox = {cx + ring * std::cos(theta), cy + ring * std::sin(theta),
                    cz + (g % 2 == 0 ? zoff : -zoff)};
    b.radius_vox = 4.0;
    blobs.push_back(b);
  }
  return blobs;
}

// Truncated Gaussian blob rendered over the full grid.
void render_blob(const Blob& b, const std::array<int, 3>& grid, double* out) {
  const double cut = 3.0 * b.radius_vox;
  const int x0 = std::max(0, int(std::floor(b.center_vox[0] - cut)));
  const int x1 = std::min(grid[0] - 1, int(std::ceil(b.center_vox[0] + cut)));
  const int y0 = std::max(0, int(std::floor(b.center_vox[1] - cut)));
  const int y1 = std::min(grid[1] - 1, int(std::ceil(b.center_vox[1] + cut)));
  const int z0 = std::max(0, int(std::floor(b.center_vox[2] - cut)));
  const int z1 = std::min(grid[2] - 1, int(std::ceil(b.center_vox[2] + cut)));
  const double s2 = 2.0 * b.radius_vox * b.radius_vox;
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - b.center_vox[0], dy = y - b.center_vox[1], dz = z - b.center_vox[2];
        const double r2 = dx * dx + dy * dy + dz * dz;
        if (r2 > cut * cut) continue;
        out[std::size_t(x) + std::size_t(grid[0]) * (std::size_t(y) + std::size_t(grid[1]) * z)] =
            std::exp(-r2 / s2);
      }
}

void check_blob_bounds(const Blob& b, const std::array<int, 3>& grid) {
  for (int a = 0; a < 3; ++a) {
    if (b.center_vox[std::size_t(a)] - 3.0 * b.radius_vox < -0.5 ||
        b.center_vox[std::size_t(a)] + 3.0 * b.radius_vox > grid[std::size_t(a)] - 0.5)
      fail("BlobOutOfBounds", "blob support leaves the grid on axis " + std::to_string(a));
  }
}

Eigen::MatrixXd band_limited_timecourses(int nt, int g, Rng& rng) {
  constexpr int kWindow = 5;
  Eigen::MatrixXd tc(nt, g);
  std::vector<double> raw(std::size_t(nt + kWindow - 1));
  for (int c = 0; c < g; ++c) {
    for (auto& v : raw) v = gaussian(rng);
    for (int t = 0; t < nt; ++t) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += raw[std::size_t(t + k)];
      tc(t, c) = acc / kWindow;
    }
    const double mean = tc.col(c).mean();
    tc.col(c).array() -= mean;
    const double sd = std::sqrt(tc.col(c).squaredNorm() / double(nt));
    if (sd > 1e-12) tc.col(c) /= sd;
  }
  return tc;
}

GroundTruth build_truth(const SynthSpec& spec) {
  if (spec.n_networks < 1) fail("InvalidArgument", "need at least one network");
  if (spec.noise_sigma < 0.0) fail("InvalidArgument", "noise sigma must be >= 0");
  GroundTruth truth;
  truth.spec = spec;
  truth.blobs = spec.blobs.empty() ? auto_place_blobs(spec) : spec.blobs;
  if (int(truth.blobs.size()) != spec.n_networks)
    fail("InvalidArgument", "blob count does not match n_networks");
  for (const auto& b : truth.blobs) check_blob_bounds(b, spec.grid);

  const std::int64_t nvox = std::int64_t(spec.grid[0]) * spec.grid[1] * spec.grid[2];
  truth.source_maps = Eigen::MatrixXd::Zero(spec.n_networks, nvox);
  std::vector<double> buf;
  for (int g = 0; g < spec.n_networks; ++g) {
    buf.assign(std::size_t(nvox), 0.0);
    render_blob(truth.blobs[std::size_t(g)], spec.grid, buf.data());
    for (std::int64_t v = 0; v < nvox; ++v) truth.source_maps(g, v) = buf[std::size_t(v)];
  }

  for (int a = 0; a < spec.n_networks; ++a) {
    for (int b = a + 1; b < spec.n_networks; ++b) {
      const double r = pearson(truth.source_maps.row(a).transpose(),
                               truth.source_maps.row(b).transpose());
      if (std::abs(r) >= 0.3)
        fail("SourceOverlap", "networks " + std::to_string(a) + " and " + std::to_string(b) +
                                  " correlate at " + std::to_string(r));
    }
  }

  truth.foreground = head_ellipsoid(spec);
  char name[16];
  for (int g = 0; g < spec.n_networks; ++g) {
    std::snprintf(name, sizeof(name), "SYNTH-NET-%02d", g + 1);
    truth.labels.push_back(name);
  }

  for (int s = 0; s < spec.n_subjects; ++s) {
    Rng rng = make_rng(spec.seed, std::uint64_t(s));
    SubjectTruth st;
    for (int g = 0; g < spec.n_networks; ++g) {
      st.amplitudes.push_back(spec.signal_amplitude *
                              std::max(0.2, 1.0 + spec.amplitude_jitter * gaussian(rng)));
      std::array<double, 3> shift{};
      for (auto& v : shift) v = spec.shift_jitter_vox * gaussian(rng);
      st.shifts_vox.push_back(shift);
    }
    st.timecourses = band_limited_timecourses(spec.n_timepoints, spec.n_networks, rng);
    truth.subjects.push_back(std::move(st));
  }
  return truth;
}

} // namespace

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2) fail("DimensionMismatch", "pearson needs equal-length vectors");
  const double ma = a.mean(), mb = b.mean();
  const Eigen::ArrayXd da = a.array() - ma, db = b.array() - mb;
  const double denom = std::sqrt(da.square().sum() * db.square().sum());
  if (denom <= 0.0) return 0.0;
  return (da * db).sum() / denom;
}

Volume4D synth_subject_volume(const GroundTruth& truth, int subject) {
  const SynthSpec& spec = truth.spec;
  if (subject < 0 || subject >= spec.n_subjects)
    fail("IndexOutOfRange", "subject index out of range");
  const SubjectTruth& st = truth.subjects[std::size_t(subject)];
  const std::int64_t nvox = std::int64_t(spec.grid[0]) * spec.grid[1] * spec.grid[2];

  // Subject-specific jittered maps.
  std::vector<std::vector<double>> maps(std::size_t(spec.n_networks));
  for (int g = 0; g < spec.n_networks; ++g) {
    Blob b = truth.blobs[std::size_t(g)];
    for (int a = 0; a < 3; ++a) {
      b.center_vox[std::size_t(a)] += st.shifts_vox[std::size_t(g)][std::size_t(a)];
      // keep jittered support inside the grid
      b.center_vox[std::size_t(a)] =
          std::min(std::max(b.center_vox[std::size_t(a)], 3.0 * b.radius_vox - 0.5),
                   spec.grid[std::size_t(a)] - 0.5 - 3.0 * b.radius_vox);
    }
    maps[std::size_t(g)].assign(std::size_t(nvox), 0.0);
    render_blob(b, spec.grid, maps[std::size_t(g)].data());
  }

  Volume4D vol = make_volume(grid_header(spec));
  // Baseline head, constant in time.
  for (int t = 0; t < spec.n_timepoints; ++t) {
    double* f = vol.frame_ptr(t);
    for (std::int64_t v = 0; v < nvox; ++v)
      f[v] = spec.baseline * truth.foreground[std::size_t(v)];
  }
  // Network signal.
  for (int g = 0; g < spec.n_networks; ++g) {
    const double amp = st.amplitudes[std::size_t(g)];
    const double* map = maps[std::size_t(g)].data();
    for (int t = 0; t < spec.n_timepoints; ++t) {
      const double a = amp * st.timecourses(t, g);
      double* f = vol.frame_ptr(t);
      for (std::int64_t v = 0; v < nvox; ++v) f[v] += a * map[v];
    }
  }
  // Separate per-subject noise stream so regeneration from a loaded
  // GroundTruth is bit-identical to the original files.
  if (spec.noise_sigma > 0.0) {
    Rng rng = make_rng(spec.seed, 1000000u + std::uint64_t(subject));
    const double sn = spec.noise_sigma * spec.signal_amplitude;
    for (double& v : vol.data) v += sn * gaussian(rng);
  }
  return vol;
}

SynthOutput synth_generate(const SynthSpec& spec, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  SynthOutput out;
  out.truth = build_truth(spec);

  const NiftiHeader grid = grid_header(spec);
  for (int s = 0; s < spec.n_subjects; ++s) {
    Volume4D vol = synth_subject_volume(out.truth, s);
    char name[32];
    std::snprintf(name, sizeof(name), "sub-%02d.nii.gz", s);
    const std::string path = (fs::path(out_dir) / name).string();
    write_nifti(vol, path, true);
    out.subject_files.push_back(path);
  }

  // Canonical maps and foreground as NIfTI.
  NiftiHeader maps_h = grid;
  maps_h.dim[3] = spec.n_networks;
  maps_h.tr_s = 0.0;
  Volume4D maps = make_volume(maps_h);
  for (int g = 0; g < spec.n_networks; ++g) {
    double* f = maps.frame_ptr(g);
    for (std::int64_t v = 0; v < out.truth.source_maps.cols(); ++v)
      f[v] = out.truth.source_maps(g, v);
  }
  out.truth_maps_file = (fs::path(out_dir) / "truth_maps.nii.gz").string();
  write_nifti(maps, out.truth_maps_file, true);

  NiftiHeader fg_h = grid;
  fg_h.dim[3] = 1;
  fg_h.tr_s = 0.0;
  Volume4D fg = make_volume(fg_h);
  for (std::size_t i = 0; i < out.truth.foreground.size(); ++i)
    fg.data[i] = out.truth.foreground[i];
  out.foreground_file = (fs::path(out_dir) / "foreground.nii.gz").string();
  write_nifti(fg, out.foreground_file, true);

  nlohmann::ordered_json j;
  j["seed"] = spec.seed;
  j["n_subjects"] = spec.n_subjects;
  j["grid"] = spec.grid;
  j["n_timepoints"] = spec.n_timepoints;
  j["tr_s"] = spec.tr_s;
  j["n_networks"] = spec.n_networks;
  j["amplitude_jitter"] = spec.amplitude_jitter;
  j["shift_jitter_vox"] = spec.shift_jitter_vox;
  j["noise_sigma"] = spec.noise_sigma;
  j["signal_amplitude"] = spec.signal_amplitude;
  j["baseline"] = spec.baseline;
  j["voxel_mm"] = spec.voxel_mm;
  j["labels"] = out.truth.labels;
  j["truth_maps"] = "truth_maps.nii.gz";
  j["foreground"] = "foreground.nii.gz";
  auto& jb = j["blobs"] = nlohmann::ordered_json::array();
  for (const auto& b : out.truth.blobs)
    jb.push_back({{"center_vox", b.center_vox}, {"radius_vox", b.radius_vox}});
  auto& js = j["subjects"] = nlohmann::ordered_json::array();
  for (int s = 0; s < spec.n_subjects; ++s) {
    const auto& st = out.truth.subjects[std::size_t(s)];
    nlohmann::ordered_json sj;
    char name[32];
    std::snprintf(name, sizeof(name), "sub-%02d.nii.gz", s);
    sj["file"] = name;
    sj["amplitudes"] = st.amplitudes;
    sj["shifts_vox"] = st.shifts_vox;
    std::vector<std::vector<double>> tc;
    for (int t = 0; t < st.timecourses.rows(); ++t) {
      std::vector<double> row;
      for (int g = 0; g < st.timecourses.cols(); ++g) row.push_back(st.timecourses(t, g));
      tc.push_back(std::move(row));
    }
    sj["timecourses"] = tc;
    js.push_back(std::move(sj));
  }
  out.truth_json = (fs::path(out_dir) / "ground_truth.json").string();
  std::ofstream f(out.truth_json);
  if (!f) fail("IoError", "cannot open for write: " + out.truth_json);
  f << j.dump(2) << '\n';
  if (!f.good()) fail("IoError", "short write: " + out.truth_json);
  return out;
}

GroundTruth load_ground_truth(const std::string& json_path) {
  namespace fs = std::filesystem;
  std::ifstream f(json_path);
  if (!f) fail("IoError", "cannot open: " + json_path);
  nlohmann::json j = nlohmann::json::parse(f, nullptr, true);
  GroundTruth truth;
  SynthSpec& spec = truth.spec;
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.n_subjects = j.at("n_subjects").get<int>();
  spec.grid = j.at("grid").get<std::array<int, 3>>();
  spec.n_timepoints = j.at("n_timepoints").get<int>();
  spec.tr_s = j.at("tr_s").get<double>();
  spec.n_networks = j.at("n_networks").get<int>();
  spec.amplitude_jitter = j.at("amplitude_jitter").get<double>();
  spec.shift_jitter_vox = j.at("shift_jitter_vox").get<double>();
  spec.noise_sigma = j.at("noise_sigma").get<double>();
  spec.signal_amplitude = j.at("signal_amplitude").get<double>();
  spec.baseline = j.at("baseline").get<double>();
  spec.voxel_mm = j.at("voxel_mm").get<std::array<double, 3>>();
  truth.labels = j.at("labels").get<std::vector<std::string>>();
  for (const auto& bj : j.at("blobs")) {
    Blob b;
    b.center_vox = bj.at("center_vox").get<std::array<double, 3>>();
    b.radius_vox = bj.at("radius_vox").get<double>();
    truth.blobs.push_back(b);
  }
  spec.blobs = truth.blobs;

  const fs::path dir = fs::path(json_path).parent_path();
  const Volume4D maps = read_nifti((dir / j.at("truth_maps").get<std::string>()).string());
  truth.source_maps.resize(maps.header.nt(), maps.header.frame_voxels());
  for (int g = 0; g < maps.header.nt(); ++g)
    for (std::int64_t v = 0; v < maps.header.frame_voxels(); ++v)
      truth.source_maps(g, v) = maps.frame_ptr(g)[v];

  const Volume4D fg = read_nifti((dir / j.at("foreground").get<std::string>()).string());
  truth.foreground.resize(fg.data.size());
  for (std::size_t i = 0; i < fg.data.size(); ++i)
    truth.foreground[i] = fg.data[i] > 0.5 ? 1 : 0;

  for (const auto& sj : j.at("subjects")) {
    SubjectTruth st;
    st.amplitudes = sj.at("amplitudes").get<std::vector<double>>();
    st.shifts_vox = sj.at("shifts_vox").get<std::vector<std::array<double, 3>>>();
    const auto tc = sj.at("timecourses").get<std::vector<std::vector<double>>>();
    st.timecourses.resize(int(tc.size()), spec.n_networks);
    for (std::size_t t = 0; t < tc.size(); ++t)
      for (int g = 0; g < spec.n_networks; ++g)
        st.timecourses(Eigen::Index(t), g) = tc[t][std::size_t(g)];
    truth.subjects.push_back(std::move(st));
  }
  return truth;
}

std::vector<ComponentMatch> match_components(const Eigen::MatrixXd& estimated,
                                             const Eigen::MatrixXd& truth) {
  const int k = int(estimated.rows());
  const int g = int(truth.rows());
  if (k < g) fail("InvalidArgument", "need at least as many estimates as truth components");
  if (estimated.cols() != truth.cols())
    fail("DimensionMismatch", "estimate/truth voxel counts differ");

  Eigen::MatrixXd corr(g, k);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < k; ++j)
      corr(i, j) = pearson(truth.row(i).transpose(), estimated.row(j).transpose());

  std::vector<ComponentMatch> matches;
  std::vector<bool> used_truth(std::size_t(g), false), used_est(std::size_t(k), false);
  for (int pick = 0; pick < g; ++pick) {
    double best = -1.0;
    int bi = -1, bj = -1;
    for (int i = 0; i < g; ++i) {
      if (used_truth[std::size_t(i)]) continue;
      for (int j = 0; j < k; ++j) {
        if (used_est[std::size_t(j)]) continue;
        if (std::abs(corr(i, j)) > best) {
          best = std::abs(corr(i, j));
          bi = i;
          bj = j;
        }
      }
    }
    used_truth[std::size_t(bi)] = true;
    used_est[std::size_t(bj)] = true;
    matches.push_back({bi, bj, corr(bi, bj)});
  }
  std::sort(matches.begin(), matches.end(),
            [](const ComponentMatch& a, const ComponentMatch& b) {
              return a.truth_index < b.truth_index;
            });
  return matches;
}

std::vector<std::string> auto_label(const std::vector<ComponentMatch>& matches,
                                    const std::vector<std::string>& network_labels,
                                    int n_components, double min_abs_corr) {
  std::vector<std::string> labels(std::size_t(n_components), "NOISE");
  for (const auto& m : matches) {
    if (m.estimated_index < 0 || m.estimated_index >= n_components)
      fail("IndexOutOfRange", "matched component index out of range");
    labels[std::size_t(m.estimated_index)] =
        std::abs(m.correlation) >= min_abs_corr
            ? network_labels.at(std::size_t(m.truth_index))
            : "UNKNOWN";
  }
  return labels;
}

} // namespace rsn
