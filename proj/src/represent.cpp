#include "rsn/represent.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "rsn/error.hpp"
#include "rsn/hashing.hpp"
#include "rsn/rng.hpp"

namespace rsn {

Eigen::MatrixXd projection_plane(const Volume3D& map, int summed_axis) {
  require_volume3d(map, "projection_plane");
  const int nx = map.header.nx(), ny = map.header.ny(), nz = map.header.nz();
  Eigen::MatrixXd plane;
  switch (summed_axis) {
    case 2: plane = Eigen::MatrixXd::Zero(nx, ny); break; // axial
    case 0: plane = Eigen::MatrixXd::Zero(ny, nz); break; // sagittal
    case 1: plane = Eigen::MatrixXd::Zero(nx, nz); break; // coronal
    default: fail("InvalidAxis", "summed_axis must be 0, 1 or 2");
  }
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        const double v = map.at(x, y, z);
        if (summed_axis == 2) plane(x, y) += v;
        else if (summed_axis == 0) plane(y, z) += v;
        else plane(x, z) += v;
      }
    }
  }
  return plane;
}

namespace {

void scale_and_center(const Eigen::MatrixXd& plane, int side,
                      std::vector<std::uint8_t>& channel,
                      std::array<double, 2>& record) {
  channel.assign(std::size_t(side) * side, 0);
  const double lo = plane.minCoeff();
  const double hi = plane.maxCoeff();
  record = {lo, hi};
  const int r0 = (side - int(plane.rows())) / 2;
  const int c0 = (side - int(plane.cols())) / 2;
  if (hi <= lo) return; // constant projection maps to an all-zero channel
  const double scale = 255.0 / (hi - lo);
  for (int i = 0; i < plane.rows(); ++i) {
    for (int j = 0; j < plane.cols(); ++j) {
      const double v = std::nearbyint((plane(i, j) - lo) * scale);
      channel[std::size_t(r0 + i) * side + (c0 + j)] = std::uint8_t(v);
    }
  }
}

} // namespace

Rgb2p5 project_2p5d(const Volume3D& map) {
  require_volume3d(map, "project_2p5d");
  for (double v : map.data) {
    if (!std::isfinite(v)) fail("NonFiniteData", "projection input has non-finite values");
  }
  const int nx = map.header.nx(), ny = map.header.ny(), nz = map.header.nz();
  Rgb2p5 img;
  img.side = std::max(nx, std::max(ny, nz));
  scale_and_center(projection_plane(map, 2), img.side, img.r, img.scale_record[0]);
  scale_and_center(projection_plane(map, 0), img.side, img.g, img.scale_record[1]);
  scale_and_center(projection_plane(map, 1), img.side, img.b, img.scale_record[2]);
  return img;
}

SubjectSplit split_subjects(std::vector<std::string> subject_ids, const SplitSpec& spec) {
  const std::size_t n = subject_ids.size();
  if (n < 3) fail("TooFewSubjects", "need at least 3 subjects to split");
  double rsum = 0.0;
  for (double r : spec.ratios) {
    if (!(r > 0.0)) fail("InvalidArgument", "split ratios must be positive");
    rsum += r;
  }
  if (std::abs(rsum - 1.0) > 1e-9) fail("InvalidArgument", "split ratios must sum to 1");

  Rng rng = make_rng(spec.seed);
  shuffle_in_place(subject_ids, rng);
  const std::size_t n_train = std::size_t(std::floor(spec.ratios[0] * double(n)));
  const std::size_t n_val = std::size_t(std::floor(spec.ratios[1] * double(n)));
  SubjectSplit out;
  out.train.assign(subject_ids.begin(), subject_ids.begin() + n_train);
  out.val.assign(subject_ids.begin() + n_train, subject_ids.begin() + n_train + n_val);
  out.test.assign(subject_ids.begin() + n_train + n_val, subject_ids.end());
  return out;
}

std::vector<int> Dataset::indices_for_subjects(const std::vector<std::string>& ids) const {
  std::vector<int> out;
  for (int i = 0; i < count(); ++i) {
    for (const auto& id : ids) {
      if (examples[std::size_t(i)].subject_id == id) {
        out.push_back(i);
        break;
      }
    }
  }
  return out;
}

Dataset build_dataset(const std::vector<SubjectComponents>& subjects,
                      const std::vector<std::string>& component_labels,
                      const BrainMask& mask, FeatureMode mode) {
  if (subjects.empty()) fail("InvalidArgument", "no subjects");
  const auto k = subjects.front().maps.rows();
  if (Eigen::Index(component_labels.size()) != k)
    fail("MissingLabel", "expected " + std::to_string(k) + " component labels, got " +
                             std::to_string(component_labels.size()));
  Dataset ds;
  ds.mode = mode;
  ds.grid_dim = {subjects.front().grid.nx(), subjects.front().grid.ny(),
                 subjects.front().grid.nz()};
  std::vector<int> class_of_component;
  for (const auto& l : component_labels) class_of_component.push_back(ds.labels.add(l));

  const std::int64_t d = std::int64_t(ds.grid_dim[0]) * ds.grid_dim[1] * ds.grid_dim[2];
  const std::size_t n = subjects.size() * std::size_t(k);
  if (mode == FeatureMode::Flat) ds.features.resize(d, Eigen::Index(n));

  std::size_t col = 0;
  for (const auto& s : subjects) {
    if (s.maps.rows() != k) fail("GridMismatch", "subjects disagree on component count");
    if (s.grid.nx() != ds.grid_dim[0] || s.grid.ny() != ds.grid_dim[1] ||
        s.grid.nz() != ds.grid_dim[2])
      fail("GridMismatch", "subjects are not on a shared grid");
    if (s.maps.cols() != mask.count())
      fail("GridMismatch", "subject maps and mask disagree on voxel count");
    Volume4D vols = components_to_volume(s, mask);
    for (int c = 0; c < int(k); ++c, ++col) {
      ds.examples.push_back({s.subject_id, c, class_of_component[std::size_t(c)]});
      if (mode == FeatureMode::Flat) {
        Eigen::Map<const Eigen::VectorXd> flat(vols.frame_ptr(c), d);
        const double mean = flat.mean();
        const double sd = std::sqrt((flat.array() - mean).square().sum() / double(d));
        if (sd < 1e-12)
          ds.features.col(Eigen::Index(col)).setZero();
        else
          ds.features.col(Eigen::Index(col)) = ((flat.array() - mean) / sd).matrix();
      } else {
        ds.images.push_back(project_2p5d(extract_frame(vols, c)));
      }
    }
  }
  return ds;
}

namespace {

struct PngCloser {
  std::FILE* f = nullptr;
  ~PngCloser() {
    if (f) std::fclose(f);
  }
};

} // namespace

void export_png(const Rgb2p5& img, const std::string& path) {
  if (img.side <= 0 || img.r.size() != std::size_t(img.side) * img.side ||
      img.g.size() != img.r.size() || img.b.size() != img.r.size())
    fail("InvalidArgument", "malformed image");
  PngCloser fc;
  fc.f = std::fopen(path.c_str(), "wb");
  if (!fc.f) fail("IoError", "cannot open for write: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail("IoError", "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("IoError", "PNG write failed: " + path);
  }
  png_init_io(png, fc.f);
  png_set_IHDR(png, info, png_uint_32(img.side), png_uint_32(img.side), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> row(std::size_t(img.side) * 3);
  for (int y = 0; y < img.side; ++y) {
    for (int x = 0; x < img.side; ++x) {
      row[std::size_t(x) * 3 + 0] = img.r[std::size_t(y) * img.side + x];
      row[std::size_t(x) * 3 + 1] = img.g[std::size_t(y) * img.side + x];
      row[std::size_t(x) * 3 + 2] = img.b[std::size_t(y) * img.side + x];
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Rgb2p5 import_png(const std::string& path) {
  PngCloser fc;
  fc.f = std::fopen(path.c_str(), "rb");
  if (!fc.f) fail("IoError", "cannot open: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("IoError", "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("IoError", "PNG read failed: " + path);
  }
  png_init_io(png, fc.f);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  if (w != h || png_get_bit_depth(png, info) != 8 ||
      png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("MalformedImage", "expected square 8-bit RGB PNG: " + path);
  }
  Rgb2p5 img;
  img.side = int(w);
  img.r.assign(std::size_t(w) * w, 0);
  img.g = img.r;
  img.b = img.r;
  std::vector<std::uint8_t> row(std::size_t(w) * 3);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x) {
      img.r[std::size_t(y) * w + x] = row[std::size_t(x) * 3 + 0];
      img.g[std::size_t(y) * w + x] = row[std::size_t(x) * 3 + 1];
      img.b[std::size_t(y) * w + x] = row[std::size_t(x) * 3 + 2];
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void save_dataset(const Dataset& ds, const std::string& bin_path,
                  const std::string& index_path) {
  if (ds.mode != FeatureMode::Flat)
    fail("InvalidArgument", "only flat datasets are saved as dataset.bin");
  std::ofstream f(bin_path, std::ios::binary);
  if (!f) fail("IoError", "cannot open for write: " + bin_path);
  const char magic[8] = {'R', 'S', 'N', 'D', '0', '0', '0', '1'};
  const std::int64_t d = ds.features.rows(), n = ds.features.cols();
  f.write(magic, 8);
  f.write(reinterpret_cast<const char*>(&d), 8);
  f.write(reinterpret_cast<const char*>(&n), 8);
  f.write(reinterpret_cast<const char*>(ds.features.data()),
          std::streamsize(sizeof(double) * std::size_t(d) * std::size_t(n)));
  if (!f.good()) fail("IoError", "short write: " + bin_path);
  f.close();

  nlohmann::ordered_json idx;
  idx["feature_dim"] = d;
  idx["count"] = n;
  idx["grid_dim"] = ds.grid_dim;
  idx["labels"] = ds.labels.ordered();
  auto& ex = idx["examples"] = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& e = ds.examples[std::size_t(i)];
    nlohmann::ordered_json j;
    j["subject"] = e.subject_id;
    j["component"] = e.component_index;
    j["class"] = e.class_index;
    j["sha256"] = sha256_bytes(ds.features.col(i).data(), sizeof(double) * std::size_t(d));
    ex.push_back(std::move(j));
  }
  std::ofstream jf(index_path);
  if (!jf) fail("IoError", "cannot open for write: " + index_path);
  jf << idx.dump(2) << '\n';
  if (!jf.good()) fail("IoError", "short write: " + index_path);
}

Dataset load_dataset(const std::string& bin_path, const std::string& index_path) {
  std::ifstream f(bin_path, std::ios::binary);
  if (!f) fail("IoError", "cannot open: " + bin_path);
  char magic[8];
  std::int64_t d = 0, n = 0;
  f.read(magic, 8);
  f.read(reinterpret_cast<char*>(&d), 8);
  f.read(reinterpret_cast<char*>(&n), 8);
  if (!f.good() || std::string(magic, 8) != "RSND0001")
    fail("MalformedDataset", "bad dataset magic: " + bin_path);
  if (d <= 0 || n <= 0 || d * n > (std::int64_t(1) << 33))
    fail("MalformedDataset", "implausible dataset shape");
  Dataset ds;
  ds.mode = FeatureMode::Flat;
  ds.features.resize(d, n);
  f.read(reinterpret_cast<char*>(ds.features.data()),
         std::streamsize(sizeof(double) * std::size_t(d) * std::size_t(n)));
  if (!f.good()) fail("MalformedDataset", "dataset file truncated: " + bin_path);

  std::ifstream jf(index_path);
  if (!jf) fail("IoError", "cannot open: " + index_path);
  nlohmann::json idx = nlohmann::json::parse(jf, nullptr, true);
  if (idx.at("feature_dim").get<std::int64_t>() != d || idx.at("count").get<std::int64_t>() != n)
    fail("MalformedDataset", "dataset index does not match binary shape");
  ds.grid_dim = idx.at("grid_dim").get<std::array<int, 3>>();
  LabelSet ls;
  for (const auto& l : idx.at("labels")) ls.add(l.get<std::string>());
  // Guard against a reordered label list (indices must round-trip).
  const auto stored = idx.at("labels").get<std::vector<std::string>>();
  if (stored != ls.ordered())
    fail("MalformedDataset", "label order in index is not canonical");
  ds.labels = ls;
  for (const auto& j : idx.at("examples")) {
    Example e;
    e.subject_id = j.at("subject").get<std::string>();
    e.component_index = j.at("component").get<int>();
    e.class_index = j.at("class").get<int>();
    if (e.class_index < 0 || e.class_index >= ds.labels.size())
      fail("MalformedDataset", "class index out of range");
    ds.examples.push_back(std::move(e));
  }
  if (Eigen::Index(ds.examples.size()) != n)
    fail("MalformedDataset", "example count mismatch");
  return ds;
}

void save_split(const SubjectSplit& split, const SplitSpec& spec, const std::string& path) {
  nlohmann::ordered_json j;
  j["ratios"] = spec.ratios;
  j["seed"] = spec.seed;
  j["train"] = split.train;
  j["val"] = split.val;
  j["test"] = split.test;
  std::ofstream f(path);
  if (!f) fail("IoError", "cannot open for write: " + path);
  f << j.dump(2) << '\n';
  if (!f.good()) fail("IoError", "short write: " + path);
}

SubjectSplit load_split(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("IoError", "cannot open: " + path);
  nlohmann::json j = nlohmann::json::parse(f, nullptr, true);
  SubjectSplit s;
  s.train = j.at("train").get<std::vector<std::string>>();
  s.val = j.at("val").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  return s;
}

} // namespace rsn
