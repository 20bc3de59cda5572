#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "rsn/error.hpp"
#include "rsn/nifti.hpp"
#include "rsn/rng.hpp"

using namespace rsn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "rsn_nifti_tests";
  fs::create_directories(dir);
  return dir;
}

Volume4D random_volume(std::array<int, 4> dim, std::uint64_t seed,
                       bool float32_exact = true) {
  Volume4D v = make_volume(make_grid(dim[0], dim[1], dim[2], dim[3]));
  Rng rng = make_rng(seed);
  for (auto& x : v.data) {
    x = gaussian(rng);
    if (float32_exact) x = double(float(x));
  }
  return v;
}

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(f), {});
}

} // namespace

TEST_SUITE("nifti") {

TEST_CASE("float32 round trip is bitwise exact") {
  const auto dir = temp_dir();
  Volume4D v = random_volume({7, 6, 5, 4}, 11);
  const std::string path = (dir / "rt_f32.nii").string();
  write_nifti(v, path, false, Datatype::Float32);
  const Volume4D r = read_nifti(path);
  REQUIRE(r.header.dim == v.header.dim);
  REQUIRE(r.data.size() == v.data.size());
  for (std::size_t i = 0; i < v.data.size(); ++i) REQUIRE(r.data[i] == v.data[i]);
  CHECK(r.header.tr_s == doctest::Approx(2.0));
  CHECK(r.header.voxel_size_mm[0] == doctest::Approx(3.0));
}

TEST_CASE("gzip and plain files read back identically") {
  const auto dir = temp_dir();
  Volume4D v = random_volume({9, 8, 7, 3}, 12);
  const std::string plain = (dir / "rt.nii").string();
  const std::string gz = (dir / "rt.nii.gz").string();
  write_nifti(v, plain, false);
  write_nifti(v, gz, true);
  const Volume4D a = read_nifti(plain);
  const Volume4D b = read_nifti(gz);
  REQUIRE(a.data == b.data);
}

TEST_CASE("every supported on-disk datatype round trips") {
  const auto dir = temp_dir();
  Volume4D v = make_volume(make_grid(5, 4, 3, 2));
  Rng rng = make_rng(13);
  for (auto& x : v.data) x = double(int(bounded(rng, 200)) - 100); // integral values
  for (Datatype dt : {Datatype::UInt8, Datatype::Int16, Datatype::Int32,
                      Datatype::Float32, Datatype::Float64}) {
    Volume4D w = v;
    if (dt == Datatype::UInt8)
      for (auto& x : w.data) x = std::abs(x); // fit the unsigned range
    const std::string path = (dir / "dt.nii").string();
    write_nifti(w, path, false, dt);
    const Volume4D r = read_nifti(path);
    REQUIRE(r.data == w.data);
  }
}

TEST_CASE("paper-sized header fields survive a write") {
  const auto dir = temp_dir();
  Volume4D v = make_volume(make_grid(45, 54, 45, 1));
  const std::string path = (dir / "paper_dims.nii").string();
  write_nifti(v, path);
  // External header check: raw dim[1..4] shorts at byte offset 40.
  const auto bytes = read_file_bytes(path);
  REQUIRE(bytes.size() >= 352);
  std::int16_t dim[8];
  std::memcpy(dim, bytes.data() + 40, sizeof(dim));
  CHECK(dim[0] == 4);
  CHECK(dim[1] == 45);
  CHECK(dim[2] == 54);
  CHECK(dim[3] == 45);
  CHECK(dim[4] == 1);
  const Volume4D r = read_nifti(path);
  CHECK(r.header.dim == std::array<int, 4>{45, 54, 45, 1});
}

TEST_CASE("single-voxel degenerate grid") {
  const auto dir = temp_dir();
  Volume4D v = make_volume(make_grid(1, 1, 1, 1));
  v.data[0] = 0.0;
  const std::string path = (dir / "one.nii").string();
  write_nifti(v, path);
  const Volume4D r = read_nifti(path);
  REQUIRE(r.data.size() == 1);
  CHECK(r.data[0] == 0.0);
}

TEST_CASE("all-zero volume reads back as zeros") {
  const auto dir = temp_dir();
  Volume4D v = make_volume(make_grid(6, 6, 6, 2));
  const std::string path = (dir / "zeros.nii.gz").string();
  write_nifti(v, path, true);
  const Volume4D r = read_nifti(path);
  for (double x : r.data) REQUIRE(x == 0.0);
}

TEST_CASE("scl_slope/scl_inter are applied and 0 slope means 1") {
  const auto dir = temp_dir();
  Volume4D v = make_volume(make_grid(3, 3, 3, 1));
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = double(i);
  const std::string path = (dir / "scl.nii").string();
  write_nifti(v, path, false, Datatype::Int16);

  auto bytes = read_file_bytes(path);
  float slope = 2.0f, inter = 10.0f;
  std::memcpy(bytes.data() + 112, &slope, 4);
  std::memcpy(bytes.data() + 116, &inter, 4);
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  Volume4D r = read_nifti(path);
  for (std::size_t i = 0; i < v.data.size(); ++i)
    CHECK(r.data[i] == doctest::Approx(2.0 * double(i) + 10.0));
  CHECK(r.header.scl_slope == 1.0); // applied on load

  slope = 0.0f;
  inter = 0.0f;
  std::memcpy(bytes.data() + 112, &slope, 4);
  std::memcpy(bytes.data() + 116, &inter, 4);
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  r = read_nifti(path);
  for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(r.data[i] == double(i));
}

TEST_CASE("byte-swapped headers are detected and decoded") {
  const auto dir = temp_dir();
  Volume4D v = random_volume({4, 3, 2, 2}, 14);
  const std::string path = (dir / "swap.nii").string();
  write_nifti(v, path, false, Datatype::Float32);
  auto bytes = read_file_bytes(path);

  // Swap every multi-byte field of the header and the float32 payload.
  auto swap_at = [&](std::size_t off, int width, int count) {
    for (int i = 0; i < count; ++i)
      std::reverse(bytes.begin() + off + std::size_t(i) * width,
                   bytes.begin() + off + std::size_t(i + 1) * width);
  };
  swap_at(0, 4, 1);    // sizeof_hdr
  swap_at(32, 4, 1);   // extents
  swap_at(36, 2, 1);   // session_error
  swap_at(40, 2, 8);   // dim
  swap_at(56, 4, 3);   // intent_p
  swap_at(68, 2, 4);   // intent_code..slice_start
  swap_at(76, 4, 8);   // pixdim
  swap_at(108, 4, 3);  // vox_offset, scl_slope, scl_inter
  swap_at(120, 2, 1);  // slice_end
  swap_at(124, 4, 4);  // cal_max..toffset
  swap_at(140, 4, 2);  // glmax, glmin
  swap_at(252, 2, 2);  // qform, sform
  swap_at(256, 4, 18); // quaternions, offsets, srows
  swap_at(352, 4, int(v.data.size()));
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));

  const Volume4D r = read_nifti(path);
  REQUIRE(r.header.dim == v.header.dim);
  REQUIRE(r.data == v.data);
}

TEST_CASE("truncated data is rejected") {
  const auto dir = temp_dir();
  Volume4D v = random_volume({8, 8, 8, 2}, 15);
  const std::string path = (dir / "trunc.nii").string();
  write_nifti(v, path);
  auto bytes = read_file_bytes(path);
  bytes.resize(bytes.size() - 100);
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  CHECK_THROWS_WITH_AS(read_nifti(path), doctest::Contains("TruncatedData"), Error);
}

TEST_CASE("bad magic and unsupported datatype are named errors") {
  const auto dir = temp_dir();
  Volume4D v = random_volume({4, 4, 4, 1}, 16);
  const std::string path = (dir / "bad.nii").string();
  write_nifti(v, path);
  auto bytes = read_file_bytes(path);

  auto rewrite = [&](const std::vector<unsigned char>& b) {
    std::ofstream(path, std::ios::binary)
        .write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
  };
  auto mutated = bytes;
  mutated[344] = 'x'; // magic
  rewrite(mutated);
  CHECK_THROWS_WITH_AS(read_nifti(path), doctest::Contains("MalformedHeader"), Error);

  mutated = bytes;
  const std::int16_t dt = 128; // RGB24: unsupported
  std::memcpy(mutated.data() + 70, &dt, 2);
  rewrite(mutated);
  CHECK_THROWS_WITH_AS(read_nifti(path), doctest::Contains("UnsupportedDatatype"), Error);
}

TEST_CASE("validate_header names each violated field") {
  NiftiHeader h = make_grid(4, 4, 4, 1);
  CHECK(validate_header(h).empty());

  NiftiHeader bad_vox = h;
  bad_vox.voxel_size_mm = {0.0, 3.0, 3.0};
  auto v = validate_header(bad_vox);
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("voxel_size_mm") != std::string::npos);

  NiftiHeader bad_affine = h;
  bad_affine.affine(3, 3) = 2.0;
  v = validate_header(bad_affine);
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("affine") != std::string::npos);

  NiftiHeader bad_dim = h;
  bad_dim.dim[2] = 0;
  v = validate_header(bad_dim);
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("dim") != std::string::npos);
}

TEST_CASE("sform is preferred over qform, qform over voxel sizes") {
  const auto dir = temp_dir();
  Volume4D v = random_volume({4, 4, 4, 1}, 17);
  v.header.affine(0, 3) = 12.5; // recognizable sform translation
  const std::string path = (dir / "affine.nii").string();
  write_nifti(v, path);
  Volume4D r = read_nifti(path);
  CHECK(r.header.affine_source == AffineSource::Sform);
  CHECK(r.header.affine(0, 3) == doctest::Approx(12.5));

  // Zero out the sform code: falls back to the diagonal voxel-size affine.
  auto bytes = read_file_bytes(path);
  const std::int16_t zero = 0;
  std::memcpy(bytes.data() + 254, &zero, 2);
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  r = read_nifti(path);
  CHECK(r.header.affine_source == AffineSource::VoxelSize);
  CHECK(r.header.affine(0, 0) == doctest::Approx(3.0));

  // Identity qform with offsets: qform wins over the fallback.
  const std::int16_t one = 1;
  std::memcpy(bytes.data() + 252, &one, 2); // qform_code
  float qoff[3] = {1.0f, 2.0f, 3.0f};
  std::memcpy(bytes.data() + 268, qoff, 12);
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  r = read_nifti(path);
  CHECK(r.header.affine_source == AffineSource::Qform);
  CHECK(r.header.affine(0, 3) == doctest::Approx(1.0));
  CHECK(r.header.affine(1, 3) == doctest::Approx(2.0));
  CHECK(r.header.affine(0, 0) == doctest::Approx(3.0)); // rotation I * pixdim
}

TEST_CASE("fuzzed headers never crash the parser") {
  const auto dir = temp_dir();
  Volume4D v = random_volume({5, 5, 5, 2}, 18);
  const std::string base = (dir / "fuzz_base.nii").string();
  write_nifti(v, base);
  const auto golden = read_file_bytes(base);
  const std::string path = (dir / "fuzz.nii").string();

  Rng rng = make_rng(1234);
  int parsed_ok = 0, rejected = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto bytes = golden;
    const int n_mut = 1 + int(bounded(rng, 8));
    for (int i = 0; i < n_mut; ++i) {
      const std::size_t off = std::size_t(bounded(rng, 352)); // header + ext flag
      bytes[off] = static_cast<unsigned char>(bounded(rng, 256));
    }
    std::ofstream(path, std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    try {
      const Volume4D r = read_nifti(path);
      ++parsed_ok;
      CHECK(r.data.size() == std::size_t(r.header.total_elements()));
    } catch (const Error&) {
      ++rejected; // named rejection is the expected path
    }
  }
  CHECK(parsed_ok + rejected == 1000);
  CHECK(rejected > 0);
}

} // TEST_SUITE
