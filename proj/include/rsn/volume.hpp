#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rsn {

// NIfTI-1 datatype codes we support.
enum class Datatype : int {
  UInt8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  Float64 = 64,
};

bool datatype_supported(int code);
int datatype_bytes(Datatype dt);

enum class AffineSource { Sform, Qform, VoxelSize };

struct NiftiHeader {
  std::array<int, 4> dim{1, 1, 1, 1};           // nx, ny, nz, nt
  std::array<double, 3> voxel_size_mm{1, 1, 1};
  double tr_s = 0.0;
  int datatype_code = static_cast<int>(Datatype::Float32);
  double scl_slope = 1.0; // 0 is treated as 1 on read
  double scl_inter = 0.0;
  Eigen::Matrix4d affine = Eigen::Matrix4d::Identity(); // voxel index -> world mm
  AffineSource affine_source = AffineSource::VoxelSize;

  int nx() const { return dim[0]; }
  int ny() const { return dim[1]; }
  int nz() const { return dim[2]; }
  int nt() const { return dim[3]; }
  std::int64_t frame_voxels() const {
    return std::int64_t(dim[0]) * dim[1] * dim[2];
  }
  std::int64_t total_elements() const { return frame_voxels() * dim[3]; }

  bool same_grid(const NiftiHeader& other) const;
};

// Empty iff all header invariants hold; each violation names the field.
std::vector<std::string> validate_header(const NiftiHeader& h);

// Scalar field stored x-fastest: index = x + nx*(y + ny*(z + nz*t)).
// Values are held as float64 with scl_slope/scl_inter already applied.
struct Volume4D {
  NiftiHeader header;
  std::vector<double> data;

  double& at(int x, int y, int z, int t = 0) { return data[index(x, y, z, t)]; }
  double at(int x, int y, int z, int t = 0) const { return data[index(x, y, z, t)]; }
  std::size_t index(int x, int y, int z, int t = 0) const {
    const auto& d = header.dim;
    return std::size_t(x) + std::size_t(d[0]) * (std::size_t(y) + std::size_t(d[1]) * (std::size_t(z) + std::size_t(d[2]) * std::size_t(t)));
  }
  const double* frame_ptr(int t) const { return data.data() + std::size_t(t) * header.frame_voxels(); }
  double* frame_ptr(int t) { return data.data() + std::size_t(t) * header.frame_voxels(); }
};

// A Volume3D is a Volume4D whose header has nt == 1; operations that demand
// a single frame check that at entry.
using Volume3D = Volume4D;

Volume4D make_volume(const NiftiHeader& header, double fill = 0.0);
Volume3D extract_frame(const Volume4D& vol, int t);
void require_volume3d(const Volume3D& v, const char* what);

// Grid with voxel sizes and a diagonal affine; convenience for synthetic data.
NiftiHeader make_grid(int nx, int ny, int nz, int nt, double vx = 3.0,
                      double vy = 3.0, double vz = 3.0, double tr_s = 2.0);

} // namespace rsn
