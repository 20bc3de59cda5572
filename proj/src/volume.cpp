#include "rsn/volume.hpp"

#include <cmath>

#include "rsn/error.hpp"

namespace rsn {

bool datatype_supported(int code) {
  switch (code) {
    case 2: case 4: case 8: case 16: case 64: return true;
    default: return false;
  }
}

int datatype_bytes(Datatype dt) {
  switch (dt) {
    case Datatype::UInt8: return 1;
    case Datatype::Int16: return 2;
    case Datatype::Int32: return 4;
    case Datatype::Float32: return 4;
    case Datatype::Float64: return 8;
  }
  return 0;
}

bool NiftiHeader::same_grid(const NiftiHeader& other) const {
  return dim[0] == other.dim[0] && dim[1] == other.dim[1] && dim[2] == other.dim[2];
}

std::vector<std::string> validate_header(const NiftiHeader& h) {
  std::vector<std::string> violations;
  for (int i = 0; i < 4; ++i) {
    if (h.dim[i] < 1)
      violations.push_back("dim[" + std::to_string(i) + "] must be >= 1");
  }
  for (int i = 0; i < 3; ++i) {
    if (!(h.voxel_size_mm[i] > 0.0) || !std::isfinite(h.voxel_size_mm[i]))
      violations.push_back("voxel_size_mm[" + std::to_string(i) + "] must be > 0");
  }
  if (!datatype_supported(h.datatype_code))
    violations.push_back("datatype_code " + std::to_string(h.datatype_code) + " unsupported");
  if (!std::isfinite(h.tr_s) || h.tr_s < 0.0)
    violations.push_back("tr_s must be finite and >= 0");
  if (!std::isfinite(h.scl_slope) || !std::isfinite(h.scl_inter))
    violations.push_back("scl_slope/scl_inter must be finite");
  bool affine_finite = h.affine.allFinite();
  if (!affine_finite) violations.push_back("affine has non-finite entries");
  if (affine_finite) {
    const Eigen::RowVector4d last = h.affine.row(3);
    if (last(0) != 0.0 || last(1) != 0.0 || last(2) != 0.0 || last(3) != 1.0)
      violations.push_back("affine last row must be (0,0,0,1)");
  }
  return violations;
}

Volume4D make_volume(const NiftiHeader& header, double fill) {
  Volume4D v;
  v.header = header;
  v.data.assign(static_cast<std::size_t>(header.total_elements()), fill);
  return v;
}

Volume3D extract_frame(const Volume4D& vol, int t) {
  if (t < 0 || t >= vol.header.nt()) fail("IndexOutOfRange", "frame index out of range");
  Volume3D out;
  out.header = vol.header;
  out.header.dim[3] = 1;
  const double* p = vol.frame_ptr(t);
  out.data.assign(p, p + vol.header.frame_voxels());
  return out;
}

void require_volume3d(const Volume3D& v, const char* what) {
  if (v.header.nt() != 1)
    fail("DimensionMismatch", std::string(what) + " expects a single-frame volume");
}

NiftiHeader make_grid(int nx, int ny, int nz, int nt, double vx, double vy,
                      double vz, double tr_s) {
  NiftiHeader h;
  h.dim = {nx, ny, nz, nt};
  h.voxel_size_mm = {vx, vy, vz};
  h.tr_s = tr_s;
  h.affine = Eigen::Matrix4d::Identity();
  h.affine(0, 0) = vx;
  h.affine(1, 1) = vy;
  h.affine(2, 2) = vz;
  h.affine_source = AffineSource::VoxelSize;
  return h;
}

} // namespace rsn
