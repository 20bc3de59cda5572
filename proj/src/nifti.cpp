#include "rsn/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <limits>

#include "rsn/error.hpp"

namespace rsn {
namespace {

// On-disk layout of the NIfTI-1 header. All members are naturally aligned,
// so the struct is exactly 348 bytes without packing pragmas.
struct RawHeader {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
static_assert(sizeof(RawHeader) == 348, "NIfTI-1 header must be 348 bytes");

constexpr int kHeaderSize = 348;
constexpr float kDataOffset = 352.0f; // header + 4-byte extension flag

template <typename T>
T byteswap_scalar(T v) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

void swap_header(RawHeader& h) {
  auto s16 = [](std::int16_t& v) { v = byteswap_scalar(v); };
  auto s32 = [](std::int32_t& v) { v = byteswap_scalar(v); };
  auto sf = [](float& v) { v = byteswap_scalar(v); };
  s32(h.sizeof_hdr);
  s32(h.extents);
  s16(h.session_error);
  for (auto& d : h.dim) s16(d);
  sf(h.intent_p1); sf(h.intent_p2); sf(h.intent_p3);
  s16(h.intent_code); s16(h.datatype); s16(h.bitpix); s16(h.slice_start);
  for (auto& p : h.pixdim) sf(p);
  sf(h.vox_offset); sf(h.scl_slope); sf(h.scl_inter);
  s16(h.slice_end);
  sf(h.cal_max); sf(h.cal_min); sf(h.slice_duration); sf(h.toffset);
  s32(h.glmax); s32(h.glmin);
  s16(h.qform_code); s16(h.sform_code);
  sf(h.quatern_b); sf(h.quatern_c); sf(h.quatern_d);
  sf(h.qoffset_x); sf(h.qoffset_y); sf(h.qoffset_z);
  for (auto& v : h.srow_x) sf(v);
  for (auto& v : h.srow_y) sf(v);
  for (auto& v : h.srow_z) sf(v);
}

Eigen::Matrix4d affine_from_qform(const RawHeader& rh) {
  const double b = rh.quatern_b, c = rh.quatern_c, d = rh.quatern_d;
  double a2 = 1.0 - (b * b + c * c + d * d);
  const double a = a2 > 0.0 ? std::sqrt(a2) : 0.0;
  Eigen::Matrix3d r;
  r << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
      2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
      2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b;
  const double qfac = rh.pixdim[0] < 0.0f ? -1.0 : 1.0;
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  for (int i = 0; i < 3; ++i) {
    m(i, 0) = r(i, 0) * rh.pixdim[1];
    m(i, 1) = r(i, 1) * rh.pixdim[2];
    m(i, 2) = r(i, 2) * rh.pixdim[3] * qfac;
  }
  m(0, 3) = rh.qoffset_x;
  m(1, 3) = rh.qoffset_y;
  m(2, 3) = rh.qoffset_z;
  return m;
}

NiftiHeader decode_header(const RawHeader& rh) {
  NiftiHeader h;
  const int ndim = rh.dim[0];
  if (ndim < 1 || ndim > 7) fail("MalformedHeader", "dim[0] out of range 1..7");
  for (int i = 0; i < 4; ++i) {
    const int v = i < ndim ? rh.dim[i + 1] : 1;
    if (v < 1) fail("MalformedHeader", "dim[" + std::to_string(i + 1) + "] < 1");
    h.dim[i] = v;
  }
  for (int i = 4; i < ndim; ++i) {
    if (rh.dim[i + 1] > 1)
      fail("MalformedHeader", "more than 4 non-singleton dimensions");
  }
  if (!datatype_supported(rh.datatype))
    fail("UnsupportedDatatype", "datatype code " + std::to_string(rh.datatype));
  h.datatype_code = rh.datatype;
  for (int i = 0; i < 3; ++i) {
    const float p = rh.pixdim[i + 1];
    if (!std::isfinite(p) || p <= 0.0f)
      fail("MalformedHeader", "pixdim[" + std::to_string(i + 1) + "] must be > 0");
    h.voxel_size_mm[i] = p;
  }
  const float tr = rh.pixdim[4];
  if (!std::isfinite(tr) || tr < 0.0f) fail("MalformedHeader", "pixdim[4] (TR) invalid");
  h.tr_s = tr;
  h.scl_slope = std::isfinite(rh.scl_slope) && rh.scl_slope != 0.0f ? rh.scl_slope : 1.0;
  h.scl_inter = std::isfinite(rh.scl_inter) ? rh.scl_inter : 0.0;

  // sform wins when present, then qform, else a diagonal affine from the
  // voxel sizes (common-tool precedence). The choice is recorded so the
  // pipeline manifest can report it.
  if (rh.sform_code > 0) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    for (int j = 0; j < 4; ++j) {
      m(0, j) = rh.srow_x[j];
      m(1, j) = rh.srow_y[j];
      m(2, j) = rh.srow_z[j];
    }
    h.affine = m;
    h.affine_source = AffineSource::Sform;
  } else if (rh.qform_code > 0) {
    h.affine = affine_from_qform(rh);
    h.affine_source = AffineSource::Qform;
  } else {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(0, 0) = h.voxel_size_mm[0];
    m(1, 1) = h.voxel_size_mm[1];
    m(2, 2) = h.voxel_size_mm[2];
    h.affine = m;
    h.affine_source = AffineSource::VoxelSize;
  }
  if (!h.affine.allFinite()) fail("MalformedHeader", "affine has non-finite entries");
  return h;
}

struct GzFile {
  gzFile f = nullptr;
  explicit GzFile(const std::string& path, const char* mode) : f(gzopen(path.c_str(), mode)) {}
  ~GzFile() {
    if (f) gzclose(f);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;
};

bool read_exact(gzFile f, void* dst, std::size_t n) {
  std::size_t got = 0;
  auto* p = static_cast<unsigned char*>(dst);
  while (got < n) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n - got, 1u << 28));
    const int r = gzread(f, p + got, chunk);
    if (r <= 0) return false;
    got += static_cast<std::size_t>(r);
  }
  return true;
}

template <typename Src>
void decode_values(const unsigned char* raw, std::int64_t n, bool swap, double slope,
                   double inter, double* out) {
  for (std::int64_t i = 0; i < n; ++i) {
    Src v;
    std::memcpy(&v, raw + std::size_t(i) * sizeof(Src), sizeof(Src));
    if (swap) v = byteswap_scalar(v);
    out[i] = slope * static_cast<double>(v) + inter;
  }
}

template <typename Dst>
void encode_values(const double* in, std::int64_t n, std::vector<unsigned char>& out) {
  out.resize(std::size_t(n) * sizeof(Dst));
  for (std::int64_t i = 0; i < n; ++i) {
    Dst v;
    if constexpr (std::is_floating_point_v<Dst>) {
      v = static_cast<Dst>(in[i]);
    } else {
      double r = std::nearbyint(in[i]);
      r = std::min(r, double(std::numeric_limits<Dst>::max()));
      r = std::max(r, double(std::numeric_limits<Dst>::min()));
      v = static_cast<Dst>(r);
    }
    if constexpr (std::endian::native == std::endian::big) v = byteswap_scalar(v);
    std::memcpy(out.data() + std::size_t(i) * sizeof(Dst), &v, sizeof(Dst));
  }
}

struct ParsedRaw {
  NiftiHeader header;
  bool swapped = false;
  std::int64_t data_offset = 0;
};

ParsedRaw parse_raw(const unsigned char* bytes, std::size_t len) {
  if (len < kHeaderSize) fail("MalformedHeader", "file shorter than 348-byte header");
  RawHeader rh;
  std::memcpy(&rh, bytes, sizeof(rh));
  bool swapped = false;
  if (rh.sizeof_hdr != kHeaderSize) {
    if (byteswap_scalar(rh.sizeof_hdr) == kHeaderSize) {
      swap_header(rh);
      swapped = true;
    } else {
      fail("MalformedHeader", "sizeof_hdr is not 348 in either byte order");
    }
  }
  if (!(rh.magic[0] == 'n' && rh.magic[1] == '+' && rh.magic[2] == '1' && rh.magic[3] == '\0'))
    fail("MalformedHeader", "magic is not \"n+1\"");
  ParsedRaw out;
  out.header = decode_header(rh);
  out.swapped = swapped;
  if (!std::isfinite(rh.vox_offset) || rh.vox_offset < kHeaderSize ||
      rh.vox_offset > 1e9f)
    fail("MalformedHeader", "vox_offset invalid");
  out.data_offset = static_cast<std::int64_t>(rh.vox_offset);
  return out;
}

} // namespace

NiftiHeader parse_nifti_header(const unsigned char* bytes, std::size_t len) {
  return parse_raw(bytes, len).header;
}

Volume4D read_nifti(const std::string& path) {
  if (!std::filesystem::exists(path)) fail("IoError", "no such file: " + path);
  GzFile gz(path, "rb"); // gzread handles plain files transparently
  if (!gz.f) fail("IoError", "cannot open " + path);

  unsigned char head[kHeaderSize];
  if (!read_exact(gz.f, head, kHeaderSize))
    fail("MalformedHeader", "file shorter than 348-byte header");
  ParsedRaw parsed = parse_raw(head, kHeaderSize);
  NiftiHeader& h = parsed.header;

  // Guard against absurd allocation before touching the data.
  const std::int64_t n = h.total_elements();
  const int nbytes = datatype_bytes(static_cast<Datatype>(h.datatype_code));
  if (n <= 0 || n > (std::int64_t(1) << 33))
    fail("MalformedHeader", "implausible element count");

  std::int64_t skip = parsed.data_offset - kHeaderSize;
  std::vector<unsigned char> scratch(4096);
  while (skip > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::int64_t>(skip, 4096));
    if (gzread(gz.f, scratch.data(), chunk) != static_cast<int>(chunk))
      fail("TruncatedData", "file ends before vox_offset");
    skip -= chunk;
  }

  std::vector<unsigned char> raw(std::size_t(n) * nbytes);
  if (!read_exact(gz.f, raw.data(), raw.size()))
    fail("TruncatedData", "data buffer shorter than dims imply");

  Volume4D vol;
  vol.header = h;
  vol.data.resize(std::size_t(n));
  const double slope = h.scl_slope, inter = h.scl_inter;
  const bool swap = parsed.swapped;
  switch (static_cast<Datatype>(h.datatype_code)) {
    case Datatype::UInt8: decode_values<std::uint8_t>(raw.data(), n, swap, slope, inter, vol.data.data()); break;
    case Datatype::Int16: decode_values<std::int16_t>(raw.data(), n, swap, slope, inter, vol.data.data()); break;
    case Datatype::Int32: decode_values<std::int32_t>(raw.data(), n, swap, slope, inter, vol.data.data()); break;
    case Datatype::Float32: decode_values<float>(raw.data(), n, swap, slope, inter, vol.data.data()); break;
    case Datatype::Float64: decode_values<double>(raw.data(), n, swap, slope, inter, vol.data.data()); break;
  }
  for (double v : vol.data) {
    if (!std::isfinite(v)) fail("NonFiniteData", "volume contains non-finite values after rescale");
  }
  // Rescale has been applied; the in-memory header reflects that.
  vol.header.scl_slope = 1.0;
  vol.header.scl_inter = 0.0;
  return vol;
}

void write_nifti(const Volume4D& vol, const std::string& path, bool gzip, Datatype on_disk) {
  NiftiHeader h = vol.header;
  h.scl_slope = 1.0;
  h.scl_inter = 0.0;
  h.datatype_code = static_cast<int>(on_disk);
  auto violations = validate_header(h);
  if (!violations.empty()) fail("InvalidHeader", violations.front());
  if (vol.data.size() != std::size_t(h.total_elements()))
    fail("InvalidHeader", "buffer length does not match header dims");

  RawHeader rh;
  std::memset(&rh, 0, sizeof(rh));
  rh.sizeof_hdr = kHeaderSize;
  rh.regular = 'r';
  rh.dim[0] = 4;
  for (int i = 0; i < 4; ++i) rh.dim[i + 1] = static_cast<std::int16_t>(h.dim[i]);
  for (int i = 5; i < 8; ++i) rh.dim[i] = 1;
  rh.datatype = static_cast<std::int16_t>(on_disk);
  rh.bitpix = static_cast<std::int16_t>(8 * datatype_bytes(on_disk));
  rh.pixdim[0] = 1.0f;
  for (int i = 0; i < 3; ++i) rh.pixdim[i + 1] = static_cast<float>(h.voxel_size_mm[i]);
  rh.pixdim[4] = static_cast<float>(h.tr_s);
  rh.vox_offset = kDataOffset;
  rh.scl_slope = 1.0f;
  rh.scl_inter = 0.0f;
  rh.xyzt_units = 2 | 8; // mm + seconds
  rh.qform_code = 0;
  rh.sform_code = 1;
  for (int j = 0; j < 4; ++j) {
    rh.srow_x[j] = static_cast<float>(h.affine(0, j));
    rh.srow_y[j] = static_cast<float>(h.affine(1, j));
    rh.srow_z[j] = static_cast<float>(h.affine(2, j));
  }
  std::strncpy(rh.descrip, "rsnpipe", sizeof(rh.descrip) - 1);
  rh.magic[0] = 'n'; rh.magic[1] = '+'; rh.magic[2] = '1'; rh.magic[3] = '\0';
  if constexpr (std::endian::native == std::endian::big) swap_header(rh);

  const std::int64_t n = h.total_elements();
  std::vector<unsigned char> payload;
  switch (on_disk) {
    case Datatype::UInt8: encode_values<std::uint8_t>(vol.data.data(), n, payload); break;
    case Datatype::Int16: encode_values<std::int16_t>(vol.data.data(), n, payload); break;
    case Datatype::Int32: encode_values<std::int32_t>(vol.data.data(), n, payload); break;
    case Datatype::Float32: encode_values<float>(vol.data.data(), n, payload); break;
    case Datatype::Float64: encode_values<double>(vol.data.data(), n, payload); break;
  }
  const unsigned char ext_flag[4] = {0, 0, 0, 0};

  if (gzip) {
    GzFile gz(path, "wb");
    if (!gz.f) fail("IoError", "cannot open for write: " + path);
    if (gzwrite(gz.f, &rh, kHeaderSize) != kHeaderSize ||
        gzwrite(gz.f, ext_flag, 4) != 4 ||
        (payload.size() > 0 &&
         gzwrite(gz.f, payload.data(), static_cast<unsigned>(payload.size())) !=
             static_cast<int>(payload.size())))
      fail("IoError", "short write: " + path);
  } else {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) fail("IoError", "cannot open for write: " + path);
    const bool ok = std::fwrite(&rh, 1, kHeaderSize, f) == kHeaderSize &&
                    std::fwrite(ext_flag, 1, 4, f) == 4 &&
                    std::fwrite(payload.data(), 1, payload.size(), f) == payload.size();
    const bool closed = std::fclose(f) == 0;
    if (!ok || !closed) fail("IoError", "short write: " + path);
  }
}

} // namespace rsn
