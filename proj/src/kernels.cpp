#include "rsn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rsn/error.hpp"

namespace rsn::kernels {

std::vector<double> gaussian_taps(double sigma_vox) {
  if (!(sigma_vox > 0.0)) return {1.0};
  const int radius = static_cast<int>(std::floor(4.0 * sigma_vox + 1e-12));
  std::vector<double> taps(std::size_t(2 * radius + 1));
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    const double w = std::exp(-0.5 * (k / sigma_vox) * (k / sigma_vox));
    taps[std::size_t(k + radius)] = w;
    sum += w;
  }
  for (auto& w : taps) w /= sum;
  return taps;
}

namespace {

inline void convolve_line(const double* in, double* out, int n, std::int64_t stride,
                          const std::vector<double>& taps) {
  const int radius = static_cast<int>(taps.size() / 2);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0, wsum = 0.0;
    const int lo = std::max(-radius, -i);
    const int hi = std::min(radius, n - 1 - i);
    for (int k = lo; k <= hi; ++k) {
      const double w = taps[std::size_t(k + radius)];
      acc += w * in[(i + k) * stride];
      wsum += w;
    }
    // Border renormalization: taps are truncated to the field of view.
    out[i * stride] = wsum > 0.0 ? acc / wsum : 0.0;
  }
}

} // namespace

void convolve_axis(const double* in, double* out, int nx, int ny, int nz,
                   int axis, const std::vector<double>& taps, Exec exec) {
  if (taps.size() % 2 == 0) fail("InvalidKernel", "tap count must be odd");
  const std::int64_t sx = 1, sy = nx, sz = std::int64_t(nx) * ny;
  // Lines along `axis`, indexed by the two remaining axes collapsed to one
  // loop so a single omp-for covers them.
  int n = 0, an = 0, bn = 0;
  std::int64_t stride = 0, astride = 0, bstride = 0;
  switch (axis) {
    case 0: n = nx; stride = sx; an = ny; astride = sy; bn = nz; bstride = sz; break;
    case 1: n = ny; stride = sy; an = nx; astride = sx; bn = nz; bstride = sz; break;
    case 2: n = nz; stride = sz; an = nx; astride = sx; bn = ny; bstride = sy; break;
    default: fail("InvalidAxis", "axis must be 0, 1 or 2");
  }
  const std::int64_t nlines = std::int64_t(an) * bn;
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t line = 0; line < nlines; ++line) {
      const std::int64_t a = line % an, b = line / an;
      const std::int64_t off = a * astride + b * bstride;
      convolve_line(in + off, out + off, n, stride, taps);
    }
  } else {
    for (std::int64_t line = 0; line < nlines; ++line) {
      const std::int64_t a = line % an, b = line / an;
      const std::int64_t off = a * astride + b * bstride;
      convolve_line(in + off, out + off, n, stride, taps);
    }
  }
}

namespace {

inline void detrend_row(const double* x, double* y, int nt, const double* trend) {
  double mean = 0.0;
  for (int t = 0; t < nt; ++t) mean += x[t];
  mean /= nt;
  for (int t = 0; t < nt; ++t) {
    double fit = 0.0;
    const double* m = trend + std::size_t(t) * nt;
    for (int i = 0; i < nt; ++i) fit += m[i] * x[i];
    y[t] = x[t] - fit + mean;
  }
}

} // namespace

void detrend_rows(const double* series, double* out, std::int64_t nvox, int nt,
                  const double* trend, Exec exec) {
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t v = 0; v < nvox; ++v)
      detrend_row(series + v * nt, out + v * nt, nt, trend);
  } else {
    for (std::int64_t v = 0; v < nvox; ++v)
      detrend_row(series + v * nt, out + v * nt, nt, trend);
  }
}

double sample_trilinear(const double* src, int sx, int sy, int sz, double x,
                        double y, double z, bool* in_field) {
  const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
  if (x0 < 0 || y0 < 0 || z0 < 0 || x0 + 1 >= sx || y0 + 1 >= sy || z0 + 1 >= sz) {
    // Exactly-on-the-far-edge coordinates still count as in-field.
    if (x >= 0.0 && y >= 0.0 && z >= 0.0 && x <= sx - 1.0 && y <= sy - 1.0 &&
        z <= sz - 1.0) {
      const int xi = std::min(x0, sx - 2), yi = std::min(y0, sy - 2), zi = std::min(z0, sz - 2);
      if (sx >= 2 && sy >= 2 && sz >= 2) {
        if (in_field) *in_field = true;
        const double dx = x - xi, dy = y - yi, dz = z - zi;
        const std::int64_t s1 = sx, s2 = std::int64_t(sx) * sy;
        const double* p = src + xi + yi * s1 + zi * s2;
        const double c00 = p[0] * (1 - dx) + p[1] * dx;
        const double c10 = p[s1] * (1 - dx) + p[s1 + 1] * dx;
        const double c01 = p[s2] * (1 - dx) + p[s2 + 1] * dx;
        const double c11 = p[s2 + s1] * (1 - dx) + p[s2 + s1 + 1] * dx;
        return (c00 * (1 - dy) + c10 * dy) * (1 - dz) + (c01 * (1 - dy) + c11 * dy) * dz;
      }
    }
    if (in_field) *in_field = false;
    return 0.0;
  }
  if (in_field) *in_field = true;
  const double dx = x - x0, dy = y - y0, dz = z - z0;
  const std::int64_t s1 = sx, s2 = std::int64_t(sx) * sy;
  const double* p = src + x0 + y0 * s1 + z0 * s2;
  const double c00 = p[0] * (1 - dx) + p[1] * dx;
  const double c10 = p[s1] * (1 - dx) + p[s1 + 1] * dx;
  const double c01 = p[s2] * (1 - dx) + p[s2 + 1] * dx;
  const double c11 = p[s2 + s1] * (1 - dx) + p[s2 + s1 + 1] * dx;
  return (c00 * (1 - dy) + c10 * dy) * (1 - dz) + (c01 * (1 - dy) + c11 * dy) * dz;
}

namespace {

inline void warp_slice(const double* src, int sx, int sy, int sz,
                       const Eigen::Matrix4d& m, double* out, int tx, int ty, int z) {
  for (int y = 0; y < ty; ++y) {
    for (int x = 0; x < tx; ++x) {
      const double px = m(0, 0) * x + m(0, 1) * y + m(0, 2) * z + m(0, 3);
      const double py = m(1, 0) * x + m(1, 1) * y + m(1, 2) * z + m(1, 3);
      const double pz = m(2, 0) * x + m(2, 1) * y + m(2, 2) * z + m(2, 3);
      out[std::size_t(x) + std::size_t(tx) * (std::size_t(y) + std::size_t(ty) * z)] =
          sample_trilinear(src, sx, sy, sz, px, py, pz);
    }
  }
}

} // namespace

void warp_trilinear(const double* src, int sx, int sy, int sz,
                    const Eigen::Matrix4d& tgt_to_src, double* out, int tx,
                    int ty, int tz, Exec exec) {
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (int z = 0; z < tz; ++z) warp_slice(src, sx, sy, sz, tgt_to_src, out, tx, ty, z);
  } else {
    for (int z = 0; z < tz; ++z) warp_slice(src, sx, sy, sz, tgt_to_src, out, tx, ty, z);
  }
}

namespace {

struct NccPartial {
  double n = 0, sf = 0, sm = 0, sff = 0, smm = 0, sfm = 0;
};

inline NccPartial ncc_slice(const double* fixed, int fx, int fy, const double* moving,
                            int mx, int my, int mz, const Eigen::Matrix4d& m, int z) {
  NccPartial p;
  for (int y = 0; y < fy; ++y) {
    for (int x = 0; x < fx; ++x) {
      const double px = m(0, 0) * x + m(0, 1) * y + m(0, 2) * z + m(0, 3);
      const double py = m(1, 0) * x + m(1, 1) * y + m(1, 2) * z + m(1, 3);
      const double pz = m(2, 0) * x + m(2, 1) * y + m(2, 2) * z + m(2, 3);
      bool in = false;
      const double mv = sample_trilinear(moving, mx, my, mz, px, py, pz, &in);
      if (!in) continue;
      const double fv = fixed[std::size_t(x) + std::size_t(fx) * (std::size_t(y) + std::size_t(fy) * z)];
      p.n += 1.0;
      p.sf += fv;
      p.sm += mv;
      p.sff += fv * fv;
      p.smm += mv * mv;
      p.sfm += fv * mv;
    }
  }
  return p;
}

} // namespace

double ncc_warped(const double* fixed, int fx, int fy, int fz,
                  const double* moving, int mx, int my, int mz,
                  const Eigen::Matrix4d& fixed_to_moving, Exec exec) {
  std::vector<NccPartial> partials(static_cast<std::size_t>(fz));
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (int z = 0; z < fz; ++z)
      partials[std::size_t(z)] = ncc_slice(fixed, fx, fy, moving, mx, my, mz, fixed_to_moving, z);
  } else {
    for (int z = 0; z < fz; ++z)
      partials[std::size_t(z)] = ncc_slice(fixed, fx, fy, moving, mx, my, mz, fixed_to_moving, z);
  }
  NccPartial t;
  for (const auto& p : partials) { // fixed combine order
    t.n += p.n;
    t.sf += p.sf;
    t.sm += p.sm;
    t.sff += p.sff;
    t.smm += p.smm;
    t.sfm += p.sfm;
  }
  if (t.n < 2.0) return std::numeric_limits<double>::quiet_NaN();
  const double varf = t.n * t.sff - t.sf * t.sf;
  const double varm = t.n * t.smm - t.sm * t.sm;
  if (varf <= 0.0 || varm <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (t.n * t.sfm - t.sf * t.sm) / std::sqrt(varf * varm);
}

void downsample2(const double* in, int nx, int ny, int nz, std::vector<double>& out,
                 int& ox, int& oy, int& oz) {
  ox = std::max(1, nx / 2);
  oy = std::max(1, ny / 2);
  oz = std::max(1, nz / 2);
  out.assign(std::size_t(ox) * oy * oz, 0.0);
  for (int z = 0; z < oz; ++z) {
    for (int y = 0; y < oy; ++y) {
      for (int x = 0; x < ox; ++x) {
        double acc = 0.0;
        int cnt = 0;
        for (int dz = 0; dz < 2; ++dz) {
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const int xx = 2 * x + dx, yy = 2 * y + dy, zz = 2 * z + dz;
              if (xx >= nx || yy >= ny || zz >= nz) continue;
              acc += in[std::size_t(xx) + std::size_t(nx) * (std::size_t(yy) + std::size_t(ny) * zz)];
              ++cnt;
            }
          }
        }
        out[std::size_t(x) + std::size_t(ox) * (std::size_t(y) + std::size_t(oy) * z)] = acc / cnt;
      }
    }
  }
}

} // namespace rsn::kernels
