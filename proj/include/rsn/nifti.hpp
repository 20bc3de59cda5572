#pragma once

#include <string>

#include "rsn/volume.hpp"

namespace rsn {

// NIfTI-1 single-file (.nii / .nii.gz) reader and writer. The reader accepts
// both byte orders and applies scl_slope/scl_inter; the writer always emits
// little-endian files with scl_slope=1, scl_inter=0 and an sform matrix.
Volume4D read_nifti(const std::string& path);

void write_nifti(const Volume4D& vol, const std::string& path, bool gzip = false,
                 Datatype on_disk = Datatype::Float32);

// Parse just the 348-byte header from an in-memory buffer (exposed for
// header-fuzz tests and tools). Throws the same errors as read_nifti.
NiftiHeader parse_nifti_header(const unsigned char* bytes, std::size_t len);

} // namespace rsn
