#pragma once

#include <cstdint>
#include <filesystem>

#include "hnrfs/volume.hpp"

namespace hnrfs {

/// NIfTI-1 datatype codes this reader understands.
enum class NiftiType : std::int16_t {
  uint8 = 2,
  int16 = 4,
  int32 = 8,
  float32 = 16,
  float64 = 64,
};

/// Single-file uncompressed NIfTI-1 (.nii). Endianness is detected from
/// dim[0]; origin comes from qoffset (qform) or the srow translation
/// (sform). Throws FormatError, UnsupportedFormat or IoError.
ScalarVolume read_scalar_nifti(const std::filesystem::path& path);

/// As read_scalar_nifti, then casts to labels; any value outside {0,1,2}
/// (or non-integral) raises ValidationError naming it.
LabelVolume read_label_nifti(const std::filesystem::path& path);

/// Scalars are stored as float32, labels as uint8, little-endian.
void write_nifti(const ScalarVolume& vol, const std::filesystem::path& path);
void write_nifti(const LabelVolume& vol, const std::filesystem::path& path);

}  // namespace hnrfs
