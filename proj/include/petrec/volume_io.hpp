#pragma once

#include <filesystem>
#include <stdexcept>

#include "petrec/volume.hpp"

namespace petrec {

/// Raised for malformed .pvol files; what() names the offending field.
class VolumeFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// .pvol: one JSON header line
//   {"magic":"PVOL1","dims":[D,H,W],"voxel_size_mm":[a,b,c],"dtype":"f32le"|"u8",
//    "subject_id":..,"modality":..}
// then D*H*W little-endian values in (D, H, W) row-major order.

void write_volume(const Volume3D& vol, const std::filesystem::path& path);
Volume3D read_volume(const std::filesystem::path& path);

void write_labels(const LabelVolume& vol, const std::filesystem::path& path);
LabelVolume read_labels(const std::filesystem::path& path);

}  // namespace petrec
