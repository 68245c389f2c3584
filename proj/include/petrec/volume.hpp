#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "petrec/nn/tensor.hpp"

namespace petrec {

enum class Modality { FPET, LPET, Generated, Refined, Atlas };

std::string_view to_string(Modality m);
Modality modality_from_string(std::string_view s);

struct Dims {
  Index depth = 0;
  Index height = 0;
  Index width = 0;

  Index voxels() const { return depth * height * width; }
  Index slice_pixels() const { return height * width; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& d);

/// One (H x W) slice, row-major.
using Image = RowMatrix<float>;

/// Dense 3D scalar field stored in (D, H, W) row-major order.
template <typename Scalar>
struct Volume {
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using SliceMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstSliceMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Dims dims;
  std::array<double, 3> voxel_size_mm{1.0, 1.0, 1.0};
  std::string subject_id;
  Modality modality = Modality::FPET;
  Storage data;

  Volume() = default;
  Volume(Dims d, std::string id, Modality m, Scalar fill = Scalar(0))
      : dims(d), subject_id(std::move(id)), modality(m), data(Storage::Constant(d.voxels(), fill)) {}

  Index index(Index d, Index h, Index w) const { return (d * dims.height + h) * dims.width + w; }
  Scalar& at(Index d, Index h, Index w) { return data[index(d, h, w)]; }
  const Scalar& at(Index d, Index h, Index w) const { return data[index(d, h, w)]; }

  SliceMap slice(Index t) { return SliceMap(data.data() + t * dims.slice_pixels(), dims.height, dims.width); }
  ConstSliceMap slice(Index t) const {
    return ConstSliceMap(data.data() + t * dims.slice_pixels(), dims.height, dims.width);
  }
};

using Volume3D = Volume<float>;
using LabelVolume = Volume<std::uint8_t>;

class VolumeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws VolumeError unless dims are positive, storage matches dims and
/// every voxel is finite and non-negative.
void validate(const Volume3D& vol);

/// Ordered stack of 2r+1 contiguous slices centred on t0.
struct SliceWindow {
  std::vector<Image> slices;
  Index center_index = 0;
  std::string subject_id;
  Index t0 = 0;

  Index radius() const { return center_index; }
  Index count() const { return static_cast<Index>(slices.size()); }
  const Image& center() const { return slices.at(static_cast<std::size_t>(center_index)); }
};

/// Slices [t0-r, t0+r]; indices outside [0, D) replicate the nearest edge slice.
SliceWindow extract_window(const Volume3D& vol, Index t0, Index r);

/// Pack windows into an (N, 2r+1, H, W) tensor.
template <typename T>
Tensor<T> to_tensor(const std::vector<SliceWindow>& windows);

/// Pack images into an (N, 1, H, W) tensor.
template <typename T>
Tensor<T> images_to_tensor(const std::vector<Image>& images);

/// Unpack channel 0 of an (N, C, H, W) tensor into N images.
template <typename T>
std::vector<Image> tensor_to_images(const Tensor<T>& t);

}  // namespace petrec
