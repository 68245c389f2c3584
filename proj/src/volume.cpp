#include "petrec/volume.hpp"

#include <algorithm>
#include <cmath>

namespace petrec {

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::FPET: return "FPET";
    case Modality::LPET: return "LPET";
    case Modality::Generated: return "GENERATED";
    case Modality::Refined: return "REFINED";
    case Modality::Atlas: return "ATLAS";
  }
  return "FPET";
}

Modality modality_from_string(std::string_view s) {
  if (s == "FPET") return Modality::FPET;
  if (s == "LPET") return Modality::LPET;
  if (s == "GENERATED") return Modality::Generated;
  if (s == "REFINED") return Modality::Refined;
  if (s == "ATLAS") return Modality::Atlas;
  throw VolumeError("modality: unknown value '" + std::string(s) + "'");
}

std::string to_string(const Dims& d) {
  return "(" + std::to_string(d.depth) + ", " + std::to_string(d.height) + ", " + std::to_string(d.width) + ")";
}

void validate(const Volume3D& vol) {
  if (vol.dims.depth < 1 || vol.dims.height < 1 || vol.dims.width < 1)
    throw VolumeError("volume '" + vol.subject_id + "': dims " + to_string(vol.dims) + " must all be >= 1");
  if (vol.data.size() != vol.dims.voxels())
    throw VolumeError("volume '" + vol.subject_id + "': data length " + std::to_string(vol.data.size()) +
                      " != D*H*W = " + std::to_string(vol.dims.voxels()));
  if (!vol.data.isFinite().all()) throw VolumeError("volume '" + vol.subject_id + "': non-finite voxel");
  if ((vol.data < 0.0f).any()) throw VolumeError("volume '" + vol.subject_id + "': negative voxel");
}

SliceWindow extract_window(const Volume3D& vol, Index t0, Index r) {
  if (t0 < 0 || t0 >= vol.dims.depth)
    throw std::out_of_range("extract_window: t0=" + std::to_string(t0) + " outside [0, " +
                            std::to_string(vol.dims.depth) + ")");
  if (r < 0) throw std::invalid_argument("extract_window: radius must be >= 0");
  SliceWindow w;
  w.center_index = r;
  w.subject_id = vol.subject_id;
  w.t0 = t0;
  w.slices.reserve(static_cast<std::size_t>(2 * r + 1));
  for (Index t = t0 - r; t <= t0 + r; ++t) w.slices.emplace_back(vol.slice(std::clamp<Index>(t, 0, vol.dims.depth - 1)));
  return w;
}

template <typename T>
Tensor<T> to_tensor(const std::vector<SliceWindow>& windows) {
  if (windows.empty()) throw ShapeError("to_tensor: no windows");
  const Index n = static_cast<Index>(windows.size()), c = windows[0].count();
  const Index h = windows[0].center().rows(), w = windows[0].center().cols();
  Tensor<T> out({n, c, h, w});
  for (Index i = 0; i < n; ++i) {
    const auto& win = windows[static_cast<std::size_t>(i)];
    if (win.count() != c) throw ShapeError("to_tensor: windows have different slice counts");
    for (Index s = 0; s < c; ++s) {
      const auto& img = win.slices[static_cast<std::size_t>(s)];
      if (img.rows() != h || img.cols() != w) throw ShapeError("to_tensor: slices have different sizes");
      out.matrix(h, w, (i * c + s) * h * w) = img.template cast<T>();
    }
  }
  return out;
}

template <typename T>
Tensor<T> images_to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw ShapeError("images_to_tensor: no images");
  const Index n = static_cast<Index>(images.size()), h = images[0].rows(), w = images[0].cols();
  Tensor<T> out({n, 1, h, w});
  for (Index i = 0; i < n; ++i) {
    const auto& img = images[static_cast<std::size_t>(i)];
    if (img.rows() != h || img.cols() != w) throw ShapeError("images_to_tensor: images have different sizes");
    out.matrix(h, w, i * h * w) = img.template cast<T>();
  }
  return out;
}

template <typename T>
std::vector<Image> tensor_to_images(const Tensor<T>& t) {
  require_rank(t, 4, "tensor_to_images");
  const Index n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out.emplace_back(t.matrix(h, w, i * c * h * w).template cast<float>());
  return out;
}

template Tensor<float> to_tensor<float>(const std::vector<SliceWindow>&);
template Tensor<double> to_tensor<double>(const std::vector<SliceWindow>&);
template Tensor<float> images_to_tensor<float>(const std::vector<Image>&);
template Tensor<double> images_to_tensor<double>(const std::vector<Image>&);
template std::vector<Image> tensor_to_images<float>(const Tensor<float>&);
template std::vector<Image> tensor_to_images<double>(const Tensor<double>&);

}  // namespace petrec
