#include "petrec/volume_io.hpp"

#include <fstream>
#include <span>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"

namespace petrec {

using nlohmann::json;

namespace {

template <typename Scalar>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<Scalar, float>) {
    return "f32le";
  } else {
    return "u8";
  }
}

template <typename Scalar>
void write_any(const Volume<Scalar>& vol, const std::filesystem::path& path) {
  if (vol.data.size() != vol.dims.voxels())
    throw VolumeFormatError("dims: product " + std::to_string(vol.dims.voxels()) + " != data length " +
                            std::to_string(vol.data.size()));
  json header;
  header["magic"] = "PVOL1";
  header["dims"] = {vol.dims.depth, vol.dims.height, vol.dims.width};
  header["voxel_size_mm"] = vol.voxel_size_mm;
  header["dtype"] = dtype_name<Scalar>();
  header["subject_id"] = vol.subject_id;
  header["modality"] = std::string(to_string(vol.modality));

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw VolumeFormatError("path: cannot open '" + path.string() + "' for writing");
  os << header.dump() << '\n';
  if constexpr (std::is_same_v<Scalar, float>) {
    detail::write_f32le(os, std::span<const float>(vol.data.data(), static_cast<std::size_t>(vol.data.size())));
  } else {
    os.write(reinterpret_cast<const char*>(vol.data.data()), static_cast<std::streamsize>(vol.data.size()));
  }
  if (!os) throw VolumeFormatError("path: write failed for '" + path.string() + "'");
}

template <typename T>
T field(const json& header, const char* key, const std::filesystem::path& path) {
  if (!header.contains(key)) throw VolumeFormatError(std::string(key) + ": missing in header of " + path.string());
  try {
    return header.at(key).get<T>();
  } catch (const json::exception&) {
    throw VolumeFormatError(std::string(key) + ": wrong type in header of " + path.string());
  }
}

template <typename Scalar>
Volume<Scalar> read_any(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw VolumeFormatError("path: cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw VolumeFormatError("header: missing in " + path.string());
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw VolumeFormatError(std::string("header: invalid JSON in ") + path.string() + ": " + e.what());
  }
  if (!header.is_object()) throw VolumeFormatError("header: not a JSON object in " + path.string());
  if (field<std::string>(header, "magic", path) != "PVOL1") throw VolumeFormatError("magic: expected PVOL1");

  const auto dtype = field<std::string>(header, "dtype", path);
  if (dtype != dtype_name<Scalar>())
    throw VolumeFormatError("dtype: file has '" + dtype + "', expected '" + dtype_name<Scalar>() + "'");

  const auto dims = field<std::vector<Index>>(header, "dims", path);
  if (dims.size() != 3 || dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
    throw VolumeFormatError("dims: expected three positive integers");
  const auto voxel = field<std::vector<double>>(header, "voxel_size_mm", path);
  if (voxel.size() != 3) throw VolumeFormatError("voxel_size_mm: expected three numbers");

  Volume<Scalar> vol;
  vol.dims = Dims{dims[0], dims[1], dims[2]};
  vol.voxel_size_mm = {voxel[0], voxel[1], voxel[2]};
  vol.subject_id = field<std::string>(header, "subject_id", path);
  try {
    vol.modality = modality_from_string(field<std::string>(header, "modality", path));
  } catch (const VolumeError& e) {
    throw VolumeFormatError(e.what());
  }

  vol.data.resize(vol.dims.voxels());
  bool complete;
  if constexpr (std::is_same_v<Scalar, float>) {
    complete = detail::read_f32le(is, std::span<float>(vol.data.data(), static_cast<std::size_t>(vol.data.size())));
  } else {
    is.read(reinterpret_cast<char*>(vol.data.data()), static_cast<std::streamsize>(vol.data.size()));
    complete = is.gcount() == static_cast<std::streamsize>(vol.data.size());
  }
  if (!complete)
    throw VolumeFormatError("payload: truncated, dims " + to_string(vol.dims) + " need " +
                            std::to_string(vol.dims.voxels()) + " values");
  if (is.peek() != std::char_traits<char>::eof())
    throw VolumeFormatError("payload: longer than dims " + to_string(vol.dims) + " allow");
  return vol;
}

}  // namespace

void write_volume(const Volume3D& vol, const std::filesystem::path& path) { write_any(vol, path); }
Volume3D read_volume(const std::filesystem::path& path) { return read_any<float>(path); }
void write_labels(const LabelVolume& vol, const std::filesystem::path& path) { write_any(vol, path); }
LabelVolume read_labels(const std::filesystem::path& path) { return read_any<std::uint8_t>(path); }

}  // namespace petrec
