#include "petrec/nn/checkpoint.hpp"

#include <fstream>
#include <span>

#include "../binary_io.hpp"

namespace petrec::nn {

using nlohmann::json;

template <typename T>
Checkpoint Checkpoint::capture(Module<T>& module, json meta) {
  Checkpoint ckpt;
  ckpt.meta = std::move(meta);
  for (auto* p : module.params()) {
    if (ckpt.tensors.count(p->name)) throw CheckpointError("duplicate parameter name '" + p->name + "'");
    ckpt.tensors.emplace(p->name, p->value.template cast<float>());
  }
  return ckpt;
}

template <typename T>
void Checkpoint::restore(Module<T>& module) const {
  for (auto* p : module.params()) {
    const auto it = tensors.find(p->name);
    if (it == tensors.end()) throw CheckpointError("checkpoint is missing parameter '" + p->name + "'");
    if (it->second.shape() != p->value.shape())
      throw CheckpointError("parameter '" + p->name + "' has shape " + to_string(it->second.shape()) +
                            " in checkpoint, model expects " + to_string(p->value.shape()));
    p->value = it->second.template cast<T>();
  }
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json header;
  header["magic"] = "PCKPT1";
  header["dtype"] = "f32le";
  header["meta"] = ckpt.meta;
  json entries = json::array();
  Index offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  header["tensors"] = entries;

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  os << header.dump() << '\n';
  for (const auto& [name, t] : ckpt.tensors)
    detail::write_f32le(os, std::span<const float>(t.data(), static_cast<std::size_t>(t.size())));
  if (!os) throw CheckpointError("write failed for '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw CheckpointError(path.string() + ": missing header line");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": header is not valid JSON: " + e.what());
  }
  if (header.value("magic", "") != "PCKPT1") throw CheckpointError(path.string() + ": bad magic");
  if (header.value("dtype", "") != "f32le") throw CheckpointError(path.string() + ": unsupported dtype");

  Checkpoint ckpt;
  ckpt.meta = header.value("meta", json::object());
  Index expected_offset = 0;
  for (const auto& e : header.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    if (e.at("offset").get<Index>() != expected_offset)
      throw CheckpointError(path.string() + ": tensor '" + name + "' has a non-contiguous offset");
    Tensor<float> t(shape);
    if (!detail::read_f32le(is, std::span<float>(t.data(), static_cast<std::size_t>(t.size()))))
      throw CheckpointError(path.string() + ": truncated payload in tensor '" + name + "'");
    expected_offset += t.size();
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

template Checkpoint Checkpoint::capture<float>(Module<float>&, json);
template Checkpoint Checkpoint::capture<double>(Module<double>&, json);
template void Checkpoint::restore<float>(Module<float>&) const;
template void Checkpoint::restore<double>(Module<double>&) const;

}  // namespace petrec::nn
