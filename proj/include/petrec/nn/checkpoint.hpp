#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "petrec/nn/layer.hpp"

namespace petrec::nn {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Self-describing parameter container.
///
/// Layout: one UTF-8 JSON line
///   {"magic":"PCKPT1","dtype":"f32le","meta":{...},
///    "tensors":[{"name":..,"shape":[..],"offset":<element offset>}, ...]}
/// terminated by '\n', followed by the concatenated little-endian float32
/// payloads in the order listed.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor<float>> tensors;

  /// Snapshot every parameter of `module` (trainable or not).
  template <typename T>
  static Checkpoint capture(Module<T>& module, nlohmann::json meta = nlohmann::json::object());

  /// Copy stored tensors into `module`. Every module parameter must be present
  /// with a matching shape.
  template <typename T>
  void restore(Module<T>& module) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace petrec::nn
