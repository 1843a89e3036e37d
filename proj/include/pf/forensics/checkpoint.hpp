#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "pf/diffcore/graph.hpp"
#include "pf/forensics/classifier.hpp"

namespace pf {

// Binary container: 8-byte magic, u32 version, u64 header length, a JSON
// header {model, tensors: [{name, shape}], meta}, then the tensors' float32
// values (little-endian) in header order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string model;  // BackboneSpec text, or an adversary network descriptor
  StateDict<float> state;
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Classifier convenience wrappers; meta carries "native" plus caller fields.
void save_classifier(const Classifier& model, const std::filesystem::path& path, nlohmann::json meta = {});
Classifier load_classifier(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

// FNV-1a over parameter names, shapes and bytes; used to prove a network is untouched.
std::uint64_t state_hash(const StateDict<float>& state);

}  // namespace pf
