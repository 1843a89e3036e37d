#include "pf/forensics/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace pf {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'F', 'C', 'K', 'P', 'T', '\0', '\0'};

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U get(std::istream& in, const std::filesystem::path& path) {
  U v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated checkpoint '" + path.string() + "'");
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header = {{"model", ckpt.model}, {"meta", ckpt.meta}, {"tensors", nlohmann::json::array()}};
  for (const auto& [name, t] : ckpt.state) header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), std::streamsize(text.size()));
  for (const auto& [name, t] : ckpt.state)
    out.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.size() * sizeof(float)));
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw IoError("'" + path.string() + "' is not a checkpoint");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint version " + std::to_string(version) + " is not supported");
  const auto len = get<std::uint64_t>(in, path);
  std::string text(len, '\0');
  if (!in.read(text.data(), std::streamsize(len))) throw IoError("truncated checkpoint '" + path.string() + "'");
  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(text);
    ckpt.model = header.at("model").get<std::string>();
    ckpt.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
      Tensor<float> tensor(t.at("shape").get<Shape>());
      if (!in.read(reinterpret_cast<char*>(tensor.data()), std::streamsize(tensor.size() * sizeof(float))))
        throw IoError("truncated checkpoint '" + path.string() + "'");
      ckpt.state.emplace_back(t.at("name").get<std::string>(), std::move(tensor));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in '" + path.string() + "': " + e.what());
  }
  return ckpt;
}

void save_classifier(const Classifier& model, const std::filesystem::path& path, nlohmann::json meta) {
  if (meta.is_null()) meta = nlohmann::json::object();
  meta["native"] = model.native;
  save_checkpoint({model.spec.to_string(), model.graph.state(), meta}, path);
}

Classifier load_classifier(const std::filesystem::path& path, nlohmann::json* meta) {
  const Checkpoint ckpt = load_checkpoint(path);
  Classifier model = make_classifier(BackboneSpec::parse(ckpt.model), 0, ckpt.meta.value("native", std::size_t{64}));
  model.graph.load_state(ckpt.state);
  model.graph.set_training(false);
  if (meta) *meta = ckpt.meta;
  return model;
}

std::uint64_t state_hash(const StateDict<float>& state) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 0x100000001b3ULL;
  };
  for (const auto& [name, t] : state) {
    feed(name.data(), name.size());
    for (auto d : t.shape()) feed(&d, sizeof d);
    feed(t.data(), t.size() * sizeof(float));
  }
  return h;
}

}  // namespace pf
