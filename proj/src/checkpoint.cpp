#include "lfx/autodiff/checkpoint.hpp"

#include <fstream>
#include <string>

#include "lfx/detail/binary.hpp"

namespace lfx::ad {

namespace {
constexpr char kMagic[4] = {'L', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterStore<float>& params,
                     const nlohmann::json& model) {
  nlohmann::json manifest;
  manifest["format"] = "lfx-checkpoint";
  manifest["version"] = kVersion;
  manifest["model"] = model;
  manifest["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : params.entries()) {
    manifest["tensors"].push_back(
        {{"name", name}, {"shape", t.shape()}, {"dtype", "float32"}, {"offset", offset}, {"count", t.size()}});
    offset += t.size();
  }
  const std::string text = manifest.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write(kMagic, 4);
    detail::write_le<std::uint32_t>(os, kVersion);
    detail::write_le<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : params.entries())
      for (Eigen::Index i = 0; i < t.value().size(); ++i) detail::write_le<float>(os, t.value()[i]);
    if (!os) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4))
    throw IoError("not an LFCK checkpoint: " + path.string());
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto len = detail::read_le<std::uint64_t>(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw IoError("truncated checkpoint manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  Checkpoint ck;
  ck.model = manifest.value("model", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    if (entry.at("dtype") != "float32") throw IoError("unsupported tensor dtype in checkpoint");
    const auto shape = entry.at("shape").get<Shape>();
    Buffer<float> values(static_cast<Eigen::Index>(numel(shape)));
    for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = detail::read_le<float>(is);
    ck.params.add(entry.at("name").get<std::string>(), shape, std::move(values));
  }
  return ck;
}

}  // namespace lfx::ad
