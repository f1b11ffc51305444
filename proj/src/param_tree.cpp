#include "modcomp/param_tree.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace modcomp {

namespace {
using nlohmann::json;
}

void save_checkpoint(const std::filesystem::path& dir, const ParamTree& tree) {
  std::filesystem::create_directories(dir);
  json manifest = json::array();
  std::ofstream bin(dir / "params.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw DataError("checkpoint: cannot write " + (dir / "params.bin").string());
  std::int64_t offset = 0;
  for (const auto& [name, t] : tree.entries) {
    const std::int64_t bytes = t.numel() * static_cast<std::int64_t>(sizeof(float));
    manifest.push_back({{"name", name},
                        {"shape", t.shape},
                        {"dtype", "f32"},
                        {"offset", offset},
                        {"length", bytes}});
    bin.write(reinterpret_cast<const char*>(t.ptr()), bytes);
    offset += bytes;
  }
  bin.close();
  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) throw DataError("checkpoint: cannot write " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << "\n";
}

ParamTree load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const auto bin_path = dir / "params.bin";
  std::ifstream mf(manifest_path);
  if (!mf) throw SetupError("checkpoint: missing " + manifest_path.string());
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw DataError("checkpoint: corrupted manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!manifest.is_array())
    throw DataError("checkpoint: corrupted manifest " + manifest_path.string());

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw SetupError("checkpoint: missing " + bin_path.string());
  bin.seekg(0, std::ios::end);
  const std::int64_t file_bytes = static_cast<std::int64_t>(bin.tellg());

  ParamTree tree;
  for (const auto& entry : manifest) {
    try {
      const std::string name = entry.at("name").get<std::string>();
      const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
      const std::int64_t offset = entry.at("offset").get<std::int64_t>();
      const std::int64_t length = entry.at("length").get<std::int64_t>();
      if (entry.at("dtype").get<std::string>() != "f32")
        throw DataError("checkpoint: unsupported dtype in " + manifest_path.string());
      if (offset < 0 || length < 0 || offset + length > file_bytes)
        throw DataError("checkpoint: corrupted manifest " + manifest_path.string() +
                        " (entry '" + name + "' out of bounds)");
      Tensor t = Tensor::zeros(shape);
      if (t.numel() * static_cast<std::int64_t>(sizeof(float)) != length)
        throw DataError("checkpoint: corrupted manifest " + manifest_path.string() +
                        " (entry '" + name + "' length mismatch)");
      bin.seekg(offset);
      bin.read(reinterpret_cast<char*>(t.ptr()), length);
      if (!bin)
        throw DataError("checkpoint: truncated " + bin_path.string());
      tree.entries.emplace(name, std::move(t));
    } catch (const json::exception& e) {
      throw DataError("checkpoint: corrupted manifest " + manifest_path.string() + ": " + e.what());
    }
  }
  return tree;
}

}  // namespace modcomp
