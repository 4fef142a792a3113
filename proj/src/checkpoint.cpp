#include "m2cnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "m2cnn/error.hpp"

namespace m2cnn {

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::string& in, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return v;
}

constexpr std::size_t kHeaderSize = 4 + 4 + 8;

}  // namespace

std::string encode_checkpoint(const ParamStore& params, const ArchConfig& arch) {
  nlohmann::json manifest;
  manifest["arch"] = arch;
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& e : params.entries()) {
    manifest["tensors"].push_back({{"name", e.name}, {"shape", e.tensor.shape()}, {"group", group_name(e.group)}});
  }
  const std::string text = manifest.dump();
  std::string out(kCheckpointMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& e : params.entries())
    for (double v : e.tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("not a checkpoint: bad magic (expected \"M2CN\")");
  }
  if (bytes.size() < kHeaderSize) throw CorruptionError("checkpoint header truncated");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw FormatError(
        fmt::format("checkpoint format version {} is not supported (this build reads version {})", version,
                    kCheckpointVersion));
  }
  const auto manifest_len = get_le<std::uint64_t>(bytes, 8);
  if (manifest_len > bytes.size() - kHeaderSize) throw CorruptionError("checkpoint manifest truncated");

  Checkpoint ck;
  std::vector<std::pair<std::string, std::pair<Shape, ParamGroup>>> layout;
  try {
    const auto manifest = nlohmann::json::parse(bytes.substr(kHeaderSize, manifest_len));
    ck.arch = manifest.at("arch").get<ArchConfig>();
    for (const auto& t : manifest.at("tensors")) {
      layout.push_back({t.at("name").get<std::string>(),
                        {t.at("shape").get<Shape>(), parse_group(t.at("group").get<std::string>())}});
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(fmt::format("checkpoint manifest unreadable: {}", e.what()));
  } catch (const Error& e) {
    throw CorruptionError(fmt::format("checkpoint manifest invalid: {}", e.what()));
  }

  std::size_t expected = 0;
  for (const auto& [name, info] : layout) expected += shape_size(info.first);
  const std::size_t payload = bytes.size() - kHeaderSize - manifest_len;
  if (payload != expected * 8) {
    throw CorruptionError(fmt::format("checkpoint payload holds {} bytes but the manifest describes {}", payload,
                                      expected * 8));
  }
  std::size_t offset = kHeaderSize + manifest_len;
  for (auto& [name, info] : layout) {
    try {
      Tensor t(info.first);
      for (auto& v : t.values()) {
        v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, offset));
        offset += 8;
      }
      ck.params.add(name, std::move(t), info.second);
    } catch (const Error& e) {
      throw CorruptionError(fmt::format("checkpoint tensor '{}': {}", name, e.what()));
    }
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const ArchConfig& arch) {
  const std::string bytes = encode_checkpoint(params, arch);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write checkpoint {}", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(fmt::format("short write to {}", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open checkpoint {}", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace m2cnn
