#include "promptreg/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "promptreg/error.hpp"

namespace promptreg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr bool kHostLittle = std::endian::native == std::endian::little;

const char* kind_name(ArtifactKind k) {
  switch (k) {
    case ArtifactKind::Volume: return "volume";
    case ArtifactKind::Mask: return "mask";
    case ArtifactKind::Embedding: return "embedding";
  }
  return "?";
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const fs::path& path, const char* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(data, static_cast<std::streamsize>(n));
  if (!out) throw IoError("short write to " + path.string());
}

std::string encode_f32(std::span<const float> values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) {
      bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
    }
  }
  return bytes;
}

std::vector<float> decode_f32(const std::string& bytes) {
  std::vector<float> values(bytes.size() / 4);
  if constexpr (kHostLittle) {
    std::memcpy(values.data(), bytes.data(), values.size() * 4);
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(
                    static_cast<unsigned char>(bytes[i * 4 + b]))
                << (8 * b);
      }
      values[i] = std::bit_cast<float>(bits);
    }
  }
  return values;
}

json header_json(ArtifactKind kind, const Geometry& g, int channels,
                 const fs::path& header, const std::optional<std::string>& role) {
  json j;
  j["kind"] = kind_name(kind);
  j["dims"] = json::array();
  j["spacing_mm"] = json::array();
  for (int a = 0; a < g.rank; ++a) {
    j["dims"].push_back(g.dims[a]);
    j["spacing_mm"].push_back(g.spacing[a]);
  }
  if (kind == ArtifactKind::Embedding) j["channels"] = channels;
  j["dtype"] = kind == ArtifactKind::Mask ? "u8" : "f32";
  j["byte_order"] = "le";
  j["raw"] = raw_path_for(header).filename().string();
  if (role) j["role"] = *role;
  return j;
}

void write_artifact(const fs::path& header, const json& j,
                    const std::string& payload) {
  write_bytes(raw_path_for(header), payload.data(), payload.size());
  write_text(header, j.dump(2));
}

// Loads the payload and checks its size against the header exactly.
std::string load_payload(const HeaderInfo& info, std::size_t element_size) {
  std::string bytes = read_bytes(info.raw);
  const std::size_t expected = info.geometry.voxel_count() *
                               static_cast<std::size_t>(info.channels) *
                               element_size;
  if (bytes.size() != expected) {
    throw FormatError("raw payload " + info.raw.string() + " has " +
                      std::to_string(bytes.size()) + " bytes, header implies " +
                      std::to_string(expected));
  }
  return bytes;
}

HeaderInfo expect_kind(const fs::path& header, ArtifactKind kind) {
  HeaderInfo info = read_header(header);
  if (info.kind != kind) {
    throw FormatError(header.string() + " holds a " + kind_name(info.kind) +
                      ", expected " + kind_name(kind));
  }
  return info;
}

}  // namespace

fs::path raw_path_for(const fs::path& header) {
  const std::string name = header.filename().string();
  const std::string suffix = kHeaderSuffix;
  if (name.size() <= suffix.size() ||
      name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) {
    throw FormatError("header name must end in " + suffix + ": " + name);
  }
  return header.parent_path() /
         (name.substr(0, name.size() - suffix.size()) + kRawSuffix);
}

HeaderInfo read_header(const fs::path& header) {
  if (!fs::exists(header)) throw IoError("missing header " + header.string());
  json j;
  try {
    j = json::parse(read_bytes(header));
  } catch (const json::exception& e) {
    throw FormatError("unparsable header " + header.string() + ": " + e.what());
  }
  try {
    HeaderInfo info;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "volume") {
      info.kind = ArtifactKind::Volume;
    } else if (kind == "mask") {
      info.kind = ArtifactKind::Mask;
    } else if (kind == "embedding") {
      info.kind = ArtifactKind::Embedding;
    } else {
      throw FormatError("unknown kind '" + kind + "'");
    }
    const auto dtype = j.at("dtype").get<std::string>();
    const char* want = info.kind == ArtifactKind::Mask ? "u8" : "f32";
    if (dtype != want) {
      throw FormatError("unsupported dtype '" + dtype + "' for " + kind);
    }
    if (j.value("byte_order", std::string("le")) != "le") {
      throw FormatError("unsupported byte order");
    }
    for (const auto& d : j.at("dims")) {
      if (!d.is_number_integer()) throw FormatError("dims must be integers");
    }
    const auto dims = j.at("dims").get<std::vector<std::int64_t>>();
    const auto spacing = j.at("spacing_mm").get<std::vector<double>>();
    try {
      info.geometry = Geometry::make(dims, spacing);
    } catch (const DomainError& e) {
      throw FormatError(e.what());
    }
    if (info.kind == ArtifactKind::Embedding) {
      info.channels = j.at("channels").get<int>();
      if (info.channels < 1) throw FormatError("channels must be >= 1");
    } else if (j.contains("channels") && j["channels"].get<int>() != 1) {
      throw FormatError("channels only apply to embeddings");
    }
    if (j.contains("role")) info.role = j["role"].get<std::string>();
    info.raw = header.parent_path() / j.at("raw").get<std::string>();
    return info;
  } catch (const json::exception& e) {
    throw FormatError("malformed header " + header.string() + ": " + e.what());
  }
}

Volume read_volume(const fs::path& header) {
  const HeaderInfo info = expect_kind(header, ArtifactKind::Volume);
  auto values = decode_f32(load_payload(info, 4));
  try {
    return Volume(info.geometry, std::move(values));
  } catch (const DomainError& e) {
    throw FormatError(header.string() + ": " + e.what());
  }
}

BinaryMask read_mask(const fs::path& header) {
  const HeaderInfo info = expect_kind(header, ArtifactKind::Mask);
  const std::string bytes = load_payload(info, 1);
  std::vector<std::uint8_t> values(bytes.begin(), bytes.end());
  try {
    return BinaryMask(info.geometry, std::move(values));
  } catch (const DomainError& e) {
    throw FormatError(header.string() + ": " + e.what());
  }
}

EmbeddingGrid read_embedding(const fs::path& header) {
  const HeaderInfo info = expect_kind(header, ArtifactKind::Embedding);
  auto values = decode_f32(load_payload(info, 4));
  try {
    return EmbeddingGrid(info.geometry, info.channels, std::move(values));
  } catch (const DomainError& e) {
    throw FormatError(header.string() + ": " + e.what());
  }
}

void write_volume(const Volume& volume, const fs::path& header) {
  write_artifact(header,
                 header_json(ArtifactKind::Volume, volume.geometry(), 1, header,
                             std::nullopt),
                 encode_f32(volume.voxels()));
}

void write_mask(const BinaryMask& mask, const fs::path& header) {
  const auto v = mask.voxels();
  write_artifact(header,
                 header_json(ArtifactKind::Mask, mask.geometry(), 1, header,
                             std::nullopt),
                 std::string(v.begin(), v.end()));
}

void write_embedding(const EmbeddingGrid& grid, const fs::path& header,
                     const std::optional<std::string>& role) {
  write_artifact(header,
                 header_json(ArtifactKind::Embedding, grid.geometry(),
                             grid.channels(), header, role),
                 encode_f32(grid.values()));
}

void write_text(const fs::path& path, const std::string& text) {
  std::string body = text;
  if (body.empty() || body.back() != '\n') body.push_back('\n');
  write_bytes(path, body.data(), body.size());
}

std::string read_text(const fs::path& path) { return read_bytes(path); }

}  // namespace promptreg
