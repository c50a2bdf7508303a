#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "promptreg/volume.hpp"

namespace promptreg {

// On-disk container: `<name>.t2r.json` header plus a packed little-endian
// `<name>.t2r.raw` payload next to it (axis-0 fastest, channel-last).
inline constexpr const char* kHeaderSuffix = ".t2r.json";
inline constexpr const char* kRawSuffix = ".t2r.raw";

enum class ArtifactKind { Volume, Mask, Embedding };

struct HeaderInfo {
  ArtifactKind kind = ArtifactKind::Volume;
  Geometry geometry;
  int channels = 1;
  std::optional<std::string> role;
  std::filesystem::path raw;  // resolved against the header's directory
};

// Raw payload path paired with a header path; throws FormatError when the
// header name lacks the `.t2r.json` suffix.
std::filesystem::path raw_path_for(const std::filesystem::path& header);

// Parses and validates a header without touching the payload.
HeaderInfo read_header(const std::filesystem::path& header);

Volume read_volume(const std::filesystem::path& header);
BinaryMask read_mask(const std::filesystem::path& header);
EmbeddingGrid read_embedding(const std::filesystem::path& header);

void write_volume(const Volume& volume, const std::filesystem::path& header);
void write_mask(const BinaryMask& mask, const std::filesystem::path& header);
// `role` is an optional annotation, e.g. "ddf" for displacement fields.
void write_embedding(const EmbeddingGrid& grid,
                     const std::filesystem::path& header,
                     const std::optional<std::string>& role = std::nullopt);

// Shared text helpers for JSON artifacts: write with a trailing newline,
// read whole file.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace promptreg
