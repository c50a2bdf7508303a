#include "promptreg/manifest.hpp"

#include <cstdio>

#include "promptreg/error.hpp"
#include "promptreg/io.hpp"

namespace promptreg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string numbered(const char* prefix, long long n) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%05lld", prefix, n);
  return buf;
}

json slice_json(const std::optional<std::int64_t>& s) {
  return s ? json(*s) : json(nullptr);
}

std::optional<std::int64_t> slice_from(const json& entry) {
  if (!entry.contains("slice") || entry["slice"].is_null()) return std::nullopt;
  return entry["slice"].get<std::int64_t>();
}

}  // namespace

void write_response(const PromptResponse& response, const fs::path& dir,
                    const std::string& manifest_name) {
  fs::create_directories(dir / "masks");
  fs::create_directories(dir / "embeddings");
  json j;
  j["rois"] = json::array();
  for (const auto& roi : response.rois) {
    const std::string mask_file = "masks/" + numbered("roi_", roi.id) + kHeaderSuffix;
    write_mask(roi.mask, dir / mask_file);
    json box = json::array();
    for (int a = 0; a < roi.box.rank; ++a) box.push_back(roi.box.lo[a]);
    for (int a = 0; a < roi.box.rank; ++a) box.push_back(roi.box.hi[a]);
    j["rois"].push_back({{"id", roi.id},
                         {"prompt", roi.prompt},
                         {"slice", slice_json(roi.slice_index)},
                         {"box", box},
                         {"score", roi.box.score},
                         {"mask", mask_file}});
  }
  j["embeddings"] = json::array();
  for (const auto& e : response.embeddings) {
    const std::string file =
        "embeddings/" +
        (e.slice_index ? numbered("slice_", *e.slice_index) : std::string("whole")) +
        kHeaderSuffix;
    write_embedding(e.grid, dir / file);
    j["embeddings"].push_back({{"slice", slice_json(e.slice_index)}, {"file", file}});
  }
  write_text(dir / manifest_name, j.dump(2));
}

PromptResponse read_response(const fs::path& manifest, ImageTag tag) {
  if (!fs::exists(manifest)) throw FormatError("missing manifest " + manifest.string());
  const fs::path dir = manifest.parent_path();
  PromptResponse response;
  try {
    const json j = json::parse(read_text(manifest));
    int index = 0;
    for (const auto& r : j.at("rois")) {
      RoiRecord roi;
      roi.id = r.value("id", index);
      ++index;
      roi.prompt = r.at("prompt").get<std::string>();
      roi.slice_index = slice_from(r);
      roi.source = tag;
      roi.mask = read_mask(dir / r.at("mask").get<std::string>());
      const auto box = r.at("box").get<std::vector<std::int64_t>>();
      if (box.size() != 4 && box.size() != 6) {
        throw FormatError("box needs 4 or 6 coordinates");
      }
      roi.box.rank = static_cast<int>(box.size() / 2);
      for (int a = 0; a < roi.box.rank; ++a) {
        roi.box.lo[a] = box[static_cast<std::size_t>(a)];
        roi.box.hi[a] = box[static_cast<std::size_t>(a + roi.box.rank)];
      }
      roi.box.score = r.at("score").get<double>();
      roi.box.prompt = roi.prompt;
      roi.box.slice_index = roi.slice_index;
      response.rois.push_back(std::move(roi));
    }
    for (const auto& e : j.at("embeddings")) {
      response.embeddings.push_back(
          {slice_from(e), read_embedding(dir / e.at("file").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + manifest.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw FormatError("manifest " + manifest.string() + " references a missing file: " +
                      e.what());
  }
  return response;
}

}  // namespace promptreg
