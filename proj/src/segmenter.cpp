#include "promptreg/segmenter.hpp"

#include <algorithm>
#include <cctype>

#include "promptreg/error.hpp"
#include "promptreg/fixture.hpp"
#include "promptreg/io.hpp"
#include "promptreg/sidecar.hpp"

namespace promptreg {

const char* tag_name(ImageTag tag) {
  return tag == ImageTag::Fixed ? "fixed" : "moving";
}

const EmbeddingGrid* PromptResponse::embedding_for(
    std::optional<std::int64_t> slice) const {
  const EmbeddingGrid* whole = nullptr;
  for (const auto& e : embeddings) {
    if (e.slice_index == slice) return &e.grid;
    if (!e.slice_index) whole = &e.grid;
  }
  return whole;
}

int PromptResponse::channels() const {
  return embeddings.empty() ? 0 : embeddings.front().grid.channels();
}

void FilterPolicy::validate() const {
  if (!(min_area_fraction > 0.0 && min_area_fraction < max_area_fraction &&
        max_area_fraction <= 1.0)) {
    throw DomainError("filter policy needs 0 < min_area_fraction < max_area_fraction <= 1");
  }
  if (!(min_score >= 0.0 && min_score <= 1.0)) {
    throw DomainError("filter policy min_score must lie in [0,1]");
  }
}

bool FilterPolicy::admits(const RoiRecord& roi) const {
  const double fraction = static_cast<double>(roi.box.extent()) /
                          static_cast<double>(roi.mask.geometry().voxel_count());
  return fraction >= min_area_fraction && fraction <= max_area_fraction &&
         roi.box.score >= min_score;
}

PromptResponse filter_boxes(const PromptResponse& response,
                            const FilterPolicy& policy) {
  policy.validate();
  PromptResponse out;
  out.embeddings = response.embeddings;
  std::copy_if(response.rois.begin(), response.rois.end(),
               std::back_inserter(out.rois),
               [&](const RoiRecord& r) { return policy.admits(r); });
  return out;
}

void validate_roi(const RoiRecord& roi) {
  const Geometry& g = roi.mask.geometry();
  if (roi.box.rank != g.rank) {
    throw BackendError("roi " + std::to_string(roi.id) + ": box rank differs from mask rank");
  }
  if (roi.box.prompt != roi.prompt) {
    throw BackendError("roi " + std::to_string(roi.id) + ": box and record prompts differ");
  }
  for (int a = 0; a < g.rank; ++a) {
    if (roi.box.lo[a] < 0 || roi.box.lo[a] >= roi.box.hi[a] ||
        roi.box.hi[a] > g.dims[a]) {
      throw BackendError("roi " + std::to_string(roi.id) + ": box outside mask grid");
    }
  }
  if (!(roi.box.score >= 0.0 && roi.box.score <= 1.0)) {
    throw BackendError("roi " + std::to_string(roi.id) + ": score outside [0,1]");
  }
  for (std::int64_t z = 0; z < g.dims[2]; ++z)
    for (std::int64_t y = 0; y < g.dims[1]; ++y)
      for (std::int64_t x = 0; x < g.dims[0]; ++x) {
        if (roi.mask.at(x, y, z) && !roi.box.contains(x, y, z)) {
          throw BackendError("roi " + std::to_string(roi.id) +
                             ": mask voxel outside its box");
        }
      }
}

namespace {

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

void validate_request(const PromptRequest& request, const Geometry& image) {
  if (request.prompts.empty()) throw ConfigError("prompt list is empty");
  for (const auto& p : request.prompts) {
    if (blank(p)) throw ConfigError("blank prompt");
  }
  if (request.slices) {
    const auto& s = *request.slices;
    if (image.rank != 3 || s.first < 0 || s.first >= s.last ||
        s.last > image.dims[2]) {
      throw ConfigError("slice range outside image " + image.describe());
    }
  }
}

}  // namespace

PromptResponse fetch_rois(const PromptRequest& request,
                          SegmenterBackend& backend) {
  const HeaderInfo header = read_header(request.image);
  if (header.kind != ArtifactKind::Volume) {
    throw ConfigError(request.image.string() + " is not a volume");
  }
  const Geometry& image = header.geometry;
  validate_request(request, image);

  PromptResponse response = backend.segment(request);

  int channels = 0;
  for (const auto& e : response.embeddings) {
    if (channels == 0) channels = e.grid.channels();
    if (e.grid.channels() != channels) {
      throw BackendError("embedding channel mismatch within one response");
    }
    if (e.slice_index && (image.rank != 3 || *e.slice_index < 0 ||
                          *e.slice_index >= image.dims[2])) {
      throw BackendError("embedding slice index outside image");
    }
  }
  int next_id = 0;
  for (auto& roi : response.rois) {
    roi.id = next_id++;
    roi.source = request.tag;
    roi.box.slice_index = roi.slice_index;
    validate_roi(roi);
    const Geometry expected = roi.slice_index ? image.slice() : image;
    if (roi.slice_index && (image.rank != 3 || *roi.slice_index < 0 ||
                            *roi.slice_index >= image.dims[2])) {
      throw BackendError("roi slice index outside image");
    }
    if (roi.mask.geometry().rank != expected.rank ||
        roi.mask.geometry().dims != expected.dims) {
      throw BackendError("roi mask grid " + roi.mask.geometry().describe() +
                         " does not match image " + expected.describe());
    }
    if (std::find(request.prompts.begin(), request.prompts.end(), roi.prompt) ==
        request.prompts.end()) {
      throw BackendError("roi carries unrequested prompt '" + roi.prompt + "'");
    }
    if (!response.embedding_for(roi.slice_index)) {
      throw BackendError("no embedding for roi " + std::to_string(roi.id));
    }
  }
  return response;
}

std::unique_ptr<SegmenterBackend> make_backend(const BackendConfig& config) {
  if (config.id == "fixture") {
    return std::make_unique<fixture::FixtureBackend>(config.vocabulary,
                                                     config.grid_stride);
  }
  if (config.id == "sidecar") {
    return std::make_unique<SidecarBackend>(config.command, config.work_dir);
  }
  throw ConfigError("unknown backend '" + config.id + "'");
}

}  // namespace promptreg
