#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "promptreg/volume.hpp"

namespace promptreg {

enum class ImageTag { Fixed, Moving };
const char* tag_name(ImageTag tag);

// One prompted region: box, mask, prompt and where it came from. Planar ROIs
// of a 3D image carry a 2D mask of the slice named by `slice_index`.
struct RoiRecord {
  int id = 0;
  BoundingBox box;
  BinaryMask mask = BinaryMask::zeros(Geometry{});
  std::string prompt;
  ImageTag source = ImageTag::Fixed;
  std::optional<std::int64_t> slice_index;
};

struct TaggedEmbedding {
  std::optional<std::int64_t> slice_index;
  EmbeddingGrid grid;
};

struct PromptResponse {
  std::vector<RoiRecord> rois;
  std::vector<TaggedEmbedding> embeddings;

  // Embedding for a slice, falling back to an untagged whole-image grid.
  const EmbeddingGrid* embedding_for(std::optional<std::int64_t> slice) const;
  int channels() const;
};

// Half-open slice interval [first, last) along axis 2.
struct SliceRange {
  std::int64_t first = 0;
  std::int64_t last = 0;
};

struct PromptRequest {
  std::filesystem::path image;
  std::vector<std::string> prompts;
  std::optional<SliceRange> slices;
  ImageTag tag = ImageTag::Fixed;
  // 3D images are segmented slice by slice unless this is false.
  bool per_slice = true;
  std::uint64_t seed = 0;
};

struct FilterPolicy {
  double min_area_fraction = 0.001;
  double max_area_fraction = 0.5;
  double min_score = 0.0;

  // Throws DomainError unless 0 < min < max <= 1 and min_score in [0,1].
  void validate() const;
  // Box area over slice (planar) or volume (3D) extent within
  // [min_area_fraction, max_area_fraction] and score >= min_score.
  bool admits(const RoiRecord& roi) const;
};

class SegmenterBackend {
 public:
  virtual ~SegmenterBackend() = default;
  virtual std::string id() const = 0;
  // Candidate ROIs and embeddings for every prompt, before filtering.
  virtual PromptResponse segment(const PromptRequest& request) = 0;
};

struct BackendConfig {
  std::string id = "fixture";
  // Sidecar argv prefix; the request path is appended as the last argument.
  std::vector<std::string> command;
  std::filesystem::path work_dir;
  // Fixture: prompt -> detectable shape codes. Unlisted prompts detect all.
  std::map<std::string, std::vector<int>> vocabulary;
  int grid_stride = 4;
};

std::unique_ptr<SegmenterBackend> make_backend(const BackendConfig& config);

// Validates the request, runs the backend, numbers ROIs 0..n-1, tags their
// source and checks the response contract (mask inside box slab, one
// channel count across embeddings, slice indices inside the image).
PromptResponse fetch_rois(const PromptRequest& request,
                          SegmenterBackend& backend);

// Keeps exactly the ROIs the policy admits, in order. Embeddings pass through.
PromptResponse filter_boxes(const PromptResponse& response,
                            const FilterPolicy& policy);

// Throws BackendError when the record breaks the mask-in-box contract.
void validate_roi(const RoiRecord& roi);

}  // namespace promptreg
