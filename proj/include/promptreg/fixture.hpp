#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptreg/segmenter.hpp"
#include "promptreg/volume.hpp"

// Deterministic synthetic scenes and the segmenter that reads them back.
// Shapes are painted with their integer code as intensity; the embedding of
// a cell mixes one-hot code channels with per-component area and
// eccentricity descriptors, so identical codes give near-identical
// prototypes and distinct codes give near-orthogonal ones.
namespace promptreg::fixture {

inline constexpr int kMaxCode = 16;
// background, kMaxCode code channels, area, eccentricity
inline constexpr int kChannels = kMaxCode + 3;

enum class ShapeKind { Disk, Rect };

struct ShapeSpec {
  ShapeKind kind = ShapeKind::Disk;
  double radius = 4.0;                       // disk / ball
  std::array<double, 3> half_extent{4, 4, 4};  // rect / box
  std::optional<std::array<double, 3>> center;  // voxel coords; random if unset
  std::array<double, 3> displacement{0, 0, 0};  // moving = fixed shifted by this
  int code = 1;
  bool ground_truth = false;
};

struct SceneSpec {
  Geometry geometry = Geometry::make2d(64, 64);
  int grid_stride = 4;
  // Allowed overlap between two shapes, as a fraction of the smaller one.
  double overlap_tolerance = 0.0;
  std::vector<ShapeSpec> shapes;
  std::map<std::string, std::vector<int>> vocabulary;

  static SceneSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct ShapeTruth {
  int code = 0;
  std::array<double, 3> center{0, 0, 0};
  std::array<double, 3> displacement{0, 0, 0};
  BinaryMask fixed_mask = BinaryMask::zeros(Geometry{});
  BinaryMask moving_mask = BinaryMask::zeros(Geometry{});
};

struct Scene {
  Volume fixed;
  Volume moving;
  EmbeddingGrid fixed_embedding;
  EmbeddingGrid moving_embedding;
  std::vector<ShapeTruth> shapes;
  // Ground-truth pairing as (fixed shape index, moving shape index).
  std::vector<std::pair<int, int>> pairing;
  // Shapes flagged ground_truth (all shapes when none is flagged).
  BinaryMask gt_fixed;
  BinaryMask gt_moving;
};

// Throws FixtureError on overlapping shapes beyond tolerance, shapes that
// leave the grid, codes outside [1, kMaxCode] or repeated codes.
Scene generate(std::uint64_t seed, const SceneSpec& spec);

// A labelled connected component of a coded image.
struct Component {
  int code = 0;
  BinaryMask mask = BinaryMask::zeros(Geometry{});
  std::size_t area = 0;
  double eccentricity = 0.0;
};

// Components of voxels with value > 0, split by rounded intensity, in order
// of their first voxel (axis-0 fastest scan). Face connectivity.
std::vector<Component> components(const Volume& image);

EmbeddingGrid synthesize_embedding(const Volume& image, int grid_stride);

// Reads coded images and returns one ROI per detectable component.
class FixtureBackend final : public SegmenterBackend {
 public:
  FixtureBackend(std::map<std::string, std::vector<int>> vocabulary,
                 int grid_stride);
  std::string id() const override { return "fixture"; }
  PromptResponse segment(const PromptRequest& request) override;

 private:
  bool detects(const std::string& prompt, int code) const;

  std::map<std::string, std::vector<int>> vocabulary_;
  int grid_stride_;
};

}  // namespace promptreg::fixture
