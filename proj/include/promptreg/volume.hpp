#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "promptreg/geometry.hpp"

namespace promptreg {

// Scalar image with 32-bit float voxels. Immutable after construction.
class Volume {
 public:
  // Throws ShapeError on a count mismatch, DomainError on non-finite values.
  Volume(Geometry geometry, std::vector<float> voxels);
  static Volume zeros(const Geometry& geometry);

  const Geometry& geometry() const { return geometry_; }
  std::span<const float> voxels() const { return voxels_; }
  float at(std::int64_t x, std::int64_t y, std::int64_t z = 0) const {
    return voxels_[geometry_.index(x, y, z)];
  }

  // Axis-2 slice of a 3D volume (or the volume itself when 2D).
  Volume slice(std::int64_t z) const;

  bool operator==(const Volume&) const = default;

 private:
  Geometry geometry_;
  std::vector<float> voxels_;
};

// Binary mask with one byte per voxel, every value 0 or 1.
class BinaryMask {
 public:
  // Throws ShapeError on a count mismatch, DomainError on values outside {0,1}.
  BinaryMask(Geometry geometry, std::vector<std::uint8_t> voxels);
  static BinaryMask zeros(const Geometry& geometry);

  const Geometry& geometry() const { return geometry_; }
  std::span<const std::uint8_t> voxels() const { return voxels_; }
  bool at(std::int64_t x, std::int64_t y, std::int64_t z = 0) const {
    return voxels_[geometry_.index(x, y, z)] != 0;
  }

  std::size_t count() const;
  bool empty() const { return count() == 0; }

  BinaryMask slice(std::int64_t z) const;
  // Embeds a 2D mask as slice z of a 3D geometry whose in-plane dims match.
  BinaryMask lift(const Geometry& volume_geometry, std::int64_t z) const;
  // Mask as 0/1 doubles, the form the optimizer consumes.
  std::vector<double> as_real() const;
  // Voxel-space centroid (x, y, z); nullopt when empty.
  std::optional<std::array<double, 3>> centroid() const;

  bool operator==(const BinaryMask&) const = default;

 private:
  Geometry geometry_;
  std::vector<std::uint8_t> voxels_;
};

// Thresholds a real-valued image at `level` (value >= level maps to 1).
BinaryMask binarize(const Geometry& geometry, std::span<const double> values,
                    double level = 0.5);

// Spatial feature map with `channels` values per cell, channel-last.
class EmbeddingGrid {
 public:
  EmbeddingGrid(Geometry grid, int channels, std::vector<float> values);

  const Geometry& geometry() const { return grid_; }
  int channels() const { return channels_; }
  std::span<const float> values() const { return values_; }
  std::span<const float> cell(std::size_t linear_index) const {
    return std::span<const float>(values_).subspan(
        linear_index * static_cast<std::size_t>(channels_),
        static_cast<std::size_t>(channels_));
  }

  bool operator==(const EmbeddingGrid&) const = default;

 private:
  Geometry grid_;
  int channels_;
  std::vector<float> values_;
};

// Axis-aligned box in voxel coordinates, [lo, hi) per axis. A box with
// rank 2 inside a 3D volume addresses one slice through `slice_index`.
struct BoundingBox {
  int rank = 2;
  std::array<std::int64_t, 3> lo{0, 0, 0};
  std::array<std::int64_t, 3> hi{1, 1, 1};
  double score = 1.0;
  std::string prompt;
  std::optional<std::int64_t> slice_index;

  std::int64_t extent() const;
  // Throws DomainError unless lo < hi on every axis, the box lies within
  // `parent` (its slice geometry when the box is planar) and score is in [0,1].
  void validate(const Geometry& parent) const;
  bool contains(std::int64_t x, std::int64_t y, std::int64_t z = 0) const;

  bool operator==(const BoundingBox&) const = default;
};

// Tight bounding box around the nonzero voxels of a nonempty mask.
BoundingBox tight_box(const BinaryMask& mask);

}  // namespace promptreg
