#include "promptreg/volume.hpp"

#include <algorithm>
#include <cmath>

#include "promptreg/error.hpp"

namespace promptreg {

namespace {

void require_count(const Geometry& g, std::size_t n, std::size_t per_voxel,
                   const char* what) {
  if (n != g.voxel_count() * per_voxel) {
    throw ShapeError(std::string(what) + ": " + std::to_string(n) +
                     " values for grid " + g.describe());
  }
}

void require_slice(const Geometry& g, std::int64_t z) {
  if (g.rank != 3 || z < 0 || z >= g.dims[2]) {
    throw DomainError("slice " + std::to_string(z) + " outside grid " +
                      g.describe());
  }
}

}  // namespace

Volume::Volume(Geometry geometry, std::vector<float> voxels)
    : geometry_(geometry), voxels_(std::move(voxels)) {
  require_count(geometry_, voxels_.size(), 1, "volume");
  for (float v : voxels_) {
    if (!std::isfinite(v)) throw DomainError("volume holds a non-finite value");
  }
}

Volume Volume::zeros(const Geometry& geometry) {
  return Volume(geometry, std::vector<float>(geometry.voxel_count(), 0.0f));
}

Volume Volume::slice(std::int64_t z) const {
  if (geometry_.rank == 2 && z == 0) return *this;
  require_slice(geometry_, z);
  const Geometry g = geometry_.slice();
  const auto plane = g.voxel_count();
  const auto first = voxels_.begin() + static_cast<std::ptrdiff_t>(plane * z);
  return Volume(g, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(plane)));
}

BinaryMask::BinaryMask(Geometry geometry, std::vector<std::uint8_t> voxels)
    : geometry_(geometry), voxels_(std::move(voxels)) {
  require_count(geometry_, voxels_.size(), 1, "mask");
  for (auto v : voxels_) {
    if (v > 1) throw DomainError("mask value outside {0,1}");
  }
}

BinaryMask BinaryMask::zeros(const Geometry& geometry) {
  return BinaryMask(geometry,
                    std::vector<std::uint8_t>(geometry.voxel_count(), 0));
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(
      std::count(voxels_.begin(), voxels_.end(), std::uint8_t{1}));
}

BinaryMask BinaryMask::slice(std::int64_t z) const {
  if (geometry_.rank == 2 && z == 0) return *this;
  require_slice(geometry_, z);
  const Geometry g = geometry_.slice();
  const auto plane = g.voxel_count();
  const auto first = voxels_.begin() + static_cast<std::ptrdiff_t>(plane * z);
  return BinaryMask(
      g, std::vector<std::uint8_t>(first, first + static_cast<std::ptrdiff_t>(plane)));
}

BinaryMask BinaryMask::lift(const Geometry& volume_geometry,
                            std::int64_t z) const {
  if (geometry_.rank != 2) throw ShapeError("lift expects a 2D mask");
  require_slice(volume_geometry, z);
  require_same_dims(geometry_, volume_geometry.slice(), "lift");
  std::vector<std::uint8_t> out(volume_geometry.voxel_count(), 0);
  std::copy(voxels_.begin(), voxels_.end(),
            out.begin() + static_cast<std::ptrdiff_t>(voxels_.size() * z));
  return BinaryMask(volume_geometry, std::move(out));
}

std::vector<double> BinaryMask::as_real() const {
  return std::vector<double>(voxels_.begin(), voxels_.end());
}

std::optional<std::array<double, 3>> BinaryMask::centroid() const {
  std::array<double, 3> sum{0.0, 0.0, 0.0};
  std::size_t n = 0;
  const auto& d = geometry_.dims;
  for (std::int64_t z = 0; z < d[2]; ++z)
    for (std::int64_t y = 0; y < d[1]; ++y)
      for (std::int64_t x = 0; x < d[0]; ++x) {
        if (!voxels_[geometry_.index(x, y, z)]) continue;
        sum[0] += static_cast<double>(x);
        sum[1] += static_cast<double>(y);
        sum[2] += static_cast<double>(z);
        ++n;
      }
  if (n == 0) return std::nullopt;
  for (auto& s : sum) s /= static_cast<double>(n);
  return sum;
}

BinaryMask binarize(const Geometry& geometry, std::span<const double> values,
                    double level) {
  require_count(geometry, values.size(), 1, "binarize");
  std::vector<std::uint8_t> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(),
                 [level](double v) { return static_cast<std::uint8_t>(v >= level); });
  return BinaryMask(geometry, std::move(out));
}

EmbeddingGrid::EmbeddingGrid(Geometry grid, int channels,
                             std::vector<float> values)
    : grid_(grid), channels_(channels), values_(std::move(values)) {
  if (channels_ < 1) throw DomainError("embedding needs at least one channel");
  require_count(grid_, values_.size(), static_cast<std::size_t>(channels_),
                "embedding");
  for (float v : values_) {
    if (!std::isfinite(v)) throw DomainError("embedding holds a non-finite value");
  }
}

std::int64_t BoundingBox::extent() const {
  std::int64_t e = 1;
  for (int a = 0; a < rank; ++a) e *= hi[a] - lo[a];
  return e;
}

void BoundingBox::validate(const Geometry& parent) const {
  if (rank != 2 && rank != 3) throw DomainError("box rank must be 2 or 3");
  if (rank > parent.rank) throw DomainError("box rank exceeds image rank");
  if (rank < parent.rank) {
    if (!slice_index || *slice_index < 0 || *slice_index >= parent.dims[2]) {
      throw DomainError("planar box in a volume needs a valid slice index");
    }
  }
  for (int a = 0; a < rank; ++a) {
    if (lo[a] >= hi[a]) throw DomainError("box min must be below max on every axis");
    if (lo[a] < 0 || hi[a] > parent.dims[a]) throw DomainError("box outside image");
  }
  if (!(score >= 0.0 && score <= 1.0)) throw DomainError("box score outside [0,1]");
}

bool BoundingBox::contains(std::int64_t x, std::int64_t y,
                           std::int64_t z) const {
  const std::array<std::int64_t, 3> p{x, y, z};
  for (int a = 0; a < rank; ++a) {
    if (p[a] < lo[a] || p[a] >= hi[a]) return false;
  }
  return true;
}

BoundingBox tight_box(const BinaryMask& mask) {
  const Geometry& g = mask.geometry();
  BoundingBox box;
  box.rank = g.rank;
  box.lo = g.dims;
  box.hi = {0, 0, 0};
  bool any = false;
  for (std::int64_t z = 0; z < g.dims[2]; ++z)
    for (std::int64_t y = 0; y < g.dims[1]; ++y)
      for (std::int64_t x = 0; x < g.dims[0]; ++x) {
        if (!mask.at(x, y, z)) continue;
        any = true;
        const std::array<std::int64_t, 3> p{x, y, z};
        for (int a = 0; a < 3; ++a) {
          box.lo[a] = std::min(box.lo[a], p[a]);
          box.hi[a] = std::max(box.hi[a], p[a] + 1);
        }
      }
  if (!any) throw DomainError("tight_box of an empty mask");
  if (g.rank == 2) {
    box.lo[2] = 0;
    box.hi[2] = 1;
  }
  return box;
}

}  // namespace promptreg
