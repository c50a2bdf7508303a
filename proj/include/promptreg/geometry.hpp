#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

namespace promptreg {

// Shape and physical spacing of a 2D or 3D grid. Unused trailing axes hold
// dims 1 and spacing 1 so that 2D data can be indexed as (x, y, 0).
// Linearization is axis-0 fastest: index = x + dims[0] * (y + dims[1] * z).
struct Geometry {
  int rank = 2;
  std::array<std::int64_t, 3> dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  // Validates rank in {2,3}, dims >= 1 and finite positive spacing.
  static Geometry make(std::span<const std::int64_t> dims,
                       std::span<const double> spacing);
  static Geometry make2d(std::int64_t nx, std::int64_t ny, double sx = 1.0,
                         double sy = 1.0);
  static Geometry make3d(std::int64_t nx, std::int64_t ny, std::int64_t nz,
                         double sx = 1.0, double sy = 1.0, double sz = 1.0);

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
  }
  std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z = 0) const {
    return static_cast<std::size_t>(x + dims[0] * (y + dims[1] * z));
  }
  bool contains(std::int64_t x, std::int64_t y, std::int64_t z = 0) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] &&
           z < dims[2];
  }
  // In-plane geometry of one axis-2 slice.
  Geometry slice() const;
  std::string describe() const;

  bool operator==(const Geometry&) const = default;
};

// Throws ShapeError when the two geometries differ in rank or dims.
void require_same_dims(const Geometry& a, const Geometry& b, const char* what);

}  // namespace promptreg
