#include "promptreg/geometry.hpp"

#include <cmath>
#include <sstream>

#include "promptreg/error.hpp"

namespace promptreg {

Geometry Geometry::make(std::span<const std::int64_t> dims,
                        std::span<const double> spacing) {
  if (dims.size() != 2 && dims.size() != 3) {
    throw DomainError("geometry rank must be 2 or 3, got " +
                      std::to_string(dims.size()));
  }
  if (spacing.size() != dims.size()) {
    throw DomainError("spacing has " + std::to_string(spacing.size()) +
                      " entries for rank " + std::to_string(dims.size()));
  }
  Geometry g;
  g.rank = static_cast<int>(dims.size());
  for (std::size_t a = 0; a < dims.size(); ++a) {
    if (dims[a] < 1) throw DomainError("dims must be positive");
    if (!std::isfinite(spacing[a]) || spacing[a] <= 0.0) {
      throw DomainError("spacing must be finite and positive");
    }
    g.dims[a] = dims[a];
    g.spacing[a] = spacing[a];
  }
  return g;
}

Geometry Geometry::make2d(std::int64_t nx, std::int64_t ny, double sx,
                          double sy) {
  const std::array<std::int64_t, 2> d{nx, ny};
  const std::array<double, 2> s{sx, sy};
  return make(d, s);
}

Geometry Geometry::make3d(std::int64_t nx, std::int64_t ny, std::int64_t nz,
                          double sx, double sy, double sz) {
  const std::array<std::int64_t, 3> d{nx, ny, nz};
  const std::array<double, 3> s{sx, sy, sz};
  return make(d, s);
}

Geometry Geometry::slice() const {
  return make2d(dims[0], dims[1], spacing[0], spacing[1]);
}

std::string Geometry::describe() const {
  std::ostringstream os;
  os << dims[0];
  for (int a = 1; a < rank; ++a) os << 'x' << dims[a];
  return os.str();
}

void require_same_dims(const Geometry& a, const Geometry& b, const char* what) {
  if (a.rank != b.rank || a.dims != b.dims) {
    throw ShapeError(std::string(what) + ": dims " + a.describe() + " vs " +
                     b.describe());
  }
}

}  // namespace promptreg
