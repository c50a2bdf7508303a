#include "promptreg/fixture.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <random>

#include "promptreg/error.hpp"
#include "promptreg/io.hpp"

namespace promptreg::fixture {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double unit_interval(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

int code_of(float value) { return static_cast<int>(std::lround(value)); }

int code_channel(int code) { return 1 + (code - 1) % kMaxCode; }

// sqrt(1 - lambda_min / lambda_max) of the voxel-coordinate covariance.
double eccentricity(const std::vector<std::array<double, 3>>& points, int rank) {
  if (points.size() < 2) return 0.0;
  std::array<double, 3> mean{0, 0, 0};
  for (const auto& p : points)
    for (int a = 0; a < 3; ++a) mean[a] += p[a];
  for (auto& m : mean) m /= static_cast<double>(points.size());
  double c[3][3] = {};
  for (const auto& p : points)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) c[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]);
  double lmin = 0.0;
  double lmax = 0.0;
  if (rank == 2) {
    const double tr = c[0][0] + c[1][1];
    const double det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    lmax = tr / 2.0 + disc;
    lmin = tr / 2.0 - disc;
  } else {
    // Closed-form eigenvalues of a symmetric 3x3 matrix.
    const double p1 = c[0][1] * c[0][1] + c[0][2] * c[0][2] + c[1][2] * c[1][2];
    const double q = (c[0][0] + c[1][1] + c[2][2]) / 3.0;
    const double p2 = (c[0][0] - q) * (c[0][0] - q) + (c[1][1] - q) * (c[1][1] - q) +
                      (c[2][2] - q) * (c[2][2] - q) + 2.0 * p1;
    const double p = std::sqrt(p2 / 6.0);
    if (p == 0.0) return 0.0;
    double b[3][3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) b[i][j] = (c[i][j] - (i == j ? q : 0.0)) / p;
    const double r = (b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) -
                      b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0]) +
                      b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0])) /
                     2.0;
    const double phi = std::acos(std::clamp(r, -1.0, 1.0)) / 3.0;
    lmax = q + 2.0 * p * std::cos(phi);
    lmin = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
  }
  if (lmax <= 0.0) return 0.0;
  return std::sqrt(std::clamp(1.0 - lmin / lmax, 0.0, 1.0));
}

struct Labelling {
  std::vector<Component> components;
  std::vector<int> owner;  // component index per voxel, -1 for background
};

Labelling label(const Volume& image) {
  const Geometry& g = image.geometry();
  Labelling out;
  out.owner.assign(g.voxel_count(), -1);
  const auto values = image.voxels();
  std::deque<std::array<std::int64_t, 3>> queue;
  for (std::int64_t z = 0; z < g.dims[2]; ++z)
    for (std::int64_t y = 0; y < g.dims[1]; ++y)
      for (std::int64_t x = 0; x < g.dims[0]; ++x) {
        const auto seed = g.index(x, y, z);
        if (values[seed] <= 0.0f || out.owner[seed] >= 0) continue;
        const int code = code_of(values[seed]);
        if (code < 1) continue;
        const int id = static_cast<int>(out.components.size());
        std::vector<std::uint8_t> bits(g.voxel_count(), 0);
        std::vector<std::array<double, 3>> points;
        out.owner[seed] = id;
        queue.push_back({x, y, z});
        while (!queue.empty()) {
          const auto p = queue.front();
          queue.pop_front();
          const auto i = g.index(p[0], p[1], p[2]);
          bits[i] = 1;
          points.push_back({static_cast<double>(p[0]), static_cast<double>(p[1]),
                            static_cast<double>(p[2])});
          for (int a = 0; a < g.rank; ++a)
            for (int step : {-1, 1}) {
              auto q = p;
              q[a] += step;
              if (!g.contains(q[0], q[1], q[2])) continue;
              const auto j = g.index(q[0], q[1], q[2]);
              if (out.owner[j] >= 0 || values[j] <= 0.0f ||
                  code_of(values[j]) != code) {
                continue;
              }
              out.owner[j] = id;
              queue.push_back(q);
            }
        }
        Component c{code, BinaryMask(g, std::move(bits)), points.size(),
                    eccentricity(points, g.rank)};
        out.components.push_back(std::move(c));
      }
  return out;
}

bool inside(const ShapeSpec& s, const std::array<double, 3>& center, int rank,
            std::int64_t x, std::int64_t y, std::int64_t z) {
  const std::array<double, 3> p{static_cast<double>(x), static_cast<double>(y),
                                static_cast<double>(z)};
  if (s.kind == ShapeKind::Disk) {
    double r2 = 0.0;
    for (int a = 0; a < rank; ++a) r2 += (p[a] - center[a]) * (p[a] - center[a]);
    return r2 <= s.radius * s.radius;
  }
  for (int a = 0; a < rank; ++a) {
    if (std::fabs(p[a] - center[a]) > s.half_extent[a]) return false;
  }
  return true;
}

BinaryMask paint(const ShapeSpec& s, const std::array<double, 3>& center,
                 const Geometry& g) {
  std::vector<std::uint8_t> bits(g.voxel_count(), 0);
  for (std::int64_t z = 0; z < g.dims[2]; ++z)
    for (std::int64_t y = 0; y < g.dims[1]; ++y)
      for (std::int64_t x = 0; x < g.dims[0]; ++x)
        bits[g.index(x, y, z)] = inside(s, center, g.rank, x, y, z) ? 1 : 0;
  return BinaryMask(g, std::move(bits));
}

std::size_t overlap(const BinaryMask& a, const BinaryMask& b) {
  std::size_t n = 0;
  const auto va = a.voxels();
  const auto vb = b.voxels();
  for (std::size_t i = 0; i < va.size(); ++i) n += va[i] & vb[i];
  return n;
}

void check_overlaps(const std::vector<BinaryMask>& masks, double tolerance,
                    const char* which) {
  for (std::size_t i = 0; i < masks.size(); ++i)
    for (std::size_t j = i + 1; j < masks.size(); ++j) {
      const double shared = static_cast<double>(overlap(masks[i], masks[j]));
      const double smaller =
          static_cast<double>(std::min(masks[i].count(), masks[j].count()));
      if (shared > tolerance * smaller) {
        throw FixtureError("shapes " + std::to_string(i) + " and " +
                           std::to_string(j) + " overlap in the " + which +
                           " image");
      }
    }
}

Volume render(const std::vector<BinaryMask>& masks,
              const std::vector<ShapeSpec>& shapes, const Geometry& g) {
  std::vector<float> voxels(g.voxel_count(), 0.0f);
  for (std::size_t s = 0; s < masks.size(); ++s) {
    const auto bits = masks[s].voxels();
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i]) voxels[i] = static_cast<float>(shapes[s].code);
    }
  }
  return Volume(g, std::move(voxels));
}

BinaryMask union_of(const std::vector<const BinaryMask*>& masks,
                    const Geometry& g) {
  std::vector<std::uint8_t> bits(g.voxel_count(), 0);
  for (const auto* m : masks) {
    const auto v = m->voxels();
    for (std::size_t i = 0; i < v.size(); ++i) bits[i] |= v[i];
  }
  return BinaryMask(g, std::move(bits));
}

std::array<double, 3> read_triple(const json& j, double fill) {
  std::array<double, 3> out{fill, fill, fill};
  const auto v = j.get<std::vector<double>>();
  if (v.size() > 3) throw FixtureError("coordinate with more than 3 entries");
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

json write_triple(const std::array<double, 3>& v, int rank) {
  return json(std::vector<double>(v.begin(), v.begin() + rank));
}

}  // namespace

std::vector<Component> components(const Volume& image) {
  return label(image).components;
}

EmbeddingGrid synthesize_embedding(const Volume& image, int grid_stride) {
  if (grid_stride < 1) throw DomainError("grid stride must be >= 1");
  const Geometry& g = image.geometry();
  const Labelling lab = label(image);
  std::array<std::int64_t, 3> gd{1, 1, 1};
  std::array<double, 3> gs{1, 1, 1};
  for (int a = 0; a < g.rank; ++a) {
    gd[a] = (g.dims[a] + grid_stride - 1) / grid_stride;
    gs[a] = g.spacing[a] * grid_stride;
  }
  const Geometry grid = g.rank == 2 ? Geometry::make2d(gd[0], gd[1], gs[0], gs[1])
                                    : Geometry::make3d(gd[0], gd[1], gd[2], gs[0],
                                                       gs[1], gs[2]);
  const double total = static_cast<double>(g.voxel_count());
  std::vector<float> values(grid.voxel_count() * kChannels, 0.0f);
  std::vector<double> acc(kChannels);
  for (std::int64_t cz = 0; cz < gd[2]; ++cz)
    for (std::int64_t cy = 0; cy < gd[1]; ++cy)
      for (std::int64_t cx = 0; cx < gd[0]; ++cx) {
        std::fill(acc.begin(), acc.end(), 0.0);
        std::size_t n = 0;
        const std::int64_t zs = g.rank == 3 ? cz * grid_stride : 0;
        const std::int64_t ze = g.rank == 3 ? std::min(zs + grid_stride, g.dims[2]) : 1;
        for (std::int64_t z = zs; z < ze; ++z)
          for (std::int64_t y = cy * grid_stride;
               y < std::min((cy + 1) * grid_stride, g.dims[1]); ++y)
            for (std::int64_t x = cx * grid_stride;
                 x < std::min((cx + 1) * grid_stride, g.dims[0]); ++x) {
              ++n;
              const int owner = lab.owner[g.index(x, y, z)];
              if (owner < 0) {
                acc[0] += 1.0;
                continue;
              }
              const Component& c = lab.components[static_cast<std::size_t>(owner)];
              acc[static_cast<std::size_t>(code_channel(c.code))] += 1.0;
              acc[kMaxCode + 1] += 0.25 * static_cast<double>(c.area) / total;
              acc[kMaxCode + 2] += 0.25 * c.eccentricity;
            }
        float* cell = values.data() + grid.index(cx, cy, cz) * kChannels;
        for (int ch = 0; ch < kChannels; ++ch) {
          cell[ch] = static_cast<float>(acc[static_cast<std::size_t>(ch)] /
                                        static_cast<double>(n));
        }
      }
  return EmbeddingGrid(grid, kChannels, std::move(values));
}

Scene generate(std::uint64_t seed, const SceneSpec& spec) {
  const Geometry& g = spec.geometry;
  if (spec.shapes.empty()) throw FixtureError("scene has no shapes");
  if (spec.grid_stride < 1) throw FixtureError("grid stride must be >= 1");
  for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
    const int code = spec.shapes[i].code;
    if (code < 1 || code > kMaxCode) {
      throw FixtureError("shape code " + std::to_string(code) + " outside [1, " +
                         std::to_string(kMaxCode) + "]");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (spec.shapes[j].code == code) {
        throw FixtureError("shapes " + std::to_string(j) + " and " +
                           std::to_string(i) +
                           " share embedding code " + std::to_string(code) +
                           ": ground truth is ambiguous");
      }
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<ShapeTruth> truth;
  std::vector<BinaryMask> fixed_masks;
  std::vector<BinaryMask> moving_masks;
  for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
    const ShapeSpec& s = spec.shapes[i];
    std::array<double, 3> center{0, 0, 0};
    if (s.center) {
      center = *s.center;
    } else {
      for (int a = 0; a < g.rank; ++a) {
        const double reach =
            (s.kind == ShapeKind::Disk ? s.radius : s.half_extent[a]) +
            std::fabs(s.displacement[a]) + 1.0;
        const double span = std::max(0.0, static_cast<double>(g.dims[a] - 1) - 2.0 * reach);
        center[a] = std::round(reach + unit_interval(rng()) * span);
      }
    }
    std::array<double, 3> moved = center;
    for (int a = 0; a < g.rank; ++a) moved[a] += s.displacement[a];
    for (int a = 0; a < g.rank; ++a) {
      const double reach = s.kind == ShapeKind::Disk ? s.radius : s.half_extent[a];
      const double hi = static_cast<double>(g.dims[a] - 1);
      if (std::min(center[a], moved[a]) - reach < 0.0 ||
          std::max(center[a], moved[a]) + reach > hi) {
        throw FixtureError("shape " + std::to_string(i) + " leaves the grid");
      }
    }
    BinaryMask fm = paint(s, center, g);
    BinaryMask mm = paint(s, moved, g);
    if (fm.empty() || mm.empty()) {
      throw FixtureError("shape " + std::to_string(i) + " paints no voxels");
    }
    fixed_masks.push_back(fm);
    moving_masks.push_back(mm);
    truth.push_back(ShapeTruth{s.code, center, s.displacement, std::move(fm),
                               std::move(mm)});
  }
  check_overlaps(fixed_masks, spec.overlap_tolerance, "fixed");
  check_overlaps(moving_masks, spec.overlap_tolerance, "moving");

  Volume fixed = render(fixed_masks, spec.shapes, g);
  Volume moving = render(moving_masks, spec.shapes, g);

  std::vector<const BinaryMask*> gt_f;
  std::vector<const BinaryMask*> gt_m;
  const bool any_flagged = std::any_of(spec.shapes.begin(), spec.shapes.end(),
                                       [](const ShapeSpec& s) { return s.ground_truth; });
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (any_flagged && !spec.shapes[i].ground_truth) continue;
    gt_f.push_back(&truth[i].fixed_mask);
    gt_m.push_back(&truth[i].moving_mask);
  }
  BinaryMask gt_fixed = union_of(gt_f, g);
  BinaryMask gt_moving = union_of(gt_m, g);

  std::vector<std::pair<int, int>> pairing;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    pairing.emplace_back(static_cast<int>(i), static_cast<int>(i));
  }
  EmbeddingGrid fe = synthesize_embedding(fixed, spec.grid_stride);
  EmbeddingGrid me = synthesize_embedding(moving, spec.grid_stride);
  return Scene{std::move(fixed),    std::move(moving),   std::move(fe),
               std::move(me),       std::move(truth),    std::move(pairing),
               std::move(gt_fixed), std::move(gt_moving)};
}

SceneSpec SceneSpec::from_json(const json& j) {
  try {
    SceneSpec spec;
    const auto dims = j.at("dims").get<std::vector<std::int64_t>>();
    std::vector<double> spacing(dims.size(), 1.0);
    if (j.contains("spacing")) spacing = j["spacing"].get<std::vector<double>>();
    spec.geometry = Geometry::make(dims, spacing);
    spec.grid_stride = j.value("grid_stride", 4);
    spec.overlap_tolerance = j.value("overlap_tolerance", 0.0);
    for (const auto& sj : j.at("shapes")) {
      ShapeSpec s;
      const auto kind = sj.value("kind", std::string("disk"));
      if (kind == "disk") {
        s.kind = ShapeKind::Disk;
        s.radius = sj.at("radius").get<double>();
      } else if (kind == "rect") {
        s.kind = ShapeKind::Rect;
        s.half_extent = read_triple(sj.at("half_extent"), 0.0);
      } else {
        throw FixtureError("unknown shape kind '" + kind + "'");
      }
      if (sj.contains("center")) s.center = read_triple(sj["center"], 0.0);
      if (sj.contains("displacement")) s.displacement = read_triple(sj["displacement"], 0.0);
      s.code = sj.at("code").get<int>();
      s.ground_truth = sj.value("gt", false);
      spec.shapes.push_back(s);
    }
    if (j.contains("vocabulary")) {
      spec.vocabulary = j["vocabulary"].get<std::map<std::string, std::vector<int>>>();
    }
    return spec;
  } catch (const json::exception& e) {
    throw FixtureError(std::string("malformed scene description: ") + e.what());
  } catch (const DomainError& e) {
    throw FixtureError(std::string("malformed scene description: ") + e.what());
  }
}

json SceneSpec::to_json() const {
  json j;
  const int r = geometry.rank;
  j["dims"] = std::vector<std::int64_t>(geometry.dims.begin(), geometry.dims.begin() + r);
  j["spacing"] = write_triple(geometry.spacing, r);
  j["grid_stride"] = grid_stride;
  j["overlap_tolerance"] = overlap_tolerance;
  j["shapes"] = json::array();
  for (const auto& s : shapes) {
    json sj;
    if (s.kind == ShapeKind::Disk) {
      sj["kind"] = "disk";
      sj["radius"] = s.radius;
    } else {
      sj["kind"] = "rect";
      sj["half_extent"] = write_triple(s.half_extent, r);
    }
    if (s.center) sj["center"] = write_triple(*s.center, r);
    sj["displacement"] = write_triple(s.displacement, r);
    sj["code"] = s.code;
    sj["gt"] = s.ground_truth;
    j["shapes"].push_back(sj);
  }
  j["vocabulary"] = vocabulary;
  return j;
}

FixtureBackend::FixtureBackend(std::map<std::string, std::vector<int>> vocabulary,
                               int grid_stride)
    : vocabulary_(std::move(vocabulary)), grid_stride_(grid_stride) {
  if (grid_stride_ < 1) throw ConfigError("fixture grid stride must be >= 1");
}

bool FixtureBackend::detects(const std::string& prompt, int code) const {
  const auto it = vocabulary_.find(prompt);
  if (it == vocabulary_.end()) return true;
  return std::find(it->second.begin(), it->second.end(), code) != it->second.end();
}

PromptResponse FixtureBackend::segment(const PromptRequest& request) {
  const Volume image = read_volume(request.image);
  const Geometry& g = image.geometry();

  struct Plane {
    std::optional<std::int64_t> slice;
    std::vector<Component> parts;
  };
  std::vector<Plane> planes;
  PromptResponse response;
  if (g.rank == 3 && request.per_slice) {
    const SliceRange range = request.slices.value_or(SliceRange{0, g.dims[2]});
    for (std::int64_t z = range.first; z < range.last; ++z) {
      const Volume plane = image.slice(z);
      planes.push_back({z, components(plane)});
      response.embeddings.push_back({z, synthesize_embedding(plane, grid_stride_)});
    }
  } else {
    if (request.slices) {
      throw ConfigError("a slice range needs per-slice segmentation");
    }
    planes.push_back({std::nullopt, components(image)});
    response.embeddings.push_back({std::nullopt, synthesize_embedding(image, grid_stride_)});
  }

  const std::uint64_t seed_mix = splitmix64(request.seed);
  for (const auto& prompt : request.prompts) {
    const std::uint64_t prompt_mix = seed_mix ^ fnv1a(prompt);
    for (const auto& plane : planes) {
      for (std::size_t c = 0; c < plane.parts.size(); ++c) {
        const Component& part = plane.parts[c];
        if (!detects(prompt, part.code)) continue;
        RoiRecord roi;
        roi.box = tight_box(part.mask);
        const std::uint64_t salt =
            static_cast<std::uint64_t>(plane.slice.value_or(-1) + 1) * 1000003ULL + c;
        roi.box.score = 0.5 + 0.5 * unit_interval(splitmix64(prompt_mix ^ salt));
        roi.box.prompt = prompt;
        roi.box.slice_index = plane.slice;
        roi.mask = part.mask;
        roi.prompt = prompt;
        roi.source = request.tag;
        roi.slice_index = plane.slice;
        response.rois.push_back(std::move(roi));
      }
    }
  }
  return response;
}

}  // namespace promptreg::fixture
