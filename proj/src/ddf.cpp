#include "promptreg/ddf.hpp"

#include <algorithm>
#include <cmath>

#include "promptreg/kernels.hpp"

namespace promptreg {

using nlohmann::json;

DisplacementField::DisplacementField(const Geometry& geometry)
    : geometry_(geometry),
      values_(geometry.voxel_count() * static_cast<std::size_t>(geometry.rank), 0.0) {}

DisplacementField::DisplacementField(const Geometry& geometry, std::vector<double> components)
    : geometry_(geometry), values_(std::move(components)) {
  if (values_.size() != geometry_.voxel_count() * static_cast<std::size_t>(geometry_.rank)) {
    throw ShapeError("displacement field needs rank components per voxel");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw DomainError("displacement field holds a non-finite value");
  }
}

std::array<double, 3> DisplacementField::at(std::size_t voxel) const {
  std::array<double, 3> d{0, 0, 0};
  const auto r = static_cast<std::size_t>(rank());
  for (std::size_t a = 0; a < r; ++a) d[a] = values_[voxel * r + a];
  return d;
}

EmbeddingGrid DisplacementField::to_embedding() const {
  std::vector<float> f(values_.begin(), values_.end());
  return EmbeddingGrid(geometry_, rank(), std::move(f));
}

DisplacementField DisplacementField::from_embedding(const EmbeddingGrid& grid) {
  if (grid.channels() != grid.geometry().rank) {
    throw ShapeError("displacement embedding needs one channel per axis");
  }
  const auto v = grid.values();
  return DisplacementField(grid.geometry(), std::vector<double>(v.begin(), v.end()));
}

namespace {

struct Sample {
  double value = 0.0;
  std::array<double, 3> grad{0, 0, 0};
};

// Multilinear interpolation at p (voxel coordinates) with zero padding per
// corner. For rank 2 the z coordinate is the integer slice p[2].
template <bool WithGradient>
Sample sample(const double* image, const Geometry& g, const std::array<double, 3>& p) {
  const int rank = g.rank;
  std::array<std::int64_t, 3> base{0, 0, static_cast<std::int64_t>(p[2])};
  std::array<double, 3> t{0, 0, 0};
  for (int a = 0; a < rank; ++a) {
    const double f = std::floor(p[a]);
    base[a] = static_cast<std::int64_t>(f);
    t[a] = p[a] - f;
  }
  Sample s;
  const int corners = 1 << rank;
  for (int c = 0; c < corners; ++c) {
    std::array<std::int64_t, 3> q = base;
    double w = 1.0;
    std::array<double, 3> partial{1.0, 1.0, 1.0};
    for (int a = 0; a < rank; ++a) {
      const bool hi = (c >> a) & 1;
      q[a] += hi ? 1 : 0;
      const double wa = hi ? t[a] : 1.0 - t[a];
      const double da = hi ? 1.0 : -1.0;
      for (int b = 0; b < rank; ++b) partial[b] *= (b == a) ? da : wa;
      w *= wa;
    }
    if (!g.contains(q[0], q[1], q[2])) continue;
    const double v = image[g.index(q[0], q[1], q[2])];
    if (v == 0.0) continue;
    s.value += w * v;
    if constexpr (WithGradient) {
      for (int a = 0; a < rank; ++a) s.grad[a] += partial[a] * v;
    }
  }
  return s;
}

template <bool WithGradient>
void warp_into(std::span<const double> image, const Geometry& g, const DisplacementField& ddf,
               std::span<double> out, std::span<double> out_grad) {
  const auto r = static_cast<std::size_t>(g.rank);
  const auto theta = ddf.values();
  for (std::int64_t z = 0; z < g.dims[2]; ++z)
    for (std::int64_t y = 0; y < g.dims[1]; ++y)
      for (std::int64_t x = 0; x < g.dims[0]; ++x) {
        const std::size_t i = g.index(x, y, z);
        std::array<double, 3> p{static_cast<double>(x), static_cast<double>(y),
                                static_cast<double>(z)};
        for (std::size_t a = 0; a < r; ++a) p[a] += theta[i * r + a];
        const Sample s = sample<WithGradient>(image.data(), g, p);
        out[i] = s.value;
        if constexpr (WithGradient) {
          for (std::size_t a = 0; a < r; ++a) out_grad[i * r + a] = s.grad[a];
        }
      }
}

}  // namespace

std::vector<double> warp(std::span<const double> image, const Geometry& geometry,
                         const DisplacementField& ddf) {
  require_same_dims(geometry, ddf.geometry(), "warp");
  if (image.size() != geometry.voxel_count()) throw ShapeError("warp: image size");
  std::vector<double> out(image.size());
  warp_into<false>(image, geometry, ddf, out, {});
  return out;
}

Volume warp(const Volume& image, const DisplacementField& ddf) {
  const auto v = image.voxels();
  const std::vector<double> in(v.begin(), v.end());
  const auto out = warp(in, image.geometry(), ddf);
  return Volume(image.geometry(), std::vector<float>(out.begin(), out.end()));
}

Volume warp(const BinaryMask& mask, const DisplacementField& ddf) {
  const auto out = warp(mask.as_real(), mask.geometry(), ddf);
  return Volume(mask.geometry(), std::vector<float>(out.begin(), out.end()));
}

double soft_dice(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("soft_dice: operand sizes differ");
  const auto s = kernels::overlap_sums(a, b);
  return (2.0 * s.ab + kDiceEpsilon) / (s.a + s.b + kDiceEpsilon);
}

std::vector<AlignmentPair> prepare_pairs(const std::vector<RegionPair>& regions,
                                         const Geometry& geometry) {
  auto place = [&](const BinaryMask& m, const std::optional<std::int64_t>& slice) {
    if (m.geometry().rank == 2 && geometry.rank == 3) {
      if (!slice) throw ShapeError("planar mask without a slice index");
      return m.lift(geometry, *slice).as_real();
    }
    require_same_dims(m.geometry(), geometry, "region pair");
    return m.as_real();
  };
  std::vector<AlignmentPair> pairs;
  for (const auto& r : regions) {
    pairs.push_back({place(r.fixed, r.fixed_slice), place(r.moving, r.moving_slice)});
  }
  return pairs;
}

RegionObjective::RegionObjective(Geometry geometry, std::vector<AlignmentPair> pairs,
                                 double lambda)
    : geometry_(geometry), pairs_(std::move(pairs)), lambda_(lambda) {
  if (pairs_.empty()) throw DomainError("region objective needs at least one pair");
  if (!(lambda_ >= 0.0) || !std::isfinite(lambda_)) {
    throw DomainError("regularization weight must be finite and non-negative");
  }
  for (const auto& p : pairs_) {
    if (p.fixed.size() != geometry_.voxel_count() ||
        p.moving.size() != geometry_.voxel_count()) {
      throw ShapeError("region pair does not match the field grid");
    }
  }
}

LossTerms RegionObjective::evaluate(const DisplacementField& ddf) const {
  return compute(ddf, nullptr);
}

LossTerms RegionObjective::evaluate(const DisplacementField& ddf,
                                    std::vector<double>& gradient) const {
  gradient.assign(ddf.values().size(), 0.0);
  return compute(ddf, &gradient);
}

LossTerms RegionObjective::compute(const DisplacementField& ddf,
                                   std::vector<double>* gradient) const {
  require_same_dims(geometry_, ddf.geometry(), "objective");
  const bool want_grad = gradient != nullptr;
  const std::size_t n = geometry_.voxel_count();
  const auto r = static_cast<std::size_t>(geometry_.rank);
  const double nd = static_cast<double>(n);
  const double k = static_cast<double>(pairs_.size());

  std::vector<double> warped(n);
  std::vector<double> dwarp(want_grad ? n * r : 0);
  LossTerms terms;
  for (const auto& pair : pairs_) {
    if (want_grad) {
      warp_into<true>(pair.moving, geometry_, ddf, warped, dwarp);
    } else {
      warp_into<false>(pair.moving, geometry_, ddf, warped, {});
    }
    const auto s = kernels::overlap_sums(pair.fixed, warped);
    const double denom = s.a + s.b + kDiceEpsilon;
    const double dice = (2.0 * s.ab + kDiceEpsilon) / denom;
    const double mse = s.sq_diff / nd;
    terms.pair_dice.push_back(dice);
    terms.roi += (0.5 * (1.0 - dice) + 0.5 * mse) / k;
    if (!want_grad) continue;
    // d/dw of (0.5 (1 - dice) + 0.5 mse) / K, then chain through the sampler.
    const double numer = 2.0 * s.ab + kDiceEpsilon;
    for (std::size_t i = 0; i < n; ++i) {
      const double ddice = (2.0 * pair.fixed[i] * denom - numer) / (denom * denom);
      const double dl = (-0.5 * ddice + (warped[i] - pair.fixed[i]) / nd) / k;
      if (dl == 0.0) continue;
      for (std::size_t a = 0; a < r; ++a) (*gradient)[i * r + a] += dl * dwarp[i * r + a];
    }
  }
  const auto theta = ddf.values();
  terms.reg = kernels::sum_sq(theta) / nd;
  terms.total = terms.roi + lambda_ * terms.reg;
  if (want_grad) kernels::axpy(2.0 * lambda_ / nd, theta, *gradient);
  return terms;
}

LossTerms loss(const std::vector<AlignmentPair>& pairs, const DisplacementField& ddf,
               double lambda) {
  return RegionObjective(ddf.geometry(), pairs, lambda).evaluate(ddf);
}

std::vector<double> gradient(const std::vector<AlignmentPair>& pairs,
                             const DisplacementField& ddf, double lambda) {
  std::vector<double> g;
  RegionObjective(ddf.geometry(), pairs, lambda).evaluate(ddf, g);
  return g;
}

json LossReport::to_json() const {
  json j = json::array();
  for (std::size_t i = 0; i < total.size(); ++i) {
    j.push_back({{"iteration", i + 1}, {"total", total[i]}, {"roi", roi[i]}, {"reg", reg[i]}});
  }
  return j;
}

std::vector<double> smooth_components(std::span<const double> field, const Geometry& g,
                                      double sigma) {
  std::vector<double> out(field.begin(), field.end());
  if (sigma <= 0.0) return out;
  const auto r = static_cast<std::size_t>(g.rank);
  const auto radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0.0;
  for (std::int64_t o = -radius; o <= radius; ++o) {
    const double w = std::exp(-0.5 * static_cast<double>(o * o) / (sigma * sigma));
    kernel[static_cast<std::size_t>(o + radius)] = w;
    norm += w;
  }
  for (auto& w : kernel) w /= norm;

  std::vector<double> tmp(out.size());
  for (int axis = 0; axis < g.rank; ++axis) {
    std::fill(tmp.begin(), tmp.end(), 0.0);
    const std::int64_t len = g.dims[axis];
    for (std::int64_t z = 0; z < g.dims[2]; ++z)
      for (std::int64_t y = 0; y < g.dims[1]; ++y)
        for (std::int64_t x = 0; x < g.dims[0]; ++x) {
          const std::array<std::int64_t, 3> p{x, y, z};
          const std::size_t i = g.index(x, y, z);
          for (std::int64_t o = -radius; o <= radius; ++o) {
            auto q = p;
            q[axis] += o;
            if (q[axis] < 0 || q[axis] >= len) continue;
            const double w = kernel[static_cast<std::size_t>(o + radius)];
            const std::size_t j = g.index(q[0], q[1], q[2]);
            for (std::size_t a = 0; a < r; ++a) tmp[i * r + a] += w * out[j * r + a];
          }
        }
    out.swap(tmp);
  }
  return out;
}

OptimizeResult optimize(const RegionObjective& objective, const OptimizerConfig& config) {
  if (!(config.step > 0.0) || !std::isfinite(config.step)) {
    throw DomainError("optimizer step size must be positive");
  }
  if (config.iterations < 0) throw DomainError("iteration count must be non-negative");
  const Geometry& g = objective.geometry();
  DisplacementField field(g);
  field.lambda = objective.lambda();
  field.step = config.step;

  std::vector<double> grad(field.values().size(), 0.0);
  LossTerms current = objective.evaluate(field, grad);
  OptimizeResult result{field, LossReport{}};
  result.report.initial_total = current.total;
  result.report.final_pair_dice = current.pair_dice;
  if (!std::isfinite(current.total)) {
    throw DivergenceError("initial loss is not finite", result);
  }

  DisplacementField trial(g);
  for (int it = 0; it < config.iterations; ++it) {
    if (config.in_plane_only && g.rank == 3) {
      for (std::size_t i = 2; i < grad.size(); i += 3) grad[i] = 0.0;
    }
    std::vector<double> direction = smooth_components(grad, g, config.smoothing_sigma);
    const double scale = kernels::max_abs(direction);
    if (scale == 0.0) {
      result.report.converged = true;
      break;
    }
    double alpha = config.step / scale;
    bool accepted = false;
    LossTerms next;
    for (int h = 0; h <= config.max_halvings; ++h, alpha *= 0.5) {
      auto tv = trial.values();
      std::copy(field.values().begin(), field.values().end(), tv.begin());
      kernels::axpy(-alpha, direction, tv);
      next = objective.evaluate(trial);
      if (!config.backtracking) {
        accepted = true;
        break;
      }
      if (std::isfinite(next.total) && next.total < current.total) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      result.report.converged = true;
      break;
    }
    if (!std::isfinite(next.total)) {
      result.field = field;
      result.field.lambda = objective.lambda();
      result.field.step = config.step;
      result.field.iterations = it;
      throw DivergenceError("loss became non-finite at iteration " + std::to_string(it + 1),
                            result);
    }
    std::swap(field, trial);
    current = objective.evaluate(field, grad);
    result.report.total.push_back(current.total);
    result.report.roi.push_back(current.roi);
    result.report.reg.push_back(current.reg);
    result.report.final_pair_dice = current.pair_dice;
  }
  field.lambda = objective.lambda();
  field.step = config.step;
  field.iterations = static_cast<int>(result.report.total.size());
  result.field = std::move(field);
  return result;
}

}  // namespace promptreg
