#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "promptreg/correspondence.hpp"
#include "promptreg/error.hpp"
#include "promptreg/volume.hpp"

namespace promptreg {

// Per-voxel displacement in voxel units on the fixed image grid, stored
// channel-last (rank components per voxel). Held in double precision;
// serialized as a float32 embedding with role "ddf".
class DisplacementField {
 public:
  explicit DisplacementField(const Geometry& geometry);
  DisplacementField(const Geometry& geometry, std::vector<double> components);

  const Geometry& geometry() const { return geometry_; }
  int rank() const { return geometry_.rank; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  std::array<double, 3> at(std::size_t voxel) const;

  EmbeddingGrid to_embedding() const;
  static DisplacementField from_embedding(const EmbeddingGrid& grid);

  // Settings that produced the field.
  double lambda = 0.0;
  double step = 0.0;
  int iterations = 0;

 private:
  Geometry geometry_;
  std::vector<double> values_;
};

// Backward warp with multilinear interpolation: out(x) = in(x + ddf(x)).
// Corners outside the grid read 0. Throws ShapeError on a dims mismatch.
std::vector<double> warp(std::span<const double> image, const Geometry& geometry,
                         const DisplacementField& ddf);
Volume warp(const Volume& image, const DisplacementField& ddf);
Volume warp(const BinaryMask& mask, const DisplacementField& ddf);

inline constexpr double kDiceEpsilon = 1e-6;

// (2 sum(ab) + eps) / (sum(a) + sum(b) + eps)
double soft_dice(std::span<const double> a, std::span<const double> b);

// A matched region pair as real-valued masks on the field's grid.
struct AlignmentPair {
  std::vector<double> fixed;
  std::vector<double> moving;
};

// Lifts planar masks into the volume grid when needed and converts to reals.
std::vector<AlignmentPair> prepare_pairs(const std::vector<RegionPair>& regions,
                                         const Geometry& geometry);

struct LossTerms {
  double total = 0.0;
  double roi = 0.0;  // mean over pairs of 0.5 (1 - soft Dice) + 0.5 MSE
  double reg = 0.0;  // mean squared displacement magnitude over voxels
  std::vector<double> pair_dice;
};

// Region alignment objective  mean_k L_roi(F_k, warp(M_k)) + lambda * L_reg.
class RegionObjective {
 public:
  RegionObjective(Geometry geometry, std::vector<AlignmentPair> pairs, double lambda);

  const Geometry& geometry() const { return geometry_; }
  double lambda() const { return lambda_; }

  LossTerms evaluate(const DisplacementField& ddf) const;
  // Also overwrites `gradient` with dL/d(ddf), same layout as the field.
  LossTerms evaluate(const DisplacementField& ddf, std::vector<double>& gradient) const;

 private:
  LossTerms compute(const DisplacementField& ddf, std::vector<double>* gradient) const;

  Geometry geometry_;
  std::vector<AlignmentPair> pairs_;
  double lambda_;
};

LossTerms loss(const std::vector<AlignmentPair>& pairs, const DisplacementField& ddf,
               double lambda);
std::vector<double> gradient(const std::vector<AlignmentPair>& pairs,
                             const DisplacementField& ddf, double lambda);

struct OptimizerConfig {
  double lambda = 0.01;
  // Largest per-component displacement change of a full step, in voxels.
  double step = 1.0;
  int iterations = 200;
  bool backtracking = true;
  int max_halvings = 20;
  // Gaussian width (voxels) applied to the gradient before stepping; 0
  // steps along the raw gradient.
  double smoothing_sigma = 10.0;
  // Keep the through-plane component at zero (rank-3 fields only). Planar
  // ROI pairs say nothing about motion across slices.
  bool in_plane_only = false;
};

struct LossReport {
  double initial_total = 0.0;
  std::vector<double> total;
  std::vector<double> roi;
  std::vector<double> reg;
  std::vector<double> final_pair_dice;
  bool converged = false;

  // JSON array with one {iteration, total, roi, reg} entry per iteration.
  nlohmann::json to_json() const;
};

struct OptimizeResult {
  DisplacementField field;
  LossReport report;
};

// Non-finite loss; carries the last finite state.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, OptimizeResult last)
      : Error(what), last_(std::move(last)) {}
  const OptimizeResult& last() const { return last_; }

 private:
  OptimizeResult last_;
};

// Gradient descent from the zero field. Each step moves along the
// (optionally smoothed) negative gradient scaled so its largest component
// equals `step`; with backtracking the step is halved until the total loss
// decreases, and the loop stops early when no halving helps.
OptimizeResult optimize(const RegionObjective& objective, const OptimizerConfig& config);

// Separable zero-padded Gaussian blur of each field component.
std::vector<double> smooth_components(std::span<const double> field, const Geometry& geometry,
                                      double sigma);

}  // namespace promptreg
