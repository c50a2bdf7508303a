#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptreg/segmenter.hpp"
#include "promptreg/volume.hpp"

namespace promptreg {

enum class MatchStrategy { MutualNN, Greedy };
enum class SimilarityMetric { Cosine, L2 };

const char* strategy_name(MatchStrategy s);
const char* metric_name(SimilarityMetric m);
MatchStrategy parse_strategy(const std::string& name);
SimilarityMetric parse_metric(const std::string& name);

struct Prototype {
  std::vector<double> values;
  int roi_id = 0;
  ImageTag source = ImageTag::Fixed;
};

// Dense K_fix x K_mov table. Entries involving an empty or zero-norm
// prototype are invalid rather than zero.
class SimilarityMatrix {
 public:
  SimilarityMatrix(std::size_t rows, std::size_t cols);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::optional<double> at(std::size_t i, std::size_t j) const {
    const auto k = i * cols_ + j;
    if (!valid_[k]) return std::nullopt;
    return values_[k];
  }
  void set(std::size_t i, std::size_t j, double v) {
    values_[i * cols_ + j] = v;
    valid_[i * cols_ + j] = 1;
  }
  void invalidate(std::size_t i, std::size_t j) { valid_[i * cols_ + j] = 0; }
  SimilarityMatrix transposed() const;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> values_;
  std::vector<std::uint8_t> valid_;
};

// One selected entry of a similarity matrix, by row and column index.
struct MatrixMatch {
  std::size_t row = 0;
  std::size_t col = 0;
  double similarity = 0.0;
  bool operator==(const MatrixMatch&) const = default;
};

struct Match {
  int fix_id = 0;
  int mov_id = 0;
  double similarity = 0.0;
  std::string prompt;
  bool operator==(const Match&) const = default;
};

struct CorrespondenceSet {
  std::vector<Match> pairs;
  MatchStrategy strategy = MatchStrategy::MutualNN;
  double tau = 0.5;
  SimilarityMetric metric = SimilarityMetric::Cosine;

  nlohmann::json to_json() const;
  static CorrespondenceSet from_json(const nlohmann::json& j);
};

// Nearest-neighbour resampling of a mask onto an embedding grid: grid cell
// g reads source voxel floor((g + 0.5) * dims / grid) per axis. When that
// loses every voxel of a nonempty mask, the cell holding the mask centroid
// is set instead. Throws DomainError on an empty mask.
BinaryMask resample_mask_to_grid(const BinaryMask& mask, const Geometry& grid);

// Mean embedding vector over the set cells of `grid_mask`.
Prototype pool_prototype(const EmbeddingGrid& embedding, const BinaryMask& grid_mask);

// Cosine similarity (or 1 / (1 + L2 distance)) for every pair. Missing
// prototypes (nullopt) and zero-norm cosine operands give invalid entries.
SimilarityMatrix similarity_matrix(
    const std::vector<std::optional<Prototype>>& fixed,
    const std::vector<std::optional<Prototype>>& moving,
    SimilarityMetric metric = SimilarityMetric::Cosine);

// mutual_nn keeps (i, j) when each is the other's best valid entry and
// S[i,j] >= tau; greedy repeatedly takes the largest remaining valid entry
// >= tau and retires its row and column. Ties go to the lowest (i, j).
// Output is sorted by row.
std::vector<MatrixMatch> match_rois(const SimilarityMatrix& s, double tau,
                                    MatchStrategy strategy);

struct MatchOptions {
  double tau = 0.5;
  MatchStrategy strategy = MatchStrategy::MutualNN;
  SimilarityMetric metric = SimilarityMetric::Cosine;
  // Match across prompts instead of within each prompt's ROIs.
  bool cross_prompt = false;
  // Maximum |slice_fix - slice_mov| for planar ROIs; unlimited when unset.
  std::optional<std::int64_t> slice_window;
};

// Full-resolution masks of a matched pair, in the order of `set.pairs`.
struct RegionPair {
  BinaryMask fixed;
  BinaryMask moving;
  std::optional<std::int64_t> fixed_slice;
  std::optional<std::int64_t> moving_slice;
};

struct MatchedRegions {
  CorrespondenceSet set;
  std::vector<RegionPair> regions;
};

// Prototype pooling, similarity and matching over two prompt responses.
MatchedRegions match_pipeline(const PromptResponse& fixed,
                              const PromptResponse& moving,
                              const MatchOptions& options);

// Rebuilds the region pairs of a stored correspondence set.
std::vector<RegionPair> attach_regions(const CorrespondenceSet& set,
                                       const PromptResponse& fixed,
                                       const PromptResponse& moving);

}  // namespace promptreg
