#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptreg/correspondence.hpp"
#include "promptreg/ddf.hpp"
#include "promptreg/volume.hpp"

namespace promptreg {

// 2|A n B| / (|A| + |B|); 1 when both masks are empty.
double dice(const BinaryMask& a, const BinaryMask& b);

// Euclidean distance between the two mask centroids in millimetres.
// Throws DomainError on an empty mask, ShapeError on a geometry mismatch.
double tre_centroid(const BinaryMask& a, const BinaryMask& b);

// Detection counts for one prompt, accumulated over cases.
struct DetectionTally {
  std::size_t instances = 0;         // ground-truth structures evaluated
  std::size_t detected = 0;          // of those, covered by >= 1 qualifying pair
  std::size_t pairs = 0;             // matched pairs seen
  std::size_t qualifying_pairs = 0;  // pairs whose both masks overlap ground truth

  double per_case() const;
  double per_roi() const;
  DetectionTally& operator+=(const DetectionTally& other);
};

// A pair qualifies when Dice(fixed, gt_fixed) and Dice(moving, gt_moving)
// both reach `overlap_thresh`. Planar masks are compared against the
// matching slice of volumetric ground truth.
bool pair_qualifies(const RegionPair& pair, const BinaryMask& gt_fixed,
                    const BinaryMask& gt_moving, double overlap_thresh);

// Tally for one case holding a single ground-truth structure.
DetectionTally tally_detection(const std::vector<RegionPair>& pairs, const BinaryMask& gt_fixed,
                               const BinaryMask& gt_moving, double overlap_thresh = 0.5);

// Single-case detection ratio: 1 when some pair qualifies, else 0.
double detection_ratio(const std::vector<RegionPair>& pairs, const BinaryMask& gt_fixed,
                       const BinaryMask& gt_moving, double overlap_thresh = 0.5);

// Fraction of interior voxels where det(I + d ddf / dx) <= 0, using central
// differences along axes of length >= 3.
double jacobian_negative_fraction(const DisplacementField& ddf);

enum class EvalMode { Volume, PerSlice };
EvalMode parse_eval_mode(const std::string& name);
const char* eval_mode_name(EvalMode mode);

struct CaseMetrics {
  double dice_before = 0.0;
  double dice_after = 0.0;
  std::optional<double> tre_before_mm;
  std::optional<double> tre_after_mm;
  std::optional<double> negative_jacobian_fraction;

  nlohmann::json to_json() const;
};

// Compares gt_fixed with gt_moving before and, when a field is given,
// after warping gt_moving (binarized at 0.5). PerSlice averages in-plane
// Dice and centroid distance over the slices that hold ground truth.
CaseMetrics evaluate_case(const BinaryMask& gt_fixed, const BinaryMask& gt_moving,
                          const DisplacementField* ddf, EvalMode mode);

struct PromptRow {
  std::string prompt;
  std::size_t rois_fix = 0;
  std::size_t rois_mov = 0;
  std::size_t corresponding = 0;
  DetectionTally detection;
};

// Throws DomainError when corresponding exceeds min(rois_fix, rois_mov).
void check_prompt_row(const PromptRow& row);

struct EvaluationReport {
  std::vector<CaseMetrics> cases;
  std::vector<PromptRow> prompts;
  std::vector<double> final_pair_dice;

  nlohmann::json to_json() const;
  // Before/after Dice and TRE as mean +- std rows.
  std::string cases_csv() const;
  // Prompts as columns; rows: detection ratio, ROIs moving, ROIs fixed,
  // corresponding.
  std::string prompts_csv() const;
};

}  // namespace promptreg
