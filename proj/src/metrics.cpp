#include "promptreg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "promptreg/error.hpp"

namespace promptreg {

using nlohmann::json;

double dice(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a.geometry(), b.geometry(), "dice");
  const auto va = a.voxels();
  const auto vb = b.voxels();
  std::size_t inter = 0;
  std::size_t na = 0;
  std::size_t nb = 0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    inter += va[i] & vb[i];
    na += va[i];
    nb += vb[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double tre_centroid(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a.geometry(), b.geometry(), "tre_centroid");
  if (a.geometry().spacing != b.geometry().spacing) {
    throw ShapeError("tre_centroid: masks have different spacing");
  }
  const auto ca = a.centroid();
  const auto cb = b.centroid();
  if (!ca || !cb) throw DomainError("tre_centroid of an empty mask");
  double d2 = 0.0;
  for (int ax = 0; ax < 3; ++ax) {
    const double d = ((*ca)[ax] - (*cb)[ax]) * a.geometry().spacing[ax];
    d2 += d * d;
  }
  return std::sqrt(d2);
}

double DetectionTally::per_case() const {
  return instances == 0 ? 0.0 : static_cast<double>(detected) / static_cast<double>(instances);
}

double DetectionTally::per_roi() const {
  return pairs == 0 ? 0.0 : static_cast<double>(qualifying_pairs) / static_cast<double>(pairs);
}

DetectionTally& DetectionTally::operator+=(const DetectionTally& o) {
  instances += o.instances;
  detected += o.detected;
  pairs += o.pairs;
  qualifying_pairs += o.qualifying_pairs;
  return *this;
}

namespace {

double overlap_with_truth(const BinaryMask& roi, const std::optional<std::int64_t>& slice,
                          const BinaryMask& truth) {
  if (roi.geometry().rank == 2 && truth.geometry().rank == 3) {
    if (!slice) throw ShapeError("planar roi without slice against volumetric truth");
    return dice(roi, truth.slice(*slice));
  }
  return dice(roi, truth);
}

}  // namespace

bool pair_qualifies(const RegionPair& pair, const BinaryMask& gt_fixed,
                    const BinaryMask& gt_moving, double overlap_thresh) {
  return overlap_with_truth(pair.fixed, pair.fixed_slice, gt_fixed) >= overlap_thresh &&
         overlap_with_truth(pair.moving, pair.moving_slice, gt_moving) >= overlap_thresh;
}

DetectionTally tally_detection(const std::vector<RegionPair>& pairs, const BinaryMask& gt_fixed,
                               const BinaryMask& gt_moving, double overlap_thresh) {
  if (gt_fixed.empty() || gt_moving.empty()) {
    throw DomainError("detection needs nonempty ground-truth masks");
  }
  DetectionTally t;
  t.instances = 1;
  t.pairs = pairs.size();
  for (const auto& p : pairs) {
    if (pair_qualifies(p, gt_fixed, gt_moving, overlap_thresh)) ++t.qualifying_pairs;
  }
  t.detected = t.qualifying_pairs > 0 ? 1 : 0;
  return t;
}

double detection_ratio(const std::vector<RegionPair>& pairs, const BinaryMask& gt_fixed,
                       const BinaryMask& gt_moving, double overlap_thresh) {
  return tally_detection(pairs, gt_fixed, gt_moving, overlap_thresh).per_case();
}

double jacobian_negative_fraction(const DisplacementField& ddf) {
  const Geometry& g = ddf.geometry();
  const int r = g.rank;
  std::array<bool, 3> diff_axis{false, false, false};
  for (int a = 0; a < r; ++a) diff_axis[a] = g.dims[a] >= 3;
  std::size_t interior = 0;
  std::size_t folded = 0;
  const auto theta = ddf.values();
  const auto ru = static_cast<std::size_t>(r);
  for (std::int64_t z = 0; z < g.dims[2]; ++z)
    for (std::int64_t y = 0; y < g.dims[1]; ++y)
      for (std::int64_t x = 0; x < g.dims[0]; ++x) {
        const std::array<std::int64_t, 3> p{x, y, z};
        bool inside = true;
        for (int a = 0; a < r; ++a) {
          if (diff_axis[a] && (p[a] < 1 || p[a] > g.dims[a] - 2)) inside = false;
        }
        if (!inside) continue;
        double j[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        for (int b = 0; b < r; ++b) {
          if (!diff_axis[b]) continue;
          auto lo = p;
          auto hi = p;
          --lo[b];
          ++hi[b];
          const std::size_t il = g.index(lo[0], lo[1], lo[2]);
          const std::size_t ih = g.index(hi[0], hi[1], hi[2]);
          for (int a = 0; a < r; ++a) {
            const auto au = static_cast<std::size_t>(a);
            j[a][b] += 0.5 * (theta[ih * ru + au] - theta[il * ru + au]);
          }
        }
        const double det =
            r == 2 ? j[0][0] * j[1][1] - j[0][1] * j[1][0]
                   : j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
                         j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                         j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
        ++interior;
        if (det <= 0.0) ++folded;
      }
  return interior == 0 ? 0.0 : static_cast<double>(folded) / static_cast<double>(interior);
}

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "3d") return EvalMode::Volume;
  if (name == "2d") return EvalMode::PerSlice;
  throw ConfigError("evaluation mode must be '2d' or '3d', got '" + name + "'");
}

const char* eval_mode_name(EvalMode mode) { return mode == EvalMode::Volume ? "3d" : "2d"; }

json CaseMetrics::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"dice_before", dice_before},
          {"dice_after", dice_after},
          {"tre_before_mm", opt(tre_before_mm)},
          {"tre_after_mm", opt(tre_after_mm)},
          {"negative_jacobian_fraction", opt(negative_jacobian_fraction)}};
}

namespace {

struct Pairwise {
  double dice = 1.0;
  std::optional<double> tre;
};

Pairwise compare(const BinaryMask& a, const BinaryMask& b, EvalMode mode) {
  Pairwise out;
  const Geometry& g = a.geometry();
  if (mode == EvalMode::Volume || g.rank == 2) {
    out.dice = dice(a, b);
    if (!a.empty() && !b.empty()) out.tre = tre_centroid(a, b);
    return out;
  }
  double dice_sum = 0.0;
  std::size_t dice_n = 0;
  double tre_sum = 0.0;
  std::size_t tre_n = 0;
  for (std::int64_t z = 0; z < g.dims[2]; ++z) {
    const BinaryMask sa = a.slice(z);
    const BinaryMask sb = b.slice(z);
    const bool ea = sa.empty();
    const bool eb = sb.empty();
    if (ea && eb) continue;
    dice_sum += dice(sa, sb);
    ++dice_n;
    if (!ea && !eb) {
      tre_sum += tre_centroid(sa, sb);
      ++tre_n;
    }
  }
  out.dice = dice_n == 0 ? 1.0 : dice_sum / static_cast<double>(dice_n);
  if (tre_n > 0) out.tre = tre_sum / static_cast<double>(tre_n);
  return out;
}

std::string mean_std(const std::vector<double>& v) {
  if (v.empty()) return "/";
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  var = v.size() > 1 ? var / static_cast<double>(v.size() - 1) : 0.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f+-%.2f", m, std::sqrt(var));
  return buf;
}

}  // namespace

CaseMetrics evaluate_case(const BinaryMask& gt_fixed, const BinaryMask& gt_moving,
                          const DisplacementField* ddf, EvalMode mode) {
  require_same_dims(gt_fixed.geometry(), gt_moving.geometry(), "evaluate_case");
  CaseMetrics m;
  const Pairwise before = compare(gt_fixed, gt_moving, mode);
  m.dice_before = before.dice;
  m.tre_before_mm = before.tre;
  if (!ddf) {
    m.dice_after = before.dice;
    m.tre_after_mm = before.tre;
    return m;
  }
  const auto warped = warp(gt_moving.as_real(), gt_moving.geometry(), *ddf);
  const BinaryMask moved = binarize(gt_moving.geometry(), warped, 0.5);
  const Pairwise after = compare(gt_fixed, moved, mode);
  m.dice_after = after.dice;
  m.tre_after_mm = after.tre;
  m.negative_jacobian_fraction = jacobian_negative_fraction(*ddf);
  return m;
}

void check_prompt_row(const PromptRow& row) {
  if (row.corresponding > std::min(row.rois_fix, row.rois_mov)) {
    throw DomainError("prompt '" + row.prompt + "': " + std::to_string(row.corresponding) +
                      " correspondences exceed min(" + std::to_string(row.rois_fix) + ", " +
                      std::to_string(row.rois_mov) + ")");
  }
}

json EvaluationReport::to_json() const {
  json j;
  j["cases"] = json::array();
  for (const auto& c : cases) j["cases"].push_back(c.to_json());
  j["prompts"] = json::array();
  for (const auto& p : prompts) {
    j["prompts"].push_back({{"prompt", p.prompt},
                            {"rois_fix", p.rois_fix},
                            {"rois_mov", p.rois_mov},
                            {"corresponding", p.corresponding},
                            {"cases_evaluated", p.detection.instances},
                            {"cases_detected", p.detection.detected},
                            {"qualifying_pairs", p.detection.qualifying_pairs},
                            {"detection_ratio_per_case", p.detection.per_case()},
                            {"detection_ratio_per_roi", p.detection.per_roi()}});
  }
  j["final_pair_dice"] = final_pair_dice;
  return j;
}

std::string EvaluationReport::cases_csv() const {
  std::vector<double> db, da, tb, ta;
  for (const auto& c : cases) {
    db.push_back(c.dice_before);
    da.push_back(c.dice_after);
    if (c.tre_before_mm) tb.push_back(*c.tre_before_mm);
    if (c.tre_after_mm) ta.push_back(*c.tre_after_mm);
  }
  std::ostringstream os;
  os << "Methods,Dice,TRE(mm)\n";
  os << "Before register," << mean_std(db) << ',' << mean_std(tb) << '\n';
  os << "After register," << mean_std(da) << ',' << mean_std(ta) << '\n';
  return os.str();
}

std::string EvaluationReport::prompts_csv() const {
  std::ostringstream os;
  os << "Detected ROIs";
  for (const auto& p : prompts) os << ',' << p.prompt;
  os << "\nProstate ROI";
  for (const auto& p : prompts) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f%%", 100.0 * p.detection.per_case());
    os << ',' << buf;
  }
  os << "\nROIs Moving";
  for (const auto& p : prompts) os << ',' << p.rois_mov;
  os << "\nROIs Fixed";
  for (const auto& p : prompts) os << ',' << p.rois_fix;
  os << "\nCorresponding";
  for (const auto& p : prompts) os << ',' << p.corresponding;
  os << '\n';
  return os.str();
}

}  // namespace promptreg
