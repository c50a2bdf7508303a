#include "promptreg/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "promptreg/error.hpp"
#include "promptreg/kernels.hpp"

namespace promptreg {

using nlohmann::json;

const char* strategy_name(MatchStrategy s) {
  return s == MatchStrategy::MutualNN ? "mutual_nn" : "greedy";
}

const char* metric_name(SimilarityMetric m) {
  return m == SimilarityMetric::Cosine ? "cosine" : "l2";
}

MatchStrategy parse_strategy(const std::string& name) {
  if (name == "mutual_nn") return MatchStrategy::MutualNN;
  if (name == "greedy") return MatchStrategy::Greedy;
  throw ConfigError("unknown matching strategy '" + name + "'");
}

SimilarityMetric parse_metric(const std::string& name) {
  if (name == "cosine") return SimilarityMetric::Cosine;
  if (name == "l2") return SimilarityMetric::L2;
  throw ConfigError("unknown similarity metric '" + name + "'");
}

SimilarityMatrix::SimilarityMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), values_(rows * cols, 0.0), valid_(rows * cols, 0) {}

SimilarityMatrix SimilarityMatrix::transposed() const {
  SimilarityMatrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j)
      if (auto v = at(i, j)) t.set(j, i, *v);
  return t;
}

json CorrespondenceSet::to_json() const {
  json j;
  j["pairs"] = json::array();
  for (const auto& p : pairs) {
    j["pairs"].push_back({{"fix_id", p.fix_id},
                          {"mov_id", p.mov_id},
                          {"similarity", p.similarity},
                          {"prompt", p.prompt}});
  }
  j["strategy"] = strategy_name(strategy);
  j["tau"] = tau;
  j["metric"] = metric_name(metric);
  return j;
}

CorrespondenceSet CorrespondenceSet::from_json(const json& j) {
  try {
    CorrespondenceSet set;
    for (const auto& p : j.at("pairs")) {
      set.pairs.push_back({p.at("fix_id").get<int>(), p.at("mov_id").get<int>(),
                           p.at("similarity").get<double>(),
                           p.at("prompt").get<std::string>()});
    }
    set.strategy = parse_strategy(j.at("strategy").get<std::string>());
    set.tau = j.at("tau").get<double>();
    set.metric = parse_metric(j.at("metric").get<std::string>());
    return set;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed correspondence set: ") + e.what());
  }
}

BinaryMask resample_mask_to_grid(const BinaryMask& mask, const Geometry& grid) {
  const Geometry& src = mask.geometry();
  if (src.rank != grid.rank) throw ShapeError("mask and grid ranks differ");
  if (mask.empty()) throw DomainError("cannot resample an empty mask");
  std::array<std::vector<std::int64_t>, 3> lookup;
  for (int a = 0; a < 3; ++a) {
    lookup[a].resize(static_cast<std::size_t>(grid.dims[a]));
    for (std::int64_t g = 0; g < grid.dims[a]; ++g) {
      const auto s = static_cast<std::int64_t>(
          std::floor((static_cast<double>(g) + 0.5) * static_cast<double>(src.dims[a]) /
                     static_cast<double>(grid.dims[a])));
      lookup[a][static_cast<std::size_t>(g)] = std::clamp<std::int64_t>(s, 0, src.dims[a] - 1);
    }
  }
  std::vector<std::uint8_t> bits(grid.voxel_count(), 0);
  bool any = false;
  for (std::int64_t z = 0; z < grid.dims[2]; ++z)
    for (std::int64_t y = 0; y < grid.dims[1]; ++y)
      for (std::int64_t x = 0; x < grid.dims[0]; ++x) {
        const bool set = mask.at(lookup[0][static_cast<std::size_t>(x)],
                                 lookup[1][static_cast<std::size_t>(y)],
                                 lookup[2][static_cast<std::size_t>(z)]);
        bits[grid.index(x, y, z)] = set ? 1 : 0;
        any = any || set;
      }
  if (!any) {
    const auto c = *mask.centroid();
    std::array<std::int64_t, 3> cell{0, 0, 0};
    for (int a = 0; a < 3; ++a) {
      const auto k = static_cast<std::int64_t>(std::floor(
          (c[a] + 0.5) * static_cast<double>(grid.dims[a]) / static_cast<double>(src.dims[a])));
      cell[a] = std::clamp<std::int64_t>(k, 0, grid.dims[a] - 1);
    }
    bits[grid.index(cell[0], cell[1], cell[2])] = 1;
  }
  return BinaryMask(grid, std::move(bits));
}

Prototype pool_prototype(const EmbeddingGrid& embedding, const BinaryMask& grid_mask) {
  require_same_dims(embedding.geometry(), grid_mask.geometry(), "pool_prototype");
  Prototype p;
  p.values.assign(static_cast<std::size_t>(embedding.channels()), 0.0);
  std::size_t n = 0;
  const auto bits = grid_mask.voxels();
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (!bits[i]) continue;
    kernels::accumulate(embedding.cell(i), p.values);
    ++n;
  }
  if (n == 0) throw DomainError("prototype pooling over an empty grid mask");
  for (auto& v : p.values) v /= static_cast<double>(n);
  return p;
}

SimilarityMatrix similarity_matrix(const std::vector<std::optional<Prototype>>& fixed,
                                   const std::vector<std::optional<Prototype>>& moving,
                                   SimilarityMetric metric) {
  std::size_t channels = 0;
  auto check = [&](const std::optional<Prototype>& p) {
    if (!p) return;
    if (channels == 0) channels = p->values.size();
    if (p->values.size() != channels) throw ShapeError("prototype channel mismatch");
  };
  std::for_each(fixed.begin(), fixed.end(), check);
  std::for_each(moving.begin(), moving.end(), check);

  auto norms = [](const std::vector<std::optional<Prototype>>& list) {
    std::vector<double> out;
    for (const auto& p : list) out.push_back(p ? std::sqrt(kernels::sum_sq(p->values)) : 0.0);
    return out;
  };
  const auto nf = norms(fixed);
  const auto nm = norms(moving);

  SimilarityMatrix s(fixed.size(), moving.size());
  std::vector<double> diff(channels);
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    if (!fixed[i]) continue;
    for (std::size_t j = 0; j < moving.size(); ++j) {
      if (!moving[j]) continue;
      if (metric == SimilarityMetric::Cosine) {
        if (nf[i] == 0.0 || nm[j] == 0.0) continue;
        const double c = kernels::dot(fixed[i]->values, moving[j]->values) / (nf[i] * nm[j]);
        s.set(i, j, std::clamp(c, -1.0, 1.0));
      } else {
        std::copy(fixed[i]->values.begin(), fixed[i]->values.end(), diff.begin());
        kernels::axpy(-1.0, moving[j]->values, diff);
        s.set(i, j, 1.0 / (1.0 + std::sqrt(kernels::sum_sq(diff))));
      }
    }
  }
  return s;
}

std::vector<MatrixMatch> match_rois(const SimilarityMatrix& s, double tau,
                                    MatchStrategy strategy) {
  std::vector<MatrixMatch> out;
  if (strategy == MatchStrategy::MutualNN) {
    constexpr auto none = static_cast<std::size_t>(-1);
    std::vector<std::size_t> row_best(s.rows(), none);
    std::vector<std::size_t> col_best(s.cols(), none);
    std::vector<double> row_val(s.rows());
    std::vector<double> col_val(s.cols());
    for (std::size_t i = 0; i < s.rows(); ++i)
      for (std::size_t j = 0; j < s.cols(); ++j) {
        const auto v = s.at(i, j);
        if (!v) continue;
        if (row_best[i] == none || *v > row_val[i]) {
          row_best[i] = j;
          row_val[i] = *v;
        }
        if (col_best[j] == none || *v > col_val[j]) {
          col_best[j] = i;
          col_val[j] = *v;
        }
      }
    for (std::size_t i = 0; i < s.rows(); ++i) {
      const std::size_t j = row_best[i];
      if (j != none && col_best[j] == i && row_val[i] >= tau) {
        out.push_back({i, j, row_val[i]});
      }
    }
    return out;
  }

  std::vector<MatrixMatch> candidates;
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = 0; j < s.cols(); ++j)
      if (auto v = s.at(i, j); v && *v >= tau) candidates.push_back({i, j, *v});
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const MatrixMatch& a, const MatrixMatch& b) {
                     return a.similarity > b.similarity;
                   });
  std::vector<std::uint8_t> row_used(s.rows(), 0);
  std::vector<std::uint8_t> col_used(s.cols(), 0);
  for (const auto& c : candidates) {
    if (row_used[c.row] || col_used[c.col]) continue;
    row_used[c.row] = col_used[c.col] = 1;
    out.push_back(c);
  }
  std::sort(out.begin(), out.end(),
            [](const MatrixMatch& a, const MatrixMatch& b) { return a.row < b.row; });
  return out;
}

namespace {

std::optional<Prototype> prototype_of(const RoiRecord& roi, const PromptResponse& response) {
  if (roi.mask.empty()) return std::nullopt;
  const EmbeddingGrid* grid = response.embedding_for(roi.slice_index);
  if (!grid) throw ShapeError("no embedding for roi " + std::to_string(roi.id));
  Prototype p = pool_prototype(*grid, resample_mask_to_grid(roi.mask, grid->geometry()));
  p.roi_id = roi.id;
  p.source = roi.source;
  return p;
}

const RoiRecord& find_roi(const PromptResponse& response, int id) {
  for (const auto& r : response.rois)
    if (r.id == id) return r;
  throw FormatError("correspondence refers to unknown roi " + std::to_string(id));
}

}  // namespace

MatchedRegions match_pipeline(const PromptResponse& fixed, const PromptResponse& moving,
                              const MatchOptions& options) {
  if (fixed.channels() != 0 && moving.channels() != 0 &&
      fixed.channels() != moving.channels()) {
    throw ShapeError("fixed and moving embeddings differ in channel count");
  }
  std::vector<std::optional<Prototype>> pf;
  std::vector<std::optional<Prototype>> pm;
  for (const auto& r : fixed.rois) pf.push_back(prototype_of(r, fixed));
  for (const auto& r : moving.rois) pm.push_back(prototype_of(r, moving));

  // Row/column groups: one per prompt, or a single group across prompts.
  std::vector<std::string> group_keys;
  auto key_of = [&](const RoiRecord& r) {
    return options.cross_prompt ? std::string() : r.prompt;
  };
  for (const auto& r : fixed.rois) {
    const auto k = key_of(r);
    if (std::find(group_keys.begin(), group_keys.end(), k) == group_keys.end()) {
      group_keys.push_back(k);
    }
  }

  MatchedRegions result;
  result.set.strategy = options.strategy;
  result.set.tau = options.tau;
  result.set.metric = options.metric;
  for (const auto& key : group_keys) {
    std::vector<std::size_t> rows;
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < fixed.rois.size(); ++i)
      if (key_of(fixed.rois[i]) == key) rows.push_back(i);
    for (std::size_t j = 0; j < moving.rois.size(); ++j)
      if (key_of(moving.rois[j]) == key) cols.push_back(j);
    if (cols.empty()) continue;
    std::vector<std::optional<Prototype>> gf;
    std::vector<std::optional<Prototype>> gm;
    for (auto i : rows) gf.push_back(pf[i]);
    for (auto j : cols) gm.push_back(pm[j]);
    SimilarityMatrix s = similarity_matrix(gf, gm, options.metric);
    if (options.slice_window) {
      for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = 0; b < cols.size(); ++b) {
          const auto& sf = fixed.rois[rows[a]].slice_index;
          const auto& sm = moving.rois[cols[b]].slice_index;
          if (sf && sm && std::llabs(*sf - *sm) > *options.slice_window) s.invalidate(a, b);
        }
    }
    for (const auto& m : match_rois(s, options.tau, options.strategy)) {
      const RoiRecord& rf = fixed.rois[rows[m.row]];
      const RoiRecord& rm = moving.rois[cols[m.col]];
      const std::string prompt =
          rf.prompt == rm.prompt ? rf.prompt : rf.prompt + "|" + rm.prompt;
      result.set.pairs.push_back({rf.id, rm.id, m.similarity, prompt});
    }
  }
  std::stable_sort(result.set.pairs.begin(), result.set.pairs.end(),
                   [](const Match& a, const Match& b) { return a.fix_id < b.fix_id; });
  result.regions = attach_regions(result.set, fixed, moving);
  return result;
}

std::vector<RegionPair> attach_regions(const CorrespondenceSet& set,
                                       const PromptResponse& fixed,
                                       const PromptResponse& moving) {
  std::vector<RegionPair> regions;
  for (const auto& p : set.pairs) {
    const RoiRecord& rf = find_roi(fixed, p.fix_id);
    const RoiRecord& rm = find_roi(moving, p.mov_id);
    regions.push_back({rf.mask, rm.mask, rf.slice_index, rm.slice_index});
  }
  return regions;
}

}  // namespace promptreg
