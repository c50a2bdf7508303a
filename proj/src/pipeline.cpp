#include "promptreg/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "promptreg/io.hpp"
#include "promptreg/manifest.hpp"

namespace promptreg::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kCorrespondence = "correspondence.json";
const char* kDdf = "ddf.t2r.json";
const char* kLossReport = "loss_report.json";

fs::path roi_dir(const fs::path& out, ImageTag tag) { return out / "rois" / tag_name(tag); }

BackendConfig backend_for(const PipelineConfig& config, const fs::path& work_dir) {
  BackendConfig b = config.backend;
  b.work_dir = work_dir;
  return b;
}

PromptRequest request_for(const PipelineConfig& config, const fs::path& image, ImageTag tag,
                          std::vector<std::string> prompts) {
  if (image.empty()) throw ConfigError(std::string(tag_name(tag)) + " image path is not set");
  PromptRequest r;
  r.image = image;
  r.prompts = std::move(prompts);
  r.slices = config.slices;
  r.tag = tag;
  r.per_slice = config.per_slice;
  r.seed = config.seed;
  return r;
}

PromptResponse only_prompt(const PromptResponse& response, const std::string& prompt) {
  PromptResponse out;
  out.embeddings = response.embeddings;
  for (const auto& r : response.rois)
    if (r.prompt == prompt) out.rois.push_back(r);
  return out;
}

std::size_t count_prompt(const PromptResponse& response, const std::string& prompt) {
  return static_cast<std::size_t>(std::count_if(response.rois.begin(), response.rois.end(),
                                                [&](const RoiRecord& r) { return r.prompt == prompt; }));
}

const RoiRecord* roi_by_id(const PromptResponse& response, int id) {
  for (const auto& r : response.rois)
    if (r.id == id) return &r;
  return nullptr;
}

void remove_artifact(const fs::path& header) {
  fs::remove(header);
  fs::remove(raw_path_for(header));
}

}  // namespace

void rethrow_tagged(const std::string& stage) {
  try {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError& e) {
    throw StageError(stage, e.what(), kExitConfig);
  } catch (const BackendError& e) {
    throw StageError(stage, e.what(), kExitBackend);
  } catch (const DivergenceError& e) {
    throw StageError(stage, e.what(), kExitDivergence);
  } catch (const std::exception& e) {
    throw StageError(stage, e.what(), kExitFailure);
  }
}

void write_resolved_config(const PipelineConfig& config, const fs::path& out) {
  fs::create_directories(out);
  write_text(out / "config.resolved.json", config.to_json().dump(2));
}

MatchedRegions run_match(const PipelineConfig& config, const fs::path& out) {
  std::string stage = "segment";
  try {
    fs::create_directories(out);
    auto backend = make_backend(backend_for(config, out / "sidecar"));
    PromptResponse filtered[2];
    for (ImageTag tag : {ImageTag::Fixed, ImageTag::Moving}) {
      stage = "segment";
      const auto& image = tag == ImageTag::Fixed ? config.fixed : config.moving;
      PromptResponse candidates =
          fetch_rois(request_for(config, image.resolved, tag, config.prompts), *backend);
      const fs::path dir = roi_dir(out, tag);
      fs::remove_all(dir);
      write_response(candidates, dir, "candidates.json");
      stage = "filter";
      filtered[tag == ImageTag::Fixed ? 0 : 1] = filter_boxes(candidates, config.filter);
      write_response(filtered[tag == ImageTag::Fixed ? 0 : 1], dir, "filtered.json");
    }
    stage = "match";
    MatchedRegions matched = match_pipeline(filtered[0], filtered[1], config.matching);
    write_text(out / kCorrespondence, matched.set.to_json().dump(2));
    return matched;
  } catch (...) {
    rethrow_tagged(stage);
  }
}

namespace {

struct StoredMatch {
  PromptResponse fixed;
  PromptResponse moving;
  CorrespondenceSet set;
  std::vector<RegionPair> regions;
};

StoredMatch load_match(const fs::path& out) {
  StoredMatch m;
  m.fixed = read_response(roi_dir(out, ImageTag::Fixed) / "filtered.json", ImageTag::Fixed);
  m.moving = read_response(roi_dir(out, ImageTag::Moving) / "filtered.json", ImageTag::Moving);
  const fs::path cp = out / kCorrespondence;
  if (!fs::exists(cp)) throw IoError("missing " + cp.string() + "; run the match stage first");
  try {
    m.set = CorrespondenceSet::from_json(json::parse(read_text(cp)));
  } catch (const json::exception& e) {
    throw FormatError(std::string("unparsable correspondence set: ") + e.what());
  }
  m.regions = attach_regions(m.set, m.fixed, m.moving);
  return m;
}

Geometry image_geometry(const PathRef& image) {
  if (image.empty()) throw ConfigError("fixed image path is not set");
  return read_header(image.resolved).geometry;
}

}  // namespace

OptimizeResult run_register(const PipelineConfig& config, const fs::path& out) {
  try {
    const StoredMatch m = load_match(out);
    if (m.regions.empty()) {
      throw DomainError("no corresponding region pairs to register");
    }
    const Geometry geometry = image_geometry(config.fixed);
    RegionObjective objective(geometry, prepare_pairs(m.regions, geometry),
                              config.ddf.optimizer.lambda);
    OptimizerConfig optimizer = config.ddf.optimizer;
    optimizer.in_plane_only = std::all_of(m.regions.begin(), m.regions.end(), [](const RegionPair& r) {
      return r.fixed_slice.has_value() && r.moving_slice.has_value();
    });
    try {
      OptimizeResult result = optimize(objective, optimizer);
      write_embedding(result.field.to_embedding(), out / kDdf, std::string("ddf"));
      write_text(out / kLossReport, result.report.to_json().dump(2));
      return result;
    } catch (const DivergenceError& e) {
      write_embedding(e.last().field.to_embedding(), out / kDdf, std::string("ddf"));
      write_text(out / kLossReport, e.last().report.to_json().dump(2));
      throw;
    }
  } catch (...) {
    rethrow_tagged("register");
  }
}

EvaluationReport run_evaluate(const PipelineConfig& config, const fs::path& out) {
  try {
    const StoredMatch m = load_match(out);
    std::optional<DisplacementField> ddf;
    if (config.ddf.enabled && fs::exists(out / kDdf)) {
      ddf = DisplacementField::from_embedding(read_embedding(out / kDdf));
    }
    const bool have_gt = !config.evaluation.gt_fixed.empty();
    std::optional<BinaryMask> gt_fixed;
    std::optional<BinaryMask> gt_moving;
    if (have_gt) {
      gt_fixed = read_mask(config.evaluation.gt_fixed.resolved);
      gt_moving = read_mask(config.evaluation.gt_moving.resolved);
    }

    EvaluationReport report;
    if (have_gt) {
      report.cases.push_back(evaluate_case(*gt_fixed, *gt_moving, ddf ? &*ddf : nullptr,
                                           config.evaluation.mode));
    }
    for (const auto& prompt : config.prompts) {
      PromptRow row;
      row.prompt = prompt;
      row.rois_fix = count_prompt(m.fixed, prompt);
      row.rois_mov = count_prompt(m.moving, prompt);
      std::vector<RegionPair> regions;
      for (std::size_t k = 0; k < m.set.pairs.size(); ++k) {
        const RoiRecord* rf = roi_by_id(m.fixed, m.set.pairs[k].fix_id);
        if (rf && rf->prompt == prompt) regions.push_back(m.regions[k]);
      }
      row.corresponding = regions.size();
      if (have_gt) {
        row.detection = tally_detection(regions, *gt_fixed, *gt_moving,
                                        config.evaluation.overlap_thresh);
      }
      if (!config.matching.cross_prompt) check_prompt_row(row);
      report.prompts.push_back(std::move(row));
    }
    if (ddf && !m.regions.empty()) {
      RegionObjective objective(ddf->geometry(), prepare_pairs(m.regions, ddf->geometry()),
                                config.ddf.optimizer.lambda);
      report.final_pair_dice = objective.evaluate(*ddf).pair_dice;
    }
    write_text(out / "report.json", report.to_json().dump(2));
    write_text(out / "report_cases.csv", report.cases_csv());
    write_text(out / "report_prompts.csv", report.prompts_csv());
    return report;
  } catch (...) {
    rethrow_tagged("evaluate");
  }
}

EvaluationReport run_all(const PipelineConfig& config, const fs::path& out) {
  try {
    config.validate();
    write_resolved_config(config, out);
  } catch (...) {
    rethrow_tagged("config");
  }
  run_match(config, out);
  if (config.ddf.enabled) {
    run_register(config, out);
  } else {
    remove_artifact(out / kDdf);
    fs::remove(out / kLossReport);
  }
  return run_evaluate(config, out);
}

EvaluationReport prompt_report(const PipelineConfig& config, const fs::path& out) {
  std::vector<CaseSpec> cases = config.cases;
  if (cases.empty()) {
    cases.push_back({config.fixed, config.moving, config.evaluation.gt_fixed,
                     config.evaluation.gt_moving});
  }
  std::string stage = "config";
  try {
    config.validate();
    fs::create_directories(out);
    EvaluationReport report;
    for (const auto& prompt : config.prompts) report.prompts.push_back({prompt, 0, 0, 0, {}});
    MatchOptions options = config.matching;
    options.cross_prompt = false;
    for (std::size_t c = 0; c < cases.size(); ++c) {
      stage = "segment";
      const CaseSpec& cs = cases[c];
      auto backend = make_backend(backend_for(config, out / "sidecar" / ("case_" + std::to_string(c))));
      const PromptResponse fix = filter_boxes(
          fetch_rois(request_for(config, cs.fixed.resolved, ImageTag::Fixed, config.prompts),
                     *backend),
          config.filter);
      const PromptResponse mov = filter_boxes(
          fetch_rois(request_for(config, cs.moving.resolved, ImageTag::Moving, config.prompts),
                     *backend),
          config.filter);
      std::optional<BinaryMask> gt_fixed;
      std::optional<BinaryMask> gt_moving;
      if (!cs.gt_fixed.empty() && !cs.gt_moving.empty()) {
        gt_fixed = read_mask(cs.gt_fixed.resolved);
        gt_moving = read_mask(cs.gt_moving.resolved);
      }
      stage = "match";
      for (auto& row : report.prompts) {
        const PromptResponse pf = only_prompt(fix, row.prompt);
        const PromptResponse pm = only_prompt(mov, row.prompt);
        const MatchedRegions matched = match_pipeline(pf, pm, options);
        row.rois_fix += pf.rois.size();
        row.rois_mov += pm.rois.size();
        row.corresponding += matched.set.pairs.size();
        if (gt_fixed) {
          row.detection += tally_detection(matched.regions, *gt_fixed, *gt_moving,
                                           config.evaluation.overlap_thresh);
        }
      }
    }
    stage = "report";
    for (const auto& row : report.prompts) check_prompt_row(row);
    write_text(out / "prompt_report.json", report.to_json().dump(2));
    write_text(out / "prompt_report.csv", report.prompts_csv());
    return report;
  } catch (...) {
    rethrow_tagged(stage);
  }
}

fixture::SceneSpec preset_scene(const std::string& name) {
  using fixture::ShapeKind;
  using fixture::ShapeSpec;
  fixture::SceneSpec s;
  auto disk = [](double r, std::array<double, 3> c, std::array<double, 3> d, int code,
                 bool gt) {
    ShapeSpec sh;
    sh.kind = ShapeKind::Disk;
    sh.radius = r;
    sh.center = c;
    sh.displacement = d;
    sh.code = code;
    sh.ground_truth = gt;
    return sh;
  };
  auto rect = [](std::array<double, 3> h, std::array<double, 3> c, std::array<double, 3> d,
                 int code) {
    ShapeSpec sh;
    sh.kind = ShapeKind::Rect;
    sh.half_extent = h;
    sh.center = c;
    sh.displacement = d;
    sh.code = code;
    return sh;
  };
  if (name == "identity") {
    s.shapes = {disk(8, {32, 32, 0}, {0, 0, 0}, 1, true)};
  } else if (name == "translation") {
    s.shapes = {disk(8, {32, 32, 0}, {3, 0, 0}, 1, true)};
  } else if (name == "three-shapes") {
    s.shapes = {disk(6, {16, 16, 0}, {2, 1, 0}, 1, true),
                rect({5, 3, 0}, {44, 18, 0}, {-2, 2, 0}, 2),
                disk(5, {30, 46, 0}, {1, -2, 0}, 3, false)};
  } else if (name == "six-prompt") {
    s.geometry = Geometry::make2d(96, 96);
    s.shapes = {disk(10, {30, 30, 0}, {2, 0, 0}, 1, true),
                rect({6, 4, 0}, {70, 24, 0}, {0, 2, 0}, 2),
                disk(6, {24, 72, 0}, {-1, 1, 0}, 3, false),
                rect({4, 8, 0}, {70, 70, 0}, {1, -1, 0}, 4)};
    s.vocabulary = {{"hole", {1, 2, 3, 4}}, {"head", {2}},       {"prostate", {1, 3}},
                    {"dog", {}},            {"correspond", {1}}, {"middle", {1, 4}}};
  } else if (name == "volume") {
    s.geometry = Geometry::make3d(32, 32, 12);
    s.shapes = {disk(5, {16, 16, 6}, {2, 0, 0}, 1, true)};
  } else {
    throw ConfigError("unknown fixture preset '" + name + "'");
  }
  return s;
}

void write_fixture(std::uint64_t seed, const fixture::SceneSpec& spec, const fs::path& out) {
  const fixture::Scene scene = fixture::generate(seed, spec);
  fs::create_directories(out / "shapes");
  write_volume(scene.fixed, out / "fixed.t2r.json");
  write_volume(scene.moving, out / "moving.t2r.json");
  write_mask(scene.gt_fixed, out / "gt_fixed.t2r.json");
  write_mask(scene.gt_moving, out / "gt_moving.t2r.json");
  write_embedding(scene.fixed_embedding, out / "fixed_embedding.t2r.json");
  write_embedding(scene.moving_embedding, out / "moving_embedding.t2r.json");

  json manifest;
  manifest["seed"] = seed;
  manifest["scene"] = spec.to_json();
  manifest["pairs"] = json::array();
  for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
    const auto& sh = scene.shapes[i];
    char name[64];
    std::snprintf(name, sizeof name, "shapes/shape_%02zu", i);
    write_mask(sh.fixed_mask, out / (std::string(name) + "_fixed.t2r.json"));
    write_mask(sh.moving_mask, out / (std::string(name) + "_moving.t2r.json"));
    const int r = spec.geometry.rank;
    manifest["pairs"].push_back(
        {{"fixed_shape", scene.pairing[i].first},
         {"moving_shape", scene.pairing[i].second},
         {"code", sh.code},
         {"center", std::vector<double>(sh.center.begin(), sh.center.begin() + r)},
         {"displacement", std::vector<double>(sh.displacement.begin(), sh.displacement.begin() + r)},
         {"fixed_mask", std::string(name) + "_fixed.t2r.json"},
         {"moving_mask", std::string(name) + "_moving.t2r.json"}});
  }
  write_text(out / "manifest.json", manifest.dump(2));

  PipelineConfig config;
  config.fixed = PathRef::from("fixed.t2r.json", out);
  config.moving = PathRef::from("moving.t2r.json", out);
  config.evaluation.gt_fixed = PathRef::from("gt_fixed.t2r.json", out);
  config.evaluation.gt_moving = PathRef::from("gt_moving.t2r.json", out);
  config.backend.id = "fixture";
  config.backend.vocabulary = spec.vocabulary;
  config.backend.grid_stride = spec.grid_stride;
  config.seed = seed;
  if (spec.geometry.rank == 3) {
    // Shapes move by known offsets, so planar ROIs only need to pair with
    // slices that far apart.
    double dz = 0.0;
    for (const auto& sh : spec.shapes) dz = std::max(dz, std::abs(sh.displacement[2]));
    config.matching.slice_window = static_cast<std::int64_t>(std::ceil(dz));
  }
  write_text(out / "pipeline.json", config.to_json().dump(2));
}

}  // namespace promptreg::pipeline
