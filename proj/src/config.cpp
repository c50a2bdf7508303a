#include "promptreg/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "promptreg/error.hpp"
#include "promptreg/io.hpp"

namespace promptreg {

namespace fs = std::filesystem;
using nlohmann::json;

PathRef PathRef::from(const std::string& given, const fs::path& base) {
  if (given.empty()) return {};
  const fs::path p(given);
  return {given, p.is_absolute() ? p : base / p};
}

const std::vector<std::string>& default_prompts() {
  static const std::vector<std::string> prompts{"hole", "head",       "prostate",
                                                "dog",  "correspond", "middle"};
  return prompts;
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const char* section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown key '" + key + "' in " + section);
    }
  }
}

PathRef path_at(const json& j, const char* key, const fs::path& base) {
  if (!j.contains(key) || j[key].is_null()) return {};
  return PathRef::from(j[key].get<std::string>(), base);
}

json path_json(const PathRef& p) { return p.empty() ? json(nullptr) : json(p.given); }

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base) {
  PipelineConfig c;
  try {
    reject_unknown(j,
                   {"fixed", "moving", "prompts", "slices", "per_slice", "filter", "matching",
                    "ddf", "evaluation", "backend", "seed", "cases"},
                   "config");
    c.fixed = path_at(j, "fixed", base);
    c.moving = path_at(j, "moving", base);
    if (j.contains("prompts")) c.prompts = j["prompts"].get<std::vector<std::string>>();
    if (j.contains("slices") && !j["slices"].is_null()) {
      const auto s = j["slices"].get<std::vector<std::int64_t>>();
      if (s.size() != 2) throw ConfigError("slices must be [first, last)");
      c.slices = SliceRange{s[0], s[1]};
    }
    c.per_slice = j.value("per_slice", c.per_slice);
    if (j.contains("filter")) {
      const auto& f = j["filter"];
      reject_unknown(f, {"min_area_fraction", "max_area_fraction", "min_score"}, "filter");
      c.filter.min_area_fraction = f.value("min_area_fraction", c.filter.min_area_fraction);
      c.filter.max_area_fraction = f.value("max_area_fraction", c.filter.max_area_fraction);
      c.filter.min_score = f.value("min_score", c.filter.min_score);
    }
    if (j.contains("matching")) {
      const auto& m = j["matching"];
      reject_unknown(m, {"tau", "strategy", "metric", "cross_prompt", "slice_window"}, "matching");
      c.matching.tau = m.value("tau", c.matching.tau);
      if (m.contains("strategy")) c.matching.strategy = parse_strategy(m["strategy"]);
      if (m.contains("metric")) c.matching.metric = parse_metric(m["metric"]);
      c.matching.cross_prompt = m.value("cross_prompt", c.matching.cross_prompt);
      if (m.contains("slice_window") && !m["slice_window"].is_null()) {
        c.matching.slice_window = m["slice_window"].get<std::int64_t>();
      }
    }
    if (j.contains("ddf")) {
      const auto& d = j["ddf"];
      reject_unknown(d,
                     {"enabled", "lambda", "step", "iterations", "backtracking", "max_halvings",
                      "smoothing_sigma"},
                     "ddf");
      auto& o = c.ddf.optimizer;
      c.ddf.enabled = d.value("enabled", c.ddf.enabled);
      o.lambda = d.value("lambda", o.lambda);
      o.step = d.value("step", o.step);
      o.iterations = d.value("iterations", o.iterations);
      o.backtracking = d.value("backtracking", o.backtracking);
      o.max_halvings = d.value("max_halvings", o.max_halvings);
      o.smoothing_sigma = d.value("smoothing_sigma", o.smoothing_sigma);
    }
    if (j.contains("evaluation")) {
      const auto& e = j["evaluation"];
      reject_unknown(e, {"gt_fixed", "gt_moving", "overlap_thresh", "mode"}, "evaluation");
      c.evaluation.gt_fixed = path_at(e, "gt_fixed", base);
      c.evaluation.gt_moving = path_at(e, "gt_moving", base);
      c.evaluation.overlap_thresh = e.value("overlap_thresh", c.evaluation.overlap_thresh);
      if (e.contains("mode")) c.evaluation.mode = parse_eval_mode(e["mode"]);
    }
    if (j.contains("backend")) {
      const auto& b = j["backend"];
      reject_unknown(b, {"id", "command", "vocabulary", "grid_stride"}, "backend");
      c.backend.id = b.value("id", c.backend.id);
      if (b.contains("command")) {
        if (b["command"].is_string()) {
          c.backend.command = {b["command"].get<std::string>()};
        } else {
          c.backend.command = b["command"].get<std::vector<std::string>>();
        }
      }
      if (b.contains("vocabulary")) {
        c.backend.vocabulary = b["vocabulary"].get<std::map<std::string, std::vector<int>>>();
      }
      c.backend.grid_stride = b.value("grid_stride", c.backend.grid_stride);
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("cases")) {
      for (const auto& cj : j["cases"]) {
        reject_unknown(cj, {"fixed", "moving", "gt_fixed", "gt_moving"}, "case");
        c.cases.push_back({path_at(cj, "fixed", base), path_at(cj, "moving", base),
                           path_at(cj, "gt_fixed", base), path_at(cj, "gt_moving", base)});
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& file) {
  if (!fs::exists(file)) throw ConfigError("config file not found: " + file.string());
  json j;
  try {
    j = json::parse(read_text(file));
  } catch (const json::exception& e) {
    throw ConfigError("unparsable config " + file.string() + ": " + e.what());
  }
  return from_json(j, fs::absolute(file).parent_path());
}

void PipelineConfig::validate() const {
  if (prompts.empty()) throw ConfigError("prompt set is empty");
  for (const auto& p : prompts) {
    if (std::all_of(p.begin(), p.end(), [](unsigned char ch) { return std::isspace(ch); })) {
      throw ConfigError("blank prompt in prompt set");
    }
  }
  try {
    filter.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  if (!(matching.tau >= -1.0 && matching.tau <= 1.0)) {
    throw ConfigError("tau must lie in [-1,1], the range of the similarity");
  }
  if (matching.slice_window && *matching.slice_window < 0) {
    throw ConfigError("slice_window must be non-negative");
  }
  const auto& o = ddf.optimizer;
  if (!(o.lambda >= 0.0) || !std::isfinite(o.lambda)) throw ConfigError("lambda must be >= 0");
  if (!(o.step > 0.0) || !std::isfinite(o.step)) throw ConfigError("step must be > 0");
  if (o.iterations < 0) throw ConfigError("iterations must be >= 0");
  if (o.max_halvings < 0) throw ConfigError("max_halvings must be >= 0");
  if (!(o.smoothing_sigma >= 0.0)) throw ConfigError("smoothing_sigma must be >= 0");
  if (!(evaluation.overlap_thresh >= 0.0 && evaluation.overlap_thresh <= 1.0)) {
    throw ConfigError("overlap_thresh must lie in [0,1]");
  }
  if (evaluation.gt_fixed.empty() != evaluation.gt_moving.empty()) {
    throw ConfigError("gt_fixed and gt_moving must be given together");
  }
  if (backend.id != "fixture" && backend.id != "sidecar") {
    throw ConfigError("backend id must be 'fixture' or 'sidecar'");
  }
  if (backend.id == "sidecar" && backend.command.empty()) {
    throw ConfigError("sidecar backend needs a command");
  }
  if (backend.grid_stride < 1) throw ConfigError("grid_stride must be >= 1");
  if (slices && slices->first >= slices->last) throw ConfigError("empty slice range");
}

json PipelineConfig::to_json() const {
  json j;
  j["fixed"] = path_json(fixed);
  j["moving"] = path_json(moving);
  j["prompts"] = prompts;
  j["slices"] = slices ? json::array({slices->first, slices->last}) : json(nullptr);
  j["per_slice"] = per_slice;
  j["filter"] = {{"min_area_fraction", filter.min_area_fraction},
                 {"max_area_fraction", filter.max_area_fraction},
                 {"min_score", filter.min_score}};
  j["matching"] = {{"tau", matching.tau},
                   {"strategy", strategy_name(matching.strategy)},
                   {"metric", metric_name(matching.metric)},
                   {"cross_prompt", matching.cross_prompt},
                   {"slice_window", matching.slice_window ? json(*matching.slice_window)
                                                          : json(nullptr)}};
  const auto& o = ddf.optimizer;
  j["ddf"] = {{"enabled", ddf.enabled},
              {"lambda", o.lambda},
              {"step", o.step},
              {"iterations", o.iterations},
              {"backtracking", o.backtracking},
              {"max_halvings", o.max_halvings},
              {"smoothing_sigma", o.smoothing_sigma}};
  j["evaluation"] = {{"gt_fixed", path_json(evaluation.gt_fixed)},
                     {"gt_moving", path_json(evaluation.gt_moving)},
                     {"overlap_thresh", evaluation.overlap_thresh},
                     {"mode", eval_mode_name(evaluation.mode)}};
  j["backend"] = {{"id", backend.id},
                  {"command", backend.command},
                  {"vocabulary", backend.vocabulary},
                  {"grid_stride", backend.grid_stride}};
  j["seed"] = seed;
  j["cases"] = json::array();
  for (const auto& c : cases) {
    j["cases"].push_back({{"fixed", path_json(c.fixed)},
                          {"moving", path_json(c.moving)},
                          {"gt_fixed", path_json(c.gt_fixed)},
                          {"gt_moving", path_json(c.gt_moving)}});
  }
  return j;
}

}  // namespace promptreg
