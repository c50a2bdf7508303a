#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptreg/correspondence.hpp"
#include "promptreg/ddf.hpp"
#include "promptreg/metrics.hpp"
#include "promptreg/segmenter.hpp"

namespace promptreg {

// A path as written in the config (echoed verbatim) and as resolved
// against the config file's directory.
struct PathRef {
  std::string given;
  std::filesystem::path resolved;

  static PathRef from(const std::string& given, const std::filesystem::path& base);
  bool empty() const { return given.empty(); }
};

// The fixed prompt set used when a config names none.
const std::vector<std::string>& default_prompts();

struct EvaluationConfig {
  PathRef gt_fixed;
  PathRef gt_moving;
  double overlap_thresh = 0.5;
  EvalMode mode = EvalMode::Volume;
};

struct DdfConfig {
  bool enabled = true;
  OptimizerConfig optimizer;
};

struct CaseSpec {
  PathRef fixed;
  PathRef moving;
  PathRef gt_fixed;
  PathRef gt_moving;
};

struct PipelineConfig {
  PathRef fixed;
  PathRef moving;
  std::vector<std::string> prompts = default_prompts();
  std::optional<SliceRange> slices;
  bool per_slice = true;
  FilterPolicy filter;
  MatchOptions matching;
  DdfConfig ddf;
  EvaluationConfig evaluation;
  BackendConfig backend;
  std::uint64_t seed = 0;
  std::vector<CaseSpec> cases;

  // Unknown keys and out-of-range values raise ConfigError.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base);
  static PipelineConfig load(const std::filesystem::path& file);
  // Every setting with defaults filled in; paths as given.
  nlohmann::json to_json() const;
  void validate() const;
};

}  // namespace promptreg
