#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "promptreg/config.hpp"
#include "promptreg/fixture.hpp"
#include "promptreg/metrics.hpp"

// Stage orchestration behind the CLI. Every stage reads its inputs from and
// writes its artifacts to one output directory:
//
//   config.resolved.json
//   rois/{fixed,moving}/candidates.json, filtered.json, masks/, embeddings/
//   correspondence.json
//   ddf.t2r.json + ddf.t2r.raw, loss_report.json       (ddf.enabled only)
//   report.json, report_cases.csv, report_prompts.csv
//
// so `match`, `register` and `evaluate` run in sequence produce the same
// bytes as `run`.
namespace promptreg::pipeline {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitBackend = 3;
inline constexpr int kExitDivergence = 4;

// Wraps an error with the stage it came from.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message, int exit_code)
      : Error("[" + stage + "] " + message), stage_(std::move(stage)), exit_code_(exit_code) {}
  const std::string& stage() const { return stage_; }
  int exit_code() const { return exit_code_; }

 private:
  std::string stage_;
  int exit_code_;
};

void write_resolved_config(const PipelineConfig& config, const std::filesystem::path& out);

// fetch -> filter -> match. Writes rois/ and correspondence.json.
MatchedRegions run_match(const PipelineConfig& config, const std::filesystem::path& out);

// Optimizes a displacement field from the stored correspondence.
OptimizeResult run_register(const PipelineConfig& config, const std::filesystem::path& out);

// Builds report.json (+ CSV tables) from the stored artifacts.
EvaluationReport run_evaluate(const PipelineConfig& config, const std::filesystem::path& out);

// All stages; the DDF stage only when config.ddf.enabled.
EvaluationReport run_all(const PipelineConfig& config, const std::filesystem::path& out);

// Per-prompt ROI counts, correspondences and detection ratios aggregated over
// config.cases (or the config's own fixed/moving pair when no cases are listed).
EvaluationReport prompt_report(const PipelineConfig& config, const std::filesystem::path& out);

// Built-in scenes: "identity", "translation", "three-shapes", "six-prompt",
// "volume".
fixture::SceneSpec preset_scene(const std::string& name);

// Writes a fixture dataset: images, per-shape and ground-truth masks,
// embeddings, manifest.json and a ready-to-run pipeline.json.
void write_fixture(std::uint64_t seed, const fixture::SceneSpec& spec,
                   const std::filesystem::path& out);

// Maps an exception from a stage onto a StageError with the right exit code.
[[noreturn]] void rethrow_tagged(const std::string& stage);

}  // namespace promptreg::pipeline
