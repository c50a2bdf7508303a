#include <doctest.h>

#include <json.hpp>

#include "promptreg/error.hpp"
#include "promptreg/io.hpp"
#include "promptreg/kernels.hpp"
#include "promptreg/pipeline.hpp"
#include "promptreg/sidecar.hpp"
#include "test_support.hpp"

using namespace promptreg;
using namespace promptreg::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

PipelineConfig fixture_config(const TempDir& tmp, const std::string& preset,
                              std::uint64_t seed = 0) {
  write_fixture(seed, preset_scene(preset), tmp / "data");
  return PipelineConfig::load(tmp / "data" / "pipeline.json");
}

int cli(const std::vector<std::string>& args) {
  std::vector<std::string> argv{PROMPTREG_CLI_PATH};
  argv.insert(argv.end(), args.begin(), args.end());
  return run_process(argv);
}

}  // namespace

TEST_CASE("identity scene end to end") {
  TempDir tmp("pipe_identity");
  const PipelineConfig config = fixture_config(tmp, "identity");
  const EvaluationReport report = run_all(config, tmp / "out");
  REQUIRE(report.cases.size() == 1);
  CHECK(report.cases[0].dice_before == 1.0);
  CHECK(report.cases[0].dice_after == 1.0);
  CHECK(*report.cases[0].tre_after_mm == 0.0);

  const auto set = CorrespondenceSet::from_json(json::parse(read_text(tmp / "out" / "correspondence.json")));
  CHECK(set.pairs.size() == config.prompts.size());
  for (const auto& p : set.pairs) {
    CHECK(p.fix_id == p.mov_id);
    CHECK(p.similarity >= 0.99);
  }
  const auto field = DisplacementField::from_embedding(read_embedding(tmp / "out" / "ddf.t2r.json"));
  CHECK(kernels::max_abs(field.values()) < 0.1);
}

TEST_CASE("translation scene improves overlap") {
  TempDir tmp("pipe_translation");
  const EvaluationReport report = run_all(fixture_config(tmp, "translation"), tmp / "out");
  REQUIRE(report.cases.size() == 1);
  CHECK(report.cases[0].dice_after > report.cases[0].dice_before);
  CHECK(*report.cases[0].tre_after_mm < *report.cases[0].tre_before_mm);
  CHECK(fs::exists(tmp / "out" / "loss_report.json"));
  const json losses = json::parse(read_text(tmp / "out" / "loss_report.json"));
  REQUIRE(losses.is_array());
  CHECK(losses.size() >= 1);
}

TEST_CASE("disabling the field leaves matching untouched") {
  TempDir tmp("pipe_noddf");
  PipelineConfig config = fixture_config(tmp, "three-shapes");
  run_all(config, tmp / "with");
  config.ddf.enabled = false;
  const EvaluationReport report = run_all(config, tmp / "without");
  CHECK_FALSE(fs::exists(tmp / "without" / "ddf.t2r.json"));
  CHECK_FALSE(fs::exists(tmp / "without" / "loss_report.json"));
  CHECK(report.cases[0].dice_after == report.cases[0].dice_before);
  CHECK(report.final_pair_dice.empty());

  const auto with = snapshot(tmp / "with");
  const auto without = snapshot(tmp / "without");
  for (const auto& [name, bytes] : without) {
    if (name.rfind("rois/", 0) == 0 || name == "correspondence.json") {
      REQUIRE(with.count(name));
      CHECK_MESSAGE(with.at(name) == bytes, name);
    }
  }
}

TEST_CASE("three shapes pair up as constructed") {
  TempDir tmp("pipe_three");
  const PipelineConfig config = fixture_config(tmp, "three-shapes");
  const MatchedRegions m = run_match(config, tmp / "out");
  const json manifest = json::parse(read_text(tmp / "data" / "manifest.json"));
  CHECK(manifest["pairs"].size() == 3);
  // Every prompt sees the three shapes; each match links masks of one shape.
  CHECK(m.set.pairs.size() == 3 * config.prompts.size());
  for (const auto& r : m.regions) {
    const auto cf = *r.fixed.centroid();
    const auto cm = *r.moving.centroid();
    bool known = false;
    for (const auto& p : manifest["pairs"]) {
      const auto c = p["center"].get<std::vector<double>>();
      const auto d = p["displacement"].get<std::vector<double>>();
      if (std::abs(cf[0] - c[0]) < 1 && std::abs(cf[1] - c[1]) < 1) {
        known = std::abs(cm[0] - c[0] - d[0]) < 1 && std::abs(cm[1] - c[1] - d[1]) < 1;
      }
    }
    CHECK(known);
  }
}

TEST_CASE("stage-by-stage equals a full run") {
  TempDir tmp("pipe_stages");
  const PipelineConfig config = fixture_config(tmp, "three-shapes");
  run_all(config, tmp / "full");
  write_resolved_config(config, tmp / "staged");
  run_match(config, tmp / "staged");
  run_register(config, tmp / "staged");
  run_evaluate(config, tmp / "staged");
  CHECK(snapshot(tmp / "full") == snapshot(tmp / "staged"));
}

TEST_CASE("repeat runs are bitwise identical") {
  TempDir tmp("pipe_repeat");
  const PipelineConfig config = fixture_config(tmp, "three-shapes", 9);
  run_all(config, tmp / "a");
  run_all(config, tmp / "b");
  CHECK(snapshot(tmp / "a") == snapshot(tmp / "b"));

  write_fixture(9, preset_scene("three-shapes"), tmp / "data2");
  const auto d1 = snapshot(tmp / "data");
  const auto d2 = snapshot(tmp / "data2");
  CHECK(d1 == d2);
}

TEST_CASE("volumetric scene, per-slice segmentation") {
  TempDir tmp("pipe_volume");
  PipelineConfig config = fixture_config(tmp, "volume");
  config.prompts = {"prostate"};
  config.ddf.optimizer.iterations = 40;
  for (EvalMode mode : {EvalMode::Volume, EvalMode::PerSlice}) {
    config.evaluation.mode = mode;
    const EvaluationReport report = run_all(config, tmp / "out");
    REQUIRE(report.cases.size() == 1);
    CHECK(report.cases[0].dice_after > report.cases[0].dice_before);
    CHECK(report.prompts[0].detection.per_case() == 1.0);
  }
}

TEST_CASE("six-prompt report") {
  TempDir tmp("pipe_six");
  const PipelineConfig config = fixture_config(tmp, "six-prompt");
  const EvaluationReport report = prompt_report(config, tmp / "out");
  REQUIRE(report.prompts.size() == 6);
  const std::vector<std::string> order{"hole", "head", "prostate", "dog", "correspond", "middle"};
  const std::vector<std::size_t> rois{4, 1, 2, 0, 1, 2};
  const std::vector<double> ratio{1, 0, 1, 0, 1, 1};
  for (std::size_t k = 0; k < 6; ++k) {
    CAPTURE(order[k]);
    const PromptRow& row = report.prompts[k];
    CHECK(row.prompt == order[k]);
    CHECK(row.rois_fix == rois[k]);
    CHECK(row.rois_mov == rois[k]);
    CHECK(row.corresponding == rois[k]);
    CHECK(row.detection.per_case() == ratio[k]);
  }
  CHECK(fs::exists(tmp / "out" / "prompt_report.csv"));
  const std::string csv = read_text(tmp / "out" / "prompt_report.csv");
  CHECK(csv.rfind("Detected ROIs,hole,head,prostate,dog,correspond,middle\n", 0) == 0);
}

TEST_CASE("config errors") {
  TempDir tmp("pipe_config");
  const json base = json::parse(R"({"fixed":"f.t2r.json","moving":"m.t2r.json"})");
  CHECK_NOTHROW(PipelineConfig::from_json(base, tmp.path()));
  json bad = base;
  bad["unknown_key"] = 1;
  CHECK_THROWS_AS(PipelineConfig::from_json(bad, tmp.path()), ConfigError);
  bad = base;
  bad["matching"] = {{"tau", 1.5}};
  CHECK_THROWS_AS(PipelineConfig::from_json(bad, tmp.path()), ConfigError);
  bad = base;
  bad["ddf"] = {{"lambda", -1}};
  CHECK_THROWS_AS(PipelineConfig::from_json(bad, tmp.path()), ConfigError);
  bad = base;
  bad["backend"] = {{"id", "sidecar"}};
  CHECK_THROWS_AS(PipelineConfig::from_json(bad, tmp.path()), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::load(tmp / "missing.json"), ConfigError);

  const auto round = PipelineConfig::from_json(base, tmp.path());
  CHECK(PipelineConfig::from_json(round.to_json(), tmp.path()).to_json() == round.to_json());
  CHECK(round.fixed.resolved == tmp / "f.t2r.json");
}

TEST_CASE("stage errors carry exit codes") {
  TempDir tmp("pipe_errors");
  PipelineConfig config = fixture_config(tmp, "identity");
  SUBCASE("missing image is a stage failure") {
    config.fixed = PathRef::from("nope.t2r.json", tmp.path());
    try {
      run_all(config, tmp / "out");
      FAIL("expected StageError");
    } catch (const StageError& e) {
      CHECK(e.stage() == "segment");
      CHECK(e.exit_code() == kExitFailure);
    }
  }
  SUBCASE("failing sidecar maps to the backend code") {
    config.backend.id = "sidecar";
    config.backend.command = {FAKE_SIDECAR_PATH, "--mode", "fail"};
    try {
      run_all(config, tmp / "out");
      FAIL("expected StageError");
    } catch (const StageError& e) {
      CHECK(e.exit_code() == kExitBackend);
    }
  }
  SUBCASE("register without a match stage") {
    CHECK_THROWS_AS(run_register(config, tmp / "empty"), StageError);
  }
  SUBCASE("divergence maps to its own code") {
    try {
      try {
        throw DivergenceError("nan", OptimizeResult{DisplacementField(Geometry::make2d(1, 1)), {}});
      } catch (...) {
        rethrow_tagged("register");
      }
    } catch (const StageError& e) {
      CHECK(e.exit_code() == kExitDivergence);
      CHECK(e.stage() == "register");
    }
  }
}

TEST_CASE("sidecar backend drives the whole pipeline") {
  TempDir tmp("pipe_sidecar");
  PipelineConfig config = fixture_config(tmp, "translation");
  const EvaluationReport local = run_all(config, tmp / "local");
  config.backend.id = "sidecar";
  config.backend.command = {FAKE_SIDECAR_PATH};
  const EvaluationReport remote = run_all(config, tmp / "remote");
  CHECK(remote.cases[0].dice_after == local.cases[0].dice_after);
  CHECK(read_text(tmp / "remote" / "correspondence.json") ==
        read_text(tmp / "local" / "correspondence.json"));
}

TEST_CASE("command line") {
  TempDir tmp("pipe_cli");
  const std::string data = (tmp / "data").string();
  const std::string out = (tmp / "out").string();
  CHECK(cli({"fixture", "--preset", "translation", "--out", data}) == kExitOk);
  CHECK(cli({"run", "--config", data + "/pipeline.json", "--out", out}) == kExitOk);
  CHECK(fs::exists(tmp / "out" / "report.json"));
  CHECK(cli({"run", "--config", data + "/pipeline.json", "--out", out, "--no-ddf"}) == kExitOk);
  CHECK_FALSE(fs::exists(tmp / "out" / "ddf.t2r.json"));
  CHECK(cli({"match", "--config", data + "/pipeline.json", "--out", out}) == kExitOk);
  CHECK(cli({"register", "--config", data + "/pipeline.json", "--out", out, "--iterations", "5"}) == kExitOk);
  CHECK(cli({"evaluate", "--config", data + "/pipeline.json", "--out", out}) == kExitOk);
  CHECK(cli({"prompt-report", "--config", data + "/pipeline.json", "--out", out}) == kExitOk);

  CHECK(cli({"run", "--config", data + "/pipeline.json", "--out", out, "--tau", "3"}) == kExitConfig);
  CHECK(cli({"run", "--config", data + "/pipeline.json", "--out", out, "--strategy", "x"}) == kExitConfig);
  CHECK(cli({"frobnicate"}) == kExitConfig);
  CHECK(cli({"fixture", "--preset", "nope", "--out", data}) == kExitConfig);

  write_text(tmp / "bad.json", R"({"fixed":"missing.t2r.json","moving":"missing.t2r.json"})");
  CHECK(cli({"run", "--config", (tmp / "bad.json").string(), "--out", out}) == kExitFailure);

  json sidecar = json::parse(read_text(tmp / "data" / "pipeline.json"));
  sidecar["backend"]["id"] = "sidecar";
  sidecar["backend"]["command"] = {FAKE_SIDECAR_PATH, "--mode", "fail"};
  write_text(tmp / "data" / "sidecar.json", sidecar.dump());
  CHECK(cli({"run", "--config", data + "/sidecar.json", "--out", out}) == kExitBackend);
}
