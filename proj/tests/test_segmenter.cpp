#include <doctest.h>

#include <set>

#include "oracles.hpp"
#include "promptreg/error.hpp"
#include "promptreg/fixture.hpp"
#include "promptreg/io.hpp"
#include "promptreg/manifest.hpp"
#include "promptreg/segmenter.hpp"
#include "promptreg/sidecar.hpp"
#include "test_support.hpp"

using namespace promptreg;
namespace fs = std::filesystem;

namespace {

fixture::ShapeSpec disk_at(double r, double x, double y, int code) {
  fixture::ShapeSpec s;
  s.radius = r;
  s.center = std::array<double, 3>{x, y, 0};
  s.code = code;
  return s;
}

BinaryMask disk_mask(const Geometry& g, double r, double cx, double cy) {
  std::vector<std::uint8_t> bits(g.voxel_count(), 0);
  for (std::int64_t y = 0; y < g.dims[1]; ++y)
    for (std::int64_t x = 0; x < g.dims[0]; ++x)
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) bits[g.index(x, y, 0)] = 1;
  return BinaryMask(g, bits);
}

RoiRecord roi_with_box(const Geometry& g, std::int64_t x0, std::int64_t y0, std::int64_t x1,
                       std::int64_t y1, double score) {
  std::vector<std::uint8_t> bits(g.voxel_count(), 0);
  for (std::int64_t y = y0; y < y1; ++y)
    for (std::int64_t x = x0; x < x1; ++x) bits[g.index(x, y, 0)] = 1;
  RoiRecord r;
  r.mask = BinaryMask(g, bits);
  r.box = tight_box(r.mask);
  r.box.score = score;
  r.box.prompt = r.prompt = "hole";
  return r;
}

PromptRequest request_for(const fs::path& image, std::vector<std::string> prompts) {
  PromptRequest r;
  r.image = image;
  r.prompts = std::move(prompts);
  return r;
}

}  // namespace

TEST_CASE("fixture backend: one disk, prompt hole") {
  TempDir tmp("seg_disk");
  fixture::SceneSpec spec;
  spec.shapes = {disk_at(8, 32, 32, 1)};
  const auto scene = fixture::generate(0, spec);
  write_volume(scene.fixed, tmp / "f.t2r.json");

  fixture::FixtureBackend backend({}, 4);
  const PromptResponse resp = fetch_rois(request_for(tmp / "f.t2r.json", {"hole"}), backend);
  REQUIRE(resp.rois.size() == 1);
  CHECK(resp.rois[0].mask == disk_mask(spec.geometry, 8, 32, 32));
  CHECK(resp.rois[0].prompt == "hole");
  CHECK(resp.rois[0].id == 0);
  CHECK(resp.channels() == fixture::kChannels);

  const PromptResponse again = fetch_rois(request_for(tmp / "f.t2r.json", {"hole"}), backend);
  CHECK(again.rois[0].box == resp.rois[0].box);
  CHECK(again.embeddings[0].grid == resp.embeddings[0].grid);
}

TEST_CASE("fixture vocabulary restricts detections") {
  TempDir tmp("seg_vocab");
  fixture::SceneSpec spec;
  spec.shapes = {disk_at(5, 12, 12, 1), disk_at(5, 40, 40, 2)};
  write_volume(fixture::generate(0, spec).fixed, tmp / "f.t2r.json");
  fixture::FixtureBackend backend({{"head", {2}}, {"dog", {}}}, 4);
  const auto resp = fetch_rois(request_for(tmp / "f.t2r.json", {"head", "dog", "hole"}), backend);
  std::map<std::string, int> counts;
  for (const auto& r : resp.rois) counts[r.prompt]++;
  CHECK(counts["head"] == 1);
  CHECK(counts["dog"] == 0);
  CHECK(counts["hole"] == 2);
  for (std::size_t k = 0; k < resp.rois.size(); ++k) CHECK(resp.rois[k].id == static_cast<int>(k));
}

TEST_CASE("per-slice segmentation of a volume") {
  TempDir tmp("seg_volume");
  fixture::SceneSpec spec;
  spec.geometry = Geometry::make3d(24, 24, 5);
  fixture::ShapeSpec ball;
  ball.radius = 2;
  ball.center = std::array<double, 3>{12, 12, 2};
  spec.shapes = {ball};
  write_volume(fixture::generate(0, spec).fixed, tmp / "v.t2r.json");
  fixture::FixtureBackend backend({}, 4);
  auto req = request_for(tmp / "v.t2r.json", {"hole"});
  const auto resp = fetch_rois(req, backend);
  CHECK(resp.embeddings.size() == 5);
  CHECK(resp.rois.size() == 5);  // slices 0..4 all cut the ball (z = 2 +- 2)
  for (const auto& r : resp.rois) {
    REQUIRE(r.slice_index);
    CHECK(r.mask.geometry().rank == 2);
  }
  req.slices = SliceRange{1, 3};
  CHECK(fetch_rois(req, backend).rois.size() == 2);
  req.slices = SliceRange{3, 9};
  CHECK_THROWS_AS(fetch_rois(req, backend), ConfigError);
}

TEST_CASE("masks stay inside their boxes") {
  TempDir tmp("seg_boxes");
  fixture::SceneSpec spec;
  spec.shapes = {disk_at(6, 14, 14, 1), disk_at(4, 45, 20, 2), disk_at(7, 30, 45, 3)};
  write_volume(fixture::generate(1, spec).fixed, tmp / "f.t2r.json");
  fixture::FixtureBackend backend({}, 4);
  for (const auto& r : fetch_rois(request_for(tmp / "f.t2r.json", {"hole"}), backend).rois) {
    const Geometry& g = r.mask.geometry();
    for (std::int64_t y = 0; y < g.dims[1]; ++y)
      for (std::int64_t x = 0; x < g.dims[0]; ++x)
        if (r.mask.at(x, y)) CHECK(r.box.contains(x, y));
  }
}

TEST_CASE("filter_boxes") {
  const Geometry g = Geometry::make2d(20, 20);
  PromptResponse resp;
  resp.rois = {roi_with_box(g, 0, 0, 20, 20, 0.9),  // fraction 1.0
               roi_with_box(g, 0, 0, 2, 2, 0.9),    // 0.01
               roi_with_box(g, 5, 5, 9, 9, 0.2),    // 0.04, low score
               roi_with_box(g, 3, 3, 4, 4, 0.9)};   // 0.0025
  for (std::size_t k = 0; k < resp.rois.size(); ++k) resp.rois[k].id = static_cast<int>(k);

  const PromptResponse kept = filter_boxes(resp, FilterPolicy{});
  REQUIRE(kept.rois.size() == 3);
  CHECK(kept.rois[0].id == 1);
  CHECK(kept.rois[1].id == 2);
  CHECK(kept.rois[2].id == 3);

  FilterPolicy strict{0.003, 0.5, 0.5};
  const PromptResponse s = filter_boxes(resp, strict);
  REQUIRE(s.rois.size() == 1);
  CHECK(s.rois[0].id == 1);

  const PromptResponse twice = filter_boxes(kept, FilterPolicy{});
  CHECK(twice.rois.size() == kept.rois.size());
  for (const auto& r : kept.rois) CHECK(FilterPolicy{}.admits(r));

  CHECK_THROWS_AS((FilterPolicy{0.6, 0.5, 0.0}.validate()), DomainError);
  CHECK_THROWS_AS((FilterPolicy{-0.1, 0.5, 0.0}.validate()), DomainError);
}

TEST_CASE("fixture generator rejects ambiguous scenes") {
  fixture::SceneSpec spec;
  SUBCASE("repeated code") {
    spec.shapes = {disk_at(4, 10, 10, 2), disk_at(4, 40, 40, 2)};
    CHECK_THROWS_AS(fixture::generate(0, spec), FixtureError);
  }
  SUBCASE("overlap") {
    spec.shapes = {disk_at(8, 20, 20, 1), disk_at(8, 26, 20, 2)};
    CHECK_THROWS_AS(fixture::generate(0, spec), FixtureError);
  }
  SUBCASE("outside the grid") {
    spec.shapes = {disk_at(8, 3, 30, 1)};
    CHECK_THROWS_AS(fixture::generate(0, spec), FixtureError);
  }
  SUBCASE("code range") {
    spec.shapes = {disk_at(4, 30, 30, 17)};
    CHECK_THROWS_AS(fixture::generate(0, spec), FixtureError);
  }
}

TEST_CASE("fixture determinism and identity scene") {
  fixture::SceneSpec spec;
  spec.shapes = {disk_at(6, 20, 20, 1), fixture::ShapeSpec{}};
  spec.shapes[1].code = 2;
  const auto a = fixture::generate(11, spec);
  const auto b = fixture::generate(11, spec);
  CHECK(a.fixed == b.fixed);
  CHECK(a.moving == b.moving);
  CHECK(a.fixed_embedding == b.fixed_embedding);
  CHECK(a.fixed == a.moving);  // zero displacement
  REQUIRE(a.pairing.size() == 2);
  CHECK(a.pairing[0] == std::pair{0, 0});
  CHECK(a.pairing[1] == std::pair{1, 1});
}

TEST_CASE("three coded shapes pair up by brute-force cosine") {
  TempDir tmp("seg_three");
  fixture::SceneSpec spec;
  spec.shapes = {disk_at(6, 16, 16, 1), disk_at(5, 44, 18, 2), disk_at(5, 30, 46, 3)};
  spec.shapes[0].displacement = {2, 1, 0};
  spec.shapes[1].displacement = {-2, 2, 0};
  spec.shapes[2].displacement = {1, -2, 0};
  const auto scene = fixture::generate(0, spec);
  write_volume(scene.fixed, tmp / "f.t2r.json");
  write_volume(scene.moving, tmp / "m.t2r.json");
  fixture::FixtureBackend backend({}, 4);
  const auto fix = fetch_rois(request_for(tmp / "f.t2r.json", {"hole"}), backend);
  const auto mov = fetch_rois(request_for(tmp / "m.t2r.json", {"hole"}), backend);
  REQUIRE(fix.rois.size() == 3);
  REQUIRE(mov.rois.size() == 3);

  // Prototype = plain mean of embedding cells whose centre lies in the mask.
  auto proto = [](const PromptResponse& r, const RoiRecord& roi) {
    const EmbeddingGrid& e = r.embeddings[0].grid;
    const Geometry& g = e.geometry();
    std::vector<double> sum(e.channels(), 0.0);
    int n = 0;
    for (std::int64_t y = 0; y < g.dims[1]; ++y)
      for (std::int64_t x = 0; x < g.dims[0]; ++x)
        if (roi.mask.at(x * 4 + 2, y * 4 + 2)) {
          const auto c = e.cell(g.index(x, y, 0));
          for (int k = 0; k < e.channels(); ++k) sum[k] += c[k];
          ++n;
        }
    for (auto& s : sum) s /= n;
    return sum;
  };
  auto code_at = [&](const fixture::Scene& s, const Volume& img, const RoiRecord& roi) {
    (void)s;
    const auto c = *roi.mask.centroid();
    return static_cast<int>(img.at(std::lround(c[0]), std::lround(c[1])));
  };
  for (const auto& rf : fix.rois) {
    const auto pf = proto(fix, rf);
    double best = -2;
    const RoiRecord* arg = nullptr;
    for (const auto& rm : mov.rois) {
      const double s = oracle::cosine(pf, proto(mov, rm));
      if (s > best) best = s, arg = &rm;
    }
    REQUIRE(arg);
    CHECK(code_at(scene, scene.fixed, rf) == code_at(scene, scene.moving, *arg));
  }
}

TEST_CASE("scene json round trip") {
  fixture::SceneSpec spec;
  spec.geometry = Geometry::make2d(48, 40);
  spec.shapes = {disk_at(6, 16, 16, 4)};
  spec.shapes[0].ground_truth = true;
  spec.vocabulary = {{"hole", {4}}};
  const auto back = fixture::SceneSpec::from_json(spec.to_json());
  CHECK(back.to_json() == spec.to_json());
  CHECK_THROWS(fixture::SceneSpec::from_json(nlohmann::json::parse(R"({"dims":[8,8],"bogus":1})")));
}

TEST_CASE("response manifest round trip") {
  TempDir tmp("seg_manifest");
  fixture::SceneSpec spec;
  spec.shapes = {disk_at(6, 16, 16, 1), disk_at(5, 44, 18, 2)};
  write_volume(fixture::generate(0, spec).fixed, tmp / "f.t2r.json");
  fixture::FixtureBackend backend({}, 4);
  const auto resp = fetch_rois(request_for(tmp / "f.t2r.json", {"hole", "middle"}), backend);
  write_response(resp, tmp / "out");
  const auto back = read_response(tmp / "out" / "response.json", ImageTag::Fixed);
  REQUIRE(back.rois.size() == resp.rois.size());
  for (std::size_t k = 0; k < resp.rois.size(); ++k) {
    CHECK(back.rois[k].id == resp.rois[k].id);
    CHECK(back.rois[k].box == resp.rois[k].box);
    CHECK(back.rois[k].mask == resp.rois[k].mask);
    CHECK(back.rois[k].prompt == resp.rois[k].prompt);
  }
  CHECK(back.embeddings[0].grid == resp.embeddings[0].grid);

  write_text(tmp / "out" / "response.json", "[]");
  CHECK_THROWS_AS(read_response(tmp / "out" / "response.json", ImageTag::Fixed), FormatError);
}

TEST_CASE("sidecar backend through a subprocess") {
  TempDir tmp("seg_sidecar");
  fixture::SceneSpec spec;
  spec.shapes = {disk_at(6, 16, 16, 1)};
  write_volume(fixture::generate(0, spec).fixed, tmp / "f.t2r.json");
  const auto req = request_for(tmp / "f.t2r.json", {"hole"});

  SUBCASE("well-behaved") {
    SidecarBackend sidecar({FAKE_SIDECAR_PATH}, tmp / "work");
    const auto resp = fetch_rois(req, sidecar);
    fixture::FixtureBackend local({}, 4);
    const auto expected = fetch_rois(req, local);
    REQUIRE(resp.rois.size() == expected.rois.size());
    CHECK(resp.rois[0].mask == expected.rois[0].mask);
    CHECK(resp.rois[0].box == expected.rois[0].box);
    CHECK(resp.embeddings[0].grid == expected.embeddings[0].grid);
  }
  SUBCASE("reports its own failure") {
    SidecarBackend sidecar({FAKE_SIDECAR_PATH, "--mode", "fail"}, tmp / "work");
    try {
      fetch_rois(req, sidecar);
      FAIL("expected BackendError");
    } catch (const BackendError& e) {
      CHECK(std::string(e.what()).find("model load") != std::string::npos);
    }
  }
  SUBCASE("writes no manifest") {
    SidecarBackend sidecar({FAKE_SIDECAR_PATH, "--mode", "no_manifest"}, tmp / "work");
    CHECK_THROWS_AS(fetch_rois(req, sidecar), BackendError);
  }
  SUBCASE("writes a malformed manifest") {
    SidecarBackend sidecar({FAKE_SIDECAR_PATH, "--mode", "garbage"}, tmp / "work");
    CHECK_THROWS_AS(fetch_rois(req, sidecar), BackendError);
  }
  SUBCASE("mask outside its box") {
    SidecarBackend sidecar({FAKE_SIDECAR_PATH, "--mode", "bad_box"}, tmp / "work");
    CHECK_THROWS_AS(fetch_rois(req, sidecar), BackendError);
  }
  SUBCASE("cannot launch") {
    SidecarBackend sidecar({(tmp / "missing-binary").string()}, tmp / "work");
    CHECK_THROWS_AS(fetch_rois(req, sidecar), BackendError);
  }
}
