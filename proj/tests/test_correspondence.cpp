#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "oracles.hpp"
#include "promptreg/error.hpp"
#include "promptreg/correspondence.hpp"

using namespace promptreg;

namespace {

std::optional<Prototype> proto(std::vector<double> v, int id = 0) {
  Prototype p;
  p.values = std::move(v);
  p.roi_id = id;
  return p;
}

BinaryMask box_mask(const Geometry& g, std::int64_t x0, std::int64_t y0, std::int64_t x1,
                    std::int64_t y1) {
  std::vector<std::uint8_t> bits(g.voxel_count(), 0);
  for (std::int64_t y = y0; y < y1; ++y)
    for (std::int64_t x = x0; x < x1; ++x) bits[g.index(x, y, 0)] = 1;
  return BinaryMask(g, bits);
}

// Response with one whole-image embedding and a box ROI per code channel.
PromptResponse coded_response(ImageTag tag, const std::vector<int>& channel_order,
                              const std::string& prompt = "hole") {
  const Geometry image = Geometry::make2d(16, 16);
  const Geometry grid = Geometry::make2d(4, 4);
  const int channels = 4;
  std::vector<float> values(grid.voxel_count() * channels, 0.0f);
  PromptResponse r;
  for (std::size_t k = 0; k < channel_order.size(); ++k) {
    const std::int64_t gx = static_cast<std::int64_t>(k) % 4;
    const std::int64_t gy = static_cast<std::int64_t>(k) / 4;
    values[grid.index(gx, gy, 0) * channels + channel_order[k]] = 1.0f;
    RoiRecord roi;
    roi.id = static_cast<int>(k);
    roi.mask = box_mask(image, gx * 4, gy * 4, gx * 4 + 4, gy * 4 + 4);
    roi.box = tight_box(roi.mask);
    roi.box.prompt = roi.prompt = prompt;
    roi.source = tag;
    r.rois.push_back(roi);
  }
  r.embeddings.push_back({std::nullopt, EmbeddingGrid(grid, channels, values)});
  return r;
}

}  // namespace

TEST_CASE("resample_mask_to_grid") {
  const Geometry g8 = Geometry::make2d(8, 8);
  const Geometry g4 = Geometry::make2d(4, 4);
  SUBCASE("full mask stays full") {
    CHECK(resample_mask_to_grid(box_mask(g8, 0, 0, 8, 8), g4).count() == 16);
  }
  SUBCASE("corner voxel lands in cell (0,0)") {
    const BinaryMask m = resample_mask_to_grid(box_mask(g8, 0, 0, 1, 1), g4);
    CHECK(m.count() == 1);
    CHECK(m.at(0, 0));
  }
  SUBCASE("disk area fraction within 10%") {
    const Geometry g200 = Geometry::make2d(200, 200);
    const Geometry g64 = Geometry::make2d(64, 64);
    std::vector<std::uint8_t> bits(g200.voxel_count(), 0);
    std::size_t inside = 0;
    for (int y = 0; y < 200; ++y)
      for (int x = 0; x < 200; ++x)
        if ((x - 90.3) * (x - 90.3) + (y - 110.7) * (y - 110.7) <= 40.0 * 40.0) {
          bits[g200.index(x, y, 0)] = 1;
          ++inside;
        }
    const double exact = static_cast<double>(inside) / (200.0 * 200.0);
    const double coarse =
        static_cast<double>(resample_mask_to_grid(BinaryMask(g200, bits), g64).count()) / (64.0 * 64.0);
    CHECK(std::abs(coarse - exact) <= 0.1 * exact);
  }
  SUBCASE("empty mask is an error") {
    CHECK_THROWS_AS(resample_mask_to_grid(BinaryMask::zeros(g8), g4), DomainError);
  }
}

TEST_CASE("pool_prototype") {
  const Geometry g = Geometry::make2d(2, 2);
  const EmbeddingGrid e(g, 2, {1, 0, 3, 0, 5, 0, 7, 0});
  const Prototype full = pool_prototype(e, BinaryMask(g, {1, 1, 1, 1}));
  CHECK(full.values == std::vector<double>{4, 0});
  const Prototype one = pool_prototype(e, BinaryMask(g, {0, 0, 1, 0}));
  CHECK(one.values == std::vector<double>{5, 0});
  CHECK_THROWS(pool_prototype(e, BinaryMask::zeros(g)));
  CHECK_THROWS(pool_prototype(e, BinaryMask::zeros(Geometry::make2d(3, 3))));
}

TEST_CASE("similarity_matrix") {
  const auto s = similarity_matrix({proto({1, 0, 0}), proto({0, 2, 0}), proto({0, 0, 0})},
                                   {proto({3, 0, 0}), proto({1, 1, 0}), std::nullopt});
  CHECK(*s.at(0, 0) == doctest::Approx(1.0));
  CHECK(*s.at(1, 0) == doctest::Approx(0.0));
  CHECK(*s.at(0, 1) == doctest::Approx(std::sqrt(0.5)));
  CHECK_FALSE(s.at(2, 0));  // zero-norm prototype
  CHECK_FALSE(s.at(0, 2));  // missing prototype
  CHECK_THROWS(similarity_matrix({proto({1, 0})}, {proto({1, 0, 0})}));

  const auto l2 = similarity_matrix({proto({0, 0, 1})}, {proto({0, 3, 1}), proto({0, 0, 1})},
                                    SimilarityMetric::L2);
  CHECK(*l2.at(0, 0) == doctest::Approx(0.25));
  CHECK(*l2.at(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("dominant diagonal under both strategies") {
  oracle::Matrix m(3, std::vector<oracle::Entry>(3, {true, 0.1}));
  for (int k = 0; k < 3; ++k) m[k][k].value = 0.9;
  for (auto strategy : {MatchStrategy::MutualNN, MatchStrategy::Greedy}) {
    const auto out = match_rois(oracle::to_library(m), 0.5, strategy);
    REQUIRE(out.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(out[k].row == k);
      CHECK(out[k].col == k);
    }
  }
}

TEST_CASE("ties resolve to the lowest index") {
  oracle::Matrix m(2, std::vector<oracle::Entry>(2, {true, 0.7}));
  const auto g = match_rois(oracle::to_library(m), 0.5, MatchStrategy::Greedy);
  REQUIRE(g.size() == 2);
  CHECK((g[0].row == 0 && g[0].col == 0));
  CHECK((g[1].row == 1 && g[1].col == 1));
  const auto n = match_rois(oracle::to_library(m), 0.5, MatchStrategy::MutualNN);
  REQUIRE(n.size() == 1);
  CHECK((n[0].row == 0 && n[0].col == 0));
}

TEST_CASE("tau is inclusive and empty output is legal") {
  oracle::Matrix m{{{true, 0.5}}};
  CHECK(match_rois(oracle::to_library(m), 0.5, MatchStrategy::Greedy).size() == 1);
  CHECK(match_rois(oracle::to_library(m), 0.51, MatchStrategy::MutualNN).empty());
  CHECK(match_rois(SimilarityMatrix(0, 4), 0.5, MatchStrategy::Greedy).empty());
}

TEST_CASE("random 6x8 matrices match brute force") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 300; ++trial) {
    oracle::Matrix m(6, std::vector<oracle::Entry>(8));
    for (auto& row : m)
      for (auto& e : row) e = {true, u(rng)};
    const auto s = oracle::to_library(m);
    CHECK(match_rois(s, 0.0, MatchStrategy::Greedy) == oracle::greedy(m, 0.0));
    CHECK(match_rois(s, 0.0, MatchStrategy::MutualNN) == oracle::mutual_nn(m, 0.0));
  }
}

TEST_CASE("one-to-one and transpose symmetry") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = oracle::random_matrix(rng);
    const auto s = oracle::to_library(m);
    for (auto strategy : {MatchStrategy::MutualNN, MatchStrategy::Greedy}) {
      const auto out = match_rois(s, -1.0, strategy);
      std::set<std::size_t> rows, cols;
      for (const auto& p : out) {
        CHECK(rows.insert(p.row).second);
        CHECK(cols.insert(p.col).second);
      }
      CHECK(out.size() <= std::min(s.rows(), s.cols()));
    }
    // Without ties the mutual nearest neighbours of S^T are those of S, transposed.
    std::uniform_real_distribution<double> u(-1, 1);
    oracle::Matrix distinct = m;
    for (auto& row : distinct)
      for (auto& e : row) e.value = u(rng);
    const auto d = oracle::to_library(distinct);
    auto forward = match_rois(d, 0.0, MatchStrategy::MutualNN);
    auto backward = match_rois(d.transposed(), 0.0, MatchStrategy::MutualNN);
    for (auto& p : backward) std::swap(p.row, p.col);
    std::sort(backward.begin(), backward.end(),
              [](const MatrixMatch& a, const MatrixMatch& b) { return a.row < b.row; });
    CHECK(forward == backward);
  }
}

TEST_CASE("match_pipeline") {
  SUBCASE("identity") {
    const auto r = coded_response(ImageTag::Fixed, {0, 1, 2, 3});
    const auto out = match_pipeline(r, coded_response(ImageTag::Moving, {0, 1, 2, 3}), {});
    REQUIRE(out.set.pairs.size() == 4);
    for (const auto& p : out.set.pairs) {
      CHECK(p.fix_id == p.mov_id);
      CHECK(p.similarity >= 0.99);
      CHECK(p.prompt == "hole");
    }
    REQUIRE(out.regions.size() == 4);
    CHECK(out.regions[2].fixed == r.rois[2].mask);
  }
  SUBCASE("permuted moving list keeps the mask pairs") {
    const auto fix = coded_response(ImageTag::Fixed, {0, 1, 2, 3});
    const auto mov = coded_response(ImageTag::Moving, {2, 0, 3, 1});
    const auto out = match_pipeline(fix, mov, {});
    REQUIRE(out.set.pairs.size() == 4);
    const std::vector<int> expected_mov{1, 3, 0, 2};  // channel c sits at position order^-1[c]
    for (const auto& p : out.set.pairs) CHECK(p.mov_id == expected_mov[p.fix_id]);
  }
  SUBCASE("same prompt only unless enabled") {
    auto fix = coded_response(ImageTag::Fixed, {0, 1});
    auto mov = coded_response(ImageTag::Moving, {0, 1}, "head");
    CHECK(match_pipeline(fix, mov, {}).set.pairs.empty());
    MatchOptions cross;
    cross.cross_prompt = true;
    const auto out = match_pipeline(fix, mov, cross);
    REQUIRE(out.set.pairs.size() == 2);
    CHECK(out.set.pairs[0].prompt == "hole|head");
  }
  SUBCASE("tau and strategy recorded") {
    MatchOptions o;
    o.tau = 0.3;
    o.strategy = MatchStrategy::Greedy;
    const auto out = match_pipeline(coded_response(ImageTag::Fixed, {0}),
                                    coded_response(ImageTag::Moving, {0}), o);
    const auto back = CorrespondenceSet::from_json(out.set.to_json());
    CHECK(back.tau == 0.3);
    CHECK(back.strategy == MatchStrategy::Greedy);
    CHECK(back.pairs == out.set.pairs);
  }
}

TEST_CASE("strategy and metric names") {
  CHECK(parse_strategy("greedy") == MatchStrategy::Greedy);
  CHECK(parse_strategy("mutual_nn") == MatchStrategy::MutualNN);
  CHECK(parse_metric("l2") == SimilarityMetric::L2);
  CHECK_THROWS_AS(parse_strategy("hungarian"), ConfigError);
  CHECK_THROWS_AS(parse_metric("manhattan"), ConfigError);
}
