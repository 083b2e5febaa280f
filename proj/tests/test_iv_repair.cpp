#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "excel/error.hpp"
#include "excel/iv_repair.hpp"
#include "excel/random.hpp"
#include "excel/scenarios.hpp"

#include <algorithm>
#include <cmath>

using namespace excel;

namespace {

ConfidenceSet iv(double lo, double hi) { return ConfidenceSet::from_intervals({{lo, hi}}, 0.05, SetMethod::PerIvTsls); }

Dataset invalid_iv_data(std::size_t n, std::uint64_t seed, std::map<std::string, double> overrides = {}) {
  DgpConfig c;
  c.scenario = Scenario::InvalidIv;
  c.n = n;
  c.seed = seed;
  c.overrides = std::move(overrides);
  return generate(c).data;
}

}  // namespace

TEST_CASE("normal critical values") {
  CHECK(normal_critical(1.0) == 0.0);
  CHECK(normal_critical(0.05) == doctest::Approx(1.959963984540054).epsilon(1e-14));
  CHECK(normal_critical(0.10) == doctest::Approx(1.6448536269514722).epsilon(1e-14));
  CHECK_THROWS_AS(normal_critical(0.0), Error);
}

TEST_CASE("level one gives a zero-width interval") {
  const auto data = invalid_iv_data(500, 1);
  const auto set = per_iv_interval(data, 0, 1.0);
  const auto fit = per_iv_tsls(data, 0);
  REQUIRE(set.intervals.size() == 1);
  CHECK(set.intervals[0].lo == fit.theta);
  CHECK(set.intervals[0].hi == fit.theta);
}

TEST_CASE("wald interval is symmetric around the TSLS estimate") {
  const auto data = invalid_iv_data(800, 2);
  const auto fit = per_iv_tsls(data, 1);
  const auto set = per_iv_interval(data, 1, 0.05);
  CHECK(0.5 * (set.intervals[0].lo + set.intervals[0].hi) == doctest::Approx(fit.theta));
  CHECK(set.intervals[0].length() == doctest::Approx(2 * 1.959963984540054 * fit.se));
}

TEST_CASE("selection uses closed intervals") {
  CHECK(select_valid({iv(0, 1)}, iv(1, 2)) == std::vector<int>{0});
  CHECK(select_valid({iv(0, 1), iv(3, 4)}, iv(1.5, 2.5)).empty());
  CHECK(select_valid({iv(0, 1), iv(2, 3), iv(2.4, 9)}, iv(1.5, 2.5)) == std::vector<int>{1, 2});
}

TEST_CASE("widening every interval can only grow the selection") {
  Sampler s(Philox::stream(3, {1}));
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<ConfidenceSet> narrow, wide;
    for (int j = 0; j < 4; ++j) {
      const double c = 4 * s.uniform(), h = s.uniform(), extra = s.uniform();
      narrow.push_back(iv(c - h, c + h));
      wide.push_back(iv(c - h - extra, c + h + extra));
    }
    const double e = 4 * s.uniform(), eh = 0.5 * s.uniform(), ee = 0.5 * s.uniform();
    const auto a = select_valid(narrow, iv(e - eh, e + eh));
    const auto b = select_valid(wide, iv(e - eh - ee, e + eh + ee));
    CHECK(std::includes(b.begin(), b.end(), a.begin(), a.end()));
  }
}

TEST_CASE("instrument argument checks") {
  auto data = invalid_iv_data(200, 4);
  CHECK_THROWS_AS(per_iv_interval(data, 3, 0.05), Error);
  data.Z.reset();
  try {
    per_iv_interval(data, 0, 0.05);
    FAIL("expected MissingInstruments");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingInstruments);
  }
  IvRepairConfig bad;
  bad.lambda_grid = {0.5, 0.2};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.lambda_grid = {0.0, 0.5};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("union set invariants on the invalid-instrument design") {
  const auto data = invalid_iv_data(3000, 5);
  IvRepairConfig config;
  config.B = 100;
  config.seed = 11;
  const auto r = union_confidence_set(data, config);
  REQUIRE_FALSE(r.fallback);
  REQUIRE(r.per_lambda.size() == config.lambda_grid.size());

  // Final set is the merged union of the reported per-instrument intervals.
  std::vector<Interval> pieces;
  for (const auto& [j, set] : r.per_iv_intervals) pieces.push_back(set.intervals[0]);
  CHECK(r.final_set.intervals == normalize_intervals(pieces));
  for (std::size_t k = 1; k < r.final_set.intervals.size(); ++k)
    CHECK(r.final_set.intervals[k - 1].hi < r.final_set.intervals[k].lo);

  // Selection at the chosen lambda is exactly the intersecting set.
  const double screen = r.chosen_lambda * config.alpha / 2.0;
  for (int j = 0; j < 3; ++j) {
    const bool meets = per_iv_interval(data, j, screen).intervals[0].intersects(r.excel_interval.intervals[0]);
    const bool chosen = std::find(r.selected.begin(), r.selected.end(), j) != r.selected.end();
    CHECK(meets == chosen);
  }

  // Minimal total length with ties to the smallest lambda.
  for (const auto& row : r.per_lambda) {
    CHECK(r.final_set.total_length() <= row.total_length);
    if (row.total_length == r.final_set.total_length()) CHECK(row.lambda >= r.chosen_lambda);
  }
  CHECK(std::find(r.selected.begin(), r.selected.end(), 0) != r.selected.end());
}

TEST_CASE("a single always-selected instrument gives its own interval") {
  Sampler s(Philox::stream(6, {2}));
  Dataset data;
  const int n = 2000;
  data.X.resize(n, 1);
  data.y.resize(n);
  data.Z = Matrix(n, 1);
  for (int i = 0; i < n; ++i) {
    const double z = s.normal();
    data.X(i, 0) = z + s.normal();
    data.y[i] = 0.4 * data.X(i, 0) + 0.5 * s.normal();
    (*data.Z)(i, 0) = z;
  }
  IvRepairConfig config;
  config.B = 100;
  const auto r = union_confidence_set(data, config);
  REQUIRE_FALSE(r.fallback);
  CHECK(r.selected == std::vector<int>{0});
  const auto own = per_iv_interval(data, 0, config.alpha - r.chosen_lambda * config.alpha);
  CHECK(r.final_set.intervals == own.intervals);
  // Wider union at larger lambda, so the first selecting lambda wins.
  for (const auto& row : r.per_lambda)
    if (!row.selected.empty()) {
      CHECK(row.lambda == r.chosen_lambda);
      break;
    }
}

TEST_CASE("fallback to the EXCEL interval when every instrument is invalid") {
  const auto data = invalid_iv_data(3000, 7, {{"z1_direct", 2.0}});
  IvRepairConfig config;
  config.B = 100;
  const auto r = union_confidence_set(data, config);
  CHECK(r.fallback);
  CHECK(r.final_set.flagged);
  CHECK(r.selected.empty());
  CHECK(r.final_set.intervals == r.excel_only_interval.intervals);
  for (const auto& row : r.per_lambda) CHECK(std::isinf(row.total_length));
}

TEST_CASE("union set is identical across thread counts") {
  const auto data = invalid_iv_data(1500, 8);
  IvRepairConfig a, b;
  a.B = b.B = 60;
  b.threads = 4;
  const auto ra = union_confidence_set(data, a);
  const auto rb = union_confidence_set(data, b);
  CHECK(ra.final_set.intervals == rb.final_set.intervals);
  CHECK(ra.chosen_lambda == rb.chosen_lambda);
  CHECK(ra.selected == rb.selected);
}

TEST_CASE("per-instrument intervals separate the valid from the invalid instrument") {
  int valid_covers = 0, invalid_misses = 0;
  const int reps = 100;
  for (int r = 0; r < reps; ++r) {
    const auto data = invalid_iv_data(5000, 1000 + static_cast<std::uint64_t>(r));
    if (per_iv_interval(data, 0, 0.05).contains(0.4)) ++valid_covers;
    if (!per_iv_interval(data, 1, 0.05).contains(0.4)) ++invalid_misses;
  }
  MESSAGE("valid covers " << valid_covers << ", invalid misses " << invalid_misses);
  CHECK(valid_covers >= 90);
  CHECK(invalid_misses >= 90);
}
