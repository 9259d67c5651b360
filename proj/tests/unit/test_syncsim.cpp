#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "hawk/error.hpp"
#include "hawk/rng.hpp"
#include "hawk/syncsim.hpp"

using namespace hawk;
using namespace hawk::syncsim;

namespace {

std::vector<double> sine_stream(int cycles, int per_cycle, double delay_samples, double noise_rel, Rng* rng) {
  std::vector<double> v(static_cast<std::size_t>(cycles * per_cycle));
  for (std::size_t j = 0; j < v.size(); ++j) {
    v[j] = std::sin(2.0 * std::numbers::pi * (static_cast<double>(j) - delay_samples) / per_cycle);
    if (rng) v[j] += noise_rel * gaussian(*rng);
  }
  return v;
}

}  // namespace

TEST_SUITE("syncsim") {

TEST_CASE("zero crossings of a clean sine land on cycle starts") {
  const auto v = sine_stream(5, 320, 0.0, 0.0, nullptr);
  for (int hw : {0, kDefaultFitHalfWidth}) {
    const auto z = detect_zero_crossings(v, hw);
    REQUIRE(z.size() == 5);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == doctest::Approx(320.0 * i).epsilon(1e-9));
  }
}

TEST_CASE("half-sample delay is recovered by interpolation") {
  const auto v = sine_stream(4, 320, 0.5, 0.0, nullptr);
  for (int hw : {0, kDefaultFitHalfWidth}) {
    const auto z = detect_zero_crossings(v, hw);
    REQUIRE(z.size() == 4);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(z[i] - (320.0 * i + 0.5)) < 1e-6);
  }
}

TEST_CASE("crossings under 1 percent noise stay within 0.2 samples over 1000 cycles") {
  Rng rng = make_rng(2024);
  const double delay = 0.37;
  const auto v = sine_stream(1001, 320, delay, 0.01, &rng);
  const auto z = detect_zero_crossings(v);
  REQUIRE(z.size() >= 1000);
  double worst = 0.0;
  for (std::size_t i = 0; i < 1000; ++i) worst = std::max(worst, std::abs(z[i] - (320.0 * i + delay)));
  CHECK(worst < 0.2);
}

TEST_CASE("no crossing is a degenerate input") {
  CHECK_THROWS_AS(detect_zero_crossings(std::vector<double>(640, 0.0)), DegenerateInputError);
  CHECK_THROWS_AS(detect_zero_crossings(std::vector<double>(640, 3.0)), DegenerateInputError);
  CHECK_THROWS_AS(detect_zero_crossings(std::vector<double>{}), DegenerateInputError);
}

TEST_CASE("surge detection finds the first sample over threshold") {
  std::vector<double> c{0.0, 0.1, 0.2, 2.6, 5.0, 1.0};
  CHECK(detect_surge(c, 2.5) == std::optional<std::size_t>(3));
  CHECK_FALSE(detect_surge(c, 9.0).has_value());
}

TEST_CASE("noise-free identical clocks give zero error for both strategies") {
  SyncConfig c;
  c.trials = 50;
  c = c.noiseless();
  const auto run = run_sync_sim(c, 1);
  CHECK(run.flagged == 0);
  for (const auto& t : run.spt) CHECK(t.abs_error_us < 1e-6);
  for (const auto& t : run.tsf) CHECK(t.abs_error_us < 1e-6);
  const auto cdf = error_cdf(run.spt);
  CHECK(cdf.size() == 1);
  CHECK(cdf.back().second == 1.0);
}

TEST_CASE("SPT error never exceeds one sampling interval for drifting clocks") {
  Rng rng = make_rng(77);
  for (int k = 0; k < 6; ++k) {
    SyncConfig c;
    c.trials = 60;
    c.seed = 100 + k;
    c.node_a.offset_us = 1e4 * uniform01(rng);
    c.node_b.offset_us = 1e4 * uniform01(rng);
    c.node_a.drift_ppm = 1000.0 * uniform01(rng) - 500.0;
    c.node_b.drift_ppm = 1000.0 * uniform01(rng) - 500.0;
    const auto run = run_sync_sim(c, 1);
    for (const auto& t : run.spt) {
      if (!t.flagged) CHECK(t.abs_error_us <= c.sample_interval_us());
    }
  }
}

TEST_CASE("large beacon errors flag trials instead of mis-numbering cycles") {
  SyncConfig c;
  c.trials = 200;
  c.beacon_fault_prob = 0.3;
  c.beacon_fault_us = 15000.0;
  const auto run = run_sync_sim(c, 1);
  CHECK(run.flagged > 20);
  for (const auto& t : run.spt) {
    if (!t.flagged) CHECK(t.abs_error_us <= c.sample_interval_us());
  }
}

TEST_CASE("TSF outliers appear near the configured rate") {
  SyncConfig c;
  c.trials = 3000;
  c.node_a.timestamp_jitter = {5.0, 0.02, 1000.0};
  c.node_b.timestamp_jitter = {5.0, 0.02, 1000.0};
  const auto s = summarize(run_sync_sim(c).tsf);
  // Either node can draw the outlier: about 2 p (1 - p) of the trials.
  const double expected = 2 * 0.02 * 0.98;
  const double sigma = std::sqrt(expected * (1 - expected) / c.trials);
  CHECK(std::abs(s.fraction_within(900.0, 1100.0) - expected) < 4 * sigma);
}

TEST_CASE("run_sync_sim is independent of the thread count") {
  SyncConfig c;
  c.trials = 64;
  const auto a = run_sync_sim(c, 1);
  const auto b = run_sync_sim(c, 3);
  REQUIRE(a.spt.size() == b.spt.size());
  for (std::size_t i = 0; i < a.spt.size(); ++i) {
    CHECK(a.spt[i].abs_error_us == b.spt[i].abs_error_us);
    CHECK(a.tsf[i].abs_error_us == b.tsf[i].abs_error_us);
  }
}

TEST_CASE("error_cdf examples") {
  std::vector<SyncTrial> one{{0, 0, 0, 12.5, false}};
  const auto c1 = error_cdf(one);
  REQUIRE(c1.size() == 1);
  CHECK(c1[0] == std::pair<double, double>{12.5, 1.0});

  std::vector<SyncTrial> two{{0, 0, 0, 30.0, false}, {0, 0, 0, 10.0, false}, {0, 0, 0, 99.0, true}};
  const auto c2 = error_cdf(two);
  REQUIRE(c2.size() == 2);
  CHECK(c2[0] == std::pair<double, double>{10.0, 0.5});
  CHECK(c2[1] == std::pair<double, double>{30.0, 1.0});

  CHECK_THROWS_AS(error_cdf(std::vector<SyncTrial>{}), DegenerateInputError);

  std::ostringstream os;
  write_cdf_csv(os, c2);
  CHECK(os.str() == "error_us,cum_frac\n10,0.5\n30,1\n");
}

TEST_CASE("CDF of a default run is monotone and ends at one") {
  SyncConfig c;
  c.trials = 300;
  const auto cdf = error_cdf(run_sync_sim(c).spt);
  for (std::size_t i = 1; i < cdf.size(); ++i) {
    CHECK(cdf[i].first > cdf[i - 1].first);
    CHECK(cdf[i].second >= cdf[i - 1].second);
  }
  CHECK(cdf.back().second == 1.0);
  CHECK(cdf.back().first <= 62.5);
}

TEST_CASE("sync config JSON round-trips and validates") {
  SyncConfig c;
  c.trials = 123;
  c.node_b.drift_ppm = -77.5;
  c.node_a.timestamp_jitter.outlier_prob = 0.01;
  std::ostringstream os;
  write_sync_config(os, c);
  std::istringstream is(os.str());
  CHECK(read_sync_config(is) == c);

  std::istringstream partial(R"({"format":"hawk-sync-config","version":1,"trials":7})");
  CHECK(read_sync_config(partial).trials == 7);
  std::istringstream broken("{\"format\":");
  CHECK_THROWS_AS(read_sync_config(broken), FormatError);

  SyncConfig bad;
  bad.trials = 0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = SyncConfig{};
  bad.node_a.timestamp_jitter.outlier_prob = 1.5;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

}  // TEST_SUITE
