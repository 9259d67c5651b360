#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "hawk/error.hpp"
#include "hawk/pipeline.hpp"
#include "hawk/simulate.hpp"

using namespace hawk;
using namespace hawk::sim;
using schedule::Action;
using schedule::EventSchedule;

namespace {

EventSchedule make_schedule(int n, int dwell, std::vector<schedule::Event> events) {
  EventSchedule s;
  s.n_appliances = n;
  s.dwell_cycles = dwell;
  s.params.n_appliances = n;
  s.params.dwell_cycles = dwell;
  s.events = std::move(events);
  return s;
}

double mean_power(const Trace& t, std::size_t from, std::size_t to) {
  double p = 0.0;
  std::size_t n = 0;
  for (std::size_t c = from; c < to; ++c) {
    const auto& f = t.frames[c];
    for (std::size_t j = 0; j < f.voltage.size(); ++j) p += f.voltage[j] * f.aggregate[j];
    n += f.voltage.size();
  }
  return p / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("simulate") {

TEST_CASE("grid defaults give 320-sample cycles") {
  GridSpec g;
  CHECK(g.cycle_len() == 320);
  g.sample_rate_hz = -1;
  CHECK_THROWS_AS(g.validate(), ParameterError);
}

TEST_CASE("synth_appliance_cycle basic states") {
  GridSpec grid;
  Rng rng = make_rng(1);
  auto spec = testutil::plain_appliance(0, 100.0, grid);

  const auto off = synth_appliance_cycle(spec, grid, ApplianceState::off(), rng);
  for (double x : off) CHECK(x == 0.0);

  spec.harmonics = {{1, 1.0, 0.0}};
  const auto on = synth_appliance_cycle(spec, grid, ApplianceState::on(), rng);
  CHECK(pipeline::cycle_rms(on) == doctest::Approx(1.0 / std::numbers::sqrt2).epsilon(1e-9));

  spec.transient_shape = TransientShape::Surge;
  spec.surge_peak_multiple = 5.0;
  spec.surge_decay_per_cycle = 0.5;
  spec.transient_cycles = 4;
  const auto surge = synth_appliance_cycle(spec, grid, ApplianceState::transient(0), rng);
  const double fundamental = std::abs(testutil::naive_dft_bin(surge, 1)) / (surge.size() / 2.0);
  CHECK(fundamental == doctest::Approx(5.0).epsilon(1e-9));
}

TEST_CASE("ramp transient scales linearly") {
  GridSpec grid;
  Rng rng = make_rng(2);
  auto spec = testutil::plain_appliance(0, 100.0, grid, 4);
  spec.harmonics = {{1, 1.0, 0.0}};
  double prev = 0.0;
  for (int k = 0; k < 4; ++k) {
    const auto c = synth_appliance_cycle(spec, grid, ApplianceState::transient(k), rng);
    const double amp = std::abs(testutil::naive_dft_bin(c, 1)) / (c.size() / 2.0);
    CHECK(amp > prev);
    CHECK(amp <= 1.0 + 1e-12);
    prev = amp;
  }
}

TEST_CASE("empty schedule with no noise is all zero and all OFF") {
  GridSpec grid;
  grid.noise_std_a = 0.0;
  const auto s = make_schedule(2, 100, {});
  ExecuteOptions opt;
  opt.n_cycles = 50;
  const auto t = execute_schedule(s, {testutil::plain_appliance(0, 40), testutil::plain_appliance(1, 60)}, grid, 1, opt);
  REQUIRE(t.frames.size() == 50);
  for (const auto& f : t.frames) {
    CHECK(f.label == 0u);
    for (double x : f.aggregate) CHECK(x == 0.0);
  }
}

TEST_CASE("single appliance switch-on shows in RMS after the transient") {
  GridSpec grid;
  grid.noise_std_a = 0.01;
  const auto spec = testutil::plain_appliance(0, 500, grid, 3);
  const auto s = make_schedule(1, 50, {{10, 0, Action::On}});
  const auto t = execute_schedule(s, {spec}, grid, 3);
  const double steady = pipeline::cycle_rms(steady_waveform(spec, grid));
  for (int c = 0; c < 10; ++c) CHECK(pipeline::cycle_rms(t.frames[c].aggregate) < 0.02);
  for (std::size_t c = 13; c < t.frames.size(); ++c) {
    CHECK(pipeline::cycle_rms(t.frames[c].aggregate) == doctest::Approx(steady).epsilon(0.01));
  }
  CHECK(t.frames[9].label == 0u);
  CHECK(t.frames[10].label == 1u);
}

TEST_CASE("two loads draw their combined rated power") {
  GridSpec grid;
  grid.noise_std_a = 0.0;
  const auto s = make_schedule(2, 100, {{100, 0, Action::On}, {200, 1, Action::On}});
  const auto t = execute_schedule(s, {testutil::plain_appliance(0, 40), testutil::plain_appliance(1, 1500)}, grid, 4);
  CHECK(mean_power(t, 220, 300) == doctest::Approx(1540.0).epsilon(0.02));
}

TEST_CASE("every catalog appliance draws its rated power within 2 percent") {
  GridSpec grid;
  grid.noise_std_a = 0.0;
  auto catalog = default_catalog(grid);
  for (auto& spec : catalog) {
    CAPTURE(spec.name);
    spec.power_jitter_rel = 0.0;
    spec.off_leakage_a = 0.0;
    const auto s = make_schedule(1, 150, {{10, 0, Action::On}});
    const auto t = execute_schedule(s, {spec}, grid, 5);
    CHECK(mean_power(t, 50, 150) == doctest::Approx(spec.rated_power_w).epsilon(0.02));
  }
}

TEST_CASE("Kirchhoff closure with individual currents and no noise") {
  GridSpec grid;
  grid.noise_std_a = 0.0;
  const auto catalog = default_catalog(grid);
  const schedule::ScheduleParams p{.n_appliances = 18, .group_size = 6, .groups_active_per_round = 3, .rounds = 1,
                                   .dwell_cycles = 5, .rng_seed = 1};
  const auto s = schedule::generate_schedule(p);
  ExecuteOptions opt;
  opt.keep_individual = true;
  const auto t = execute_schedule(s, catalog, grid, 9, opt);
  CHECK(kirchhoff_residual(t) <= 1e-9);
}

TEST_CASE("labels change exactly at event cycles") {
  const schedule::ScheduleParams p{.n_appliances = 6, .group_size = 2, .groups_active_per_round = 2, .rounds = 2,
                                   .dwell_cycles = 7, .rng_seed = 3};
  const auto s = schedule::generate_schedule(p);
  const auto full = default_catalog();
  const std::vector<ApplianceSpec> catalog(full.begin(), full.begin() + 6);
  const auto t = execute_schedule(s, catalog, GridSpec{}, 1);
  std::set<std::uint64_t> event_cycles;
  for (const auto& e : s.events) event_cycles.insert(e.time_cycle);
  for (std::size_t c = 1; c < t.frames.size(); ++c) {
    const bool changed = t.frames[c].label != t.frames[c - 1].label;
    CHECK(changed == (event_cycles.count(c) == 1));
  }
  CHECK(label_events(t) == s.events);
}

TEST_CASE("execute_schedule is deterministic and independent of the thread count") {
  const schedule::ScheduleParams p{.n_appliances = 18, .group_size = 6, .groups_active_per_round = 2, .rounds = 1,
                                   .dwell_cycles = 20, .rng_seed = 12};
  const auto s = schedule::generate_schedule(p);
  const auto catalog = default_catalog();
  ExecuteOptions one, many;
  one.threads = 1;
  many.threads = 4;
  std::ostringstream a, b;
  write_trace(a, execute_schedule(s, catalog, GridSpec{}, 77, one));
  write_trace(b, execute_schedule(s, catalog, GridSpec{}, 77, many));
  CHECK(a.str() == b.str());
}

TEST_CASE("execute_schedule rejects mismatched specs and short horizons") {
  const auto s = make_schedule(2, 10, {{10, 0, Action::On}});
  CHECK_THROWS_AS(execute_schedule(s, {testutil::plain_appliance(0, 10)}, GridSpec{}, 1), ParameterError);
  ExecuteOptions opt;
  opt.n_cycles = 5;
  CHECK_THROWS_AS(
      execute_schedule(s, {testutil::plain_appliance(0, 10), testutil::plain_appliance(1, 10)}, GridSpec{}, 1, opt),
      ParameterError);
}

TEST_CASE("resample_imbalanced") {
  std::vector<schedule::Event> events;
  for (int i = 0; i < 40; ++i) {
    events.push_back({static_cast<std::uint64_t>(10 * (i + 1)), i % 4, (i / 4) % 2 ? Action::Off : Action::On});
  }
  SUBCASE("uniform weights give a permutation") {
    const auto out = resample_imbalanced(events, {{0, 1.0}, {1, 1.0}, {2, 1.0}, {3, 1.0}}, 5);
    auto a = out;
    auto b = events;
    auto key = [](const schedule::Event& x, const schedule::Event& y) {
      return std::tie(x.time_cycle, x.appliance_id) < std::tie(y.time_cycle, y.appliance_id);
    };
    std::sort(a.begin(), a.end(), key);
    std::sort(b.begin(), b.end(), key);
    CHECK(a == b);
  }
  SUBCASE("single non-zero weight keeps only that appliance") {
    const auto out = resample_imbalanced(events, {{2, 1.0}}, 5);
    CHECK(out.size() == events.size());
    for (const auto& e : out) CHECK(e.appliance_id == 2);
  }
  SUBCASE("skewed weights set the event balance ratio") {
    const auto out = resample_imbalanced(events, {{0, 1.0}, {1, 0.5}, {2, 0.4}, {3, 0.25}}, 5);
    CHECK(out.size() == events.size());
    std::map<int, int> c;
    for (const auto& e : out) ++c[e.appliance_id];
    CHECK(static_cast<double>(c[3]) / c[0] == doctest::Approx(0.25).epsilon(0.15));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(resample_imbalanced(events, {{0, 0.0}}, 1), ParameterError);
    CHECK_THROWS_AS(resample_imbalanced(events, {{0, -1.0}}, 1), ParameterError);
  }
}

TEST_CASE("default catalog spans the intended power range") {
  const auto c = default_catalog();
  REQUIRE(c.size() == 18);
  double lo = 1e9, hi = 0;
  for (const auto& s : c) {
    s.validate();
    lo = std::min(lo, s.rated_power_w);
    hi = std::max(hi, s.rated_power_w);
    CHECK(s.settle_cycles() < 30);
  }
  CHECK(lo == 5.0);
  CHECK(hi == 2160.0);
}

TEST_CASE("HAWK_THREADS caps parallelism") {
  CHECK(resolve_threads(3) == 3);
  ::setenv("HAWK_THREADS", "2", 1);
  CHECK(resolve_threads(0) <= 2);
  CHECK(resolve_threads(8) == 2);
  CHECK(resolve_threads(1) == 1);
  ::unsetenv("HAWK_THREADS");
  CHECK(resolve_threads(0) >= 1);
}

}  // TEST_SUITE
