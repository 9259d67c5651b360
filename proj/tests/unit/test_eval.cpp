#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "hawk/classes.hpp"
#include "hawk/error.hpp"
#include "hawk/eval.hpp"
#include "hawk/rng.hpp"

using namespace hawk;
using namespace hawk::eval;
using schedule::Action;

namespace {

int count(const std::vector<EventMatch>& m, Outcome o) {
  return static_cast<int>(std::count_if(m.begin(), m.end(), [o](const auto& x) { return x.outcome == o; }));
}

std::vector<schedule::Event> alternating(int appliance, int n, std::uint64_t start) {
  std::vector<schedule::Event> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({start + 10u * i, appliance, i % 2 == 0 ? Action::On : Action::Off});
  }
  return out;
}

schedule::EventSchedule gray_walk(int bits, int steps, int dwell) {
  const auto code = schedule::reflected_gray_code(bits);
  const auto flips = code.transitions();
  schedule::EventSchedule s;
  s.n_appliances = bits;
  s.dwell_cycles = dwell;
  schedule::StateMask state = 0;
  for (int i = 0; i < steps; ++i) {
    const int a = flips[i];
    const bool on = !((state >> a) & 1u);
    state ^= schedule::StateMask{1} << a;
    s.events.push_back({static_cast<std::uint64_t>(dwell) * (i + 1), a, on ? Action::On : Action::Off});
  }
  return s;
}

// 40 W humidifier switching on and off over a running 1500 W kettle whose
// power wanders 2% per cycle, with background noise worth ~20 W once differenced.
sim::Trace humidifier_over_kettle(double noise_std_a) {
  sim::GridSpec grid;
  grid.noise_std_a = noise_std_a;
  const auto catalog = sim::default_catalog(grid);
  const auto find = [&](const char* name) {
    return *std::find_if(catalog.begin(), catalog.end(), [&](const auto& s) { return s.name == name; });
  };
  auto kettle = find("ElectricKettle");
  auto humidifier = find("Humidifier");
  kettle.id = 0;
  kettle.power_jitter_rel = 0.02;
  humidifier.id = 1;
  schedule::EventSchedule s;
  s.n_appliances = 2;
  s.dwell_cycles = 100;
  s.events = {{5, 0, Action::On}};
  for (int k = 0; k < 6; ++k) {
    s.events.push_back({100u + 200u * k, 1, Action::On});
    s.events.push_back({200u + 200u * k, 1, Action::Off});
  }
  sim::ExecuteOptions opt;
  opt.keep_individual = true;
  return sim::execute_schedule(s, {kettle, humidifier}, grid, 77, opt);
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("matching examples") {
  const std::vector<TimedClass> truth{{100, 1}, {500, 2}, {900, 3}};
  const auto same = match_events(truth, truth);
  CHECK(count(same, Outcome::TP) == 3);
  CHECK(count(same, Outcome::FP) == 0);

  const std::vector<TimedClass> late{{100 + 51, 1}};
  const std::vector<TimedClass> one{{100, 1}};
  const auto off = match_events(one, late, 50);
  CHECK(count(off, Outcome::FP) == 1);
  CHECK(count(off, Outcome::FN) == 1);
  CHECK(count(match_events(one, std::vector<TimedClass>{{150, 1}}, 50), Outcome::TP) == 1);

  const std::vector<TimedClass> two{{100, 1}, {160, 1}};
  const std::vector<TimedClass> between{{140, 1}};
  const auto m = match_events(two, between, 50);
  CHECK(count(m, Outcome::TP) == 1);
  CHECK(count(m, Outcome::FN) == 1);
  for (const auto& x : m) {
    if (x.outcome == Outcome::TP) CHECK(x.truth->cycle == 160u);
  }

  const auto wrong_class = match_events(one, std::vector<TimedClass>{{100, 2}});
  CHECK(count(wrong_class, Outcome::TP) == 0);
  CHECK(count(wrong_class, Outcome::FP) == 1);
  CHECK(count(wrong_class, Outcome::FN) == 1);
}

TEST_CASE("matching count invariants on random lists") {
  Rng rng = make_rng(40);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<TimedClass> truth, pred;
    const int nt = static_cast<int>(rng() % 30);
    const int np = static_cast<int>(rng() % 30);
    for (int i = 0; i < nt; ++i) truth.push_back({rng() % 3000, 1 + static_cast<int>(rng() % 3)});
    for (int i = 0; i < np; ++i) pred.push_back({rng() % 3000, 1 + static_cast<int>(rng() % 3)});
    const auto by_cycle = [](const auto& a, const auto& b) { return a.cycle < b.cycle; };
    std::sort(truth.begin(), truth.end(), by_cycle);
    std::sort(pred.begin(), pred.end(), by_cycle);
    const auto m = match_events(truth, pred, 50);
    const int tp = count(m, Outcome::TP);
    CHECK(tp <= std::min(nt, np));
    CHECK(tp + count(m, Outcome::FN) == nt);
    CHECK(tp + count(m, Outcome::FP) == np);
    for (const auto& x : m) {
      if (x.outcome != Outcome::TP) continue;
      CHECK(x.truth->class_label == x.predicted->class_label);
      CHECK(std::max(x.truth->cycle, x.predicted->cycle) - std::min(x.truth->cycle, x.predicted->cycle) <= 50u);
    }
  }
}

TEST_CASE("f1 examples") {
  const std::vector<TimedClass> truth{{100, 1}, {500, 2}};
  const auto perfect = f1_scores(match_events(truth, truth));
  CHECK(perfect.average_f1 == 1.0);
  CHECK(perfect.weighted_f1 == 1.0);

  const std::vector<TimedClass> one{{100, 1}};
  const std::vector<TimedClass> pred{{100, 1}, {400, 1}};
  const auto r = f1_scores(match_events(one, pred));
  const auto& c = r.per_class.at(1);
  CHECK(c.tp == 1);
  CHECK(c.fp == 1);
  CHECK(c.fn == 0);
  CHECK(c.precision == doctest::Approx(0.5));
  CHECK(c.recall == doctest::Approx(1.0));
  CHECK(c.f1 == doctest::Approx(2.0 / 3.0));

  // A class with no support and no predictions contributes nothing; 0/0 is 0.
  const auto fp_only = f1_scores(match_events(std::vector<TimedClass>{}, one));
  CHECK(fp_only.per_class.at(1).precision == 0.0);
  CHECK(fp_only.per_class.at(1).f1 == 0.0);
}

TEST_CASE("weighted F1 follows a dominant class while the average does not") {
  std::vector<TimedClass> truth, pred;
  // Class 1 holds 77 of 100 truths and is detected perfectly; classes 2..4 are missed.
  for (int i = 0; i < 77; ++i) {
    truth.push_back({static_cast<std::uint64_t>(1000 * i), 1});
    pred.push_back({static_cast<std::uint64_t>(1000 * i), 1});
  }
  for (int i = 77; i < 100; ++i) truth.push_back({static_cast<std::uint64_t>(1000 * i), 2 + i % 3});
  const auto r = f1_scores(match_events(truth, pred));
  CHECK(r.weighted_f1 == doctest::Approx(0.77));
  CHECK(r.average_f1 == doctest::Approx(0.25));
  double num = 0.0, den = 0.0;
  for (const auto& [c, m] : r.per_class) {
    num += m.support * m.f1;
    den += m.support;
  }
  CHECK(r.weighted_f1 == doctest::Approx(num / den));
}

TEST_CASE("balance ratio examples") {
  CHECK(min_max_ratio({}) == 0.0);
  CHECK(min_max_ratio({0.0, 0.0}) == 0.0);
  CHECK(min_max_ratio({3.0, 6.0}) == doctest::Approx(0.5));

  std::vector<schedule::Event> uniform;
  for (int a = 0; a < 3; ++a) {
    const auto e = alternating(a, 4, 0);
    uniform.insert(uniform.end(), e.begin(), e.end());
  }
  const auto u = balance_ratios(uniform, {{0, 5.0}, {1, 5.0}, {2, 5.0}});
  CHECK(u.event_br == 1.0);
  CHECK(u.state_br == 1.0);
  CHECK(u.avg_on_off_br == 1.0);

  // Minimum and maximum per-appliance event and ON-state totals of the home dataset.
  std::vector<schedule::Event> events;
  for (const auto& [a, n] : std::vector<std::pair<int, int>>{{0, 278}, {1, 800}, {2, 1310}}) {
    const auto e = alternating(a, n, 0);
    events.insert(events.end(), e.begin(), e.end());
  }
  const auto r = balance_ratios(events, {{0, 1628551.0}, {1, 1700000.0}, {2, 1856095.0}});
  CHECK(r.event_br == doctest::Approx(0.212).epsilon(0.002));
  CHECK(r.state_br == doctest::Approx(0.877).epsilon(0.001));
  CHECK(r.avg_on_off_br == doctest::Approx(1.0));

  // Order does not matter.
  std::reverse(events.begin(), events.end());
  const auto rev = balance_ratios(events, {{2, 1856095.0}, {0, 1628551.0}, {1, 1700000.0}});
  CHECK(rev.event_br == r.event_br);
  CHECK(rev.state_br == r.state_br);

  // An appliance that never switches forces event_br to 0; one ON without OFF halves its on/off ratio.
  const std::vector<schedule::Event> lone{{10, 0, Action::On}, {20, 0, Action::Off}, {30, 0, Action::On}};
  const auto l = balance_ratios(lone, {{0, 10.0}, {1, 0.0}});
  CHECK(l.event_br == 0.0);
  CHECK(l.state_br == 0.0);
}

TEST_CASE("diversity examples") {
  const std::vector<schedule::StateMask> off(1000, 0);
  CHECK(diversity(off, 50.0).unique_states == 1);

  // 4558 unique states over 32.2 hours.
  const auto home = gray_walk(13, 4557, 1272);
  const auto h = diversity(home, 50.0);
  CHECK(h.unique_states == 4558);
  CHECK(h.diversity_density == doctest::Approx(4558.0 / 32.2).epsilon(0.002));

  // 718 unique states over 2304 hours.
  const auto sparse = gray_walk(10, 717, 577604);
  const auto sd = diversity(sparse, 50.0);
  CHECK(sd.unique_states == 718);
  CHECK(sd.diversity_density == doctest::Approx(0.31).epsilon(0.01));

  std::vector<schedule::StateMask> cycles{1, 2, 3, 1, 2, 3};
  const auto a = diversity(cycles, 50.0);
  std::reverse(cycles.begin(), cycles.end());
  CHECK(diversity(cycles, 50.0).unique_states == a.unique_states);
  CHECK(a.diversity_density == doctest::Approx(3.0 / (6.0 / 50.0 / 3600.0)));
  CHECK_THROWS_AS(diversity(cycles, 0.0), ParameterError);
}

TEST_CASE("SINR of the humidifier over the kettle improves tenfold with differencing") {
  // sigma * sqrt(2) * 220 V ~ 20 W of differential noise.
  const auto trace = humidifier_over_kettle(0.064);
  const double raw = estimate_sinr(trace, 1, SinrMode::Raw);
  const double diff = estimate_sinr(trace, 1, SinrMode::Diff);
  CHECK(raw == doctest::Approx(40.0 / 1500.0).epsilon(0.15));
  CHECK(diff > 39.0 / 100.0);
  CHECK(diff / raw > 10.0);
}

TEST_CASE("SINR edge cases") {
  sim::GridSpec grid;
  grid.noise_std_a = 0.0;
  schedule::EventSchedule s;
  s.n_appliances = 2;
  s.dwell_cycles = 100;
  s.events = {{10, 0, Action::On}};
  sim::ExecuteOptions opt;
  opt.keep_individual = true;
  const auto t = sim::execute_schedule(
      s, {testutil::plain_appliance(0, 500, grid), testutil::plain_appliance(1, 100, grid)}, grid, 3, opt);
  CHECK(estimate_sinr(t, 0, SinrMode::Raw) == kSinrCap);
  CHECK_THROWS_AS(estimate_sinr(t, 1, SinrMode::Raw), DegenerateInputError);
  CHECK_THROWS_AS(estimate_sinr(t, 2, SinrMode::Raw), ParameterError);
  const auto no_individual = sim::execute_schedule(
      s, {testutil::plain_appliance(0, 500, grid), testutil::plain_appliance(1, 100, grid)}, grid, 3);
  CHECK_THROWS_AS(estimate_sinr(no_individual, 0, SinrMode::Diff), ParameterError);
}

TEST_CASE("state identification from detections") {
  sim::GridSpec grid;
  schedule::EventSchedule s;
  s.n_appliances = 2;
  s.dwell_cycles = 100;
  s.events = {{50, 0, Action::On}, {150, 1, Action::On}, {250, 0, Action::Off}, {350, 1, Action::Off},
              {450, 0, Action::On}, {550, 0, Action::Off}};
  const auto t = sim::execute_schedule(s, {testutil::plain_appliance(0, 100, grid), testutil::plain_appliance(1, 200, grid)},
                                       grid, 5, {.n_cycles = 700});
  std::vector<DetectedEvent> perfect;
  for (const auto& e : s.events) perfect.push_back({e.time_cycle + 20, e.time_cycle, event_class(e.appliance_id, e.action)});
  const auto p = state_identify(t, perfect);
  CHECK(p.average_f1 == 1.0);
  CHECK(p.estimate.size() == t.frames.size());

  // Drop the second ON of appliance 0: 100 ON cycles missed out of 300.
  auto missed = perfect;
  missed.erase(missed.begin() + 4);
  const auto m = state_identify(t, missed);
  const double tp = 200.0, fn = 100.0;
  CHECK(m.per_appliance_f1[0] == doctest::Approx(2 * tp / (2 * tp + fn)));
  CHECK(m.per_appliance_f1[1] == 1.0);
  CHECK(m.average_f1 == doctest::Approx((2 * tp / (2 * tp + fn) + 1.0) / 2.0));
}

TEST_CASE("truth classes follow label changes") {
  sim::GridSpec grid;
  schedule::EventSchedule s;
  s.n_appliances = 2;
  s.dwell_cycles = 50;
  s.events = {{10, 1, Action::On}, {60, 1, Action::Off}};
  const auto t = sim::execute_schedule(s, {testutil::plain_appliance(0, 100, grid), testutil::plain_appliance(1, 200, grid)},
                                       grid, 5);
  CHECK(truth_classes(t) == std::vector<TimedClass>{{10, event_class(1, Action::On)}, {60, event_class(1, Action::Off)}});
  const auto on = on_cycle_counts(t);
  CHECK(on.at(0) == 0.0);
  CHECK(on.at(1) == 50.0);
}

}  // TEST_SUITE
