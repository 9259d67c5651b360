#include <set>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "hawk/classes.hpp"
#include "hawk/error.hpp"
#include "hawk/experiment.hpp"

using namespace hawk;
using namespace hawk::experiment;

namespace {

ExperimentConfig toy_config() {
  ExperimentConfig c;
  for (auto* s : {&c.train_schedule, &c.test_schedule}) {
    s->n_appliances = 4;
    s->group_size = 4;
    s->groups_active_per_round = 1;
    s->rounds = 1;
  }
  c.model.n_trees = 20;
  return c;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("config round-trips through JSON") {
  ExperimentConfig c;
  c.reseed(99);
  c.catalog_path = "";
  c.prepare.locator.drop_top = 1;
  c.ablation_intervals = {10, 30};
  std::ostringstream os;
  write_experiment_config(os, c);
  std::istringstream is(os.str());
  const auto back = read_experiment_config(is);
  CHECK(back == c);
  std::ostringstream again;
  write_experiment_config(again, back);
  CHECK(again.str() == os.str());

  testutil::TempDir dir;
  save_experiment_config(dir / "c.json", c);
  CHECK(load_experiment_config(dir / "c.json") == c);
}

TEST_CASE("config errors") {
  std::istringstream junk("{");
  CHECK_THROWS_AS(read_experiment_config(junk), FormatError);
  std::istringstream wrong(R"({"format": "other", "version": 1})");
  CHECK_THROWS_AS(read_experiment_config(wrong), FormatError);

  ExperimentConfig c;
  c.test_schedule.n_appliances = 5;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = ExperimentConfig{};
  c.imbalance_min_ratio = 0.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = ExperimentConfig{};
  c.catalog_path = "/nonexistent/catalog.json";
  CHECK_THROWS_AS(c.validate(), ParameterError);
  CHECK_NOTHROW(ExperimentConfig{}.validate());
}

TEST_CASE("reseeding changes every stream and is reproducible") {
  ExperimentConfig a, b;
  a.reseed(5);
  b.reseed(5);
  CHECK(a == b);
  const std::set<std::uint64_t> seeds{a.train_schedule.rng_seed, a.test_schedule.rng_seed, a.train_sim_seed,
                                      a.test_sim_seed, a.prepare.seed, a.model.seed, a.imbalance_seed};
  CHECK(seeds.size() == 7u);
  b.reseed(6);
  CHECK(b.train_schedule.rng_seed != a.train_schedule.rng_seed);
}

TEST_CASE("imbalance weights fall geometrically") {
  const auto w = imbalance_weights(18, 0.2, 7);
  REQUIRE(w.size() == 18u);
  std::vector<double> v;
  for (const auto& [a, x] : w) v.push_back(x);
  std::sort(v.begin(), v.end());
  CHECK(v.front() == doctest::Approx(0.2));
  CHECK(v.back() == doctest::Approx(1.0));
  for (std::size_t i = 1; i < v.size(); ++i) CHECK(v[i] / v[i - 1] == doctest::Approx(std::pow(0.2, -1.0 / 17)));
  CHECK(imbalance_weights(18, 0.2, 7) == w);
  CHECK(imbalance_weights(18, 0.2, 8) != w);
  CHECK(imbalance_weights(1, 0.2, 7).at(0) == 1.0);
  CHECK_THROWS_AS(imbalance_weights(0, 0.2, 7), ParameterError);
  CHECK_THROWS_AS(imbalance_weights(3, 1.5, 7), ParameterError);
}

TEST_CASE("reference cycle labels mark windows holding exactly one switch") {
  sim::GridSpec grid;
  schedule::EventSchedule s;
  s.n_appliances = 2;
  s.dwell_cycles = 50;
  s.events = {{20, 0, schedule::Action::On}, {100, 1, schedule::Action::On}, {103, 0, schedule::Action::Off}};
  const auto t = sim::execute_schedule(
      s, {testutil::plain_appliance(0, 100, grid), testutil::plain_appliance(1, 200, grid)}, grid, 1, {.n_cycles = 200});
  const auto labels = reference_cycle_labels(t, 5);
  for (int i = 0; i < 200; ++i) {
    int expected = kIdleClass;
    if (i >= 20 && i < 25) expected = event_class(0, schedule::Action::On);
    if (i >= 100 && i < 103) expected = event_class(1, schedule::Action::On);
    if (i >= 105 && i < 108) expected = event_class(0, schedule::Action::Off);
    CHECK(labels[i] == expected);
  }
}

TEST_CASE("four-appliance toy is recognized almost perfectly") {
  const auto c = toy_config();
  const auto data = build_data(c);
  CHECK(data.catalog.size() == 4u);
  const auto r = run_recognition(c, data);
  CHECK(r.metrics.average_f1 >= 0.99);
  CHECK(r.state_f1 >= 0.95);
  CHECK(r.cycle_accuracy >= 0.9);
  CHECK(r.prepare.dropped == 0);
  CHECK(r.metrics.extra.at("state_f1") == r.state_f1);
  CHECK(r.mean_latency_ms < 20.0);

  // Steady segments are classified IDLE.
  const auto stream = model::predict_stream(data.test_trace, r.model.classifier, r.model.diff_interval);
  const auto ref = reference_cycle_labels(data.test_trace, r.model.diff_interval);
  int idle = 0, idle_ok = 0;
  for (std::size_t i = static_cast<std::size_t>(r.model.diff_interval); i < ref.size(); ++i) {
    if (ref[i] != kIdleClass) continue;
    ++idle;
    idle_ok += stream.labels[i] == kIdleClass;
  }
  CHECK(static_cast<double>(idle_ok) / idle >= 0.99);

  // Deterministic.
  const auto again = run_recognition(c, build_data(c));
  CHECK(again.model == r.model);
  CHECK(again.metrics.average_f1 == r.metrics.average_f1);
}

TEST_CASE("evaluate_reports scores perfect reports as 1") {
  const auto c = toy_config();
  const auto data = build_data(c);
  std::vector<model::EventReport> reports;
  for (const auto& e : sim::label_events(data.test_trace)) {
    model::EventReport r;
    r.cycle_id = e.time_cycle + 15;
    r.onset_cycle = e.time_cycle;
    r.class_label = event_class(e.appliance_id, e.action);
    r.appliance_id = e.appliance_id;
    r.action = e.action;
    reports.push_back(r);
  }
  const auto m = evaluate_reports(data.test_trace, reports, c.tolerance_cycles);
  CHECK(m.average_f1 == 1.0);
  CHECK(m.weighted_f1 == 1.0);
  CHECK(m.extra.at("state_f1") == 1.0);
  CHECK(m.event_br == 1.0);
  CHECK(m.unique_states == 16);
}

TEST_CASE("ablation rows and CSV") {
  auto c = toy_config();
  c.ablation_intervals = {10, 30};
  const auto data = build_data(c);
  const auto rows = ablate_diff_interval(c, data);
  REQUIRE(rows.size() == 2u);
  CHECK(rows[0].diff_interval == 10);
  CHECK(rows[1].diff_interval == 30);
  const auto bal = ablate_balance(c, data);
  REQUIRE(bal.size() == 2u);
  CHECK(bal[0].variant == "balanced");
  CHECK(bal[1].variant == "imbalanced");

  std::ostringstream os;
  write_ablation_csv(os, {{"d", 10, 0.5, 0.25, 1.0}, {"balanced", 30, 0.9375, 0.875, 0.75}});
  CHECK(os.str() ==
        "variant,diff_interval,average_f1,weighted_f1,state_f1\n"
        "d,10,0.5,0.25,1\n"
        "balanced,30,0.9375,0.875,0.75\n");
}

}  // TEST_SUITE
