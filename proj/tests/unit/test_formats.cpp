#include <cstring>
#include <functional>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "hawk/classes.hpp"
#include "hawk/error.hpp"
#include "hawk/eval.hpp"
#include "hawk/model.hpp"
#include "hawk/pipeline.hpp"
#include "hawk/schedule.hpp"
#include "hawk/simulate.hpp"
#include "hawk/syncsim.hpp"

using namespace hawk;

namespace {

schedule::EventSchedule small_schedule() {
  return schedule::generate_schedule({.n_appliances = 4, .group_size = 2, .groups_active_per_round = 1, .rounds = 2,
                                      .dwell_cycles = 20, .rng_seed = 3});
}

sim::Trace small_trace(bool individual) {
  const auto s = small_schedule();
  auto catalog = sim::default_catalog();
  catalog.resize(4);
  sim::ExecuteOptions opt;
  opt.keep_individual = individual;
  return sim::execute_schedule(s, catalog, sim::GridSpec{}, 9, opt);
}

template <class Write>
std::string bytes_of(Write&& write) {
  std::ostringstream os;
  write(os);
  return os.str();
}

// Every strict prefix of `bytes` must be rejected as a format error.
template <class Read>
void check_prefixes_rejected(const std::string& bytes, Read&& read, std::size_t step) {
  for (std::size_t cut = 0; cut < bytes.size(); cut += step) {
    std::istringstream is(bytes.substr(0, cut));
    CHECK_THROWS_AS(read(is), FormatError);
  }
}

int exit_code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.exit_code();
  }
  return 0;
}

eval::MetricReport sample_report() {
  eval::MetricReport r;
  r.per_class[1] = {.tp = 3, .fp = 1, .fn = 0, .precision = 0.75, .recall = 1.0, .f1 = 6.0 / 7.0, .support = 3};
  r.per_class[4] = {.tp = 0, .fp = 0, .fn = 2, .precision = 0.0, .recall = 0.0, .f1 = 0.0, .support = 2};
  r.average_f1 = 3.0 / 7.0;
  r.weighted_f1 = 18.0 / 35.0;
  r.event_br = 0.1 + 0.2;
  r.state_br = 1.0 / 3.0;
  r.avg_on_off_br = 1.0;
  r.unique_states = 16;
  r.diversity_density = 1234.5678901234;
  r.extra["state_f1"] = 0.9;
  r.extra["latency_ms"] = 1e-3;
  return r;
}

model::EventModel small_model() {
  Rng rng = make_rng(50);
  std::vector<pipeline::TrainingSample> samples;
  for (int i = 0; i < 90; ++i) {
    pipeline::TrainingSample s;
    s.class_label = static_cast<std::uint16_t>(i % 3);
    for (auto& v : s.features.values) v = gaussian(rng) + s.class_label;
    samples.push_back(s);
  }
  model::EventModel m;
  m.classifier = model::GbdtClassifier::train(samples, 3, {.n_trees = 4, .max_depth = 3, .learning_rate = 0.3});
  m.thresholds = {30, 7, 13};
  m.appliance_names = {"Kettle"};
  return m;
}

}  // namespace

TEST_SUITE("formats") {

TEST_CASE("schedule file round-trips byte for byte") {
  const auto s = small_schedule();
  const auto a = bytes_of([&](std::ostream& os) { schedule::write_schedule(os, s); });
  std::istringstream is(a);
  const auto back = schedule::read_schedule(is);
  CHECK(back.events == s.events);
  CHECK(back.params == s.params);
  CHECK(bytes_of([&](std::ostream& os) { schedule::write_schedule(os, back); }) == a);

  testutil::TempDir dir;
  schedule::save_schedule(dir / "s.jsonl", s);
  CHECK(testutil::read_bytes(dir / "s.jsonl") == a);
  CHECK(schedule::load_schedule(dir / "s.jsonl").events == s.events);
}

TEST_CASE("schedule file damage") {
  const auto a = bytes_of([&](std::ostream& os) { schedule::write_schedule(os, small_schedule()); });
  std::istringstream empty("");
  CHECK_THROWS_AS(schedule::read_schedule(empty), FormatError);
  std::istringstream cut(a.substr(0, a.size() - 5));
  CHECK_THROWS_AS(schedule::read_schedule(cut), FormatError);
  std::string bad_op = a;
  const auto pos = bad_op.find("\"on\"");
  REQUIRE(pos != std::string::npos);
  bad_op.replace(pos, 4, "\"up\"");
  std::istringstream is_op(bad_op);
  CHECK_THROWS_AS(schedule::read_schedule(is_op), FormatError);
  CHECK(exit_code_of([&] {
          std::istringstream is("garbage\n");
          schedule::read_schedule(is);
        }) == 3);
  CHECK(exit_code_of([] { schedule::load_schedule("/nonexistent/s.jsonl"); }) == 2);
}

TEST_CASE("trace file round-trips byte for byte") {
  for (bool individual : {false, true}) {
    const auto t = small_trace(individual);
    const auto a = bytes_of([&](std::ostream& os) { sim::write_trace(os, t); });
    const auto len = static_cast<std::size_t>(t.cycle_len());
    const std::size_t per_frame = 8 + 4 + 4 * len * (2 + (individual ? 4 : 0));
    CHECK(a.size() == 25 + t.frames.size() * per_frame);
    CHECK(a.substr(0, 4) == "HWK1");
    std::istringstream is(a);
    const auto back = sim::read_trace(is);
    CHECK(back.frames.size() == t.frames.size());
    CHECK(back.has_individual == individual);
    CHECK(back.grid.sample_rate_hz == t.grid.sample_rate_hz);
    CHECK(back.grid.mains_hz == t.grid.mains_hz);
    for (std::size_t i = 0; i < t.frames.size(); i += 97) {
      CHECK(back.frames[i].label == t.frames[i].label);
      CHECK(back.frames[i].aggregate[5] == doctest::Approx(t.frames[i].aggregate[5]).epsilon(1e-6));
    }
    CHECK(bytes_of([&](std::ostream& os) { sim::write_trace(os, back); }) == a);
  }
}

TEST_CASE("Kirchhoff closure survives float storage") {
  const auto s = small_schedule();
  auto catalog = sim::default_catalog();
  catalog.resize(4);
  sim::GridSpec quiet;
  quiet.noise_std_a = 0.0;
  sim::ExecuteOptions opt;
  opt.keep_individual = true;
  const auto t = sim::execute_schedule(s, catalog, quiet, 9, opt);
  std::stringstream ss;
  sim::write_trace(ss, t);
  CHECK(sim::kirchhoff_residual(sim::read_trace(ss)) < 1e-5);
}

TEST_CASE("trace file damage") {
  const auto t = small_trace(false);
  const auto a = bytes_of([&](std::ostream& os) { sim::write_trace(os, t); });
  const auto read = [](std::istream& is) { return sim::read_trace(is); };
  // A bare 25-byte header is a valid empty trace; anything shorter or cut
  // inside a frame is not.
  check_prefixes_rejected(a.substr(0, 25), read, 1);
  for (std::size_t cut : {std::size_t{26}, std::size_t{100}, a.size() - 1, a.size() - 1000}) {
    std::istringstream is(a.substr(0, cut));
    CHECK_THROWS_AS(sim::read_trace(is), FormatError);
  }
  const auto corrupt = [&](std::size_t offset, std::uint8_t value) {
    std::string b = a;
    b[offset] = static_cast<char>(value);
    std::istringstream is(b);
    return exit_code_of([&] { sim::read_trace(is); });
  };
  CHECK(corrupt(0, 'X') == 3);           // magic
  CHECK(corrupt(4, 9) == 3);             // version
  CHECK(corrupt(16, 0) == 3);            // cycle_len
  CHECK(corrupt(20, 200) == 3);          // n_appliances
  CHECK(corrupt(24, 2) == 3);            // has_individual
  CHECK(corrupt(25 + 8, 0xF0) == 3);     // label bits beyond the appliance count
  const std::size_t frame = 8 + 4 + 4 * 2 * 320;
  CHECK(corrupt(25 + frame, 0x55) == 3); // second cycle id out of sequence
  CHECK(exit_code_of([] { sim::load_trace("/nonexistent/t.hwk"); }) == 2);
}

TEST_CASE("model file round-trips byte for byte") {
  const auto m = small_model();
  const auto a = bytes_of([&](std::ostream& os) { model::write_model(os, m); });
  CHECK(a.substr(0, 4) == "HWKM");
  std::uint16_t major = 0;
  std::memcpy(&major, a.data() + 4, 2);
  CHECK(major == model::kModelMajor);
  std::istringstream is(a);
  const auto back = model::read_model(is);
  CHECK(back == m);
  CHECK(bytes_of([&](std::ostream& os) { model::write_model(os, back); }) == a);
  check_prefixes_rejected(a, [](std::istream& s) { return model::read_model(s); }, 7);
}

TEST_CASE("model metadata corruption") {
  const auto a = bytes_of([&](std::ostream& os) { model::write_model(os, small_model()); });
  const auto replace = [&](const std::string& from, const std::string& to) {
    std::string b = a;
    const auto pos = b.find(from);
    REQUIRE(pos != std::string::npos);
    REQUIRE(from.size() == to.size());
    b.replace(pos, from.size(), to);
    std::istringstream is(b);
    return exit_code_of([&] { model::read_model(is); });
  };
  CHECK(replace("hawk-model", "hawk-modex") == 3);
  CHECK(replace("\"thresholds\":[30,7,13]", "\"thresholds\":[30,7,99]") == 3);
  CHECK(replace("\"n_classes\":3", "\"n_classes\":4") == 3);
}

TEST_CASE("metric report JSON and CSV round-trip byte for byte") {
  const auto r = sample_report();
  const auto js = bytes_of([&](std::ostream& os) { eval::write_report_json(os, r); });
  std::istringstream ij(js);
  const auto back = eval::read_report_json(ij);
  CHECK(back.average_f1 == r.average_f1);
  CHECK(back.event_br == r.event_br);
  CHECK(back.diversity_density == r.diversity_density);
  CHECK(back.extra == r.extra);
  CHECK(back.per_class.at(1).f1 == r.per_class.at(1).f1);
  CHECK(bytes_of([&](std::ostream& os) { eval::write_report_json(os, back); }) == js);

  const auto csv = bytes_of([&](std::ostream& os) { eval::write_report_csv(os, r); });
  std::istringstream ic(csv);
  const auto from_csv = eval::read_report_csv(ic);
  CHECK(from_csv.per_class.size() == 2u);
  CHECK(from_csv.per_class.at(4).fn == 2);
  CHECK(bytes_of([&](std::ostream& os) { eval::write_report_csv(os, from_csv); }) == csv);

  testutil::TempDir dir;
  eval::save_report(dir / "metrics.json", r);
  CHECK(testutil::read_bytes(dir / "metrics.json") == js);
  CHECK(testutil::read_bytes(dir / "metrics.csv") == csv);
  CHECK(eval::load_report(dir / "metrics.json").weighted_f1 == r.weighted_f1);
}

TEST_CASE("metric report damage") {
  const auto js = bytes_of([&](std::ostream& os) { eval::write_report_json(os, sample_report()); });
  check_prefixes_rejected(js, [](std::istream& s) { return eval::read_report_json(s); }, 11);
  std::istringstream wrong(R"({"format":"hawk-metrics","version":2})");
  CHECK_THROWS_AS(eval::read_report_json(wrong), FormatError);
  std::istringstream bad_header("class,f1\n");
  CHECK_THROWS_AS(eval::read_report_csv(bad_header), FormatError);
  const auto csv = bytes_of([&](std::ostream& os) { eval::write_report_csv(os, sample_report()); });
  std::istringstream short_row(csv + "7,1,1\n");
  CHECK_THROWS_AS(eval::read_report_csv(short_row), FormatError);
  std::istringstream dup(csv + csv.substr(csv.find('\n') + 1));
  CHECK_THROWS_AS(eval::read_report_csv(dup), FormatError);
  std::istringstream nan_cell(csv + "9,x,1,1,1,1,1,1\n");
  CHECK_THROWS_AS(eval::read_report_csv(nan_cell), FormatError);
}

TEST_CASE("training-sample file and sidecar") {
  pipeline::TrainingSet set;
  set.n_classes = 9;
  Rng rng = make_rng(51);
  for (int i = 0; i < 25; ++i) {
    pipeline::TrainingSample s;
    s.class_label = static_cast<std::uint16_t>(i % 9);
    for (auto& v : s.features.values) v = static_cast<float>(gaussian(rng));
    set.samples.push_back(s);
  }
  auto catalog = sim::default_catalog();
  catalog.resize(4);
  testutil::TempDir dir;
  pipeline::save_training_set(dir / "s.bin", set, catalog);
  const auto bin = testutil::read_bytes(dir / "s.bin");
  CHECK(bin.size() == 25u * (2 + 4 * 30));
  std::uint16_t first_label = 99;
  std::memcpy(&first_label, bin.data(), 2);
  CHECK(first_label == 0);
  CHECK(pipeline::sidecar_path(dir / "s.bin") == dir / "s.bin.json");

  const auto back = pipeline::load_training_set(dir / "s.bin");
  CHECK(back.n_classes == 9);
  REQUIRE(back.samples.size() == 25u);
  for (std::size_t i = 0; i < 25; ++i) {
    CHECK(back.samples[i].class_label == set.samples[i].class_label);
    CHECK(back.samples[i].features.values == set.samples[i].features.values);
  }
  pipeline::save_training_set(dir / "t.bin", back, catalog);
  CHECK(testutil::read_bytes(dir / "t.bin") == bin);
  CHECK(testutil::read_bytes(dir / "t.bin.json") == testutil::read_bytes(dir / "s.bin.json"));

  testutil::write_bytes(dir / "s.bin", bin.substr(0, bin.size() - 3));
  CHECK_THROWS_AS(pipeline::load_training_set(dir / "s.bin"), FormatError);
  std::string bad = bin;
  bad[0] = 50;
  testutil::write_bytes(dir / "s.bin", bad);
  CHECK_THROWS_AS(pipeline::load_training_set(dir / "s.bin"), FormatError);
  testutil::write_bytes(dir / "s.bin.json", "{");
  CHECK_THROWS_AS(pipeline::load_training_set(dir / "s.bin"), FormatError);
  std::filesystem::remove(dir / "s.bin.json");
  CHECK(exit_code_of([&] { pipeline::load_training_set(dir / "s.bin"); }) == 2);
}

TEST_CASE("catalog, detections and sync config round-trip") {
  const auto catalog = sim::default_catalog();
  const auto c = bytes_of([&](std::ostream& os) { sim::write_catalog(os, catalog); });
  std::istringstream ic(c);
  const auto back = sim::read_catalog(ic);
  CHECK(back == catalog);
  CHECK(bytes_of([&](std::ostream& os) { sim::write_catalog(os, back); }) == c);
  std::istringstream broken(c.substr(0, c.size() / 2));
  CHECK_THROWS_AS(sim::read_catalog(broken), FormatError);

  const std::vector<model::EventReport> reports{
      {.cycle_id = 5, .class_label = 1, .vote_count = 3, .appliance_id = 0, .action = schedule::Action::On, .onset_cycle = 2}};
  const auto d = bytes_of([&](std::ostream& os) { model::write_reports(os, reports, 3); });
  std::istringstream id(d);
  const auto rb = model::read_reports(id);
  CHECK(bytes_of([&](std::ostream& os) { model::write_reports(os, rb, 3); }) == d);

  const syncsim::SyncConfig sc;
  const auto s = bytes_of([&](std::ostream& os) { syncsim::write_sync_config(os, sc); });
  std::istringstream is(s);
  const auto sb = syncsim::read_sync_config(is);
  CHECK(sb == sc);
  CHECK(bytes_of([&](std::ostream& os) { syncsim::write_sync_config(os, sb); }) == s);
}

}  // TEST_SUITE
