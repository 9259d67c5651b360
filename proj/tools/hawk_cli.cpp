// hawk: batch command-line front end. Every stage reads the previous stage's
// artifact from the output directory (or an explicit path) and writes its own.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "hawk/error.hpp"
#include "hawk/eval.hpp"
#include "hawk/experiment.hpp"
#include "hawk/model.hpp"
#include "hawk/pipeline.hpp"
#include "hawk/schedule.hpp"
#include "hawk/simulate.hpp"
#include "hawk/syncsim.hpp"

namespace fs = std::filesystem;
using namespace hawk;

namespace {

constexpr double kRealTimeBudgetMs = 20.0;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

experiment::ExperimentConfig load_config(const Globals& g) {
  auto c = g.config_path.empty() ? experiment::ExperimentConfig{}
                                 : experiment::load_experiment_config(g.config_path);
  if (g.seed) c.reseed(*g.seed);
  c.validate();
  return c;
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / name;
}

// Explicit path when given, else the default artifact name in the output directory.
fs::path in_path(const Globals& g, const std::string& explicit_path, const std::string& name) {
  return explicit_path.empty() ? fs::path(g.out_dir) / name : fs::path(explicit_path);
}

bool is_train(const std::string& split) { return split == "train"; }

void print_stats(const schedule::EventSchedule& s) {
  const auto st = schedule::schedule_stats(s);
  std::printf("events %zu  unique_states %d  event_br %.4f  state_br %.4f  horizon %llu cycles\n", s.events.size(),
              st.unique_states, st.event_br, st.state_br, static_cast<unsigned long long>(s.horizon_cycles()));
}

void cmd_init(const Globals& g) {
  const auto c = load_config(g);
  experiment::save_experiment_config(out_path(g, "config.json"), c);
  sim::save_catalog(out_path(g, "catalog.json"), experiment::resolve_catalog(c));
  std::ofstream os(out_path(g, "sync_config.json"), std::ios::binary);
  syncsim::SyncConfig sc;
  if (g.seed) sc.seed = *g.seed;
  syncsim::write_sync_config(os, sc);
  std::printf("wrote config.json, catalog.json, sync_config.json to %s\n", g.out_dir.c_str());
}

struct ScheduleArgs {
  std::string split = "train";
  int rounds = 0;
  int appliances = 0;
  int dwell = 0;
};

void cmd_gen_schedule(const Globals& g, const ScheduleArgs& a) {
  const auto c = load_config(g);
  auto params = is_train(a.split) ? c.train_schedule : c.test_schedule;
  if (a.rounds > 0) params.rounds = a.rounds;
  if (a.appliances > 0) params.n_appliances = a.appliances;
  if (a.dwell > 0) params.dwell_cycles = a.dwell;
  const auto s = schedule::generate_schedule(params);
  const auto path = out_path(g, a.split + "_schedule.jsonl");
  schedule::save_schedule(path, s);
  std::printf("%s: ", path.c_str());
  print_stats(s);
  const auto other = fs::path(g.out_dir) / ((is_train(a.split) ? "test" : "train") + std::string("_schedule.jsonl"));
  if (fs::exists(other)) {
    const auto o = schedule::load_schedule(other);
    const double overlap = is_train(a.split) ? schedule::overlap_ratio(s, o) : schedule::overlap_ratio(o, s);
    std::printf("train/test state overlap %.4f\n", overlap);
  }
}

struct SimulateArgs {
  std::string split = "train";
  std::string schedule_path;
  bool keep_individual = false;
  std::uint64_t cycles = 0;
};

void cmd_simulate(const Globals& g, const SimulateArgs& a) {
  const auto c = load_config(g);
  const auto s = schedule::load_schedule(in_path(g, a.schedule_path, a.split + "_schedule.jsonl"));
  auto catalog = c.catalog_path.empty() ? sim::default_catalog(c.grid) : sim::load_catalog(c.catalog_path);
  if (static_cast<int>(catalog.size()) < s.n_appliances) {
    throw ParameterError("simulate: catalog has fewer appliances than the schedule");
  }
  catalog.resize(static_cast<std::size_t>(s.n_appliances));
  sim::ExecuteOptions opts;
  opts.keep_individual = a.keep_individual;
  opts.n_cycles = a.cycles;
  const auto seed = is_train(a.split) ? c.train_sim_seed : c.test_sim_seed;
  const auto trace = sim::execute_schedule(s, catalog, c.grid, seed, opts);
  const auto path = out_path(g, a.split + "_trace.hwk");
  sim::save_trace(path, trace);
  std::printf("%s: %zu cycles, %d appliances, %.0f Hz sampling\n", path.c_str(), trace.frames.size(),
              trace.n_appliances, trace.grid.sample_rate_hz);
  if (a.keep_individual) {
    const auto back = sim::load_trace(path);
    std::printf("kirchhoff residual on reload %.3g A\n", sim::kirchhoff_residual(back));
  }
}

struct PrepareArgs {
  std::string trace_path;
  bool imbalanced = false;
};

void cmd_prepare(const Globals& g, const PrepareArgs& a) {
  const auto c = load_config(g);
  const auto trace = sim::load_trace(in_path(g, a.trace_path, "train_trace.hwk"));
  auto catalog = experiment::resolve_catalog(c);
  std::vector<schedule::Event> selection;
  if (a.imbalanced) {
    const auto w = experiment::imbalance_weights(trace.n_appliances, c.imbalance_min_ratio, c.imbalance_seed);
    selection = sim::resample_imbalanced(sim::label_events(trace), w, c.imbalance_seed);
  }
  const auto set = pipeline::prepare_training_set(trace, catalog, c.prepare, a.imbalanced ? &selection : nullptr);
  const auto path = out_path(g, "samples.bin");
  pipeline::save_training_set(path, set, catalog);
  const auto& r = set.report;
  std::printf("%s: %zu samples (events %d, located %d, dropped %d, reduced %d, filtered %d, idle %d)\n",
              path.c_str(), set.samples.size(), r.events, r.located, r.dropped, r.reduced, r.filtered_out,
              r.idle_samples);
}

struct TrainArgs {
  std::string samples_path;
  std::string trace_path;
};

void cmd_train(const Globals& g, const TrainArgs& a) {
  const auto c = load_config(g);
  const auto set = pipeline::load_training_set(in_path(g, a.samples_path, "samples.bin"));
  const auto trace = sim::load_trace(in_path(g, a.trace_path, "train_trace.hwk"));
  const auto m = experiment::train_event_model(set, trace, experiment::resolve_catalog(c), c);
  const auto path = out_path(g, "model.hwkm");
  model::save_model(path, m);
  std::printf("%s: %d classes, %zu rounds, D=%d\n", path.c_str(), m.classifier.n_classes(),
              m.classifier.trees().size(), m.diff_interval);
}

struct InferArgs {
  std::string model_path;
  std::string trace_path;
};

void cmd_infer(const Globals& g, const InferArgs& a) {
  const auto m = model::load_model(in_path(g, a.model_path, "model.hwkm"));
  const auto trace = sim::load_trace(in_path(g, a.trace_path, "test_trace.hwk"));
  const auto r = model::run_inference(trace, m);
  const auto path = out_path(g, "detections.jsonl");
  model::save_reports(path, r.reports, m.classifier.n_classes());
  std::printf("%s: %zu detections over %zu cycles\n", path.c_str(), r.reports.size(), trace.frames.size());
  std::printf("latency mean %.4f ms/cycle, max %.4f ms (real-time budget %.0f ms: %s)\n", r.mean_latency_ms,
              r.max_latency_ms, kRealTimeBudgetMs, r.mean_latency_ms < kRealTimeBudgetMs ? "met" : "MISSED");
}

struct EvalArgs {
  std::string detections_path;
  std::string trace_path;
};

void cmd_eval(const Globals& g, const EvalArgs& a) {
  const auto c = load_config(g);
  const auto trace = sim::load_trace(in_path(g, a.trace_path, "test_trace.hwk"));
  const auto reports = model::load_reports(in_path(g, a.detections_path, "detections.jsonl"));
  const auto m = experiment::evaluate_reports(trace, reports, c.tolerance_cycles);
  const auto path = out_path(g, "metrics.json");
  eval::save_report(path, m);
  std::printf("%s: average event F1 %.4f, weighted F1 %.4f, state F1 %.4f\n", path.c_str(), m.average_f1,
              m.weighted_f1, m.extra.at("state_f1"));
}

struct SyncArgs {
  std::string sync_config_path;
  int trials = 0;
  bool no_noise = false;
};

void cmd_sync_sim(const Globals& g, const SyncArgs& a) {
  auto sc = a.sync_config_path.empty() ? syncsim::SyncConfig{} : syncsim::load_sync_config(a.sync_config_path);
  if (g.seed) sc.seed = *g.seed;
  if (a.trials > 0) sc.trials = a.trials;
  if (a.no_noise) sc = sc.noiseless();
  sc.validate();
  const auto run = syncsim::run_sync_sim(sc);
  for (const auto* name : {"spt", "tsf"}) {
    const auto& trials = std::string(name) == "spt" ? run.spt : run.tsf;
    const auto path = out_path(g, std::string(name) + "_cdf.csv");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParameterError("cannot write " + path.string());
    syncsim::write_cdf_csv(os, syncsim::error_cdf(trials));
    const auto s = syncsim::summarize(trials);
    std::printf("%s: %s mean %.3f us, max %.3f us, in [980, 1060] us %.3f%%\n", path.c_str(), name, s.mean_us,
                s.max_us, 100.0 * s.fraction_within(980.0, 1060.0));
  }
  std::printf("flagged trials %d of %d\n", run.flagged, sc.trials);
}

struct AblateArgs {
  std::string kind = "all";
};

void cmd_ablate(const Globals& g, const AblateArgs& a) {
  const auto c = load_config(g);
  const auto data = experiment::build_data(c);
  auto write = [&](const std::string& name, const std::vector<experiment::AblationRow>& rows) {
    const auto path = out_path(g, name);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParameterError("cannot write " + path.string());
    experiment::write_ablation_csv(os, rows);
    for (const auto& r : rows) {
      std::printf("%-14s D=%-3d average F1 %.4f  state F1 %.4f\n", r.variant.c_str(), r.diff_interval, r.average_f1,
                  r.state_f1);
    }
  };
  if (a.kind == "all" || a.kind == "diff-interval") {
    write("ablation_diff_interval.csv", experiment::ablate_diff_interval(c, data));
  }
  if (a.kind == "all" || a.kind == "balance") write("ablation_balance.csv", experiment::ablate_balance(c, data));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale NALM toolkit: schedules, traces, recognition and sync simulation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Experiment config JSON (see `hawk init`)");
  app.add_option("--seed", g.seed, "Base seed; re-derives every stage seed");
  app.add_option("--out", g.out_dir, "Output directory; also the default input location");

  auto* init = app.add_subcommand("init", "Write default config, catalog and sync config");

  ScheduleArgs sa;
  auto* gen = app.add_subcommand("gen-schedule", "Generate a balanced event schedule");
  gen->add_option("--split", sa.split, "train or test")->check(CLI::IsMember({"train", "test"}));
  gen->add_option("--rounds", sa.rounds, "Rounds (overrides config)")->check(CLI::PositiveNumber);
  gen->add_option("--appliances", sa.appliances, "Appliance count (overrides config)")->check(CLI::PositiveNumber);
  gen->add_option("--dwell", sa.dwell, "Cycles per state (overrides config)")->check(CLI::PositiveNumber);

  SimulateArgs si;
  auto* simc = app.add_subcommand("simulate", "Render a schedule into an HWK1 trace");
  simc->add_option("--split", si.split, "train or test")->check(CLI::IsMember({"train", "test"}));
  simc->add_option("--schedule", si.schedule_path, "Schedule file");
  simc->add_flag("--keep-individual", si.keep_individual, "Store per-appliance currents");
  simc->add_option("--cycles", si.cycles, "Trace length (0: schedule horizon)");

  PrepareArgs pa;
  auto* prep = app.add_subcommand("prepare", "Build training samples from a labelled trace");
  prep->add_option("--trace", pa.trace_path, "Training trace");
  prep->add_flag("--imbalanced", pa.imbalanced, "Resample training events with skewed appliance weights");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the classifier and calibrate vote thresholds");
  train->add_option("--samples", ta.samples_path, "Training-sample file");
  train->add_option("--trace", ta.trace_path, "Training trace used for threshold calibration");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Stream a trace through the model");
  infer->add_option("--model", ia.model_path, "Model file");
  infer->add_option("--trace", ia.trace_path, "Trace to stream");

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "Score detections against trace labels");
  evalc->add_option("--detections", ea.detections_path, "Detections file");
  evalc->add_option("--trace", ea.trace_path, "Labelled trace");

  SyncArgs ya;
  auto* syncc = app.add_subcommand("sync-sim", "Monte-Carlo synchronization error of both strategies");
  syncc->add_option("--sync-config", ya.sync_config_path, "Sync config JSON");
  syncc->add_option("--trials", ya.trials, "Trials (overrides config)")->check(CLI::PositiveNumber);
  syncc->add_flag("--no-noise", ya.no_noise, "Noise-free, perfectly aligned clocks");

  AblateArgs aa;
  auto* abl = app.add_subcommand("ablate", "Differential-interval and balance ablations");
  abl->add_option("--kind", aa.kind, "all, diff-interval or balance")
      ->check(CLI::IsMember({"all", "diff-interval", "balance"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorKind::Parameter);
  }

  try {
    if (*init) cmd_init(g);
    else if (*gen) cmd_gen_schedule(g, sa);
    else if (*simc) cmd_simulate(g, si);
    else if (*prep) cmd_prepare(g, pa);
    else if (*train) cmd_train(g, ta);
    else if (*infer) cmd_infer(g, ia);
    else if (*evalc) cmd_eval(g, ea);
    else if (*syncc) cmd_sync_sim(g, ya);
    else if (*abl) cmd_ablate(g, aa);
  } catch (const Error& e) {
    std::fprintf(stderr, "hawk: %s\n", e.what());
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "hawk: %s\n", e.what());
    return static_cast<int>(ErrorKind::Parameter);
  }
  return 0;
}
