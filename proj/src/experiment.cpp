#include "hawk/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>

#include "hawk/classes.hpp"
#include "hawk/error.hpp"
#include "hawk/rng.hpp"
#include "json.hpp"

namespace hawk::experiment {

void ExperimentConfig::reseed(std::uint64_t seed) {
  train_schedule.rng_seed = derive_seed(seed, {1});
  test_schedule.rng_seed = derive_seed(seed, {2});
  train_sim_seed = derive_seed(seed, {3});
  test_sim_seed = derive_seed(seed, {4});
  prepare.seed = derive_seed(seed, {5});
  model.seed = derive_seed(seed, {6});
  imbalance_seed = derive_seed(seed, {7});
}

void ExperimentConfig::validate() const {
  grid.validate();
  train_schedule.validate();
  test_schedule.validate();
  if (train_schedule.n_appliances != test_schedule.n_appliances) {
    throw ParameterError("experiment: train and test schedules differ in appliance count");
  }
  model.validate();
  if (prepare.diff_interval < 1 || prepare.n_side < 1 || prepare.guard < 0 || prepare.idle_per_event < 0) {
    throw ParameterError("experiment: bad prepare parameters");
  }
  if (!(prepare.threshold_fraction > 0.0) || !(prepare.min_similarity >= -1.0 && prepare.min_similarity <= 1.0)) {
    throw ParameterError("experiment: bad locator threshold or similarity");
  }
  if (tolerance_cycles < 0) throw ParameterError("experiment: negative tolerance");
  if (!(imbalance_min_ratio > 0.0 && imbalance_min_ratio <= 1.0)) {
    throw ParameterError("experiment: imbalance_min_ratio must be in (0, 1]");
  }
  for (int d : ablation_intervals) {
    if (d < 1) throw ParameterError("experiment: ablation intervals must be positive");
  }
  if (!catalog_path.empty() && !std::filesystem::exists(catalog_path)) {
    throw ParameterError("experiment: catalog file " + catalog_path + " does not exist");
  }
}

namespace {

using ojson = nlohmann::ordered_json;

ojson schedule_json(const schedule::ScheduleParams& p) {
  return ojson{{"n_appliances", p.n_appliances},
               {"group_size", p.group_size},
               {"groups_active_per_round", p.groups_active_per_round},
               {"rounds", p.rounds},
               {"dwell_cycles", p.dwell_cycles},
               {"seed", p.rng_seed}};
}

schedule::ScheduleParams schedule_from(const nlohmann::json& j) {
  schedule::ScheduleParams p;
  p.n_appliances = j.at("n_appliances").get<int>();
  p.group_size = j.at("group_size").get<int>();
  p.groups_active_per_round = j.at("groups_active_per_round").get<int>();
  p.rounds = j.at("rounds").get<int>();
  p.dwell_cycles = j.at("dwell_cycles").get<int>();
  p.rng_seed = j.at("seed").get<std::uint64_t>();
  return p;
}

}  // namespace

void write_experiment_config(std::ostream& os, const ExperimentConfig& c) {
  ojson j;
  j["format"] = "hawk-experiment";
  j["version"] = 1;
  j["catalog_path"] = c.catalog_path;
  j["grid"] = ojson{{"mains_hz", c.grid.mains_hz},
                    {"sample_rate_hz", c.grid.sample_rate_hz},
                    {"voltage_rms_v", c.grid.voltage_rms_v},
                    {"voltage_jitter_rel", c.grid.voltage_jitter_rel},
                    {"noise_mean_a", c.grid.noise_mean_a},
                    {"noise_std_a", c.grid.noise_std_a}};
  j["train_schedule"] = schedule_json(c.train_schedule);
  j["test_schedule"] = schedule_json(c.test_schedule);
  j["train_sim_seed"] = c.train_sim_seed;
  j["test_sim_seed"] = c.test_sim_seed;
  const auto& p = c.prepare;
  j["prepare"] = ojson{{"diff_interval", p.diff_interval},
                       {"n_side", p.n_side},
                       {"guard", p.guard},
                       {"threshold_fraction", p.threshold_fraction},
                       {"min_similarity", p.min_similarity},
                       {"idle_per_event", p.idle_per_event},
                       {"seed", p.seed},
                       {"locator",
                        ojson{{"rms_window", p.locator.rms_window},
                              {"drop_top", p.locator.drop_top},
                              {"drop_bottom", p.locator.drop_bottom},
                              {"search_radius", p.locator.search_radius}}}};
  const auto& m = c.model;
  j["model"] = ojson{{"n_trees", m.n_trees},
                     {"max_depth", m.max_depth},
                     {"learning_rate", m.learning_rate},
                     {"l2_lambda", m.l2_lambda},
                     {"min_child_weight", m.min_child_weight},
                     {"min_split_gain", m.min_split_gain},
                     {"subsample", m.subsample},
                     {"seed", m.seed}};
  j["tolerance_cycles"] = c.tolerance_cycles;
  j["imbalance_min_ratio"] = c.imbalance_min_ratio;
  j["imbalance_seed"] = c.imbalance_seed;
  j["ablation_intervals"] = c.ablation_intervals;
  os << j.dump(2) << '\n';
}

ExperimentConfig read_experiment_config(std::istream& is) {
  ExperimentConfig c;
  try {
    const auto j = nlohmann::json::parse(is);
    if (j.at("format").get<std::string>() != "hawk-experiment") throw FormatError("experiment config: wrong format tag");
    if (j.at("version").get<int>() != 1) throw FormatError("experiment config: unsupported version");
    c.catalog_path = j.at("catalog_path").get<std::string>();
    const auto& g = j.at("grid");
    c.grid.mains_hz = g.at("mains_hz").get<double>();
    c.grid.sample_rate_hz = g.at("sample_rate_hz").get<double>();
    c.grid.voltage_rms_v = g.at("voltage_rms_v").get<double>();
    c.grid.voltage_jitter_rel = g.at("voltage_jitter_rel").get<double>();
    c.grid.noise_mean_a = g.at("noise_mean_a").get<double>();
    c.grid.noise_std_a = g.at("noise_std_a").get<double>();
    c.train_schedule = schedule_from(j.at("train_schedule"));
    c.test_schedule = schedule_from(j.at("test_schedule"));
    c.train_sim_seed = j.at("train_sim_seed").get<std::uint64_t>();
    c.test_sim_seed = j.at("test_sim_seed").get<std::uint64_t>();
    const auto& p = j.at("prepare");
    c.prepare.diff_interval = p.at("diff_interval").get<int>();
    c.prepare.n_side = p.at("n_side").get<int>();
    c.prepare.guard = p.at("guard").get<int>();
    c.prepare.threshold_fraction = p.at("threshold_fraction").get<double>();
    c.prepare.min_similarity = p.at("min_similarity").get<double>();
    c.prepare.idle_per_event = p.at("idle_per_event").get<int>();
    c.prepare.seed = p.at("seed").get<std::uint64_t>();
    const auto& l = p.at("locator");
    c.prepare.locator.rms_window = l.at("rms_window").get<int>();
    c.prepare.locator.drop_top = l.at("drop_top").get<int>();
    c.prepare.locator.drop_bottom = l.at("drop_bottom").get<int>();
    c.prepare.locator.search_radius = l.at("search_radius").get<int>();
    const auto& m = j.at("model");
    c.model.n_trees = m.at("n_trees").get<int>();
    c.model.max_depth = m.at("max_depth").get<int>();
    c.model.learning_rate = m.at("learning_rate").get<double>();
    c.model.l2_lambda = m.at("l2_lambda").get<double>();
    c.model.min_child_weight = m.at("min_child_weight").get<double>();
    c.model.min_split_gain = m.at("min_split_gain").get<double>();
    c.model.subsample = m.at("subsample").get<double>();
    c.model.seed = m.at("seed").get<std::uint64_t>();
    c.tolerance_cycles = j.at("tolerance_cycles").get<int>();
    c.imbalance_min_ratio = j.at("imbalance_min_ratio").get<double>();
    c.imbalance_seed = j.at("imbalance_seed").get<std::uint64_t>();
    c.ablation_intervals = j.at("ablation_intervals").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("experiment config: ") + ex.what());
  }
  return c;
}

void save_experiment_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParameterError("cannot write " + path.string());
  write_experiment_config(os, config);
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParameterError("cannot open " + path.string());
  return read_experiment_config(is);
}

std::vector<sim::ApplianceSpec> resolve_catalog(const ExperimentConfig& config) {
  auto catalog = config.catalog_path.empty() ? sim::default_catalog(config.grid) : sim::load_catalog(config.catalog_path);
  if (static_cast<int>(catalog.size()) < config.train_schedule.n_appliances) {
    throw ParameterError("experiment: catalog has fewer appliances than the schedule");
  }
  catalog.resize(static_cast<std::size_t>(config.train_schedule.n_appliances));
  return catalog;
}

ExperimentData build_data(const ExperimentConfig& config) {
  config.validate();
  ExperimentData d;
  d.catalog = resolve_catalog(config);
  d.train_schedule = schedule::generate_schedule(config.train_schedule);
  d.test_schedule = schedule::generate_schedule(config.test_schedule);
  d.train_trace = sim::execute_schedule(d.train_schedule, d.catalog, config.grid, config.train_sim_seed);
  d.test_trace = sim::execute_schedule(d.test_schedule, d.catalog, config.grid, config.test_sim_seed);
  return d;
}

std::map<int, double> imbalance_weights(int n_appliances, double min_ratio, std::uint64_t seed) {
  if (n_appliances < 1) throw ParameterError("imbalance_weights: no appliances");
  if (!(min_ratio > 0.0 && min_ratio <= 1.0)) throw ParameterError("imbalance_weights: min_ratio must be in (0, 1]");
  std::vector<int> order(static_cast<std::size_t>(n_appliances));
  for (int a = 0; a < n_appliances; ++a) order[a] = a;
  Rng rng = make_rng(seed, {0x1B});
  shuffle(order, rng);
  std::map<int, double> w;
  for (int r = 0; r < n_appliances; ++r) {
    const double frac = n_appliances > 1 ? static_cast<double>(r) / (n_appliances - 1) : 0.0;
    w[order[r]] = std::pow(min_ratio, frac);
  }
  return w;
}

std::vector<int> reference_cycle_labels(const sim::Trace& trace, int diff_interval) {
  const auto n = trace.frames.size();
  std::vector<int> out(n, kIdleClass);
  if (n == 0) return out;
  const std::uint64_t first = trace.frames.front().cycle_id;
  const auto events = sim::label_events(trace);
  std::vector<int> switches(n, 0);
  std::vector<int> cls(n, kIdleClass);
  for (const auto& e : events) {
    const auto i = static_cast<std::size_t>(e.time_cycle - first);
    ++switches[i];
    cls[i] = event_class(e.appliance_id, e.action);
  }
  int in_window = 0;
  int last_class = kIdleClass;
  for (std::size_t i = 0; i < n; ++i) {
    in_window += switches[i];
    if (switches[i] > 0) last_class = cls[i];
    if (i >= static_cast<std::size_t>(diff_interval)) in_window -= switches[i - diff_interval];
    out[i] = in_window == 1 ? last_class : kIdleClass;
  }
  return out;
}

model::EventModel train_event_model(const pipeline::TrainingSet& set, const sim::Trace& train_trace,
                                    const std::vector<sim::ApplianceSpec>& catalog, const ExperimentConfig& config) {
  const int d = config.prepare.diff_interval;
  model::EventModel m;
  m.classifier = model::GbdtClassifier::train(set.samples, set.n_classes, config.model);
  m.thresholds = model::calibrate_thresholds(m.classifier, train_trace, d, config.tolerance_cycles).thresholds;
  m.diff_interval = d;
  m.mains_hz = train_trace.grid.mains_hz;
  m.sample_rate_hz = train_trace.grid.sample_rate_hz;
  for (int a = 0; a < train_trace.n_appliances && a < static_cast<int>(catalog.size()); ++a) {
    m.appliance_names.push_back(catalog[a].name);
  }
  return m;
}

eval::MetricReport evaluate_reports(const sim::Trace& trace, std::span<const model::EventReport> reports,
                                    int tolerance_cycles) {
  const auto truth = eval::truth_classes(trace);
  const auto pred = model::report_classes(reports);
  auto m = eval::f1_scores(eval::match_events(truth, pred, tolerance_cycles));
  const auto br = eval::balance_ratios(sim::label_events(trace), eval::on_cycle_counts(trace));
  m.event_br = br.event_br;
  m.state_br = br.state_br;
  m.avg_on_off_br = br.avg_on_off_br;
  const auto div = eval::diversity(trace);
  m.unique_states = div.unique_states;
  m.diversity_density = div.diversity_density;
  const auto dets = model::detections(reports);
  m.extra["state_f1"] = eval::state_identify(trace, dets).average_f1;
  return m;
}

RecognitionResult run_recognition(const ExperimentConfig& config, const ExperimentData& data,
                                  const std::map<int, double>* imbalance) {
  const int d = config.prepare.diff_interval;
  std::vector<schedule::Event> selection;
  if (imbalance) selection = sim::resample_imbalanced(sim::label_events(data.train_trace), *imbalance, config.imbalance_seed);
  const auto set = pipeline::prepare_training_set(data.train_trace, data.catalog, config.prepare,
                                                  imbalance ? &selection : nullptr);
  if (set.samples.empty()) throw DegenerateInputError("experiment: no training samples survived preparation");

  RecognitionResult r;
  r.prepare = set.report;
  r.training_samples = set.samples.size();
  r.model = train_event_model(set, data.train_trace, data.catalog, config);

  const auto inf = model::run_inference(data.test_trace, r.model);
  r.metrics = evaluate_reports(data.test_trace, inf.reports, config.tolerance_cycles);
  r.state_f1 = r.metrics.extra.at("state_f1");
  const auto ref = reference_cycle_labels(data.test_trace, d);
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t i = static_cast<std::size_t>(d); i < ref.size(); ++i) {
    correct += inf.predictions.labels[i] == ref[i];
    ++total;
  }
  r.cycle_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  r.metrics.extra["cycle_accuracy"] = r.cycle_accuracy;
  r.mean_latency_ms = inf.mean_latency_ms;
  r.max_latency_ms = inf.max_latency_ms;
  return r;
}

std::vector<AblationRow> ablate_diff_interval(const ExperimentConfig& config, const ExperimentData& data) {
  std::vector<AblationRow> rows;
  for (int d : config.ablation_intervals) {
    auto c = config;
    c.prepare.diff_interval = d;
    const auto r = run_recognition(c, data);
    rows.push_back({"diff_interval", d, r.metrics.average_f1, r.metrics.weighted_f1, r.state_f1});
  }
  return rows;
}

std::vector<AblationRow> ablate_balance(const ExperimentConfig& config, const ExperimentData& data) {
  const int d = config.prepare.diff_interval;
  const auto balanced = run_recognition(config, data);
  const auto weights = imbalance_weights(config.train_schedule.n_appliances, config.imbalance_min_ratio,
                                         config.imbalance_seed);
  const auto skewed = run_recognition(config, data, &weights);
  return {{"balanced", d, balanced.metrics.average_f1, balanced.metrics.weighted_f1, balanced.state_f1},
          {"imbalanced", d, skewed.metrics.average_f1, skewed.metrics.weighted_f1, skewed.state_f1}};
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  auto num = [](double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  };
  os << "variant,diff_interval,average_f1,weighted_f1,state_f1\n";
  for (const auto& r : rows) {
    os << r.variant << ',' << r.diff_interval << ',' << num(r.average_f1) << ',' << num(r.weighted_f1) << ','
       << num(r.state_f1) << '\n';
  }
}

}  // namespace hawk::experiment
