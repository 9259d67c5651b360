#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "hawk/eval.hpp"
#include "hawk/model.hpp"
#include "hawk/pipeline.hpp"
#include "hawk/schedule.hpp"
#include "hawk/simulate.hpp"

namespace hawk::experiment {

/// Everything a recognition run depends on. Desk-scale defaults: one
/// 18-appliance round for training and one for testing.
struct ExperimentConfig {
  /// Empty: built-in catalog.
  std::string catalog_path;
  sim::GridSpec grid;
  schedule::ScheduleParams train_schedule{.rounds = 1, .dwell_cycles = 110, .rng_seed = 11};
  schedule::ScheduleParams test_schedule{.rounds = 1, .dwell_cycles = 110, .rng_seed = 23};
  std::uint64_t train_sim_seed = 101;
  std::uint64_t test_sim_seed = 202;
  pipeline::PrepareConfig prepare{.n_side = 8, .idle_per_event = 30, .seed = 5};
  model::GbdtConfig model{.n_trees = 40, .max_depth = 5, .learning_rate = 0.3};
  int tolerance_cycles = eval::kDefaultToleranceCycles;
  /// Imbalanced variant: appliance weights fall geometrically to this ratio.
  double imbalance_min_ratio = 0.2;
  std::uint64_t imbalance_seed = 7;
  std::vector<int> ablation_intervals{10, 20, 30, 40, 50};

  /// Re-seeds every random stage from one base seed.
  void reseed(std::uint64_t seed);
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

void write_experiment_config(std::ostream& os, const ExperimentConfig& config);
ExperimentConfig read_experiment_config(std::istream& is);
void save_experiment_config(const std::filesystem::path& path, const ExperimentConfig& config);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Schedules and traces shared by every variant of one experiment.
struct ExperimentData {
  std::vector<sim::ApplianceSpec> catalog;
  schedule::EventSchedule train_schedule;
  schedule::EventSchedule test_schedule;
  sim::Trace train_trace;
  sim::Trace test_trace;
};

std::vector<sim::ApplianceSpec> resolve_catalog(const ExperimentConfig& config);
ExperimentData build_data(const ExperimentConfig& config);

/// Per-appliance weights from 1 down to min_ratio (geometric), in a seeded order.
std::map<int, double> imbalance_weights(int n_appliances, double min_ratio, std::uint64_t seed);

struct RecognitionResult {
  eval::MetricReport metrics;  // event metrics on the test trace
  double state_f1 = 0.0;
  double cycle_accuracy = 0.0;  // per-cycle prediction accuracy on the test trace
  double mean_latency_ms = 0.0;
  double max_latency_ms = 0.0;
  pipeline::PrepareReport prepare;
  std::size_t training_samples = 0;
  model::EventModel model;
};

/// Trains the classifier on `set` and calibrates vote thresholds on the
/// training trace.
model::EventModel train_event_model(const pipeline::TrainingSet& set, const sim::Trace& train_trace,
                                    const std::vector<sim::ApplianceSpec>& catalog, const ExperimentConfig& config);

/// Event metrics of `reports` against the trace labels, with balance and
/// diversity of the trace and the state F1 under extra["state_f1"].
eval::MetricReport evaluate_reports(const sim::Trace& trace, std::span<const model::EventReport> reports,
                                    int tolerance_cycles);

/// Prepare, train, calibrate on the training trace, then stream the test
/// trace. `imbalance` (appliance -> weight) resamples the training events.
RecognitionResult run_recognition(const ExperimentConfig& config, const ExperimentData& data,
                                  const std::map<int, double>* imbalance = nullptr);

/// Per-cycle reference labels: the class whose differential a cycle carries
/// when exactly one switch happened in (i - D, i], else IDLE.
std::vector<int> reference_cycle_labels(const sim::Trace& trace, int diff_interval);

struct AblationRow {
  std::string variant;
  int diff_interval = 0;
  double average_f1 = 0.0;
  double weighted_f1 = 0.0;
  double state_f1 = 0.0;
};

std::vector<AblationRow> ablate_diff_interval(const ExperimentConfig& config, const ExperimentData& data);
/// Rows "balanced" and "imbalanced" at the configured D.
std::vector<AblationRow> ablate_balance(const ExperimentConfig& config, const ExperimentData& data);
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace hawk::experiment
