#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hawk/schedule.hpp"
#include "hawk/simulate.hpp"

namespace hawk::eval {

inline constexpr int kDefaultToleranceCycles = 50;

/// A (cycle, class) pair on either side of the matching.
struct TimedClass {
  std::uint64_t cycle = 0;
  int class_label = 0;
  bool operator==(const TimedClass&) const = default;
};

enum class Outcome : std::uint8_t { TP, FP, FN };

struct EventMatch {
  std::optional<TimedClass> truth;
  std::optional<TimedClass> predicted;
  Outcome outcome = Outcome::FN;
};

/// Greedy one-to-one matching: candidate pairs of equal class within the
/// tolerance are taken in order of increasing cycle distance (ties: earlier
/// truth, then earlier prediction).
std::vector<EventMatch> match_events(std::span<const TimedClass> truth, std::span<const TimedClass> predicted,
                                     int tolerance_cycles = kDefaultToleranceCycles);

struct ClassMetrics {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int support = 0;  // tp + fn
};

struct MetricReport {
  std::map<int, ClassMetrics> per_class;
  double average_f1 = 0.0;
  double weighted_f1 = 0.0;
  double event_br = 0.0;
  double state_br = 0.0;
  double avg_on_off_br = 0.0;
  std::int64_t unique_states = 0;
  double diversity_density = 0.0;
  /// Free-form scalar extras (state F1, latency, ...), serialized in key order.
  std::map<std::string, double> extra;
};

/// Per-class precision/recall/F1 (0/0 = 0); macro average over classes with
/// support, support-weighted average. Only the F1 fields are filled.
MetricReport f1_scores(std::span<const EventMatch> matches);

/// min/max of the values; 0 when the maximum is 0 or the input is empty.
double min_max_ratio(const std::vector<double>& values);

struct BalanceRatios {
  double event_br = 0.0;
  double state_br = 0.0;
  double avg_on_off_br = 0.0;
};

/// `on_state_cycles` maps appliance -> ON-cycle count. Appliances in the map
/// or in `events` take part; missing counts are 0. avg_on_off_br compares each
/// appliance's ON-event and OFF-event counts.
BalanceRatios balance_ratios(std::span<const schedule::Event> events, const std::map<int, double>& on_state_cycles);

struct Diversity {
  std::int64_t unique_states = 0;
  double diversity_density = 0.0;  // states per hour
};

Diversity diversity(std::span<const schedule::StateMask> per_cycle_labels, double mains_hz);
Diversity diversity(const sim::Trace& trace);
Diversity diversity(const schedule::EventSchedule& schedule, double mains_hz);

/// Per-appliance ON-cycle counts of a trace's labels (every appliance listed).
std::map<int, double> on_cycle_counts(const sim::Trace& trace);

enum class SinrMode : std::uint8_t { Raw, Diff };

inline constexpr double kSinrCap = 1e12;

struct SinrOptions {
  int diff_interval = 30;
  /// Cycles after the switch excluded from the diff signature (t).
  int settle_cycles = -1;  // -1: take it from the appliance spec
  /// Cycles used on each side of a switch for RAW.
  int raw_window = 30;
};

/// Needs per-appliance currents. RAW: target power over other appliances plus
/// noise power, averaged over the cycles next to the target's switch-on
/// events. DIFF: the same ratio on D-cycle differentials over the target's
/// (D - t) signature cycles. Power is V_rms times current RMS. Returns
/// kSinrCap when the denominator vanishes.
double estimate_sinr(const sim::Trace& trace, int appliance, SinrMode mode, const SinrOptions& options = {});

/// Detected event as emitted by the voting stage.
struct DetectedEvent {
  std::uint64_t cycle = 0;        // report cycle
  std::uint64_t onset_cycle = 0;  // earliest supporting vote in the window
  int class_label = 0;
};

struct StateResult {
  std::vector<schedule::StateMask> estimate;
  std::vector<double> per_appliance_f1;
  double average_f1 = 0.0;
};

/// Replays detections onto per-appliance ON/OFF state, starting from the
/// trace's first label. An ON detection sets the appliance ON from its onset
/// cycle, an OFF detection sets it OFF. Per-cycle F1 of the ON state, averaged
/// over appliances that are ON in the labels or the estimate at least once.
StateResult state_identify(const sim::Trace& trace, std::span<const DetectedEvent> detections);

/// Truth events of a trace as (cycle, class) pairs.
std::vector<TimedClass> truth_classes(const sim::Trace& trace);

// MetricReport JSON and per-class CSV.
void write_report_json(std::ostream& os, const MetricReport& report);
MetricReport read_report_json(std::istream& is);
void write_report_csv(std::ostream& os, const MetricReport& report);
MetricReport read_report_csv(std::istream& is);
void save_report(const std::filesystem::path& json_path, const MetricReport& report);
MetricReport load_report(const std::filesystem::path& json_path);

}  // namespace hawk::eval
