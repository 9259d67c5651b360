#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "hawk/rng.hpp"

namespace hawk::syncsim {

struct TimestampJitter {
  double std_us = 0.0;
  double outlier_prob = 0.0;
  double outlier_shift_us = 0.0;
  bool operator==(const TimestampJitter&) const = default;
};

/// Sampling clock of one metering node. The node samples at true times
/// offset_us + j / (fs * (1 + drift_ppm 1e-6)); its beacon-synchronised
/// timestamps carry `timestamp_jitter`.
struct NodeClock {
  double offset_us = 0.0;
  double drift_ppm = 0.0;
  TimestampJitter timestamp_jitter;

  void validate() const;
  bool operator==(const NodeClock&) const = default;
};

/// Position of an event as (voltage cycle, samples past that cycle's upward
/// zero crossing).
struct SptTimestamp {
  std::uint64_t cycle_id = 0;
  double phase_index = 0.0;
  /// Measured samples per voltage cycle; phase_index < cycle_len.
  double cycle_len = 0.0;
};

struct SyncTrial {
  double true_event_time_us = 0.0;
  double node_a_estimate_us = 0.0;
  double node_b_estimate_us = 0.0;
  double abs_error_us = 0.0;
  /// Cycle ids disagreed (beacon error beyond half a cycle); excluded from statistics.
  bool flagged = false;
};

inline constexpr int kDefaultFitHalfWidth = 160;

/// Upward zero crossings as fractional sample indices. A crossing is the
/// first non-positive to positive step after the signal has dropped below
/// -10% of its peak (the first sample arms the detector when it is <= 0).
/// With fit_half_width > 0 and at least two crossings, each position is
/// refined by a least-squares sinusoid (period = mean crossing spacing) over
/// the samples within fit_half_width of it; otherwise it is the linear
/// interpolation between the bracketing samples. Throws
/// DegenerateInputError when the stream has no crossing.
std::vector<double> detect_zero_crossings(std::span<const double> voltage, int fit_half_width = kDefaultFitHalfWidth);

struct SyncConfig {
  double mains_hz = 50.0;
  double sample_rate_hz = 16000.0;
  /// Per-sample Gaussian voltage noise relative to the peak voltage.
  double voltage_noise_rel = 0.0005;
  double surge_amplitude_a = 5.0;
  double current_noise_a = 0.02;
  /// Extra propagation delay of the surge current to node B.
  double cable_delay_us = 0.0;
  /// Voltage cycles captured before the event; their crossings fix the phase.
  int window_cycles = 4;
  int fit_half_width = kDefaultFitHalfWidth;
  /// Coarse beacon clock used to number cycles.
  double beacon_error_std_us = 2000.0;
  double beacon_fault_prob = 0.0;
  double beacon_fault_us = 15000.0;
  /// Events fall at uniform times within the first horizon_cycles cycles.
  std::uint64_t horizon_cycles = 1'000'000;
  NodeClock node_a{0.0, 20.0, {10.0, 0.0022, 1020.0}};
  NodeClock node_b{137.3, -35.0, {10.0, 0.0022, 1020.0}};
  int trials = 2000;
  std::uint64_t seed = 1;

  double sample_interval_us() const { return 1e6 / sample_rate_hz; }
  double cycle_us() const { return 1e6 / mains_hz; }
  void validate() const;
  /// No noise, no jitter, both nodes on node_a's clock.
  SyncConfig noiseless() const;
  bool operator==(const SyncConfig&) const = default;
};

void write_sync_config(std::ostream& os, const SyncConfig& config);
SyncConfig read_sync_config(std::istream& is);
SyncConfig load_sync_config(const std::filesystem::path& path);

/// What one node records around a surge.
struct NodeCapture {
  std::vector<double> voltage;
  std::vector<double> current;
  /// True time of sample 0 and the true sampling interval.
  double first_sample_us = 0.0;
  double sample_interval_us = 0.0;
  /// Error of the node's coarse beacon clock.
  double beacon_error_us = 0.0;
  /// Error of the node's fine beacon timestamp (baseline strategy only).
  double timestamp_error_us = 0.0;
};

NodeCapture capture_event(const NodeClock& clock, const SyncConfig& config, double event_time_us, double delay_us,
                          Rng& rng);

/// Index of the first current sample at or above `threshold`; nullopt if none.
std::optional<std::size_t> detect_surge(std::span<const double> current, double threshold);

/// SPT timestamp of the capture's surge; nullopt when the beacon error makes
/// the cycle id unreliable or no surge/crossing is found.
std::optional<SptTimestamp> spt_timestamp(const NodeCapture& capture, const SyncConfig& config);

/// Common-timeline time of an SPT timestamp: (cycle_id + phase / cycle_len) cycles.
double spt_timeline_us(const SptTimestamp& ts, const SyncConfig& config);

/// Per-event pairwise SPT errors for captures of the same events.
std::vector<SyncTrial> spt_align(std::span<const NodeCapture> node_a, std::span<const NodeCapture> node_b,
                                 std::span<const double> true_event_us, const SyncConfig& config);

/// Beacon-timestamp baseline: each node stamps its surge sample with its
/// clock's timestamp error.
std::vector<SyncTrial> tsf_align(std::span<const NodeCapture> node_a, std::span<const NodeCapture> node_b,
                                 std::span<const double> true_event_us, const SyncConfig& config);

struct SyncRun {
  std::vector<SyncTrial> spt;
  std::vector<SyncTrial> tsf;
  int flagged = 0;
};

/// Paired Monte-Carlo run: both strategies see the same events and captures.
/// Independent of the thread count.
SyncRun run_sync_sim(const SyncConfig& config, int threads = 0);

struct SyncSummary {
  std::vector<double> sorted_errors;
  double mean_us = 0.0;
  double max_us = 0.0;

  std::size_t count() const { return sorted_errors.size(); }
  /// Fraction of errors in [lo_us, hi_us].
  double fraction_within(double lo_us, double hi_us) const;
};

/// Statistics over unflagged trials.
SyncSummary summarize(std::span<const SyncTrial> trials);

/// (error, fraction of trials with error <= it) at each distinct error value.
/// Throws DegenerateInputError without unflagged trials.
std::vector<std::pair<double, double>> error_cdf(std::span<const SyncTrial> trials);
void write_cdf_csv(std::ostream& os, std::span<const std::pair<double, double>> cdf);

}  // namespace hawk::syncsim
