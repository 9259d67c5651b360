#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hawk/schedule.hpp"
#include "hawk/simulate.hpp"

namespace hawk::pipeline {

inline constexpr int kHarmonics = 10;
inline constexpr int kFeatureDim = 3 * kHarmonics;

double cycle_rms(std::span<const double> samples);

/// Mean of `window` after discarding its `drop_top` largest and
/// `drop_bottom` smallest values.
double denoised_rms(std::span<const double> window, int drop_top, int drop_bottom);

/// Sample-wise difference of two phase-aligned cycles D apart.
struct DiffCurrent {
  std::vector<double> samples;
  std::uint64_t cycle_old = 0;
  std::uint64_t cycle_new = 0;
};

/// Last `capacity` aggregate cycles of one stream.
class CycleRing {
 public:
  explicit CycleRing(int capacity = 30);

  int capacity() const { return capacity_; }
  int size() const { return count_; }
  bool full() const { return count_ == capacity_; }

  void push(std::uint64_t cycle_id, std::span<const double> samples);
  std::span<const double> oldest() const;
  std::uint64_t oldest_id() const;
  std::uint64_t head_id() const;
  void clear();

 private:
  int capacity_;
  int start_ = 0;
  int count_ = 0;
  std::vector<std::vector<double>> slots_;
  std::vector<std::uint64_t> ids_;
};

/// new - oldest once the ring holds D cycles, then advances the ring by one.
/// Returns nullopt while warming up.
std::optional<DiffCurrent> ssdiff(CycleRing& ring, std::uint64_t cycle_id, std::span<const double> samples);
std::optional<DiffCurrent> ssdiff(CycleRing& ring, const sim::CycleFrame& frame);

/// (real, imaginary, magnitude) of harmonics 1..10, interleaved per harmonic.
/// Unnormalised DFT over one cycle: X_k = sum_j x_j exp(-2 pi i k j / N).
struct DiffFeatureVector {
  std::array<double, kFeatureDim> values{};

  double real(int k) const { return values[3 * (k - 1)]; }
  double imag(int k) const { return values[3 * (k - 1) + 1]; }
  double magnitude(int k) const { return values[3 * (k - 1) + 2]; }
  std::array<double, kHarmonics> magnitudes() const;
};

/// Precomputed twiddles for one cycle length; reused across a stream.
class HarmonicExtractor {
 public:
  HarmonicExtractor(double mains_hz, double sample_rate_hz);
  int cycle_len() const { return cycle_len_; }
  DiffFeatureVector operator()(std::span<const double> cycle) const;

 private:
  int cycle_len_;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

/// Throws ParameterError when the input does not span exactly one cycle.
DiffFeatureVector harmonic_features(std::span<const double> diff, double mains_hz, double sample_rate_hz);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct TrainingSample {
  DiffFeatureVector features;
  std::uint16_t class_label = 0;
};

struct LocatorParams {
  int rms_window = 3;  // l, cycles (60 ms at 50 Hz)
  int drop_top = 0;    // n
  int drop_bottom = 0; // m
  /// Cycles searched on each side of the label change; 0 in PrepareConfig means 2 * diff_interval.
  int search_radius = 60;
  bool operator==(const LocatorParams&) const = default;
};

struct LocatedEvent {
  std::uint64_t label_cycle = 0;
  std::uint64_t cycle = 0;
  int appliance = 0;
  schedule::Action action = schedule::Action::On;
  int class_label = 0;
};

struct LocateResult {
  std::vector<LocatedEvent> located;
  int dropped = 0;
};

/// Per-cycle RMS of the aggregate current.
std::vector<double> rms_series(const sim::Trace& trace);

/// For each labelled switch, the first cycle within +-search_radius of the
/// label change where the denoised-RMS step between the l cycles before and
/// the l cycles from that cycle on reaches the class threshold.
/// `thresholds` is indexed by class label.
LocateResult locate_obvious_events(const sim::Trace& trace, std::span<const double> thresholds,
                                   const LocatorParams& params);

/// All (after - before) differences between up to n_side stable cycles on
/// each side of `event_cycle`, skipping `margin` cycles next to it and next to
/// any other label change. Fewer than n_side^2 pairs when the stable run is
/// short; `reduced` is set in that case.
std::vector<DiffCurrent> augment_pairs(const sim::Trace& trace, std::uint64_t event_cycle, int n_side, int margin,
                                       bool* reduced = nullptr);

/// Indices of candidates whose harmonic magnitude vector has cosine
/// similarity >= min_similarity with the reference.
std::vector<std::size_t> filter_features(std::span<const DiffFeatureVector> candidates,
                                         const DiffFeatureVector& reference, double min_similarity);
std::vector<DiffCurrent> filter_samples(const std::vector<DiffCurrent>& candidates,
                                        const DiffFeatureVector& reference, double min_similarity,
                                        double mains_hz, double sample_rate_hz);

struct PrepareConfig {
  int diff_interval = 30;
  int n_side = 50;
  int guard = 3;
  LocatorParams locator{.search_radius = 0};
  /// Locator threshold as a fraction of the appliance's steady RMS.
  double threshold_fraction = 0.5;
  double min_similarity = 0.9;
  /// IDLE samples drawn per labelled event.
  int idle_per_event = 100;
  std::uint64_t seed = 1;
  bool operator==(const PrepareConfig&) const = default;
};

struct PrepareReport {
  int events = 0;
  int located = 0;
  int dropped = 0;
  int reduced = 0;
  int filtered_out = 0;
  int empty_after_filter = 0;
  int idle_samples = 0;
};

struct TrainingSet {
  std::vector<TrainingSample> samples;
  PrepareReport report;
  int n_classes = 0;
};

/// Reference signature per appliance: from stored individual currents when
/// the trace has them, otherwise from the catalog's steady waveform.
std::vector<DiffFeatureVector> reference_signatures(const sim::Trace& trace,
                                                    const std::vector<sim::ApplianceSpec>& catalog);

/// Locate, augment and filter every labelled event (or only `selection`,
/// duplicates included, when given), then add IDLE differentials drawn from
/// windows without a label change.
TrainingSet prepare_training_set(const sim::Trace& trace, const std::vector<sim::ApplianceSpec>& catalog,
                                 const PrepareConfig& config,
                                 const std::vector<schedule::Event>* selection = nullptr);

// Training-sample file: records {u16 class_label; f32 features[30]} plus a
// JSON sidecar describing the label space.
void save_training_set(const std::filesystem::path& path, const TrainingSet& set,
                       const std::vector<sim::ApplianceSpec>& catalog);
TrainingSet load_training_set(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace hawk::pipeline
