#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hawk/rng.hpp"
#include "hawk/schedule.hpp"

namespace hawk::sim {

using schedule::StateMask;

enum class TransientShape : std::uint8_t { Surge, Ramp };

struct Harmonic {
  int order = 1;
  double amplitude_a = 0.0;  // peak amperes
  double phase_rad = 0.0;    // relative to the voltage zero crossing

  bool operator==(const Harmonic&) const = default;
};

/// Electrical model of one two-state appliance.
///
/// After a switch-on the appliance optionally spends `boot_cycles` drawing
/// `boot_level` times its steady waveform (multi-component devices such as a
/// smart screen), then `transient_cycles` under the transient envelope, then
/// settles. Switch-off is immediate.
struct ApplianceSpec {
  int id = 0;
  std::string name;
  double rated_power_w = 0.0;
  std::vector<Harmonic> harmonics;
  double power_jitter_rel = 0.0;
  int transient_cycles = 0;
  TransientShape transient_shape = TransientShape::Ramp;
  double surge_peak_multiple = 1.0;
  double surge_decay_per_cycle = 0.5;
  double transient_noise_rel = 0.05;
  int boot_cycles = 0;
  double boot_level = 0.0;
  double off_leakage_a = 0.0;

  /// Cycles from the switch-on until the steady waveform is reached.
  int settle_cycles() const { return boot_cycles + transient_cycles; }
  double fundamental_amplitude() const;
  void validate() const;
  bool operator==(const ApplianceSpec&) const = default;
};

/// Builds harmonics for a load of `power_w` at `v_rms` whose fundamental lags
/// the voltage by `phi_rad` (negative = capacitive). `extra` holds
/// (order, amplitude relative to fundamental, phase) triples.
std::vector<Harmonic> harmonics_for_power(double power_w, double v_rms, double phi_rad,
                                          const std::vector<Harmonic>& extra);

struct GridSpec {
  double mains_hz = 50.0;
  double sample_rate_hz = 16000.0;
  double voltage_rms_v = 220.0;
  double voltage_jitter_rel = 0.0;
  double noise_mean_a = 0.0;
  double noise_std_a = 0.01;

  int cycle_len() const;
  void validate() const;
  bool operator==(const GridSpec&) const = default;
};

struct ApplianceState {
  enum class Kind : std::uint8_t { Off, On, Boot, Transient };
  Kind kind = Kind::Off;
  int cycles_since_switch = 0;  // Boot / Transient only

  static ApplianceState off() { return {Kind::Off, 0}; }
  static ApplianceState on() { return {Kind::On, 0}; }
  static ApplianceState transient(int k) { return {Kind::Transient, k}; }
  static ApplianceState boot(int k) { return {Kind::Boot, k}; }
};

/// One cycle of an appliance's current, starting at the voltage zero crossing.
std::vector<double> synth_appliance_cycle(const ApplianceSpec& spec, const GridSpec& grid,
                                          ApplianceState state, Rng& rng);

/// Steady ON waveform without jitter; the reference signature of a spec.
std::vector<double> steady_waveform(const ApplianceSpec& spec, const GridSpec& grid);

struct CycleFrame {
  std::uint64_t cycle_id = 0;
  std::vector<double> voltage;
  std::vector<double> aggregate;
  StateMask label = 0;
  /// n_appliances * cycle_len samples, appliance-major; empty when not kept.
  std::vector<double> individual;
  /// Per-appliance cycle RMS; in-memory only (not part of the trace file).
  std::vector<double> individual_rms;

  std::span<const double> appliance_current(int appliance, int cycle_len) const {
    return std::span<const double>(individual).subspan(static_cast<std::size_t>(appliance) * cycle_len,
                                                       static_cast<std::size_t>(cycle_len));
  }
};

struct Trace {
  GridSpec grid;
  std::vector<ApplianceSpec> appliances;
  int n_appliances = 0;
  bool has_individual = false;
  std::vector<CycleFrame> frames;

  int cycle_len() const { return grid.cycle_len(); }
};

struct ExecuteOptions {
  bool keep_individual = false;
  bool keep_individual_rms = true;
  /// 0 = schedule horizon (last event + one dwell).
  std::uint64_t n_cycles = 0;
  /// 0 = hardware concurrency; HAWK_THREADS caps the count.
  int threads = 0;
};

/// Renders a schedule into a labeled trace. Output is independent of the
/// thread count.
Trace execute_schedule(const schedule::EventSchedule& schedule, const std::vector<ApplianceSpec>& specs,
                       const GridSpec& grid, std::uint64_t seed, const ExecuteOptions& options = {});

/// Per-cycle state timeline of one appliance (what execute_schedule renders).
std::vector<ApplianceState> state_timeline(const schedule::EventSchedule& schedule, const ApplianceSpec& spec,
                                           int appliance, std::uint64_t n_cycles);

/// Redraws the event multiset so appliance a's share becomes proportional to
/// weight[a] * (its current count); the total stays the same. Events of an
/// appliance are drawn without replacement while the pool lasts.
std::vector<schedule::Event> resample_imbalanced(const std::vector<schedule::Event>& events,
                                                 const std::map<int, double>& weights, std::uint64_t seed);

/// Ground-truth events recovered from label transitions.
std::vector<schedule::Event> label_events(const Trace& trace);

// Default 18-appliance catalog (synthetic values).
std::vector<ApplianceSpec> default_catalog(const GridSpec& grid = {});

void write_catalog(std::ostream& os, const std::vector<ApplianceSpec>& specs);
std::vector<ApplianceSpec> read_catalog(std::istream& is);
void save_catalog(const std::filesystem::path& path, const std::vector<ApplianceSpec>& specs);
std::vector<ApplianceSpec> load_catalog(const std::filesystem::path& path);

// HWK1 binary trace file.
inline constexpr std::uint32_t kTraceVersion = 1;
void write_trace(std::ostream& os, const Trace& trace);
/// Mains frequency is not stored; it is recovered as sample_rate / cycle_len.
Trace read_trace(std::istream& is);
void save_trace(const std::filesystem::path& path, const Trace& trace);
Trace load_trace(const std::filesystem::path& path);

/// Largest |aggregate - sum(individual) - noise_mean| over the trace; 0 when
/// individual currents are absent.
double kirchhoff_residual(const Trace& trace);

/// Worker count: `requested` when positive, else the hardware concurrency;
/// HAWK_THREADS, when set, caps either.
int resolve_threads(int requested);

}  // namespace hawk::sim
