#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace hawk::schedule {

/// Bit i set iff appliance i is ON. Widths up to 32 appliances.
using StateMask = std::uint32_t;

inline constexpr int kMaxAppliances = 32;

/// A cyclic Gray code over n_bits: every pattern exactly once, cyclic
/// neighbours differ in one bit.
struct GrayCodeSequence {
  int n_bits = 0;
  std::vector<StateMask> codewords;

  /// transitions()[i] is the bit flipped between codewords[i] and
  /// codewords[i + 1], wrapping around at the end.
  std::vector<int> transitions() const;
  std::vector<int> transition_counts() const;
};

/// Balanced cyclic Gray code built recursively from the 2-bit code, two bits
/// at a time. Per-bit flip counts differ by at most 2 and are equal for
/// n_bits = 2, 4, 8 and 16.
/// Throws ParameterError unless n_bits is even and in [2, 16].
GrayCodeSequence balanced_gray_code(int n_bits);

/// Reflected binary Gray code; used for odd-width remainder groups where no
/// balanced construction applies.
GrayCodeSequence reflected_gray_code(int n_bits);

enum class Action : std::uint8_t { On, Off };

struct Event {
  std::uint64_t time_cycle = 0;
  int appliance_id = 0;
  Action action = Action::On;

  bool operator==(const Event&) const = default;
};

struct ScheduleParams {
  int n_appliances = 18;
  int group_size = 6;
  int groups_active_per_round = 3;
  int rounds = 30;
  int dwell_cycles = 1000;  // 20 s at 50 Hz
  std::uint64_t rng_seed = 1;

  void validate() const;
  bool operator==(const ScheduleParams&) const = default;
};

struct EventSchedule {
  int n_appliances = 0;
  int dwell_cycles = 0;
  ScheduleParams params;
  std::vector<Event> events;

  /// One dwell slot past the last event, i.e. the cycle count a trace needs
  /// to hold every commanded state for a full dwell.
  std::uint64_t horizon_cycles() const;
  /// State entered at each event, preceded by the all-OFF initial state.
  std::vector<StateMask> visited_states() const;
  /// Throws ParameterError if events are unsorted or an appliance
  /// double-switches.
  void validate() const;
};

EventSchedule generate_schedule(const ScheduleParams& params);

struct ScheduleStats {
  std::vector<int> events_per_appliance;
  std::vector<std::uint64_t> on_cycles_per_appliance;
  int unique_states = 0;
  double event_br = 0.0;
  double state_br = 0.0;
};

/// Throws DegenerateInputError on an empty schedule.
ScheduleStats schedule_stats(const EventSchedule& schedule);

/// |states(train) ∩ states(test)| / |states(test)|.
double overlap_ratio(const EventSchedule& train, const EventSchedule& test);

// JSON-lines schedule file: a header object followed by one object per event.
void write_schedule(std::ostream& os, const EventSchedule& schedule);
EventSchedule read_schedule(std::istream& is);
void save_schedule(const std::filesystem::path& path, const EventSchedule& schedule);
EventSchedule load_schedule(const std::filesystem::path& path);

}  // namespace hawk::schedule
