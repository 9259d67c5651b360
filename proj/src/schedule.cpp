#include "hawk/schedule.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "hawk/error.hpp"
#include "hawk/eval.hpp"
#include "hawk/rng.hpp"
#include "json.hpp"

namespace hawk::schedule {

namespace {

using Transitions = std::vector<int>;

std::vector<int> count_bits(const Transitions& t, int n_bits) {
  std::vector<int> counts(static_cast<std::size_t>(n_bits), 0);
  for (int b : t) ++counts[static_cast<std::size_t>(b)];
  return counts;
}

// Extends a balanced n-bit cyclic code (given as its transition sequence) to
// n + 2 bits. The n-bit cycle is cut into k segments; each segment is walked
// forward, backward, forward while the two new bits step through three of
// their four values, and a final backward pass over the whole cycle covers
// the fourth value. Every interior transition is then used 4 times, every
// segment boundary twice and the cut (wrap) transition never, so bit i ends
// with 4c_i - 2b_i - 4w_i flips. k, the wrap bit and the boundary bits are
// picked so all n + 2 counts fall within a spread of 2.
Transitions extend_by_two(const Transitions& t, int n) {
  const int len = static_cast<int>(t.size());
  const auto c = count_bits(t, n);
  const int bit_a = n;
  const int bit_b = n + 1;

  for (int k = 1; k <= len; ++k) {
    // Segments alternate (a, b) / (b, a) flips; the closing pass adds one a
    // and one b when k is odd, two b when k is even.
    const int count_a = (k % 2) ? k + 1 : k;
    const int count_b = (k % 2) ? k + 1 : k + 2;
    const int lo = std::min(count_a, count_b);
    const int hi = std::max(count_a, count_b);
    for (int wrap = 0; wrap < n; ++wrap) {
      for (int m = hi - 2; m <= lo; ++m) {
        std::vector<int> b_min(static_cast<std::size_t>(n)), b_max(static_cast<std::size_t>(n));
        int sum_min = 0;
        int sum_max = 0;
        bool ok = true;
        for (int i = 0; i < n && ok; ++i) {
          const int w = (i == wrap) ? 1 : 0;
          const int base = 4 * c[static_cast<std::size_t>(i)] - 4 * w;
          const int avail = c[static_cast<std::size_t>(i)] - w;
          if (base - m < 0 || avail < 0) {
            ok = false;
            break;
          }
          // base - 2b must land in [m, m + 2].
          const int lo_b = std::max(0, (base - m - 2 + 1) / 2);
          const int hi_b = std::min(avail, (base - m) / 2);
          if (lo_b > hi_b) ok = false;
          b_min[static_cast<std::size_t>(i)] = lo_b;
          b_max[static_cast<std::size_t>(i)] = hi_b;
          sum_min += lo_b;
          sum_max += hi_b;
        }
        if (!ok || k - 1 < sum_min || k - 1 > sum_max) continue;

        std::vector<int> need = b_min;
        int rest = k - 1 - sum_min;
        for (int i = 0; i < n && rest > 0; ++i) {
          const int d = std::min(rest, b_max[static_cast<std::size_t>(i)] - need[static_cast<std::size_t>(i)]);
          need[static_cast<std::size_t>(i)] += d;
          rest -= d;
        }

        // Rotate so the last transition flips the wrap bit.
        const int r = static_cast<int>(std::find(t.begin(), t.end(), wrap) - t.begin());
        Transitions rot(static_cast<std::size_t>(len));
        for (int i = 0; i < len; ++i) rot[static_cast<std::size_t>(i)] = t[static_cast<std::size_t>((r + 1 + i) % len)];

        std::vector<char> boundary(static_cast<std::size_t>(len), 0);
        for (int i = 0; i < len - 1; ++i) {
          auto& left = need[static_cast<std::size_t>(rot[static_cast<std::size_t>(i)])];
          if (left > 0) {
            boundary[static_cast<std::size_t>(i)] = 1;
            --left;
          }
        }

        Transitions out;
        out.reserve(static_cast<std::size_t>(4 * len));
        auto walk = [&](int first, int last, bool backward) {
          if (!backward) {
            for (int i = first; i < last; ++i) out.push_back(rot[static_cast<std::size_t>(i)]);
          } else {
            for (int i = last - 1; i >= first; --i) out.push_back(rot[static_cast<std::size_t>(i)]);
          }
        };
        int seg_start = 0;
        int seg = 0;
        for (int i = 0; i < len; ++i) {
          if (i != len - 1 && !boundary[static_cast<std::size_t>(i)]) continue;
          const bool even_seg = (seg % 2 == 0);
          walk(seg_start, i, false);
          out.push_back(even_seg ? bit_a : bit_b);
          walk(seg_start, i, true);
          out.push_back(even_seg ? bit_b : bit_a);
          walk(seg_start, i, false);
          if (i != len - 1) out.push_back(rot[static_cast<std::size_t>(i)]);
          ++seg;
          seg_start = i + 1;
        }
        // The snake never used suffix (a=0, b=1); sweep the cycle backwards there.
        out.push_back(seg % 2 ? bit_a : bit_b);
        walk(0, len - 1, true);
        out.push_back(bit_b);
        return out;
      }
    }
  }
  throw ParameterError("balanced Gray code extension failed for n=" + std::to_string(n + 2));
}

GrayCodeSequence from_transitions(const Transitions& t, int n_bits) {
  GrayCodeSequence seq;
  seq.n_bits = n_bits;
  seq.codewords.reserve(t.size());
  StateMask w = 0;
  for (int b : t) {
    seq.codewords.push_back(w);
    w ^= StateMask{1} << b;
  }
  return seq;
}

}  // namespace

std::vector<int> GrayCodeSequence::transitions() const {
  std::vector<int> t;
  t.reserve(codewords.size());
  for (std::size_t i = 0; i < codewords.size(); ++i) {
    const StateMask diff = codewords[i] ^ codewords[(i + 1) % codewords.size()];
    int bit = 0;
    while (bit < 32 && !((diff >> bit) & 1u)) ++bit;
    t.push_back(bit);
  }
  return t;
}

std::vector<int> GrayCodeSequence::transition_counts() const {
  return count_bits(transitions(), n_bits);
}

GrayCodeSequence balanced_gray_code(int n_bits) {
  if (n_bits < 2 || n_bits > 16 || n_bits % 2 != 0) {
    throw ParameterError("balanced_gray_code: n_bits must be even in [2, 16], got " +
                         std::to_string(n_bits));
  }
  Transitions t{0, 1, 0, 1};
  for (int n = 2; n < n_bits; n += 2) t = extend_by_two(t, n);
  return from_transitions(t, n_bits);
}

GrayCodeSequence reflected_gray_code(int n_bits) {
  if (n_bits < 1 || n_bits > 16) {
    throw ParameterError("reflected_gray_code: n_bits must be in [1, 16]");
  }
  GrayCodeSequence seq;
  seq.n_bits = n_bits;
  const StateMask size = StateMask{1} << n_bits;
  for (StateMask i = 0; i < size; ++i) seq.codewords.push_back(i ^ (i >> 1));
  return seq;
}

void ScheduleParams::validate() const {
  if (n_appliances < 1 || n_appliances > kMaxAppliances) {
    throw ParameterError("n_appliances must be in [1, 32]");
  }
  if (group_size < 2 || group_size % 2 != 0 || group_size > 16) {
    throw ParameterError("group_size must be an even integer in [2, 16]");
  }
  if (group_size > n_appliances) throw ParameterError("group_size exceeds n_appliances");
  const int n_groups = (n_appliances + group_size - 1) / group_size;
  if (groups_active_per_round < 1 || groups_active_per_round > n_groups) {
    throw ParameterError("groups_active_per_round must be in [1, ceil(n_appliances / group_size)]");
  }
  if (rounds < 1) throw ParameterError("rounds must be positive");
  if (dwell_cycles < 1) throw ParameterError("dwell_cycles must be positive");
}

std::uint64_t EventSchedule::horizon_cycles() const {
  if (events.empty()) return static_cast<std::uint64_t>(dwell_cycles);
  return events.back().time_cycle + static_cast<std::uint64_t>(dwell_cycles);
}

std::vector<StateMask> EventSchedule::visited_states() const {
  std::vector<StateMask> states;
  states.reserve(events.size() + 1);
  StateMask s = 0;
  states.push_back(s);
  for (const auto& e : events) {
    s ^= StateMask{1} << e.appliance_id;
    states.push_back(s);
  }
  return states;
}

void EventSchedule::validate() const {
  if (n_appliances < 1 || n_appliances > kMaxAppliances) {
    throw ParameterError("schedule: n_appliances out of range");
  }
  StateMask s = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.appliance_id < 0 || e.appliance_id >= n_appliances) {
      throw ParameterError("schedule: appliance id out of range");
    }
    if (i > 0 && e.time_cycle <= events[i - 1].time_cycle) {
      throw ParameterError("schedule: event times must be strictly increasing");
    }
    const bool on = (s >> e.appliance_id) & 1u;
    if (on == (e.action == Action::On)) {
      throw ParameterError("schedule: appliance " + std::to_string(e.appliance_id) +
                           " switched twice in the same direction");
    }
    s ^= StateMask{1} << e.appliance_id;
  }
}

EventSchedule generate_schedule(const ScheduleParams& params) {
  params.validate();
  const int n = params.n_appliances;
  const int g = params.group_size;

  std::vector<int> slot_size(static_cast<std::size_t>(n / g), g);
  if (n % g) slot_size.push_back(n % g);
  const int n_slots = static_cast<int>(slot_size.size());

  std::map<int, Transitions> codes;
  for (int size : slot_size) {
    if (codes.count(size)) continue;
    codes[size] = (size % 2 == 0) ? balanced_gray_code(size).transitions()
                                  : reflected_gray_code(size).transitions();
  }

  Rng rng = make_rng(params.rng_seed, {0x5C4Eull});
  std::vector<int> slot_activations(static_cast<std::size_t>(n_slots), 0);
  std::vector<long> appliance_events(static_cast<std::size_t>(n), 0);

  EventSchedule out;
  out.n_appliances = n;
  out.dwell_cycles = params.dwell_cycles;
  out.params = params;
  StateMask state = 0;
  std::uint64_t slot_index = 0;

  for (int round = 0; round < params.rounds; ++round) {
    // Least-activated slots first, random among equals.
    std::vector<std::pair<double, int>> slot_keys;
    for (int s = 0; s < n_slots; ++s) {
      slot_keys.emplace_back(slot_activations[static_cast<std::size_t>(s)] + 0.5 * uniform01(rng), s);
    }
    std::sort(slot_keys.begin(), slot_keys.end());
    std::vector<int> active;
    for (int i = 0; i < params.groups_active_per_round; ++i) active.push_back(slot_keys[static_cast<std::size_t>(i)].second);
    std::sort(active.begin(), active.end());
    for (int s : active) ++slot_activations[static_cast<std::size_t>(s)];

    // Bit positions of the active groups, heaviest flip counts first; the
    // appliances with the fewest events so far take them.
    struct Position {
      int slot;
      int bit;
      int flips;
      double key;
    };
    std::vector<Position> positions;
    for (int s : active) {
      const auto size = slot_size[static_cast<std::size_t>(s)];
      const auto counts = count_bits(codes[size], size);
      for (int b = 0; b < size; ++b) positions.push_back({s, b, counts[static_cast<std::size_t>(b)], uniform01(rng)});
    }
    std::sort(positions.begin(), positions.end(), [](const Position& x, const Position& y) {
      if (x.flips != y.flips) return x.flips > y.flips;
      return x.key < y.key;
    });
    std::vector<std::pair<double, int>> appliance_keys;
    for (int a = 0; a < n; ++a) {
      appliance_keys.emplace_back(static_cast<double>(appliance_events[static_cast<std::size_t>(a)]) + 0.5 * uniform01(rng), a);
    }
    std::sort(appliance_keys.begin(), appliance_keys.end());

    std::map<int, std::vector<int>> members;  // slot -> appliance per bit
    for (int s : active) members[s].assign(static_cast<std::size_t>(slot_size[static_cast<std::size_t>(s)]), -1);
    for (std::size_t p = 0; p < positions.size(); ++p) {
      members[positions[p].slot][static_cast<std::size_t>(positions[p].bit)] = appliance_keys[p].second;
    }

    // Random rotation and direction: starting from all-OFF and applying the
    // rotated transition sequence walks an XOR-translate of the code, which
    // is again a full cycle through every group state.
    std::vector<Transitions> walks;
    std::size_t longest = 0;
    for (int s : active) {
      const auto& t = codes[slot_size[static_cast<std::size_t>(s)]];
      const auto len = t.size();
      const auto rotation = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(len));
      const bool backward = uniform01(rng) < 0.5;
      Transitions w(len);
      for (std::size_t j = 0; j < len; ++j) {
        w[j] = backward ? t[(rotation + len - 1 - j) % len] : t[(rotation + j) % len];
      }
      longest = std::max(longest, len);
      walks.push_back(std::move(w));
    }

    for (std::size_t step = 0; step < longest; ++step) {
      for (std::size_t gi = 0; gi < active.size(); ++gi) {
        if (step >= walks[gi].size()) continue;
        const int appliance = members[active[gi]][static_cast<std::size_t>(walks[gi][step])];
        const bool on = (state >> appliance) & 1u;
        ++slot_index;
        out.events.push_back({slot_index * static_cast<std::uint64_t>(params.dwell_cycles), appliance,
                              on ? Action::Off : Action::On});
        state ^= StateMask{1} << appliance;
        ++appliance_events[static_cast<std::size_t>(appliance)];
      }
    }
  }
  return out;
}

ScheduleStats schedule_stats(const EventSchedule& schedule) {
  if (schedule.events.empty()) throw DegenerateInputError("schedule_stats: empty schedule");
  schedule.validate();
  const auto n = static_cast<std::size_t>(schedule.n_appliances);
  ScheduleStats st;
  st.events_per_appliance.assign(n, 0);
  st.on_cycles_per_appliance.assign(n, 0);
  std::vector<std::uint64_t> on_since(n, 0);
  StateMask s = 0;
  for (const auto& e : schedule.events) {
    const auto a = static_cast<std::size_t>(e.appliance_id);
    ++st.events_per_appliance[a];
    if (e.action == Action::On) {
      on_since[a] = e.time_cycle;
    } else {
      st.on_cycles_per_appliance[a] += e.time_cycle - on_since[a];
    }
    s ^= StateMask{1} << e.appliance_id;
  }
  const auto end = schedule.horizon_cycles();
  for (std::size_t a = 0; a < n; ++a) {
    if ((s >> a) & 1u) st.on_cycles_per_appliance[a] += end - on_since[a];
  }
  const auto states = schedule.visited_states();
  st.unique_states = static_cast<int>(std::set<StateMask>(states.begin(), states.end()).size());
  std::vector<double> ev(st.events_per_appliance.begin(), st.events_per_appliance.end());
  std::vector<double> on(st.on_cycles_per_appliance.begin(), st.on_cycles_per_appliance.end());
  st.event_br = eval::min_max_ratio(ev);
  st.state_br = eval::min_max_ratio(on);
  return st;
}

double overlap_ratio(const EventSchedule& train, const EventSchedule& test) {
  if (train.n_appliances != test.n_appliances) {
    throw ParameterError("overlap_ratio: schedules have different widths");
  }
  const auto a = train.visited_states();
  const auto b = test.visited_states();
  const std::set<StateMask> train_states(a.begin(), a.end());
  const std::set<StateMask> test_states(b.begin(), b.end());
  std::size_t shared = 0;
  for (auto s : test_states) shared += train_states.count(s);
  return static_cast<double>(shared) / static_cast<double>(test_states.size());
}

void write_schedule(std::ostream& os, const EventSchedule& schedule) {
  using ojson = nlohmann::ordered_json;
  const auto& p = schedule.params;
  ojson header;
  header["n_appliances"] = schedule.n_appliances;
  header["dwell_cycles"] = schedule.dwell_cycles;
  header["seed"] = p.rng_seed;
  header["params"] = ojson{{"n_appliances", p.n_appliances},
                           {"group_size", p.group_size},
                           {"groups_active_per_round", p.groups_active_per_round},
                           {"rounds", p.rounds},
                           {"dwell_cycles", p.dwell_cycles},
                           {"seed", p.rng_seed}};
  os << header.dump() << '\n';
  for (const auto& e : schedule.events) {
    ojson rec;
    rec["t"] = e.time_cycle;
    rec["a"] = e.appliance_id;
    rec["op"] = e.action == Action::On ? "on" : "off";
    os << rec.dump() << '\n';
  }
}

EventSchedule read_schedule(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("schedule: missing header line");
  EventSchedule s;
  try {
    const auto header = nlohmann::json::parse(line);
    s.n_appliances = header.at("n_appliances").get<int>();
    s.dwell_cycles = header.at("dwell_cycles").get<int>();
    const auto& p = header.at("params");
    s.params.n_appliances = p.at("n_appliances").get<int>();
    s.params.group_size = p.at("group_size").get<int>();
    s.params.groups_active_per_round = p.at("groups_active_per_round").get<int>();
    s.params.rounds = p.at("rounds").get<int>();
    s.params.dwell_cycles = p.at("dwell_cycles").get<int>();
    s.params.rng_seed = header.at("seed").get<std::uint64_t>();
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto rec = nlohmann::json::parse(line);
      Event e;
      e.time_cycle = rec.at("t").get<std::uint64_t>();
      e.appliance_id = rec.at("a").get<int>();
      const auto op = rec.at("op").get<std::string>();
      if (op == "on") {
        e.action = Action::On;
      } else if (op == "off") {
        e.action = Action::Off;
      } else {
        throw FormatError("schedule: unknown op '" + op + "'");
      }
      s.events.push_back(e);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("schedule: ") + ex.what());
  }
  try {
    s.validate();
  } catch (const ParameterError& ex) {
    throw FormatError(ex.what());
  }
  return s;
}

void save_schedule(const std::filesystem::path& path, const EventSchedule& schedule) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParameterError("cannot write " + path.string());
  write_schedule(os, schedule);
}

EventSchedule load_schedule(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParameterError("cannot open " + path.string());
  return read_schedule(is);
}

}  // namespace hawk::schedule
