#include "hawk/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <numeric>
#include <thread>

#include "binio.hpp"
#include "hawk/error.hpp"
#include "json.hpp"

namespace hawk::sim {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Fills `out` with one cycle of the appliance current for `state`, drawing
// randomness only from `rng`. `steady` is the jitter-free ON waveform.
void render_cycle(const ApplianceSpec& spec, std::span<const double> steady, ApplianceState state, Rng& rng,
                  std::span<double> out) {
  using Kind = ApplianceState::Kind;
  if (state.kind == Kind::Off) {
    if (spec.off_leakage_a > 0.0) {
      for (auto& x : out) x = spec.off_leakage_a * gaussian(rng);
    } else {
      std::fill(out.begin(), out.end(), 0.0);
    }
    return;
  }
  const double jitter = 1.0 + spec.power_jitter_rel * gaussian(rng);
  double envelope = 1.0;
  double noise_std = 0.0;
  if (state.kind == Kind::Boot) {
    envelope = spec.boot_level;
  } else if (state.kind == Kind::Transient) {
    const int k = state.cycles_since_switch;
    if (spec.transient_shape == TransientShape::Surge) {
      envelope = 1.0 + (spec.surge_peak_multiple - 1.0) * std::pow(spec.surge_decay_per_cycle, k);
    } else {
      envelope = static_cast<double>(k + 1) / static_cast<double>(spec.transient_cycles + 1);
    }
    noise_std = spec.transient_noise_rel * spec.fundamental_amplitude();
  }
  const double scale = envelope * jitter;
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = scale * steady[j];
  if (noise_std > 0.0) {
    for (auto& x : out) x += noise_std * gaussian(rng);
  }
}

void check_json_shape(const nlohmann::json& j, const char* what) {
  if (!j.is_object()) throw FormatError(std::string("catalog: ") + what + " must be an object");
}

}  // namespace

double ApplianceSpec::fundamental_amplitude() const {
  for (const auto& h : harmonics) {
    if (h.order == 1) return h.amplitude_a;
  }
  return 0.0;
}

void ApplianceSpec::validate() const {
  if (rated_power_w <= 0.0) throw ParameterError("appliance " + name + ": rated power must be positive");
  if (fundamental_amplitude() <= 0.0) throw ParameterError("appliance " + name + ": missing fundamental");
  for (const auto& h : harmonics) {
    if (h.order < 1) throw ParameterError("appliance " + name + ": harmonic order must be >= 1");
  }
  if (power_jitter_rel < 0.0 || off_leakage_a < 0.0 || transient_noise_rel < 0.0) {
    throw ParameterError("appliance " + name + ": negative noise parameter");
  }
  if (transient_cycles < 0 || boot_cycles < 0) throw ParameterError("appliance " + name + ": negative cycle count");
  if (transient_shape == TransientShape::Surge &&
      (surge_peak_multiple < 1.0 || surge_decay_per_cycle <= 0.0 || surge_decay_per_cycle >= 1.0)) {
    throw ParameterError("appliance " + name + ": surge needs peak >= 1 and decay in (0, 1)");
  }
}

std::vector<Harmonic> harmonics_for_power(double power_w, double v_rms, double phi_rad,
                                          const std::vector<Harmonic>& extra) {
  const double a1 = std::numbers::sqrt2 * power_w / (v_rms * std::cos(phi_rad));
  std::vector<Harmonic> out{{1, a1, -phi_rad}};
  for (const auto& h : extra) out.push_back({h.order, h.amplitude_a * a1, h.phase_rad});
  return out;
}

int GridSpec::cycle_len() const {
  return static_cast<int>(std::lround(sample_rate_hz / mains_hz));
}

void GridSpec::validate() const {
  if (mains_hz <= 0.0 || sample_rate_hz <= 0.0) throw ParameterError("grid: rates must be positive");
  const double ratio = sample_rate_hz / mains_hz;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || ratio < 32.0) {
    throw ParameterError("grid: sample_rate / mains must be an integer >= 32");
  }
  if (voltage_rms_v <= 0.0 || voltage_jitter_rel < 0.0 || noise_std_a < 0.0) {
    throw ParameterError("grid: invalid voltage or noise parameters");
  }
}

std::vector<double> steady_waveform(const ApplianceSpec& spec, const GridSpec& grid) {
  const int len = grid.cycle_len();
  std::vector<double> w(static_cast<std::size_t>(len), 0.0);
  for (int j = 0; j < len; ++j) {
    const double theta = kTwoPi * j / len;
    double v = 0.0;
    for (const auto& h : spec.harmonics) v += h.amplitude_a * std::sin(h.order * theta + h.phase_rad);
    w[static_cast<std::size_t>(j)] = v;
  }
  return w;
}

std::vector<double> synth_appliance_cycle(const ApplianceSpec& spec, const GridSpec& grid, ApplianceState state,
                                          Rng& rng) {
  const auto steady = steady_waveform(spec, grid);
  std::vector<double> out(steady.size());
  render_cycle(spec, steady, state, rng, out);
  return out;
}

std::vector<ApplianceState> state_timeline(const schedule::EventSchedule& schedule, const ApplianceSpec& spec,
                                           int appliance, std::uint64_t n_cycles) {
  std::vector<ApplianceState> states(n_cycles, ApplianceState::off());
  std::vector<std::pair<std::uint64_t, schedule::Action>> mine;
  for (const auto& e : schedule.events) {
    if (e.appliance_id == appliance) mine.emplace_back(e.time_cycle, e.action);
  }
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].second != schedule::Action::On) continue;
    const std::uint64_t start = mine[i].first;
    const std::uint64_t stop = (i + 1 < mine.size()) ? mine[i + 1].first : n_cycles;
    for (std::uint64_t c = start; c < std::min(stop, n_cycles); ++c) {
      const auto k = static_cast<int>(c - start);
      if (k < spec.boot_cycles) {
        states[c] = ApplianceState::boot(k);
      } else if (k < spec.settle_cycles()) {
        states[c] = ApplianceState::transient(k - spec.boot_cycles);
      } else {
        states[c] = ApplianceState::on();
      }
    }
  }
  return states;
}

int resolve_threads(int requested) {
  int n = requested > 0 ? requested : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("HAWK_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return n;
}

Trace execute_schedule(const schedule::EventSchedule& schedule, const std::vector<ApplianceSpec>& specs,
                       const GridSpec& grid, std::uint64_t seed, const ExecuteOptions& options) {
  grid.validate();
  schedule.validate();
  if (static_cast<int>(specs.size()) != schedule.n_appliances) {
    throw ParameterError("execute_schedule: schedule has " + std::to_string(schedule.n_appliances) +
                         " appliances but " + std::to_string(specs.size()) + " specs were given");
  }
  for (const auto& s : specs) s.validate();
  const std::uint64_t n_cycles = options.n_cycles ? options.n_cycles : schedule.horizon_cycles();
  if (!schedule.events.empty() && schedule.events.back().time_cycle >= n_cycles) {
    throw ParameterError("execute_schedule: events beyond the trace horizon");
  }

  const int len = grid.cycle_len();
  const int n = schedule.n_appliances;
  std::vector<std::vector<double>> steady;
  std::vector<std::vector<ApplianceState>> timelines;
  for (int a = 0; a < n; ++a) {
    steady.push_back(steady_waveform(specs[a], grid));
    timelines.push_back(state_timeline(schedule, specs[a], a, n_cycles));
  }
  std::vector<StateMask> labels(n_cycles, 0);
  {
    StateMask s = 0;
    std::size_t next = 0;
    for (std::uint64_t c = 0; c < n_cycles; ++c) {
      while (next < schedule.events.size() && schedule.events[next].time_cycle == c) {
        s ^= StateMask{1} << schedule.events[next].appliance_id;
        ++next;
      }
      labels[c] = s;
    }
  }
  std::vector<double> sine(static_cast<std::size_t>(len));
  for (int j = 0; j < len; ++j) sine[j] = std::numbers::sqrt2 * grid.voltage_rms_v * std::sin(kTwoPi * j / len);

  Trace trace;
  trace.grid = grid;
  trace.appliances = specs;
  trace.n_appliances = n;
  trace.has_individual = options.keep_individual;
  trace.frames.resize(n_cycles);

  auto synth_range = [&](std::uint64_t begin, std::uint64_t end) {
    std::vector<double> buf(static_cast<std::size_t>(len));
    for (std::uint64_t c = begin; c < end; ++c) {
      auto& f = trace.frames[c];
      f.cycle_id = c;
      f.label = labels[c];
      f.aggregate.assign(static_cast<std::size_t>(len), 0.0);
      if (options.keep_individual) f.individual.assign(static_cast<std::size_t>(n) * len, 0.0);
      if (options.keep_individual_rms || options.keep_individual) f.individual_rms.assign(static_cast<std::size_t>(n), 0.0);
      for (int a = 0; a < n; ++a) {
        Rng rng = make_rng(seed, {c, static_cast<std::uint64_t>(a)});
        render_cycle(specs[a], steady[a], timelines[a][c], rng, buf);
        double sq = 0.0;
        for (int j = 0; j < len; ++j) {
          f.aggregate[j] += buf[j];
          sq += buf[j] * buf[j];
        }
        if (!f.individual_rms.empty()) f.individual_rms[a] = std::sqrt(sq / len);
        if (options.keep_individual) std::copy(buf.begin(), buf.end(), f.individual.begin() + static_cast<long>(a) * len);
      }
      Rng grid_rng = make_rng(seed, {c, 0xFFFFFFFFull});
      const double vscale = 1.0 + grid.voltage_jitter_rel * gaussian(grid_rng);
      f.voltage.resize(static_cast<std::size_t>(len));
      for (int j = 0; j < len; ++j) f.voltage[j] = vscale * sine[j];
      if (grid.noise_std_a > 0.0 || grid.noise_mean_a != 0.0) {
        for (auto& x : f.aggregate) x += grid.noise_mean_a + grid.noise_std_a * gaussian(grid_rng);
      }
    }
  };

  const int threads = std::min<std::uint64_t>(resolve_threads(options.threads), std::max<std::uint64_t>(1, n_cycles / 256));
  if (threads <= 1) {
    synth_range(0, n_cycles);
  } else {
    std::vector<std::thread> pool;
    const std::uint64_t chunk = (n_cycles + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::uint64_t b = t * chunk;
      const std::uint64_t e = std::min(n_cycles, b + chunk);
      if (b < e) pool.emplace_back(synth_range, b, e);
    }
    for (auto& th : pool) th.join();
  }
  return trace;
}

std::vector<schedule::Event> resample_imbalanced(const std::vector<schedule::Event>& events,
                                                 const std::map<int, double>& weights, std::uint64_t seed) {
  std::map<int, std::vector<schedule::Event>> pools;
  for (const auto& e : events) pools[e.appliance_id].push_back(e);
  double total = 0.0;
  std::map<int, double> mass;
  for (const auto& [a, w] : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw ParameterError("resample_imbalanced: weights must be non-negative");
  }
  for (const auto& [a, pool] : pools) {
    const auto it = weights.find(a);
    const double w = it == weights.end() ? 0.0 : it->second;
    mass[a] = w * static_cast<double>(pool.size());
    total += mass[a];
  }
  if (events.empty()) return {};
  if (total <= 0.0) throw ParameterError("resample_imbalanced: all weights are zero");

  // Largest-remainder apportionment of the original total.
  const auto n_total = events.size();
  std::map<int, std::size_t> quota;
  std::vector<std::pair<double, int>> remainders;
  std::size_t assigned = 0;
  for (const auto& [a, m] : mass) {
    const double exact = static_cast<double>(n_total) * m / total;
    quota[a] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[a];
    remainders.emplace_back(-(exact - std::floor(exact)), a);
  }
  std::sort(remainders.begin(), remainders.end());
  for (std::size_t i = 0; assigned < n_total; ++i, ++assigned) ++quota[remainders[i % remainders.size()].second];

  Rng rng = make_rng(seed, {0x2E5Aull});
  std::vector<schedule::Event> out;
  out.reserve(n_total);
  for (auto& [a, pool] : pools) {
    const auto want = quota[a];
    shuffle(pool, rng);
    for (std::size_t i = 0; i < want; ++i) {
      if (i < pool.size()) {
        out.push_back(pool[i]);
      } else {
        out.push_back(pool[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool.size()))]);
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const schedule::Event& x, const schedule::Event& y) {
    return std::tie(x.time_cycle, x.appliance_id) < std::tie(y.time_cycle, y.appliance_id);
  });
  return out;
}

std::vector<schedule::Event> label_events(const Trace& trace) {
  std::vector<schedule::Event> out;
  StateMask prev = 0;
  for (std::size_t i = 0; i < trace.frames.size(); ++i) {
    const StateMask cur = trace.frames[i].label;
    const StateMask changed = prev ^ cur;
    for (int a = 0; a < trace.n_appliances; ++a) {
      if ((changed >> a) & 1u) {
        out.push_back({trace.frames[i].cycle_id, a,
                       ((cur >> a) & 1u) ? schedule::Action::On : schedule::Action::Off});
      }
    }
    prev = cur;
  }
  return out;
}

std::vector<ApplianceSpec> default_catalog(const GridSpec& grid) {
  const double v = grid.voltage_rms_v;
  constexpr double pi = std::numbers::pi;
  auto make = [&](int id, const char* name, double power, double phi, std::vector<Harmonic> extra, double jitter,
                  TransientShape shape, int transient, double peak, double decay, double leak) {
    ApplianceSpec s;
    s.id = id;
    s.name = name;
    s.rated_power_w = power;
    s.harmonics = harmonics_for_power(power, v, phi, extra);
    s.power_jitter_rel = jitter;
    s.transient_shape = shape;
    s.transient_cycles = transient;
    s.surge_peak_multiple = peak;
    s.surge_decay_per_cycle = decay;
    s.off_leakage_a = leak;
    return s;
  };
  using TS = TransientShape;
  std::vector<ApplianceSpec> c;
  // Switch-mode supplies: odd harmonics with alternating sign give peaky
  // conduction around the voltage crest. Motors and ballasts lag; LED
  // drivers lead; heaters are resistive.
  c.push_back(make(0, "Monitor", 25, -0.10, {{3, 0.70, pi}, {5, 0.45, 0.0}, {7, 0.25, pi}, {9, 0.10, 0.0}}, 0.010, TS::Ramp, 4, 1, 0.5, 0.003));
  c.push_back(make(1, "Humidifier", 40, -0.30, {{3, 0.15, 0.4}}, 0.010, TS::Ramp, 3, 1, 0.5, 0.0));
  c.push_back(make(2, "LEDLamp24w", 24, -0.35, {{3, 0.50, pi}, {5, 0.30, 0.0}}, 0.008, TS::Ramp, 2, 1, 0.5, 0.0));
  c.push_back(make(3, "IncandescentBulb", 60, 0.0, {}, 0.004, TS::Surge, 6, 6.0, 0.35, 0.0));
  c.push_back(make(4, "ElectricCooker", 700, 0.02, {{3, 0.03, 0.0}}, 0.003, TS::Surge, 3, 1.4, 0.5, 0.0));
  c.push_back(make(5, "InductionCooker", 2000, 0.05, {{3, 0.10, pi}, {5, 0.05, 0.0}}, 0.002, TS::Ramp, 12, 1, 0.5, 0.002));
  c.push_back(make(6, "LEDLamp36w", 36, -0.25, {{3, 0.35, pi}, {5, 0.20, 0.0}, {7, 0.10, pi}}, 0.008, TS::Ramp, 2, 1, 0.5, 0.0));
  c.push_back(make(7, "Stirrer", 300, 0.60, {{3, 0.08, 0.3}}, 0.008, TS::Surge, 8, 3.0, 0.6, 0.0));
  c.push_back(make(8, "Desktop", 120, -0.05, {{3, 0.05, 0.0}, {5, 0.03, pi}}, 0.010, TS::Ramp, 14, 1, 0.5, 0.004));
  c.push_back(make(9, "SmartScreen", 80, 0.05, {{3, 0.60, pi}, {5, 0.35, 0.0}, {7, 0.15, pi}}, 0.010, TS::Ramp, 3, 1, 0.5, 0.004));
  c.back().boot_cycles = 6;
  c.back().boot_level = 0.2;
  c.push_back(make(10, "FluorescentLamp", 36, 0.90, {{3, 0.20, 0.2}}, 0.008, TS::Surge, 5, 2.0, 0.5, 0.0));
  c.push_back(make(11, "Television", 110, 0.0, {{3, 0.80, pi}, {5, 0.55, 0.0}, {7, 0.30, pi}, {9, 0.15, 0.0}}, 0.010, TS::Ramp, 6, 1, 0.5, 0.005));
  c.push_back(make(12, "Washer", 400, 0.70, {{3, 0.05, 0.0}}, 0.008, TS::Surge, 10, 4.0, 0.7, 0.0));
  c.push_back(make(13, "MicrowaveOven", 1100, 0.30, {{3, 0.25, 0.5}, {5, 0.08, 0.0}}, 0.004, TS::Surge, 5, 2.5, 0.5, 0.0));
  c.push_back(make(14, "AirHeater", 2160, 0.0, {}, 0.0005, TS::Ramp, 1, 1, 0.5, 0.0));
  c.push_back(make(15, "ElectricKettle", 1500, 0.0, {}, 0.0005, TS::Ramp, 1, 1, 0.5, 0.0));
  c.push_back(make(16, "PhoneCharger", 5, -0.20, {{3, 0.85, pi}, {5, 0.65, 0.0}, {7, 0.45, pi}, {9, 0.25, 0.0}}, 0.010, TS::Ramp, 1, 1, 0.5, 0.0));
  c.push_back(make(17, "SweepingRobot", 20, -0.40, {{3, 0.50, 0.6}, {5, 0.20, 0.0}}, 0.010, TS::Ramp, 2, 1, 0.5, 0.0));
  return c;
}

void write_catalog(std::ostream& os, const std::vector<ApplianceSpec>& specs) {
  using ojson = nlohmann::ordered_json;
  ojson root;
  root["format"] = "hawk-catalog";
  root["version"] = 1;
  root["synthetic"] = true;
  root["note"] = "Synthetic appliance models; powers span a typical household range, waveforms are invented.";
  ojson list = ojson::array();
  for (const auto& s : specs) {
    ojson j;
    j["id"] = s.id;
    j["name"] = s.name;
    j["rated_power_w"] = s.rated_power_w;
    ojson hs = ojson::array();
    for (const auto& h : s.harmonics) hs.push_back(ojson{{"order", h.order}, {"amplitude_a", h.amplitude_a}, {"phase_rad", h.phase_rad}});
    j["harmonics"] = hs;
    j["power_jitter_rel"] = s.power_jitter_rel;
    j["transient_cycles"] = s.transient_cycles;
    j["transient_shape"] = s.transient_shape == TransientShape::Surge ? "surge" : "ramp";
    j["surge_peak_multiple"] = s.surge_peak_multiple;
    j["surge_decay_per_cycle"] = s.surge_decay_per_cycle;
    j["transient_noise_rel"] = s.transient_noise_rel;
    j["boot_cycles"] = s.boot_cycles;
    j["boot_level"] = s.boot_level;
    j["off_leakage_a"] = s.off_leakage_a;
    list.push_back(j);
  }
  root["appliances"] = list;
  os << root.dump(2) << '\n';
}

std::vector<ApplianceSpec> read_catalog(std::istream& is) {
  std::vector<ApplianceSpec> out;
  try {
    const auto root = nlohmann::json::parse(is);
    check_json_shape(root, "root");
    if (root.value("format", "") != "hawk-catalog") throw FormatError("catalog: missing format tag");
    if (root.at("version").get<int>() != 1) throw FormatError("catalog: unsupported version");
    for (const auto& j : root.at("appliances")) {
      check_json_shape(j, "appliance");
      ApplianceSpec s;
      s.id = j.at("id").get<int>();
      s.name = j.at("name").get<std::string>();
      s.rated_power_w = j.at("rated_power_w").get<double>();
      for (const auto& h : j.at("harmonics")) {
        s.harmonics.push_back({h.at("order").get<int>(), h.at("amplitude_a").get<double>(), h.at("phase_rad").get<double>()});
      }
      s.power_jitter_rel = j.value("power_jitter_rel", 0.0);
      s.transient_cycles = j.value("transient_cycles", 0);
      const auto shape = j.value("transient_shape", std::string("ramp"));
      if (shape != "surge" && shape != "ramp") throw FormatError("catalog: unknown transient_shape " + shape);
      s.transient_shape = shape == "surge" ? TransientShape::Surge : TransientShape::Ramp;
      s.surge_peak_multiple = j.value("surge_peak_multiple", 1.0);
      s.surge_decay_per_cycle = j.value("surge_decay_per_cycle", 0.5);
      s.transient_noise_rel = j.value("transient_noise_rel", 0.05);
      s.boot_cycles = j.value("boot_cycles", 0);
      s.boot_level = j.value("boot_level", 0.0);
      s.off_leakage_a = j.value("off_leakage_a", 0.0);
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("catalog: ") + ex.what());
  }
  return out;
}

void save_catalog(const std::filesystem::path& path, const std::vector<ApplianceSpec>& specs) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParameterError("cannot write " + path.string());
  write_catalog(os, specs);
}

std::vector<ApplianceSpec> load_catalog(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParameterError("cannot open " + path.string());
  return read_catalog(is);
}

void write_trace(std::ostream& os, const Trace& trace) {
  const int len = trace.cycle_len();
  binio::put_magic(os, "HWK1");
  binio::put<std::uint32_t>(os, kTraceVersion);
  binio::put<double>(os, trace.grid.sample_rate_hz);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(len));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(trace.n_appliances));
  binio::put<std::uint8_t>(os, trace.has_individual ? 1 : 0);
  for (const auto& f : trace.frames) {
    binio::put<std::uint64_t>(os, f.cycle_id);
    binio::put<std::uint32_t>(os, f.label);
    for (double x : f.voltage) binio::put<float>(os, static_cast<float>(x));
    for (double x : f.aggregate) binio::put<float>(os, static_cast<float>(x));
    if (trace.has_individual) {
      for (double x : f.individual) binio::put<float>(os, static_cast<float>(x));
    }
  }
}

Trace read_trace(std::istream& is) {
  binio::expect_magic(is, "HWK1", "HWK1 trace");
  const auto version = binio::get<std::uint32_t>(is, "version");
  if (version != kTraceVersion) throw FormatError("trace: unsupported version " + std::to_string(version));
  Trace t;
  t.grid.sample_rate_hz = binio::get<double>(is, "sample_rate");
  const auto len = binio::get<std::uint32_t>(is, "cycle_len");
  t.n_appliances = static_cast<int>(binio::get<std::uint32_t>(is, "n_appliances"));
  const auto has = binio::get<std::uint8_t>(is, "has_individual");
  if (len < 32 || len > (1u << 20) || !(t.grid.sample_rate_hz > 0.0)) throw FormatError("trace: corrupt header");
  if (t.n_appliances < 0 || t.n_appliances > schedule::kMaxAppliances || has > 1) {
    throw FormatError("trace: corrupt header");
  }
  t.grid.mains_hz = t.grid.sample_rate_hz / len;
  t.has_individual = has == 1;
  const StateMask valid_bits =
      t.n_appliances == 32 ? ~StateMask{0} : ((StateMask{1} << t.n_appliances) - 1);
  while (!binio::at_eof(is)) {
    CycleFrame f;
    f.cycle_id = binio::get<std::uint64_t>(is, "cycle_id");
    f.label = binio::get<std::uint32_t>(is, "label");
    if (f.label & ~valid_bits) throw FormatError("trace: label has bits beyond n_appliances");
    if (!t.frames.empty() && f.cycle_id != t.frames.back().cycle_id + 1) {
      throw FormatError("trace: cycle ids are not consecutive");
    }
    f.voltage.resize(len);
    f.aggregate.resize(len);
    for (auto& x : f.voltage) x = binio::get<float>(is, "voltage");
    for (auto& x : f.aggregate) x = binio::get<float>(is, "aggregate");
    if (t.has_individual) {
      f.individual.resize(static_cast<std::size_t>(t.n_appliances) * len);
      for (auto& x : f.individual) x = binio::get<float>(is, "individual");
      f.individual_rms.resize(static_cast<std::size_t>(t.n_appliances));
      for (int a = 0; a < t.n_appliances; ++a) {
        double sq = 0.0;
        for (const double x : f.appliance_current(a, static_cast<int>(len))) sq += x * x;
        f.individual_rms[a] = std::sqrt(sq / len);
      }
    }
    t.frames.push_back(std::move(f));
  }
  return t;
}

void save_trace(const std::filesystem::path& path, const Trace& trace) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParameterError("cannot write " + path.string());
  write_trace(os, trace);
}

Trace load_trace(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParameterError("cannot open " + path.string());
  return read_trace(is);
}

double kirchhoff_residual(const Trace& trace) {
  if (!trace.has_individual) return 0.0;
  const int len = trace.cycle_len();
  double worst = 0.0;
  for (const auto& f : trace.frames) {
    for (int j = 0; j < len; ++j) {
      double sum = trace.grid.noise_mean_a;
      for (int a = 0; a < trace.n_appliances; ++a) sum += f.individual[static_cast<std::size_t>(a) * len + j];
      worst = std::max(worst, std::abs(f.aggregate[j] - sum));
    }
  }
  return worst;
}

}  // namespace hawk::sim
