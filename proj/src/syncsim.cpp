#include "hawk/syncsim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>

#include "hawk/error.hpp"
#include "hawk/simulate.hpp"
#include "json.hpp"
#include "parallel.hpp"

namespace hawk::syncsim {

void NodeClock::validate() const {
  const auto& j = timestamp_jitter;
  if (!(j.outlier_prob >= 0.0 && j.outlier_prob <= 1.0)) throw ParameterError("NodeClock: outlier_prob outside [0, 1]");
  if (!(j.std_us >= 0.0)) throw ParameterError("NodeClock: negative timestamp jitter");
  if (!(std::abs(drift_ppm) < 1e5)) throw ParameterError("NodeClock: implausible drift");
  if (!std::isfinite(offset_us) || !std::isfinite(j.outlier_shift_us)) throw ParameterError("NodeClock: non-finite value");
}

void SyncConfig::validate() const {
  if (!(mains_hz > 0.0) || !(sample_rate_hz > 4.0 * mains_hz)) throw ParameterError("sync: bad mains or sample rate");
  if (!(voltage_noise_rel >= 0.0) || !(current_noise_a >= 0.0)) throw ParameterError("sync: negative noise");
  if (!(surge_amplitude_a > 0.0)) throw ParameterError("sync: surge amplitude must be positive");
  if (!(cable_delay_us >= 0.0)) throw ParameterError("sync: negative cable delay");
  if (window_cycles < 2) throw ParameterError("sync: window_cycles must be at least 2");
  if (fit_half_width < 0 || 2 * fit_half_width > sample_rate_hz / mains_hz) {
    throw ParameterError("sync: fit_half_width must not exceed half a cycle");
  }
  if (!(beacon_error_std_us >= 0.0) || !(beacon_fault_prob >= 0.0 && beacon_fault_prob <= 1.0)) {
    throw ParameterError("sync: bad beacon error model");
  }
  if (horizon_cycles <= static_cast<std::uint64_t>(window_cycles) + 1) throw ParameterError("sync: horizon too short");
  if (trials < 1) throw ParameterError("sync: trials must be positive");
  node_a.validate();
  node_b.validate();
}

SyncConfig SyncConfig::noiseless() const {
  SyncConfig c = *this;
  c.voltage_noise_rel = 0.0;
  c.current_noise_a = 0.0;
  c.beacon_error_std_us = 0.0;
  c.beacon_fault_prob = 0.0;
  c.node_a.timestamp_jitter = {};
  c.node_b = c.node_a;
  return c;
}

namespace {

using ojson = nlohmann::ordered_json;

ojson clock_json(const NodeClock& c) {
  return ojson{{"offset_us", c.offset_us},
               {"drift_ppm", c.drift_ppm},
               {"timestamp_jitter",
                ojson{{"std_us", c.timestamp_jitter.std_us},
                      {"outlier_prob", c.timestamp_jitter.outlier_prob},
                      {"outlier_shift_us", c.timestamp_jitter.outlier_shift_us}}}};
}

NodeClock clock_from(const nlohmann::json& j) {
  NodeClock c;
  c.offset_us = j.at("offset_us").get<double>();
  c.drift_ppm = j.at("drift_ppm").get<double>();
  const auto& t = j.at("timestamp_jitter");
  c.timestamp_jitter.std_us = t.at("std_us").get<double>();
  c.timestamp_jitter.outlier_prob = t.at("outlier_prob").get<double>();
  c.timestamp_jitter.outlier_shift_us = t.at("outlier_shift_us").get<double>();
  return c;
}

}  // namespace

void write_sync_config(std::ostream& os, const SyncConfig& c) {
  ojson j;
  j["format"] = "hawk-sync-config";
  j["version"] = 1;
  j["mains_hz"] = c.mains_hz;
  j["sample_rate_hz"] = c.sample_rate_hz;
  j["voltage_noise_rel"] = c.voltage_noise_rel;
  j["surge_amplitude_a"] = c.surge_amplitude_a;
  j["current_noise_a"] = c.current_noise_a;
  j["cable_delay_us"] = c.cable_delay_us;
  j["window_cycles"] = c.window_cycles;
  j["fit_half_width"] = c.fit_half_width;
  j["beacon_error_std_us"] = c.beacon_error_std_us;
  j["beacon_fault_prob"] = c.beacon_fault_prob;
  j["beacon_fault_us"] = c.beacon_fault_us;
  j["horizon_cycles"] = c.horizon_cycles;
  j["node_a"] = clock_json(c.node_a);
  j["node_b"] = clock_json(c.node_b);
  j["trials"] = c.trials;
  j["seed"] = c.seed;
  os << j.dump(2) << '\n';
}

SyncConfig read_sync_config(std::istream& is) {
  SyncConfig c;
  try {
    const auto j = nlohmann::json::parse(is);
    if (j.value("format", "") != "hawk-sync-config") throw FormatError("sync config: wrong format tag");
    // Missing keys keep their defaults so partial configs stay usable.
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("mains_hz", c.mains_hz);
    get("sample_rate_hz", c.sample_rate_hz);
    get("voltage_noise_rel", c.voltage_noise_rel);
    get("surge_amplitude_a", c.surge_amplitude_a);
    get("current_noise_a", c.current_noise_a);
    get("cable_delay_us", c.cable_delay_us);
    get("window_cycles", c.window_cycles);
    get("fit_half_width", c.fit_half_width);
    get("beacon_error_std_us", c.beacon_error_std_us);
    get("beacon_fault_prob", c.beacon_fault_prob);
    get("beacon_fault_us", c.beacon_fault_us);
    get("horizon_cycles", c.horizon_cycles);
    get("trials", c.trials);
    get("seed", c.seed);
    if (j.contains("node_a")) c.node_a = clock_from(j.at("node_a"));
    if (j.contains("node_b")) c.node_b = clock_from(j.at("node_b"));
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("sync config: ") + ex.what());
  }
  c.validate();
  return c;
}

SyncConfig load_sync_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParameterError("cannot open " + path.string());
  return read_sync_config(is);
}

std::vector<double> detect_zero_crossings(std::span<const double> v, int fit_half_width) {
  if (fit_half_width < 0) throw ParameterError("detect_zero_crossings: negative fit width");
  double peak = 0.0;
  for (double x : v) peak = std::max(peak, std::abs(x));
  if (v.size() < 2 || peak <= 0.0) throw DegenerateInputError("detect_zero_crossings: no zero crossing in input");
  const double arm_level = -0.1 * peak;
  const auto n = static_cast<std::ptrdiff_t>(v.size());
  std::vector<double> out;
  bool armed = v[0] <= 0.0;
  for (std::ptrdiff_t j = 0; j + 1 < n; ++j) {
    if (v[j] < arm_level) armed = true;
    if (!armed || !(v[j] <= 0.0 && v[j + 1] > 0.0)) continue;
    armed = false;
    out.push_back(static_cast<double>(j) + v[j] / (v[j] - v[j + 1]));
  }
  if (out.empty()) throw DegenerateInputError("detect_zero_crossings: no zero crossing in input");
  if (fit_half_width == 0 || out.size() < 2) return out;

  // Refine each crossing by a least-squares fit of p sin(w u) + q cos(w u)
  // around it, w from the mean crossing spacing; the rising zero sits at
  // u = -atan2(q, p) / w.
  const double period = (out.back() - out.front()) / static_cast<double>(out.size() - 1);
  const double w = 2.0 * std::numbers::pi / period;
  for (auto& x : out) {
    for (int pass = 0; pass < 2; ++pass) {
      const auto centre = static_cast<std::ptrdiff_t>(std::lround(x));
      const auto lo = std::max<std::ptrdiff_t>(0, centre - fit_half_width);
      const auto hi = std::min<std::ptrdiff_t>(n - 1, centre + fit_half_width);
      double ss = 0.0, sc = 0.0, cc = 0.0, sv = 0.0, cv = 0.0;
      for (auto k = lo; k <= hi; ++k) {
        const double u = w * (static_cast<double>(k) - x);
        const double s = std::sin(u);
        const double c = std::cos(u);
        ss += s * s;
        sc += s * c;
        cc += c * c;
        sv += s * v[k];
        cv += c * v[k];
      }
      const double det = ss * cc - sc * sc;
      if (!(det > 0.0)) break;
      const double p = (sv * cc - cv * sc) / det;
      const double q = (cv * ss - sv * sc) / det;
      if (!(p > 0.0)) break;
      x -= std::atan2(q, p) / w;
    }
  }
  return out;
}

NodeCapture capture_event(const NodeClock& clock, const SyncConfig& config, double event_time_us, double delay_us,
                          Rng& rng) {
  const double cycle = config.cycle_us();
  const double dt = config.sample_interval_us() / (1.0 + clock.drift_ppm * 1e-6);
  const double event_cycle = std::floor(event_time_us / cycle);
  const double start = (event_cycle - config.window_cycles - 0.5) * cycle;
  const double stop = event_time_us + delay_us + 0.25 * cycle;
  const double j0 = std::ceil((start - clock.offset_us) / dt);
  const auto count = static_cast<std::size_t>(std::ceil((stop - clock.offset_us) / dt) - j0);

  NodeCapture cap;
  cap.first_sample_us = clock.offset_us + j0 * dt;
  cap.sample_interval_us = dt;
  cap.voltage.resize(count);
  cap.current.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double t = clock.offset_us + (j0 + static_cast<double>(k)) * dt;
    const double cycles = t / cycle;
    const double phase = cycles - std::floor(cycles);
    double v = std::sin(2.0 * std::numbers::pi * phase);
    if (config.voltage_noise_rel > 0.0) v += config.voltage_noise_rel * gaussian(rng);
    cap.voltage[k] = v;
    // Current is only buffered from a quarter cycle before the event.
    if (t < event_time_us + delay_us - 0.25 * cycle) continue;
    double i = t >= event_time_us + delay_us ? config.surge_amplitude_a : 0.0;
    if (config.current_noise_a > 0.0) i += config.current_noise_a * gaussian(rng);
    cap.current[k] = i;
  }
  if (config.beacon_fault_prob > 0.0 && uniform01(rng) < config.beacon_fault_prob) {
    cap.beacon_error_us = uniform01(rng) < 0.5 ? -config.beacon_fault_us : config.beacon_fault_us;
  } else if (config.beacon_error_std_us > 0.0) {
    cap.beacon_error_us = config.beacon_error_std_us * gaussian(rng);
  }
  const auto& jit = clock.timestamp_jitter;
  double err = jit.std_us > 0.0 ? jit.std_us * gaussian(rng) : 0.0;
  if (jit.outlier_prob > 0.0 && uniform01(rng) < jit.outlier_prob) err += jit.outlier_shift_us;
  cap.timestamp_error_us = err;
  return cap;
}

std::optional<std::size_t> detect_surge(std::span<const double> current, double threshold) {
  for (std::size_t k = 0; k < current.size(); ++k) {
    if (current[k] >= threshold) return k;
  }
  return std::nullopt;
}

std::optional<SptTimestamp> spt_timestamp(const NodeCapture& cap, const SyncConfig& config) {
  const auto surge = detect_surge(cap.current, 0.5 * config.surge_amplitude_a);
  if (!surge) return std::nullopt;
  std::vector<double> crossings;
  try {
    crossings = detect_zero_crossings(cap.voltage, config.fit_half_width);
  } catch (const DegenerateInputError&) {
    return std::nullopt;
  }
  const double at = static_cast<double>(*surge);
  const auto end = std::upper_bound(crossings.begin(), crossings.end(), at);
  const auto m = static_cast<std::size_t>(end - crossings.begin());
  if (m < 2) return std::nullopt;

  // Crossings are evenly spaced over the short window: a line through them
  // averages out per-crossing noise and gives the local cycle length.
  double sk = 0.0, sz = 0.0, skk = 0.0, skz = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const double kd = static_cast<double>(k);
    sk += kd;
    sz += crossings[k];
    skk += kd * kd;
    skz += kd * crossings[k];
  }
  const double md = static_cast<double>(m);
  const double len = (md * skz - sk * sz) / (md * skk - sk * sk);
  const double base = (sz - len * sk) / md;
  double last = base + len * (md - 1.0);
  if (last > at) last -= len;
  double phase = at - last;
  if (phase >= len) {
    last += len;
    phase -= len;
  }

  const double cycle = config.cycle_us();
  if (std::abs(cap.beacon_error_us) > 0.5 * cycle) return std::nullopt;
  const double local_time = cap.first_sample_us + last * cap.sample_interval_us + cap.beacon_error_us;
  const auto id = std::llround(local_time / cycle);
  if (id < 0) return std::nullopt;
  return SptTimestamp{static_cast<std::uint64_t>(id), phase, len};
}

double spt_timeline_us(const SptTimestamp& ts, const SyncConfig& config) {
  return (static_cast<double>(ts.cycle_id) + ts.phase_index / ts.cycle_len) * config.cycle_us();
}

std::vector<SyncTrial> spt_align(std::span<const NodeCapture> node_a, std::span<const NodeCapture> node_b,
                                 std::span<const double> true_event_us, const SyncConfig& config) {
  if (node_a.size() != node_b.size() || node_a.size() != true_event_us.size()) {
    throw ParameterError("spt_align: capture lists differ in length");
  }
  std::vector<SyncTrial> out(node_a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& t = out[i];
    t.true_event_time_us = true_event_us[i];
    const auto a = spt_timestamp(node_a[i], config);
    const auto b = spt_timestamp(node_b[i], config);
    if (!a || !b) {
      t.flagged = true;
      continue;
    }
    t.node_a_estimate_us = spt_timeline_us(*a, config);
    t.node_b_estimate_us = spt_timeline_us(*b, config);
    t.abs_error_us = std::abs(t.node_a_estimate_us - t.node_b_estimate_us);
  }
  return out;
}

std::vector<SyncTrial> tsf_align(std::span<const NodeCapture> node_a, std::span<const NodeCapture> node_b,
                                 std::span<const double> true_event_us, const SyncConfig& config) {
  if (node_a.size() != node_b.size() || node_a.size() != true_event_us.size()) {
    throw ParameterError("tsf_align: capture lists differ in length");
  }
  auto stamp = [&](const NodeCapture& c) -> std::optional<double> {
    const auto k = detect_surge(c.current, 0.5 * config.surge_amplitude_a);
    if (!k) return std::nullopt;
    return c.first_sample_us + static_cast<double>(*k) * c.sample_interval_us + c.timestamp_error_us;
  };
  std::vector<SyncTrial> out(node_a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& t = out[i];
    t.true_event_time_us = true_event_us[i];
    const auto a = stamp(node_a[i]);
    const auto b = stamp(node_b[i]);
    if (!a || !b) {
      t.flagged = true;
      continue;
    }
    t.node_a_estimate_us = *a;
    t.node_b_estimate_us = *b;
    t.abs_error_us = std::abs(*a - *b);
  }
  return out;
}

SyncRun run_sync_sim(const SyncConfig& config, int threads) {
  config.validate();
  const auto n = static_cast<std::size_t>(config.trials);
  SyncRun run;
  run.spt.resize(n);
  run.tsf.resize(n);
  const double cycle = config.cycle_us();
  detail::parallel_chunks(n, sim::resolve_threads(threads), [&](std::uint64_t b, std::uint64_t e) {
    for (std::uint64_t i = b; i < e; ++i) {
      Rng ev = make_rng(config.seed, {i, 0});
      const auto span = config.horizon_cycles - static_cast<std::uint64_t>(config.window_cycles) - 1;
      const double c = static_cast<double>(config.window_cycles + 1) + std::floor(uniform01(ev) * static_cast<double>(span));
      const double t_event = (c + uniform01(ev)) * cycle;
      Rng ra = make_rng(config.seed, {i, 1});
      Rng rb = make_rng(config.seed, {i, 2});
      const NodeCapture ca = capture_event(config.node_a, config, t_event, 0.0, ra);
      const NodeCapture cb = capture_event(config.node_b, config, t_event, config.cable_delay_us, rb);
      const double truth[1] = {t_event};
      run.spt[i] = spt_align({&ca, 1}, {&cb, 1}, truth, config)[0];
      run.tsf[i] = tsf_align({&ca, 1}, {&cb, 1}, truth, config)[0];
    }
  });
  run.flagged = static_cast<int>(std::count_if(run.spt.begin(), run.spt.end(), [](const SyncTrial& t) { return t.flagged; }));
  return run;
}

double SyncSummary::fraction_within(double lo_us, double hi_us) const {
  if (sorted_errors.empty()) return 0.0;
  const auto lo = std::lower_bound(sorted_errors.begin(), sorted_errors.end(), lo_us);
  const auto hi = std::upper_bound(sorted_errors.begin(), sorted_errors.end(), hi_us);
  return hi > lo ? static_cast<double>(hi - lo) / static_cast<double>(sorted_errors.size()) : 0.0;
}

SyncSummary summarize(std::span<const SyncTrial> trials) {
  SyncSummary s;
  for (const auto& t : trials) {
    if (!t.flagged) s.sorted_errors.push_back(t.abs_error_us);
  }
  std::sort(s.sorted_errors.begin(), s.sorted_errors.end());
  if (!s.sorted_errors.empty()) {
    s.mean_us = std::accumulate(s.sorted_errors.begin(), s.sorted_errors.end(), 0.0) /
                static_cast<double>(s.sorted_errors.size());
    s.max_us = s.sorted_errors.back();
  }
  return s;
}

std::vector<std::pair<double, double>> error_cdf(std::span<const SyncTrial> trials) {
  const auto s = summarize(trials);
  if (s.sorted_errors.empty()) throw DegenerateInputError("error_cdf: no unflagged trials");
  std::vector<std::pair<double, double>> cdf;
  const auto n = static_cast<double>(s.sorted_errors.size());
  for (std::size_t i = 0; i < s.sorted_errors.size(); ++i) {
    if (i + 1 < s.sorted_errors.size() && s.sorted_errors[i + 1] == s.sorted_errors[i]) continue;
    cdf.emplace_back(s.sorted_errors[i], static_cast<double>(i + 1) / n);
  }
  return cdf;
}

void write_cdf_csv(std::ostream& os, std::span<const std::pair<double, double>> cdf) {
  os << "error_us,cum_frac\n";
  char buf[64];
  for (const auto& [e, f] : cdf) {
    auto r = std::to_chars(buf, buf + sizeof buf, e);
    os.write(buf, r.ptr - buf);
    os << ',';
    r = std::to_chars(buf, buf + sizeof buf, f);
    os.write(buf, r.ptr - buf);
    os << '\n';
  }
}

}  // namespace hawk::syncsim
