#include "hawk/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include "hawk/classes.hpp"
#include "hawk/error.hpp"
#include "json.hpp"

namespace hawk::eval {

std::vector<EventMatch> match_events(std::span<const TimedClass> truth, std::span<const TimedClass> predicted,
                                     int tolerance_cycles) {
  if (tolerance_cycles < 0) throw ParameterError("match_events: negative tolerance");
  struct Candidate {
    std::uint64_t distance;
    std::size_t t;
    std::size_t p;
  };
  std::vector<Candidate> cands;
  const auto tol = static_cast<std::uint64_t>(tolerance_cycles);
  std::size_t p_lo = 0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    // Both lists are sorted, so the window of reachable predictions only moves forward.
    while (p_lo < predicted.size() && predicted[p_lo].cycle + tol < truth[t].cycle) ++p_lo;
    for (std::size_t p = p_lo; p < predicted.size() && predicted[p].cycle <= truth[t].cycle + tol; ++p) {
      if (predicted[p].class_label != truth[t].class_label) continue;
      const auto d = predicted[p].cycle > truth[t].cycle ? predicted[p].cycle - truth[t].cycle
                                                         : truth[t].cycle - predicted[p].cycle;
      cands.push_back({d, t, p});
    }
  }
  std::sort(cands.begin(), cands.end(),
            [](const Candidate& a, const Candidate& b) { return std::tie(a.distance, a.t, a.p) < std::tie(b.distance, b.t, b.p); });
  std::vector<long> truth_to_pred(truth.size(), -1);
  std::vector<bool> pred_used(predicted.size(), false);
  for (const auto& c : cands) {
    if (truth_to_pred[c.t] >= 0 || pred_used[c.p]) continue;
    truth_to_pred[c.t] = static_cast<long>(c.p);
    pred_used[c.p] = true;
  }
  std::vector<EventMatch> out;
  out.reserve(truth.size() + predicted.size());
  for (std::size_t t = 0; t < truth.size(); ++t) {
    if (truth_to_pred[t] >= 0) {
      out.push_back({truth[t], predicted[static_cast<std::size_t>(truth_to_pred[t])], Outcome::TP});
    } else {
      out.push_back({truth[t], std::nullopt, Outcome::FN});
    }
  }
  for (std::size_t p = 0; p < predicted.size(); ++p) {
    if (!pred_used[p]) out.push_back({std::nullopt, predicted[p], Outcome::FP});
  }
  return out;
}

MetricReport f1_scores(std::span<const EventMatch> matches) {
  MetricReport r;
  for (const auto& m : matches) {
    switch (m.outcome) {
      case Outcome::TP: ++r.per_class[m.truth->class_label].tp; break;
      case Outcome::FN: ++r.per_class[m.truth->class_label].fn; break;
      case Outcome::FP: ++r.per_class[m.predicted->class_label].fp; break;
    }
  }
  double macro = 0.0;
  double weighted = 0.0;
  int n_supported = 0;
  int total_support = 0;
  for (auto& [cls, c] : r.per_class) {
    c.support = c.tp + c.fn;
    c.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
    c.recall = c.support > 0 ? static_cast<double>(c.tp) / c.support : 0.0;
    c.f1 = c.precision + c.recall > 0.0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
    if (c.support > 0) {
      macro += c.f1;
      weighted += c.f1 * c.support;
      ++n_supported;
      total_support += c.support;
    }
  }
  r.average_f1 = n_supported > 0 ? macro / n_supported : 0.0;
  r.weighted_f1 = total_support > 0 ? weighted / total_support : 0.0;
  return r;
}

double min_max_ratio(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo < 0.0) throw ParameterError("balance ratio: negative count");
  return *hi > 0.0 ? *lo / *hi : 0.0;
}

BalanceRatios balance_ratios(std::span<const schedule::Event> events, const std::map<int, double>& on_state_cycles) {
  std::map<int, double> on_events;
  std::map<int, double> off_events;
  std::set<int> appliances;
  for (const auto& [a, _] : on_state_cycles) appliances.insert(a);
  for (const auto& e : events) {
    appliances.insert(e.appliance_id);
    (e.action == schedule::Action::On ? on_events : off_events)[e.appliance_id] += 1.0;
  }
  std::vector<double> ev;
  std::vector<double> st;
  double on_off = 0.0;
  for (int a : appliances) {
    const double on = on_events.contains(a) ? on_events[a] : 0.0;
    const double off = off_events.contains(a) ? off_events[a] : 0.0;
    ev.push_back(on + off);
    const auto it = on_state_cycles.find(a);
    st.push_back(it == on_state_cycles.end() ? 0.0 : it->second);
    on_off += std::max(on, off) > 0.0 ? std::min(on, off) / std::max(on, off) : 0.0;
  }
  BalanceRatios r;
  r.event_br = min_max_ratio(ev);
  r.state_br = min_max_ratio(st);
  r.avg_on_off_br = appliances.empty() ? 0.0 : on_off / static_cast<double>(appliances.size());
  return r;
}

Diversity diversity(std::span<const schedule::StateMask> per_cycle_labels, double mains_hz) {
  if (!(mains_hz > 0.0)) throw ParameterError("diversity: mains frequency must be positive");
  const std::set<schedule::StateMask> unique(per_cycle_labels.begin(), per_cycle_labels.end());
  Diversity d;
  d.unique_states = static_cast<std::int64_t>(unique.size());
  const double hours = static_cast<double>(per_cycle_labels.size()) / mains_hz / 3600.0;
  d.diversity_density = hours > 0.0 ? static_cast<double>(d.unique_states) / hours : 0.0;
  return d;
}

Diversity diversity(const sim::Trace& trace) {
  std::vector<schedule::StateMask> labels;
  labels.reserve(trace.frames.size());
  for (const auto& f : trace.frames) labels.push_back(f.label);
  return diversity(labels, trace.grid.mains_hz);
}

Diversity diversity(const schedule::EventSchedule& schedule, double mains_hz) {
  if (!(mains_hz > 0.0)) throw ParameterError("diversity: mains frequency must be positive");
  const auto states = schedule.visited_states();
  const std::set<schedule::StateMask> unique(states.begin(), states.end());
  Diversity d;
  d.unique_states = static_cast<std::int64_t>(unique.size());
  const double hours = static_cast<double>(schedule.horizon_cycles()) / mains_hz / 3600.0;
  d.diversity_density = hours > 0.0 ? static_cast<double>(d.unique_states) / hours : 0.0;
  return d;
}

std::map<int, double> on_cycle_counts(const sim::Trace& trace) {
  std::map<int, double> on;
  for (int a = 0; a < trace.n_appliances; ++a) on[a] = 0.0;
  for (const auto& f : trace.frames) {
    for (int a = 0; a < trace.n_appliances; ++a) {
      if ((f.label >> a) & 1u) on[a] += 1.0;
    }
  }
  return on;
}

namespace {

double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double sq = 0.0;
  for (double v : x) sq += v * v;
  return std::sqrt(sq / static_cast<double>(x.size()));
}

// Noise current of a frame: aggregate minus all appliance currents.
std::vector<double> frame_noise(const sim::CycleFrame& f, int n, int len) {
  std::vector<double> noise(f.aggregate.begin(), f.aggregate.end());
  for (int a = 0; a < n; ++a) {
    const auto cur = f.appliance_current(a, len);
    for (int j = 0; j < len; ++j) noise[j] -= cur[j];
  }
  return noise;
}

}  // namespace

double estimate_sinr(const sim::Trace& trace, int appliance, SinrMode mode, const SinrOptions& options) {
  if (!trace.has_individual) throw ParameterError("estimate_sinr: trace has no per-appliance currents");
  if (appliance < 0 || appliance >= trace.n_appliances) throw ParameterError("estimate_sinr: appliance out of range");
  if (options.diff_interval < 1 || options.raw_window < 1) throw ParameterError("estimate_sinr: bad window");
  const int n = trace.n_appliances;
  const int len = trace.cycle_len();
  const int d = options.diff_interval;
  int settle = options.settle_cycles;
  if (settle < 0) {
    settle = appliance < static_cast<int>(trace.appliances.size()) ? trace.appliances[appliance].settle_cycles() : 0;
  }
  const double v = trace.grid.voltage_rms_v;
  const auto frames = static_cast<std::int64_t>(trace.frames.size());
  const std::uint64_t first = trace.frames.empty() ? 0 : trace.frames.front().cycle_id;

  std::vector<std::int64_t> onsets;
  for (const auto& e : sim::label_events(trace)) {
    if (e.appliance_id == appliance && e.action == schedule::Action::On) {
      onsets.push_back(static_cast<std::int64_t>(e.time_cycle - first));
    }
  }
  if (onsets.empty()) throw DegenerateInputError("estimate_sinr: appliance is never switched on");

  double signal = 0.0;
  double interference = 0.0;
  std::vector<double> diff(static_cast<std::size_t>(len));
  for (auto e : onsets) {
    if (mode == SinrMode::Raw) {
      for (std::int64_t c = e + settle; c < std::min(frames, e + settle + options.raw_window); ++c) {
        const auto& f = trace.frames[c];
        if (!((f.label >> appliance) & 1u)) break;
        signal += v * rms(f.appliance_current(appliance, len));
        for (int a = 0; a < n; ++a) {
          if (a != appliance) interference += v * rms(f.appliance_current(a, len));
        }
        interference += v * rms(frame_noise(f, n, len));
      }
    } else {
      for (std::int64_t c = std::max<std::int64_t>(e + settle, d); c < std::min(frames, e + d); ++c) {
        const auto& f = trace.frames[c];
        const auto& g = trace.frames[c - d];
        if (!((f.label >> appliance) & 1u)) break;
        for (int a = 0; a < n; ++a) {
          const auto x = f.appliance_current(a, len);
          const auto y = g.appliance_current(a, len);
          for (int j = 0; j < len; ++j) diff[j] = x[j] - y[j];
          (a == appliance ? signal : interference) += v * rms(diff);
        }
        const auto nf = frame_noise(f, n, len);
        const auto ng = frame_noise(g, n, len);
        for (int j = 0; j < len; ++j) diff[j] = nf[j] - ng[j];
        interference += v * rms(diff);
      }
    }
  }
  if (signal <= 0.0) throw DegenerateInputError("estimate_sinr: no settled ON cycles for the appliance");
  if (interference <= signal / kSinrCap) return kSinrCap;
  return signal / interference;
}

StateResult state_identify(const sim::Trace& trace, std::span<const DetectedEvent> detections) {
  StateResult r;
  const auto n = trace.frames.size();
  if (n == 0) return r;
  std::vector<DetectedEvent> sorted(detections.begin(), detections.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const DetectedEvent& a, const DetectedEvent& b) { return a.onset_cycle < b.onset_cycle; });
  r.estimate.resize(n);
  schedule::StateMask state = trace.frames.front().label;
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t cycle = trace.frames[i].cycle_id;
    while (next < sorted.size() && sorted[next].onset_cycle <= cycle) {
      const auto& det = sorted[next++];
      if (det.class_label == kIdleClass) continue;
      const int a = class_appliance(det.class_label);
      if (a >= trace.n_appliances) continue;
      if (class_action(det.class_label) == schedule::Action::On) {
        state |= schedule::StateMask{1} << a;
      } else {
        state &= ~(schedule::StateMask{1} << a);
      }
    }
    r.estimate[i] = state;
  }
  double sum = 0.0;
  int counted = 0;
  r.per_appliance_f1.assign(static_cast<std::size_t>(trace.n_appliances), 0.0);
  for (int a = 0; a < trace.n_appliances; ++a) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool truth = (trace.frames[i].label >> a) & 1u;
      const bool est = (r.estimate[i] >> a) & 1u;
      tp += truth && est;
      fp += !truth && est;
      fn += truth && !est;
    }
    if (tp + fp + fn == 0) {
      r.per_appliance_f1[a] = 1.0;
      continue;
    }
    const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    r.per_appliance_f1[a] = f1;
    sum += f1;
    ++counted;
  }
  r.average_f1 = counted > 0 ? sum / counted : 1.0;
  return r;
}

std::vector<TimedClass> truth_classes(const sim::Trace& trace) {
  std::vector<TimedClass> out;
  for (const auto& e : sim::label_events(trace)) {
    out.push_back({e.time_cycle, event_class(e.appliance_id, e.action)});
  }
  return out;
}

namespace {

using ojson = nlohmann::ordered_json;

ojson to_json(const MetricReport& r) {
  ojson j;
  ojson rows = ojson::array();
  for (const auto& [cls, c] : r.per_class) {
    rows.push_back(ojson{{"class", cls},
                         {"precision", c.precision},
                         {"recall", c.recall},
                         {"f1", c.f1},
                         {"support", c.support},
                         {"tp", c.tp},
                         {"fp", c.fp},
                         {"fn", c.fn}});
  }
  j["format"] = "hawk-metrics";
  j["version"] = 1;
  j["per_class"] = rows;
  j["average_f1"] = r.average_f1;
  j["weighted_f1"] = r.weighted_f1;
  j["event_br"] = r.event_br;
  j["state_br"] = r.state_br;
  j["avg_on_off_br"] = r.avg_on_off_br;
  j["unique_states"] = r.unique_states;
  j["diversity_density"] = r.diversity_density;
  ojson extra = ojson::object();
  for (const auto& [k, v] : r.extra) extra[k] = v;
  j["extra"] = extra;
  return j;
}

void check_ratio(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) throw FormatError(std::string("metric report: ") + what + " outside [0, 1]");
}

ClassMetrics class_from(int tp, int fp, int fn, double precision, double recall, double f1, int support) {
  ClassMetrics c{tp, fp, fn, precision, recall, f1, support};
  check_ratio(precision, "precision");
  check_ratio(recall, "recall");
  check_ratio(f1, "f1");
  if (tp < 0 || fp < 0 || fn < 0 || support != tp + fn) throw FormatError("metric report: inconsistent counts");
  return c;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("metric csv: bad number '" + s + "'");
  return v;
}

int parse_int(const std::string& s) {
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("metric csv: bad integer '" + s + "'");
  return v;
}

constexpr const char* kCsvHeader = "class,precision,recall,f1,support,tp,fp,fn";

}  // namespace

void write_report_json(std::ostream& os, const MetricReport& report) { os << to_json(report).dump(2) << '\n'; }

MetricReport read_report_json(std::istream& is) {
  MetricReport r;
  try {
    const auto j = nlohmann::json::parse(is);
    if (j.at("format").get<std::string>() != "hawk-metrics") throw FormatError("metric report: wrong format tag");
    if (j.at("version").get<int>() != 1) throw FormatError("metric report: unsupported version");
    for (const auto& row : j.at("per_class")) {
      const int cls = row.at("class").get<int>();
      r.per_class[cls] = class_from(row.at("tp").get<int>(), row.at("fp").get<int>(), row.at("fn").get<int>(),
                                    row.at("precision").get<double>(), row.at("recall").get<double>(),
                                    row.at("f1").get<double>(), row.at("support").get<int>());
    }
    r.average_f1 = j.at("average_f1").get<double>();
    r.weighted_f1 = j.at("weighted_f1").get<double>();
    r.event_br = j.at("event_br").get<double>();
    r.state_br = j.at("state_br").get<double>();
    r.avg_on_off_br = j.at("avg_on_off_br").get<double>();
    r.unique_states = j.at("unique_states").get<std::int64_t>();
    r.diversity_density = j.at("diversity_density").get<double>();
    for (const auto& [k, v] : j.at("extra").items()) r.extra[k] = v.get<double>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("metric report: ") + ex.what());
  }
  for (double v : {r.average_f1, r.weighted_f1, r.event_br, r.state_br, r.avg_on_off_br}) check_ratio(v, "ratio");
  return r;
}

void write_report_csv(std::ostream& os, const MetricReport& report) {
  os << kCsvHeader << '\n';
  for (const auto& [cls, c] : report.per_class) {
    os << cls << ',' << fmt_double(c.precision) << ',' << fmt_double(c.recall) << ',' << fmt_double(c.f1) << ','
       << c.support << ',' << c.tp << ',' << c.fp << ',' << c.fn << '\n';
  }
}

MetricReport read_report_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader) throw FormatError("metric csv: missing or wrong header");
  MetricReport r;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw FormatError("metric csv: expected 8 columns");
    const int cls = parse_int(cells[0]);
    if (r.per_class.contains(cls)) throw FormatError("metric csv: duplicate class row");
    r.per_class[cls] = class_from(parse_int(cells[5]), parse_int(cells[6]), parse_int(cells[7]),
                                  parse_double(cells[1]), parse_double(cells[2]), parse_double(cells[3]),
                                  parse_int(cells[4]));
  }
  return r;
}

void save_report(const std::filesystem::path& json_path, const MetricReport& report) {
  std::ofstream os(json_path, std::ios::binary);
  if (!os) throw ParameterError("cannot write " + json_path.string());
  write_report_json(os, report);
  auto csv = json_path;
  csv.replace_extension(".csv");
  std::ofstream cs(csv, std::ios::binary);
  if (!cs) throw ParameterError("cannot write " + csv.string());
  write_report_csv(cs, report);
}

MetricReport load_report(const std::filesystem::path& json_path) {
  std::ifstream is(json_path, std::ios::binary);
  if (!is) throw ParameterError("cannot open " + json_path.string());
  return read_report_json(is);
}

}  // namespace hawk::eval
