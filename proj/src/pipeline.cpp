#include "hawk/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>

#include "binio.hpp"
#include "hawk/classes.hpp"
#include "hawk/error.hpp"
#include "hawk/rng.hpp"
#include "json.hpp"

namespace hawk::pipeline {

double cycle_rms(std::span<const double> samples) {
  if (samples.empty()) return 0.0;
  double sq = 0.0;
  for (double x : samples) sq += x * x;
  return std::sqrt(sq / static_cast<double>(samples.size()));
}

double denoised_rms(std::span<const double> window, int drop_top, int drop_bottom) {
  if (drop_top < 0 || drop_bottom < 0) throw ParameterError("denoised_rms: negative drop counts");
  const auto l = static_cast<int>(window.size());
  if (l <= drop_top + drop_bottom) {
    throw ParameterError("denoised_rms: window of " + std::to_string(l) + " cannot drop " +
                         std::to_string(drop_top + drop_bottom) + " values");
  }
  std::vector<double> v(window.begin(), window.end());
  std::sort(v.begin(), v.end());
  const double sum = std::accumulate(v.begin() + drop_bottom, v.end() - drop_top, 0.0);
  return sum / static_cast<double>(l - drop_top - drop_bottom);
}

CycleRing::CycleRing(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw ParameterError("CycleRing: capacity must be positive");
  slots_.resize(static_cast<std::size_t>(capacity));
  ids_.resize(static_cast<std::size_t>(capacity));
}

void CycleRing::push(std::uint64_t cycle_id, std::span<const double> samples) {
  int slot;
  if (count_ < capacity_) {
    slot = (start_ + count_) % capacity_;
    ++count_;
  } else {
    slot = start_;
    start_ = (start_ + 1) % capacity_;
  }
  slots_[slot].assign(samples.begin(), samples.end());
  ids_[slot] = cycle_id;
}

std::span<const double> CycleRing::oldest() const {
  if (count_ == 0) throw ParameterError("CycleRing: empty");
  return slots_[start_];
}

std::uint64_t CycleRing::oldest_id() const {
  if (count_ == 0) throw ParameterError("CycleRing: empty");
  return ids_[start_];
}

std::uint64_t CycleRing::head_id() const {
  if (count_ == 0) throw ParameterError("CycleRing: empty");
  return ids_[(start_ + count_ - 1) % capacity_];
}

void CycleRing::clear() {
  start_ = 0;
  count_ = 0;
}

std::optional<DiffCurrent> ssdiff(CycleRing& ring, std::uint64_t cycle_id, std::span<const double> samples) {
  std::optional<DiffCurrent> out;
  if (ring.full()) {
    const auto old = ring.oldest();
    if (old.size() != samples.size()) throw ParameterError("ssdiff: cycle length changed mid-stream");
    DiffCurrent d;
    d.cycle_old = ring.oldest_id();
    d.cycle_new = cycle_id;
    d.samples.resize(samples.size());
    for (std::size_t j = 0; j < samples.size(); ++j) d.samples[j] = samples[j] - old[j];
    out = std::move(d);
  }
  ring.push(cycle_id, samples);
  return out;
}

std::optional<DiffCurrent> ssdiff(CycleRing& ring, const sim::CycleFrame& frame) {
  return ssdiff(ring, frame.cycle_id, frame.aggregate);
}

std::array<double, kHarmonics> DiffFeatureVector::magnitudes() const {
  std::array<double, kHarmonics> m{};
  for (int k = 1; k <= kHarmonics; ++k) m[k - 1] = magnitude(k);
  return m;
}

HarmonicExtractor::HarmonicExtractor(double mains_hz, double sample_rate_hz) {
  const double ratio = sample_rate_hz / mains_hz;
  if (!(mains_hz > 0.0) || std::abs(ratio - std::round(ratio)) > 1e-9) {
    throw ParameterError("harmonic_features: sample_rate must be an integer multiple of mains");
  }
  cycle_len_ = static_cast<int>(std::lround(ratio));
  if (cycle_len_ <= 2 * kHarmonics) throw ParameterError("harmonic_features: cycle too short for 10 harmonics");
  cos_.resize(static_cast<std::size_t>(kHarmonics * cycle_len_));
  sin_.resize(cos_.size());
  for (int k = 1; k <= kHarmonics; ++k) {
    for (int j = 0; j < cycle_len_; ++j) {
      // Reduce k*j modulo N first so the angle stays small and exact.
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((k * j) % cycle_len_) / cycle_len_;
      cos_[(k - 1) * cycle_len_ + j] = std::cos(angle);
      sin_[(k - 1) * cycle_len_ + j] = std::sin(angle);
    }
  }
}

DiffFeatureVector HarmonicExtractor::operator()(std::span<const double> cycle) const {
  if (static_cast<int>(cycle.size()) != cycle_len_) {
    throw ParameterError("harmonic_features: expected " + std::to_string(cycle_len_) + " samples, got " +
                         std::to_string(cycle.size()));
  }
  DiffFeatureVector f;
  for (int k = 1; k <= kHarmonics; ++k) {
    const double* c = &cos_[(k - 1) * cycle_len_];
    const double* s = &sin_[(k - 1) * cycle_len_];
    double re = 0.0;
    double im = 0.0;
    for (int j = 0; j < cycle_len_; ++j) {
      re += cycle[j] * c[j];
      im -= cycle[j] * s[j];
    }
    f.values[3 * (k - 1)] = re;
    f.values[3 * (k - 1) + 1] = im;
    f.values[3 * (k - 1) + 2] = std::hypot(re, im);
  }
  return f;
}

DiffFeatureVector harmonic_features(std::span<const double> diff, double mains_hz, double sample_rate_hz) {
  return HarmonicExtractor(mains_hz, sample_rate_hz)(diff);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa <= 0.0 || bb <= 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

std::vector<double> rms_series(const sim::Trace& trace) {
  std::vector<double> r;
  r.reserve(trace.frames.size());
  for (const auto& f : trace.frames) r.push_back(cycle_rms(f.aggregate));
  return r;
}

namespace {

// Cycle RMS of the signal the locator watches for appliance `a`: its own
// current when the trace carries it, else the aggregate.
std::vector<double> locator_series(const sim::Trace& trace, int appliance, const std::vector<double>& aggregate_rms) {
  if (trace.frames.empty() || trace.frames.front().individual_rms.empty()) return aggregate_rms;
  std::vector<double> r;
  r.reserve(trace.frames.size());
  for (const auto& f : trace.frames) r.push_back(f.individual_rms[appliance]);
  return r;
}

}  // namespace

LocateResult locate_obvious_events(const sim::Trace& trace, std::span<const double> thresholds,
                                   const LocatorParams& params) {
  if (params.rms_window <= params.drop_top + params.drop_bottom) {
    throw ParameterError("locate_obvious_events: rms window too short for the drop counts");
  }
  const auto truth = sim::label_events(trace);
  const auto aggregate_rms = rms_series(trace);
  std::map<int, std::vector<double>> per_appliance;
  const auto n = static_cast<std::int64_t>(trace.frames.size());
  const std::int64_t l = params.rms_window;
  const std::uint64_t first_id = trace.frames.empty() ? 0 : trace.frames.front().cycle_id;

  LocateResult out;
  for (const auto& e : truth) {
    const int cls = event_class(e.appliance_id, e.action);
    if (cls >= static_cast<int>(thresholds.size())) throw ParameterError("locate_obvious_events: missing threshold");
    auto it = per_appliance.find(e.appliance_id);
    if (it == per_appliance.end()) {
      it = per_appliance.emplace(e.appliance_id, locator_series(trace, e.appliance_id, aggregate_rms)).first;
    }
    const auto& r = it->second;
    const auto centre = static_cast<std::int64_t>(e.time_cycle - first_id);
    const std::int64_t lo = std::max<std::int64_t>(l, centre - params.search_radius);
    const std::int64_t hi = std::min<std::int64_t>(n - l, centre + params.search_radius);
    bool found = false;
    for (std::int64_t i = lo; i <= hi; ++i) {
      const double before = denoised_rms(std::span<const double>(r).subspan(i - l, l), params.drop_top, params.drop_bottom);
      const double after = denoised_rms(std::span<const double>(r).subspan(i, l), params.drop_top, params.drop_bottom);
      if (std::abs(after - before) >= thresholds[cls]) {
        out.located.push_back({e.time_cycle, first_id + static_cast<std::uint64_t>(i), e.appliance_id, e.action, cls});
        found = true;
        break;
      }
    }
    if (!found) ++out.dropped;
  }
  return out;
}

std::vector<DiffCurrent> augment_pairs(const sim::Trace& trace, std::uint64_t event_cycle, int n_side, int margin,
                                       bool* reduced) {
  if (n_side < 1 || margin < 0) throw ParameterError("augment_pairs: n_side must be positive");
  const auto n = static_cast<std::int64_t>(trace.frames.size());
  if (n == 0) return {};
  const std::uint64_t first_id = trace.frames.front().cycle_id;
  const auto event = static_cast<std::int64_t>(event_cycle - first_id);

  // stable(c): no label change within the last `margin` cycles up to c.
  auto changed_at = [&](std::int64_t c) { return c > 0 && trace.frames[c].label != trace.frames[c - 1].label; };
  auto stable = [&](std::int64_t c) {
    for (std::int64_t k = std::max<std::int64_t>(1, c - margin + 1); k <= c; ++k) {
      if (changed_at(k)) return false;
    }
    return true;
  };

  std::vector<std::int64_t> before;
  std::int64_t c = std::min(event - margin - 1, n - 1);
  while (c >= 0 && !stable(c) && c > event - 2 * margin - 2) --c;
  for (; c >= 0 && static_cast<int>(before.size()) < n_side; --c) {
    if (!stable(c)) break;
    if (!before.empty() && trace.frames[c].label != trace.frames[before.front()].label) break;
    before.push_back(c);
  }
  std::vector<std::int64_t> after;
  c = std::max<std::int64_t>(0, event + margin);
  while (c < n && !stable(c) && c < event + 2 * margin + 2) ++c;
  for (; c < n && static_cast<int>(after.size()) < n_side; ++c) {
    if (!stable(c)) break;
    if (!after.empty() && trace.frames[c].label != trace.frames[after.front()].label) break;
    after.push_back(c);
  }
  if (reduced) {
    *reduced = static_cast<int>(before.size()) < n_side || static_cast<int>(after.size()) < n_side;
  }

  std::vector<DiffCurrent> out;
  out.reserve(before.size() * after.size());
  for (auto a : after) {
    const auto& fa = trace.frames[a].aggregate;
    for (auto b : before) {
      const auto& fb = trace.frames[b].aggregate;
      DiffCurrent d;
      d.cycle_old = trace.frames[b].cycle_id;
      d.cycle_new = trace.frames[a].cycle_id;
      d.samples.resize(fa.size());
      for (std::size_t j = 0; j < fa.size(); ++j) d.samples[j] = fa[j] - fb[j];
      out.push_back(std::move(d));
    }
  }
  return out;
}

std::vector<std::size_t> filter_features(std::span<const DiffFeatureVector> candidates,
                                         const DiffFeatureVector& reference, double min_similarity) {
  const auto ref = reference.magnitudes();
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto m = candidates[i].magnitudes();
    if (cosine_similarity(m, ref) >= min_similarity) kept.push_back(i);
  }
  return kept;
}

std::vector<DiffCurrent> filter_samples(const std::vector<DiffCurrent>& candidates, const DiffFeatureVector& reference,
                                        double min_similarity, double mains_hz, double sample_rate_hz) {
  const HarmonicExtractor fx(mains_hz, sample_rate_hz);
  std::vector<DiffFeatureVector> feats;
  feats.reserve(candidates.size());
  for (const auto& c : candidates) feats.push_back(fx(c.samples));
  std::vector<DiffCurrent> out;
  for (auto i : filter_features(feats, reference, min_similarity)) out.push_back(candidates[i]);
  return out;
}

std::vector<DiffFeatureVector> reference_signatures(const sim::Trace& trace,
                                                    const std::vector<sim::ApplianceSpec>& catalog) {
  const HarmonicExtractor fx(trace.grid.mains_hz, trace.grid.sample_rate_hz);
  const int len = trace.cycle_len();
  std::vector<DiffFeatureVector> refs(static_cast<std::size_t>(trace.n_appliances));
  std::vector<bool> have(refs.size(), false);
  if (trace.has_individual) {
    // Average the spectra of settled ON cycles (ON for longer than the settle time).
    std::vector<std::vector<double>> sum(refs.size(), std::vector<double>(static_cast<std::size_t>(len), 0.0));
    std::vector<int> count(refs.size(), 0);
    std::vector<int> on_run(refs.size(), 0);
    for (const auto& f : trace.frames) {
      for (int a = 0; a < trace.n_appliances; ++a) {
        on_run[a] = ((f.label >> a) & 1u) ? on_run[a] + 1 : 0;
        const int settle = a < static_cast<int>(catalog.size()) ? catalog[a].settle_cycles() : 20;
        if (on_run[a] > settle + 2 && count[a] < 200) {
          const auto cur = f.appliance_current(a, len);
          for (int j = 0; j < len; ++j) sum[a][j] += cur[j];
          ++count[a];
        }
      }
    }
    for (std::size_t a = 0; a < refs.size(); ++a) {
      if (count[a] == 0) continue;
      for (auto& x : sum[a]) x /= count[a];
      refs[a] = fx(sum[a]);
      have[a] = true;
    }
  }
  for (std::size_t a = 0; a < refs.size(); ++a) {
    if (have[a]) continue;
    if (a >= catalog.size()) throw ParameterError("reference_signatures: catalog has fewer appliances than the trace");
    refs[a] = fx(sim::steady_waveform(catalog[a], trace.grid));
  }
  return refs;
}

TrainingSet prepare_training_set(const sim::Trace& trace, const std::vector<sim::ApplianceSpec>& catalog,
                                 const PrepareConfig& config, const std::vector<schedule::Event>* selection) {
  if (static_cast<int>(catalog.size()) < trace.n_appliances) {
    throw ParameterError("prepare: catalog has fewer appliances than the trace");
  }
  if (config.diff_interval < 1) throw ParameterError("prepare: diff_interval must be positive");
  const int n_classes = n_event_classes(trace.n_appliances);
  const HarmonicExtractor fx(trace.grid.mains_hz, trace.grid.sample_rate_hz);

  std::vector<double> thresholds(static_cast<std::size_t>(n_classes), 0.0);
  for (int a = 0; a < trace.n_appliances; ++a) {
    const double level = cycle_rms(sim::steady_waveform(catalog[a], trace.grid));
    // A linear ramp over t cycles moves an l-cycle mean by only l/t of the level.
    double ramp = 1.0;
    if (catalog[a].transient_shape == sim::TransientShape::Ramp && catalog[a].transient_cycles > config.locator.rms_window) {
      ramp = static_cast<double>(config.locator.rms_window) / catalog[a].transient_cycles;
    }
    thresholds[event_class(a, schedule::Action::On)] = config.threshold_fraction * level * ramp;
    thresholds[event_class(a, schedule::Action::Off)] = config.threshold_fraction * level;
  }
  auto locator = config.locator;
  if (locator.search_radius <= 0) locator.search_radius = 2 * config.diff_interval;
  const auto located = locate_obvious_events(trace, thresholds, locator);
  const auto refs = reference_signatures(trace, catalog);

  TrainingSet set;
  set.n_classes = n_classes;
  auto& rep = set.report;
  rep.located = static_cast<int>(located.located.size());
  rep.dropped = located.dropped;

  std::map<std::pair<std::uint64_t, int>, const LocatedEvent*> by_label;
  for (const auto& e : located.located) by_label[{e.label_cycle, e.appliance}] = &e;
  std::vector<const LocatedEvent*> chosen;
  if (selection) {
    for (const auto& e : *selection) {
      const auto it = by_label.find({e.time_cycle, e.appliance_id});
      if (it != by_label.end()) chosen.push_back(it->second);
    }
  } else {
    for (const auto& e : located.located) chosen.push_back(&e);
  }
  rep.events = static_cast<int>(chosen.size());

  for (const auto* e : chosen) {
    const int margin = catalog[e->appliance].settle_cycles() + config.guard;
    bool reduced = false;
    const auto pairs = augment_pairs(trace, e->cycle, config.n_side, margin, &reduced);
    if (reduced) ++rep.reduced;
    std::vector<DiffFeatureVector> feats;
    feats.reserve(pairs.size());
    for (const auto& p : pairs) feats.push_back(fx(p.samples));
    const auto kept = filter_features(feats, refs[e->appliance], config.min_similarity);
    rep.filtered_out += static_cast<int>(feats.size() - kept.size());
    if (kept.empty()) ++rep.empty_after_filter;
    for (auto i : kept) set.samples.push_back({feats[i], static_cast<std::uint16_t>(e->class_label)});
  }

  // IDLE: differentials whose D-cycle span holds no label change.
  const int d = config.diff_interval;
  const auto n = static_cast<std::int64_t>(trace.frames.size());
  std::vector<std::int64_t> idle;
  std::int64_t last_change = -1;
  for (std::int64_t i = 1; i < n; ++i) {
    if (trace.frames[i].label != trace.frames[i - 1].label) last_change = i;
    if (i >= d && last_change <= i - d) idle.push_back(i);
  }
  Rng rng = make_rng(config.seed, {0x1D1Eull});
  shuffle(idle, rng);
  const auto want = std::min<std::size_t>(idle.size(), static_cast<std::size_t>(config.idle_per_event) * chosen.size());
  idle.resize(want);
  std::sort(idle.begin(), idle.end());
  std::vector<double> diff(static_cast<std::size_t>(trace.cycle_len()));
  for (auto i : idle) {
    const auto& a = trace.frames[i].aggregate;
    const auto& b = trace.frames[i - d].aggregate;
    for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = a[j] - b[j];
    set.samples.push_back({fx(diff), static_cast<std::uint16_t>(kIdleClass)});
  }
  rep.idle_samples = static_cast<int>(want);
  return set;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

void save_training_set(const std::filesystem::path& path, const TrainingSet& set,
                       const std::vector<sim::ApplianceSpec>& catalog) {
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParameterError("cannot write " + path.string());
    for (const auto& s : set.samples) {
      binio::put<std::uint16_t>(os, s.class_label);
      for (double v : s.features.values) binio::put<float>(os, static_cast<float>(v));
    }
  }
  using ojson = nlohmann::ordered_json;
  ojson side;
  side["format"] = "hawk-training-samples";
  side["version"] = 1;
  side["feature_dim"] = kFeatureDim;
  side["n_classes"] = set.n_classes;
  side["count"] = set.samples.size();
  ojson labels = ojson::array();
  labels.push_back(ojson{{"class", kIdleClass}, {"appliance", nullptr}, {"name", "IDLE"}, {"action", "idle"}});
  for (int c = 1; c < set.n_classes; ++c) {
    const int a = class_appliance(c);
    labels.push_back(ojson{{"class", c},
                           {"appliance", a},
                           {"name", a < static_cast<int>(catalog.size()) ? catalog[a].name : std::string()},
                           {"action", class_action(c) == schedule::Action::On ? "on" : "off"}});
  }
  side["labels"] = labels;
  const auto& r = set.report;
  side["report"] = ojson{{"events", r.events},       {"located", r.located},
                         {"dropped", r.dropped},     {"reduced", r.reduced},
                         {"filtered_out", r.filtered_out}, {"empty_after_filter", r.empty_after_filter},
                         {"idle_samples", r.idle_samples}};
  std::ofstream js(sidecar_path(path), std::ios::binary);
  if (!js) throw ParameterError("cannot write " + sidecar_path(path).string());
  js << side.dump(2) << '\n';
}

TrainingSet load_training_set(const std::filesystem::path& path) {
  std::ifstream js(sidecar_path(path), std::ios::binary);
  if (!js) throw ParameterError("missing training-sample sidecar " + sidecar_path(path).string());
  TrainingSet set;
  std::size_t count = 0;
  try {
    const auto side = nlohmann::json::parse(js);
    if (side.value("format", "") != "hawk-training-samples") throw FormatError("training samples: bad sidecar");
    if (side.at("feature_dim").get<int>() != kFeatureDim) throw FormatError("training samples: feature_dim mismatch");
    set.n_classes = side.at("n_classes").get<int>();
    count = side.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("training samples: ") + ex.what());
  }
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParameterError("cannot open " + path.string());
  constexpr std::uintmax_t record = 2 + 4 * kFeatureDim;
  const auto size = std::filesystem::file_size(path);
  if (size != count * record) throw FormatError("training samples: file size does not match the sidecar count");
  set.samples.resize(count);
  for (auto& s : set.samples) {
    s.class_label = binio::get<std::uint16_t>(is, "class_label");
    if (s.class_label >= set.n_classes) throw FormatError("training samples: label out of range");
    for (auto& v : s.features.values) v = binio::get<float>(is, "features");
  }
  return set;
}

}  // namespace hawk::pipeline
