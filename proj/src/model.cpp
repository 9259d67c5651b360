#include "hawk/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "binio.hpp"
#include "hawk/classes.hpp"
#include "hawk/error.hpp"
#include "hawk/rng.hpp"
#include "json.hpp"

namespace hawk::model {

int Classifier::predict(std::span<const double> features) const {
  const int k = n_classes();
  if (k <= 0) throw DegenerateInputError("predict: classifier is not trained");
  std::vector<double> s(static_cast<std::size_t>(k));
  scores(features, s);
  int best = 0;
  for (int c = 1; c < k; ++c) {
    if (s[c] > s[best]) best = c;
  }
  return best;
}

void GbdtConfig::validate() const {
  if (n_trees < 1) throw ParameterError("gbdt: n_trees must be positive");
  if (max_depth < 1 || max_depth > 16) throw ParameterError("gbdt: max_depth must be in [1, 16]");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ParameterError("gbdt: learning_rate must be in (0, 1]");
  if (!(l2_lambda >= 0.0) || !(min_child_weight >= 0.0) || !(min_split_gain >= 0.0)) {
    throw ParameterError("gbdt: regularisation terms must be non-negative");
  }
  if (!(subsample > 0.0 && subsample <= 1.0)) throw ParameterError("gbdt: subsample must be in (0, 1]");
}

double Tree::eval(std::span<const double> x) const {
  std::int32_t n = 0;
  while (nodes[n].feature >= 0) {
    const auto& node = nodes[n];
    n = x[node.feature] < node.threshold ? node.left : node.right;
  }
  return nodes[n].value;
}

namespace {

struct Split {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  double g_left = 0.0;
  double h_left = 0.0;
};

// Builds one regression tree on (g, h) for the rows with node_of[i] == 0.
class TreeBuilder {
 public:
  TreeBuilder(std::span<const double> x, int dim, const std::vector<std::vector<std::int32_t>>& order,
              const std::vector<std::vector<double>>& sorted_values, const GbdtConfig& config)
      : x_(x), dim_(dim), order_(order), sorted_(sorted_values), config_(config) {}

  Tree build(const std::vector<double>& g, const std::vector<double>& h, std::vector<std::int32_t>& node_of) {
    Tree tree;
    struct Stats {
      double g = 0.0;
      double h = 0.0;
    };
    std::vector<Stats> stats(1);
    tree.nodes.emplace_back();
    for (std::size_t i = 0; i < node_of.size(); ++i) {
      if (node_of[i] == 0) {
        stats[0].g += g[i];
        stats[0].h += h[i];
      }
    }
    std::vector<std::int32_t> frontier{0};
    const double lambda = config_.l2_lambda;
    auto score = [lambda](double gs, double hs) { return gs * gs / (hs + lambda); };

    for (int depth = 0; depth < config_.max_depth && !frontier.empty(); ++depth) {
      std::vector<std::int32_t> slot_of(tree.nodes.size(), -1);
      for (std::size_t s = 0; s < frontier.size(); ++s) slot_of[frontier[s]] = static_cast<std::int32_t>(s);
      const std::size_t n_slots = frontier.size();
      std::vector<Split> best(n_slots);
      std::vector<double> gl(n_slots), hl(n_slots), last(n_slots);
      std::vector<char> seen(n_slots);

      for (int f = 0; f < dim_; ++f) {
        std::fill(gl.begin(), gl.end(), 0.0);
        std::fill(hl.begin(), hl.end(), 0.0);
        std::fill(seen.begin(), seen.end(), 0);
        const auto& ord = order_[f];
        const auto& vals = sorted_[f];
        for (std::size_t r = 0; r < ord.size(); ++r) {
          const auto i = ord[r];
          const auto n = node_of[i];
          if (n < 0) continue;
          const auto s = slot_of[n];
          if (s < 0) continue;
          const double v = vals[r];
          if (seen[s] && v > last[s]) {
            const auto& st = stats[n];
            const double hr = st.h - hl[s];
            if (hl[s] >= config_.min_child_weight && hr >= config_.min_child_weight) {
              const double gain =
                  0.5 * (score(gl[s], hl[s]) + score(st.g - gl[s], hr) - score(st.g, st.h)) - config_.min_split_gain;
              if (gain > best[s].gain + 1e-12) {
                best[s] = {gain, f, last[s] + 0.5 * (v - last[s]), gl[s], hl[s]};
                // Midpoints can round onto the upper value; keep x < threshold exact for the left side.
                if (!(best[s].threshold > last[s])) best[s].threshold = v;
              }
            }
          }
          gl[s] += g[i];
          hl[s] += h[i];
          last[s] = v;
          seen[s] = 1;
        }
      }

      std::vector<std::int32_t> next;
      for (std::size_t s = 0; s < n_slots; ++s) {
        const auto n = frontier[s];
        if (best[s].feature < 0) continue;
        const auto l = static_cast<std::int32_t>(tree.nodes.size());
        tree.nodes[n].feature = best[s].feature;
        tree.nodes[n].threshold = best[s].threshold;
        tree.nodes[n].left = l;
        tree.nodes[n].right = l + 1;
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        stats.push_back({best[s].g_left, best[s].h_left});
        stats.push_back({stats[n].g - best[s].g_left, stats[n].h - best[s].h_left});
        next.push_back(l);
        next.push_back(l + 1);
      }
      for (std::size_t i = 0; i < node_of.size(); ++i) {
        const auto n = node_of[i];
        if (n < 0) continue;
        const auto& node = tree.nodes[n];
        if (node.feature < 0) {
          node_of[i] = -1;
        } else {
          node_of[i] = x_[i * dim_ + node.feature] < node.threshold ? node.left : node.right;
        }
      }
      frontier = std::move(next);
    }
    for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
      if (tree.nodes[n].feature < 0) {
        tree.nodes[n].value = -config_.learning_rate * stats[n].g / (stats[n].h + lambda);
      }
    }
    return tree;
  }

 private:
  std::span<const double> x_;
  int dim_;
  const std::vector<std::vector<std::int32_t>>& order_;
  const std::vector<std::vector<double>>& sorted_;
  const GbdtConfig& config_;
};

}  // namespace

GbdtClassifier GbdtClassifier::train(std::span<const pipeline::TrainingSample> samples, int n_classes,
                                     const GbdtConfig& config) {
  std::vector<double> x;
  std::vector<int> y;
  x.reserve(samples.size() * pipeline::kFeatureDim);
  y.reserve(samples.size());
  for (const auto& s : samples) {
    x.insert(x.end(), s.features.values.begin(), s.features.values.end());
    y.push_back(s.class_label);
  }
  return train(x, pipeline::kFeatureDim, y, n_classes, config);
}

GbdtClassifier GbdtClassifier::train(std::span<const double> features, int dim, std::span<const int> labels,
                                     int n_classes, const GbdtConfig& config) {
  config.validate();
  if (dim < 1) throw ParameterError("gbdt: feature dimension must be positive");
  if (n_classes < 2) throw ParameterError("gbdt: need at least two classes");
  const std::size_t n = labels.size();
  if (features.size() != n * static_cast<std::size_t>(dim)) throw ParameterError("gbdt: feature matrix shape mismatch");
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (int l : labels) {
    if (l < 0 || l >= n_classes) throw ParameterError("gbdt: label " + std::to_string(l) + " out of range");
    ++counts[l];
  }
  const auto present = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
  if (present < 2) throw DegenerateInputError("gbdt: training data holds fewer than two classes");
  for (double v : features) {
    if (!std::isfinite(v)) throw ParameterError("gbdt: non-finite feature value");
  }

  GbdtClassifier model;
  model.n_classes_ = n_classes;
  model.feature_dim_ = dim;
  model.config_ = config;
  model.base_.resize(static_cast<std::size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) {
    model.base_[c] = std::log((static_cast<double>(counts[c]) + 1e-3) / (static_cast<double>(n) + 1e-3 * n_classes));
  }

  std::vector<std::vector<std::int32_t>> order(static_cast<std::size_t>(dim));
  std::vector<std::vector<double>> sorted(static_cast<std::size_t>(dim));
  for (int f = 0; f < dim; ++f) {
    auto& o = order[f];
    o.resize(n);
    std::iota(o.begin(), o.end(), 0);
    std::stable_sort(o.begin(), o.end(), [&](std::int32_t a, std::int32_t b) {
      return features[a * dim + f] < features[b * dim + f];
    });
    sorted[f].resize(n);
    for (std::size_t r = 0; r < n; ++r) sorted[f][r] = features[o[r] * dim + f];
  }

  const auto k = static_cast<std::size_t>(n_classes);
  std::vector<double> score(n * k);
  for (std::size_t i = 0; i < n; ++i) std::copy(model.base_.begin(), model.base_.end(), score.begin() + i * k);
  std::vector<double> prob(n * k);
  std::vector<double> g(n), h(n);
  std::vector<std::int32_t> node_of(n);
  std::vector<char> in_bag(n, 1);
  TreeBuilder builder(features, dim, order, sorted, config);

  for (int round = 0; round < config.n_trees; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* s = &score[i * k];
      const double m = *std::max_element(s, s + k);
      double z = 0.0;
      for (std::size_t c = 0; c < k; ++c) z += prob[i * k + c] = std::exp(s[c] - m);
      for (std::size_t c = 0; c < k; ++c) prob[i * k + c] /= z;
    }
    if (config.subsample < 1.0) {
      Rng rng = make_rng(config.seed, {static_cast<std::uint64_t>(round)});
      for (auto& b : in_bag) b = uniform01(rng) < config.subsample ? 1 : 0;
    }
    std::vector<Tree> round_trees(k);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        round_trees[c].nodes.emplace_back();
        continue;
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double p = prob[i * k + c];
        g[i] = p - (labels[i] == static_cast<int>(c) ? 1.0 : 0.0);
        h[i] = std::max(p * (1.0 - p), 1e-16);
        node_of[i] = in_bag[i] ? 0 : -1;
      }
      round_trees[c] = builder.build(g, h, node_of);
      const auto& tree = round_trees[c];
      for (std::size_t i = 0; i < n; ++i) {
        score[i * k + c] += tree.eval(features.subspan(i * dim, static_cast<std::size_t>(dim)));
      }
    }
    model.trees_.push_back(std::move(round_trees));
  }
  return model;
}

void GbdtClassifier::scores(std::span<const double> features, std::span<double> out) const {
  if (!trained()) throw DegenerateInputError("predict: classifier is not trained");
  if (static_cast<int>(features.size()) != feature_dim_) throw ParameterError("predict: feature dimension mismatch");
  if (static_cast<int>(out.size()) != n_classes_) throw ParameterError("predict: score buffer size mismatch");
  std::copy(base_.begin(), base_.end(), out.begin());
  for (const auto& round : trees_) {
    for (int c = 0; c < n_classes_; ++c) out[c] += round[c].eval(features);
  }
}

VoteState::VoteState(int window, std::vector<int> thresholds) : window_(window), thresholds_(std::move(thresholds)) {
  if (window < 1) throw ParameterError("VoteState: window must be positive");
  if (thresholds_.empty()) throw ParameterError("VoteState: no thresholds");
  for (int t : thresholds_) {
    if (t < 1 || t > window) throw ParameterError("VoteState: thresholds must lie in [1, window]");
  }
  counts_.assign(thresholds_.size(), 0);
}

void VoteState::reset() {
  labels_.clear();
  std::fill(counts_.begin(), counts_.end(), 0);
  refractory_ = 0;
}

std::optional<EventReport> VoteState::step(int predicted, std::uint64_t cycle_id) {
  if (predicted < 0 || predicted >= static_cast<int>(counts_.size())) {
    throw ParameterError("vote_step: class label out of range");
  }
  if (refractory_ > 0) {
    --refractory_;
    return std::nullopt;
  }
  labels_.emplace_back(predicted, cycle_id);
  ++counts_[predicted];
  if (static_cast<int>(labels_.size()) > window_) {
    --counts_[labels_.front().first];
    labels_.pop_front();
  }
  int best = -1;
  for (int c = 0; c < static_cast<int>(counts_.size()); ++c) {
    if (c == kIdleClass || counts_[c] < thresholds_[c]) continue;
    if (best < 0 || counts_[c] > counts_[best]) best = c;
  }
  if (best < 0) return std::nullopt;
  EventReport r;
  r.cycle_id = cycle_id;
  r.class_label = best;
  r.vote_count = counts_[best];
  r.appliance_id = class_appliance(best);
  r.action = class_action(best);
  for (const auto& [label, cycle] : labels_) {
    if (label == best) {
      r.onset_cycle = cycle;
      break;
    }
  }
  labels_.clear();
  std::fill(counts_.begin(), counts_.end(), 0);
  refractory_ = window_;
  return r;
}

PredictionStream predict_stream(const sim::Trace& trace, const Classifier& classifier, int diff_interval) {
  if (diff_interval < 1) throw ParameterError("predict_stream: diff_interval must be positive");
  const pipeline::HarmonicExtractor fx(trace.grid.mains_hz, trace.grid.sample_rate_hz);
  PredictionStream out;
  const auto n = trace.frames.size();
  out.cycle_ids.reserve(n);
  out.labels.reserve(n);
  std::vector<double> diff(static_cast<std::size_t>(trace.cycle_len()));
  for (std::size_t i = 0; i < n; ++i) {
    out.cycle_ids.push_back(trace.frames[i].cycle_id);
    if (i < static_cast<std::size_t>(diff_interval)) {
      out.labels.push_back(kIdleClass);
      continue;
    }
    const auto& a = trace.frames[i].aggregate;
    const auto& b = trace.frames[i - diff_interval].aggregate;
    for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = a[j] - b[j];
    out.labels.push_back(classifier.predict(fx(diff)));
  }
  return out;
}

std::vector<eval::DetectedEvent> single_class_reports(const PredictionStream& stream, int class_label, int threshold,
                                                      int window) {
  if (threshold < 1 || threshold > window) throw ParameterError("single_class_reports: threshold outside [1, window]");
  std::vector<eval::DetectedEvent> out;
  std::deque<std::pair<bool, std::uint64_t>> win;
  int count = 0;
  int refractory = 0;
  for (std::size_t i = 0; i < stream.labels.size(); ++i) {
    if (refractory > 0) {
      --refractory;
      continue;
    }
    const bool hit = stream.labels[i] == class_label;
    win.emplace_back(hit, stream.cycle_ids[i]);
    count += hit;
    if (static_cast<int>(win.size()) > window) {
      count -= win.front().first;
      win.pop_front();
    }
    if (count >= threshold) {
      std::uint64_t onset = stream.cycle_ids[i];
      for (const auto& [h, c] : win) {
        if (h) {
          onset = c;
          break;
        }
      }
      out.push_back({stream.cycle_ids[i], onset, class_label});
      win.clear();
      count = 0;
      refractory = window;
    }
  }
  return out;
}

namespace {

double class_f1(std::span<const eval::TimedClass> truth_c, const std::vector<eval::DetectedEvent>& reports,
                int tolerance) {
  std::vector<eval::TimedClass> pred;
  pred.reserve(reports.size());
  for (const auto& r : reports) pred.push_back({r.onset_cycle, r.class_label});
  std::sort(pred.begin(), pred.end(), [](const auto& a, const auto& b) { return a.cycle < b.cycle; });
  int tp = 0;
  for (const auto& m : eval::match_events(truth_c, pred, tolerance)) tp += m.outcome == eval::Outcome::TP;
  const int denom = static_cast<int>(truth_c.size() + pred.size());
  return denom > 0 ? 2.0 * tp / denom : 0.0;
}

}  // namespace

Calibration calibrate_thresholds(const PredictionStream& stream, std::span<const eval::TimedClass> truth,
                                 int n_classes, int window, int tolerance_cycles) {
  if (window < 1) throw ParameterError("calibrate_thresholds: window must be positive");
  Calibration cal;
  cal.thresholds.assign(static_cast<std::size_t>(n_classes), (window + 1) / 2);
  cal.train_f1.assign(static_cast<std::size_t>(n_classes), 0.0);
  cal.thresholds[kIdleClass] = window;
  for (int c = 1; c < n_classes; ++c) {
    std::vector<eval::TimedClass> truth_c;
    for (const auto& t : truth) {
      if (t.class_label == c) truth_c.push_back(t);
    }
    if (truth_c.empty()) {
      ++cal.absent_classes;
      continue;
    }
    double best_f1 = -1.0;
    for (int t = 1; t <= window; ++t) {
      const double f1 = class_f1(truth_c, single_class_reports(stream, c, t, window), tolerance_cycles);
      if (f1 >= best_f1) {
        best_f1 = f1;
        cal.thresholds[c] = t;
      }
    }
    cal.train_f1[c] = best_f1;
  }
  return cal;
}

Calibration calibrate_thresholds(const Classifier& classifier, const sim::Trace& training_trace, int window,
                                 int tolerance_cycles) {
  const auto stream = predict_stream(training_trace, classifier, window);
  const auto truth = eval::truth_classes(training_trace);
  return calibrate_thresholds(stream, truth, classifier.n_classes(), window, tolerance_cycles);
}

struct ModelIo {
  static void write(std::ostream& os, const EventModel& m) {
    const auto& clf = m.classifier;
    if (!clf.trained()) throw DegenerateInputError("save_model: classifier is not trained");
    using ojson = nlohmann::ordered_json;
    ojson meta;
    meta["format"] = "hawk-model";
    meta["classifier"] = "gbdt-softmax";
    meta["n_classes"] = clf.n_classes_;
    meta["feature_dim"] = clf.feature_dim_;
    meta["diff_interval"] = m.diff_interval;
    meta["mains_hz"] = m.mains_hz;
    meta["sample_rate_hz"] = m.sample_rate_hz;
    meta["thresholds"] = m.thresholds;
    meta["appliance_names"] = m.appliance_names;
    const auto& c = clf.config_;
    meta["config"] = ojson{{"n_trees", c.n_trees},
                           {"max_depth", c.max_depth},
                           {"learning_rate", c.learning_rate},
                           {"l2_lambda", c.l2_lambda},
                           {"min_child_weight", c.min_child_weight},
                           {"min_split_gain", c.min_split_gain},
                           {"subsample", c.subsample},
                           {"seed", c.seed}};
    const std::string text = meta.dump();
    binio::put_magic(os, "HWKM");
    binio::put<std::uint16_t>(os, kModelMajor);
    binio::put<std::uint16_t>(os, kModelMinor);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(clf.trees_.size()));
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(clf.n_classes_));
    for (double b : clf.base_) binio::put<double>(os, b);
    for (const auto& round : clf.trees_) {
      for (const auto& tree : round) {
        binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(tree.nodes.size()));
        for (const auto& node : tree.nodes) {
          binio::put<std::int32_t>(os, node.feature);
          binio::put<double>(os, node.threshold);
          binio::put<std::int32_t>(os, node.left);
          binio::put<std::int32_t>(os, node.right);
          binio::put<double>(os, node.value);
        }
      }
    }
    if (!os) throw ParameterError("save_model: write failed");
  }

  static EventModel read(std::istream& is) {
    binio::expect_magic(is, "HWKM", "HWKM model");
    const auto major = binio::get<std::uint16_t>(is, "version");
    binio::get<std::uint16_t>(is, "version");
    if (major != kModelMajor) {
      throw FormatError("HWKM model: unsupported major version " + std::to_string(major));
    }
    const auto len = binio::get<std::uint32_t>(is, "metadata length");
    if (len > (1u << 24)) throw FormatError("HWKM model: metadata too large");
    std::string text(len, '\0');
    is.read(text.data(), len);
    if (is.gcount() != static_cast<std::streamsize>(len)) throw FormatError("truncated file while reading metadata");

    EventModel m;
    auto& clf = m.classifier;
    try {
      const auto meta = nlohmann::json::parse(text);
      if (meta.at("format").get<std::string>() != "hawk-model") throw FormatError("HWKM model: wrong format tag");
      if (meta.at("classifier").get<std::string>() != "gbdt-softmax") throw FormatError("HWKM model: unknown classifier");
      clf.n_classes_ = meta.at("n_classes").get<int>();
      clf.feature_dim_ = meta.at("feature_dim").get<int>();
      m.diff_interval = meta.at("diff_interval").get<int>();
      m.mains_hz = meta.at("mains_hz").get<double>();
      m.sample_rate_hz = meta.at("sample_rate_hz").get<double>();
      m.thresholds = meta.at("thresholds").get<std::vector<int>>();
      m.appliance_names = meta.at("appliance_names").get<std::vector<std::string>>();
      const auto& c = meta.at("config");
      auto& cfg = clf.config_;
      cfg.n_trees = c.at("n_trees").get<int>();
      cfg.max_depth = c.at("max_depth").get<int>();
      cfg.learning_rate = c.at("learning_rate").get<double>();
      cfg.l2_lambda = c.at("l2_lambda").get<double>();
      cfg.min_child_weight = c.at("min_child_weight").get<double>();
      cfg.min_split_gain = c.at("min_split_gain").get<double>();
      cfg.subsample = c.at("subsample").get<double>();
      cfg.seed = c.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(std::string("HWKM model: bad metadata: ") + ex.what());
    }
    if (clf.n_classes_ < 2 || clf.n_classes_ > 4096 || clf.feature_dim_ < 1 || clf.feature_dim_ > 4096) {
      throw FormatError("HWKM model: implausible class count or feature dimension");
    }
    if (m.diff_interval < 1 || static_cast<int>(m.thresholds.size()) != clf.n_classes_) {
      throw FormatError("HWKM model: thresholds do not match the class count");
    }
    for (int t : m.thresholds) {
      if (t < 1 || t > m.diff_interval) throw FormatError("HWKM model: threshold outside [1, diff_interval]");
    }
    const auto rounds = binio::get<std::uint32_t>(is, "round count");
    const auto classes = binio::get<std::uint32_t>(is, "class count");
    if (classes != static_cast<std::uint32_t>(clf.n_classes_)) throw FormatError("HWKM model: class count mismatch");
    if (rounds != static_cast<std::uint32_t>(clf.config_.n_trees)) throw FormatError("HWKM model: round count mismatch");
    clf.base_.resize(classes);
    for (auto& b : clf.base_) b = binio::get<double>(is, "base scores");
    clf.trees_.resize(rounds);
    for (auto& round : clf.trees_) {
      round.resize(classes);
      for (auto& tree : round) {
        const auto count = binio::get<std::uint32_t>(is, "node count");
        if (count == 0 || count > (1u << 20)) throw FormatError("HWKM model: bad node count");
        tree.nodes.resize(count);
        for (auto& node : tree.nodes) {
          node.feature = binio::get<std::int32_t>(is, "tree node");
          node.threshold = binio::get<double>(is, "tree node");
          node.left = binio::get<std::int32_t>(is, "tree node");
          node.right = binio::get<std::int32_t>(is, "tree node");
          node.value = binio::get<double>(is, "tree node");
        }
        check_tree(tree, clf.feature_dim_);
      }
    }
    if (!binio::at_eof(is)) throw FormatError("HWKM model: trailing bytes after the last tree");
    return m;
  }

  // Every non-root node has exactly one parent that precedes it.
  static void check_tree(const Tree& tree, int dim) {
    const auto n = static_cast<std::int32_t>(tree.nodes.size());
    std::vector<int> parents(static_cast<std::size_t>(n), 0);
    for (std::int32_t i = 0; i < n; ++i) {
      const auto& node = tree.nodes[i];
      if (node.feature < 0) {
        if (node.feature != -1 || node.left != -1 || node.right != -1 || !std::isfinite(node.value)) {
          throw FormatError("HWKM model: malformed leaf");
        }
        continue;
      }
      if (node.feature >= dim || node.left <= i || node.right <= i || node.left >= n || node.right >= n ||
          node.left == node.right || std::isnan(node.threshold)) {
        throw FormatError("HWKM model: malformed split node");
      }
      ++parents[node.left];
      ++parents[node.right];
    }
    for (std::int32_t i = 1; i < n; ++i) {
      if (parents[i] != 1) throw FormatError("HWKM model: unreachable or shared tree node");
    }
  }
};

void write_model(std::ostream& os, const EventModel& model) { ModelIo::write(os, model); }
EventModel read_model(std::istream& is) { return ModelIo::read(is); }

void save_model(const std::filesystem::path& path, const EventModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParameterError("cannot write " + path.string());
  write_model(os, model);
}

EventModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParameterError("cannot open " + path.string());
  return read_model(is);
}

StreamRecognizer::StreamRecognizer(const Classifier& classifier, std::vector<int> thresholds, int diff_interval,
                                   double mains_hz, double sample_rate_hz)
    : classifier_(classifier),
      ring_(diff_interval),
      extractor_(mains_hz, sample_rate_hz),
      vote_(diff_interval, std::move(thresholds)) {
  if (classifier.feature_dim() != pipeline::kFeatureDim) throw ParameterError("StreamRecognizer: feature dimension mismatch");
}

std::optional<EventReport> StreamRecognizer::push(std::uint64_t cycle_id, std::span<const double> aggregate) {
  const auto diff = pipeline::ssdiff(ring_, cycle_id, aggregate);
  if (!diff) {
    last_ = kIdleClass;
    return std::nullopt;
  }
  last_ = classifier_.predict(extractor_(diff->samples));
  return vote_.step(last_, cycle_id);
}

InferenceResult run_inference(const sim::Trace& trace, const EventModel& model) {
  if (std::abs(trace.grid.sample_rate_hz - model.sample_rate_hz) > 1e-9 ||
      trace.cycle_len() != static_cast<int>(std::lround(model.sample_rate_hz / model.mains_hz))) {
    throw ParameterError("infer: trace sampling does not match the model");
  }
  StreamRecognizer rec(model.classifier, model.thresholds, model.diff_interval, model.mains_hz, model.sample_rate_hz);
  InferenceResult out;
  out.predictions.cycle_ids.reserve(trace.frames.size());
  out.predictions.labels.reserve(trace.frames.size());
  double total = 0.0;
  for (const auto& f : trace.frames) {
    const auto t0 = std::chrono::steady_clock::now();
    auto r = rec.push(f.cycle_id, f.aggregate);
    const auto t1 = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    total += ms;
    out.max_latency_ms = std::max(out.max_latency_ms, ms);
    out.predictions.cycle_ids.push_back(f.cycle_id);
    out.predictions.labels.push_back(rec.last_prediction());
    if (r) out.reports.push_back(*r);
  }
  if (!trace.frames.empty()) out.mean_latency_ms = total / static_cast<double>(trace.frames.size());
  return out;
}

std::vector<eval::TimedClass> report_classes(std::span<const EventReport> reports) {
  std::vector<eval::TimedClass> out;
  out.reserve(reports.size());
  for (const auto& r : reports) out.push_back({r.onset_cycle, r.class_label});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.cycle < b.cycle; });
  return out;
}

std::vector<eval::DetectedEvent> detections(std::span<const EventReport> reports) {
  std::vector<eval::DetectedEvent> out;
  out.reserve(reports.size());
  for (const auto& r : reports) out.push_back({r.cycle_id, r.onset_cycle, r.class_label});
  return out;
}

void write_reports(std::ostream& os, std::span<const EventReport> reports, int n_classes) {
  using ojson = nlohmann::ordered_json;
  os << ojson{{"format", "hawk-detections"}, {"version", 1}, {"count", reports.size()}, {"n_classes", n_classes}}.dump()
     << '\n';
  for (const auto& r : reports) {
    os << ojson{{"cycle", r.cycle_id},
                {"onset_cycle", r.onset_cycle},
                {"class", r.class_label},
                {"appliance", r.appliance_id},
                {"action", r.action == schedule::Action::On ? "on" : "off"},
                {"votes", r.vote_count}}
              .dump()
       << '\n';
  }
}

std::vector<EventReport> read_reports(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("detections: empty file");
  std::vector<EventReport> out;
  try {
    const auto head = nlohmann::json::parse(line);
    if (head.at("format").get<std::string>() != "hawk-detections") throw FormatError("detections: wrong format tag");
    if (head.at("version").get<int>() != 1) throw FormatError("detections: unsupported version");
    const auto count = head.at("count").get<std::size_t>();
    const int n_classes = head.at("n_classes").get<int>();
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      EventReport r;
      r.cycle_id = j.at("cycle").get<std::uint64_t>();
      r.onset_cycle = j.at("onset_cycle").get<std::uint64_t>();
      r.class_label = j.at("class").get<int>();
      r.appliance_id = j.at("appliance").get<int>();
      const auto action = j.at("action").get<std::string>();
      if (action != "on" && action != "off") throw FormatError("detections: bad action " + action);
      r.action = action == "on" ? schedule::Action::On : schedule::Action::Off;
      r.vote_count = j.at("votes").get<int>();
      if (r.class_label <= kIdleClass || r.class_label >= n_classes || r.onset_cycle > r.cycle_id ||
          class_appliance(r.class_label) != r.appliance_id || class_action(r.class_label) != r.action) {
        throw FormatError("detections: inconsistent record");
      }
      out.push_back(r);
    }
    if (out.size() != count) throw FormatError("detections: record count does not match the header");
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("detections: ") + ex.what());
  }
  return out;
}

void save_reports(const std::filesystem::path& path, std::span<const EventReport> reports, int n_classes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParameterError("cannot write " + path.string());
  write_reports(os, reports, n_classes);
}

std::vector<EventReport> load_reports(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParameterError("cannot open " + path.string());
  return read_reports(is);
}

}  // namespace hawk::model
