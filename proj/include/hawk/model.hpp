#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "hawk/eval.hpp"
#include "hawk/pipeline.hpp"
#include "hawk/schedule.hpp"
#include "hawk/simulate.hpp"

namespace hawk::model {

/// Multi-class classifier over one feature vector.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual int n_classes() const = 0;
  virtual int feature_dim() const = 0;
  /// Per-class scores; higher is more likely.
  virtual void scores(std::span<const double> features, std::span<double> out) const = 0;
  /// Argmax of the scores, ties to the lowest class index.
  int predict(std::span<const double> features) const;
  int predict(const pipeline::DiffFeatureVector& f) const { return predict(f.values); }
};

struct GbdtConfig {
  int n_trees = 200;  // boosting rounds; each round adds one tree per class
  int max_depth = 6;
  double learning_rate = 0.1;
  double l2_lambda = 1.0;
  double min_child_weight = 1e-3;
  double min_split_gain = 0.0;
  /// Row fraction drawn (seeded) for each round; 1 uses every row.
  double subsample = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const GbdtConfig&) const = default;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // go left when x < threshold
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;         // leaf output
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;
  double eval(std::span<const double> x) const;
  bool operator==(const Tree&) const = default;
};

/// Softmax gradient-boosted trees with exact, level-wise splits.
class GbdtClassifier final : public Classifier {
 public:
  GbdtClassifier() = default;

  /// Throws DegenerateInputError with fewer than two classes present and
  /// ParameterError on labels >= n_classes.
  static GbdtClassifier train(std::span<const pipeline::TrainingSample> samples, int n_classes,
                              const GbdtConfig& config);
  /// Generic entry point: row-major `features` with `dim` columns.
  static GbdtClassifier train(std::span<const double> features, int dim, std::span<const int> labels, int n_classes,
                              const GbdtConfig& config);

  int n_classes() const override { return n_classes_; }
  int feature_dim() const override { return feature_dim_; }
  void scores(std::span<const double> features, std::span<double> out) const override;

  bool trained() const { return n_classes_ > 0; }
  const GbdtConfig& config() const { return config_; }
  const std::vector<double>& base_scores() const { return base_; }
  /// rounds x n_classes trees.
  const std::vector<std::vector<Tree>>& trees() const { return trees_; }

  bool operator==(const GbdtClassifier& o) const {
    return n_classes_ == o.n_classes_ && feature_dim_ == o.feature_dim_ && config_ == o.config_ && base_ == o.base_ &&
           trees_ == o.trees_;
  }

 private:
  friend struct ModelIo;
  int n_classes_ = 0;
  int feature_dim_ = 0;
  GbdtConfig config_;
  std::vector<double> base_;
  std::vector<std::vector<Tree>> trees_;
};

/// Detected event.
struct EventReport {
  std::uint64_t cycle_id = 0;
  int class_label = 0;
  int vote_count = 0;
  int appliance_id = 0;
  schedule::Action action = schedule::Action::On;
  /// Cycle of the earliest vote for the class in the window at report time.
  std::uint64_t onset_cycle = 0;

  bool operator==(const EventReport&) const = default;
};

/// Sliding-window popularity vote over per-cycle predictions.
class VoteState {
 public:
  VoteState(int window, std::vector<int> thresholds);

  /// Pushes one prediction. Reports the non-IDLE class with the most votes
  /// among those at or above threshold (ties: lowest index), then clears the
  /// window and ignores the next `window` predictions.
  std::optional<EventReport> step(int predicted, std::uint64_t cycle_id);

  int window() const { return window_; }
  int refractory_remaining() const { return refractory_; }
  std::size_t size() const { return labels_.size(); }
  int count(int class_label) const { return counts_.at(static_cast<std::size_t>(class_label)); }
  const std::vector<int>& thresholds() const { return thresholds_; }
  void reset();

 private:
  int window_;
  std::vector<int> thresholds_;
  std::vector<int> counts_;
  std::deque<std::pair<int, std::uint64_t>> labels_;
  int refractory_ = 0;
};

inline std::optional<EventReport> vote_step(VoteState& state, int predicted, std::uint64_t cycle_id) {
  return state.step(predicted, cycle_id);
}

/// Per-cycle predictions of a trace; IDLE while the differential window warms up.
struct PredictionStream {
  std::vector<std::uint64_t> cycle_ids;
  std::vector<int> labels;
};

PredictionStream predict_stream(const sim::Trace& trace, const Classifier& classifier, int diff_interval);

/// Report cycles (with onsets) that VoteState would emit for class `c` alone,
/// every other prediction treated as IDLE.
std::vector<eval::DetectedEvent> single_class_reports(const PredictionStream& stream, int class_label, int threshold,
                                                      int window);

struct Calibration {
  std::vector<int> thresholds;
  std::vector<double> train_f1;  // per class at the chosen threshold
  int absent_classes = 0;
};

/// For each class, the T in [1, D] with the best event F1 on the training
/// stream (other classes as IDLE), ties to the larger T. Absent classes get
/// ceil(D / 2).
Calibration calibrate_thresholds(const PredictionStream& stream, std::span<const eval::TimedClass> truth,
                                 int n_classes, int window, int tolerance_cycles = eval::kDefaultToleranceCycles);
Calibration calibrate_thresholds(const Classifier& classifier, const sim::Trace& training_trace, int window,
                                 int tolerance_cycles = eval::kDefaultToleranceCycles);

/// Classifier plus its voting parameters.
struct EventModel {
  GbdtClassifier classifier;
  std::vector<int> thresholds;
  int diff_interval = 30;
  double mains_hz = 50.0;
  double sample_rate_hz = 16000.0;
  std::vector<std::string> appliance_names;

  bool operator==(const EventModel&) const = default;
};

// HWKM model file: "HWKM", u16 major, u16 minor, u32 metadata length, JSON
// metadata, then u32 rounds, u32 classes, f64 base scores, and per tree
// u32 node count followed by {i32 feature, f64 threshold, i32 left,
// i32 right, f64 value} per node. Little-endian.
inline constexpr std::uint16_t kModelMajor = 1;
inline constexpr std::uint16_t kModelMinor = 0;
void write_model(std::ostream& os, const EventModel& model);
EventModel read_model(std::istream& is);
void save_model(const std::filesystem::path& path, const EventModel& model);
EventModel load_model(const std::filesystem::path& path);

/// Single-stream online recognizer: ring, features, classifier, vote.
class StreamRecognizer {
 public:
  StreamRecognizer(const Classifier& classifier, std::vector<int> thresholds, int diff_interval, double mains_hz,
                   double sample_rate_hz);

  std::optional<EventReport> push(std::uint64_t cycle_id, std::span<const double> aggregate);
  /// Prediction for the last pushed cycle; IDLE while warming up.
  int last_prediction() const { return last_; }

 private:
  const Classifier& classifier_;
  pipeline::CycleRing ring_;
  pipeline::HarmonicExtractor extractor_;
  VoteState vote_;
  int last_ = 0;
};

struct InferenceResult {
  PredictionStream predictions;
  std::vector<EventReport> reports;
  double mean_latency_ms = 0.0;
  double max_latency_ms = 0.0;
};

/// Streams the trace cycle by cycle through a StreamRecognizer, timing each push.
InferenceResult run_inference(const sim::Trace& trace, const EventModel& model);

std::vector<eval::TimedClass> report_classes(std::span<const EventReport> reports);
std::vector<eval::DetectedEvent> detections(std::span<const EventReport> reports);

// Detections file: a JSON header line {format, version, count, n_classes}
// followed by one JSON object per report.
void write_reports(std::ostream& os, std::span<const EventReport> reports, int n_classes);
std::vector<EventReport> read_reports(std::istream& is);
void save_reports(const std::filesystem::path& path, std::span<const EventReport> reports, int n_classes);
std::vector<EventReport> load_reports(const std::filesystem::path& path);

}  // namespace hawk::model
