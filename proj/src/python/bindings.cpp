#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hawk/error.hpp"
#include "hawk/eval.hpp"
#include "hawk/experiment.hpp"
#include "hawk/model.hpp"
#include "hawk/pipeline.hpp"
#include "hawk/schedule.hpp"
#include "hawk/simulate.hpp"
#include "hawk/syncsim.hpp"

namespace py = pybind11;
using namespace hawk;

namespace {

py::dict metrics_dict(const eval::MetricReport& m) {
  py::dict per_class;
  for (const auto& [cls, c] : m.per_class) {
    py::dict d;
    d["tp"] = c.tp;
    d["fp"] = c.fp;
    d["fn"] = c.fn;
    d["precision"] = c.precision;
    d["recall"] = c.recall;
    d["f1"] = c.f1;
    d["support"] = c.support;
    per_class[py::int_(cls)] = d;
  }
  py::dict out;
  out["per_class"] = per_class;
  out["average_f1"] = m.average_f1;
  out["weighted_f1"] = m.weighted_f1;
  out["event_br"] = m.event_br;
  out["state_br"] = m.state_br;
  out["avg_on_off_br"] = m.avg_on_off_br;
  out["unique_states"] = m.unique_states;
  out["diversity_density"] = m.diversity_density;
  out["extra"] = m.extra;
  return out;
}

py::dict summary_dict(const syncsim::SyncSummary& s) {
  py::dict d;
  d["count"] = s.count();
  d["mean_us"] = s.mean_us;
  d["max_us"] = s.max_us;
  d["errors_us"] = s.sorted_errors;
  return d;
}

// (frames, cycle_len) array of one per-frame sample vector.
template <class Get>
py::array_t<double> frame_matrix(const sim::Trace& t, Get get) {
  const auto rows = static_cast<py::ssize_t>(t.frames.size());
  const auto cols = static_cast<py::ssize_t>(t.cycle_len());
  py::array_t<double> out({rows, cols});
  auto view = out.mutable_unchecked<2>();
  for (py::ssize_t i = 0; i < rows; ++i) {
    const auto& v = get(t.frames[static_cast<std::size_t>(i)]);
    for (py::ssize_t j = 0; j < cols; ++j) view(i, j) = v[static_cast<std::size_t>(j)];
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hawk NALM toolkit core";

  auto base = py::register_exception<Error>(m, "HawkError", PyExc_RuntimeError);
  py::register_exception<ParameterError>(m, "ParameterError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", base.ptr());

  // schedule
  py::class_<schedule::GrayCodeSequence>(m, "GrayCodeSequence")
      .def_readonly("n_bits", &schedule::GrayCodeSequence::n_bits)
      .def_readonly("codewords", &schedule::GrayCodeSequence::codewords)
      .def("transitions", &schedule::GrayCodeSequence::transitions)
      .def("transition_counts", &schedule::GrayCodeSequence::transition_counts);
  m.def("balanced_gray_code", &schedule::balanced_gray_code, py::arg("n_bits"));
  m.def("reflected_gray_code", &schedule::reflected_gray_code, py::arg("n_bits"));

  py::enum_<schedule::Action>(m, "Action").value("ON", schedule::Action::On).value("OFF", schedule::Action::Off);

  py::class_<schedule::Event>(m, "Event")
      .def_readonly("time_cycle", &schedule::Event::time_cycle)
      .def_readonly("appliance_id", &schedule::Event::appliance_id)
      .def_readonly("action", &schedule::Event::action)
      .def("__repr__", [](const schedule::Event& e) {
        return "Event(" + std::to_string(e.time_cycle) + ", " + std::to_string(e.appliance_id) + ", " +
               (e.action == schedule::Action::On ? "ON" : "OFF") + ")";
      });

  py::class_<schedule::ScheduleParams>(m, "ScheduleParams")
      .def(py::init<>())
      .def_readwrite("n_appliances", &schedule::ScheduleParams::n_appliances)
      .def_readwrite("group_size", &schedule::ScheduleParams::group_size)
      .def_readwrite("groups_active_per_round", &schedule::ScheduleParams::groups_active_per_round)
      .def_readwrite("rounds", &schedule::ScheduleParams::rounds)
      .def_readwrite("dwell_cycles", &schedule::ScheduleParams::dwell_cycles)
      .def_readwrite("rng_seed", &schedule::ScheduleParams::rng_seed);

  py::class_<schedule::EventSchedule>(m, "EventSchedule")
      .def_readonly("n_appliances", &schedule::EventSchedule::n_appliances)
      .def_readonly("dwell_cycles", &schedule::EventSchedule::dwell_cycles)
      .def_readonly("events", &schedule::EventSchedule::events)
      .def("horizon_cycles", &schedule::EventSchedule::horizon_cycles)
      .def("visited_states", &schedule::EventSchedule::visited_states);
  m.def("generate_schedule", &schedule::generate_schedule, py::arg("params"));
  m.def("save_schedule", &schedule::save_schedule, py::arg("path"), py::arg("schedule"));
  m.def("load_schedule", &schedule::load_schedule, py::arg("path"));
  m.def("overlap_ratio", &schedule::overlap_ratio, py::arg("train"), py::arg("test"));
  m.def("schedule_stats", [](const schedule::EventSchedule& s) {
    const auto st = schedule::schedule_stats(s);
    py::dict d;
    d["events_per_appliance"] = st.events_per_appliance;
    d["on_cycles_per_appliance"] = st.on_cycles_per_appliance;
    d["unique_states"] = st.unique_states;
    d["event_br"] = st.event_br;
    d["state_br"] = st.state_br;
    return d;
  });

  // simulate
  py::class_<sim::GridSpec>(m, "GridSpec")
      .def(py::init<>())
      .def_readwrite("mains_hz", &sim::GridSpec::mains_hz)
      .def_readwrite("sample_rate_hz", &sim::GridSpec::sample_rate_hz)
      .def_readwrite("voltage_rms_v", &sim::GridSpec::voltage_rms_v)
      .def_readwrite("noise_std_a", &sim::GridSpec::noise_std_a)
      .def("cycle_len", &sim::GridSpec::cycle_len);

  py::class_<sim::ApplianceSpec>(m, "ApplianceSpec")
      .def_readonly("id", &sim::ApplianceSpec::id)
      .def_readonly("name", &sim::ApplianceSpec::name)
      .def_readonly("transient_cycles", &sim::ApplianceSpec::transient_cycles);
  m.def("default_catalog", &sim::default_catalog, py::arg("grid") = sim::GridSpec{});
  m.def("load_catalog", &sim::load_catalog, py::arg("path"));

  py::class_<sim::Trace>(m, "Trace")
      .def_readonly("n_appliances", &sim::Trace::n_appliances)
      .def_readonly("has_individual", &sim::Trace::has_individual)
      .def_property_readonly("n_frames", [](const sim::Trace& t) { return t.frames.size(); })
      .def_property_readonly("sample_rate_hz", [](const sim::Trace& t) { return t.grid.sample_rate_hz; })
      .def("cycle_len", &sim::Trace::cycle_len)
      .def("cycle_ids",
           [](const sim::Trace& t) {
             std::vector<std::uint64_t> ids;
             for (const auto& f : t.frames) ids.push_back(f.cycle_id);
             return ids;
           })
      .def("labels",
           [](const sim::Trace& t) {
             std::vector<schedule::StateMask> labels;
             for (const auto& f : t.frames) labels.push_back(f.label);
             return labels;
           })
      .def("aggregate", [](const sim::Trace& t) { return frame_matrix(t, [](const auto& f) -> auto& { return f.aggregate; }); })
      .def("voltage", [](const sim::Trace& t) { return frame_matrix(t, [](const auto& f) -> auto& { return f.voltage; }); });
  m.def(
      "execute_schedule",
      [](const schedule::EventSchedule& s, const std::vector<sim::ApplianceSpec>& specs, const sim::GridSpec& grid,
         std::uint64_t seed, bool keep_individual, std::uint64_t n_cycles) {
        sim::ExecuteOptions opt;
        opt.keep_individual = keep_individual;
        opt.n_cycles = n_cycles;
        py::gil_scoped_release release;
        return sim::execute_schedule(s, specs, grid, seed, opt);
      },
      py::arg("schedule"), py::arg("catalog"), py::arg("grid") = sim::GridSpec{}, py::arg("seed") = 1,
      py::arg("keep_individual") = false, py::arg("n_cycles") = 0);
  m.def("save_trace", &sim::save_trace, py::arg("path"), py::arg("trace"));
  m.def("load_trace", &sim::load_trace, py::arg("path"));
  m.def("kirchhoff_residual", &sim::kirchhoff_residual, py::arg("trace"));

  // pipeline
  m.def(
      "harmonic_features",
      [](const std::vector<double>& cycle, double mains_hz, double sample_rate_hz) {
        const auto f = pipeline::harmonic_features(cycle, mains_hz, sample_rate_hz);
        return std::vector<double>(f.values.begin(), f.values.end());
      },
      py::arg("cycle"), py::arg("mains_hz") = 50.0, py::arg("sample_rate_hz") = 16000.0);

  // eval
  m.def(
      "estimate_sinr",
      [](const sim::Trace& t, int appliance, const std::string& mode) {
        if (mode != "raw" && mode != "diff") throw ParameterError("mode must be 'raw' or 'diff'");
        return eval::estimate_sinr(t, appliance, mode == "raw" ? eval::SinrMode::Raw : eval::SinrMode::Diff);
      },
      py::arg("trace"), py::arg("appliance"), py::arg("mode"));
  m.def("load_report", [](const std::filesystem::path& p) { return metrics_dict(eval::load_report(p)); },
        py::arg("path"));

  // model
  py::class_<model::EventModel>(m, "EventModel")
      .def_readonly("diff_interval", &model::EventModel::diff_interval)
      .def_readonly("thresholds", &model::EventModel::thresholds)
      .def_readonly("appliance_names", &model::EventModel::appliance_names);
  m.def("load_model", &model::load_model, py::arg("path"));
  m.def("save_model", &model::save_model, py::arg("path"), py::arg("model"));
  m.def(
      "infer",
      [](const sim::Trace& t, const model::EventModel& em) {
        model::InferenceResult r;
        {
          py::gil_scoped_release release;
          r = model::run_inference(t, em);
        }
        py::list reports;
        for (const auto& e : r.reports) {
          py::dict d;
          d["cycle_id"] = e.cycle_id;
          d["class_label"] = e.class_label;
          d["appliance_id"] = e.appliance_id;
          d["action"] = e.action;
          d["onset_cycle"] = e.onset_cycle;
          d["vote_count"] = e.vote_count;
          reports.append(d);
        }
        py::dict out;
        out["reports"] = reports;
        out["mean_latency_ms"] = r.mean_latency_ms;
        out["max_latency_ms"] = r.max_latency_ms;
        return out;
      },
      py::arg("trace"), py::arg("model"));

  // syncsim
  py::class_<syncsim::SyncConfig>(m, "SyncConfig")
      .def(py::init<>())
      .def_readwrite("trials", &syncsim::SyncConfig::trials)
      .def_readwrite("seed", &syncsim::SyncConfig::seed)
      .def_readwrite("sample_rate_hz", &syncsim::SyncConfig::sample_rate_hz)
      .def_readwrite("mains_hz", &syncsim::SyncConfig::mains_hz)
      .def_readwrite("voltage_noise_rel", &syncsim::SyncConfig::voltage_noise_rel)
      .def("noiseless", &syncsim::SyncConfig::noiseless);
  m.def(
      "run_sync_sim",
      [](const syncsim::SyncConfig& c, int threads) {
        syncsim::SyncRun run;
        {
          py::gil_scoped_release release;
          run = syncsim::run_sync_sim(c, threads);
        }
        py::dict d;
        d["spt"] = summary_dict(syncsim::summarize(run.spt));
        d["tsf"] = summary_dict(syncsim::summarize(run.tsf));
        d["flagged"] = run.flagged;
        return d;
      },
      py::arg("config") = syncsim::SyncConfig{}, py::arg("threads") = 0);

  // experiment
  py::class_<experiment::ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def_readwrite("grid", &experiment::ExperimentConfig::grid)
      .def_readwrite("train_schedule", &experiment::ExperimentConfig::train_schedule)
      .def_readwrite("test_schedule", &experiment::ExperimentConfig::test_schedule)
      .def_readwrite("ablation_intervals", &experiment::ExperimentConfig::ablation_intervals)
      .def_property(
          "diff_interval", [](const experiment::ExperimentConfig& c) { return c.prepare.diff_interval; },
          [](experiment::ExperimentConfig& c, int d) { c.prepare.diff_interval = d; })
      .def_property(
          "n_trees", [](const experiment::ExperimentConfig& c) { return c.model.n_trees; },
          [](experiment::ExperimentConfig& c, int n) { c.model.n_trees = n; })
      .def("reseed", &experiment::ExperimentConfig::reseed, py::arg("seed"))
      .def("validate", &experiment::ExperimentConfig::validate);
  m.def("load_experiment_config", &experiment::load_experiment_config, py::arg("path"));
  m.def("save_experiment_config", &experiment::save_experiment_config, py::arg("path"), py::arg("config"));
  m.def(
      "run_experiment",
      [](const experiment::ExperimentConfig& c, bool imbalanced) {
        experiment::RecognitionResult r;
        {
          py::gil_scoped_release release;
          const auto data = experiment::build_data(c);
          const auto w = experiment::imbalance_weights(c.train_schedule.n_appliances, c.imbalance_min_ratio,
                                                       c.imbalance_seed);
          r = experiment::run_recognition(c, data, imbalanced ? &w : nullptr);
        }
        auto d = metrics_dict(r.metrics);
        d["state_f1"] = r.state_f1;
        d["cycle_accuracy"] = r.cycle_accuracy;
        d["mean_latency_ms"] = r.mean_latency_ms;
        d["training_samples"] = r.training_samples;
        return d;
      },
      py::arg("config"), py::arg("imbalanced") = false);
}
