#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kdrank/autodiff/tensor.hpp"
#include "kdrank/distill/losses.hpp"
#include "kdrank/encoder/checkpoint.hpp"
#include "kdrank/encoder/flops.hpp"
#include "kdrank/error.hpp"
#include "kdrank/eval/significance.hpp"
#include "kdrank/workflow/desk.hpp"

namespace py = pybind11;
using namespace kdrank;

namespace {

using PyRun = std::map<std::string, std::vector<std::string>>;
using PyQrels = std::map<std::string, std::map<std::string, int>>;

Qrels to_qrels(const PyQrels& in) {
  Qrels q;
  for (const auto& [qid, docs] : in) {
    for (const auto& [did, grade] : docs) q.set(qid, did, grade);
  }
  return q;
}

Tensor logits_tensor(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw Error(ErrorKind::kContract, "logits need at least one row");
  std::vector<double> flat;
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw Error(ErrorKind::kDimension, "ragged logits");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), rows.front().size()}, std::move(flat));
}

// Corpus, teacher and students of one desk-scale experiment, kept in memory.
class Experiment {
 public:
  explicit Experiment(const std::string& config_json)
      : config_(config_json.empty() ? DeskConfig{} : DeskConfig::from_json(config_json)),
        prepared_(prepare_corpus(config_)) {}

  std::string config() const { return config_.to_json(); }
  std::size_t vocab_size() const { return prepared_.vocab.size(); }
  std::vector<std::string> query_ids(const std::string& split) const {
    if (split == "train") return prepared_.corpus.train_query_ids;
    if (split == "validation") return prepared_.corpus.validation_query_ids;
    if (split == "test") return prepared_.corpus.test_query_ids;
    throw Error(ErrorKind::kContract, "unknown query split '" + split + "'");
  }

  double train_teacher() {
    py::gil_scoped_release release;
    DistillResult r = train_teacher_impl();
    teacher_ = std::move(r.student);
    pairs_ = distillation_pairs(config_, prepared_, *teacher_);
    return r.validation_mrr.value_or(0.0);
  }

  py::dict distill(const std::string& mode, std::uint64_t seed) {
    if (!teacher_) throw Error(ErrorKind::kContract, "train_teacher() must run first");
    DistillPlan plan = config_.plan;
    plan.mode = parse_mode(mode);
    plan.seed = seed;
    DistillResult r;
    {
      py::gil_scoped_release release;
      DistillInputs in;
      in.teacher = &*teacher_;
      in.student_config = config_.student_config(prepared_.vocab.size());
      in.pairs = pairs_;
      in.validator = make_validator(prepared_, config_.split, config_.threads);
      r = run_distillation(plan, in);
    }
    student_ = r.student;
    py::dict out;
    out["validation_mrr"] = r.validation_mrr.value_or(0.0);
    out["optimizer_steps"] = r.optimizer_steps;
    py::list stages;
    for (const auto& s : r.stages) {
      py::dict d;
      d["name"] = s.name;
      d["optimizer_steps"] = s.optimizer_steps;
      d["validation_mrr"] = s.validation_mrr;
      stages.append(d);
    }
    out["stages"] = stages;
    return out;
  }

  std::map<std::size_t, double> depth_study(const std::vector<std::size_t>& depths,
                                            const std::string& split, bool use_teacher) {
    const Checkpoint& model = pick(use_teacher);
    const auto ids = query_ids(split);
    py::gil_scoped_release release;
    return kdrank::depth_study(model, prepared_, ids, depths, config_.split, config_.threads);
  }

  void save(const std::filesystem::path& path, bool use_teacher) const {
    save_checkpoint(path, pick(use_teacher));
  }

 private:
  DistillResult train_teacher_impl() const { return kdrank::train_teacher(config_, prepared_); }

  const Checkpoint& pick(bool use_teacher) const {
    const auto& m = use_teacher ? teacher_ : student_;
    if (!m) throw Error(ErrorKind::kContract, use_teacher ? "no teacher yet" : "no student yet");
    return *m;
  }

  DeskConfig config_;
  PreparedCorpus prepared_;
  std::optional<Checkpoint> teacher_;
  std::optional<Checkpoint> student_;
  std::vector<TrainingPair> pairs_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "BERT re-ranking with Simplified TinyBERT distillation";

  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (std::string(error_kind_name(e.kind())) + ": " + e.what()).c_str());
    }
  });

  m.def(
      "estimate_macs",
      [](std::size_t layers, std::size_t hidden, std::size_t seq_len, std::size_t vocab_size) {
        return estimate_macs(
            EncoderConfig::shaped(layers, hidden, vocab_size, std::max<std::size_t>(seq_len, 512)),
            seq_len);
      },
      py::arg("layers"), py::arg("hidden"), py::arg("seq_len") = 256,
      py::arg("vocab_size") = 30522,
      "Multiply-accumulates of one forward pass.");

  m.def(
      "evaluate",
      [](const PyRun& run, const PyQrels& qrels) {
        const Qrels q = to_qrels(qrels);
        std::map<std::string, double> out;
        for (MetricKind k : {MetricKind::kMrr, MetricKind::kMrrAt10, MetricKind::kNdcgAt10,
                             MetricKind::kMap}) {
          out[metric_name(k)] = evaluate_metric(k, run, q).mean;
        }
        return out;
      },
      py::arg("run"), py::arg("qrels"), "Mean MRR, MRR@10, NDCG@10 and MAP.");

  m.def(
      "per_query",
      [](const std::string& metric, const PyRun& run, const PyQrels& qrels) {
        for (MetricKind k : {MetricKind::kMrr, MetricKind::kMrrAt10, MetricKind::kNdcgAt10,
                             MetricKind::kMap}) {
          if (metric == metric_name(k)) {
            const auto r = evaluate_metric(k, run, to_qrels(qrels));
            std::map<std::string, double> out;
            for (std::size_t i = 0; i < r.query_ids.size(); ++i) out[r.query_ids[i]] = r.values[i];
            return out;
          }
        }
        throw Error(ErrorKind::kContract, "unknown metric '" + metric + "'");
      },
      py::arg("metric"), py::arg("run"), py::arg("qrels"));

  m.def(
      "paired_t_test",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        const auto r = paired_t_test(a, b);
        return py::make_tuple(r.t, r.df, r.p);
      },
      py::arg("a"), py::arg("b"), "Two-tailed paired t-test: (t, df, p).");

  m.def(
      "soft_loss",
      [](const std::vector<std::vector<double>>& student,
         const std::vector<std::vector<double>>& teacher, double temperature) {
        const Tensor t = logits_tensor(teacher);
        return soft_loss(logits_tensor(student), t.data(), temperature).item();
      },
      py::arg("student_logits"), py::arg("teacher_logits"), py::arg("temperature") = 1.0);

  m.def(
      "hard_loss",
      [](const std::vector<std::vector<double>>& student, const std::vector<int>& labels) {
        return hard_loss(logits_tensor(student), labels).item();
      },
      py::arg("student_logits"), py::arg("labels"));

  m.def("default_config", [] { return DeskConfig{}.to_json(); },
        "Default experiment settings as JSON.");

  m.def(
      "gen_synth",
      [](const std::filesystem::path& out, const std::string& config_json) {
        const DeskConfig c = config_json.empty() ? DeskConfig{} : DeskConfig::from_json(config_json);
        write_corpus(gen_synthetic_corpus(c.corpus, c.corpus_seed), out);
      },
      py::arg("out"), py::arg("config") = "", "Writes the synthetic corpus of a config.");

  py::class_<Experiment>(m, "Experiment")
      .def(py::init<const std::string&>(), py::arg("config") = "")
      .def_property_readonly("config", &Experiment::config)
      .def_property_readonly("vocab_size", &Experiment::vocab_size)
      .def("query_ids", &Experiment::query_ids, py::arg("split"))
      .def("train_teacher", &Experiment::train_teacher,
           "Fine-tunes the teacher; returns validation MRR@10.")
      .def("distill", &Experiment::distill, py::arg("mode") = "simplified_one_step",
           py::arg("seed") = 0)
      .def("depth_study", &Experiment::depth_study, py::arg("depths"),
           py::arg("split") = "test", py::arg("teacher") = false)
      .def("save", &Experiment::save, py::arg("path"), py::arg("teacher") = false);
}
