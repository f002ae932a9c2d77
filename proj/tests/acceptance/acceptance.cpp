// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "kdrank/autodiff/ops.hpp"
#include "kdrank/data/collection.hpp"
#include "kdrank/distill/losses.hpp"
#include "kdrank/distill/pipeline.hpp"
#include "kdrank/encoder/checkpoint.hpp"
#include "kdrank/encoder/flops.hpp"
#include "kdrank/encoder/model.hpp"
#include "kdrank/error.hpp"
#include "kdrank/eval/significance.hpp"
#include "kdrank/workflow/desk.hpp"

using namespace kdrank;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

// ---- 1: MAC counts at sequence length 256 --------------------------------

Outcome flops() {
  const auto macs = [](std::size_t layers, std::size_t hidden) {
    return static_cast<double>(estimate_macs(EncoderConfig::shaped(layers, hidden, 30522), 256));
  };
  const double base = macs(12, 768), six = macs(6, 768), small = macs(3, 384);
  const auto within = [](double value, double target) {
    return std::fabs(value - target) <= 0.01 * target;
  };
  const bool ok = within(base, 22.9e9) && within(six, 11.5e9) && within(small, 1.5e9) &&
                  std::lround(base / six) == 2 && std::lround(base / small) == 15;
  std::ostringstream d;
  d << fmt("L12_H768 %.2fG", base / 1e9) << fmt(", L6_H768 %.2fG", six / 1e9)
    << fmt(", L3_H384 %.2fG", small / 1e9) << fmt(", speedups %.2fx", base / six)
    << fmt(" / %.1fx", base / small);
  return {ok, d.str()};
}

// ---- shared random encoder inputs ---------------------------------------

EncoderConfig small_config(std::size_t layers, std::size_t hidden, std::size_t vocab) {
  EncoderConfig c;
  c.num_layers = layers;
  c.hidden_size = hidden;
  c.num_heads = 1;
  c.vocab_size = vocab;
  c.max_position = 32;
  c.dropout = 0.0;
  return c;
}

struct RandomBatch {
  EncoderBatch batch;
  std::vector<int> labels;
};

RandomBatch random_batch(Rng& rng, std::size_t rows, std::size_t vocab) {
  std::vector<std::vector<int>> tokens, segments;
  RandomBatch out;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t q = 1 + rng.below(3), p = 2 + rng.below(5);
    std::vector<int> t{Vocab::kCls}, s{0};
    for (std::size_t i = 0; i < q; ++i) t.push_back(4 + static_cast<int>(rng.below(vocab - 4)));
    t.push_back(Vocab::kSep);
    s.resize(t.size(), 0);
    for (std::size_t i = 0; i < p; ++i) t.push_back(4 + static_cast<int>(rng.below(vocab - 4)));
    t.push_back(Vocab::kSep);
    s.resize(t.size(), 1);
    tokens.push_back(std::move(t));
    segments.push_back(std::move(s));
    out.labels.push_back(static_cast<int>(rng.below(2)));
  }
  out.batch = EncoderBatch::pack(tokens, segments);
  return out;
}

std::vector<double> logits_of(const EncoderTrace& trace) {
  const auto d = trace.logits.data();
  return {d.begin(), d.end()};
}

// ---- 2: gradient check with every loss active ---------------------------

Outcome gradients() {
  constexpr std::size_t kVocab = 24;
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    Rng rng(seed);
    const EncoderConfig sc = small_config(2, 8, kVocab);
    const EncoderConfig tc = small_config(4, 12, kVocab);
    const EncoderWeights sw = init_weights(sc, rng);
    const EncoderWeights tw = init_weights(tc, rng).deep_copy(false);
    const ProjectionSet proj = ProjectionSet::create(8, 12, rng);
    const RandomBatch in = random_batch(rng, 3, kVocab);
    const EncoderTrace teacher = encode(tc, tw, in.batch);
    const std::vector<double> tlogits = logits_of(teacher);
    const LayerMap map = uniform_layer_map(2, 4);
    const KDHyper hyper{2.0, 0.5};
    auto loss = [&] {
      const EncoderTrace student = encode(sc, sw, in.batch);
      const IntermediateLosses mid = intermediate_losses(student, teacher, map, proj);
      LossTerms terms{mid.attention, mid.hidden, mid.embedding,
                      soft_loss(student.logits, tlogits, hyper.temperature),
                      hard_loss(student.logits, in.labels)};
      return combine_loss(terms, Objective::kOneStepWithHard, hyper).total;
    };
    std::vector<Tensor> params = sw.parameters();
    for (const Tensor& p : proj.parameters()) params.push_back(p);
    const auto r = testing::check_gradients(loss, params);
    worst = std::max(worst, r.max_relative_error);
    checked += r.checked;
  }
  return {worst < 1e-3, fmt("max relative error %.2e", worst) + " over " +
                            std::to_string(checked) + " gradients, 3 seeds"};
}

// ---- 3: loss algebra ----------------------------------------------------

Outcome loss_algebra() {
  constexpr std::size_t kVocab = 20;
  double worst_hard = 0.0, worst_mean = 0.0;
  Rng rng(303);
  for (int trial = 0; trial < 100; ++trial) {
    const EncoderConfig sc = small_config(1 + rng.below(2), 8, kVocab);
    const EncoderConfig tc = small_config(sc.num_layers * 2, 16, kVocab);
    const EncoderWeights sw = init_weights(sc, rng);
    const EncoderWeights tw = init_weights(tc, rng);
    const ProjectionSet proj = ProjectionSet::create(8, 16, rng);
    const RandomBatch in = random_batch(rng, 1 + rng.below(4), kVocab);
    const EncoderTrace s = encode(sc, sw, in.batch);
    const EncoderTrace t = encode(tc, tw, in.batch);
    const KDHyper hyper{rng.uniform(0.5, 10.0), 0.5};
    const IntermediateLosses mid =
        intermediate_losses(s, t, uniform_layer_map(sc.num_layers, tc.num_layers), proj);
    const LossTerms terms{mid.attention, mid.hidden, mid.embedding,
                          soft_loss(s.logits, logits_of(t), hyper.temperature),
                          hard_loss(s.logits, in.labels)};
    const auto one = combine_loss(terms, Objective::kOneStep, hyper);
    const auto with_hard = combine_loss(terms, Objective::kOneStepWithHard, hyper);
    const auto kd = combine_loss(terms, Objective::kStandardKd, hyper);
    const double l_soft = terms.soft.item(), l_hard = terms.hard.item();
    worst_hard = std::max(worst_hard,
                          std::fabs((with_hard.total.item() - one.total.item()) - l_hard));
    worst_mean = std::max(worst_mean, std::fabs(kd.total.item() - 0.5 * (l_soft + l_hard)));
  }
  return {worst_hard <= 1e-12 && worst_mean <= 1e-12,
          fmt("max |diff - l_hard| %.1e", worst_hard) +
              fmt(", max |kd - mean| %.1e over 100 inputs", worst_mean)};
}

// ---- 4: metric and t-test oracles ---------------------------------------

Outcome metric_oracles() {
  Rng rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = testing::random_metric_instance(rng);
    Qrels q;
    for (const auto& [qid, did, g] : inst.flat.rows) q.set(qid, did, g);
    const auto rr = mrr(inst.run, q);
    const auto rr10 = mrr(inst.run, q, 10);
    const auto nd = ndcg_at_k(inst.run, q, 10);
    const auto ap = map_metric(inst.run, q);
    std::size_t i = 0;
    for (const auto& [qid, ranking] : inst.run) {
      worst = std::max({worst,
                        std::fabs(rr.values[i] - testing::oracle_rr(ranking, qid, inst.flat, SIZE_MAX)),
                        std::fabs(rr10.values[i] - testing::oracle_rr(ranking, qid, inst.flat, 10)),
                        std::fabs(nd.values[i] - testing::oracle_ndcg(ranking, qid, inst.flat, 10)),
                        std::fabs(ap.values[i] - testing::oracle_ap(ranking, qid, inst.flat))});
      ++i;
    }
  }
  double worst_p = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng.below(30);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform();
      b[i] = a[i] + rng.uniform(-0.3, 0.35);
    }
    const TTestResult r = paired_t_test(a, b);
    worst_p = std::max(worst_p,
                       std::fabs(r.p - testing::oracle_t_p(r.t, static_cast<double>(r.df))));
  }
  return {worst <= 1e-9 && worst_p <= 1e-6,
          fmt("max metric diff %.1e on 200 instances", worst) +
              fmt(", max p diff %.1e on 50 tests", worst_p)};
}

// ---- 5 and 8: desk-scale distillation -----------------------------------

struct DeskRun {
  std::optional<ModeComparison> comparison;
  std::string error;
  double seconds = 0.0;
};

Outcome distillation(const DeskRun& run) {
  if (!run.comparison) return {false, run.error};
  const ModeComparison& c = *run.comparison;
  double one = 0.0, two = 0.0, kd = 0.0;
  for (const auto& m : c.modes) {
    if (m.mode == DistillMode::kSimplifiedOneStep) one = m.mean;
    if (m.mode == DistillMode::kTinyBertTwoStage) two = m.mean;
    if (m.mode == DistillMode::kStandardKd) kd = m.mean;
  }
  const double ratio = one / c.teacher_validation_mrr;
  const bool ok = one >= kd && one >= two && ratio >= 0.9 && run.seconds < 1800.0;
  std::ostringstream d;
  d << fmt("teacher %.4f", c.teacher_validation_mrr) << fmt(", one-step %.4f", one)
    << fmt(", two-stage %.4f", two) << fmt(", standard KD %.4f", kd)
    << fmt(", student/teacher %.3f", ratio) << fmt(", %.0fs", run.seconds);
  return {ok, d.str()};
}

Outcome depth_shape(const DeskConfig& config, const PreparedCorpus& prepared,
                    const DeskRun& run) {
  if (!run.comparison) return {false, "no reference student: " + run.error};
  const std::vector<std::size_t> depths{10, 20, 50, config.corpus.dev_candidates};
  const auto& ids = prepared.corpus.test_query_ids;
  const auto mrr = depth_study(run.comparison->reference_student, prepared, ids, depths,
                               config.split, config.threads);
  bool ok = true;
  std::ostringstream d;
  double prev = -1.0;
  for (std::size_t depth : depths) {
    const double v = mrr.at(depth);
    ok = ok && v >= prev;
    prev = v;
    d << (depth == depths.front() ? "" : ", ") << "d" << depth << fmt(" %.4f", v);
  }
  d << " on " << ids.size() << " test queries";
  return {ok, d.str()};
}

// ---- 6: step counts -----------------------------------------------------

DeskConfig reduced_config() {
  DeskConfig c;
  c.corpus.num_queries = 60;
  c.corpus.num_dev_queries = 60;
  c.corpus.dev_candidates = 20;
  c.teacher_layers = 2;
  c.teacher_hidden = 16;
  c.student_layers = 1;
  c.student_hidden = 8;
  c.plan.finetune.epochs = 1;
  c.plan.prediction.epochs = 1;
  c.plan.intermediate.epochs = 1;
  c.plan.temperature_grid = {1.0};
  c.plan.alpha_grid = {0.5};
  return c;
}

Outcome step_ratio() {
  DeskConfig c = reduced_config();
  c.plan.prediction = {2, 8, 1e-3};
  c.plan.intermediate = c.plan.prediction;
  const PreparedCorpus prepared = prepare_corpus(c);
  const DistillResult teacher = train_teacher(c, prepared);
  const auto pairs = distillation_pairs(c, prepared, teacher.student);
  auto steps = [&](DistillMode mode) {
    DistillPlan plan = c.plan;
    plan.mode = mode;
    DistillInputs in;
    in.teacher = &teacher.student;
    in.student_config = c.student_config(prepared.vocab.size());
    in.pairs = pairs;
    return run_distillation(plan, in).optimizer_steps;
  };
  const std::size_t one = steps(DistillMode::kSimplifiedOneStep);
  const std::size_t two = steps(DistillMode::kTinyBertTwoStage);
  return {one > 0 && two == 2 * one,
          "two-stage " + std::to_string(two) + " steps, one-step " + std::to_string(one) +
              " steps on " + std::to_string(pairs.size()) + " pairs"};
}

// ---- 7: determinism -----------------------------------------------------

std::string file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Corpus, teacher, student and test run written under `dir`.
void full_pipeline(const fs::path& dir) {
  const DeskConfig c = reduced_config();
  fs::create_directories(dir);
  const PreparedCorpus prepared = prepare_corpus(c);
  write_corpus(prepared.corpus, dir / "corpus");
  const DistillResult teacher = train_teacher(c, prepared);
  save_checkpoint(dir / "teacher.ckpt", teacher.student);
  const auto pairs = distillation_pairs(c, prepared, teacher.student);
  DistillInputs in;
  in.teacher = &teacher.student;
  in.student_config = c.student_config(prepared.vocab.size());
  in.pairs = pairs;
  in.validator = make_validator(prepared, c.split, c.threads);
  const DistillResult student = run_distillation(c.plan, in);
  save_checkpoint(dir / "student.ckpt", student.student);
  write_log(student.log, dir / "train.log");
  const auto& ids = prepared.corpus.test_query_ids;
  const auto scores = score_candidates(student.student, prepared.text,
                                       prepared.corpus.dev_candidates, ids, c.split,
                                       c.corpus.dev_candidates, c.threads);
  write_run(rerank_run(prepared.corpus.dev_candidates, scores, ids, c.corpus.dev_candidates),
            "student", dir / "test.run");
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "kdrank_acceptance_determinism";
  fs::remove_all(root);
  full_pipeline(root / "a");
  full_pipeline(root / "b");
  std::size_t compared = 0;
  std::vector<std::string> differing;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), root / "a");
    ++compared;
    if (file_bytes(entry.path()) != file_bytes(root / "b" / rel)) differing.push_back(rel.string());
  }
  fs::remove_all(root);
  std::string d = std::to_string(compared) + " files compared";
  for (const auto& f : differing) d += ", differs: " + f;
  return {compared >= 4 && differing.empty(), d};
}

void report(int number, const char* name, const std::function<Outcome()>& body, bool& all) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("criterion %d %-22s %s  %s  [%.1fs]\n", number, name, o.pass ? "PASS" : "FAIL",
              o.detail.c_str(), secs);
  std::fflush(stdout);
  all = all && o.pass;
}

}  // namespace

int main() {
  bool all = true;
  report(1, "flops", flops, all);
  report(2, "gradient-check", gradients, all);
  report(3, "loss-algebra", loss_algebra, all);
  report(4, "metric-oracles", metric_oracles, all);

  const DeskConfig config;
  std::optional<PreparedCorpus> prepared;
  DeskRun desk;
  const auto start = std::chrono::steady_clock::now();
  try {
    prepared = prepare_corpus(config);
    const DistillResult teacher = train_teacher(config, *prepared);
    const auto pairs = distillation_pairs(config, *prepared, teacher.student);
    const std::vector<DistillMode> modes{DistillMode::kSimplifiedOneStep,
                                         DistillMode::kTinyBertTwoStage,
                                         DistillMode::kStandardKd};
    const std::vector<std::uint64_t> seeds{0, 1, 2};
    desk.comparison = compare_modes(config, *prepared, teacher.student, pairs, modes, seeds);
  } catch (const std::exception& e) {
    desk.error = std::string("error: ") + e.what();
  }
  desk.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report(5, "desk-distillation", [&] { return distillation(desk); }, all);
  report(6, "step-ratio", step_ratio, all);
  report(7, "determinism", determinism, all);
  report(8, "depth-monotonicity",
         [&] {
           if (!prepared) return Outcome{false, desk.error};
           return depth_shape(config, *prepared, desk);
         },
         all);
  std::printf("%s\n", all ? "ALL CRITERIA PASS" : "SOME CRITERIA FAIL");
  return all ? 0 : 1;
}
