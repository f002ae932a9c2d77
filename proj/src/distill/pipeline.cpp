#include "kdrank/distill/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "kdrank/autodiff/adam.hpp"
#include "kdrank/error.hpp"

namespace kdrank {

const char* mode_name(DistillMode mode) {
  switch (mode) {
    case DistillMode::kStandardKd: return "standard_kd";
    case DistillMode::kTinyBertTwoStage: return "tinybert_two_stage";
    case DistillMode::kSimplifiedOneStep: return "simplified_one_step";
    case DistillMode::kAblationHardOnly: return "ablation_hard_only";
    case DistillMode::kAblationOneStepOnly: return "ablation_one_step_only";
  }
  return "?";
}

DistillMode parse_mode(const std::string& name) {
  for (DistillMode m : {DistillMode::kStandardKd, DistillMode::kTinyBertTwoStage,
                        DistillMode::kSimplifiedOneStep, DistillMode::kAblationHardOnly,
                        DistillMode::kAblationOneStepOnly}) {
    if (name == mode_name(m)) return m;
  }
  throw Error(ErrorKind::kContract, "unknown distillation mode '" + name + "'");
}

DistillPlan DistillPlan::scaled(std::size_t factor) const {
  if (factor == 0) throw Error(ErrorKind::kContract, "scale factor must be positive");
  DistillPlan out = *this;
  for (StageSettings* s : {&out.finetune, &out.prediction, &out.intermediate}) {
    s->batch_size = std::max<std::size_t>(1, s->batch_size / factor);
  }
  return out;
}

void DistillPlan::validate() const {
  for (const StageSettings* s : {&finetune, &prediction, &intermediate}) {
    if (s->batch_size == 0) throw Error(ErrorKind::kContract, "batch size must be positive");
    if (!(s->learning_rate > 0.0)) throw Error(ErrorKind::kContract, "learning rate must be positive");
  }
  if (!(weight_decay >= 0.0)) throw Error(ErrorKind::kContract, "weight decay must be non-negative");
  hyper.validate();
  if (mode == DistillMode::kStandardKd && (temperature_grid.empty() || alpha_grid.empty())) {
    throw Error(ErrorKind::kContract, "standard KD needs a non-empty (T, alpha) grid");
  }
  for (double t : temperature_grid) KDHyper{t, 0.5}.validate();
  for (double a : alpha_grid) KDHyper{1.0, a}.validate();
}

std::vector<Objective> schedule_for(DistillMode mode) {
  switch (mode) {
    case DistillMode::kStandardKd: return {Objective::kStandardKd};
    case DistillMode::kTinyBertTwoStage: return {Objective::kIntermediate, Objective::kPrediction};
    case DistillMode::kSimplifiedOneStep: return {Objective::kOneStepWithHard};
    case DistillMode::kAblationHardOnly:
      return {Objective::kIntermediate, Objective::kPredictionWithHard};
    case DistillMode::kAblationOneStepOnly: return {Objective::kOneStep};
  }
  return {};
}

namespace {

EncoderBatch batch_of(std::span<const TrainingPair> pairs, std::span<const std::size_t> indices) {
  std::vector<std::vector<int>> tokens, segments;
  tokens.reserve(indices.size());
  segments.reserve(indices.size());
  for (std::size_t i : indices) {
    tokens.push_back(pairs[i].input.tokens);
    segments.push_back(pairs[i].input.segments);
  }
  return EncoderBatch::pack(tokens, segments);
}

}  // namespace

TeacherCache::TeacherCache(const Checkpoint& teacher, std::span<const TrainingPair> pairs,
                           std::vector<std::size_t> teacher_layers, std::size_t batch_size)
    : config_(teacher.config), layers_(std::move(teacher_layers)) {
  for (std::size_t l : layers_) {
    if (l < 1 || l > config_.num_layers) {
      throw Error(ErrorKind::kContract, "teacher has no layer " + std::to_string(l));
    }
  }
  if (batch_size == 0) throw Error(ErrorKind::kContract, "batch size must be positive");
  NoGradGuard no_grad;
  const std::size_t H = config_.hidden_size, A = config_.num_heads;
  items_.resize(pairs.size());
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    indices.resize(std::min(batch_size, pairs.size() - start));
    std::iota(indices.begin(), indices.end(), start);
    const EncoderTrace trace = encode(config_, teacher.weights, batch_of(pairs, indices));
    const std::size_t n = trace.seq_len;
    for (std::size_t b = 0; b < indices.size(); ++b) {
      Item& item = items_[start + b];
      const std::size_t len = trace.lengths[b];
      item.length = len;
      auto rows = [&](const Tensor& t) {
        const auto d = t.data().subspan(b * n * H, len * H);
        return std::vector<double>(d.begin(), d.end());
      };
      item.embedding = rows(trace.embedding_output);
      for (std::size_t l : layers_) {
        item.hidden.push_back(rows(trace.hidden_states[l - 1]));
        std::vector<double> att(A * len * len);
        const auto scores = trace.attention_scores[l - 1].data();
        for (std::size_t h = 0; h < A; ++h) {
          for (std::size_t i = 0; i < len; ++i) {
            const auto src = scores.subspan(((b * A + h) * n + i) * n, len);
            std::copy(src.begin(), src.end(), att.begin() + static_cast<std::ptrdiff_t>((h * len + i) * len));
          }
        }
        item.attention.push_back(std::move(att));
      }
      const auto logits = trace.logits.data().subspan(b * config_.num_labels, config_.num_labels);
      item.logits.assign(logits.begin(), logits.end());
    }
  }
}

EncoderTrace TeacherCache::assemble(std::span<const std::size_t> pair_indices) const {
  const std::size_t H = config_.hidden_size, A = config_.num_heads, C = config_.num_labels;
  EncoderTrace t;
  t.batch = pair_indices.size();
  t.num_heads = A;
  for (std::size_t i : pair_indices) {
    if (i >= items_.size()) throw Error(ErrorKind::kContract, "pair index outside the teacher cache");
    t.lengths.push_back(items_[i].length);
    t.seq_len = std::max(t.seq_len, items_[i].length);
  }
  const std::size_t B = t.batch, n = t.seq_len;
  std::vector<double> emb(B * n * H, 0.0), logits(B * C);
  std::vector<std::vector<double>> hidden(layers_.size(), std::vector<double>(B * n * H, 0.0));
  std::vector<std::vector<double>> att(layers_.size(), std::vector<double>(B * A * n * n, 0.0));
  for (std::size_t b = 0; b < B; ++b) {
    const Item& item = items_[pair_indices[b]];
    const std::size_t len = item.length;
    std::copy(item.embedding.begin(), item.embedding.end(), emb.begin() + static_cast<std::ptrdiff_t>(b * n * H));
    std::copy(item.logits.begin(), item.logits.end(), logits.begin() + static_cast<std::ptrdiff_t>(b * C));
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      std::copy(item.hidden[k].begin(), item.hidden[k].end(),
                hidden[k].begin() + static_cast<std::ptrdiff_t>(b * n * H));
      for (std::size_t h = 0; h < A; ++h) {
        for (std::size_t i = 0; i < len; ++i) {
          const auto src = item.attention[k].begin() + static_cast<std::ptrdiff_t>((h * len + i) * len);
          std::copy(src, src + static_cast<std::ptrdiff_t>(len),
                    att[k].begin() + static_cast<std::ptrdiff_t>(((b * A + h) * n + i) * n));
        }
      }
    }
  }
  t.embedding_output = Tensor({B * n, H}, std::move(emb));
  t.logits = Tensor({B, C}, std::move(logits));
  t.hidden_states.resize(config_.num_layers);
  t.attention_scores.resize(config_.num_layers);
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    t.hidden_states[layers_[k] - 1] = Tensor({B * n, H}, std::move(hidden[k]));
    t.attention_scores[layers_[k] - 1] = Tensor({B * A, n, n}, std::move(att[k]));
  }
  return t;
}

std::string log_to_jsonl(std::span<const LogRecord> log) {
  std::string out;
  for (const LogRecord& r : log) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["mode"] = r.mode;
    j["stage"] = r.stage;
    j["epoch"] = r.epoch;
    j["l_attn"] = r.losses.l_attn;
    j["l_hidn"] = r.losses.l_hidn;
    j["l_emb"] = r.losses.l_emb;
    j["l_soft"] = r.losses.l_soft;
    j["l_hard"] = r.losses.l_hard;
    j["total"] = r.losses.total;
    j["lr"] = r.learning_rate;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_log(std::span<const LogRecord> log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << log_to_jsonl(log);
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
  rng.shuffle(order);
  return order;
}

namespace {

struct StageJob {
  std::string name;
  Objective objective = Objective::kHardOnly;
  StageSettings settings;
  KDHyper hyper;
  std::size_t index = 0;
};

// Mutable training state shared by the stages of one run.
struct Run {
  const DistillPlan& plan;
  std::string mode;
  const EncoderConfig& config;
  EncoderWeights& weights;
  std::span<const TrainingPair> pairs;
  ProjectionSet* projections = nullptr;
  const TeacherCache* cache = nullptr;
  const LayerMap* map = nullptr;
  const Validator* validator = nullptr;
  std::vector<LogRecord>* log = nullptr;
  std::size_t step = 0;
};

bool produces_logits(Objective o) { return needs_soft(o) || needs_hard(o); }

StageReport train_stage(Run& run, const StageJob& job) {
  const std::size_t P = run.pairs.size();
  if (P == 0) throw Error(ErrorKind::kContract, "no training pairs");
  if (needs_intermediate(job.objective) && (!run.cache || !run.map || !run.projections)) {
    throw Error(ErrorKind::kContract, "intermediate objective needs teacher internals");
  }
  std::vector<Tensor> params = run.weights.parameters();
  if (needs_intermediate(job.objective)) {
    for (const Tensor& p : run.projections->parameters()) params.push_back(p);
  }
  AdamState state;
  state.learning_rate = job.settings.learning_rate;
  state.weight_decay = run.plan.weight_decay;
  Adam optimizer(std::move(params), std::move(state));
  optimizer.zero_grad();
  Rng dropout_rng(run.plan.seed ^ (0xd1b54a32d192ed03ULL * (job.index + 1)));

  StageReport report;
  report.name = job.name;
  report.objective = job.objective;
  const bool select = run.validator && *run.validator && produces_logits(job.objective);
  std::optional<EncoderWeights> best;
  double best_mrr = 0.0;

  std::vector<double> teacher_logits;
  std::vector<int> labels;
  for (std::size_t epoch = 0; epoch < job.settings.epochs; ++epoch) {
    const auto order = epoch_order(P, run.plan.seed, epoch);
    for (std::size_t start = 0; start < P; start += job.settings.batch_size) {
      const std::size_t end = std::min(P, start + job.settings.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const std::size_t step = run.step + 1;
      CombinedLoss loss;
      try {
        const EncoderTrace trace = encode(run.config, run.weights, batch_of(run.pairs, idx),
                                          {.training = true, .rng = &dropout_rng});
        LossTerms terms;
        if (needs_intermediate(job.objective)) {
          const EncoderTrace teacher = run.cache->assemble(idx);
          auto inter = intermediate_losses(trace, teacher, *run.map, *run.projections);
          terms.attention = inter.attention;
          terms.hidden = inter.hidden;
          terms.embedding = inter.embedding;
        }
        if (needs_soft(job.objective)) {
          teacher_logits.clear();
          for (std::size_t i : idx) {
            const auto& tl = run.pairs[i].teacher_logits;
            if (!tl) throw Error(ErrorKind::kContract, "training pair lacks teacher logits");
            teacher_logits.insert(teacher_logits.end(), tl->begin(), tl->end());
          }
          terms.soft = soft_loss(trace.logits, teacher_logits, job.hyper.temperature);
        }
        if (needs_hard(job.objective)) {
          labels.clear();
          for (std::size_t i : idx) labels.push_back(run.pairs[i].label);
          terms.hard = hard_loss(trace.logits, labels);
        }
        loss = combine_loss(terms, job.objective, job.hyper);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::kLoss) throw DivergenceError(step, e.what());
        throw;
      }
      backward(loss.total);
      optimizer.step();
      optimizer.zero_grad();
      run.step = step;
      ++report.optimizer_steps;
      if (run.log) {
        run.log->push_back(LogRecord{step, run.mode, job.name, epoch + 1, loss.breakdown,
                                     job.settings.learning_rate});
      }
    }
    report.epoch_orders.push_back(order);
    if (select) {
      const double mrr = (*run.validator)(Checkpoint{run.config, run.weights});
      report.validation_mrr.push_back(mrr);
      if (!best || mrr > best_mrr) {
        best = run.weights.deep_copy(true);
        best_mrr = mrr;
      }
    }
  }
  if (best) run.weights = std::move(*best);
  return report;
}

Checkpoint snapshot(const EncoderConfig& config, const EncoderWeights& weights) {
  return Checkpoint{config, weights.deep_copy(false)};
}

std::optional<double> best_of(const StageReport& r) {
  if (r.validation_mrr.empty()) return std::nullopt;
  return *std::max_element(r.validation_mrr.begin(), r.validation_mrr.end());
}

}  // namespace

DistillResult run_distillation(const DistillPlan& plan, const DistillInputs& inputs) {
  plan.validate();
  if (!inputs.teacher) throw Error(ErrorKind::kContract, "distillation needs a teacher");
  if (inputs.pairs.empty()) throw Error(ErrorKind::kContract, "distillation needs training pairs");
  const Checkpoint& teacher = *inputs.teacher;
  const EncoderConfig& cfg = inputs.student_config;
  cfg.validate();
  if (cfg.num_labels != teacher.config.num_labels) {
    throw Error(ErrorKind::kIncompatibleShapes, "student and teacher label counts differ");
  }

  Rng init_rng(plan.seed);
  EncoderWeights initial;
  if (inputs.initial_student) {
    if (!(inputs.initial_student->config == cfg)) {
      throw Error(ErrorKind::kIncompatibleShapes, "initial student does not match the student config");
    }
    initial = inputs.initial_student->weights.deep_copy(true);
  } else if (plan.init_from_first_k) {
    initial = init_student_from_teacher(teacher, cfg, *plan.init_from_first_k, init_rng).weights;
  } else {
    initial = init_weights(cfg, init_rng);
  }

  const auto schedule = schedule_for(plan.mode);
  const bool intermediate = std::any_of(schedule.begin(), schedule.end(), needs_intermediate);
  std::optional<LayerMap> map;
  std::optional<ProjectionSet> projections;
  std::optional<TeacherCache> own_cache;
  const TeacherCache* cache = nullptr;
  if (intermediate) {
    map = uniform_layer_map(cfg.num_layers, teacher.config.num_layers);
    Rng projection_rng(plan.seed ^ 0x50524f4aULL);
    projections = ProjectionSet::create(cfg.hidden_size, teacher.config.hidden_size, projection_rng);
    const auto& wanted = map->mapping;
    const bool reusable = inputs.cache && inputs.cache->size() == inputs.pairs.size() &&
                          std::includes(inputs.cache->teacher_layers().begin(),
                                        inputs.cache->teacher_layers().end(), wanted.begin(),
                                        wanted.end());
    if (reusable) {
      cache = inputs.cache;
    } else {
      own_cache.emplace(teacher, inputs.pairs, wanted);
      cache = &*own_cache;
    }
  }

  DistillResult result;
  const std::string mode = mode_name(plan.mode);
  if (plan.mode == DistillMode::kStandardKd) {
    std::vector<KDHyper> grid;
    if (inputs.validator) {
      for (double t : plan.temperature_grid) {
        for (double a : plan.alpha_grid) grid.push_back({t, a});
      }
    } else {
      grid.push_back(plan.hyper);
    }
    std::size_t index = 0;
    std::optional<double> best_mrr;
    for (const KDHyper& h : grid) {
      EncoderWeights weights = initial.deep_copy(true);
      Run run{plan, mode, cfg, weights, inputs.pairs};
      run.validator = &inputs.validator;
      run.log = &result.log;
      run.step = result.optimizer_steps;
      char name[64];
      std::snprintf(name, sizeof(name), "standard_kd T=%g alpha=%g", h.temperature, h.alpha);
      StageReport report = train_stage(run, {name, Objective::kStandardKd, plan.prediction, h, index++});
      result.optimizer_steps = run.step;
      const std::optional<double> mrr = best_of(report);
      result.stages.push_back(std::move(report));
      if (mrr) result.grid.push_back({h, *mrr});
      // Grid order is T ascending then alpha ascending, so a strict
      // improvement keeps the smaller pair on ties.
      if (!result.selected || (mrr && (!best_mrr || *mrr > *best_mrr))) {
        result.selected = h;
        best_mrr = mrr;
        result.student = snapshot(cfg, weights);
      }
    }
    result.validation_mrr = best_mrr;
    return result;
  }

  EncoderWeights weights = initial.deep_copy(true);
  Run run{plan, mode, cfg, weights, inputs.pairs};
  run.projections = projections ? &*projections : nullptr;
  run.cache = cache;
  run.map = map ? &*map : nullptr;
  run.validator = &inputs.validator;
  run.log = &result.log;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const Objective o = schedule[i];
    const StageSettings& settings =
        (o == Objective::kPrediction || o == Objective::kPredictionWithHard) ? plan.prediction
                                                                               : plan.intermediate;
    result.stages.push_back(train_stage(run, {objective_name(o), o, settings, plan.hyper, i}));
  }
  result.optimizer_steps = run.step;
  result.validation_mrr = best_of(result.stages.back());
  result.student = snapshot(cfg, weights);
  return result;
}

DistillResult run_finetune(const DistillPlan& plan, const Checkpoint& start,
                           std::span<const TrainingPair> pairs, const Validator& validator) {
  plan.validate();
  EncoderWeights weights = start.weights.deep_copy(true);
  Run run{plan, "finetune", start.config, weights, pairs};
  run.validator = &validator;
  DistillResult result;
  run.log = &result.log;
  result.stages.push_back(
      train_stage(run, {"finetune", Objective::kHardOnly, plan.finetune, plan.hyper, 0}));
  result.optimizer_steps = run.step;
  result.validation_mrr = best_of(result.stages.back());
  result.student = snapshot(start.config, weights);
  return result;
}

DistillResult run_general_distillation(const DistillPlan& plan, const Checkpoint& teacher,
                                       const Checkpoint& student,
                                       std::span<const TrainingPair> pairs) {
  plan.validate();
  const LayerMap map = uniform_layer_map(student.config.num_layers, teacher.config.num_layers);
  Rng projection_rng(plan.seed ^ 0x50524f4aULL);
  ProjectionSet projections =
      ProjectionSet::create(student.config.hidden_size, teacher.config.hidden_size, projection_rng);
  const TeacherCache cache(teacher, pairs, map.mapping);
  EncoderWeights weights = student.weights.deep_copy(true);
  Run run{plan, "general", student.config, weights, pairs};
  run.projections = &projections;
  run.cache = &cache;
  run.map = &map;
  DistillResult result;
  run.log = &result.log;
  result.stages.push_back(train_stage(
      run, {"general", Objective::kIntermediate, plan.intermediate, plan.hyper, 0}));
  result.optimizer_steps = run.step;
  result.student = snapshot(student.config, weights);
  return result;
}

}  // namespace kdrank
