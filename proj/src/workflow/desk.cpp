#include "kdrank/workflow/desk.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include <json.hpp>

#include "kdrank/encoder/model.hpp"
#include "kdrank/error.hpp"
#include "kdrank/random.hpp"

namespace kdrank {

namespace {

using Json = nlohmann::ordered_json;

[[noreturn]] void config_error(const std::string& what) {
  throw Error(ErrorKind::kContract, "config: " + what);
}

// Reads named keys of one JSON object; keys never asked for are rejected.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) config_error(where_ + " must be an object");
  }
  ~Fields() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) config_error("unknown key '" + where_ + key + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      config_error("bad value for '" + where_ + key + "'");
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  const std::string& where() const { return where_; }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

Json stage_json(const StageSettings& s) {
  return Json{{"epochs", s.epochs}, {"batch_size", s.batch_size},
              {"learning_rate", s.learning_rate}};
}

void read_stage(const Json& j, const std::string& where, StageSettings& s) {
  Fields f(j, where + ".");
  f.get("epochs", s.epochs);
  f.get("batch_size", s.batch_size);
  f.get("learning_rate", s.learning_rate);
}

Json corpus_json(const SyntheticSpec& s) {
  return Json{{"num_queries", s.num_queries},
              {"num_dev_queries", s.num_dev_queries},
              {"vocab_size", s.vocab_size},
              {"docs_per_query", s.docs_per_query},
              {"dev_candidates", s.dev_candidates},
              {"min_doc_length", s.min_doc_length},
              {"max_doc_length", s.max_doc_length},
              {"min_query_length", s.min_query_length},
              {"max_query_length", s.max_query_length},
              {"min_title_length", s.min_title_length},
              {"max_title_length", s.max_title_length},
              {"signal_strength", s.signal_strength},
              {"partial_match_rate", s.partial_match_rate},
              {"zipf_exponent", s.zipf_exponent}};
}

void read_corpus(const Json& j, SyntheticSpec& s) {
  Fields f(j, "corpus.");
  f.get("num_queries", s.num_queries);
  f.get("num_dev_queries", s.num_dev_queries);
  f.get("vocab_size", s.vocab_size);
  f.get("docs_per_query", s.docs_per_query);
  f.get("dev_candidates", s.dev_candidates);
  f.get("min_doc_length", s.min_doc_length);
  f.get("max_doc_length", s.max_doc_length);
  f.get("min_query_length", s.min_query_length);
  f.get("max_query_length", s.max_query_length);
  f.get("min_title_length", s.min_title_length);
  f.get("max_title_length", s.max_title_length);
  f.get("signal_strength", s.signal_strength);
  f.get("partial_match_rate", s.partial_match_rate);
  f.get("zipf_exponent", s.zipf_exponent);
}

Json plan_json(const DistillPlan& p) {
  Json j{{"mode", mode_name(p.mode)},
         {"finetune", stage_json(p.finetune)},
         {"prediction", stage_json(p.prediction)},
         {"intermediate", stage_json(p.intermediate)},
         {"weight_decay", p.weight_decay},
         {"temperature", p.hyper.temperature},
         {"alpha", p.hyper.alpha},
         {"temperature_grid", p.temperature_grid},
         {"alpha_grid", p.alpha_grid},
         {"init_from_first_k", nullptr},
         {"seed", p.seed}};
  if (p.init_from_first_k) j["init_from_first_k"] = *p.init_from_first_k;
  return j;
}

void read_plan(const Json& j, DistillPlan& p) {
  Fields f(j, "plan.");
  std::string mode = mode_name(p.mode);
  f.get("mode", mode);
  p.mode = parse_mode(mode);
  if (const Json* s = f.child("finetune")) read_stage(*s, "plan.finetune", p.finetune);
  if (const Json* s = f.child("prediction")) read_stage(*s, "plan.prediction", p.prediction);
  if (const Json* s = f.child("intermediate")) read_stage(*s, "plan.intermediate", p.intermediate);
  f.get("weight_decay", p.weight_decay);
  f.get("temperature", p.hyper.temperature);
  f.get("alpha", p.hyper.alpha);
  f.get("temperature_grid", p.temperature_grid);
  f.get("alpha_grid", p.alpha_grid);
  if (const Json* k = f.child("init_from_first_k")) {
    if (k->is_null()) {
      p.init_from_first_k.reset();
    } else if (k->is_number_unsigned()) {
      p.init_from_first_k = k->get<std::size_t>();
    } else {
      config_error("bad value for 'plan.init_from_first_k'");
    }
  }
  f.get("seed", p.seed);
}

}  // namespace

DistillPlan DeskConfig::desk_plan() {
  DistillPlan plan = DistillPlan{}.scaled(8);
  plan.finetune.learning_rate = 3e-4;
  plan.prediction.learning_rate = 3e-4;
  plan.intermediate.learning_rate = 1e-3;
  return plan;
}

EncoderConfig DeskConfig::teacher_config(std::size_t vocab_size) const {
  return EncoderConfig::shaped(teacher_layers, teacher_hidden, vocab_size, max_position);
}

EncoderConfig DeskConfig::student_config(std::size_t vocab_size) const {
  return EncoderConfig::shaped(student_layers, student_hidden, vocab_size, max_position);
}

std::string DeskConfig::to_json() const {
  Json j{{"corpus", corpus_json(corpus)},
         {"corpus_seed", corpus_seed},
         {"vocab", {{"max_words", vocab.max_words}, {"max_subwords", vocab.max_subwords}}},
         {"split",
          {{"window", split.window},
           {"stride", split.stride},
           {"max_query_tokens", split.max_query_tokens},
           {"max_input_tokens", split.max_input_tokens}}},
         {"max_position", max_position},
         {"teacher", {{"layers", teacher_layers}, {"hidden", teacher_hidden}, {"seed", teacher_seed}}},
         {"student", {{"layers", student_layers}, {"hidden", student_hidden}}},
         {"pairs",
          {{"passages_per_doc", pairs.passages_per_doc},
           {"negatives_per_query", pairs.negatives_per_query},
           {"seed", pairs.seed}}},
         {"plan", plan_json(plan)},
         {"threads", threads}};
  return j.dump(2) + "\n";
}

DeskConfig DeskConfig::from_json(const std::string& text, const DeskConfig& base) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kParse, std::string("config: ") + e.what());
  }
  DeskConfig c = base;
  {
    Fields f(j, "");
    if (const Json* s = f.child("corpus")) read_corpus(*s, c.corpus);
    f.get("corpus_seed", c.corpus_seed);
    if (const Json* s = f.child("vocab")) {
      Fields v(*s, "vocab.");
      v.get("max_words", c.vocab.max_words);
      v.get("max_subwords", c.vocab.max_subwords);
    }
    if (const Json* s = f.child("split")) {
      Fields v(*s, "split.");
      v.get("window", c.split.window);
      v.get("stride", c.split.stride);
      v.get("max_query_tokens", c.split.max_query_tokens);
      v.get("max_input_tokens", c.split.max_input_tokens);
    }
    f.get("max_position", c.max_position);
    if (const Json* s = f.child("teacher")) {
      Fields v(*s, "teacher.");
      v.get("layers", c.teacher_layers);
      v.get("hidden", c.teacher_hidden);
      v.get("seed", c.teacher_seed);
    }
    if (const Json* s = f.child("student")) {
      Fields v(*s, "student.");
      v.get("layers", c.student_layers);
      v.get("hidden", c.student_hidden);
    }
    if (const Json* s = f.child("pairs")) {
      Fields v(*s, "pairs.");
      v.get("passages_per_doc", c.pairs.passages_per_doc);
      v.get("negatives_per_query", c.pairs.negatives_per_query);
      v.get("seed", c.pairs.seed);
    }
    if (const Json* s = f.child("plan")) read_plan(*s, c.plan);
    f.get("threads", c.threads);
  }
  c.corpus.validate();
  c.split.validate();
  c.plan.validate();
  if (c.split.max_input_tokens > c.max_position) {
    config_error("split.max_input_tokens exceeds max_position");
  }
  return c;
}

DeskConfig DeskConfig::from_json(const std::string& text) {
  return from_json(text, DeskConfig{});
}

PreparedCorpus prepare_corpus(Corpus corpus, const VocabOptions& options) {
  std::vector<std::string> texts;
  texts.reserve(corpus.queries.size() + 2 * corpus.docs.size());
  for (const auto& [id, text] : corpus.queries) texts.push_back(text);
  for (const auto& [id, doc] : corpus.docs) {
    texts.push_back(doc.title);
    texts.push_back(doc.body);
  }
  PreparedCorpus out{std::move(corpus), build_vocab(texts, options), {}};
  out.text = tokenize_corpus(out.corpus.queries, out.corpus.docs, out.vocab);
  return out;
}

PreparedCorpus prepare_corpus(const DeskConfig& config) {
  return prepare_corpus(gen_synthetic_corpus(config.corpus, config.corpus_seed), config.vocab);
}

Validator make_validator(const PreparedCorpus& prepared, const PassageSplitConfig& split,
                         std::size_t threads) {
  return [&prepared, split, threads](const Checkpoint& model) {
    return rerank_mrr_at_10(model, prepared.text, prepared.corpus.dev_candidates,
                            prepared.corpus.validation_query_ids, prepared.corpus.qrels, split,
                            threads);
  };
}

DistillResult train_teacher(const DeskConfig& config, const PreparedCorpus& prepared) {
  const auto built = build_training_pairs(nullptr, prepared.text, prepared.corpus.train_query_ids,
                                          prepared.corpus.train_candidates,
                                          prepared.corpus.qrels, config.split, config.pairs);
  const EncoderConfig shape = config.teacher_config(prepared.vocab.size());
  Rng rng(config.teacher_seed);
  Checkpoint start{shape, init_weights(shape, rng)};
  return run_finetune(config.plan, start, built.pairs,
                      make_validator(prepared, config.split, config.threads));
}

std::vector<TrainingPair> distillation_pairs(const DeskConfig& config,
                                             const PreparedCorpus& prepared,
                                             const Checkpoint& teacher) {
  return build_training_pairs(&teacher, prepared.text, prepared.corpus.train_query_ids,
                              prepared.corpus.train_candidates, prepared.corpus.qrels,
                              config.split, config.pairs)
      .pairs;
}

std::map<std::size_t, double> depth_study(const Checkpoint& model, const PreparedCorpus& prepared,
                                          std::span<const std::string> query_ids,
                                          std::span<const std::size_t> depths,
                                          const PassageSplitConfig& split, std::size_t threads) {
  if (depths.empty()) throw Error(ErrorKind::kContract, "depth study needs at least one depth");
  const std::size_t deepest = *std::max_element(depths.begin(), depths.end());
  const auto& lists = prepared.corpus.dev_candidates;
  const CandidateScores scores =
      score_candidates(model, prepared.text, lists, query_ids, split, deepest, threads);
  std::map<std::size_t, double> out;
  for (std::size_t depth : depths) {
    const auto run = rerank_run(lists, scores, query_ids, depth);
    const RankedLists ranked = to_ranked_lists(run);
    double sum = 0.0;
    for (const auto& qid : query_ids) {
      auto it = ranked.find(qid);
      if (it == ranked.end()) continue;
      sum += reciprocal_rank(it->second, qid, prepared.corpus.qrels, 10);
    }
    out[depth] = query_ids.empty() ? 0.0 : sum / static_cast<double>(query_ids.size());
  }
  return out;
}

ModeComparison compare_modes(const DeskConfig& config, const PreparedCorpus& prepared,
                             const Checkpoint& teacher, std::span<const TrainingPair> pairs,
                             std::span<const DistillMode> modes,
                             std::span<const std::uint64_t> seeds) {
  if (modes.empty() || seeds.empty()) {
    throw Error(ErrorKind::kContract, "mode comparison needs modes and seeds");
  }
  const Validator validator = make_validator(prepared, config.split, config.threads);
  const EncoderConfig student = config.student_config(prepared.vocab.size());
  const TeacherCache cache(teacher, pairs,
                           uniform_layer_map(student.num_layers, teacher.config.num_layers).mapping);
  ModeComparison out;
  out.teacher_validation_mrr = validator(teacher);
  for (DistillMode mode : modes) {
    ModeOutcome outcome;
    outcome.mode = mode;
    for (std::uint64_t seed : seeds) {
      DistillPlan plan = config.plan;
      plan.mode = mode;
      plan.seed = seed;
      DistillInputs inputs;
      inputs.teacher = &teacher;
      inputs.student_config = student;
      inputs.pairs = pairs;
      inputs.validator = validator;
      inputs.cache = &cache;
      DistillResult result = run_distillation(plan, inputs);
      outcome.validation_mrr.push_back(result.validation_mrr.value_or(validator(result.student)));
      outcome.optimizer_steps.push_back(result.optimizer_steps);
      if (out.modes.empty() && outcome.validation_mrr.size() == 1) {
        out.reference_student = std::move(result.student);
      }
    }
    outcome.mean = std::accumulate(outcome.validation_mrr.begin(), outcome.validation_mrr.end(), 0.0) /
                   static_cast<double>(outcome.validation_mrr.size());
    out.modes.push_back(std::move(outcome));
  }
  return out;
}

}  // namespace kdrank
