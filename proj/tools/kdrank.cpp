// kdrank command-line tool.
//
//   kdrank gen-synth --out DIR
//   kdrank finetune  --corpus DIR --out RUN
//   kdrank distill   --corpus DIR --teacher RUN --mode simplified_one_step --out RUN
//   kdrank rerank    --corpus DIR --model RUN --depth 100 --out RUN
//   kdrank evaluate  --run a.run --baseline b.run --qrels qrels.txt [--out RUN]
//   kdrank flops     --layers 12 --hidden 768 --seq 256 [--baseline 12,768]
//
// Settings resolve as built-in defaults, then --config, then flags. Every
// command that writes a run directory stores the resolved settings in
// config.json next to its outputs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kdrank/data/collection.hpp"
#include "kdrank/encoder/checkpoint.hpp"
#include "kdrank/encoder/flops.hpp"
#include "kdrank/error.hpp"
#include "kdrank/eval/significance.hpp"
#include "kdrank/workflow/desk.hpp"

namespace fs = std::filesystem;
using namespace kdrank;
using Json = nlohmann::ordered_json;

namespace {

constexpr const char* kConfigFile = "config.json";
constexpr const char* kCheckpointFile = "model.ckpt";
constexpr const char* kVocabFile = "vocab.txt";
constexpr const char* kLogFile = "train.log";
constexpr const char* kRunFile = "run.txt";
constexpr const char* kMetricsFile = "metrics.tsv";

// Files a command declares. Unless commit() is reached, everything written
// is removed again, along with the directory if the command created it.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {
    if (dir_.empty()) return;
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_);
      created_ = true;
    } else if (!fs::is_directory(dir_)) {
      throw Error(ErrorKind::kIo, dir_.string() + " is not a directory");
    }
  }
  Outputs(const Outputs&) = delete;
  Outputs& operator=(const Outputs&) = delete;
  ~Outputs() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& f : files_) fs::remove_all(f, ec);
    if (created_) fs::remove_all(dir_, ec);
  }

  fs::path file(const std::string& name) {
    files_.push_back(dir_ / name);
    return files_.back();
  }
  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  bool created_ = false;
  bool committed_ = false;
  std::vector<fs::path> files_;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.flush();
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
}

void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw Error(ErrorKind::kIo, "missing file " + path.string());
}

// Options shared by every training command.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool deterministic = false;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--config", c.config_path, "JSON settings file (a saved config.json works)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--threads", c.threads, "Worker threads for scoring");
  cmd->add_flag("--deterministic", c.deterministic, "Single-threaded scoring");
  auto* out = cmd->add_option("--out", c.out, "Output directory");
  if (needs_out) out->required();
}

DeskConfig resolve(const Common& c) {
  DeskConfig config;
  if (!c.config_path.empty()) {
    const Json j = Json::parse(read_text(c.config_path), nullptr, false);
    if (j.is_discarded()) throw Error(ErrorKind::kParse, c.config_path + ": invalid JSON");
    config = DeskConfig::from_json(j.contains("settings") ? j["settings"].dump() : j.dump());
  }
  if (c.threads) config.threads = *c.threads;
  if (c.deterministic) config.threads = 1;
  if (config.threads == 0) throw Error(ErrorKind::kContract, "--threads must be positive");
  return config;
}

void save_config(Outputs& out, const std::string& command, const Json& inputs,
                 const DeskConfig& config) {
  Json j{{"command", command}, {"inputs", inputs},
         {"settings", Json::parse(config.to_json())}};
  write_text(out.file(kConfigFile), j.dump(2) + "\n");
}

PreparedCorpus load_prepared(const fs::path& corpus_dir, const Vocab& vocab) {
  PreparedCorpus p{load_corpus(corpus_dir), vocab, {}};
  p.text = tokenize_corpus(p.corpus.queries, p.corpus.docs, p.vocab);
  return p;
}

// Checkpoint and vocabulary of a finetune or distill run directory.
struct Model {
  Checkpoint checkpoint;
  Vocab vocab;
};

Model load_model(const fs::path& dir) {
  require_file(dir / kCheckpointFile);
  require_file(dir / kVocabFile);
  Model m{load_checkpoint(dir / kCheckpointFile), Vocab::load(dir / kVocabFile)};
  if (m.checkpoint.config.vocab_size != m.vocab.size()) {
    throw Error(ErrorKind::kIncompatibleShapes,
                "checkpoint expects " + std::to_string(m.checkpoint.config.vocab_size) +
                    " tokens but " + (dir / kVocabFile).string() + " has " +
                    std::to_string(m.vocab.size()));
  }
  return m;
}

const std::vector<std::string>& query_split(const Corpus& corpus, const std::string& name) {
  if (name == "train") return corpus.train_query_ids;
  if (name == "validation") return corpus.validation_query_ids;
  if (name == "test") return corpus.test_query_ids;
  throw Error(ErrorKind::kContract, "unknown query split '" + name + "'");
}

std::string macs_text(std::uint64_t macs, double speedup) {
  char buf[64];
  std::snprintf(buf, sizeof buf, speedup < 10.0 ? "%.2fG (%.2f\xC3\x97)" : "%.2fG (%.1f\xC3\x97)",
                static_cast<double>(macs) / 1e9, speedup);
  return buf;
}

std::pair<std::size_t, std::size_t> parse_shape(const std::string& text) {
  const auto comma = text.find(',');
  try {
    if (comma == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    const auto layers = std::stoul(text.substr(0, comma), &used);
    if (used != comma) throw std::invalid_argument(text);
    const std::string rest = text.substr(comma + 1);
    const auto hidden = std::stoul(rest, &used);
    if (used != rest.size()) throw std::invalid_argument(text);
    return {layers, hidden};
  } catch (const std::logic_error&) {
    throw Error(ErrorKind::kContract, "--baseline expects LAYERS,HIDDEN, got '" + text + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BERT re-ranking with Simplified TinyBERT distillation", "kdrank"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // gen-synth
  Common gen;
  std::optional<std::size_t> gen_queries, gen_dev, gen_candidates;
  std::optional<double> gen_signal;
  auto* gen_cmd = app.add_subcommand("gen-synth", "Write a synthetic ranking corpus");
  add_common(gen_cmd, gen);
  gen_cmd->add_option("--queries", gen_queries, "Training queries");
  gen_cmd->add_option("--dev-queries", gen_dev, "Validation plus test queries");
  gen_cmd->add_option("--candidates", gen_candidates, "First-stage list length per dev query");
  gen_cmd->add_option("--signal", gen_signal, "Planting probability of each query term");

  // finetune
  Common ft;
  std::string ft_corpus;
  std::optional<std::size_t> ft_layers, ft_hidden;
  auto* ft_cmd = app.add_subcommand("finetune", "Fine-tune a teacher on hard labels");
  add_common(ft_cmd, ft);
  ft_cmd->add_option("--corpus", ft_corpus, "Corpus directory")->required();
  ft_cmd->add_option("--layers", ft_layers, "Teacher layers");
  ft_cmd->add_option("--hidden", ft_hidden, "Teacher hidden size");

  // distill
  Common ds;
  std::string ds_corpus, ds_teacher, ds_mode;
  std::optional<std::size_t> ds_layers, ds_hidden, ds_first_k;
  auto* ds_cmd = app.add_subcommand("distill", "Distil a student from a fine-tuned teacher");
  add_common(ds_cmd, ds);
  ds_cmd->add_option("--corpus", ds_corpus, "Corpus directory")->required();
  ds_cmd->add_option("--teacher", ds_teacher, "Run directory of the teacher")->required();
  ds_cmd->add_option("--mode", ds_mode,
                     "standard_kd | tinybert_two_stage | simplified_one_step | "
                     "ablation_hard_only | ablation_one_step_only");
  ds_cmd->add_option("--layers", ds_layers, "Student layers");
  ds_cmd->add_option("--hidden", ds_hidden, "Student hidden size");
  ds_cmd->add_option("--init-first-k", ds_first_k, "Copy the first k teacher layers");

  // rerank
  Common rr;
  std::string rr_corpus, rr_model, rr_queries = "test";
  std::size_t rr_depth = 100;
  auto* rr_cmd = app.add_subcommand("rerank", "Re-rank first-stage candidates with MaxP");
  add_common(rr_cmd, rr);
  rr_cmd->add_option("--corpus", rr_corpus, "Corpus directory")->required();
  rr_cmd->add_option("--model", rr_model, "Run directory of a trained model")->required();
  rr_cmd->add_option("--depth", rr_depth, "Candidates re-scored per query")->capture_default_str();
  rr_cmd->add_option("--queries", rr_queries, "train | validation | test")->capture_default_str();

  // evaluate
  std::string ev_run, ev_qrels, ev_out;
  std::vector<std::string> ev_baselines;
  std::optional<std::size_t> ev_cutoff;
  auto* ev_cmd = app.add_subcommand("evaluate", "Metrics with paired t-tests against baselines");
  ev_cmd->add_option("--run", ev_run, "Run file")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--baseline", ev_baselines, "Baseline run file (repeatable)")
      ->check(CLI::ExistingFile);
  ev_cmd->add_option("--qrels", ev_qrels, "Relevance judgments")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--mrr-cutoff", ev_cutoff, "Report MRR@k in place of MRR");
  ev_cmd->add_option("--out", ev_out, "Directory for metrics.tsv");

  // flops
  std::size_t fl_layers = 12, fl_hidden = 768, fl_seq = 256;
  std::string fl_baseline;
  auto* fl_cmd = app.add_subcommand("flops", "Multiply-accumulate estimate of one forward pass");
  fl_cmd->add_option("--layers", fl_layers)->capture_default_str();
  fl_cmd->add_option("--hidden", fl_hidden)->capture_default_str();
  fl_cmd->add_option("--seq", fl_seq)->capture_default_str();
  fl_cmd->add_option("--baseline", fl_baseline, "Reference shape as LAYERS,HIDDEN");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "kdrank: error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen_cmd) {
      DeskConfig config = resolve(gen);
      if (gen.seed) config.corpus_seed = *gen.seed;
      if (gen_queries) config.corpus.num_queries = *gen_queries;
      if (gen_dev) config.corpus.num_dev_queries = *gen_dev;
      if (gen_candidates) config.corpus.dev_candidates = *gen_candidates;
      if (gen_signal) config.corpus.signal_strength = *gen_signal;
      config.corpus.validate();
      const Corpus corpus = gen_synthetic_corpus(config.corpus, config.corpus_seed);
      Outputs out(gen.out);
      for (const char* name : {"queries.tsv", "docs.tsv", "qrels.txt", "train.run", "dev.run",
                               "split.tsv"}) {
        out.file(name);
      }
      write_corpus(corpus, gen.out);
      save_config(out, "gen-synth", Json::object(), config);
      out.commit();
      std::printf("wrote %zu queries and %zu documents to %s\n", corpus.queries.size(),
                  corpus.docs.size(), gen.out.c_str());
    } else if (*ft_cmd) {
      DeskConfig config = resolve(ft);
      if (ft.seed) {
        config.teacher_seed = *ft.seed;
        config.pairs.seed = *ft.seed;
      }
      if (ft_layers) config.teacher_layers = *ft_layers;
      if (ft_hidden) config.teacher_hidden = *ft_hidden;
      const PreparedCorpus prepared = prepare_corpus(load_corpus(ft_corpus), config.vocab);
      Outputs out(ft.out);
      const DistillResult result = train_teacher(config, prepared);
      save_checkpoint(out.file(kCheckpointFile), result.student);
      prepared.vocab.save(out.file(kVocabFile));
      write_log(result.log, out.file(kLogFile));
      save_config(out, "finetune", Json{{"corpus", ft_corpus}}, config);
      out.commit();
      std::printf("teacher %s validation MRR@10 %.4f after %zu steps\n",
                  config_label(result.student.config).c_str(), result.validation_mrr.value_or(0.0),
                  result.optimizer_steps);
    } else if (*ds_cmd) {
      DeskConfig config = resolve(ds);
      if (ds.seed) config.plan.seed = *ds.seed;
      if (!ds_mode.empty()) config.plan.mode = parse_mode(ds_mode);
      if (ds_layers) config.student_layers = *ds_layers;
      if (ds_hidden) config.student_hidden = *ds_hidden;
      if (ds_first_k) config.plan.init_from_first_k = *ds_first_k;
      config.plan.validate();
      const Model teacher = load_model(ds_teacher);
      const PreparedCorpus prepared = load_prepared(ds_corpus, teacher.vocab);
      const auto pairs = distillation_pairs(config, prepared, teacher.checkpoint);
      Outputs out(ds.out);
      DistillInputs in;
      in.teacher = &teacher.checkpoint;
      in.student_config = config.student_config(teacher.vocab.size());
      in.pairs = pairs;
      in.validator = make_validator(prepared, config.split, config.threads);
      const DistillResult result = run_distillation(config.plan, in);
      save_checkpoint(out.file(kCheckpointFile), result.student);
      teacher.vocab.save(out.file(kVocabFile));
      write_log(result.log, out.file(kLogFile));
      save_config(out, "distill", Json{{"corpus", ds_corpus}, {"teacher", ds_teacher}}, config);
      out.commit();
      std::printf("%s student %s validation MRR@10 %.4f after %zu steps\n",
                  mode_name(config.plan.mode), config_label(result.student.config).c_str(),
                  result.validation_mrr.value_or(0.0), result.optimizer_steps);
    } else if (*rr_cmd) {
      const DeskConfig config = resolve(rr);
      const Model model = load_model(rr_model);
      const PreparedCorpus prepared = load_prepared(rr_corpus, model.vocab);
      const auto& ids = query_split(prepared.corpus, rr_queries);
      const auto& lists = rr_queries == "train" ? prepared.corpus.train_candidates
                                                : prepared.corpus.dev_candidates;
      const auto scores = score_candidates(model.checkpoint, prepared.text, lists, ids,
                                           config.split, rr_depth, config.threads);
      const auto run = rerank_run(lists, scores, ids, rr_depth);
      Outputs out(rr.out);
      write_run(run, "kdrank", out.file(kRunFile));
      save_config(out, "rerank",
                  Json{{"corpus", rr_corpus}, {"model", rr_model}, {"depth", rr_depth},
                       {"queries", rr_queries}},
                  config);
      out.commit();
      std::printf("re-ranked %zu queries at depth %zu\n", ids.size(), rr_depth);
    } else if (*ev_cmd) {
      const Qrels qrels = parse_qrels(ev_qrels);
      std::map<std::string, RankedLists> baselines;
      for (const auto& b : ev_baselines) baselines[b] = to_ranked_lists(parse_run(b));
      ReportOptions options;
      options.mrr_cutoff = ev_cutoff;
      const MetricReport report =
          build_report(ev_run, to_ranked_lists(parse_run(ev_run)), qrels, baselines, options);
      const std::string text = report.to_text();
      if (!ev_out.empty()) {
        Outputs out(ev_out);
        write_text(out.file(kMetricsFile), text);
        out.commit();
      }
      std::fputs(text.c_str(), stdout);
    } else if (*fl_cmd) {
      const auto shape = [&](std::size_t layers, std::size_t hidden) {
        return EncoderConfig::shaped(layers, hidden, 30522, std::max<std::size_t>(fl_seq, 512));
      };
      const std::uint64_t macs = estimate_macs(shape(fl_layers, fl_hidden), fl_seq);
      std::uint64_t reference = macs;
      if (!fl_baseline.empty()) {
        const auto [layers, hidden] = parse_shape(fl_baseline);
        reference = estimate_macs(shape(layers, hidden), fl_seq);
      }
      const double speedup = static_cast<double>(reference) / static_cast<double>(macs);
      std::printf("%s\n", macs_text(macs, speedup).c_str());
    }
  } catch (const Error& e) {
    std::cerr << "kdrank: error: " << error_kind_name(e.kind()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "kdrank: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
