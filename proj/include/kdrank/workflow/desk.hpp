#pragma once

// End-to-end desk-scale experiment: synthetic corpus, teacher fine-tuning,
// distillation into a student and re-ranking evaluation. Shared by the CLI,
// the acceptance tests and the Python bindings.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kdrank/data/synthetic.hpp"
#include "kdrank/data/vocab.hpp"
#include "kdrank/distill/pipeline.hpp"
#include "kdrank/rank/rank.hpp"

namespace kdrank {

struct DeskConfig {
  SyntheticSpec corpus;
  std::uint64_t corpus_seed = 7;
  VocabOptions vocab{1000, 200};
  PassageSplitConfig split{24, 12, 8, 35};
  std::size_t max_position = 64;
  std::size_t teacher_layers = 4;
  std::size_t teacher_hidden = 64;
  std::size_t student_layers = 2;
  std::size_t student_hidden = 32;
  std::uint64_t teacher_seed = 1;
  PairBuildOptions pairs{5, 4, 0};
  // Default schedule with batch sizes divided by 8 and learning rates suited
  // to encoders trained from scratch.
  DistillPlan plan = desk_plan();
  std::size_t threads = 1;

  static DistillPlan desk_plan();

  // Teacher and student shapes once the vocabulary size is known.
  EncoderConfig teacher_config(std::size_t vocab_size) const;
  EncoderConfig student_config(std::size_t vocab_size) const;

  // Pretty-printed JSON with every field.
  std::string to_json() const;
  // Starts from `base` and overrides the fields present in `json`. Unknown
  // keys are a contract error.
  static DeskConfig from_json(const std::string& json, const DeskConfig& base);
  static DeskConfig from_json(const std::string& json);
};

struct PreparedCorpus {
  Corpus corpus;
  Vocab vocab;
  TokenizedCorpus text;
};

// Vocabulary built from query texts, titles and bodies in id order.
PreparedCorpus prepare_corpus(Corpus corpus, const VocabOptions& options);
PreparedCorpus prepare_corpus(const DeskConfig& config);

// Validation MRR@10 at full depth.
Validator make_validator(const PreparedCorpus& prepared, const PassageSplitConfig& split,
                         std::size_t threads);

// Fine-tunes a freshly initialized teacher on hard labels.
DistillResult train_teacher(const DeskConfig& config, const PreparedCorpus& prepared);

// Teacher-scored training pairs of the training queries.
std::vector<TrainingPair> distillation_pairs(const DeskConfig& config,
                                             const PreparedCorpus& prepared,
                                             const Checkpoint& teacher);

// MRR@10 after re-ranking `query_ids` at each depth. Scores come from one
// pass at the largest depth, so nested depths see identical scores.
std::map<std::size_t, double> depth_study(const Checkpoint& model, const PreparedCorpus& prepared,
                                          std::span<const std::string> query_ids,
                                          std::span<const std::size_t> depths,
                                          const PassageSplitConfig& split, std::size_t threads);

struct ModeOutcome {
  DistillMode mode = DistillMode::kSimplifiedOneStep;
  std::vector<double> validation_mrr;  // one per seed
  std::vector<std::size_t> optimizer_steps;
  double mean = 0.0;
};

struct ModeComparison {
  double teacher_validation_mrr = 0.0;
  std::vector<ModeOutcome> modes;
  // Student of the first mode and seed, kept for further evaluation.
  Checkpoint reference_student;
};

// Distils one student per (mode, seed) from the same teacher and pairs.
ModeComparison compare_modes(const DeskConfig& config, const PreparedCorpus& prepared,
                             const Checkpoint& teacher, std::span<const TrainingPair> pairs,
                             std::span<const DistillMode> modes,
                             std::span<const std::uint64_t> seeds);

}  // namespace kdrank
