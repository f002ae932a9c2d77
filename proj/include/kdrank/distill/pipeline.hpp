#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kdrank/distill/losses.hpp"
#include "kdrank/encoder/checkpoint.hpp"
#include "kdrank/rank/rank.hpp"

namespace kdrank {

enum class DistillMode {
  kStandardKd,
  kTinyBertTwoStage,
  kSimplifiedOneStep,
  kAblationHardOnly,      // two-stage with l_hard added to the prediction step
  kAblationOneStepOnly,   // one step without l_hard
};

const char* mode_name(DistillMode mode);
DistillMode parse_mode(const std::string& name);

struct StageSettings {
  std::size_t epochs = 2;
  std::size_t batch_size = 64;
  double learning_rate = 5e-5;
};

struct DistillPlan {
  DistillMode mode = DistillMode::kSimplifiedOneStep;
  StageSettings finetune{2, 128, 1e-6};
  StageSettings prediction{2, 128, 1e-6};
  // Used by every step that involves intermediate layers, one-step included.
  StageSettings intermediate{2, 64, 5e-5};
  double weight_decay = 0.01;
  KDHyper hyper;
  std::vector<double> temperature_grid{1.0, 5.0, 10.0};
  std::vector<double> alpha_grid{0.2, 0.5, 0.7};
  // Copy embeddings and the first k teacher layers into the student.
  std::optional<std::size_t> init_from_first_k;
  std::uint64_t seed = 0;

  // Divides every batch size by `factor` (at least 1 each).
  DistillPlan scaled(std::size_t factor) const;
  void validate() const;
};

// Ordered stage objectives for a mode.
std::vector<Objective> schedule_for(DistillMode mode);

// Mean validation MRR@10 of a model; the higher the better.
using Validator = std::function<double(const Checkpoint&)>;

// Teacher internals for every training pair, computed once. Only the
// embedding output, the listed teacher layers and the logits are kept.
class TeacherCache {
 public:
  TeacherCache(const Checkpoint& teacher, std::span<const TrainingPair> pairs,
               std::vector<std::size_t> teacher_layers, std::size_t batch_size = 64);

  // Padded batch layout of the cached rows, shaped like encode() output.
  // Layers that were not cached stay undefined.
  EncoderTrace assemble(std::span<const std::size_t> pair_indices) const;

  std::size_t size() const { return items_.size(); }
  const std::vector<std::size_t>& teacher_layers() const { return layers_; }
  const EncoderConfig& teacher_config() const { return config_; }

 private:
  struct Item {
    std::size_t length = 0;
    std::vector<double> embedding;                 // len x H
    std::vector<std::vector<double>> hidden;       // per cached layer, len x H
    std::vector<std::vector<double>> attention;    // per cached layer, A x len x len
    std::vector<double> logits;
  };
  EncoderConfig config_;
  std::vector<std::size_t> layers_;
  std::vector<Item> items_;
};

// One optimizer step record.
struct LogRecord {
  std::size_t step = 0;
  std::string mode;
  std::string stage;
  std::size_t epoch = 0;
  LossBreakdown losses;
  double learning_rate = 0.0;
};

struct StageReport {
  std::string name;
  Objective objective = Objective::kHardOnly;
  std::size_t optimizer_steps = 0;
  // Pair visiting order of each epoch.
  std::vector<std::vector<std::size_t>> epoch_orders;
  std::vector<double> validation_mrr;
};

struct GridPoint {
  KDHyper hyper;
  double validation_mrr = 0.0;
};

struct DistillResult {
  Checkpoint student;
  std::vector<LogRecord> log;
  std::vector<StageReport> stages;
  std::size_t optimizer_steps = 0;
  std::optional<double> validation_mrr;
  std::optional<KDHyper> selected;
  std::vector<GridPoint> grid;
};

// JSON object per line.
std::string log_to_jsonl(std::span<const LogRecord> log);
void write_log(std::span<const LogRecord> log, const std::filesystem::path& path);

// Permutation of [0, n) used for `epoch` of every stage under `seed`.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

struct DistillInputs {
  const Checkpoint* teacher = nullptr;
  EncoderConfig student_config;
  std::span<const TrainingPair> pairs;
  // Called after each epoch of a logit-producing stage to pick the best
  // checkpoint; without it the last weights are kept.
  Validator validator;
  // Starting weights, e.g. from general distillation. Overrides first-k.
  const Checkpoint* initial_student = nullptr;
  // Reused across runs when it covers the mapped teacher layers.
  const TeacherCache* cache = nullptr;
};

// Runs the plan's schedule. The teacher is only read. Raises
// DivergenceError naming the step when a loss turns non-finite.
DistillResult run_distillation(const DistillPlan& plan, const DistillInputs& inputs);

// Fine-tunes `start` on pair labels with the plan's finetune settings.
DistillResult run_finetune(const DistillPlan& plan, const Checkpoint& start,
                           std::span<const TrainingPair> pairs, const Validator& validator);

// Intermediate-loss distillation of `student` from a teacher that has not
// been fine-tuned, over unlabeled pairs.
DistillResult run_general_distillation(const DistillPlan& plan, const Checkpoint& teacher,
                                       const Checkpoint& student,
                                       std::span<const TrainingPair> pairs);

}  // namespace kdrank
