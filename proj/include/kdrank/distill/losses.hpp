#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kdrank/autodiff/tensor.hpp"
#include "kdrank/encoder/model.hpp"
#include "kdrank/random.hpp"

namespace kdrank {

struct KDHyper {
  double temperature = 1.0;
  double alpha = 0.5;

  void validate() const;
};

// Student layer m (1-based) reads teacher layer mapping[m - 1].
struct LayerMap {
  std::size_t student_layers = 0;
  std::size_t teacher_layers = 0;
  std::vector<std::size_t> mapping;

  std::size_t teacher_layer(std::size_t student_layer) const;
};

// g(m) = m * M / N. kUnsupportedMap unless N divides M.
LayerMap uniform_layer_map(std::size_t student_layers, std::size_t teacher_layers);

// Width adapters for the hidden-state and embedding losses, [Hs x Ht].
// Frozen identities when the widths agree.
struct ProjectionSet {
  Tensor hidden;
  Tensor embedding;
  bool trainable = false;

  static ProjectionSet create(std::size_t student_hidden, std::size_t teacher_hidden, Rng& rng);
  std::vector<Tensor> parameters() const;
};

// T^2 * CE(softmax(teacher / T), softmax(student / T)), batch mean. The
// teacher side is a constant table of B*C logits. kLoss on non-finite input.
Tensor soft_loss(const Tensor& student_logits, std::span<const double> teacher_logits,
                 double temperature);

// -log softmax(student)[label], batch mean, at temperature 1.
Tensor hard_loss(const Tensor& student_logits, std::span<const int> labels);

struct IntermediateLosses {
  Tensor attention;
  Tensor hidden;
  Tensor embedding;
};

// MSEs between mapped student and teacher internals over real tokens only.
// Attention compares pre-softmax scores, averaged over heads when the head
// counts differ. Teacher layers not named by the map may be left undefined.
IntermediateLosses intermediate_losses(const EncoderTrace& student, const EncoderTrace& teacher,
                                       const LayerMap& map, const ProjectionSet& projections);

// What a training step optimizes.
enum class Objective {
  kIntermediate,          // l_attn + l_hidn + l_emb
  kPrediction,            // l_soft
  kPredictionWithHard,    // l_soft + l_hard
  kOneStep,               // l_attn + l_hidn + l_emb + l_soft
  kOneStepWithHard,       // l_attn + l_hidn + l_emb + l_soft + l_hard
  kStandardKd,            // alpha * l_soft + (1 - alpha) * l_hard
  kHardOnly,              // l_hard (fine-tuning)
};

const char* objective_name(Objective objective);
bool needs_intermediate(Objective objective);
bool needs_soft(Objective objective);
bool needs_hard(Objective objective);

// Undefined tensors mark absent components.
struct LossTerms {
  Tensor attention;
  Tensor hidden;
  Tensor embedding;
  Tensor soft;
  Tensor hard;
};

struct LossBreakdown {
  double l_attn = 0.0;
  double l_hidn = 0.0;
  double l_emb = 0.0;
  double l_soft = 0.0;
  double l_hard = 0.0;
  double total = 0.0;
};

struct CombinedLoss {
  Tensor total;
  LossBreakdown breakdown;
};

// kContract when a component the objective needs is absent.
CombinedLoss combine_loss(const LossTerms& terms, Objective objective, const KDHyper& hyper);

}  // namespace kdrank
