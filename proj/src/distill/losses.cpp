#include "kdrank/distill/losses.hpp"

#include <algorithm>
#include <cmath>

#include "kdrank/autodiff/ops.hpp"
#include "kdrank/error.hpp"

namespace kdrank {

void KDHyper::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorKind::kContract, "temperature must be positive");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::kContract, "alpha must lie in [0, 1]");
}

std::size_t LayerMap::teacher_layer(std::size_t student_layer) const {
  if (student_layer < 1 || student_layer > mapping.size()) {
    throw Error(ErrorKind::kContract, "student layer " + std::to_string(student_layer) +
                                          " outside the layer map");
  }
  return mapping[student_layer - 1];
}

LayerMap uniform_layer_map(std::size_t student_layers, std::size_t teacher_layers) {
  if (student_layers == 0 || teacher_layers == 0 || teacher_layers % student_layers != 0) {
    throw Error(ErrorKind::kUnsupportedMap,
                "uniform layer map needs the student depth (" + std::to_string(student_layers) +
                    ") to divide the teacher depth (" + std::to_string(teacher_layers) + ")");
  }
  LayerMap map{student_layers, teacher_layers, {}};
  const std::size_t step = teacher_layers / student_layers;
  for (std::size_t m = 1; m <= student_layers; ++m) map.mapping.push_back(m * step);
  return map;
}

ProjectionSet ProjectionSet::create(std::size_t student_hidden, std::size_t teacher_hidden,
                                    Rng& rng) {
  ProjectionSet p;
  const std::size_t n = student_hidden * teacher_hidden;
  if (student_hidden == teacher_hidden) {
    std::vector<double> eye(n, 0.0);
    for (std::size_t i = 0; i < student_hidden; ++i) eye[i * teacher_hidden + i] = 1.0;
    p.hidden = Tensor({student_hidden, teacher_hidden}, eye, false);
    p.embedding = Tensor({student_hidden, teacher_hidden}, std::move(eye), false);
    return p;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(student_hidden));
  auto draw = [&] {
    std::vector<double> w(n);
    for (double& v : w) v = rng.uniform(-bound, bound);
    return Tensor({student_hidden, teacher_hidden}, std::move(w), true);
  };
  p.hidden = draw();
  p.embedding = draw();
  p.trainable = true;
  return p;
}

std::vector<Tensor> ProjectionSet::parameters() const {
  if (!trainable) return {};
  return {hidden, embedding};
}

namespace {

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::kLoss, std::string(what) + " holds a non-finite logit");
  }
}

}  // namespace

Tensor soft_loss(const Tensor& student_logits, std::span<const double> teacher_logits,
                 double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorKind::kContract, "temperature must be positive");
  if (student_logits.rank() != 2 || teacher_logits.size() != student_logits.numel()) {
    throw Error(ErrorKind::kDimension, "soft loss: student and teacher logits differ in size");
  }
  require_finite(student_logits.data(), "student");
  require_finite(teacher_logits, "teacher");
  const std::size_t batch = student_logits.dim(0), classes = student_logits.dim(1);
  std::vector<double> targets(teacher_logits.size());
  for (std::size_t b = 0; b < batch; ++b) {
    const auto row = teacher_logits.subspan(b * classes, classes);
    const double mx = *std::max_element(row.begin(), row.end()) / temperature;
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      targets[b * classes + c] = std::exp(row[c] / temperature - mx);
      total += targets[b * classes + c];
    }
    for (std::size_t c = 0; c < classes; ++c) targets[b * classes + c] /= total;
  }
  const Tensor ce = ops::soft_cross_entropy(ops::scale(student_logits, 1.0 / temperature), targets);
  return ops::scale(ce, temperature * temperature);
}

Tensor hard_loss(const Tensor& student_logits, std::span<const int> labels) {
  require_finite(student_logits.data(), "student");
  return ops::nll_loss(student_logits, labels);
}

IntermediateLosses intermediate_losses(const EncoderTrace& student, const EncoderTrace& teacher,
                                       const LayerMap& map, const ProjectionSet& projections) {
  auto mismatch = [](const std::string& what) {
    throw Error(ErrorKind::kContract, "intermediate losses: " + what);
  };
  if (student.batch != teacher.batch || student.seq_len != teacher.seq_len ||
      student.lengths != teacher.lengths) {
    mismatch("traces come from different inputs");
  }
  if (map.student_layers != student.hidden_states.size() ||
      map.teacher_layers != teacher.hidden_states.size() || map.mapping.size() != map.student_layers) {
    mismatch("layer map does not fit the traces");
  }
  const std::size_t B = student.batch, n = student.seq_len;
  const std::size_t hs = student.embedding_output.dim(1);
  const std::size_t ht = teacher.embedding_output.dim(1);
  if (projections.hidden.shape() != Shape{hs, ht} || projections.embedding.shape() != Shape{hs, ht}) {
    mismatch("projection shapes do not match the widths");
  }

  // Row weights for [B*n x Ht] targets and cell weights for [.. x n x n] maps.
  std::vector<double> row_weights(B * n * ht, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < student.lengths[b]; ++t) {
      std::fill_n(row_weights.begin() + static_cast<std::ptrdiff_t>((b * n + t) * ht), ht, 1.0);
    }
  }
  const bool same_heads = student.num_heads == teacher.num_heads;
  const std::size_t maps_per_item = same_heads ? student.num_heads : 1;
  std::vector<double> cell_weights(B * maps_per_item * n * n, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t len = student.lengths[b];
    for (std::size_t h = 0; h < maps_per_item; ++h) {
      const std::size_t base = (b * maps_per_item + h) * n * n;
      for (std::size_t i = 0; i < len; ++i) {
        std::fill_n(cell_weights.begin() + static_cast<std::ptrdiff_t>(base + i * n), len, 1.0);
      }
    }
  }

  IntermediateLosses out;
  out.embedding = ops::masked_mse(ops::matmul(student.embedding_output, projections.embedding),
                                  teacher.embedding_output.detach(), row_weights);
  Tensor attn_total, hidden_total;
  for (std::size_t m = 1; m <= map.student_layers; ++m) {
    const std::size_t g = map.teacher_layer(m);
    if (g < 1 || g > map.teacher_layers) mismatch("layer map points outside the teacher");
    const Tensor& t_scores = teacher.attention_scores[g - 1];
    const Tensor& t_hidden = teacher.hidden_states[g - 1];
    if (!t_scores.defined() || !t_hidden.defined()) {
      mismatch("teacher layer " + std::to_string(g) + " missing from the trace");
    }
    Tensor s_scores = student.attention_scores[m - 1];
    Tensor target = t_scores.detach();
    if (!same_heads) {
      s_scores = ops::mean_heads(s_scores, student.num_heads);
      target = ops::mean_heads(target, teacher.num_heads);
    }
    const Tensor attn = ops::masked_mse(s_scores, target, cell_weights);
    const Tensor hidden = ops::masked_mse(
        ops::matmul(student.hidden_states[m - 1], projections.hidden), t_hidden.detach(), row_weights);
    attn_total = attn_total.defined() ? ops::add(attn_total, attn) : attn;
    hidden_total = hidden_total.defined() ? ops::add(hidden_total, hidden) : hidden;
  }
  const double inv = 1.0 / static_cast<double>(map.student_layers);
  out.attention = ops::scale(attn_total, inv);
  out.hidden = ops::scale(hidden_total, inv);
  return out;
}

const char* objective_name(Objective objective) {
  switch (objective) {
    case Objective::kIntermediate: return "intermediate";
    case Objective::kPrediction: return "prediction";
    case Objective::kPredictionWithHard: return "prediction_hard";
    case Objective::kOneStep: return "one_step";
    case Objective::kOneStepWithHard: return "one_step_hard";
    case Objective::kStandardKd: return "standard_kd";
    case Objective::kHardOnly: return "hard_only";
  }
  return "?";
}

bool needs_intermediate(Objective o) {
  return o == Objective::kIntermediate || o == Objective::kOneStep ||
         o == Objective::kOneStepWithHard;
}

bool needs_soft(Objective o) {
  return o == Objective::kPrediction || o == Objective::kPredictionWithHard ||
         o == Objective::kOneStep || o == Objective::kOneStepWithHard ||
         o == Objective::kStandardKd;
}

bool needs_hard(Objective o) {
  return o == Objective::kPredictionWithHard || o == Objective::kOneStepWithHard ||
         o == Objective::kStandardKd || o == Objective::kHardOnly;
}

CombinedLoss combine_loss(const LossTerms& terms, Objective objective, const KDHyper& hyper) {
  auto require = [&](const Tensor& t, const char* name) -> const Tensor& {
    if (!t.defined()) {
      throw Error(ErrorKind::kContract, std::string(objective_name(objective)) +
                                            " objective needs " + name);
    }
    return t;
  };
  CombinedLoss out;
  auto value = [](const Tensor& t) { return t.defined() ? t.item() : 0.0; };
  out.breakdown.l_attn = value(terms.attention);
  out.breakdown.l_hidn = value(terms.hidden);
  out.breakdown.l_emb = value(terms.embedding);
  out.breakdown.l_soft = value(terms.soft);
  out.breakdown.l_hard = value(terms.hard);

  Tensor total;
  auto plus = [&](const Tensor& t) { total = total.defined() ? ops::add(total, t) : t; };
  if (needs_intermediate(objective)) {
    plus(require(terms.attention, "l_attn"));
    plus(require(terms.hidden, "l_hidn"));
    plus(require(terms.embedding, "l_emb"));
  }
  if (objective == Objective::kStandardKd) {
    hyper.validate();
    plus(ops::scale(require(terms.soft, "l_soft"), hyper.alpha));
    plus(ops::scale(require(terms.hard, "l_hard"), 1.0 - hyper.alpha));
  } else {
    if (needs_soft(objective)) plus(require(terms.soft, "l_soft"));
    if (needs_hard(objective)) plus(require(terms.hard, "l_hard"));
  }
  out.total = total;
  out.breakdown.total = total.item();
  for (double v : {out.breakdown.l_attn, out.breakdown.l_hidn, out.breakdown.l_emb,
                   out.breakdown.l_soft, out.breakdown.l_hard, out.breakdown.total}) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::kLoss, std::string(objective_name(objective)) +
                                        " loss has a non-finite component");
    }
  }
  return out;
}

}  // namespace kdrank
