#include "distil/losses.hpp"

#include <cmath>
#include <string>

#include "distil/error.hpp"

namespace distil {

void LossWeights::validate() const {
  for (double w : {alpha, beta, gamma}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
  }
  if (alpha == 0.0 && beta == 0.0 && gamma == 0.0) throw ConfigError("loss weights cannot all be zero");
}

Tensor cross_entropy(const Tensor& probs, std::span<const std::size_t> labels) {
  if (labels.size() != probs.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         to_string(probs.shape()));
  }
  for (std::size_t y : labels) {
    if (y >= probs.cols()) {
      throw ContractError("cross_entropy: label " + std::to_string(y) + " out of range for " +
                          std::to_string(probs.cols()) + " classes");
    }
  }
  return scale(mean(log(clamp_min(pick(probs, labels), kProbabilityFloor))), -1.0);
}

namespace {

Tensor half_squared_error(const char* name, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(name) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  const Tensor diff = sub(a, b);
  return scale(sum(mul(diff, diff)), 0.5 / static_cast<double>(a.rows()));
}

}  // namespace

Tensor logit_loss(const Tensor& scores, const Tensor& target_logits) {
  return half_squared_error("logit_loss", scores, target_logits);
}

Tensor representation_loss(const Tensor& projected, const Tensor& teacher_hidden) {
  return half_squared_error("representation_loss", projected, teacher_hidden);
}

Tensor joint_loss(const LossWeights& weights, const std::optional<Tensor>& ce, const std::optional<Tensor>& rl,
                  const std::optional<Tensor>& ll) {
  std::optional<Tensor> total;
  auto accumulate = [&](const std::optional<Tensor>& term, double w) {
    if (!term) return;
    if (term->size() != 1) throw DimensionError("joint_loss: terms must be scalars");
    const Tensor weighted = scale(*term, w);
    total = total ? add(*total, weighted) : weighted;
  };
  accumulate(ce, weights.alpha);
  accumulate(rl, weights.beta);
  accumulate(ll, weights.gamma);
  if (!total) throw ContractError("joint_loss: no loss term present");
  return *total;
}

}  // namespace distil
