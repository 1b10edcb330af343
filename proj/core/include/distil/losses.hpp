#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "distil/autodiff.hpp"

namespace distil {

// Weights of the joint objective alpha*CE + beta*RL + gamma*LL.
struct LossWeights {
  double alpha = 10.0;
  double beta = 10.0;
  double gamma = 1.0;

  void validate() const;
  bool distills() const noexcept { return beta != 0.0 || gamma != 0.0; }
  bool operator==(const LossWeights&) const = default;
};

inline constexpr double kProbabilityFloor = 1e-12;

// Mean over the batch of -log p[i, label_i], with p floored at 1e-12.
Tensor cross_entropy(const Tensor& probs, std::span<const std::size_t> labels);

// (1/B) * sum_i 0.5 * ||scores_i - target_i||^2
Tensor logit_loss(const Tensor& scores, const Tensor& target_logits);

// Same form as logit_loss on projected student / teacher hidden vectors.
Tensor representation_loss(const Tensor& projected, const Tensor& teacher_hidden);

// alpha*ce + beta*rl + gamma*ll; absent terms contribute nothing.
Tensor joint_loss(const LossWeights& weights, const std::optional<Tensor>& ce, const std::optional<Tensor>& rl,
                  const std::optional<Tensor>& ll);

}  // namespace distil
