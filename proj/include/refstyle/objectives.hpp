#pragma once

#include <torch/torch.h>

#include <functional>

#include "refstyle/config.hpp"

namespace refstyle {

/// Non-saturating discriminator loss: mean softplus(-real) + mean softplus(fake).
torch::Tensor adv_loss_d(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);

/// Non-saturating generator loss: mean softplus(-fake).
torch::Tensor adv_loss_g(const torch::Tensor& fake_logits);

/// R1 penalty (gamma / 2) * E_x ||grad_x D_adv(x)||^2 with the squared norm
/// summed over all pixels of each image. The graph is kept so the penalty can
/// be differentiated w.r.t. the discriminator parameters.
torch::Tensor r1_penalty(const std::function<torch::Tensor(const torch::Tensor&)>& adversarial,
                         const torch::Tensor& real_batch, double gamma);

/// True on steps where the lazy R1 term is applied.
inline bool is_r1_step(int64_t step, int interval) { return interval > 0 && step % interval == 0; }

/// Mean absolute error over every element; throws ShapeError on mismatch.
torch::Tensor cycle_loss(const torch::Tensor& original, const torch::Tensor& reconstructed);

struct DiscriminatorLossParts {
  torch::Tensor adv;  // adv_loss_d
  torch::Tensor ct;   // contrastive loss on real images (undefined when disabled)
  torch::Tensor r1;   // raw R1 penalty (undefined off-schedule)
};

struct GeneratorLossParts {
  torch::Tensor adv;  // adv_loss_g
  torch::Tensor cyc;
  torch::Tensor ct;   // style match (undefined when disabled)
};

/// adv + lambda_ct_d * ct + r1_interval * r1 (the lazy R1 compensation).
torch::Tensor total_d_loss(const DiscriminatorLossParts& parts, const LossWeights& weights);

/// adv + lambda_cyc * cyc + lambda_ct_g * ct.
torch::Tensor total_ge_loss(const GeneratorLossParts& parts, const LossWeights& weights);

}  // namespace refstyle
