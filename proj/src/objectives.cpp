#include "refstyle/objectives.hpp"

#include "refstyle/error.hpp"

namespace refstyle {

namespace F = torch::nn::functional;

torch::Tensor adv_loss_d(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  return F::softplus(-real_logits).mean() + F::softplus(fake_logits).mean();
}

torch::Tensor adv_loss_g(const torch::Tensor& fake_logits) { return F::softplus(-fake_logits).mean(); }

torch::Tensor r1_penalty(const std::function<torch::Tensor(const torch::Tensor&)>& adversarial,
                         const torch::Tensor& real_batch, double gamma) {
  auto x = real_batch.detach().clone().requires_grad_(true);
  const auto out = adversarial(x);
  const auto grads = torch::autograd::grad({out.sum()}, {x}, /*grad_outputs=*/{}, /*retain_graph=*/true,
                                           /*create_graph=*/true, /*allow_unused=*/true);
  if (!grads[0].defined()) return torch::zeros({}, real_batch.options()) + 0.0 * out.sum();
  const auto per_image = grads[0].pow(2).flatten(1).sum(1);
  return 0.5 * gamma * per_image.mean();
}

torch::Tensor cycle_loss(const torch::Tensor& original, const torch::Tensor& reconstructed) {
  if (original.sizes() != reconstructed.sizes())
    throw ShapeError("cycle loss shapes differ: " + c10::str(original.sizes()) + " vs " +
                     c10::str(reconstructed.sizes()));
  return (original - reconstructed).abs().mean();
}

torch::Tensor total_d_loss(const DiscriminatorLossParts& parts, const LossWeights& weights) {
  auto total = parts.adv;
  if (parts.ct.defined()) total = total + weights.ct_d * parts.ct;
  if (parts.r1.defined()) total = total + static_cast<double>(weights.r1_interval) * parts.r1;
  return total;
}

torch::Tensor total_ge_loss(const GeneratorLossParts& parts, const LossWeights& weights) {
  auto total = parts.adv;
  if (parts.cyc.defined()) total = total + weights.cyc * parts.cyc;
  if (parts.ct.defined()) total = total + weights.ct_g * parts.ct;
  return total;
}

}  // namespace refstyle
