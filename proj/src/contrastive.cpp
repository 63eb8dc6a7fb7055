#include "refstyle/contrastive.hpp"

#include "refstyle/error.hpp"

namespace refstyle {

namespace {

void check_unit_norm(const torch::Tensor& v, const char* what) {
  torch::NoGradGuard no_grad;
  const auto deviation = (v.norm(2, 1) - 1.0).abs().max().item<double>();
  if (!(deviation <= kUnitNormTolerance))
    throw InvalidArgument(std::string(what) + " must be unit-norm (max deviation " + std::to_string(deviation) + ")");
}

}  // namespace

torch::Tensor info_nce_per_sample(const torch::Tensor& queries, const torch::Tensor& keys,
                                  const torch::Tensor& negatives, double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive, got " + std::to_string(temperature));
  if (queries.dim() != 2 || keys.sizes() != queries.sizes())
    throw ShapeError("queries and keys must both be (B, K); got " + c10::str(queries.sizes()) + " and " +
                     c10::str(keys.sizes()));
  if (negatives.dim() != 2 || negatives.size(0) < 1 || negatives.size(1) != queries.size(1))
    throw ShapeError("negatives must be a non-empty (N, " + std::to_string(queries.size(1)) + ") matrix, got " +
                     c10::str(negatives.sizes()));
  check_unit_norm(queries, "queries");
  check_unit_norm(keys, "keys");
  check_unit_norm(negatives, "negatives");

  const auto positive = (queries * keys).sum(1, /*keepdim=*/true) / temperature;
  const auto negative = queries.matmul(negatives.t()) / temperature;
  const auto logits = torch::cat({positive, negative}, 1);
  return torch::logsumexp(logits, 1) - positive.squeeze(1);
}

torch::Tensor info_nce(const torch::Tensor& queries, const torch::Tensor& keys, const torch::Tensor& negatives,
                       double temperature) {
  return info_nce_per_sample(queries, keys, negatives, temperature).mean();
}

// ---------------------------------------------------------------------------

NegativeDictionary::NegativeDictionary(int capacity, int dim, torch::Dtype dtype) : capacity_(capacity), dim_(dim) {
  if (capacity < 1 || dim < 1) throw InvalidArgument("dictionary capacity and dimension must be positive");
  storage_ = torch::zeros({capacity, dim}, torch::TensorOptions().dtype(dtype));
  storage_.select(1, 0).fill_(1.0);
}

void NegativeDictionary::randomize(uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto noise = at::randn({capacity_, dim_}, gen, storage_.options());
  storage_ = torch::nn::functional::normalize(noise, torch::nn::functional::NormalizeFuncOptions().dim(1));
}

void NegativeDictionary::enqueue(const torch::Tensor& keys) {
  if (keys.dim() != 2 || keys.size(1) != dim_)
    throw ShapeError("keys must be (B, " + std::to_string(dim_) + "), got " + c10::str(keys.sizes()));
  if (keys.size(0) == 0) return;
  check_unit_norm(keys, "enqueued keys");
  torch::NoGradGuard no_grad;
  const auto incoming = keys.detach().to(storage_.scalar_type());
  for (int64_t i = 0; i < incoming.size(0); ++i) {
    storage_[cursor_].copy_(incoming[i]);
    cursor_ = (cursor_ + 1) % capacity_;
  }
  total_ += incoming.size(0);
}

torch::Tensor NegativeDictionary::ordered() const {
  if (total_ < capacity_) return storage_.narrow(0, 0, total_).clone();
  return torch::cat({storage_.narrow(0, cursor_, capacity_ - cursor_), storage_.narrow(0, 0, cursor_)});
}

void NegativeDictionary::restore(const torch::Tensor& storage, int64_t cursor, int64_t total) {
  if (storage.sizes() != storage_.sizes())
    throw ShapeError("dictionary storage shape mismatch: " + c10::str(storage.sizes()));
  if (cursor < 0 || cursor >= capacity_ || total < 0) throw StateError("dictionary cursor/total out of range");
  storage_ = storage.to(storage_.scalar_type()).clone();
  cursor_ = cursor;
  total_ = total;
}

// ---------------------------------------------------------------------------

ContrastiveStep discriminator_contrastive_loss(const torch::Tensor& images, const AugmentationPolicy& policy,
                                               const NegativeDictionary& dict, const RepresentationFn& query_fn,
                                               const RepresentationFn& key_fn, double temperature, Rng& rng) {
  if (images.dim() != 4) throw ShapeError("contrastive loss expects an (N, C, H, W) batch");
  std::vector<torch::Tensor> query_views;
  std::vector<torch::Tensor> key_views;
  const auto detached = images.detach();
  for (int64_t i = 0; i < detached.size(0); ++i)
    query_views.push_back(random_crop_view(detached[i], policy.crop_scale_min, policy.crop_scale_max, rng));
  for (int64_t i = 0; i < detached.size(0); ++i) key_views.push_back(augment(detached[i], policy, rng));

  torch::Tensor keys;
  {
    torch::NoGradGuard no_grad;
    keys = key_fn(torch::stack(key_views)).detach();
  }
  const auto queries = query_fn(torch::stack(query_views));
  return {info_nce(queries, keys, dict.entries().detach(), temperature), keys};
}

torch::Tensor aggregate_reps(const torch::Tensor& patch_reps,
                             const std::function<torch::Tensor(const torch::Tensor&)>& fallback) {
  if (patch_reps.dim() != 3) throw ShapeError("patch representations must be (B, M, K)");
  // A single unit vector is already its own normalized mean.
  if (patch_reps.size(1) == 1) return patch_reps.squeeze(1);
  const auto mean = patch_reps.mean(1);
  const auto norms = mean.norm(2, 1, /*keepdim=*/true);
  const auto degenerate = norms.squeeze(1) < 1e-6;
  const auto normalized = mean / norms.clamp_min(1e-12);
  if (!degenerate.any().item<bool>()) return normalized;

  const auto rows = degenerate.nonzero().squeeze(1);
  const auto replacement = fallback(rows).to(mean.scalar_type());
  const auto filled = torch::zeros_like(mean).index_copy(0, rows, replacement);
  return torch::where(degenerate.unsqueeze(1), filled, normalized);
}

torch::Tensor aggregate_patch_rep(const torch::Tensor& images, const PatchSpec& spec, const RepresentationFn& rep_fn,
                                  Rng& rng) {
  const auto patches = sample_patch_batch(images, spec, rng);
  const auto reps = rep_fn(patches);
  const auto grouped = reps.view({images.size(0), spec.count, reps.size(1)});
  return aggregate_reps(grouped, [&](const torch::Tensor& rows) { return rep_fn(images.index_select(0, rows)); });
}

torch::Tensor style_match_loss(const torch::Tensor& generated, const torch::Tensor& reference,
                               const NegativeDictionary& dict, const PatchSpec& spec, const RepresentationFn& rep_fn,
                               double temperature, Rng& rng) {
  if (generated.sizes() != reference.sizes())
    throw ShapeError("generated and reference batches must have equal shapes");
  const auto v_g = aggregate_patch_rep(generated, spec, rep_fn, rng);
  torch::Tensor v_r;
  {
    torch::NoGradGuard no_grad;
    v_r = aggregate_patch_rep(reference.detach(), spec, rep_fn, rng).detach();
  }
  return info_nce(v_g, v_r, dict.entries().detach(), temperature);
}

void momentum_update(DiscriminatorImpl& key_encoder, const DiscriminatorImpl& live, double momentum) {
  if (momentum < 0.0 || momentum > 1.0) throw InvalidArgument("key momentum must lie in [0, 1]");
  const auto key_params = key_encoder.named_parameters();
  const auto live_params = live.named_parameters();
  if (key_params.size() != live_params.size()) throw ShapeError("key encoder does not mirror the discriminator");
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < key_params.size(); ++i) {
    const auto& name = key_params[i].key();
    if (name != live_params[i].key()) throw ShapeError("key encoder parameter mismatch at '" + name + "'");
    if (name.starts_with("adv_")) continue;
    key_params[i].value().mul_(momentum).add_(live_params[i].value().detach(), 1.0 - momentum);
  }
}

}  // namespace refstyle
