#pragma once

#include <torch/torch.h>

#include <functional>

#include "refstyle/augmentation.hpp"
#include "refstyle/config.hpp"
#include "refstyle/networks.hpp"

namespace refstyle {

/// Tolerance on |1 - ||v||| for vectors that must be unit-norm.
inline constexpr double kUnitNormTolerance = 1e-4;

/// Per-row (N+1)-way contrastive loss:
///   -log( exp(q.k / tau) / (exp(q.k / tau) + sum_i exp(q.n_i / tau)) )
/// evaluated with log-sum-exp. queries/keys are (B, K), negatives (N, K).
/// Returns a (B,) tensor. Throws on tau <= 0, empty negatives, shape mismatch
/// or non-normalized inputs.
torch::Tensor info_nce_per_sample(const torch::Tensor& queries, const torch::Tensor& keys,
                                  const torch::Tensor& negatives, double temperature);

/// Mean of info_nce_per_sample over the batch.
torch::Tensor info_nce(const torch::Tensor& queries, const torch::Tensor& keys, const torch::Tensor& negatives,
                       double temperature);

/// Fixed-capacity FIFO of unit-norm keys. Storage starts as random unit
/// vectors so shapes are valid before the first wraparound; `warmed_up()`
/// reports whether real keys have filled it once.
class NegativeDictionary {
 public:
  NegativeDictionary(int capacity, int dim, torch::Dtype dtype = torch::kFloat32);

  /// Overwrites the storage with random unit vectors drawn from `seed`.
  void randomize(uint64_t seed);

  /// Appends keys (B, K) at the cursor, overwriting the oldest entries.
  void enqueue(const torch::Tensor& keys);

  /// All `capacity` rows (random placeholders included before warm-up).
  const torch::Tensor& entries() const { return storage_; }
  /// Real keys only, oldest first.
  torch::Tensor ordered() const;

  int capacity() const { return capacity_; }
  int dim() const { return dim_; }
  int64_t size() const { return std::min<int64_t>(total_, capacity_); }
  int64_t cursor() const { return cursor_; }
  int64_t total_enqueued() const { return total_; }
  bool warmed_up() const { return total_ >= capacity_; }

  /// Raw state for checkpointing.
  void restore(const torch::Tensor& storage, int64_t cursor, int64_t total);

 private:
  int capacity_;
  int dim_;
  torch::Tensor storage_;
  int64_t cursor_ = 0;
  int64_t total_ = 0;
};

/// Map from an image batch to unit-norm contrastive representations.
using RepresentationFn = std::function<torch::Tensor(const torch::Tensor&)>;

struct ContrastiveStep {
  torch::Tensor loss;  // scalar, differentiable w.r.t. the query path
  torch::Tensor keys;  // (B, K), detached, to enqueue after the step
};

/// Discriminator-side contrastive loss for a batch of real images. Queries
/// come from `query_fn` on random crops (same size range as the augmentation);
/// keys come from `key_fn` on fully augmented views, with gradients blocked.
ContrastiveStep discriminator_contrastive_loss(const torch::Tensor& images, const AugmentationPolicy& policy,
                                               const NegativeDictionary& dict, const RepresentationFn& query_fn,
                                               const RepresentationFn& key_fn, double temperature, Rng& rng);

/// Mean over patches of per-patch representations, renormalized. patch_reps
/// is (B, M, K). Rows whose mean has norm below 1e-6 are replaced by
/// `fallback(row_indices)` which must return (len, K) unit vectors.
torch::Tensor aggregate_reps(const torch::Tensor& patch_reps,
                             const std::function<torch::Tensor(const torch::Tensor&)>& fallback);

/// Patch-aggregated representation of each image in a batch: (B, K).
torch::Tensor aggregate_patch_rep(const torch::Tensor& images, const PatchSpec& spec, const RepresentationFn& rep_fn,
                                  Rng& rng);

/// Generator-side style match: info_nce(v_g, v_r, dict) with both sides patch
/// aggregated. v_r and the dictionary carry no gradient; gradient reaches the
/// caller only through `generated`.
torch::Tensor style_match_loss(const torch::Tensor& generated, const torch::Tensor& reference,
                               const NegativeDictionary& dict, const PatchSpec& spec, const RepresentationFn& rep_fn,
                               double temperature, Rng& rng);

/// key <- m * key + (1 - m) * live over the trunk and the contrastive branch.
void momentum_update(DiscriminatorImpl& key_encoder, const DiscriminatorImpl& live, double momentum);

}  // namespace refstyle
