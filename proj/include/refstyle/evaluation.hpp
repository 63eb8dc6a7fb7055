#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "refstyle/data.hpp"

namespace refstyle {

/// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)), computed in double
/// precision. The trace of the square root is taken as the sum of square roots
/// of the eigenvalues of S1^(1/2) S2 S1^(1/2), with tiny negative eigenvalues
/// clamped to zero. Throws ShapeError on dimension mismatch.
double frechet_distance(const torch::Tensor& mu1, const torch::Tensor& sigma1, const torch::Tensor& mu2,
                        const torch::Tensor& sigma2);

struct GaussianStats {
  torch::Tensor mean;        // (d,)
  torch::Tensor covariance;  // (d, d), unbiased
};

/// Mean and unbiased covariance of (n, d) features; needs n >= 2.
GaussianStats gaussian_stats(const torch::Tensor& features);

double fid_from_features(const torch::Tensor& real, const torch::Tensor& fake);

/// Frozen map from image batches (N, C, H, W) to features (N, d).
struct FeatureExtractor {
  std::string name;
  int input_resolution = 0;  // 0 accepts any resolution
  std::function<torch::Tensor(const torch::Tensor&)> fn;

  torch::Tensor operator()(const torch::Tensor& images) const;
};

/// Small convolutional extractor whose weights are drawn once from a fixed
/// seed and never trained. Stands in for Inception features at desk scale.
FeatureExtractor make_random_conv_extractor(uint64_t seed = 20240607, int channels = 3);

/// Frozen classifier. Multi-class oracles return (N, classes) scores;
/// multi-label oracles return (N, attributes) probabilities.
struct OracleClassifier {
  enum class Kind { kMultiClass, kMultiLabel };
  Kind kind = Kind::kMultiClass;
  std::vector<std::string> label_names;
  std::function<torch::Tensor(const torch::Tensor&)> fn;

  torch::Tensor operator()(const torch::Tensor& images) const { return fn(images); }
};

/// Nearest-centroid classifier on per-image mean color, fit on labeled images.
class MeanColorOracle {
 public:
  MeanColorOracle(const torch::Tensor& images, const std::vector<int64_t>& labels);

  std::vector<int64_t> predict(const torch::Tensor& images) const;
  OracleClassifier as_oracle() const;
  const torch::Tensor& centroids() const { return centroids_; }

 private:
  torch::Tensor centroids_;  // (classes, C)
};

/// Batched translation: outputs[i] = G(inputs[i], E(references[i])).
using TranslateFn = std::function<torch::Tensor(const torch::Tensor& inputs, const torch::Tensor& references)>;

struct TranslationEvalOptions {
  int references_per_input = 10;
  uint64_t seed = 777;
  int batch_size = 16;
  bool require_accuracy = false;
};

struct MetricsReport {
  int64_t num_inputs = 0;
  int64_t num_outputs = 0;
  double fid = 0.0;
  std::optional<double> mfid;
  std::map<std::string, double> class_fid;
  std::optional<double> accuracy;
  std::map<std::string, double> attribute_accuracy;
  std::optional<double> hair_color_accuracy;

  /// Human readable text and a `key=value` listing; both deterministic.
  std::string to_text() const;
  std::string to_key_values() const;
};

/// Reference pairing: for each input, `count` reference indices drawn
/// uniformly (excluding the input itself when possible) from a seeded engine.
std::vector<std::vector<int64_t>> sample_references(int64_t num_images, int count, uint64_t seed);

/// Translates every test image with its sampled references and reports FID of
/// all outputs vs all test images, class-wise mFID (when class labels exist),
/// translation accuracy against the reference label (multi-class) or
/// per-attribute accuracy (multi-label). Throws InvalidArgument when accuracy
/// is required but no oracle is supplied.
MetricsReport evaluate_translation(const TranslateFn& translate, const ImageCollection& test_set,
                                   const FeatureExtractor& extractor, const OracleClassifier* oracle,
                                   const TranslationEvalOptions& options);

struct SearchHit {
  int64_t index;
  double similarity;
};

/// Top-k corpus entries by cosine similarity of L2-normalized style codes,
/// descending, ties broken by lower index. k larger than the corpus truncates.
std::vector<SearchHit> similarity_search(const torch::Tensor& query_code, const torch::Tensor& corpus_codes, int k);

/// G(x_o, (1 - a) E(x_o) + a E(x_r)) for a evenly spaced in [0, 1].
std::vector<torch::Tensor> interpolate_styles(
    const torch::Tensor& input, const torch::Tensor& reference, int steps,
    const std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>& generator,
    const std::function<torch::Tensor(const torch::Tensor&)>& encoder);

}  // namespace refstyle
