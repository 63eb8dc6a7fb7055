#include "refstyle/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "refstyle/augmentation.hpp"
#include "refstyle/error.hpp"

namespace refstyle {

namespace F = torch::nn::functional;

namespace {

torch::Tensor as_double(const torch::Tensor& t) { return t.detach().to(torch::kFloat64); }

void check_symmetric(const torch::Tensor& s, const char* name) {
  const double scale = 1.0 + s.abs().max().item<double>();
  const double asym = (s - s.t()).abs().max().item<double>();
  if (asym > 1e-6 * scale) throw InvalidArgument(std::string(name) + " is not symmetric");
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

double frechet_distance(const torch::Tensor& mu1_in, const torch::Tensor& sigma1_in, const torch::Tensor& mu2_in,
                        const torch::Tensor& sigma2_in) {
  const auto mu1 = as_double(mu1_in).flatten();
  const auto mu2 = as_double(mu2_in).flatten();
  const auto s1 = as_double(sigma1_in);
  const auto s2 = as_double(sigma2_in);
  const auto d = mu1.size(0);
  if (mu2.size(0) != d || s1.sizes() != torch::IntArrayRef{d, d} || s2.sizes() != torch::IntArrayRef{d, d})
    throw ShapeError("frechet_distance: dimension mismatch between means " + c10::str(mu1.sizes()) + ", " +
                     c10::str(mu2.sizes()) + " and covariances " + c10::str(s1.sizes()) + ", " +
                     c10::str(s2.sizes()));
  check_symmetric(s1, "sigma1");
  check_symmetric(s2, "sigma2");

  const auto [w1, v1] = torch::linalg_eigh(0.5 * (s1 + s1.t()));
  const auto sqrt_s1 = v1.matmul(torch::diag(w1.clamp_min(0.0).sqrt())).matmul(v1.t());
  auto middle = sqrt_s1.matmul(s2).matmul(sqrt_s1);
  middle = 0.5 * (middle + middle.t());
  const auto trace_sqrt = torch::linalg_eigvalsh(middle).clamp_min(0.0).sqrt().sum().item<double>();

  const auto diff = mu1 - mu2;
  const double value = diff.dot(diff).item<double>() + s1.trace().item<double>() + s2.trace().item<double>() -
                       2.0 * trace_sqrt;
  return std::max(0.0, value);
}

GaussianStats gaussian_stats(const torch::Tensor& features) {
  if (features.dim() != 2) throw ShapeError("features must be (n, d)");
  if (features.size(0) < 2)
    throw InvalidArgument("at least 2 samples are needed for a covariance estimate, got " +
                          std::to_string(features.size(0)));
  const auto x = as_double(features);
  const auto mean = x.mean(0);
  const auto centered = x - mean;
  const auto cov = centered.t().matmul(centered) / static_cast<double>(x.size(0) - 1);
  return {mean, cov};
}

double fid_from_features(const torch::Tensor& real, const torch::Tensor& fake) {
  const auto a = gaussian_stats(real);
  const auto b = gaussian_stats(fake);
  return frechet_distance(a.mean, a.covariance, b.mean, b.covariance);
}

torch::Tensor FeatureExtractor::operator()(const torch::Tensor& images) const {
  torch::NoGradGuard no_grad;
  auto x = images.to(torch::kFloat32);
  if (input_resolution > 0 && x.size(-1) != input_resolution) x = resize_image(x, input_resolution, input_resolution);
  return fn(x);
}

FeatureExtractor make_random_conv_extractor(uint64_t seed, int channels) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto he = [&](int64_t out, int64_t in, int64_t k) {
    return at::randn({out, in, k, k}, gen, torch::kFloat32) * std::sqrt(2.0 / static_cast<double>(in * k * k));
  };
  const std::vector<torch::Tensor> weights = {he(16, channels, 3), he(32, 16, 3), he(64, 32, 3)};
  FeatureExtractor fx;
  fx.name = "random-conv-" + std::to_string(seed);
  fx.fn = [weights](const torch::Tensor& images) {
    auto h = images;
    for (const auto& w : weights)
      h = F::leaky_relu(F::conv2d(h, w, F::Conv2dFuncOptions().stride(2).padding(1)),
                        F::LeakyReLUFuncOptions().negative_slope(0.2));
    const auto pooled = h.mean({2, 3});
    const auto color_mean = images.mean({2, 3});
    const auto color_std = images.flatten(2).std(2);
    return torch::cat({pooled, color_mean, color_std}, 1);
  };
  return fx;
}

// ---------------------------------------------------------------------------

MeanColorOracle::MeanColorOracle(const torch::Tensor& images, const std::vector<int64_t>& labels) {
  if (images.dim() != 4 || images.size(0) != static_cast<int64_t>(labels.size()))
    throw ShapeError("mean-color oracle needs (N, C, H, W) images with one label each");
  const auto colors = images.detach().to(torch::kFloat64).mean({2, 3});
  const int64_t classes = *std::max_element(labels.begin(), labels.end()) + 1;
  centroids_ = torch::zeros({classes, colors.size(1)}, torch::kFloat64);
  std::vector<int64_t> counts(static_cast<size_t>(classes), 0);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    centroids_[labels[i]] += colors[static_cast<int64_t>(i)];
    ++counts[static_cast<size_t>(labels[i])];
  }
  for (int64_t c = 0; c < classes; ++c) {
    if (counts[static_cast<size_t>(c)] == 0) throw InvalidArgument("class " + std::to_string(c) + " has no examples");
    centroids_[c] /= static_cast<double>(counts[static_cast<size_t>(c)]);
  }
}

std::vector<int64_t> MeanColorOracle::predict(const torch::Tensor& images) const {
  const auto scores = as_oracle()(images);
  const auto best = scores.argmax(1);
  return {best.data_ptr<int64_t>(), best.data_ptr<int64_t>() + best.numel()};
}

OracleClassifier MeanColorOracle::as_oracle() const {
  OracleClassifier oracle;
  oracle.kind = OracleClassifier::Kind::kMultiClass;
  for (int64_t c = 0; c < centroids_.size(0); ++c) oracle.label_names.push_back(std::to_string(c));
  const auto centroids = centroids_;
  oracle.fn = [centroids](const torch::Tensor& images) {
    const auto colors = images.detach().to(torch::kFloat64).mean({2, 3});
    return -torch::cdist(colors, centroids);
  };
  return oracle;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<int64_t>> sample_references(int64_t num_images, int count, uint64_t seed) {
  if (num_images < 1) throw InvalidArgument("reference sampling needs a non-empty set");
  Rng rng(seed);
  std::vector<std::vector<int64_t>> refs(static_cast<size_t>(num_images));
  for (int64_t i = 0; i < num_images; ++i) {
    for (int r = 0; r < count; ++r) {
      if (num_images == 1) {
        refs[static_cast<size_t>(i)].push_back(0);
        continue;
      }
      int64_t j = std::uniform_int_distribution<int64_t>(0, num_images - 2)(rng);
      if (j >= i) ++j;
      refs[static_cast<size_t>(i)].push_back(j);
    }
  }
  return refs;
}

namespace {

bool is_hair_color(const std::string& name) {
  for (const char* h : {"Black_Hair", "Blond_Hair", "Brown_Hair", "Gray_Hair", "BlackHair", "BlondHair", "BrownHair",
                        "GrayHair"})
    if (name == h) return true;
  return false;
}

}  // namespace

MetricsReport evaluate_translation(const TranslateFn& translate, const ImageCollection& test_set,
                                   const FeatureExtractor& extractor, const OracleClassifier* oracle,
                                   const TranslationEvalOptions& options) {
  if (options.require_accuracy && oracle == nullptr)
    throw InvalidArgument("translation accuracy requested but no oracle classifier was supplied");
  const int64_t n = test_set.size();
  if (n < 2) throw InvalidArgument("evaluation needs at least 2 test images");
  const auto& labels = test_set.labels;
  const auto refs = sample_references(n, options.references_per_input, options.seed);

  std::vector<int64_t> in_idx, ref_idx;
  for (int64_t i = 0; i < n; ++i)
    for (const auto j : refs[static_cast<size_t>(i)]) {
      in_idx.push_back(i);
      ref_idx.push_back(j);
    }
  const auto total = static_cast<int64_t>(in_idx.size());

  std::vector<torch::Tensor> fake_features, oracle_outputs;
  for (int64_t start = 0; start < total; start += options.batch_size) {
    const auto end = std::min<int64_t>(total, start + options.batch_size);
    const std::vector<int64_t> ib(in_idx.begin() + start, in_idx.begin() + end);
    const std::vector<int64_t> rb(ref_idx.begin() + start, ref_idx.begin() + end);
    torch::Tensor out;
    {
      torch::NoGradGuard no_grad;
      out = translate(test_set.gather(ib), test_set.gather(rb)).to(torch::kFloat32);
    }
    fake_features.push_back(extractor(out));
    if (oracle) oracle_outputs.push_back(oracle->fn(out).to(torch::kFloat64));
  }
  std::vector<torch::Tensor> real_features;
  for (int64_t start = 0; start < n; start += options.batch_size) {
    std::vector<int64_t> idx(static_cast<size_t>(std::min<int64_t>(n, start + options.batch_size) - start));
    std::iota(idx.begin(), idx.end(), start);
    real_features.push_back(extractor(test_set.gather(idx)));
  }
  const auto fake = torch::cat(fake_features);
  const auto real = torch::cat(real_features);

  MetricsReport report;
  report.num_inputs = n;
  report.num_outputs = total;
  report.fid = fid_from_features(real, fake);

  if (labels.has_classes()) {
    const int64_t classes = static_cast<int64_t>(labels.class_names.size());
    double sum = 0.0;
    int used = 0;
    for (int64_t c = 0; c < classes; ++c) {
      std::vector<int64_t> fake_rows, real_rows;
      for (int64_t k = 0; k < total; ++k)
        if (labels.classes[static_cast<size_t>(ref_idx[static_cast<size_t>(k)])] == c) fake_rows.push_back(k);
      for (int64_t i = 0; i < n; ++i)
        if (labels.classes[static_cast<size_t>(i)] == c) real_rows.push_back(i);
      if (fake_rows.empty()) continue;
      const double value = fid_from_features(real.index_select(0, torch::tensor(real_rows)),
                                             fake.index_select(0, torch::tensor(fake_rows)));
      report.class_fid[labels.class_names[static_cast<size_t>(c)]] = value;
      sum += value;
      ++used;
    }
    if (used > 0) report.mfid = sum / used;
  }

  if (oracle) {
    const auto scores = torch::cat(oracle_outputs);
    if (oracle->kind == OracleClassifier::Kind::kMultiClass && labels.has_classes()) {
      const auto predicted = scores.argmax(1);
      int64_t correct = 0;
      for (int64_t k = 0; k < total; ++k)
        if (predicted[k].item<int64_t>() == labels.classes[static_cast<size_t>(ref_idx[static_cast<size_t>(k)])])
          ++correct;
      report.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    } else if (oracle->kind == OracleClassifier::Kind::kMultiLabel && labels.has_attributes()) {
      const auto predicted = scores > 0.5;
      const auto target = labels.attributes.index_select(0, torch::tensor(ref_idx)) > 0.5;
      const auto hits = (predicted == target).to(torch::kFloat64).mean(0);
      double all = 0.0, hair = 0.0;
      int hair_count = 0;
      for (int64_t a = 0; a < hits.size(0); ++a) {
        const auto& name = labels.attribute_names[static_cast<size_t>(a)];
        const double v = hits[a].item<double>();
        report.attribute_accuracy[name] = v;
        all += v;
        if (is_hair_color(name)) {
          hair += v;
          ++hair_count;
        }
      }
      report.accuracy = all / static_cast<double>(hits.size(0));
      if (hair_count > 0) report.hair_color_accuracy = hair / hair_count;
    } else if (options.require_accuracy) {
      throw InvalidArgument("translation accuracy requested but the test set has no matching labels");
    }
  }
  return report;
}

std::string MetricsReport::to_text() const {
  std::string out;
  out += "inputs:   " + std::to_string(num_inputs) + "\n";
  out += "outputs:  " + std::to_string(num_outputs) + "\n";
  out += "FID:      " + fmt(fid) + "\n";
  if (mfid) {
    out += "mFID:     " + fmt(*mfid) + "\n";
    for (const auto& [name, v] : class_fid) out += "  FID[" + name + "]: " + fmt(v) + "\n";
  }
  if (accuracy) out += "accuracy: " + fmt(100.0 * *accuracy) + " %\n";
  for (const auto& [name, v] : attribute_accuracy) out += "  acc[" + name + "]: " + fmt(100.0 * v) + " %\n";
  if (hair_color_accuracy) out += "  acc[hair color avg]: " + fmt(100.0 * *hair_color_accuracy) + " %\n";
  return out;
}

std::string MetricsReport::to_key_values() const {
  std::string out;
  out += "num_inputs=" + std::to_string(num_inputs) + "\n";
  out += "num_outputs=" + std::to_string(num_outputs) + "\n";
  out += "fid=" + fmt(fid) + "\n";
  if (mfid) out += "mfid=" + fmt(*mfid) + "\n";
  for (const auto& [name, v] : class_fid) out += "fid." + name + "=" + fmt(v) + "\n";
  if (accuracy) out += "accuracy=" + fmt(*accuracy) + "\n";
  for (const auto& [name, v] : attribute_accuracy) out += "accuracy." + name + "=" + fmt(v) + "\n";
  if (hair_color_accuracy) out += "accuracy.hair_color_avg=" + fmt(*hair_color_accuracy) + "\n";
  return out;
}

// ---------------------------------------------------------------------------

std::vector<SearchHit> similarity_search(const torch::Tensor& query_code, const torch::Tensor& corpus_codes, int k) {
  if (corpus_codes.dim() != 2) throw ShapeError("corpus codes must be (n, d)");
  const auto q = F::normalize(as_double(query_code).flatten().unsqueeze(0), F::NormalizeFuncOptions().dim(1));
  if (q.size(1) != corpus_codes.size(1)) throw ShapeError("query and corpus code dimensions differ");
  const auto corpus = F::normalize(as_double(corpus_codes), F::NormalizeFuncOptions().dim(1));
  const auto sims = corpus.matmul(q.squeeze(0));
  const auto n = corpus.size(0);
  std::vector<SearchHit> hits;
  hits.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) hits.push_back({i, sims[i].item<double>()});
  std::stable_sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
    return a.similarity > b.similarity || (a.similarity == b.similarity && a.index < b.index);
  });
  hits.resize(static_cast<size_t>(std::clamp<int64_t>(k, 0, n)));
  return hits;
}

std::vector<torch::Tensor> interpolate_styles(
    const torch::Tensor& input, const torch::Tensor& reference, int steps,
    const std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>& generator,
    const std::function<torch::Tensor(const torch::Tensor&)>& encoder) {
  if (steps < 2) throw InvalidArgument("interpolation needs at least 2 steps");
  torch::NoGradGuard no_grad;
  const auto t_o = encoder(input);
  const auto t_r = encoder(reference);
  std::vector<torch::Tensor> frames;
  frames.reserve(static_cast<size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double alpha = static_cast<double>(i) / (steps - 1);
    frames.push_back(generator(input, (1.0 - alpha) * t_o + alpha * t_r));
  }
  return frames;
}

}  // namespace refstyle
