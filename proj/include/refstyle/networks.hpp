#pragma once

#include <torch/torch.h>

#include <string>
#include <utility>
#include <vector>

#include "refstyle/config.hpp"

namespace refstyle {

/// Image batches are NCHW tensors with values in [-1, 1].
using LayerShapes = std::vector<std::pair<std::string, std::vector<int64_t>>>;

/// Per-instance, per-channel standardization followed by an affine map:
/// out[n,c] = scale[n,c] * (x[n,c] - mean) / (std + eps) + bias[n,c].
torch::Tensor adain(const torch::Tensor& features, const torch::Tensor& scale, const torch::Tensor& bias,
                    double eps = 1e-5);

enum class Resample { kNone, kDown, kUp };
enum class Norm { kNone, kInstance, kAdaptive };

/// Pre-activation residual block. Residual path:
/// [norm] -> lrelu -> (upsample) -> conv3x3 -> (avgpool) -> [norm] -> lrelu -> conv3x3.
/// The skip path resamples and applies a 1x1 conv when channels change; the
/// sum is divided by sqrt(2).
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int in_channels, int out_channels, Resample resample, Norm norm, int style_dim, double slope,
               double eps);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& style = {});

  Norm norm() const { return norm_; }

 private:
  torch::Tensor normalize(int which, const torch::Tensor& x, const torch::Tensor& style);
  torch::Tensor shortcut(const torch::Tensor& x);
  torch::Tensor residual(const torch::Tensor& x, const torch::Tensor& style);

  Resample resample_;
  Norm norm_;
  double slope_;
  double eps_;
  bool learned_skip_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
  torch::nn::InstanceNorm2d in1_{nullptr}, in2_{nullptr};
  torch::nn::Linear style1_{nullptr}, style2_{nullptr};
};
TORCH_MODULE(ResBlock);

struct DiscriminatorOutput {
  torch::Tensor rep;    // (N, rep_dim), unit L2 norm per row
  torch::Tensor logit;  // (N, 1)
};

/// Shared residual trunk with two unshared heads: a contrastive representation
/// and an adversarial logit.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const NetworkSpec& spec);

  DiscriminatorOutput forward(const torch::Tensor& x);
  torch::Tensor trunk(const torch::Tensor& x);
  torch::Tensor contrastive(const torch::Tensor& x);
  torch::Tensor adversarial(const torch::Tensor& x);
  torch::Tensor contrastive_from_trunk(const torch::Tensor& h);
  torch::Tensor adversarial_from_trunk(const torch::Tensor& h);

  LayerShapes layer_shapes(const torch::Tensor& x);
  const NetworkSpec& spec() const { return spec_; }

 private:
  torch::Tensor head(torch::nn::Conv2d& conv, torch::nn::Linear& fc, const torch::Tensor& h, LayerShapes* trace);

  NetworkSpec spec_;
  torch::nn::Conv2d from_rgb_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::Conv2d ct_conv_{nullptr}, adv_conv_{nullptr};
  torch::nn::Linear ct_fc_{nullptr}, adv_fc_{nullptr};
};
TORCH_MODULE(Discriminator);

class StyleEncoderImpl : public torch::nn::Module {
 public:
  explicit StyleEncoderImpl(const NetworkSpec& spec);

  torch::Tensor forward(const torch::Tensor& x);
  LayerShapes layer_shapes(const torch::Tensor& x);
  const NetworkSpec& spec() const { return spec_; }

 private:
  torch::Tensor run(const torch::Tensor& x, LayerShapes* trace);

  NetworkSpec spec_;
  torch::nn::Conv2d from_rgb_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::Conv2d head_conv_{nullptr};
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(StyleEncoder);

/// Encoder-decoder generator: IN-normalized downsampling blocks, intermediate
/// blocks (first half IN, second half AdaIN), AdaIN upsampling blocks, tanh out.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const NetworkSpec& spec);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& style);
  LayerShapes layer_shapes(const torch::Tensor& x, const torch::Tensor& style);
  const NetworkSpec& spec() const { return spec_; }

 private:
  torch::Tensor run(const torch::Tensor& x, const torch::Tensor& style, LayerShapes* trace);

  NetworkSpec spec_;
  torch::nn::Conv2d from_rgb_{nullptr}, to_rgb_{nullptr};
  torch::nn::ModuleList encode_{nullptr}, decode_{nullptr};
};
TORCH_MODULE(Generator);

/// He (Kaiming normal) initialization of every conv/linear weight; zero biases.
/// AdaIN style projections get a unit bias on their scale half.
void he_initialize(torch::nn::Module& module);

/// shadow <- decay * shadow + (1 - decay) * live, parameter by parameter.
/// Throws ShapeError when names or shapes differ.
void ema_update(torch::nn::Module& shadow, const torch::nn::Module& live, double decay);
void ema_update(std::vector<torch::Tensor>& shadow, const std::vector<torch::Tensor>& live, double decay);

/// Copies parameters (and buffers) of `source` into `target` with identical structure.
void copy_parameters(torch::nn::Module& target, const torch::nn::Module& source);
void set_requires_grad(torch::nn::Module& module, bool enabled);
int64_t count_parameters(const torch::nn::Module& module, const std::string& prefix = "");

}  // namespace refstyle
