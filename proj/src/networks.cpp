#include "refstyle/networks.hpp"

#include <cmath>
#include <map>

#include "refstyle/error.hpp"

namespace refstyle {

namespace F = torch::nn::functional;

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

torch::nn::Conv2d conv(int in, int out, int kernel, int padding) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).padding(padding));
}

std::vector<int64_t> shape_of(const torch::Tensor& t) { return t.sizes().vec(); }

void record(LayerShapes* trace, const std::string& name, const torch::Tensor& t) {
  if (trace != nullptr) trace->emplace_back(name, shape_of(t));
}

void check_image_batch(const torch::Tensor& x, const NetworkSpec& spec, const char* who) {
  if (x.dim() != 4 || x.size(1) != spec.image_channels || x.size(2) != spec.resolution ||
      x.size(3) != spec.resolution) {
    throw ShapeError(std::string(who) + ": expected input (N, " + std::to_string(spec.image_channels) + ", " +
                     std::to_string(spec.resolution) + ", " + std::to_string(spec.resolution) + "), got " +
                     c10::str(x.sizes()));
  }
}

/// Trunk shared in layout (not in weights) by the discriminator and style encoder.
torch::nn::ModuleList make_trunk(const NetworkSpec& spec, int* out_channels) {
  torch::nn::ModuleList blocks;
  int ch = spec.base_channels;
  for (int i = 0; i < spec.effective_trunk_blocks(); ++i) {
    const int next = std::min(ch * 2, spec.max_channels);
    blocks->push_back(ResBlock(ch, next, Resample::kDown, Norm::kNone, 0, spec.leaky_slope, spec.adain_eps));
    ch = next;
  }
  *out_channels = ch;
  return blocks;
}

}  // namespace

torch::Tensor adain(const torch::Tensor& features, const torch::Tensor& scale, const torch::Tensor& bias,
                    double eps) {
  if (features.dim() != 4) throw ShapeError("adain: features must be (N, C, H, W)");
  const auto n = features.size(0);
  const auto c = features.size(1);
  if (scale.sizes() != torch::IntArrayRef{n, c} || bias.sizes() != torch::IntArrayRef{n, c})
    throw ShapeError("adain: scale and bias must be (N, C) = " + c10::str(torch::IntArrayRef{n, c}));
  const auto mean = features.mean({2, 3}, /*keepdim=*/true);
  const auto centered = features - mean;
  const auto var = centered.pow(2).mean({2, 3}, /*keepdim=*/true);
  // The clamp keeps d(sqrt)/d(var) finite on constant channels.
  const auto std = var.clamp_min(1e-24).sqrt();
  const auto normalized = centered / (std + eps);
  return scale.view({n, c, 1, 1}) * normalized + bias.view({n, c, 1, 1});
}

ResBlockImpl::ResBlockImpl(int in_channels, int out_channels, Resample resample, Norm norm, int style_dim,
                           double slope, double eps)
    : resample_(resample), norm_(norm), slope_(slope), eps_(eps), learned_skip_(in_channels != out_channels) {
  const int mid = resample == Resample::kUp ? out_channels : in_channels;
  conv1_ = register_module("conv1", conv(in_channels, mid, 3, 1));
  conv2_ = register_module("conv2", conv(mid, out_channels, 3, 1));
  if (learned_skip_) {
    skip_ = register_module(
        "skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1).bias(false)));
  }
  if (norm == Norm::kInstance) {
    in1_ = register_module("norm1", torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(in_channels).affine(true)));
    in2_ = register_module("norm2", torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(mid).affine(true)));
  } else if (norm == Norm::kAdaptive) {
    if (style_dim < 1) throw InvalidArgument("AdaIN residual block requires a positive style dimension");
    style1_ = register_module("style1", torch::nn::Linear(style_dim, 2 * in_channels));
    style2_ = register_module("style2", torch::nn::Linear(style_dim, 2 * mid));
  }
}

torch::Tensor ResBlockImpl::normalize(int which, const torch::Tensor& x, const torch::Tensor& style) {
  switch (norm_) {
    case Norm::kNone:
      return x;
    case Norm::kInstance:
      return which == 1 ? in1_(x) : in2_(x);
    case Norm::kAdaptive: {
      if (!style.defined()) throw InvalidArgument("AdaIN residual block called without a style code");
      auto& fc = which == 1 ? style1_ : style2_;
      if (style.dim() != 2 || style.size(1) != fc->options.in_features())
        throw ShapeError("style code must be (N, " + std::to_string(fc->options.in_features()) + "), got " +
                         c10::str(style.sizes()));
      const auto params = fc(style);
      const auto halves = params.chunk(2, 1);
      return adain(x, halves[0], halves[1], eps_);
    }
  }
  return x;
}

torch::Tensor ResBlockImpl::shortcut(const torch::Tensor& x) {
  auto h = x;
  if (resample_ == Resample::kUp) h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
  if (learned_skip_) h = skip_(h);
  if (resample_ == Resample::kDown) h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2));
  return h;
}

torch::Tensor ResBlockImpl::residual(const torch::Tensor& x, const torch::Tensor& style) {
  auto h = normalize(1, x, style);
  h = F::leaky_relu(h, F::LeakyReLUFuncOptions().negative_slope(slope_));
  if (resample_ == Resample::kUp) h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
  h = conv1_(h);
  if (resample_ == Resample::kDown) h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2));
  h = normalize(2, h, style);
  h = F::leaky_relu(h, F::LeakyReLUFuncOptions().negative_slope(slope_));
  return conv2_(h);
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& style) {
  return (shortcut(x) + residual(x, style)) * kInvSqrt2;
}

// ---------------------------------------------------------------------------
// Discriminator

DiscriminatorImpl::DiscriminatorImpl(const NetworkSpec& spec) : spec_(spec) {
  spec_.validate();
  from_rgb_ = register_module("from_rgb", conv(spec.image_channels, spec.base_channels, 1, 0));
  int ch = 0;
  blocks_ = register_module("blocks", make_trunk(spec_, &ch));
  const int side = spec_.trunk_output_side();
  ct_conv_ = register_module("ct_conv", conv(ch, ch, side, 0));
  ct_fc_ = register_module("ct_fc", torch::nn::Linear(ch, spec.rep_dim));
  adv_conv_ = register_module("adv_conv", conv(ch, ch, side, 0));
  adv_fc_ = register_module("adv_fc", torch::nn::Linear(ch, 1));
  he_initialize(*this);
}

torch::Tensor DiscriminatorImpl::trunk(const torch::Tensor& x) {
  check_image_batch(x, spec_, "discriminator");
  auto h = from_rgb_(x);
  for (auto& block : *blocks_) h = block->as<ResBlockImpl>()->forward(h);
  return h;
}

torch::Tensor DiscriminatorImpl::head(torch::nn::Conv2d& conv_layer, torch::nn::Linear& fc, const torch::Tensor& h,
                                      LayerShapes* trace) {
  const auto lrelu = F::LeakyReLUFuncOptions().negative_slope(spec_.leaky_slope);
  auto y = F::leaky_relu(h, lrelu);
  record(trace, "lrelu", y);
  y = conv_layer(y);
  record(trace, "conv", y);
  y = F::leaky_relu(y, lrelu);
  record(trace, "lrelu", y);
  y = y.flatten(1);
  record(trace, "reshape", y);
  return fc(y);
}

torch::Tensor DiscriminatorImpl::contrastive_from_trunk(const torch::Tensor& h) {
  return F::normalize(head(ct_conv_, ct_fc_, h, nullptr), F::NormalizeFuncOptions().dim(1));
}

torch::Tensor DiscriminatorImpl::adversarial_from_trunk(const torch::Tensor& h) {
  return head(adv_conv_, adv_fc_, h, nullptr);
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& x) {
  const auto h = trunk(x);
  return {contrastive_from_trunk(h), adversarial_from_trunk(h)};
}

torch::Tensor DiscriminatorImpl::contrastive(const torch::Tensor& x) { return contrastive_from_trunk(trunk(x)); }

torch::Tensor DiscriminatorImpl::adversarial(const torch::Tensor& x) { return adversarial_from_trunk(trunk(x)); }

LayerShapes DiscriminatorImpl::layer_shapes(const torch::Tensor& x) {
  LayerShapes trace;
  check_image_batch(x, spec_, "discriminator");
  record(&trace, "image", x);
  auto h = from_rgb_(x);
  record(&trace, "conv1x1", h);
  for (auto& block : *blocks_) {
    h = block->as<ResBlockImpl>()->forward(h);
    record(&trace, "resblk", h);
  }
  LayerShapes ct_trace;
  const auto rep = head(ct_conv_, ct_fc_, h, &ct_trace);
  const auto logit = head(adv_conv_, adv_fc_, h, nullptr);
  trace.insert(trace.end(), ct_trace.begin(), ct_trace.end());
  record(&trace, "linear.ct", rep);
  record(&trace, "linear.adv", logit);
  return trace;
}

// ---------------------------------------------------------------------------
// Style encoder

StyleEncoderImpl::StyleEncoderImpl(const NetworkSpec& spec) : spec_(spec) {
  spec_.validate();
  from_rgb_ = register_module("from_rgb", conv(spec.image_channels, spec.base_channels, 1, 0));
  int ch = 0;
  blocks_ = register_module("blocks", make_trunk(spec_, &ch));
  head_conv_ = register_module("head_conv", conv(ch, ch, spec_.trunk_output_side(), 0));
  fc1_ = register_module("fc1", torch::nn::Linear(ch, ch));
  fc2_ = register_module("fc2", torch::nn::Linear(ch, spec.style_dim));
  he_initialize(*this);
}

torch::Tensor StyleEncoderImpl::run(const torch::Tensor& x, LayerShapes* trace) {
  check_image_batch(x, spec_, "style encoder");
  const auto lrelu = F::LeakyReLUFuncOptions().negative_slope(spec_.leaky_slope);
  record(trace, "image", x);
  auto h = from_rgb_(x);
  record(trace, "conv1x1", h);
  for (auto& block : *blocks_) {
    h = block->as<ResBlockImpl>()->forward(h);
    record(trace, "resblk", h);
  }
  h = F::leaky_relu(h, lrelu);
  record(trace, "lrelu", h);
  h = head_conv_(h);
  record(trace, "conv", h);
  h = F::leaky_relu(h, lrelu);
  record(trace, "lrelu", h);
  h = h.flatten(1);
  record(trace, "reshape", h);
  h = F::leaky_relu(fc1_(h), lrelu);
  record(trace, "linear.hidden", h);
  h = fc2_(h);
  record(trace, "linear", h);
  return h;
}

torch::Tensor StyleEncoderImpl::forward(const torch::Tensor& x) { return run(x, nullptr); }

LayerShapes StyleEncoderImpl::layer_shapes(const torch::Tensor& x) {
  LayerShapes trace;
  run(x, &trace);
  return trace;
}

// ---------------------------------------------------------------------------
// Generator

GeneratorImpl::GeneratorImpl(const NetworkSpec& spec) : spec_(spec) {
  spec_.validate();
  const double slope = spec.leaky_slope;
  const double eps = spec.adain_eps;
  from_rgb_ = register_module("from_rgb", conv(spec.image_channels, spec.base_channels, 1, 0));
  encode_ = register_module("encode", torch::nn::ModuleList());
  decode_ = register_module("decode", torch::nn::ModuleList());

  std::vector<int> widths{spec.base_channels};
  int ch = spec.base_channels;
  for (int i = 0; i < spec.gen_down_blocks; ++i) {
    const int next = std::min(ch * 2, spec.max_channels);
    encode_->push_back(ResBlock(ch, next, Resample::kDown, Norm::kInstance, 0, slope, eps));
    ch = next;
    widths.push_back(ch);
  }
  const int in_mid = spec.gen_mid_blocks / 2;
  for (int i = 0; i < in_mid; ++i)
    encode_->push_back(ResBlock(ch, ch, Resample::kNone, Norm::kInstance, 0, slope, eps));
  for (int i = in_mid; i < spec.gen_mid_blocks; ++i)
    decode_->push_back(ResBlock(ch, ch, Resample::kNone, Norm::kAdaptive, spec.style_dim, slope, eps));
  for (int i = spec.gen_down_blocks - 1; i >= 0; --i) {
    const int next = widths[static_cast<size_t>(i)];
    decode_->push_back(ResBlock(ch, next, Resample::kUp, Norm::kAdaptive, spec.style_dim, slope, eps));
    ch = next;
  }
  to_rgb_ = register_module("to_rgb", conv(ch, spec.image_channels, 1, 0));
  he_initialize(*this);
}

torch::Tensor GeneratorImpl::run(const torch::Tensor& x, const torch::Tensor& style, LayerShapes* trace) {
  check_image_batch(x, spec_, "generator");
  if (style.dim() != 2 || style.size(0) != x.size(0) || style.size(1) != spec_.style_dim)
    throw ShapeError("generator: style code must be (" + std::to_string(x.size(0)) + ", " +
                     std::to_string(spec_.style_dim) + "), got " + c10::str(style.sizes()));
  record(trace, "image", x);
  auto h = from_rgb_(x);
  record(trace, "conv1x1", h);
  for (auto& block : *encode_) {
    h = block->as<ResBlockImpl>()->forward(h);
    record(trace, "resblk.in", h);
  }
  for (auto& block : *decode_) {
    h = block->as<ResBlockImpl>()->forward(h, style);
    record(trace, "resblk.adain", h);
  }
  h = torch::tanh(to_rgb_(h));
  record(trace, "conv1x1", h);
  return h;
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x, const torch::Tensor& style) {
  return run(x, style, nullptr);
}

LayerShapes GeneratorImpl::layer_shapes(const torch::Tensor& x, const torch::Tensor& style) {
  LayerShapes trace;
  run(x, style, &trace);
  return trace;
}

// ---------------------------------------------------------------------------
// Parameter utilities

void he_initialize(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& child : module.modules(/*include_self=*/false)) {
    if (auto* c = child->as<torch::nn::Conv2dImpl>()) {
      torch::nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanIn, torch::kReLU);
      if (c->bias.defined()) c->bias.zero_();
    } else if (auto* l = child->as<torch::nn::LinearImpl>()) {
      torch::nn::init::kaiming_normal_(l->weight, 0.0, torch::kFanIn, torch::kReLU);
      if (l->bias.defined()) l->bias.zero_();
    }
  }
  // AdaIN projections start as identity modulation: scale 1, bias 0.
  for (auto& child : module.named_modules("", /*include_self=*/false)) {
    if (auto* l = child.value()->as<torch::nn::LinearImpl>()) {
      const auto& name = child.key();
      if (name.ends_with("style1") || name.ends_with("style2")) {
        const auto half = l->bias.size(0) / 2;
        l->bias.narrow(0, 0, half).fill_(1.0);
      }
    }
  }
}

namespace {

void check_same_structure(const torch::OrderedDict<std::string, torch::Tensor>& a,
                          const torch::OrderedDict<std::string, torch::Tensor>& b) {
  if (a.size() != b.size())
    throw ShapeError("parameter sets differ in size: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  for (size_t i = 0; i < a.size(); ++i) {
    const auto& ia = a[i];
    const auto& ib = b[i];
    if (ia.key() != ib.key() || ia.value().sizes() != ib.value().sizes())
      throw ShapeError("parameter mismatch: '" + ia.key() + "' " + c10::str(ia.value().sizes()) + " vs '" + ib.key() +
                       "' " + c10::str(ib.value().sizes()));
  }
}

}  // namespace

void ema_update(torch::nn::Module& shadow, const torch::nn::Module& live, double decay) {
  if (decay < 0.0 || decay > 1.0) throw InvalidArgument("ema decay must lie in [0, 1]");
  const auto shadow_params = shadow.named_parameters();
  const auto live_params = live.named_parameters();
  check_same_structure(shadow_params, live_params);
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < shadow_params.size(); ++i) {
    auto s = shadow_params[i].value();
    s.mul_(decay).add_(live_params[i].value().detach(), 1.0 - decay);
  }
}

void ema_update(std::vector<torch::Tensor>& shadow, const std::vector<torch::Tensor>& live, double decay) {
  if (decay < 0.0 || decay > 1.0) throw InvalidArgument("ema decay must lie in [0, 1]");
  if (shadow.size() != live.size()) throw ShapeError("ema_update: parameter sets differ in size");
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < shadow.size(); ++i) {
    if (shadow[i].sizes() != live[i].sizes()) throw ShapeError("ema_update: parameter " + std::to_string(i) + " shape mismatch");
    shadow[i].mul_(decay).add_(live[i].detach(), 1.0 - decay);
  }
}

void copy_parameters(torch::nn::Module& target, const torch::nn::Module& source) {
  const auto t = target.named_parameters();
  const auto s = source.named_parameters();
  check_same_structure(t, s);
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < t.size(); ++i) t[i].value().copy_(s[i].value());
  const auto tb = target.named_buffers();
  const auto sb = source.named_buffers();
  check_same_structure(tb, sb);
  for (size_t i = 0; i < tb.size(); ++i) tb[i].value().copy_(sb[i].value());
}

void set_requires_grad(torch::nn::Module& module, bool enabled) {
  for (auto& p : module.parameters()) p.set_requires_grad(enabled);
}

int64_t count_parameters(const torch::nn::Module& module, const std::string& prefix) {
  int64_t total = 0;
  for (const auto& item : module.named_parameters())
    if (item.key().starts_with(prefix)) total += item.value().numel();
  return total;
}

}  // namespace refstyle
