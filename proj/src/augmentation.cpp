#include "refstyle/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "refstyle/error.hpp"

namespace refstyle {

namespace F = torch::nn::functional;

namespace {

double uniform(Rng& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool coin(Rng& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

int image_side(const torch::Tensor& image) {
  if (image.dim() < 3) throw ShapeError("expected an image tensor (C, H, W) or (N, C, H, W)");
  const auto h = image.size(-2);
  const auto w = image.size(-1);
  if (h != w) throw ShapeError("square images required, got " + c10::str(image.sizes()));
  return static_cast<int>(h);
}

torch::Tensor to_unit_range(const torch::Tensor& x) { return (x + 1.0) * 0.5; }
torch::Tensor to_signed_range(const torch::Tensor& x) { return x * 2.0 - 1.0; }

torch::Tensor affine_jitter(const torch::Tensor& image, const AugmentationPolicy& policy, Rng& rng) {
  constexpr double kDeg = std::numbers::pi / 180.0;
  const double angle = uniform(rng, -policy.rotation_max_deg, policy.rotation_max_deg) * kDeg;
  const double shear = uniform(rng, -policy.shear_max_deg, policy.shear_max_deg) * kDeg;
  // Normalized grid coordinates span [-1, 1], so a shift of f * side is 2f.
  const double tx = 2.0 * uniform(rng, -policy.shift_max_frac, policy.shift_max_frac);
  const double ty = 2.0 * uniform(rng, -policy.shift_max_frac, policy.shift_max_frac);
  if (angle == 0.0 && shear == 0.0 && tx == 0.0 && ty == 0.0) return image;

  // Rotation composed with an x-shear: [cos -sin; sin cos] * [1 tan(shear); 0 1].
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double k = std::tan(shear);
  const auto opts = torch::TensorOptions().dtype(image.scalar_type());
  const auto theta = torch::tensor({c, c * k - s, tx, s, s * k + c, ty}, opts).view({1, 2, 3});
  const auto batch = image.unsqueeze(0);
  const auto grid = F::affine_grid(theta, batch.sizes(), /*align_corners=*/false);
  const auto out = F::grid_sample(batch, grid,
                                  F::GridSampleFuncOptions()
                                      .mode(torch::kBilinear)
                                      .padding_mode(torch::kReflection)
                                      .align_corners(false));
  return out.squeeze(0);
}

torch::Tensor adjust_contrast(const torch::Tensor& rgb01, double factor) {
  const auto mean = color::grayscale(rgb01).mean();
  return ((rgb01 - mean) * factor + mean).clamp(0.0, 1.0);
}

torch::Tensor adjust_saturation(const torch::Tensor& rgb01, double factor) {
  const auto gray = color::grayscale(rgb01);
  return ((rgb01 - gray) * factor + gray).clamp(0.0, 1.0);
}

torch::Tensor adjust_hue(const torch::Tensor& rgb01, double shift) {
  if (shift == 0.0) return rgb01;
  auto hsv = color::rgb_to_hsv(rgb01);
  auto hue = torch::remainder(hsv[0] + shift, 1.0);
  hsv = torch::stack({hue, hsv[1], hsv[2]});
  return color::hsv_to_rgb(hsv);
}

torch::Tensor color_distort(const torch::Tensor& image, const AugmentationPolicy& policy, Rng& rng) {
  const double s = policy.color_jitter_strength;
  const bool jitter = coin(rng, policy.color_jitter_prob);
  const double brightness = uniform(rng, std::max(0.0, 1.0 - 0.4 * s), 1.0 + 0.4 * s);
  const double contrast = uniform(rng, std::max(0.0, 1.0 - 0.4 * s), 1.0 + 0.4 * s);
  const double saturation = uniform(rng, std::max(0.0, 1.0 - 0.4 * s), 1.0 + 0.4 * s);
  const double hue = uniform(rng, -std::min(0.5, 0.1 * s), std::min(0.5, 0.1 * s));
  const bool gray = coin(rng, policy.grayscale_prob);
  if (!jitter && !gray) return image;

  auto x = to_unit_range(image).clamp(0.0, 1.0);
  const bool rgb = x.size(0) == 3;
  if (jitter) {
    x = (x * brightness).clamp(0.0, 1.0);
    if (rgb) {
      x = adjust_contrast(x, contrast);
      x = adjust_saturation(x, saturation);
      x = adjust_hue(x, hue);
    }
  }
  if (gray && rgb) x = color::grayscale(x).expand_as(x).contiguous();
  return to_signed_range(x);
}

}  // namespace

namespace color {

torch::Tensor grayscale(const torch::Tensor& rgb) {
  return (0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]).unsqueeze(0);
}

torch::Tensor rgb_to_hsv(const torch::Tensor& rgb) {
  const auto r = rgb[0];
  const auto g = rgb[1];
  const auto b = rgb[2];
  const auto maxc = std::get<0>(rgb.max(0));
  const auto minc = std::get<0>(rgb.min(0));
  const auto flat = maxc == minc;
  const auto ones = torch::ones_like(maxc);
  const auto range = maxc - minc;
  const auto sat = range / torch::where(flat, ones, maxc);
  const auto divisor = torch::where(flat, ones, range);
  const auto rc = (maxc - r) / divisor;
  const auto gc = (maxc - g) / divisor;
  const auto bc = (maxc - b) / divisor;
  const auto is_r = maxc == r;
  const auto is_g = (maxc == g).logical_and(is_r.logical_not());
  const auto is_b = is_r.logical_not().logical_and((maxc == g).logical_not());
  auto hue = is_r * (bc - gc) + is_g * (2.0 + rc - bc) + is_b * (4.0 + gc - rc);
  hue = torch::remainder(hue / 6.0 + 1.0, 1.0);
  return torch::stack({hue, sat, maxc});
}

torch::Tensor hsv_to_rgb(const torch::Tensor& hsv) {
  const auto h = hsv[0];
  const auto s = hsv[1];
  const auto v = hsv[2];
  const auto scaled = h * 6.0;
  const auto sector = torch::floor(scaled);
  const auto frac = scaled - sector;
  const auto idx = torch::remainder(sector, 6.0).to(torch::kLong);
  const auto p = (v * (1.0 - s)).clamp(0.0, 1.0);
  const auto q = (v * (1.0 - s * frac)).clamp(0.0, 1.0);
  const auto t = (v * (1.0 - s * (1.0 - frac))).clamp(0.0, 1.0);
  const auto red = torch::stack({v, q, p, p, t, v});
  const auto green = torch::stack({t, v, v, q, p, p});
  const auto blue = torch::stack({p, p, t, v, v, q});
  const auto table = torch::stack({red, green, blue});  // (3, 6, H, W)
  const auto select = idx.unsqueeze(0).unsqueeze(0).expand({3, 1, idx.size(0), idx.size(1)});
  return table.gather(1, select).squeeze(1);
}

}  // namespace color

CropBox sample_crop(int image_side, double min_frac, double max_frac, Rng& rng) {
  const int floor_side = std::min(kMinCropSide, image_side);
  int lo = std::max(floor_side, static_cast<int>(std::lround(min_frac * image_side)));
  int hi = std::max(lo, static_cast<int>(std::lround(max_frac * image_side)));
  hi = std::min(hi, image_side);
  lo = std::min(lo, hi);
  CropBox box;
  box.side = lo == hi ? lo : std::uniform_int_distribution<int>(lo, hi)(rng);
  const int slack = image_side - box.side;
  box.top = slack == 0 ? 0 : std::uniform_int_distribution<int>(0, slack)(rng);
  box.left = slack == 0 ? 0 : std::uniform_int_distribution<int>(0, slack)(rng);
  return box;
}

torch::Tensor resize_image(const torch::Tensor& image, int out_h, int out_w) {
  const bool single = image.dim() == 3;
  auto batch = single ? image.unsqueeze(0) : image;
  if (batch.size(2) == out_h && batch.size(3) == out_w) return image;
  auto out = F::interpolate(batch, F::InterpolateFuncOptions()
                                       .size(std::vector<int64_t>{out_h, out_w})
                                       .mode(torch::kBilinear)
                                       .align_corners(false)
                                       .antialias(true));
  return single ? out.squeeze(0) : out;
}

torch::Tensor crop_and_resize(const torch::Tensor& image, const CropBox& box, int out_side) {
  const int side = image_side(image);
  if (box.side == side && out_side == side) return image;
  const auto crop = image.narrow(-2, box.top, box.side).narrow(-1, box.left, box.side);
  return resize_image(crop, out_side, out_side);
}

torch::Tensor random_crop_view(const torch::Tensor& image, double min_frac, double max_frac, Rng& rng) {
  const int side = image_side(image);
  return crop_and_resize(image, sample_crop(side, min_frac, max_frac, rng), side);
}

torch::Tensor augment(const torch::Tensor& image, const AugmentationPolicy& policy, Rng& rng) {
  if (image.dim() != 3) throw ShapeError("augment expects a single (C, H, W) image");
  auto x = random_crop_view(image, policy.crop_scale_min, policy.crop_scale_max, rng);
  if (coin(rng, policy.hflip_prob)) x = x.flip({2});
  if (policy.use_affine) x = affine_jitter(x, policy, rng);
  if (policy.use_color) x = color_distort(x, policy, rng);
  return x.clamp(-1.0, 1.0);
}

torch::Tensor augment_batch(const torch::Tensor& batch, const AugmentationPolicy& policy, Rng& rng) {
  if (batch.dim() != 4) throw ShapeError("augment_batch expects (N, C, H, W)");
  std::vector<torch::Tensor> views;
  views.reserve(static_cast<size_t>(batch.size(0)));
  for (int64_t i = 0; i < batch.size(0); ++i) views.push_back(augment(batch[i], policy, rng));
  return torch::stack(views);
}

std::vector<Patch> sample_patches(const torch::Tensor& image, const PatchSpec& spec, Rng& rng) {
  if (spec.count < 1) throw InvalidArgument("patch count must be at least 1, got " + std::to_string(spec.count));
  spec.validate();
  if (image.dim() != 3) throw ShapeError("sample_patches expects a single (C, H, W) image");
  const int side = image_side(image);
  std::vector<Patch> patches;
  patches.reserve(static_cast<size_t>(spec.count));
  for (int m = 0; m < spec.count; ++m) {
    const auto box = sample_crop(side, spec.scale_min, spec.scale_max, rng);
    patches.push_back({box, crop_and_resize(image, box, side)});
  }
  return patches;
}

torch::Tensor sample_patch_batch(const torch::Tensor& batch, const PatchSpec& spec, Rng& rng) {
  if (batch.dim() != 4) throw ShapeError("sample_patch_batch expects (N, C, H, W)");
  std::vector<torch::Tensor> all;
  all.reserve(static_cast<size_t>(batch.size(0) * spec.count));
  for (int64_t i = 0; i < batch.size(0); ++i)
    for (auto& p : sample_patches(batch[i], spec, rng)) all.push_back(std::move(p.image));
  return torch::stack(all);
}

}  // namespace refstyle
