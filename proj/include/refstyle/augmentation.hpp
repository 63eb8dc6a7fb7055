#pragma once

#include <torch/torch.h>

#include <random>
#include <vector>

#include "refstyle/config.hpp"

namespace refstyle {

/// All sampling in the augmentation and patch code draws from this engine, so
/// a seeded engine makes the whole pipeline bit-reproducible.
using Rng = std::mt19937_64;

/// Smallest crop side in pixels; keeps degenerate crops out of the pipeline.
inline constexpr int kMinCropSide = 8;

struct CropBox {
  int top = 0;
  int left = 0;
  int side = 0;
};

/// Square crop with side uniform in [min_frac, max_frac] * image side (at least
/// kMinCropSide pixels) at a uniform position.
CropBox sample_crop(int image_side, double min_frac, double max_frac, Rng& rng);

/// Crops a (C, H, W) or (N, C, H, W) tensor and resizes the crop to
/// `out_side` with antialiased bilinear interpolation. A full-size crop
/// returns the input unchanged.
torch::Tensor crop_and_resize(const torch::Tensor& image, const CropBox& box, int out_side);

/// Bilinear resize with antialiasing, (C, H, W) or (N, C, H, W).
torch::Tensor resize_image(const torch::Tensor& image, int out_h, int out_w);

/// Random resized crop back to the input resolution (the query-side view).
torch::Tensor random_crop_view(const torch::Tensor& image, double min_frac, double max_frac, Rng& rng);

/// Full positive-view augmentation of one (C, H, W) image in [-1, 1]: random
/// resized crop, horizontal flip, affine jitter with reflection padding, color
/// distortion, clamp to [-1, 1].
torch::Tensor augment(const torch::Tensor& image, const AugmentationPolicy& policy, Rng& rng);

/// Applies `augment` independently to every image of an (N, C, H, W) batch.
torch::Tensor augment_batch(const torch::Tensor& batch, const AugmentationPolicy& policy, Rng& rng);

struct Patch {
  CropBox box;
  torch::Tensor image;  // resized to the full input resolution
};

/// M square patches with side uniform in [scale_min, scale_max] * side, each
/// resized back to the full resolution. Throws InvalidArgument when M < 1.
std::vector<Patch> sample_patches(const torch::Tensor& image, const PatchSpec& spec, Rng& rng);

/// Patches for every image of a batch, stacked image-major: (N * M, C, H, W).
torch::Tensor sample_patch_batch(const torch::Tensor& batch, const PatchSpec& spec, Rng& rng);

namespace color {
/// RGB <-> HSV on (C=3, H, W) tensors with channels in [0, 1].
torch::Tensor rgb_to_hsv(const torch::Tensor& rgb);
torch::Tensor hsv_to_rgb(const torch::Tensor& hsv);
torch::Tensor grayscale(const torch::Tensor& rgb);
}  // namespace color

}  // namespace refstyle
