#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "refstyle/config.hpp"

namespace refstyle {

/// Decodes a PNG/JPEG file into an (H, W, 3) uint8 RGB tensor.
torch::Tensor read_image_rgb8(const std::filesystem::path& path);
/// Writes an (C, H, W) tensor in [-1, 1] as an 8-bit PNG/JPEG (by extension).
void write_image(const std::filesystem::path& path, const torch::Tensor& image);

/// uint8 (H, W, C) <-> float (C, H, W) in [-1, 1] via pixel / 127.5 - 1.
torch::Tensor to_model_range(const torch::Tensor& hwc_u8);
torch::Tensor to_uint8_hwc(const torch::Tensor& chw);

/// Center crop to `crop` (0 disables; clamped to the short side) followed by
/// antialiased bilinear resize to `resolution`. Input and output are uint8 HWC.
torch::Tensor preprocess_rgb8(const torch::Tensor& hwc_u8, int center_crop, int resolution);

/// Per-image evaluation labels: either one class index or a 0/1 attribute vector.
struct LabelSet {
  std::vector<std::string> class_names;      // class label names (multi-class)
  std::vector<int64_t> classes;              // per image, -1 when unknown
  std::vector<std::string> attribute_names;  // multi-label datasets
  torch::Tensor attributes;                  // (N, A) float in {0, 1}

  bool has_classes() const { return !classes.empty(); }
  bool has_attributes() const { return attributes.defined() && attributes.numel() > 0; }
};

/// Indexed image collection held as uint8 (N, H, W, C); served as float
/// (C, H, W) in [-1, 1]. Labels are stored separately and never reach the
/// training batch.
class ImageCollection {
 public:
  ImageCollection() = default;
  ImageCollection(torch::Tensor pixels_u8, std::vector<std::string> names);

  int64_t size() const { return pixels_.defined() ? pixels_.size(0) : 0; }
  int resolution() const { return static_cast<int>(pixels_.size(1)); }
  int channels() const { return static_cast<int>(pixels_.size(3)); }
  const std::vector<std::string>& names() const { return names_; }
  torch::Tensor image(int64_t index) const;
  /// Images at `indices` stacked as (N, C, H, W) float.
  torch::Tensor gather(const std::vector<int64_t>& indices) const;
  /// Every image, (N, C, H, W) float.
  torch::Tensor all() const;
  const torch::Tensor& pixels() const { return pixels_; }

  LabelSet labels;
  int64_t skipped_files = 0;

 private:
  torch::Tensor pixels_;
  std::vector<std::string> names_;
};

/// Scans `spec.root` recursively for .png/.jpg/.jpeg files in sorted path
/// order. Class subdirectories become evaluation class labels; a label file
/// (CSV `file,label` or `file,attr1,attr2,...` with a header) overrides them.
/// Unreadable files are skipped and counted. Throws IoError on an empty result.
ImageCollection load_dataset(const DatasetSpec& spec);

/// Images below `dir` preprocessed to `resolution` (no labels beyond class subdirectories).
ImageCollection load_image_dir(const std::filesystem::path& dir, int resolution, int center_crop = 0);

/// The training set a run config describes: synthetic data generated in
/// memory or a folder dataset.
ImageCollection load_training_images(const RunConfig& config);

/// Reads a label CSV into `collection.labels` keyed by relative file name.
void attach_label_file(ImageCollection& collection, const std::filesystem::path& label_file);

struct SyntheticDataset {
  ImageCollection images;  // labels.classes holds the style class
  std::vector<int64_t> shapes;  // structure identity (0 circle, 1 square, 2 triangle)
  torch::Tensor masks;          // (N, H, W) bool foreground masks
};

/// Images where structure (shape identity, position, size, rotation) and style
/// (foreground/background palette class, optional stripe texture) are sampled
/// independently.
SyntheticDataset make_synthetic(const SyntheticStyleSpec& spec);

/// Foreground mask of a (C, H, W) image in [-1, 1]: pixels whose color is far
/// from the background color estimated on the image border.
torch::Tensor foreground_mask(const torch::Tensor& image, double threshold = 0.35);

double mask_iou(const torch::Tensor& a, const torch::Tensor& b);

/// Writes images as PNG files plus labels.csv (file,label) into `dir`.
void write_collection(const ImageCollection& collection, const std::filesystem::path& dir);

/// Deterministic epoch-shuffled batches. The permutation of epoch e depends
/// only on (seed, e), so the batch served at any step is a pure function of
/// the step and no loader state needs checkpointing.
class BatchSampler {
 public:
  BatchSampler(int64_t dataset_size, int batch_size, uint64_t seed);

  int64_t batches_per_epoch() const { return batches_per_epoch_; }
  std::vector<int64_t> indices_for_step(int64_t step) const;
  std::vector<int64_t> epoch_permutation(int64_t epoch) const;

 private:
  int64_t dataset_size_;
  int batch_size_;
  uint64_t seed_;
  int64_t batches_per_epoch_;
};

}  // namespace refstyle
