#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace refstyle {

/// Shape parameters shared by the discriminator, style encoder and generator.
struct NetworkSpec {
  int resolution = 128;
  int image_channels = 3;
  int base_channels = 64;
  int max_channels = 512;
  int style_dim = 128;
  int rep_dim = 256;
  /// Residual downsampling blocks in the discriminator and style encoder
  /// trunks. 0 derives log2(resolution / 4), i.e. 5 at 128x128.
  int trunk_blocks = 0;
  int gen_down_blocks = 3;
  int gen_mid_blocks = 4;
  double leaky_slope = 0.2;
  double adain_eps = 1e-5;

  int effective_trunk_blocks() const;
  /// Spatial side left after the trunk; the head convolution uses it as kernel.
  int trunk_output_side() const;
  void validate() const;
};

struct AugmentationPolicy {
  double crop_scale_min = 0.125;
  double crop_scale_max = 1.0;
  double hflip_prob = 0.5;
  bool use_affine = true;
  double rotation_max_deg = 15.0;
  double shear_max_deg = 10.0;
  double shift_max_frac = 0.1;
  bool use_color = true;
  double color_jitter_strength = 1.0;
  double color_jitter_prob = 0.8;
  double grayscale_prob = 0.2;

  void validate() const;
};

struct PatchSpec {
  int count = 4;
  double scale_min = 0.125;
  double scale_max = 1.0;

  void validate() const;
};

struct ContrastiveConfig {
  double temperature = 0.07;
  int queue_capacity = 2048;
  double key_momentum = 0.999;
  PatchSpec patches;

  void validate() const;
};

struct LossWeights {
  double cyc = 1.0;
  double ct_d = 0.1;
  double ct_g = 0.1;
  double r1_gamma = 10.0;
  int r1_interval = 16;

  void validate() const;
};

struct TrainConfig {
  int batch_size = 32;
  int64_t total_iters = 100000;
  double lr = 5e-5;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.99;
  double ema_decay = 0.999;
  uint64_t seed = 0;
  int64_t checkpoint_every = 10000;
  int64_t log_every = 100;
  int64_t sample_every = 5000;
  /// When true the adversarial real term also sees the reference half.
  bool adv_real_full_batch = false;
  LossWeights loss_weights;
  ContrastiveConfig contrastive;
  AugmentationPolicy augmentation;

  void validate() const;
};

struct SyntheticStyleSpec {
  int num_images = 400;
  int resolution = 64;
  int num_styles = 2;
  std::string structure_generator = "shapes";
  std::string style_generator = "palette";
  uint64_t seed = 1;

  void validate() const;
};

struct DatasetSpec {
  /// "folder" reads images below root; "synthetic" generates them in memory.
  std::string kind = "folder";
  std::string root;
  int resolution = 128;
  /// Center crop side in source pixels before resizing; 0 disables.
  int center_crop = 0;
  std::string label_file;
  std::string split = "train";

  void validate() const;
};

struct EvalConfig {
  std::string test_root;
  int references_per_input = 10;
  uint64_t seed = 777;
  int search_k = 5;
  int interpolation_steps = 6;
  std::string label_file;  // labels of the test images; empty uses class subdirectories
  std::string attributes;  // comma separated attribute names for multi-label oracles
  /// "mean_color" fits a nearest-centroid color classifier on the labeled test
  /// set; "none" skips translation accuracy.
  std::string oracle = "mean_color";

  void validate() const;
};

struct RunConfig {
  std::string name = "run";
  std::string out_dir = "runs";
  NetworkSpec network;
  TrainConfig train;
  DatasetSpec data;
  SyntheticStyleSpec synthetic;
  EvalConfig eval;

  /// Network spec with the resolution taken from the dataset.
  NetworkSpec effective_network() const;
  void validate() const;
};

/// Parses `key = value` lines with dotted keys; `#` starts a comment.
/// Unknown keys, malformed values and invariant violations raise ConfigError
/// naming the key and the line.
RunConfig parse_config_text(std::string_view text, std::string_view source = "<string>");
RunConfig parse_config(const std::filesystem::path& path);

/// Applies one `key=value` override on top of an existing config.
void apply_override(RunConfig& cfg, std::string_view assignment);
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& cfg, std::string_view key);

/// Every key with its materialized value, in canonical order.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg);
std::string serialize_config(const RunConfig& cfg);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace refstyle
