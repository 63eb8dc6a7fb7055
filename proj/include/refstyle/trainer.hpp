#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "refstyle/augmentation.hpp"
#include "refstyle/checkpoint.hpp"
#include "refstyle/config.hpp"
#include "refstyle/contrastive.hpp"
#include "refstyle/data.hpp"
#include "refstyle/networks.hpp"
#include "refstyle/objectives.hpp"

namespace refstyle {

/// Per-term losses of one step. ct_d / ct_g are always evaluated; they enter
/// the totals only once the negative dictionary has warmed up (`ct_active`).
struct LossReport {
  int64_t step = 0;  // index of the step that produced the report
  double adv_d = 0.0;
  double adv_g = 0.0;
  double ct_d = 0.0;
  double ct_g = 0.0;
  double cyc = 0.0;
  std::optional<double> r1;
  double total_d = 0.0;
  double total_ge = 0.0;
  bool ct_active = false;
};

inline constexpr const char* kLossCsvHeader = "step,adv_d,adv_g,ct_d,ct_g,cyc,r1";
std::string loss_csv_row(const LossReport& report);

struct TrainState {
  int64_t step = 0;
  uint64_t seed = 0;
  Generator generator{nullptr};
  StyleEncoder encoder{nullptr};
  Discriminator discriminator{nullptr};
  Discriminator key_encoder{nullptr};
  Generator generator_ema{nullptr};
  StyleEncoder encoder_ema{nullptr};
  Discriminator discriminator_ema{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g, opt_e, opt_d;
  std::unique_ptr<NegativeDictionary> dictionary;
};

/// Test seams invoked right after each backward pass, before the optimizer step.
struct StepHooks {
  std::function<void(const TrainState&)> after_d_backward;
  std::function<void(const TrainState&)> after_ge_backward;
};

struct DiscriminatorPhase {
  DiscriminatorLossParts parts;
  torch::Tensor total;
  torch::Tensor keys;
  bool ct_active = false;
};

struct GeneratorPhase {
  GeneratorLossParts parts;
  torch::Tensor total;
  bool ct_active = false;
};

class Trainer {
 public:
  explicit Trainer(RunConfig config, torch::Dtype dtype = torch::kFloat32);

  /// One iteration on a batch of `train.batch_size` real images (N, C, H, W):
  /// split into inputs/references, discriminator update, generator/encoder
  /// update, key-encoder momentum update, enqueue keys, EMA, step + 1.
  /// Throws NumericError naming the term and step on a non-finite loss.
  LossReport train_step(const torch::Tensor& batch);

  /// Discriminator objective for `batch` without touching parameters. The
  /// discriminator must have requires_grad enabled for gradients to flow.
  DiscriminatorPhase discriminator_objective(const torch::Tensor& batch, Rng& rng);
  /// Generator/encoder objective with the discriminator treated as constant.
  GeneratorPhase generator_objective(const torch::Tensor& batch, Rng& rng);

  /// Runs steps until `train.total_iters`, writing logs, sample grids and
  /// checkpoints below `out_dir` when it is non-empty.
  void fit(const ImageCollection& dataset, const std::filesystem::path& out_dir = {});

  Archive to_archive() const;
  void restore(const Archive& archive);
  void save_checkpoint(const std::filesystem::path& path) const;
  static std::unique_ptr<Trainer> from_checkpoint(const std::filesystem::path& path,
                                                  torch::Dtype dtype = torch::kFloat32);

  /// Engine for all random draws of `step`; depends only on (seed, step).
  Rng step_rng(int64_t step) const;

  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }
  const RunConfig& config() const { return config_; }
  const NetworkSpec& network_spec() const { return spec_; }
  torch::Dtype dtype() const { return dtype_; }

  StepHooks hooks;

 private:
  void check_finite(const char* term, const torch::Tensor& value) const;
  void write_sample_grid(const ImageCollection& dataset, const std::filesystem::path& path);

  RunConfig config_;
  NetworkSpec spec_;
  torch::Dtype dtype_;
  TrainState state_;
};

/// Generator + style encoder pair used at inference time (EMA weights).
struct InferenceModel {
  RunConfig config;
  Generator generator{nullptr};
  StyleEncoder encoder{nullptr};
  Discriminator discriminator{nullptr};

  static InferenceModel from_archive(const Archive& archive);
  static InferenceModel load(const std::filesystem::path& checkpoint);
  static InferenceModel from_trainer(const Trainer& trainer);

  torch::Tensor style(const torch::Tensor& images);
  torch::Tensor translate(const torch::Tensor& inputs, const torch::Tensor& references);
  int resolution() const { return generator->spec().resolution; }
};

/// Image grid in the translation layout: empty corner, references along the
/// first row, inputs down the first column, outputs[i][j] = G(input i, ref j).
torch::Tensor translation_grid(const torch::Tensor& inputs, const torch::Tensor& references,
                               const torch::Tensor& outputs);

/// Rows of images side by side: rows is a list of (K, C, H, W) tensors of equal K.
torch::Tensor image_rows(const std::vector<torch::Tensor>& rows);

}  // namespace refstyle
