#include "refstyle/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "refstyle/error.hpp"

namespace refstyle {

namespace fs = std::filesystem;

namespace {

template <typename ModuleHolder>
void freeze(ModuleHolder& m) {
  set_requires_grad(*m, false);
}

std::string fmt_loss(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

int64_t dtype_code(torch::Dtype dtype) { return dtype == torch::kFloat64 ? 1 : 0; }

torch::Dtype dtype_from_code(int64_t code) { return code == 1 ? torch::kFloat64 : torch::kFloat32; }

std::string step_stamp(int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%07lld", static_cast<long long>(step));
  return buf;
}

void zero_grads(torch::nn::Module& module) {
  for (auto& p : module.parameters()) p.mutable_grad() = torch::Tensor();
}

}  // namespace

std::string loss_csv_row(const LossReport& r) {
  std::string row = std::to_string(r.step);
  for (double v : {r.adv_d, r.adv_g, r.ct_d, r.ct_g, r.cyc}) row += "," + fmt_loss(v);
  row += ",";
  if (r.r1) row += fmt_loss(*r.r1);
  return row;
}

Trainer::Trainer(RunConfig config, torch::Dtype dtype)
    : config_(std::move(config)), spec_(config_.effective_network()), dtype_(dtype) {
  config_.validate();
  if (dtype != torch::kFloat32 && dtype != torch::kFloat64) throw InvalidArgument("trainer dtype must be f32 or f64");
  const auto& tc = config_.train;
  state_.seed = tc.seed;
  torch::manual_seed(tc.seed);

  state_.generator = Generator(spec_);
  state_.encoder = StyleEncoder(spec_);
  state_.discriminator = Discriminator(spec_);
  state_.key_encoder = Discriminator(spec_);
  state_.generator_ema = Generator(spec_);
  state_.encoder_ema = StyleEncoder(spec_);
  state_.discriminator_ema = Discriminator(spec_);
  for (torch::nn::Module* m :
       std::initializer_list<torch::nn::Module*>{state_.generator.get(), state_.encoder.get(),
                                                 state_.discriminator.get(), state_.key_encoder.get(),
                                                 state_.generator_ema.get(), state_.encoder_ema.get(),
                                                 state_.discriminator_ema.get()})
    m->to(dtype_);

  copy_parameters(*state_.key_encoder, *state_.discriminator);
  copy_parameters(*state_.generator_ema, *state_.generator);
  copy_parameters(*state_.encoder_ema, *state_.encoder);
  copy_parameters(*state_.discriminator_ema, *state_.discriminator);
  freeze(state_.key_encoder);
  freeze(state_.generator_ema);
  freeze(state_.encoder_ema);
  freeze(state_.discriminator_ema);

  const auto adam = torch::optim::AdamOptions(tc.lr).betas({tc.adam_beta1, tc.adam_beta2}).eps(1e-8);
  state_.opt_g = std::make_unique<torch::optim::Adam>(state_.generator->parameters(), adam);
  state_.opt_e = std::make_unique<torch::optim::Adam>(state_.encoder->parameters(), adam);
  state_.opt_d = std::make_unique<torch::optim::Adam>(state_.discriminator->parameters(), adam);

  state_.dictionary = std::make_unique<NegativeDictionary>(tc.contrastive.queue_capacity, spec_.rep_dim, dtype_);
  state_.dictionary->randomize(tc.seed ^ 0x9e3779b97f4a7c15ULL);
}

Rng Trainer::step_rng(int64_t step) const {
  std::seed_seq seq{static_cast<uint32_t>(state_.seed), static_cast<uint32_t>(state_.seed >> 32),
                    static_cast<uint32_t>(step), static_cast<uint32_t>(static_cast<uint64_t>(step) >> 32), 0x7a11u};
  return Rng(seq);
}

void Trainer::check_finite(const char* term, const torch::Tensor& value) const {
  if (!value.defined()) return;
  const double v = value.item<double>();
  if (!std::isfinite(v))
    throw NumericError("non-finite loss term '" + std::string(term) + "' (" + std::to_string(v) + ") at step " +
                       std::to_string(state_.step));
}

DiscriminatorPhase Trainer::discriminator_objective(const torch::Tensor& batch_in, Rng& rng) {
  const auto& tc = config_.train;
  auto& D = state_.discriminator;
  const auto batch = batch_in.to(dtype_);
  const auto half = batch.size(0) / 2;
  const auto x_o = batch.narrow(0, 0, half);
  const auto x_r = batch.narrow(0, half, half);

  torch::Tensor fake;
  {
    torch::NoGradGuard no_grad;
    const auto t_r = state_.encoder->forward(x_r);
    fake = state_.generator->forward(x_o, t_r).detach();
  }
  const auto real = tc.adv_real_full_batch ? batch : x_o;
  const auto logits = D->adversarial(torch::cat({real, fake}));
  DiscriminatorPhase phase;
  phase.parts.adv = adv_loss_d(logits.narrow(0, 0, real.size(0)), logits.narrow(0, real.size(0), fake.size(0)));

  auto& key_encoder = state_.key_encoder;
  auto ct = discriminator_contrastive_loss(
      batch, tc.augmentation, *state_.dictionary, [&](const torch::Tensor& x) { return D->contrastive(x); },
      [&](const torch::Tensor& x) { return key_encoder->contrastive(x); }, tc.contrastive.temperature, rng);
  phase.parts.ct = ct.loss;
  phase.keys = ct.keys;
  phase.ct_active = state_.dictionary->warmed_up();

  const auto& w = tc.loss_weights;
  if (w.r1_gamma > 0.0 && is_r1_step(state_.step, w.r1_interval))
    phase.parts.r1 = r1_penalty([&](const torch::Tensor& x) { return D->adversarial(x); }, real, w.r1_gamma);

  auto counted = phase.parts;
  if (!phase.ct_active) counted.ct = torch::Tensor();
  phase.total = total_d_loss(counted, w);
  return phase;
}

GeneratorPhase Trainer::generator_objective(const torch::Tensor& batch_in, Rng& rng) {
  const auto& tc = config_.train;
  auto& D = state_.discriminator;
  auto& G = state_.generator;
  const auto batch = batch_in.to(dtype_);
  const auto half = batch.size(0) / 2;
  const auto x_o = batch.narrow(0, 0, half);
  const auto x_r = batch.narrow(0, half, half);

  const auto styles = state_.encoder->forward(batch);
  const auto t_o = styles.narrow(0, 0, half);
  const auto t_r = styles.narrow(0, half, half);
  const auto x_g = G->forward(x_o, t_r);

  GeneratorPhase phase;
  phase.parts.adv = adv_loss_g(D->adversarial(x_g));
  phase.parts.cyc = cycle_loss(x_o, G->forward(x_g, t_o));
  phase.parts.ct = style_match_loss(x_g, x_r, *state_.dictionary, tc.contrastive.patches,
                                    [&](const torch::Tensor& x) { return D->contrastive(x); },
                                    tc.contrastive.temperature, rng);
  phase.ct_active = state_.dictionary->warmed_up();

  auto counted = phase.parts;
  if (!phase.ct_active) counted.ct = torch::Tensor();
  phase.total = total_ge_loss(counted, tc.loss_weights);
  return phase;
}

LossReport Trainer::train_step(const torch::Tensor& batch) {
  const auto& tc = config_.train;
  if (batch.dim() != 4 || batch.size(0) != tc.batch_size || batch.size(1) != spec_.image_channels ||
      batch.size(2) != spec_.resolution || batch.size(3) != spec_.resolution)
    throw ShapeError("train_step expects (" + std::to_string(tc.batch_size) + ", " +
                     std::to_string(spec_.image_channels) + ", " + std::to_string(spec_.resolution) + ", " +
                     std::to_string(spec_.resolution) + "), got " + c10::str(batch.sizes()));
  if (!torch::isfinite(batch).all().item<bool>())
    throw NumericError("non-finite values in the input batch at step " + std::to_string(state_.step));
  auto& s = state_;
  Rng rng = step_rng(s.step);
  LossReport report;
  report.step = s.step;

  // Discriminator update: generator and encoder are frozen, x_g is detached.
  set_requires_grad(*s.generator, false);
  set_requires_grad(*s.encoder, false);
  set_requires_grad(*s.discriminator, true);
  zero_grads(*s.discriminator);
  auto d_phase = discriminator_objective(batch, rng);
  check_finite("adv_d", d_phase.parts.adv);
  check_finite("ct_d", d_phase.parts.ct);
  check_finite("r1", d_phase.parts.r1);
  d_phase.total.backward();
  if (hooks.after_d_backward) hooks.after_d_backward(s);
  s.opt_d->step();
  zero_grads(*s.discriminator);

  // Generator / encoder update: the discriminator acts as a fixed critic.
  set_requires_grad(*s.discriminator, false);
  set_requires_grad(*s.generator, true);
  set_requires_grad(*s.encoder, true);
  zero_grads(*s.generator);
  zero_grads(*s.encoder);
  auto g_phase = generator_objective(batch, rng);
  check_finite("adv_g", g_phase.parts.adv);
  check_finite("cyc", g_phase.parts.cyc);
  check_finite("ct_g", g_phase.parts.ct);
  g_phase.total.backward();
  if (hooks.after_ge_backward) hooks.after_ge_backward(s);
  s.opt_g->step();
  s.opt_e->step();
  zero_grads(*s.generator);
  zero_grads(*s.encoder);
  set_requires_grad(*s.discriminator, true);

  momentum_update(*s.key_encoder, *s.discriminator, tc.contrastive.key_momentum);
  s.dictionary->enqueue(d_phase.keys);
  ema_update(*s.generator_ema, *s.generator, tc.ema_decay);
  ema_update(*s.encoder_ema, *s.encoder, tc.ema_decay);
  ema_update(*s.discriminator_ema, *s.discriminator, tc.ema_decay);
  ++s.step;

  report.adv_d = d_phase.parts.adv.item<double>();
  report.ct_d = d_phase.parts.ct.item<double>();
  if (d_phase.parts.r1.defined()) report.r1 = d_phase.parts.r1.item<double>();
  report.total_d = d_phase.total.item<double>();
  report.adv_g = g_phase.parts.adv.item<double>();
  report.cyc = g_phase.parts.cyc.item<double>();
  report.ct_g = g_phase.parts.ct.item<double>();
  report.total_ge = g_phase.total.item<double>();
  report.ct_active = d_phase.ct_active;
  return report;
}

void Trainer::fit(const ImageCollection& dataset, const fs::path& out_dir) {
  const auto& tc = config_.train;
  if (dataset.size() == 0) throw InvalidArgument("dataset is empty");
  if (dataset.resolution() != spec_.resolution)
    throw ShapeError("dataset resolution " + std::to_string(dataset.resolution()) + " differs from network " +
                     std::to_string(spec_.resolution));
  const BatchSampler sampler(dataset.size(), tc.batch_size, state_.seed);

  const bool write = !out_dir.empty();
  std::ofstream csv;
  if (write) {
    for (const char* sub : {"checkpoints", "samples", "metrics", "logs"}) fs::create_directories(out_dir / sub);
    std::ofstream(out_dir / "config.cfg") << serialize_config(config_);
    const auto csv_path = out_dir / "logs" / "losses.csv";
    const bool fresh = !fs::exists(csv_path) || fs::file_size(csv_path) == 0;
    csv.open(csv_path, std::ios::app);
    if (!csv) throw IoError("cannot open loss log '" + csv_path.string() + "'");
    if (fresh) csv << kLossCsvHeader << "\n";
  }

  int64_t last_checkpoint = -1;
  while (state_.step < tc.total_iters) {
    const auto batch = dataset.gather(sampler.indices_for_step(state_.step));
    const auto report = train_step(batch);
    if (!write) continue;
    if (state_.step % tc.log_every == 0 || state_.step == 1) {
      csv << loss_csv_row(report) << "\n";
      csv.flush();
      std::cout << "step " << state_.step << " adv_d " << fmt_loss(report.adv_d) << " adv_g "
                << fmt_loss(report.adv_g) << " ct_d " << fmt_loss(report.ct_d) << " ct_g " << fmt_loss(report.ct_g)
                << " cyc " << fmt_loss(report.cyc) << (report.ct_active ? "" : " (contrastive warm-up)") << "\n";
    }
    if (state_.step % tc.sample_every == 0)
      write_sample_grid(dataset, out_dir / "samples" / ("step_" + step_stamp(state_.step) + ".png"));
    if (state_.step % tc.checkpoint_every == 0) {
      save_checkpoint(out_dir / "checkpoints" / ("ckpt_" + step_stamp(state_.step) + ".bin"));
      last_checkpoint = state_.step;
    }
  }
  if (write && last_checkpoint != state_.step)
    save_checkpoint(out_dir / "checkpoints" / ("ckpt_" + step_stamp(state_.step) + ".bin"));
}

void Trainer::write_sample_grid(const ImageCollection& dataset, const fs::path& path) {
  const int64_t count = std::min<int64_t>(4, dataset.size() / 2);
  std::vector<int64_t> in_idx, ref_idx;
  for (int64_t i = 0; i < count; ++i) {
    in_idx.push_back(i);
    ref_idx.push_back(count + i);
  }
  auto model = InferenceModel::from_trainer(*this);
  const auto inputs = dataset.gather(in_idx);
  const auto refs = dataset.gather(ref_idx);
  std::vector<torch::Tensor> outputs;
  for (int64_t i = 0; i < count; ++i)
    outputs.push_back(model.translate(inputs[i].unsqueeze(0).expand_as(refs).contiguous(), refs));
  write_image(path, translation_grid(inputs, refs, torch::cat(outputs)));
}

Archive Trainer::to_archive() const {
  Archive a;
  a.put("format_version", static_cast<int64_t>(kCheckpointFormatVersion));
  a.put("step", state_.step);
  a.put("seed", static_cast<int64_t>(state_.seed));
  a.put("dtype", dtype_code(dtype_));
  a.put("config", serialize_config(config_));
  put_module(a, "G", *state_.generator);
  put_module(a, "E", *state_.encoder);
  put_module(a, "D", *state_.discriminator);
  put_module(a, "K", *state_.key_encoder);
  put_module(a, "G_ema", *state_.generator_ema);
  put_module(a, "E_ema", *state_.encoder_ema);
  put_module(a, "D_ema", *state_.discriminator_ema);
  put_adam(a, "opt_g", *state_.opt_g, *state_.generator);
  put_adam(a, "opt_e", *state_.opt_e, *state_.encoder);
  put_adam(a, "opt_d", *state_.opt_d, *state_.discriminator);
  a.put("dict/storage", state_.dictionary->entries());
  a.put("dict/cursor", state_.dictionary->cursor());
  a.put("dict/total", state_.dictionary->total_enqueued());
  return a;
}

void Trainer::restore(const Archive& a) {
  if (a.integer("format_version") != kCheckpointFormatVersion)
    throw StateError("unsupported checkpoint format version " + std::to_string(a.integer("format_version")));
  load_module(a, "G", *state_.generator);
  load_module(a, "E", *state_.encoder);
  load_module(a, "D", *state_.discriminator);
  load_module(a, "K", *state_.key_encoder);
  load_module(a, "G_ema", *state_.generator_ema);
  load_module(a, "E_ema", *state_.encoder_ema);
  load_module(a, "D_ema", *state_.discriminator_ema);
  load_adam(a, "opt_g", *state_.opt_g, *state_.generator);
  load_adam(a, "opt_e", *state_.opt_e, *state_.encoder);
  load_adam(a, "opt_d", *state_.opt_d, *state_.discriminator);
  state_.dictionary->restore(a.tensor("dict/storage"), a.integer("dict/cursor"), a.integer("dict/total"));
  state_.step = a.integer("step");
  state_.seed = static_cast<uint64_t>(a.integer("seed"));
}

void Trainer::save_checkpoint(const fs::path& path) const { to_archive().save(path); }

std::unique_ptr<Trainer> Trainer::from_checkpoint(const fs::path& path, torch::Dtype dtype) {
  const auto archive = Archive::load(path);
  auto config = parse_config_text(archive.string("config"), path.string() + "#config");
  if (archive.contains("dtype")) dtype = dtype_from_code(archive.integer("dtype"));
  auto trainer = std::make_unique<Trainer>(std::move(config), dtype);
  trainer->restore(archive);
  return trainer;
}

// ---------------------------------------------------------------------------

InferenceModel InferenceModel::from_archive(const Archive& archive) {
  InferenceModel m;
  m.config = parse_config_text(archive.string("config"), "checkpoint#config");
  const auto spec = m.config.effective_network();
  m.generator = Generator(spec);
  m.encoder = StyleEncoder(spec);
  m.discriminator = Discriminator(spec);
  load_module(archive, "G_ema", *m.generator);
  load_module(archive, "E_ema", *m.encoder);
  load_module(archive, "D_ema", *m.discriminator);
  set_requires_grad(*m.generator, false);
  set_requires_grad(*m.encoder, false);
  set_requires_grad(*m.discriminator, false);
  m.generator->eval();
  m.encoder->eval();
  m.discriminator->eval();
  return m;
}

InferenceModel InferenceModel::load(const fs::path& checkpoint) { return from_archive(Archive::load(checkpoint)); }

InferenceModel InferenceModel::from_trainer(const Trainer& trainer) {
  InferenceModel m;
  m.config = trainer.config();
  const auto& spec = trainer.network_spec();
  m.generator = Generator(spec);
  m.encoder = StyleEncoder(spec);
  m.discriminator = Discriminator(spec);
  copy_parameters(*m.generator, *trainer.state().generator_ema);
  copy_parameters(*m.encoder, *trainer.state().encoder_ema);
  copy_parameters(*m.discriminator, *trainer.state().discriminator_ema);
  set_requires_grad(*m.generator, false);
  set_requires_grad(*m.encoder, false);
  set_requires_grad(*m.discriminator, false);
  return m;
}

torch::Tensor InferenceModel::style(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  return encoder->forward(images.to(torch::kFloat32));
}

torch::Tensor InferenceModel::translate(const torch::Tensor& inputs, const torch::Tensor& references) {
  torch::NoGradGuard no_grad;
  if (inputs.size(0) != references.size(0)) throw ShapeError("translate: inputs and references must pair up");
  return generator->forward(inputs.to(torch::kFloat32), style(references));
}

// ---------------------------------------------------------------------------

torch::Tensor translation_grid(const torch::Tensor& inputs, const torch::Tensor& references,
                               const torch::Tensor& outputs) {
  const auto n = inputs.size(0);
  const auto m = references.size(0);
  if (outputs.size(0) != n * m) throw ShapeError("translation grid needs inputs x references outputs");
  const auto c = inputs.size(1), h = inputs.size(2), w = inputs.size(3);
  auto canvas = torch::ones({c, (n + 1) * h, (m + 1) * w});
  for (int64_t j = 0; j < m; ++j) canvas.narrow(1, 0, h).narrow(2, (j + 1) * w, w).copy_(references[j]);
  for (int64_t i = 0; i < n; ++i) {
    canvas.narrow(1, (i + 1) * h, h).narrow(2, 0, w).copy_(inputs[i]);
    for (int64_t j = 0; j < m; ++j)
      canvas.narrow(1, (i + 1) * h, h).narrow(2, (j + 1) * w, w).copy_(outputs[i * m + j]);
  }
  return canvas;
}

torch::Tensor image_rows(const std::vector<torch::Tensor>& rows) {
  std::vector<torch::Tensor> stripes;
  for (const auto& row : rows) {
    std::vector<torch::Tensor> tiles;
    for (int64_t k = 0; k < row.size(0); ++k) tiles.push_back(row[k].to(torch::kFloat32));
    stripes.push_back(torch::cat(tiles, 2));
  }
  return torch::cat(stripes, 1);
}

}  // namespace refstyle
