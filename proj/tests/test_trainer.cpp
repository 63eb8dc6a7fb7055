#include <doctest.h>

#include <fstream>
#include <sstream>

#include "refstyle/error.hpp"
#include "refstyle/trainer.hpp"
#include "test_util.hpp"

using namespace refstyle;

namespace {

std::vector<torch::Tensor> params_of(const torch::nn::Module& m) { return m.parameters(); }

void fill_dictionary(NegativeDictionary& dict, uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  dict.enqueue(testutil::unit_rows(dict.capacity(), dict.dim(), gen).to(dict.entries().scalar_type()));
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void run_steps(Trainer& trainer, const ImageCollection& data, int64_t until) {
  const BatchSampler sampler(data.size(), trainer.config().train.batch_size, trainer.config().train.seed);
  while (trainer.state().step < until) trainer.train_step(data.gather(sampler.indices_for_step(trainer.state().step)));
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("discriminator objective gradient matches finite differences") {
    auto cfg = testutil::miniature_config(11);
    Trainer trainer(cfg, torch::kFloat64);
    fill_dictionary(*trainer.state().dictionary, 5);
    const auto data = make_synthetic(cfg.synthetic).images;
    const auto batch = data.gather({0, 1, 2, 3}).to(torch::kFloat64);
    REQUIRE(is_r1_step(trainer.state().step, cfg.train.loss_weights.r1_interval));
    const Rng base = trainer.step_rng(0);
    set_requires_grad(*trainer.state().generator, false);
    set_requires_grad(*trainer.state().encoder, false);
    const auto f = [&] {
      Rng rng = base;
      auto phase = trainer.discriminator_objective(batch, rng);
      CHECK(phase.ct_active);
      CHECK(phase.parts.r1.defined());
      return phase.total;
    };
    CHECK(testutil::gradient_error(f, params_of(*trainer.state().discriminator), 1e-6, 12) < 1e-4);
  }

  TEST_CASE("generator objective gradient matches finite differences") {
    auto cfg = testutil::miniature_config(12);
    Trainer trainer(cfg, torch::kFloat64);
    fill_dictionary(*trainer.state().dictionary, 6);
    const auto data = make_synthetic(cfg.synthetic).images;
    const auto batch = data.gather({4, 5, 6, 7}).to(torch::kFloat64);
    const Rng base = trainer.step_rng(0);
    set_requires_grad(*trainer.state().discriminator, false);
    const auto f = [&] {
      Rng rng = base;
      auto phase = trainer.generator_objective(batch, rng);
      CHECK(phase.ct_active);
      return phase.total;
    };
    auto inputs = params_of(*trainer.state().generator);
    for (const auto& p : params_of(*trainer.state().encoder)) inputs.push_back(p);
    CHECK(testutil::gradient_error(f, inputs, 1e-6, 12) < 1e-4);
  }

  TEST_CASE("each phase leaves the frozen networks without gradient") {
    auto cfg = testutil::miniature_config(13);
    cfg.train.contrastive.queue_capacity = 4;  // warm after one step
    Trainer trainer(cfg);
    const auto data = make_synthetic(cfg.synthetic).images;
    int d_calls = 0, g_calls = 0;
    bool d_ok = true, g_ok = true;
    trainer.hooks.after_d_backward = [&](const TrainState& s) {
      ++d_calls;
      d_ok = d_ok && testutil::grads_are_zero(*s.generator) && testutil::grads_are_zero(*s.encoder) &&
             testutil::grads_are_zero(*s.key_encoder) && !testutil::grads_are_zero(*s.discriminator) &&
             !s.dictionary->entries().requires_grad();
    };
    trainer.hooks.after_ge_backward = [&](const TrainState& s) {
      ++g_calls;
      g_ok = g_ok && testutil::grads_are_zero(*s.discriminator) && testutil::grads_are_zero(*s.key_encoder) &&
             !testutil::grads_are_zero(*s.generator) && !testutil::grads_are_zero(*s.encoder) &&
             !s.dictionary->entries().requires_grad();
    };
    run_steps(trainer, data, 3);
    CHECK(d_calls == 3);
    CHECK(g_calls == 3);
    CHECK(d_ok);
    CHECK(g_ok);
  }

  TEST_CASE("ema shadows start equal to the live networks") {
    Trainer trainer(testutil::miniature_config(14));
    const auto& s = trainer.state();
    const auto live = params_of(*s.generator);
    const auto shadow = params_of(*s.generator_ema);
    for (size_t i = 0; i < live.size(); ++i) CHECK(torch::equal(live[i], shadow[i]));
    const auto d = params_of(*s.discriminator);
    const auto k = params_of(*s.key_encoder);
    for (size_t i = 0; i < d.size(); ++i) CHECK(torch::equal(d[i], k[i]));
  }

  TEST_CASE("loss report and contrastive warm-up") {
    auto cfg = testutil::miniature_config(15);
    cfg.train.contrastive.queue_capacity = 8;
    Trainer trainer(cfg);
    const auto data = make_synthetic(cfg.synthetic).images;
    const BatchSampler sampler(data.size(), 4, cfg.train.seed);
    const auto r0 = trainer.train_step(data.gather(sampler.indices_for_step(0)));
    CHECK(r0.step == 0);
    CHECK(r0.r1.has_value());
    CHECK_FALSE(r0.ct_active);
    for (double v : {r0.adv_d, r0.adv_g, r0.ct_d, r0.ct_g, r0.cyc, *r0.r1}) CHECK(std::isfinite(v));
    const auto r1 = trainer.train_step(data.gather(sampler.indices_for_step(1)));
    CHECK_FALSE(r1.r1.has_value());
    const auto r2 = trainer.train_step(data.gather(sampler.indices_for_step(2)));
    CHECK(r2.ct_active);  // 8 keys enqueued after two steps
    CHECK(trainer.state().step == 3);
    CHECK(loss_csv_row(r1).ends_with(","));
  }

  TEST_CASE("bad batches are rejected") {
    auto cfg = testutil::miniature_config(16);
    Trainer trainer(cfg);
    CHECK_THROWS_AS(trainer.train_step(torch::zeros({2, 3, 8, 8})), ShapeError);
    CHECK_THROWS_AS(trainer.train_step(torch::zeros({4, 3, 16, 16})), ShapeError);
    auto nan_batch = torch::zeros({4, 3, 8, 8});
    nan_batch[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
    try {
      trainer.train_step(nan_batch);
      FAIL("expected a NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
    CHECK_THROWS_AS(Trainer(cfg, torch::kInt64), InvalidArgument);
  }

  TEST_CASE("seeded runs produce identical loss logs") {
    auto cfg = testutil::miniature_config(17);
    cfg.train.total_iters = 100;
    const auto data = make_synthetic(cfg.synthetic).images;
    const auto a = testutil::scratch_dir("det_a");
    const auto b = testutil::scratch_dir("det_b");
    Trainer(cfg).fit(data, a);
    Trainer(cfg).fit(data, b);
    const auto log_a = read_file(a / "logs" / "losses.csv");
    CHECK(log_a == read_file(b / "logs" / "losses.csv"));
    CHECK(log_a.starts_with(std::string(kLossCsvHeader) + "\n"));
    CHECK(std::count(log_a.begin(), log_a.end(), '\n') == 101);
    cfg.train.seed = 18;
    const auto c = testutil::scratch_dir("det_c");
    Trainer(cfg).fit(data, c);
    CHECK(read_file(c / "logs" / "losses.csv") != log_a);
  }

  TEST_CASE("resuming from a checkpoint matches the uninterrupted run bit for bit") {
    auto cfg = testutil::miniature_config(19);
    const auto data = make_synthetic(cfg.synthetic).images;
    const auto dir = testutil::scratch_dir("resume");
    Trainer straight(cfg);
    run_steps(straight, data, 50);
    straight.save_checkpoint(dir / "step50.bin");
    run_steps(straight, data, 60);

    auto resumed = Trainer::from_checkpoint(dir / "step50.bin");
    CHECK(resumed->state().step == 50);
    run_steps(*resumed, data, 60);
    CHECK(resumed->to_archive().to_bytes() == straight.to_archive().to_bytes());
  }

  TEST_CASE("checkpoint save, load, save is byte-identical") {
    auto cfg = testutil::miniature_config(20);
    const auto data = make_synthetic(cfg.synthetic).images;
    Trainer trainer(cfg);
    run_steps(trainer, data, 5);
    const auto dir = testutil::scratch_dir("ckpt_trainer");
    trainer.save_checkpoint(dir / "a.bin");
    Trainer::from_checkpoint(dir / "a.bin")->save_checkpoint(dir / "b.bin");
    CHECK(read_file(dir / "a.bin") == read_file(dir / "b.bin"));

    const auto model = InferenceModel::load(dir / "a.bin");
    CHECK(model.config == cfg);
    auto copy = InferenceModel::from_trainer(trainer);
    const auto x = data.gather({0, 1});
    CHECK(torch::equal(copy.translate(x, x.flip({0})), InferenceModel::load(dir / "a.bin").translate(x, x.flip({0}))));
  }

  TEST_CASE("fit writes the run layout and echoes the config") {
    auto cfg = testutil::miniature_config(21);
    cfg.train.total_iters = 4;
    cfg.train.sample_every = 2;
    cfg.train.checkpoint_every = 3;
    const auto data = make_synthetic(cfg.synthetic).images;
    const auto dir = testutil::scratch_dir("layout");
    Trainer(cfg).fit(data, dir);
    for (const char* sub : {"checkpoints", "samples", "metrics", "logs"}) CHECK(std::filesystem::is_directory(dir / sub));
    CHECK(parse_config(dir / "config.cfg") == cfg);
    CHECK(std::filesystem::exists(dir / "samples" / "step_0000002.png"));
    CHECK(std::filesystem::exists(dir / "samples" / "step_0000004.png"));
    CHECK(std::filesystem::exists(dir / "checkpoints" / "ckpt_0000003.bin"));
    CHECK(std::filesystem::exists(dir / "checkpoints" / "ckpt_0000004.bin"));

    SyntheticStyleSpec other = cfg.synthetic;
    other.resolution = 16;
    CHECK_THROWS_AS(Trainer(cfg).fit(make_synthetic(other).images, {}), ShapeError);
  }

  TEST_CASE("every ablation configuration trains one step") {
    const std::vector<std::string> rows = {
        "augment.use_affine = false\n",
        "",
        "augment.crop_scale_min = 0.5\n",
        "augment.crop_scale_min = 0.9\n",
        "contrastive.patches = 1\n",
        "contrastive.patches = 8\n",
        "contrastive.patches = 1\ncontrastive.patch_scale_min = 1\n",
    };
    const auto base = serialize_config(testutil::miniature_config(22));
    for (const auto& row : rows) {
      const auto cfg = parse_config_text(base + row);
      Trainer trainer(cfg);
      const auto data = make_synthetic(cfg.synthetic).images;
      const auto report = trainer.train_step(data.gather({0, 1, 2, 3}));
      CHECK(std::isfinite(report.ct_g));
      CHECK(std::isfinite(report.adv_d));
    }
  }

  TEST_CASE("step engines depend only on seed and step") {
    Trainer a(testutil::miniature_config(23)), b(testutil::miniature_config(23));
    auto r1 = a.step_rng(7);
    auto r2 = b.step_rng(7);
    auto r3 = a.step_rng(8);
    const auto v = r1();
    CHECK(v == r2());
    CHECK(v != r3());
  }
}
