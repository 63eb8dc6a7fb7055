#include <doctest.h>

#include "refstyle/error.hpp"
#include "refstyle/networks.hpp"
#include "test_util.hpp"

using namespace refstyle;

namespace {

/// Trace rows rendered as HxWxC or a flat size.
std::vector<std::pair<std::string, std::string>> as_table(const LayerShapes& trace) {
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& [name, shape] : trace) {
    std::string s;
    if (shape.size() == 4)
      s = std::to_string(shape[2]) + "x" + std::to_string(shape[3]) + "x" + std::to_string(shape[1]);
    else
      s = std::to_string(shape.back());
    rows.emplace_back(name, s);
  }
  return rows;
}

using Table = std::vector<std::pair<std::string, std::string>>;

}  // namespace

TEST_SUITE("networks") {
  TEST_CASE("adain standardizes then applies the affine map") {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(11);
    const auto x = at::randn({1, 2, 4, 4}, gen, torch::kFloat64) * 3.0 + 1.5;
    const auto scale = torch::tensor({{2.0, 3.0}}, torch::kFloat64);
    const auto bias = torch::tensor({{-1.0, 5.0}}, torch::kFloat64);
    const auto y = adain(x, scale, bias);
    const auto mean = y.mean({2, 3});
    const auto std = (y - y.mean({2, 3}, true)).pow(2).mean({2, 3}).sqrt();
    CHECK(mean[0][0].item<double>() == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(mean[0][1].item<double>() == doctest::Approx(5.0).epsilon(1e-9));
    CHECK(std::abs(std[0][0].item<double>() - 2.0) < 1e-4);
    CHECK(std::abs(std[0][1].item<double>() - 3.0) < 1e-4);

    const auto unit = adain(x, torch::ones({1, 2}, torch::kFloat64), torch::zeros({1, 2}, torch::kFloat64));
    CHECK(unit.mean({2, 3}).abs().max().item<double>() < 1e-12);
    const auto z = adain(x, torch::zeros({1, 2}, torch::kFloat64), torch::tensor({{0.25, -4.0}}, torch::kFloat64));
    CHECK(z[0][0].eq(0.25).all().item<bool>());
    CHECK(z[0][1].eq(-4.0).all().item<bool>());
  }

  TEST_CASE("adain absorbs per-instance affine input changes") {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(12);
    const auto x = at::randn({2, 3, 5, 5}, gen, torch::kFloat64);
    const auto s = at::randn({2, 3}, gen, torch::kFloat64);
    const auto b = at::randn({2, 3}, gen, torch::kFloat64);
    const auto y1 = adain(x, s, b, 0.0);
    const auto y2 = adain(2.5 * x - 7.0, s, b, 0.0);
    CHECK((y1 - y2).abs().max().item<double>() < 1e-10);
  }

  TEST_CASE("adain is finite on constant channels and checks shapes") {
    const auto x = torch::full({1, 2, 3, 3}, 4.0, torch::kFloat64).requires_grad_();
    const auto y = adain(x, torch::ones({1, 2}, torch::kFloat64), torch::zeros({1, 2}, torch::kFloat64));
    y.sum().backward();
    CHECK(torch::isfinite(y).all().item<bool>());
    CHECK(torch::isfinite(x.grad()).all().item<bool>());
    CHECK_THROWS_AS(adain(x, torch::ones({1, 3}), torch::zeros({1, 3})), ShapeError);
  }

  TEST_CASE("adain gradients match finite differences") {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(13);
    auto x = at::randn({2, 2, 3, 3}, gen, torch::kFloat64).requires_grad_();
    auto s = at::randn({2, 2}, gen, torch::kFloat64).requires_grad_();
    auto b = at::randn({2, 2}, gen, torch::kFloat64).requires_grad_();
    const auto w = at::randn({2, 2, 3, 3}, gen, torch::kFloat64);
    const double err = testutil::gradient_error([&] { return (adain(x, s, b) * w).sum(); }, {x, s, b});
    CHECK(err < 1e-4);
  }

  TEST_CASE("residual block gradients match finite differences") {
    torch::manual_seed(5);
    struct Case {
      int in, out;
      Resample r;
      Norm n;
    };
    for (const auto& c : {Case{2, 3, Resample::kDown, Norm::kNone}, Case{2, 2, Resample::kNone, Norm::kInstance},
                          Case{3, 2, Resample::kUp, Norm::kAdaptive}}) {
      ResBlock block(c.in, c.out, c.r, c.n, 3, 0.2, 1e-5);
      block->to(torch::kFloat64);
      auto gen = at::make_generator<at::CPUGeneratorImpl>(14);
      auto x = at::randn({2, c.in, 4, 4}, gen, torch::kFloat64).requires_grad_();
      auto style = at::randn({2, 3}, gen, torch::kFloat64).requires_grad_();
      std::vector<torch::Tensor> inputs{x, style};
      for (auto& p : block->parameters()) inputs.push_back(p);
      const auto probe = at::randn(block->forward(x, style).sizes(), gen, torch::kFloat64);
      const double err = testutil::gradient_error([&] { return (block->forward(x, style) * probe).sum(); }, inputs,
                                                  1e-6, 24);
      CHECK(err < 1e-4);
    }
  }

  TEST_CASE("discriminator matches the reference layer table at 128x128") {
    torch::manual_seed(1);
    NetworkSpec spec;
    Discriminator d(spec);
    torch::NoGradGuard no_grad;
    const auto x = torch::rand({2, 3, 128, 128}) * 2 - 1;
    const Table expected = {
        {"image", "128x128x3"},  {"conv1x1", "128x128x64"}, {"resblk", "64x64x128"}, {"resblk", "32x32x256"},
        {"resblk", "16x16x512"}, {"resblk", "8x8x512"},     {"resblk", "4x4x512"},   {"lrelu", "4x4x512"},
        {"conv", "1x1x512"},     {"lrelu", "1x1x512"},      {"reshape", "512"},      {"linear.ct", "256"},
        {"linear.adv", "1"},
    };
    CHECK(as_table(d->layer_shapes(x)) == expected);
    const auto out = d->forward(x);
    CHECK(out.rep.sizes() == torch::IntArrayRef{2, 256});
    CHECK(out.logit.sizes() == torch::IntArrayRef{2, 1});
    CHECK(((out.rep.norm(2, 1) - 1.0).abs().max().item<double>()) < 1e-5);
  }

  TEST_CASE("discriminator branches differ only in the last linear fan-out") {
    NetworkSpec spec;
    Discriminator d(spec);
    const auto ct = count_parameters(*d, "ct_");
    const auto adv = count_parameters(*d, "adv_");
    CHECK(ct - adv == (512 * 256 + 256) - (512 * 1 + 1));
  }

  TEST_CASE("style encoder matches the reference layer table at 128x128") {
    torch::manual_seed(2);
    NetworkSpec spec;
    StyleEncoder e(spec);
    torch::NoGradGuard no_grad;
    const auto x = torch::rand({4, 3, 128, 128}) * 2 - 1;
    const Table expected = {
        {"image", "128x128x3"},  {"conv1x1", "128x128x64"}, {"resblk", "64x64x128"},   {"resblk", "32x32x256"},
        {"resblk", "16x16x512"}, {"resblk", "8x8x512"},     {"resblk", "4x4x512"},     {"lrelu", "4x4x512"},
        {"conv", "1x1x512"},     {"lrelu", "1x1x512"},      {"reshape", "512"},        {"linear.hidden", "512"},
        {"linear", "128"},
    };
    CHECK(as_table(e->layer_shapes(x)) == expected);
    const auto t = e->forward(x);
    CHECK(t.sizes() == torch::IntArrayRef{4, 128});
    CHECK(torch::equal(e->forward(x.narrow(0, 0, 1)), e->forward(x.narrow(0, 0, 1))));
    CHECK(torch::isfinite(e->forward(torch::zeros({1, 3, 128, 128}))).all().item<bool>());
  }

  TEST_CASE("generator matches the reference layer table at 128x128") {
    torch::manual_seed(3);
    NetworkSpec spec;
    Generator g(spec);
    torch::NoGradGuard no_grad;
    const auto x = torch::rand({2, 3, 128, 128}) * 2 - 1;
    const auto t1 = torch::randn({2, 128});
    const auto t2 = torch::randn({2, 128});
    const Table expected = {
        {"image", "128x128x3"},         {"conv1x1", "128x128x64"},      {"resblk.in", "64x64x128"},
        {"resblk.in", "32x32x256"},     {"resblk.in", "16x16x512"},     {"resblk.in", "16x16x512"},
        {"resblk.in", "16x16x512"},     {"resblk.adain", "16x16x512"},  {"resblk.adain", "16x16x512"},
        {"resblk.adain", "32x32x256"},  {"resblk.adain", "64x64x128"},  {"resblk.adain", "128x128x64"},
        {"conv1x1", "128x128x3"},
    };
    CHECK(as_table(g->layer_shapes(x, t1)) == expected);
    const auto y1 = g->forward(x, t1);
    CHECK(y1.sizes() == x.sizes());
    CHECK(y1.abs().max().item<double>() <= 1.0);
    CHECK((y1 - g->forward(x, t2)).abs().mean().item<double>() > 0.0);
    CHECK_THROWS_AS(g->forward(x, torch::randn({2, 64})), ShapeError);
  }

  TEST_CASE("forward shape contract holds at other resolutions") {
    for (int res : {32, 64, 96}) {
      NetworkSpec spec;
      spec.resolution = res;
      spec.base_channels = 8;
      spec.max_channels = 32;
      torch::NoGradGuard no_grad;
      Discriminator d(spec);
      StyleEncoder e(spec);
      Generator g(spec);
      const auto x = torch::rand({3, 3, res, res}) * 2 - 1;
      const auto out = d->forward(x);
      CHECK(out.rep.sizes() == torch::IntArrayRef{3, 256});
      CHECK(out.logit.sizes() == torch::IntArrayRef{3, 1});
      const auto t = e->forward(x);
      CHECK(t.sizes() == torch::IntArrayRef{3, 128});
      CHECK(g->forward(x, t).sizes() == x.sizes());
    }
  }

  TEST_CASE("unsupported resolutions fail at construction") {
    NetworkSpec spec;
    spec.resolution = 100;
    CHECK_THROWS_AS(Discriminator{spec}, ConfigError);
    spec.resolution = 64;
    spec.trunk_blocks = 7;
    CHECK_THROWS_AS(StyleEncoder{spec}, ConfigError);
  }

  TEST_CASE("he initialization gives finite outputs over many seeds") {
    NetworkSpec spec;
    spec.resolution = 32;
    spec.base_channels = 8;
    spec.max_channels = 32;
    spec.style_dim = 16;
    spec.rep_dim = 16;
    torch::NoGradGuard no_grad;
    bool finite = true;
    for (int seed = 0; seed < 100; ++seed) {
      torch::manual_seed(seed);
      Discriminator d(spec);
      StyleEncoder e(spec);
      Generator g(spec);
      const auto x = torch::rand({2, 3, 32, 32}) * 2 - 1;
      const auto out = d->forward(x);
      const auto y = g->forward(x, e->forward(x));
      finite = finite && torch::isfinite(out.rep).all().item<bool>() && torch::isfinite(out.logit).all().item<bool>() &&
               torch::isfinite(y).all().item<bool>();
    }
    CHECK(finite);
  }

  TEST_CASE("he initialization statistics") {
    torch::manual_seed(4);
    NetworkSpec spec;
    Discriminator d(spec);
    for (const auto& p : d->named_parameters()) {
      if (p.key().ends_with("bias")) {
        CHECK(p.value().abs().max().item<double>() == 0.0);
      }
    }
    // 3x3 conv, 256 in, 512 out: std should be sqrt(2 / (256 * 9)).
    const auto w = d->named_parameters()["blocks.3.conv1.weight"];
    const double expected = std::sqrt(2.0 / (w.size(1) * 9.0));
    CHECK(w.std().item<double>() == doctest::Approx(expected).epsilon(0.02));
  }

  TEST_CASE("ema update closed forms") {
    std::vector<torch::Tensor> shadow{torch::zeros({3}, torch::kFloat64)};
    const std::vector<torch::Tensor> live{torch::ones({3}, torch::kFloat64)};
    for (int i = 0; i < 100; ++i) ema_update(shadow, live, 0.999);
    CHECK(std::abs(shadow[0][0].item<double>() - (1.0 - std::pow(0.999, 100))) < 1e-10);
    CHECK(std::abs(shadow[0][0].item<double>() - 0.0952) < 1e-4);

    auto gen = at::make_generator<at::CPUGeneratorImpl>(15);
    std::vector<torch::Tensor> s0{at::randn({4}, gen, torch::kFloat64)};
    const std::vector<torch::Tensor> l0{at::randn({4}, gen, torch::kFloat64)};
    auto s = std::vector<torch::Tensor>{s0[0].clone()};
    ema_update(s, l0, 0.0);
    CHECK(torch::equal(s[0], l0[0]));
    s = {s0[0].clone()};
    ema_update(s, l0, 1.0);
    CHECK(torch::equal(s[0], s0[0]));
    std::vector<torch::Tensor> wrong{torch::zeros({5}, torch::kFloat64)};
    CHECK_THROWS_AS(ema_update(wrong, l0, 0.5), ShapeError);
  }

  TEST_CASE("module ema and parameter copies") {
    NetworkSpec spec;
    spec.resolution = 8;
    spec.trunk_blocks = 2;
    spec.base_channels = 4;
    spec.max_channels = 8;
    spec.gen_down_blocks = 1;
    torch::manual_seed(6);
    Generator a(spec), b(spec);
    copy_parameters(*b, *a);
    for (const auto& p : a->named_parameters()) CHECK(torch::equal(p.value(), b->named_parameters()[p.key()]));
    torch::manual_seed(7);
    Generator c(spec);
    ema_update(*b, *c, 0.25);
    for (const auto& p : b->named_parameters()) {
      const auto expected = 0.25 * a->named_parameters()[p.key()] + 0.75 * c->named_parameters()[p.key()];
      CHECK((p.value() - expected).abs().max().item<double>() < 1e-6);
    }
    spec.base_channels = 2;
    Generator other(spec);
    CHECK_THROWS_AS(ema_update(*b, *other, 0.5), ShapeError);
  }
}
