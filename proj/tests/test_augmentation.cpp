#include <doctest.h>

#include "refstyle/augmentation.hpp"
#include "refstyle/error.hpp"
#include "test_util.hpp"

using namespace refstyle;

namespace {

torch::Tensor random_image(int side, uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return at::rand({3, side, side}, gen, torch::kFloat32) * 2 - 1;
}

}  // namespace

TEST_SUITE("augmentation") {
  TEST_CASE("crop boxes respect the scale range and the image bounds") {
    Rng rng(1);
    int min_seen = 1000, max_seen = 0;
    for (int i = 0; i < 2000; ++i) {
      const auto box = sample_crop(128, 0.125, 1.0, rng);
      CHECK(box.side >= 16);
      CHECK(box.side <= 128);
      CHECK(box.top >= 0);
      CHECK(box.left >= 0);
      CHECK(box.top + box.side <= 128);
      CHECK(box.left + box.side <= 128);
      min_seen = std::min(min_seen, box.side);
      max_seen = std::max(max_seen, box.side);
    }
    CHECK(min_seen <= 20);
    CHECK(max_seen >= 124);
    const auto full = sample_crop(64, 1.0, 1.0, rng);
    CHECK(full.side == 64);
    CHECK(full.top == 0);
    // Tiny scales are floored at the minimum crop side.
    CHECK(sample_crop(64, 0.01, 0.01, rng).side == kMinCropSide);
  }

  TEST_CASE("full crop is the identity and crops resize to the requested side") {
    const auto img = random_image(32, 2);
    CHECK(torch::equal(crop_and_resize(img, {0, 0, 32}, 32), img));
    const auto small = crop_and_resize(img, {4, 6, 16}, 32);
    CHECK(small.sizes() == torch::IntArrayRef{3, 32, 32});
    const auto batch = crop_and_resize(img.unsqueeze(0).repeat({2, 1, 1, 1}), {0, 0, 16}, 8);
    CHECK(batch.sizes() == torch::IntArrayRef{2, 3, 8, 8});
  }

  TEST_CASE("augmented views stay in range and keep the shape") {
    const auto img = random_image(32, 3);
    AugmentationPolicy policy;
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
      const auto v = augment(img, policy, rng);
      CHECK(v.sizes() == img.sizes());
      CHECK(v.min().item<float>() >= -1.0f);
      CHECK(v.max().item<float>() <= 1.0f);
    }
    CHECK_THROWS_AS(augment(img.unsqueeze(0), policy, rng), ShapeError);
    CHECK_THROWS_AS(augment(torch::zeros({3, 8, 10}), policy, rng), ShapeError);
  }

  TEST_CASE("a seeded engine makes augmentation reproducible") {
    const auto batch = torch::stack({random_image(32, 5), random_image(32, 6)});
    AugmentationPolicy policy;
    Rng a(99), b(99), c(100);
    const auto va = augment_batch(batch, policy, a);
    const auto vb = augment_batch(batch, policy, b);
    const auto vc = augment_batch(batch, policy, c);
    CHECK(torch::equal(va, vb));
    CHECK_FALSE(torch::equal(va, vc));
  }

  TEST_CASE("identity policy returns the input") {
    const auto img = random_image(16, 7);
    AugmentationPolicy policy;
    policy.crop_scale_min = policy.crop_scale_max = 1.0;
    policy.hflip_prob = 0.0;
    policy.use_affine = false;
    policy.use_color = false;
    Rng rng(8);
    CHECK(torch::equal(augment(img, policy, rng), img));
    policy.hflip_prob = 1.0;
    CHECK(torch::equal(augment(img, policy, rng), img.flip({2})));
  }

  TEST_CASE("grayscale-only distortion yields equal channels") {
    const auto img = random_image(16, 9);
    AugmentationPolicy policy;
    policy.crop_scale_min = policy.crop_scale_max = 1.0;
    policy.hflip_prob = 0.0;
    policy.use_affine = false;
    policy.color_jitter_prob = 0.0;
    policy.grayscale_prob = 1.0;
    Rng rng(10);
    const auto v = augment(img, policy, rng);
    CHECK(torch::allclose(v[0], v[1]));
    CHECK(torch::allclose(v[1], v[2]));
  }

  TEST_CASE("hsv conversion round-trips") {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(11);
    const auto rgb = at::rand({3, 8, 8}, gen, torch::kFloat64);
    const auto back = color::hsv_to_rgb(color::rgb_to_hsv(rgb));
    CHECK((back - rgb).abs().max().item<double>() < 1e-9);
    const auto red = torch::tensor({1.0, 0.0, 0.0}, torch::kFloat64).view({3, 1, 1});
    const auto hsv = color::rgb_to_hsv(red);
    CHECK(hsv[0].item<double>() == 0.0);
    CHECK(hsv[1].item<double>() == 1.0);
    CHECK(hsv[2].item<double>() == 1.0);
    const auto cyan = torch::tensor({0.0, 1.0, 1.0}, torch::kFloat64).view({3, 1, 1});
    CHECK(color::rgb_to_hsv(cyan)[0].item<double>() == doctest::Approx(0.5));
  }

  TEST_CASE("patches are sampled with the requested count and scale") {
    const auto img = random_image(64, 12);
    PatchSpec spec;
    spec.count = 8;
    spec.scale_min = 0.25;
    spec.scale_max = 0.5;
    Rng rng(13);
    const auto patches = sample_patches(img, spec, rng);
    CHECK(patches.size() == 8);
    for (const auto& p : patches) {
      CHECK(p.box.side >= 16);
      CHECK(p.box.side <= 32);
      CHECK(p.image.sizes() == img.sizes());
    }
    const auto batch = sample_patch_batch(torch::stack({img, img, img}), spec, rng);
    CHECK(batch.sizes() == torch::IntArrayRef{24, 3, 64, 64});
    spec.count = 0;
    CHECK_THROWS_AS(sample_patches(img, spec, rng), InvalidArgument);
  }

  TEST_CASE("full-image patch spec reproduces the image") {
    const auto img = random_image(32, 14);
    PatchSpec spec;
    spec.count = 1;
    spec.scale_min = spec.scale_max = 1.0;
    Rng rng(15);
    CHECK(torch::equal(sample_patches(img, spec, rng).front().image, img));
  }
}
