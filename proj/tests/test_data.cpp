#include <doctest.h>

#include <fstream>
#include <set>

#include "refstyle/data.hpp"
#include "refstyle/error.hpp"
#include "refstyle/evaluation.hpp"
#include "test_util.hpp"

using namespace refstyle;

namespace {

SyntheticStyleSpec small_synthetic(uint64_t seed = 1) {
  SyntheticStyleSpec spec;
  spec.num_images = 40;
  spec.resolution = 32;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("synthetic data is deterministic per seed and balanced") {
    const auto a = make_synthetic(small_synthetic(1));
    const auto b = make_synthetic(small_synthetic(1));
    const auto c = make_synthetic(small_synthetic(2));
    CHECK(torch::equal(a.images.pixels(), b.images.pixels()));
    CHECK_FALSE(torch::equal(a.images.pixels(), c.images.pixels()));
    CHECK(a.images.size() == 40);
    CHECK(a.images.resolution() == 32);
    int64_t ones = 0;
    for (auto l : a.images.labels.classes) ones += l;
    CHECK(ones == 20);
    CHECK(a.images.labels.class_names.size() == 2);
    CHECK(std::set<int64_t>(a.shapes.begin(), a.shapes.end()).size() == 3);
    const auto all = a.images.all();
    CHECK(all.min().item<float>() >= -1.0f);
    CHECK(all.max().item<float>() <= 1.0f);
  }

  TEST_CASE("foreground mask recovers the generated shape") {
    const auto data = make_synthetic(small_synthetic(3));
    double total = 0.0;
    for (int64_t i = 0; i < data.images.size(); ++i)
      total += mask_iou(data.masks[i], foreground_mask(data.images.image(i)));
    CHECK(total / static_cast<double>(data.images.size()) > 0.9);
    CHECK_THROWS_AS(foreground_mask(torch::zeros({1, 3, 4, 4})), ShapeError);
  }

  TEST_CASE("mask iou") {
    auto a = torch::zeros({4, 4}, torch::kBool);
    auto b = torch::zeros({4, 4}, torch::kBool);
    CHECK(mask_iou(a, b) == 1.0);
    a.narrow(0, 0, 2).fill_(true);
    b.narrow(0, 1, 2).fill_(true);
    CHECK(mask_iou(a, b) == doctest::Approx(4.0 / 12.0));
    CHECK_THROWS_AS(mask_iou(a, torch::zeros({3, 4}, torch::kBool)), ShapeError);
  }

  TEST_CASE("a mean-colour classifier separates the synthetic styles") {
    const auto data = make_synthetic(small_synthetic(4));
    MeanColorOracle oracle(data.images.all(), data.images.labels.classes);
    const auto pred = oracle.predict(data.images.all());
    int64_t correct = 0;
    for (int64_t i = 0; i < data.images.size(); ++i)
      correct += pred[static_cast<size_t>(i)] == data.images.labels.classes[static_cast<size_t>(i)];
    CHECK(correct == data.images.size());
  }

  TEST_CASE("png round-trip preserves pixels") {
    const auto dir = testutil::scratch_dir("png");
    const auto data = make_synthetic(small_synthetic(5));
    const auto img = data.images.image(0);
    write_image(dir / "a.png", img);
    const auto back = read_image_rgb8(dir / "a.png");
    CHECK(torch::equal(back, data.images.pixels()[0]));
    CHECK(torch::equal(to_model_range(back), img));
    CHECK(torch::equal(to_uint8_hwc(img), back));
    CHECK_THROWS_AS(read_image_rgb8(dir / "missing.png"), IoError);
  }

  TEST_CASE("preprocessing center-crops and resizes") {
    const auto img = torch::zeros({20, 40, 3}, torch::kUInt8);
    CHECK(preprocess_rgb8(img, 0, 16).sizes() == torch::IntArrayRef{16, 16, 3});
    CHECK(preprocess_rgb8(img, 10, 8).sizes() == torch::IntArrayRef{8, 8, 3});
    const auto same = torch::randint(0, 255, {8, 8, 3}, torch::kUInt8);
    CHECK(torch::equal(preprocess_rgb8(same, 0, 8), same));
  }

  TEST_CASE("folder datasets use class subdirectories and skip unreadable files") {
    const auto dir = testutil::scratch_dir("folder");
    const auto data = make_synthetic(small_synthetic(6));
    std::filesystem::create_directories(dir / "cat");
    std::filesystem::create_directories(dir / "dog");
    write_image(dir / "cat" / "0.png", data.images.image(0));
    write_image(dir / "cat" / "1.png", data.images.image(1));
    write_image(dir / "dog" / "2.png", data.images.image(2));
    std::ofstream(dir / "dog" / "broken.png") << "not an image";
    std::ofstream(dir / "notes.txt") << "ignored";
    DatasetSpec spec;
    spec.root = dir.string();
    spec.resolution = 16;
    const auto coll = load_dataset(spec);
    CHECK(coll.size() == 3);
    CHECK(coll.skipped_files == 1);
    CHECK(coll.resolution() == 16);
    CHECK(coll.names() == std::vector<std::string>{"cat/0.png", "cat/1.png", "dog/2.png"});
    CHECK(coll.labels.class_names == std::vector<std::string>{"cat", "dog"});
    CHECK(coll.labels.classes == std::vector<int64_t>{0, 0, 1});

    spec.root = (dir / "nope").string();
    CHECK_THROWS_AS(load_dataset(spec), IoError);
    const auto empty = testutil::scratch_dir("folder_empty");
    spec.root = empty.string();
    CHECK_THROWS_AS(load_dataset(spec), IoError);
  }

  TEST_CASE("label files provide classes or attributes") {
    const auto dir = testutil::scratch_dir("labels");
    const auto data = make_synthetic(small_synthetic(7));
    for (int i = 0; i < 3; ++i) write_image(dir / (std::to_string(i) + ".png"), data.images.image(i));
    std::ofstream(dir / "classes.csv") << "file,label\n0.png,1\n1.png,0\n";
    std::ofstream(dir / "attrs.csv") << "file,Smiling,Male\n0.png,1,0\n1.png,0,0\n2.png,1,1\n";
    std::ofstream(dir / "bad.csv") << "file,a,b\n0.png,1\n";

    auto coll = load_image_dir(dir, 32);
    attach_label_file(coll, dir / "classes.csv");
    CHECK(coll.labels.classes == std::vector<int64_t>{1, 0, -1});
    attach_label_file(coll, dir / "attrs.csv");
    CHECK(coll.labels.attribute_names == std::vector<std::string>{"Smiling", "Male"});
    CHECK(torch::equal(coll.labels.attributes, torch::tensor({1.f, 0.f, 0.f, 0.f, 1.f, 1.f}).view({3, 2})));
    CHECK_THROWS_AS(attach_label_file(coll, dir / "bad.csv"), IoError);
    CHECK_THROWS_AS(attach_label_file(coll, dir / "none.csv"), IoError);
  }

  TEST_CASE("write_collection writes images and labels") {
    const auto dir = testutil::scratch_dir("collection");
    const auto data = make_synthetic(small_synthetic(8));
    write_collection(data.images, dir);
    auto back = load_image_dir(dir, 32);
    CHECK(torch::equal(back.pixels(), data.images.pixels()));
    attach_label_file(back, dir / "labels.csv");
    CHECK(back.labels.classes == data.images.labels.classes);
  }

  TEST_CASE("batch sampler serves each index once per epoch") {
    BatchSampler sampler(10, 3, 11);
    CHECK(sampler.batches_per_epoch() == 3);
    for (int64_t epoch = 0; epoch < 3; ++epoch) {
      auto perm = sampler.epoch_permutation(epoch);
      std::sort(perm.begin(), perm.end());
      for (int64_t i = 0; i < 10; ++i) CHECK(perm[static_cast<size_t>(i)] == i);
    }
    std::set<int64_t> seen;
    for (int64_t step = 0; step < 3; ++step)
      for (auto i : sampler.indices_for_step(step)) CHECK(seen.insert(i).second);
    CHECK(sampler.indices_for_step(4) == BatchSampler(10, 3, 11).indices_for_step(4));
    CHECK(sampler.epoch_permutation(0) != sampler.epoch_permutation(1));
    CHECK_THROWS_AS(BatchSampler(2, 3, 1), InvalidArgument);
  }

  TEST_CASE("image collection rejects bad inputs") {
    CHECK_THROWS_AS(ImageCollection(torch::zeros({2, 4, 4, 3}), {"a", "b"}), ShapeError);
    CHECK_THROWS_AS(ImageCollection(torch::zeros({2, 4, 4, 3}, torch::kUInt8), {"a"}), ShapeError);
    const ImageCollection coll(torch::zeros({2, 4, 4, 3}, torch::kUInt8), {"a", "b"});
    CHECK_THROWS_AS(coll.image(2), InvalidArgument);
    CHECK(coll.gather({1, 0, 1}).sizes() == torch::IntArrayRef{3, 3, 4, 4});
  }
}
