#include <doctest.h>

#include <fstream>

#include "refstyle/checkpoint.hpp"
#include "refstyle/error.hpp"
#include "refstyle/networks.hpp"
#include "test_util.hpp"

using namespace refstyle;

namespace {

Archive sample_archive() {
  Archive a;
  a.put("weights", torch::arange(6, torch::kFloat32).view({2, 3}));
  a.put("double", torch::tensor({0.1, 0.2}, torch::kFloat64));
  a.put("ints", torch::tensor({int64_t{-3}, int64_t{7}}));
  a.put("scalar", torch::tensor(2.5f));
  a.put("step", int64_t{42});
  a.put("config", std::string("train.lr = 0.001\n"));
  return a;
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("archives round-trip byte-identically") {
    const auto a = sample_archive();
    const auto bytes = a.to_bytes();
    const auto b = Archive::from_bytes(bytes);
    CHECK(b.to_bytes() == bytes);
    CHECK(b.names() == a.names());
    CHECK(torch::equal(b.tensor("weights"), a.tensor("weights")));
    CHECK((b.tensor("double").scalar_type() == torch::kFloat64));
    CHECK(b.tensor("scalar").dim() == 0);
    CHECK(b.integer("step") == 42);
    CHECK(b.string("config") == "train.lr = 0.001\n");
  }

  TEST_CASE("lookup errors") {
    const auto a = sample_archive();
    CHECK_THROWS_AS(a.tensor("missing"), StateError);
    CHECK_THROWS_AS(a.tensor("step"), StateError);
    CHECK_THROWS_AS(a.integer("config"), StateError);
    CHECK_THROWS_AS(a.string("weights"), StateError);
    Archive dup;
    dup.put("x", int64_t{1});
    CHECK_THROWS_AS(dup.put("x", int64_t{2}), InvalidArgument);
  }

  TEST_CASE("corrupt archives are rejected") {
    const auto bytes = sample_archive().to_bytes();
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(Archive::from_bytes(bad_magic), IoError);
    CHECK_THROWS_AS(Archive::from_bytes(bytes.substr(0, bytes.size() - 3)), IoError);
    CHECK_THROWS_AS(Archive::from_bytes(bytes.substr(0, 4)), IoError);
    CHECK_THROWS_AS(Archive::from_bytes(bytes + "x"), IoError);
    auto wrong_version = bytes;
    wrong_version[8] = static_cast<char>(kCheckpointFormatVersion + 1);
    CHECK_THROWS_AS(Archive::from_bytes(wrong_version), IoError);
  }

  TEST_CASE("files save and load") {
    const auto dir = testutil::scratch_dir("ckpt");
    const auto a = sample_archive();
    a.save(dir / "a.ckpt");
    CHECK(Archive::load(dir / "a.ckpt").to_bytes() == a.to_bytes());
    CHECK_THROWS_AS(Archive::load(dir / "missing.ckpt"), IoError);
  }

  TEST_CASE("modules and optimizers round-trip through archives") {
    torch::manual_seed(3);
    const auto spec = testutil::miniature_config().effective_network();
    Discriminator a(spec), b(spec);
    torch::optim::Adam opt_a(a->parameters(), torch::optim::AdamOptions(1e-3));
    auto loss = a->forward(torch::randn({2, 3, 8, 8})).logit.sum();
    loss.backward();
    opt_a.step();

    Archive archive;
    put_module(archive, "d", *a);
    put_adam(archive, "opt", opt_a, *a);
    load_module(archive, "d", *b);
    torch::optim::Adam opt_b(b->parameters(), torch::optim::AdamOptions(1e-3));
    load_adam(archive, "opt", opt_b, *b);
    const auto pa = a->parameters();
    const auto pb = b->parameters();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(torch::equal(pa[i], pb[i]));

    Archive again;
    put_module(again, "d", *b);
    put_adam(again, "opt", opt_b, *b);
    CHECK(again.to_bytes() == archive.to_bytes());

    auto other = spec;
    other.base_channels = 2;
    Discriminator c(other);
    CHECK_THROWS_AS(load_module(archive, "d", *c), StateError);
    CHECK_THROWS_AS(load_module(archive, "missing", *c), StateError);
  }
}
