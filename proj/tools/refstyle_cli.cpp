// Command line driver over the C API.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "refstyle/refstyle.h"

namespace fs = std::filesystem;

namespace {

constexpr int kUsageExit = 2;

struct Failure {
  rs_status status;
};

void check(rs_status s) {
  if (s != RS_OK) throw Failure{s};
}

int exit_code(rs_status s) { return 10 + static_cast<int>(s); }

struct Globals {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

class Config {
 public:
  explicit Config(const Globals& g) {
    check(g.config.empty() ? rs_config_default(&cfg_) : rs_config_load(g.config.c_str(), &cfg_));
    for (const auto& o : g.overrides) check(rs_config_override(cfg_, o.c_str()));
  }
  ~Config() { rs_config_free(cfg_); }
  Config(const Config&) = delete;
  Config& operator=(const Config&) = delete;

  void set(const std::string& key, const std::string& value) { check(rs_config_set(cfg_, key.c_str(), value.c_str())); }
  std::string get(const std::string& key) const {
    size_t needed = 0;
    check(rs_config_get(cfg_, key.c_str(), nullptr, 0, &needed));
    std::string out(needed, '\0');
    check(rs_config_get(cfg_, key.c_str(), out.data(), out.size(), &needed));
    out.resize(needed - 1);
    return out;
  }
  rs_config* get() const { return cfg_; }

 private:
  rs_config* cfg_ = nullptr;
};

struct Model {
  explicit Model(const std::string& ckpt) { check(rs_model_load(ckpt.c_str(), &m)); }
  ~Model() { rs_model_free(m); }
  rs_model* m = nullptr;
};

// Runs a text-producing call, repeating it only when the first buffer was too small.
template <typename Fn>
std::string text_result(Fn&& call) {
  std::string buf(1 << 16, '\0');
  size_t needed = 0;
  check(call(buf.data(), buf.size(), &needed));
  if (needed > buf.size()) {
    buf.assign(needed, '\0');
    check(call(buf.data(), buf.size(), &needed));
  }
  buf.resize(needed - 1);
  return buf;
}

std::string out_dir(const Globals& g, const Config& cfg) { return g.out.empty() ? cfg.get("out_dir") : g.out; }

int run_train(const Globals& g, const std::string& resume) {
  rs_trainer* trainer = nullptr;
  if (!resume.empty()) {
    check(rs_trainer_resume(resume.c_str(), &trainer));
  } else {
    Config cfg(g);
    if (g.seed) cfg.set("train.seed", std::to_string(*g.seed));
    if (!g.out.empty()) cfg.set("out_dir", g.out);
    check(rs_trainer_create(cfg.get(), &trainer));
  }
  std::string dir = g.out;
  rs_config* run_cfg = nullptr;
  auto s = rs_trainer_config(trainer, &run_cfg);
  if (s == RS_OK && dir.empty()) {
    char buf[4096];
    s = rs_config_get(run_cfg, "out_dir", buf, sizeof(buf), nullptr);
    dir = buf;
  }
  rs_config_free(run_cfg);
  if (s == RS_OK) s = rs_trainer_fit(trainer, dir.c_str());
  int64_t step = 0;
  rs_trainer_get_step(trainer, &step);
  rs_trainer_free(trainer);
  check(s);
  std::cout << "trained to step " << step << "; outputs in " << dir << "\n";
  return 0;
}

int run_make_synthetic(const Globals& g) {
  Config cfg(g);
  if (g.seed) cfg.set("synthetic.seed", std::to_string(*g.seed));
  const auto dir = out_dir(g, cfg);
  int64_t count = 0;
  check(rs_make_synthetic(cfg.get(), dir.c_str(), &count));
  std::cout << "wrote " << count << " images and labels.csv to " << dir << "\n";
  return 0;
}

int run_translate(const Globals& g, const std::string& ckpt, const std::string& inputs, const std::string& refs) {
  Config cfg(g);
  Model model(ckpt);
  const auto dir = out_dir(g, cfg);
  int64_t count = 0;
  check(rs_translate_dirs(model.m, inputs.c_str(), refs.c_str(), dir.c_str(), &count));
  std::cout << "wrote " << count << " outputs and grid.png to " << dir << "\n";
  return 0;
}

int run_interpolate(const Globals& g, const std::string& ckpt, const std::string& input, const std::string& ref,
                    int steps) {
  Config cfg(g);
  Model model(ckpt);
  if (steps <= 0) steps = std::stoi(cfg.get("eval.interpolation_steps"));
  const auto path = (fs::path(out_dir(g, cfg)) / "interpolation.png").string();
  check(rs_interpolate(model.m, input.c_str(), ref.c_str(), steps, path.c_str()));
  std::cout << "wrote " << path << "\n";
  return 0;
}

int run_search(const Globals& g, const std::string& ckpt, const std::string& query, const std::string& corpus, int k) {
  Config cfg(g);
  Model model(ckpt);
  if (k <= 0) k = std::stoi(cfg.get("eval.search_k"));
  const fs::path dir = out_dir(g, cfg);
  fs::create_directories(dir);
  const auto grid = (dir / "search.png").string();
  const auto listing = text_result([&](char* buf, size_t cap, size_t* needed) {
    return rs_search(model.m, query.c_str(), corpus.c_str(), k, grid.c_str(), buf, cap, needed);
  });
  if (FILE* f = std::fopen((dir / "search.csv").string().c_str(), "w")) {
    std::fputs(listing.c_str(), f);
    std::fclose(f);
  }
  std::cout << listing;
  return 0;
}

int run_evaluate(const Globals& g, const std::string& ckpt, const std::string& labels, const std::string& test_root) {
  Config cfg(g);
  if (g.seed) cfg.set("eval.seed", std::to_string(*g.seed));
  if (!labels.empty()) cfg.set("eval.label_file", labels);
  if (!test_root.empty()) cfg.set("eval.test_root", test_root);
  Model model(ckpt);
  const auto dir = out_dir(g, cfg);
  const auto report = text_result([&](char* buf, size_t cap, size_t* needed) {
    return rs_evaluate(model.m, cfg.get(), dir.c_str(), buf, cap, needed);
  });
  std::cout << report;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference-guided image translation with contrastive style learning"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "Run configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for the command's random draws");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--set", g.overrides, "Override a config key (key=value), repeatable");

  auto* train = app.add_subcommand("train", "Train a model");
  std::string resume;
  train->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

  std::string ckpt, inputs, refs, input, ref, query, corpus, labels, test_root;
  int steps = 0, k = 0;

  auto* translate = app.add_subcommand("translate", "Translate every input with every reference");
  translate->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  translate->add_option("--inputs", inputs, "Directory of input images")->required()->check(CLI::ExistingDirectory);
  translate->add_option("--refs", refs, "Directory of reference images")->required()->check(CLI::ExistingDirectory);

  auto* interpolate = app.add_subcommand("interpolate", "Interpolate style codes between an input and a reference");
  interpolate->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  interpolate->add_option("--input", input)->required()->check(CLI::ExistingFile);
  interpolate->add_option("--ref", ref)->required()->check(CLI::ExistingFile);
  interpolate->add_option("--steps", steps, "Frames including both endpoints");

  auto* search = app.add_subcommand("search", "Nearest corpus images in style space");
  search->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  search->add_option("--query", query)->required()->check(CLI::ExistingFile);
  search->add_option("--corpus", corpus)->required()->check(CLI::ExistingDirectory);
  search->add_option("--k", k, "Number of results");

  auto* evaluate = app.add_subcommand("evaluate", "FID, mFID and translation accuracy on a test set");
  evaluate->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--labels", labels, "Label CSV for the test images")->check(CLI::ExistingFile);
  evaluate->add_option("--test-root", test_root, "Test image directory")->check(CLI::ExistingDirectory);

  auto* synth = app.add_subcommand("make-synthetic", "Write the synthetic style dataset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kUsageExit;
  }

  try {
    if (*train) return run_train(g, resume);
    if (*translate) return run_translate(g, ckpt, inputs, refs);
    if (*interpolate) return run_interpolate(g, ckpt, input, ref, steps);
    if (*search) return run_search(g, ckpt, query, corpus, k);
    if (*evaluate) return run_evaluate(g, ckpt, labels, test_root);
    if (*synth) return run_make_synthetic(g);
  } catch (const Failure& f) {
    std::cerr << "error [" << rs_status_name(f.status) << "]: " << rs_last_error() << "\n";
    return exit_code(f.status);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(RS_ERR_INTERNAL);
  }
  return kUsageExit;
}
