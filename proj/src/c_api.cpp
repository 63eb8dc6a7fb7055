#include "refstyle/refstyle.h"

#include <cstring>
#include <fstream>
#include <sstream>

#include "refstyle/config.hpp"
#include "refstyle/data.hpp"
#include "refstyle/error.hpp"
#include "refstyle/evaluation.hpp"
#include "refstyle/trainer.hpp"

namespace fs = std::filesystem;
using namespace refstyle;

struct rs_config {
  RunConfig value;
};

struct rs_trainer {
  std::unique_ptr<Trainer> trainer;
};

struct rs_model {
  InferenceModel model;
};

namespace {

thread_local std::string g_last_error;

rs_status status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return RS_ERR_INVALID_ARGUMENT;
    case ErrorKind::kConfig: return RS_ERR_CONFIG;
    case ErrorKind::kIo: return RS_ERR_IO;
    case ErrorKind::kShape: return RS_ERR_SHAPE;
    case ErrorKind::kNumeric: return RS_ERR_NUMERIC;
    case ErrorKind::kState: return RS_ERR_STATE;
  }
  return RS_ERR_INTERNAL;
}

template <typename Fn>
rs_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return RS_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    g_last_error = e.what();
    return RS_ERR_IO;
  } catch (const c10::Error& e) {
    g_last_error = e.what_without_backtrace();
    return RS_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return RS_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return RS_ERR_INTERNAL;
  }
}

template <typename T>
T& require(T* p, const char* what) {
  if (!p) throw InvalidArgument(std::string(what) + " is null");
  return *p;
}

std::string require_str(const char* s, const char* what) {
  if (!s) throw InvalidArgument(std::string(what) + " is null");
  return s;
}

void copy_out(const std::string& text, char* buffer, size_t capacity, size_t* needed) {
  if (needed) *needed = text.size() + 1;
  if (buffer && capacity >= text.size() + 1) std::memcpy(buffer, text.c_str(), text.size() + 1);
}

/// HWC float buffer of n images -> (n, C, H, W) tensor.
torch::Tensor from_hwc(const float* data, int n, int h, int w, int c) {
  if (!data) throw InvalidArgument("image buffer is null");
  if (n <= 0 || h <= 0 || w <= 0 || c <= 0) throw ShapeError("image dimensions must be positive");
  return torch::from_blob(const_cast<float*>(data), {n, h, w, c}, torch::kFloat32).permute({0, 3, 1, 2}).clone();
}

void to_hwc(const torch::Tensor& nchw, float* out) {
  if (!out) throw InvalidArgument("output buffer is null");
  const auto hwc = nchw.detach().to(torch::kFloat32).permute({0, 2, 3, 1}).contiguous();
  std::memcpy(out, hwc.data_ptr<float>(), hwc.numel() * sizeof(float));
}

std::string stem(const std::string& name) {
  auto s = fs::path(name).replace_extension().generic_string();
  for (auto& ch : s)
    if (ch == '/') ch = '_';
  return s;
}

ImageCollection load_single(const std::string& path, int resolution) {
  const auto img = preprocess_rgb8(read_image_rgb8(path), 0, resolution);
  return ImageCollection(img.unsqueeze(0), {fs::path(path).filename().string()});
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw IoError("cannot write '" + path.string() + "'");
}

/// Keeps only the attribute columns listed (comma separated) in `selection`.
void select_attributes(LabelSet& labels, const std::string& selection) {
  if (selection.empty() || !labels.has_attributes()) return;
  std::vector<int64_t> columns;
  std::vector<std::string> names;
  std::stringstream ss(selection);
  std::string name;
  while (std::getline(ss, name, ',')) {
    const auto a = name.find_first_not_of(' ');
    const auto b = name.find_last_not_of(' ');
    if (a == std::string::npos) continue;
    name = name.substr(a, b - a + 1);
    const auto it = std::find(labels.attribute_names.begin(), labels.attribute_names.end(), name);
    if (it == labels.attribute_names.end()) throw InvalidArgument("attribute '" + name + "' not in label file");
    columns.push_back(it - labels.attribute_names.begin());
    names.push_back(name);
  }
  labels.attributes = labels.attributes.index_select(1, torch::tensor(columns));
  labels.attribute_names = names;
}

}  // namespace

extern "C" {

const char* rs_last_error(void) { return g_last_error.c_str(); }

const char* rs_status_name(rs_status status) {
  switch (status) {
    case RS_OK: return "ok";
    case RS_ERR_INVALID_ARGUMENT: return "invalid argument";
    case RS_ERR_CONFIG: return "config error";
    case RS_ERR_IO: return "i/o error";
    case RS_ERR_SHAPE: return "shape error";
    case RS_ERR_NUMERIC: return "numeric error";
    case RS_ERR_STATE: return "state error";
    case RS_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* rs_version(void) { return "0.1.0"; }

rs_status rs_config_default(rs_config** out) {
  return guarded([&] { require(out, "out") = new rs_config{}; });
}

rs_status rs_config_load(const char* path, rs_config** out) {
  return guarded([&] {
    auto cfg = parse_config(require_str(path, "path"));
    require(out, "out") = new rs_config{std::move(cfg)};
  });
}

rs_status rs_config_parse(const char* text, rs_config** out) {
  return guarded([&] {
    auto cfg = parse_config_text(require_str(text, "text"));
    require(out, "out") = new rs_config{std::move(cfg)};
  });
}

rs_status rs_config_set(rs_config* config, const char* key, const char* value) {
  return guarded([&] {
    auto& c = require(config, "config");
    auto copy = c.value;
    set_config_value(copy, require_str(key, "key"), require_str(value, "value"));
    copy.validate();
    c.value = std::move(copy);
  });
}

rs_status rs_config_override(rs_config* config, const char* assignment) {
  return guarded([&] {
    auto& c = require(config, "config");
    auto copy = c.value;
    apply_override(copy, require_str(assignment, "assignment"));
    copy.validate();
    c.value = std::move(copy);
  });
}

rs_status rs_config_get(const rs_config* config, const char* key, char* buffer, size_t capacity, size_t* needed) {
  return guarded([&] {
    copy_out(get_config_value(require(config, "config").value, require_str(key, "key")), buffer, capacity, needed);
  });
}

rs_status rs_config_serialize(const rs_config* config, char* buffer, size_t capacity, size_t* needed) {
  return guarded([&] { copy_out(serialize_config(require(config, "config").value), buffer, capacity, needed); });
}

rs_status rs_config_save(const rs_config* config, const char* path) {
  return guarded([&] { write_text(require_str(path, "path"), serialize_config(require(config, "config").value)); });
}

void rs_config_free(rs_config* config) { delete config; }

// ---------------------------------------------------------------------------

rs_status rs_trainer_create(const rs_config* config, rs_trainer** out) {
  return guarded([&] {
    auto t = std::make_unique<Trainer>(require(config, "config").value);
    require(out, "out") = new rs_trainer{std::move(t)};
  });
}

rs_status rs_trainer_resume(const char* checkpoint, rs_trainer** out) {
  return guarded([&] {
    auto t = Trainer::from_checkpoint(require_str(checkpoint, "checkpoint"));
    require(out, "out") = new rs_trainer{std::move(t)};
  });
}

rs_status rs_trainer_fit(rs_trainer* trainer, const char* out_dir) {
  return guarded([&] {
    auto& t = *require(trainer, "trainer").trainer;
    const auto dataset = load_training_images(t.config());
    if (dataset.skipped_files > 0)
      std::cerr << "warning: " << dataset.skipped_files << " unreadable files skipped\n";
    t.fit(dataset, out_dir ? fs::path(out_dir) : fs::path());
  });
}

rs_status rs_trainer_step(rs_trainer* trainer, const float* images, int n, int height, int width, int channels,
                          rs_losses* losses) {
  return guarded([&] {
    auto& t = *require(trainer, "trainer").trainer;
    const auto batch = from_hwc(images, n, height, width, channels).to(t.dtype());
    const auto r = t.train_step(batch);
    if (losses) {
      *losses = rs_losses{r.step, r.adv_d, r.adv_g, r.ct_d, r.ct_g, r.cyc, r.r1.value_or(0.0), r.r1.has_value(),
                          r.ct_active};
    }
  });
}

rs_status rs_trainer_config(const rs_trainer* trainer, rs_config** out) {
  return guarded([&] { require(out, "out") = new rs_config{require(trainer, "trainer").trainer->config()}; });
}

rs_status rs_trainer_get_step(const rs_trainer* trainer, int64_t* step) {
  return guarded([&] { require(step, "step") = require(trainer, "trainer").trainer->state().step; });
}

rs_status rs_trainer_save(const rs_trainer* trainer, const char* path) {
  return guarded([&] { require(trainer, "trainer").trainer->save_checkpoint(require_str(path, "path")); });
}

void rs_trainer_free(rs_trainer* trainer) { delete trainer; }

// ---------------------------------------------------------------------------

rs_status rs_model_load(const char* checkpoint, rs_model** out) {
  return guarded([&] {
    auto m = InferenceModel::load(require_str(checkpoint, "checkpoint"));
    require(out, "out") = new rs_model{std::move(m)};
  });
}

rs_status rs_model_from_trainer(const rs_trainer* trainer, rs_model** out) {
  return guarded([&] {
    auto m = InferenceModel::from_trainer(*require(trainer, "trainer").trainer);
    require(out, "out") = new rs_model{std::move(m)};
  });
}

rs_status rs_model_info(const rs_model* model, int* resolution, int* channels, int* style_dim) {
  return guarded([&] {
    const auto& spec = require(model, "model").model.generator->spec();
    if (resolution) *resolution = spec.resolution;
    if (channels) *channels = spec.image_channels;
    if (style_dim) *style_dim = spec.style_dim;
  });
}

rs_status rs_model_style(rs_model* model, const float* images, int n, float* codes) {
  return guarded([&] {
    auto& m = require(model, "model").model;
    const auto& spec = m.generator->spec();
    const auto x = from_hwc(images, n, spec.resolution, spec.resolution, spec.image_channels);
    const auto s = m.style(x).to(torch::kFloat32).contiguous();
    if (!codes) throw InvalidArgument("codes buffer is null");
    std::memcpy(codes, s.data_ptr<float>(), s.numel() * sizeof(float));
  });
}

rs_status rs_model_translate(rs_model* model, const float* inputs, const float* references, int n, float* outputs) {
  return guarded([&] {
    auto& m = require(model, "model").model;
    const auto& spec = m.generator->spec();
    const int r = spec.resolution, c = spec.image_channels;
    to_hwc(m.translate(from_hwc(inputs, n, r, r, c), from_hwc(references, n, r, r, c)), outputs);
  });
}

void rs_model_free(rs_model* model) { delete model; }

// ---------------------------------------------------------------------------

rs_status rs_make_synthetic(const rs_config* config, const char* out_dir, int64_t* count) {
  return guarded([&] {
    const auto& cfg = require(config, "config").value;
    cfg.synthetic.validate();
    const auto data = make_synthetic(cfg.synthetic);
    write_collection(data.images, require_str(out_dir, "out_dir"));
    if (count) *count = data.images.size();
  });
}

rs_status rs_translate_dirs(rs_model* model, const char* input_dir, const char* reference_dir, const char* out_dir,
                            int64_t* outputs) {
  return guarded([&] {
    auto& m = require(model, "model").model;
    const auto inputs = load_image_dir(require_str(input_dir, "input_dir"), m.resolution());
    const auto refs = load_image_dir(require_str(reference_dir, "reference_dir"), m.resolution());
    const fs::path out(require_str(out_dir, "out_dir"));
    fs::create_directories(out / "outputs");
    const auto ref_images = refs.all();
    std::vector<torch::Tensor> rows;
    for (int64_t i = 0; i < inputs.size(); ++i) {
      const auto x = inputs.image(i).unsqueeze(0).expand_as(ref_images).contiguous();
      const auto y = m.translate(x, ref_images);
      for (int64_t j = 0; j < refs.size(); ++j)
        write_image(out / "outputs" / (stem(inputs.names()[i]) + "__" + stem(refs.names()[j]) + ".png"), y[j]);
      rows.push_back(y);
    }
    write_image(out / "grid.png", translation_grid(inputs.all(), ref_images, torch::cat(rows)));
    if (outputs) *outputs = inputs.size() * refs.size();
  });
}

rs_status rs_interpolate(rs_model* model, const char* input_path, const char* reference_path, int steps,
                         const char* out_path) {
  return guarded([&] {
    auto& m = require(model, "model").model;
    const auto x = load_single(require_str(input_path, "input_path"), m.resolution()).all();
    const auto r = load_single(require_str(reference_path, "reference_path"), m.resolution()).all();
    const auto frames = interpolate_styles(
        x, r, steps, [&](const torch::Tensor& img, const torch::Tensor& s) { return m.generator->forward(img, s); },
        [&](const torch::Tensor& img) { return m.encoder->forward(img); });
    std::vector<torch::Tensor> row{x};
    for (const auto& f : frames) row.push_back(f);
    row.push_back(r);
    write_image(require_str(out_path, "out_path"), image_rows({torch::cat(row)}));
  });
}

rs_status rs_search(rs_model* model, const char* query_path, const char* corpus_dir, int k, const char* grid_path,
                    char* report, size_t capacity, size_t* needed) {
  return guarded([&] {
    auto& m = require(model, "model").model;
    const auto query = load_single(require_str(query_path, "query_path"), m.resolution()).all();
    const auto corpus = load_image_dir(require_str(corpus_dir, "corpus_dir"), m.resolution());
    std::vector<torch::Tensor> codes;
    for (int64_t start = 0; start < corpus.size(); start += 32) {
      std::vector<int64_t> idx;
      for (int64_t i = start; i < std::min<int64_t>(corpus.size(), start + 32); ++i) idx.push_back(i);
      codes.push_back(m.style(corpus.gather(idx)));
    }
    const auto hits = similarity_search(m.style(query)[0], torch::cat(codes), k);
    std::ostringstream text;
    text << "rank,index,similarity,file\n";
    std::vector<torch::Tensor> row{query};
    for (size_t r = 0; r < hits.size(); ++r) {
      char sim[32];
      std::snprintf(sim, sizeof(sim), "%.6f", hits[r].similarity);
      text << r + 1 << "," << hits[r].index << "," << sim << "," << corpus.names()[hits[r].index] << "\n";
      row.push_back(corpus.image(hits[r].index).unsqueeze(0));
    }
    if (grid_path && *grid_path) write_image(grid_path, image_rows({torch::cat(row)}));
    copy_out(text.str(), report, capacity, needed);
  });
}

rs_status rs_evaluate(rs_model* model, const rs_config* config, const char* out_dir, char* report, size_t capacity,
                      size_t* needed) {
  return guarded([&] {
    auto& m = require(model, "model").model;
    const auto& cfg = require(config, "config").value;
    cfg.eval.validate();
    if (cfg.eval.test_root.empty()) throw ConfigError("eval.test_root is not set");
    auto test_set = load_image_dir(cfg.eval.test_root, m.resolution(), cfg.data.center_crop);
    if (!cfg.eval.label_file.empty()) attach_label_file(test_set, cfg.eval.label_file);
    select_attributes(test_set.labels, cfg.eval.attributes);

    std::optional<OracleClassifier> oracle;
    if (cfg.eval.oracle == "mean_color") {
      if (test_set.labels.has_classes()) {
        oracle = MeanColorOracle(test_set.all(), test_set.labels.classes).as_oracle();
      } else if (test_set.labels.has_attributes()) {
        throw InvalidArgument("the mean-color oracle needs class labels; set eval.oracle=none for attribute labels");
      }
    }
    TranslationEvalOptions options;
    options.references_per_input = cfg.eval.references_per_input;
    options.seed = cfg.eval.seed;
    options.require_accuracy = cfg.eval.oracle != "none" && test_set.labels.has_classes();

    const auto extractor = make_random_conv_extractor();
    const auto metrics = evaluate_translation(
        [&](const torch::Tensor& x, const torch::Tensor& r) { return m.translate(x, r); }, test_set, extractor,
        oracle ? &*oracle : nullptr, options);
    const auto text = metrics.to_text();
    if (out_dir && *out_dir) {
      write_text(fs::path(out_dir) / "metrics" / "report.txt", text);
      write_text(fs::path(out_dir) / "metrics" / "metrics.kv", metrics.to_key_values());
    }
    copy_out(text, report, capacity, needed);
  });
}

}  // extern "C"
