#include "refstyle/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "refstyle/augmentation.hpp"
#include "refstyle/error.hpp"

namespace refstyle {

namespace fs = std::filesystem;

torch::Tensor read_image_rgb8(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image '" + path.string() + "'");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
}

torch::Tensor to_model_range(const torch::Tensor& hwc_u8) {
  return hwc_u8.permute({2, 0, 1}).to(torch::kFloat32) / 127.5 - 1.0;
}

torch::Tensor to_uint8_hwc(const torch::Tensor& chw) {
  const auto scaled = ((chw.detach().to(torch::kFloat32).clamp(-1.0, 1.0) + 1.0) * 127.5).round();
  return scaled.permute({1, 2, 0}).to(torch::kUInt8).contiguous();
}

void write_image(const fs::path& path, const torch::Tensor& image) {
  if (image.dim() != 3) throw ShapeError("write_image expects (C, H, W)");
  auto hwc = to_uint8_hwc(image);
  const int channels = static_cast<int>(hwc.size(2));
  cv::Mat mat(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), channels == 1 ? CV_8UC1 : CV_8UC3,
              hwc.data_ptr<uint8_t>());
  cv::Mat out;
  if (channels == 3)
    cv::cvtColor(mat, out, cv::COLOR_RGB2BGR);
  else
    out = mat;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) throw IoError("cannot write image '" + path.string() + "'");
}

torch::Tensor preprocess_rgb8(const torch::Tensor& hwc_u8, int center_crop, int resolution) {
  auto img = hwc_u8;
  if (center_crop > 0) {
    const int64_t side = std::min<int64_t>({center_crop, img.size(0), img.size(1)});
    const int64_t top = (img.size(0) - side) / 2;
    const int64_t left = (img.size(1) - side) / 2;
    img = img.narrow(0, top, side).narrow(1, left, side);
  }
  if (img.size(0) == resolution && img.size(1) == resolution) return img.contiguous();
  const auto chw = img.permute({2, 0, 1}).to(torch::kFloat32);
  const auto resized = resize_image(chw, resolution, resolution);
  return resized.round().clamp(0, 255).permute({1, 2, 0}).to(torch::kUInt8).contiguous();
}

// ---------------------------------------------------------------------------

ImageCollection::ImageCollection(torch::Tensor pixels_u8, std::vector<std::string> names)
    : pixels_(std::move(pixels_u8)), names_(std::move(names)) {
  if (pixels_.dim() != 4 || pixels_.scalar_type() != torch::kUInt8)
    throw ShapeError("image collection expects uint8 (N, H, W, C) pixels");
  if (static_cast<int64_t>(names_.size()) != pixels_.size(0)) throw ShapeError("one name per image required");
}

torch::Tensor ImageCollection::image(int64_t index) const {
  if (index < 0 || index >= size()) throw InvalidArgument("image index out of range");
  return to_model_range(pixels_[index]);
}

torch::Tensor ImageCollection::gather(const std::vector<int64_t>& indices) const {
  const auto idx = torch::tensor(indices, torch::kLong);
  return pixels_.index_select(0, idx).permute({0, 3, 1, 2}).to(torch::kFloat32) / 127.5 - 1.0;
}

torch::Tensor ImageCollection::all() const { return pixels_.permute({0, 3, 1, 2}).to(torch::kFloat32) / 127.5 - 1.0; }

namespace {

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto a = cell.find_first_not_of(" \t\r");
    const auto b = cell.find_last_not_of(" \t\r");
    cells.push_back(a == std::string::npos ? std::string() : cell.substr(a, b - a + 1));
  }
  return cells;
}

/// Maps label strings to dense indices; integer labels keep their value.
void assign_classes(LabelSet& labels, const std::vector<std::string>& raw) {
  bool numeric = true;
  for (const auto& r : raw)
    if (!r.empty() && (r.find_first_not_of("0123456789") != std::string::npos)) numeric = false;
  labels.classes.assign(raw.size(), -1);
  labels.class_names.clear();
  if (numeric) {
    int64_t max_label = -1;
    for (size_t i = 0; i < raw.size(); ++i) {
      if (raw[i].empty()) continue;
      labels.classes[i] = std::stoll(raw[i]);
      max_label = std::max(max_label, labels.classes[i]);
    }
    for (int64_t c = 0; c <= max_label; ++c) labels.class_names.push_back(std::to_string(c));
    return;
  }
  std::vector<std::string> names;
  for (const auto& r : raw)
    if (!r.empty()) names.push_back(r);
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  labels.class_names = names;
  for (size_t i = 0; i < raw.size(); ++i) {
    if (raw[i].empty()) continue;
    labels.classes[i] = std::lower_bound(names.begin(), names.end(), raw[i]) - names.begin();
  }
}

}  // namespace

void attach_label_file(ImageCollection& collection, const fs::path& label_file) {
  std::ifstream in(label_file);
  if (!in) throw IoError("cannot open label file '" + label_file.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("label file '" + label_file.string() + "' is empty");
  const auto header = split_csv(line);
  if (header.size() < 2) throw IoError("label file header needs a file column and at least one label column");

  std::map<std::string, std::vector<std::string>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw IoError(label_file.string() + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(header.size()) + " columns");
    const auto key = cells.front();
    cells.erase(cells.begin());
    rows[key] = std::move(cells);
  }

  const auto& names = collection.names();
  auto lookup = [&](const std::string& name) -> const std::vector<std::string>* {
    if (auto it = rows.find(name); it != rows.end()) return &it->second;
    if (auto it = rows.find(fs::path(name).filename().string()); it != rows.end()) return &it->second;
    return nullptr;
  };

  LabelSet labels;
  if (header.size() == 2) {
    std::vector<std::string> raw;
    for (const auto& n : names) {
      const auto* row = lookup(n);
      raw.push_back(row ? row->front() : std::string());
    }
    assign_classes(labels, raw);
  } else {
    labels.attribute_names.assign(header.begin() + 1, header.end());
    const auto count = static_cast<int64_t>(labels.attribute_names.size());
    labels.attributes = torch::full({static_cast<int64_t>(names.size()), count}, -1.0);
    for (size_t i = 0; i < names.size(); ++i) {
      const auto* row = lookup(names[i]);
      if (!row) continue;
      for (int64_t a = 0; a < count; ++a) {
        const auto& v = (*row)[static_cast<size_t>(a)];
        labels.attributes[static_cast<int64_t>(i)][a] = (v == "1" || v == "true") ? 1.0 : 0.0;
      }
    }
  }
  collection.labels = std::move(labels);
}

ImageCollection load_dataset(const DatasetSpec& spec) {
  const fs::path root(spec.root);
  if (spec.root.empty() || !fs::is_directory(root)) throw IoError("dataset root '" + spec.root + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<torch::Tensor> pixels;
  std::vector<std::string> names;
  std::vector<std::string> class_dirs;
  int64_t skipped = 0;
  for (const auto& file : files) {
    try {
      pixels.push_back(preprocess_rgb8(read_image_rgb8(file), spec.center_crop, spec.resolution));
    } catch (const IoError& e) {
      std::cerr << "warning: skipping " << file.string() << ": " << e.what() << "\n";
      ++skipped;
      continue;
    }
    const auto rel = fs::relative(file, root);
    names.push_back(rel.generic_string());
    class_dirs.push_back(rel.has_parent_path() ? rel.begin()->string() : std::string());
  }
  if (pixels.empty()) throw IoError("dataset at '" + spec.root + "' contains no decodable images");

  ImageCollection collection(torch::stack(pixels), std::move(names));
  collection.skipped_files = skipped;
  const bool has_dirs = std::any_of(class_dirs.begin(), class_dirs.end(), [](const auto& d) { return !d.empty(); });
  if (has_dirs) assign_classes(collection.labels, class_dirs);
  if (!spec.label_file.empty()) attach_label_file(collection, spec.label_file);
  return collection;
}

ImageCollection load_image_dir(const fs::path& dir, int resolution, int center_crop) {
  DatasetSpec spec;
  spec.root = dir.string();
  spec.resolution = resolution;
  spec.center_crop = center_crop;
  return load_dataset(spec);
}

ImageCollection load_training_images(const RunConfig& config) {
  if (config.data.kind == "synthetic") return make_synthetic(config.synthetic).images;
  return load_dataset(config.data);
}

void write_collection(const ImageCollection& collection, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream labels(dir / "labels.csv");
  labels << "file,label\n";
  for (int64_t i = 0; i < collection.size(); ++i) {
    const auto& name = collection.names()[static_cast<size_t>(i)];
    write_image(dir / name, collection.image(i));
    const auto label = collection.labels.has_classes() ? collection.labels.classes[static_cast<size_t>(i)] : -1;
    labels << name << "," << label << "\n";
  }
  if (!labels) throw IoError("cannot write labels.csv in '" + dir.string() + "'");
}

// ---------------------------------------------------------------------------
// Synthetic "color is style, shape is structure" data

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double x = h * 6.0;
  const int sector = static_cast<int>(std::floor(x)) % 6;
  const double f = x - std::floor(x);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

bool inside_shape(int shape, double u, double v) {
  // (u, v) are coordinates in the shape's own frame, scaled so the shape has unit size.
  switch (shape) {
    case 0: return u * u + v * v <= 1.0;
    case 1: return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
    default: {
      // Upward triangle with vertices (0, -1), (-0.95, 0.75), (0.95, 0.75).
      if (v > 0.75 || v < -1.0) return false;
      const double half_width = 0.95 * (v + 1.0) / 1.75;
      return std::abs(u) <= half_width;
    }
  }
}

}  // namespace

SyntheticDataset make_synthetic(const SyntheticStyleSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int res = spec.resolution;
  const int n = spec.num_images;

  auto pixels = torch::empty({n, res, res, 3}, torch::kUInt8);
  auto masks = torch::zeros({n, res, res}, torch::kBool);
  auto px = pixels.accessor<uint8_t, 4>();
  auto mk = masks.accessor<bool, 3>();
  std::vector<int64_t> styles(static_cast<size_t>(n));
  std::vector<int64_t> shapes(static_cast<size_t>(n));
  std::vector<std::string> names;

  for (int i = 0; i < n; ++i) {
    // Balanced style labels, structure sampled independently.
    const int style = i % spec.num_styles;
    const int shape = static_cast<int>(unit(rng) * 3.0) % 3;
    const double radius = res * (0.2 + 0.12 * unit(rng));
    const double margin = radius + 2.0;
    const double cx = margin + (res - 2 * margin) * unit(rng);
    const double cy = margin + (res - 2 * margin) * unit(rng);
    const double angle = 2.0 * std::numbers::pi * unit(rng);

    const double base_hue = static_cast<double>(style) / spec.num_styles;
    const double hue_jitter = (unit(rng) - 0.5) * 0.08;
    const Rgb fg = hsv(base_hue + hue_jitter, 0.8, 0.9 + 0.08 * (unit(rng) - 0.5));
    const Rgb fg_alt = hsv(base_hue + hue_jitter, 0.55, 0.6);
    // background hue halfway to the next style, so mean colour still tells styles apart
    const Rgb bg = hsv(base_hue + 0.5 / spec.num_styles + hue_jitter, 0.6, 0.28 + 0.08 * (unit(rng) - 0.5));
    const double stripe_period = res / 8.0;
    const bool striped = spec.style_generator == "striped";

    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int y = 0; y < res; ++y) {
      for (int x = 0; x < res; ++x) {
        const double dx = (x + 0.5 - cx) / radius;
        const double dy = (y + 0.5 - cy) / radius;
        const double u = ca * dx + sa * dy;
        const double v = -sa * dx + ca * dy;
        const bool in = inside_shape(shape, u, v);
        Rgb c = bg;
        if (in) {
          c = fg;
          if (striped && static_cast<int>(std::floor((x + y) / stripe_period)) % 2 == 1) c = fg_alt;
        }
        const double noise = (unit(rng) - 0.5) * 0.04;
        px[i][y][x][0] = static_cast<uint8_t>(std::lround(std::clamp(c.r + noise, 0.0, 1.0) * 255.0));
        px[i][y][x][1] = static_cast<uint8_t>(std::lround(std::clamp(c.g + noise, 0.0, 1.0) * 255.0));
        px[i][y][x][2] = static_cast<uint8_t>(std::lround(std::clamp(c.b + noise, 0.0, 1.0) * 255.0));
        mk[i][y][x] = in;
      }
    }
    styles[static_cast<size_t>(i)] = style;
    shapes[static_cast<size_t>(i)] = shape;
    char name[32];
    std::snprintf(name, sizeof(name), "%05d.png", i);
    names.emplace_back(name);
  }

  SyntheticDataset out{ImageCollection(pixels, std::move(names)), std::move(shapes), masks};
  out.images.labels.classes = std::move(styles);
  for (int s = 0; s < spec.num_styles; ++s) out.images.labels.class_names.push_back("style" + std::to_string(s));
  return out;
}

torch::Tensor foreground_mask(const torch::Tensor& image, double threshold) {
  if (image.dim() != 3) throw ShapeError("foreground_mask expects (C, H, W)");
  const auto x = image.detach().to(torch::kFloat32);
  const auto h = x.size(1);
  const auto w = x.size(2);
  const auto border = torch::cat({x.select(1, 0), x.select(1, h - 1), x.select(2, 0), x.select(2, w - 1)}, 1);
  const auto background = std::get<0>(border.median(1)).view({-1, 1, 1});
  return (x - background).pow(2).sum(0).sqrt() > threshold;
}

double mask_iou(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw ShapeError("mask_iou: shape mismatch");
  const auto inter = a.logical_and(b).sum().item<double>();
  const auto uni = a.logical_or(b).sum().item<double>();
  return uni == 0.0 ? 1.0 : inter / uni;
}

// ---------------------------------------------------------------------------

BatchSampler::BatchSampler(int64_t dataset_size, int batch_size, uint64_t seed)
    : dataset_size_(dataset_size), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw InvalidArgument("batch size must be positive");
  if (dataset_size < batch_size)
    throw InvalidArgument("dataset has " + std::to_string(dataset_size) + " images, fewer than the batch size " +
                          std::to_string(batch_size));
  batches_per_epoch_ = dataset_size / batch_size;
}

std::vector<int64_t> BatchSampler::epoch_permutation(int64_t epoch) const {
  std::vector<int64_t> perm(static_cast<size_t>(dataset_size_));
  std::iota(perm.begin(), perm.end(), 0);
  std::seed_seq seq{static_cast<uint32_t>(seed_), static_cast<uint32_t>(seed_ >> 32), static_cast<uint32_t>(epoch),
                    static_cast<uint32_t>(epoch >> 32), 0x5eedu};
  Rng rng(seq);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

std::vector<int64_t> BatchSampler::indices_for_step(int64_t step) const {
  const int64_t epoch = step / batches_per_epoch_;
  const int64_t offset = (step % batches_per_epoch_) * batch_size_;
  const auto perm = epoch_permutation(epoch);
  return {perm.begin() + offset, perm.begin() + offset + batch_size_};
}

}  // namespace refstyle
