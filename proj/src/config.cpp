#include "refstyle/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "refstyle/error.hpp"

namespace refstyle {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
  // Shortest representation that parses back to the same value.
  char buf[64];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

template <typename T>
T parse_integer(std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw InvalidArgument("expected an integer, got '" + std::string(text) + "'");
  return value;
}

double parse_real(std::string_view text) {
  std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
    throw InvalidArgument("expected a finite real number, got '" + s + "'");
  return v;
}

bool parse_bool(std::string_view text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw InvalidArgument("expected a boolean, got '" + std::string(text) + "'");
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Field int_field(std::string key, Member member) {
  return {std::move(key),
          [member](RunConfig& c, std::string_view v) {
            auto& ref = member(c);
            ref = parse_integer<std::remove_reference_t<decltype(ref)>>(v);
          },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Field real_field(std::string key, Member member) {
  return {std::move(key), [member](RunConfig& c, std::string_view v) { member(c) = parse_real(v); },
          [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Field bool_field(std::string key, Member member) {
  return {std::move(key), [member](RunConfig& c, std::string_view v) { member(c) = parse_bool(v); },
          [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Member>
Field string_field(std::string key, Member member) {
  return {std::move(key), [member](RunConfig& c, std::string_view v) { member(c) = std::string(v); },
          [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); }};
}

#define RS_MEMBER(path) [](RunConfig& c) -> auto& { return c.path; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      string_field("name", RS_MEMBER(name)),
      string_field("out_dir", RS_MEMBER(out_dir)),

      int_field("network.image_channels", RS_MEMBER(network.image_channels)),
      int_field("network.base_channels", RS_MEMBER(network.base_channels)),
      int_field("network.max_channels", RS_MEMBER(network.max_channels)),
      int_field("network.style_dim", RS_MEMBER(network.style_dim)),
      int_field("network.rep_dim", RS_MEMBER(network.rep_dim)),
      int_field("network.trunk_blocks", RS_MEMBER(network.trunk_blocks)),
      int_field("network.gen_down_blocks", RS_MEMBER(network.gen_down_blocks)),
      int_field("network.gen_mid_blocks", RS_MEMBER(network.gen_mid_blocks)),
      real_field("network.leaky_slope", RS_MEMBER(network.leaky_slope)),
      real_field("network.adain_eps", RS_MEMBER(network.adain_eps)),

      int_field("train.batch_size", RS_MEMBER(train.batch_size)),
      int_field("train.total_iters", RS_MEMBER(train.total_iters)),
      real_field("train.lr", RS_MEMBER(train.lr)),
      real_field("train.adam_beta1", RS_MEMBER(train.adam_beta1)),
      real_field("train.adam_beta2", RS_MEMBER(train.adam_beta2)),
      real_field("train.ema_decay", RS_MEMBER(train.ema_decay)),
      int_field("train.seed", RS_MEMBER(train.seed)),
      int_field("train.checkpoint_every", RS_MEMBER(train.checkpoint_every)),
      int_field("train.log_every", RS_MEMBER(train.log_every)),
      int_field("train.sample_every", RS_MEMBER(train.sample_every)),
      bool_field("train.adv_real_full_batch", RS_MEMBER(train.adv_real_full_batch)),

      real_field("loss.lambda_cyc", RS_MEMBER(train.loss_weights.cyc)),
      real_field("loss.lambda_ct_d", RS_MEMBER(train.loss_weights.ct_d)),
      real_field("loss.lambda_ct_g", RS_MEMBER(train.loss_weights.ct_g)),
      real_field("loss.r1_gamma", RS_MEMBER(train.loss_weights.r1_gamma)),
      int_field("loss.r1_interval", RS_MEMBER(train.loss_weights.r1_interval)),

      real_field("contrastive.temperature", RS_MEMBER(train.contrastive.temperature)),
      int_field("contrastive.queue_capacity", RS_MEMBER(train.contrastive.queue_capacity)),
      real_field("contrastive.key_momentum", RS_MEMBER(train.contrastive.key_momentum)),
      int_field("contrastive.patches", RS_MEMBER(train.contrastive.patches.count)),
      real_field("contrastive.patch_scale_min", RS_MEMBER(train.contrastive.patches.scale_min)),
      real_field("contrastive.patch_scale_max", RS_MEMBER(train.contrastive.patches.scale_max)),

      real_field("augment.crop_scale_min", RS_MEMBER(train.augmentation.crop_scale_min)),
      real_field("augment.crop_scale_max", RS_MEMBER(train.augmentation.crop_scale_max)),
      real_field("augment.hflip_prob", RS_MEMBER(train.augmentation.hflip_prob)),
      bool_field("augment.use_affine", RS_MEMBER(train.augmentation.use_affine)),
      real_field("augment.rotation_max_deg", RS_MEMBER(train.augmentation.rotation_max_deg)),
      real_field("augment.shear_max_deg", RS_MEMBER(train.augmentation.shear_max_deg)),
      real_field("augment.shift_max_frac", RS_MEMBER(train.augmentation.shift_max_frac)),
      bool_field("augment.use_color", RS_MEMBER(train.augmentation.use_color)),
      real_field("augment.color_jitter_strength", RS_MEMBER(train.augmentation.color_jitter_strength)),
      real_field("augment.color_jitter_prob", RS_MEMBER(train.augmentation.color_jitter_prob)),
      real_field("augment.grayscale_prob", RS_MEMBER(train.augmentation.grayscale_prob)),

      string_field("data.kind", RS_MEMBER(data.kind)),
      string_field("data.root", RS_MEMBER(data.root)),
      int_field("data.resolution", RS_MEMBER(data.resolution)),
      int_field("data.center_crop", RS_MEMBER(data.center_crop)),
      string_field("data.label_file", RS_MEMBER(data.label_file)),
      string_field("data.split", RS_MEMBER(data.split)),

      int_field("synthetic.num_images", RS_MEMBER(synthetic.num_images)),
      int_field("synthetic.resolution", RS_MEMBER(synthetic.resolution)),
      int_field("synthetic.num_styles", RS_MEMBER(synthetic.num_styles)),
      string_field("synthetic.structure_generator", RS_MEMBER(synthetic.structure_generator)),
      string_field("synthetic.style_generator", RS_MEMBER(synthetic.style_generator)),
      int_field("synthetic.seed", RS_MEMBER(synthetic.seed)),

      string_field("eval.test_root", RS_MEMBER(eval.test_root)),
      int_field("eval.references_per_input", RS_MEMBER(eval.references_per_input)),
      int_field("eval.seed", RS_MEMBER(eval.seed)),
      int_field("eval.search_k", RS_MEMBER(eval.search_k)),
      int_field("eval.interpolation_steps", RS_MEMBER(eval.interpolation_steps)),
      string_field("eval.label_file", RS_MEMBER(eval.label_file)),
      string_field("eval.attributes", RS_MEMBER(eval.attributes)),
      string_field("eval.oracle", RS_MEMBER(eval.oracle)),
  };
  return table;
}

#undef RS_MEMBER

const Field& find_field(std::string_view key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

}  // namespace

int NetworkSpec::effective_trunk_blocks() const {
  if (trunk_blocks > 0) return trunk_blocks;
  int blocks = 0;
  for (int side = resolution; side > 4 && side % 2 == 0; side /= 2) ++blocks;
  return blocks;
}

int NetworkSpec::trunk_output_side() const { return resolution >> effective_trunk_blocks(); }

void NetworkSpec::validate() const {
  require(image_channels >= 1, "network.image_channels must be positive");
  require(base_channels >= 1 && max_channels >= base_channels, "network channels must satisfy 1 <= base <= max");
  require(style_dim >= 1 && rep_dim >= 1, "network.style_dim and network.rep_dim must be positive");
  require(leaky_slope >= 0.0 && leaky_slope < 1.0, "network.leaky_slope must lie in [0, 1)");
  require(adain_eps > 0.0, "network.adain_eps must be positive");
  require(gen_down_blocks >= 1 && gen_mid_blocks >= 0, "generator block counts out of range");
  const int blocks = effective_trunk_blocks();
  require(blocks >= 1 && blocks < 30, "resolution " + std::to_string(resolution) + " admits no downsampling trunk");
  require(resolution % (1 << blocks) == 0,
          "resolution " + std::to_string(resolution) + " is not divisible by 2^" + std::to_string(blocks) +
              " required by the downsampling trunk");
  require(trunk_blocks > 0 || trunk_output_side() <= 4,
          "resolution " + std::to_string(resolution) + " does not halve down to 4x4 or less (set network.trunk_blocks)");
  require(resolution % (1 << gen_down_blocks) == 0,
          "resolution " + std::to_string(resolution) + " is not divisible by 2^" + std::to_string(gen_down_blocks) +
              " required by the generator encoder");
}

void AugmentationPolicy::validate() const {
  require(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0,
          "augment crop scales must satisfy 0 < min <= max <= 1");
  require(is_probability(hflip_prob), "augment.hflip_prob must lie in [0, 1]");
  require(is_probability(color_jitter_prob), "augment.color_jitter_prob must lie in [0, 1]");
  require(is_probability(grayscale_prob), "augment.grayscale_prob must lie in [0, 1]");
  require(rotation_max_deg >= 0.0 && shear_max_deg >= 0.0 && shift_max_frac >= 0.0,
          "augment affine bounds must be non-negative");
  require(color_jitter_strength >= 0.0, "augment.color_jitter_strength must be non-negative");
}

void PatchSpec::validate() const {
  require(count >= 1, "contrastive.patches must be at least 1");
  require(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0,
          "patch scales must satisfy 0 < min <= max <= 1");
}

void ContrastiveConfig::validate() const {
  require(temperature > 0.0, "contrastive.temperature must be positive");
  require(queue_capacity >= 1, "contrastive.queue_capacity must be positive");
  require(is_probability(key_momentum), "contrastive.key_momentum must lie in [0, 1]");
  patches.validate();
}

void LossWeights::validate() const {
  require(cyc >= 0.0 && ct_d >= 0.0 && ct_g >= 0.0 && r1_gamma >= 0.0, "loss weights must be non-negative");
  require(r1_interval >= 1, "loss.r1_interval must be at least 1");
}

void TrainConfig::validate() const {
  require(batch_size >= 2 && batch_size % 2 == 0,
          "train.batch_size must be even (split into input and reference halves), got " + std::to_string(batch_size));
  require(total_iters >= 0, "train.total_iters must be non-negative");
  require(lr > 0.0, "train.lr must be positive");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
          "adam betas must lie in [0, 1)");
  require(is_probability(ema_decay), "train.ema_decay must lie in [0, 1]");
  require(checkpoint_every >= 1 && log_every >= 1 && sample_every >= 1, "train intervals must be positive");
  loss_weights.validate();
  contrastive.validate();
  augmentation.validate();
}

void SyntheticStyleSpec::validate() const {
  require(num_images >= 1, "synthetic.num_images must be positive");
  require(num_styles >= 2, "synthetic.num_styles must be at least 2");
  require(resolution >= 8, "synthetic.resolution must be at least 8");
  require(structure_generator == "shapes", "synthetic.structure_generator must be 'shapes'");
  require(style_generator == "palette" || style_generator == "striped",
          "synthetic.style_generator must be 'palette' or 'striped'");
}

void DatasetSpec::validate() const {
  require(kind == "folder" || kind == "synthetic", "data.kind must be 'folder' or 'synthetic'");
  require(resolution >= 8, "data.resolution must be at least 8");
  require(center_crop == 0 || center_crop >= resolution, "data.center_crop must be 0 or >= data.resolution");
  require(split == "train" || split == "test", "data.split must be 'train' or 'test'");
}

void EvalConfig::validate() const {
  require(references_per_input >= 1, "eval.references_per_input must be positive");
  require(search_k >= 1, "eval.search_k must be positive");
  require(interpolation_steps >= 2, "eval.interpolation_steps must be at least 2");
  require(oracle == "mean_color" || oracle == "none", "eval.oracle must be mean_color or none");
}

NetworkSpec RunConfig::effective_network() const {
  NetworkSpec spec = network;
  spec.resolution = data.kind == "synthetic" ? synthetic.resolution : data.resolution;
  return spec;
}

void RunConfig::validate() const {
  require(!name.empty(), "name must not be empty");
  effective_network().validate();
  train.validate();
  data.validate();
  if (data.kind == "synthetic") synthetic.validate();
  eval.validate();
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  const Field& field = find_field(key);
  try {
    field.set(cfg, value);
  } catch (const InvalidArgument& e) {
    throw ConfigError("key '" + std::string(key) + "': " + e.what());
  }
}

std::string get_config_value(const RunConfig& cfg, std::string_view key) { return find_field(key).get(cfg); }

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  set_config_value(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig parse_config_text(std::string_view text, std::string_view source) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  std::map<std::string, int> key_lines;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const std::string where = std::string(source) + ":" + std::to_string(line_no) + ": ";
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value', got '" + std::string(view) + "'");
    const auto key = trim(view.substr(0, eq));
    try {
      set_config_value(cfg, key, trim(view.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
    key_lines[std::string(key)] = line_no;
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    // Point at the line that set the offending key, when the file set it.
    const std::string what = e.what();
    std::string best;
    for (const auto& [key, line] : key_lines)
      if (what.find(key) != std::string::npos && key.size() > best.size()) best = key;
    if (best.empty()) throw ConfigError(std::string(source) + ": " + what);
    throw ConfigError(std::string(source) + ":" + std::to_string(key_lines[best]) + ": " + what);
  }
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path.string());
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(fields().size());
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, value] : config_entries(cfg)) out += key + " = " + value + "\n";
  return out;
}

bool operator==(const RunConfig& a, const RunConfig& b) { return config_entries(a) == config_entries(b); }

}  // namespace refstyle
