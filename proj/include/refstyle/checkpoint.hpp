#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace refstyle {

inline constexpr uint32_t kCheckpointFormatVersion = 1;

/// Ordered archive of named entries (tensors, integers, strings).
///
/// On-disk layout, little-endian:
///   magic "RSTYCKPT" | u32 format_version | u64 entry_count | entries...
/// each entry:
///   u32 name_len | name | u8 kind | payload
///   kind 0 tensor: u8 dtype (0 f32, 1 f64, 2 i64) | u32 ndim | i64 dims[ndim] | raw data
///   kind 1 int:    i64
///   kind 2 string: u64 len | bytes
/// Entries are written in insertion order, so save -> load -> save is byte-identical.
class Archive {
 public:
  using Value = std::variant<torch::Tensor, int64_t, std::string>;

  void put(const std::string& name, const torch::Tensor& tensor);
  void put(const std::string& name, int64_t value);
  void put(const std::string& name, const std::string& value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const torch::Tensor& tensor(const std::string& name) const;
  int64_t integer(const std::string& name) const;
  const std::string& string(const std::string& name) const;
  /// Names in insertion order.
  std::vector<std::string> names() const;
  size_t size() const { return entries_.size(); }

  std::string to_bytes() const;
  static Archive from_bytes(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  const Value& get(const std::string& name) const;
  void insert(const std::string& name, Value value);

  std::vector<std::pair<std::string, Value>> entries_;
  std::map<std::string, size_t> index_;
};

/// Adds every parameter and buffer of `module` under `prefix/`.
void put_module(Archive& archive, const std::string& prefix, const torch::nn::Module& module);
/// Copies `prefix/` entries back into `module`; throws StateError on a missing
/// entry or shape mismatch.
void load_module(const Archive& archive, const std::string& prefix, torch::nn::Module& module);

void put_adam(Archive& archive, const std::string& prefix, torch::optim::Adam& optimizer,
              const torch::nn::Module& module);
void load_adam(const Archive& archive, const std::string& prefix, torch::optim::Adam& optimizer,
               const torch::nn::Module& module);

}  // namespace refstyle
