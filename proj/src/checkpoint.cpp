#include "refstyle/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "refstyle/error.hpp"

namespace refstyle {

namespace {

constexpr char kMagic[8] = {'R', 'S', 'T', 'Y', 'C', 'K', 'P', 'T'};

enum : uint8_t { kTensor = 0, kInt = 1, kString = 2 };
enum : uint8_t { kF32 = 0, kF64 = 1, kI64 = 2 };

template <typename T>
void write_pod(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T pod() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }

  const char* take(size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  size_t pos_ = 0;
};

uint8_t dtype_code(torch::Dtype dtype) {
  switch (dtype) {
    case torch::kFloat32: return kF32;
    case torch::kFloat64: return kF64;
    case torch::kInt64: return kI64;
    default: throw InvalidArgument(std::string("unsupported checkpoint dtype ") + c10::toString(dtype));
  }
}

torch::Dtype dtype_from_code(uint8_t code) {
  switch (code) {
    case kF32: return torch::kFloat32;
    case kF64: return torch::kFloat64;
    case kI64: return torch::kInt64;
    default: throw IoError("unknown tensor dtype code in checkpoint");
  }
}

}  // namespace

void Archive::insert(const std::string& name, Value value) {
  if (index_.count(name)) throw InvalidArgument("duplicate archive entry '" + name + "'");
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(value));
}

void Archive::put(const std::string& name, const torch::Tensor& tensor) {
  insert(name, tensor.detach().cpu().contiguous().clone());
}

void Archive::put(const std::string& name, int64_t value) { insert(name, value); }

void Archive::put(const std::string& name, const std::string& value) { insert(name, value); }

const Archive::Value& Archive::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw StateError("checkpoint has no entry '" + name + "'");
  return entries_[it->second].second;
}

const torch::Tensor& Archive::tensor(const std::string& name) const {
  const auto* t = std::get_if<torch::Tensor>(&get(name));
  if (!t) throw StateError("checkpoint entry '" + name + "' is not a tensor");
  return *t;
}

int64_t Archive::integer(const std::string& name) const {
  const auto* v = std::get_if<int64_t>(&get(name));
  if (!v) throw StateError("checkpoint entry '" + name + "' is not an integer");
  return *v;
}

const std::string& Archive::string(const std::string& name) const {
  const auto* v = std::get_if<std::string>(&get(name));
  if (!v) throw StateError("checkpoint entry '" + name + "' is not a string");
  return *v;
}

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

std::string Archive::to_bytes() const {
  std::string out(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(out, kCheckpointFormatVersion);
  write_pod<uint64_t>(out, entries_.size());
  for (const auto& [name, value] : entries_) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out += name;
    if (const auto* t = std::get_if<torch::Tensor>(&value)) {
      out.push_back(static_cast<char>(kTensor));
      out.push_back(static_cast<char>(dtype_code(t->scalar_type())));
      write_pod<uint32_t>(out, static_cast<uint32_t>(t->dim()));
      for (const auto d : t->sizes()) write_pod<int64_t>(out, d);
      out.append(static_cast<const char*>(t->data_ptr()), t->nbytes());
    } else if (const auto* i = std::get_if<int64_t>(&value)) {
      out.push_back(static_cast<char>(kInt));
      write_pod<int64_t>(out, *i);
    } else {
      const auto& s = std::get<std::string>(value);
      out.push_back(static_cast<char>(kString));
      write_pod<uint64_t>(out, s.size());
      out += s;
    }
  }
  return out;
}

Archive Archive::from_bytes(const std::string& bytes) {
  Reader in(bytes);
  if (std::memcmp(in.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) throw IoError("not a checkpoint archive");
  const auto version = in.pod<uint32_t>();
  if (version != kCheckpointFormatVersion)
    throw IoError("unsupported checkpoint format version " + std::to_string(version));
  const auto count = in.pod<uint64_t>();
  Archive archive;
  for (uint64_t e = 0; e < count; ++e) {
    const auto name_len = in.pod<uint32_t>();
    std::string name(in.take(name_len), name_len);
    const auto kind = in.pod<uint8_t>();
    if (kind == kTensor) {
      const auto dtype = dtype_from_code(in.pod<uint8_t>());
      const auto ndim = in.pod<uint32_t>();
      std::vector<int64_t> dims(ndim);
      for (auto& d : dims) d = in.pod<int64_t>();
      auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
      std::memcpy(t.data_ptr(), in.take(t.nbytes()), t.nbytes());
      archive.insert(name, t);
    } else if (kind == kInt) {
      archive.insert(name, in.pod<int64_t>());
    } else if (kind == kString) {
      const auto len = in.pod<uint64_t>();
      archive.insert(name, std::string(in.take(len), len));
    } else {
      throw IoError("unknown checkpoint entry kind");
    }
  }
  if (!in.done()) throw IoError("trailing bytes after checkpoint entries");
  return archive;
}

void Archive::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    const auto bytes = to_bytes();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write checkpoint '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_bytes(buffer.str());
}

// ---------------------------------------------------------------------------

void put_module(Archive& archive, const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters()) archive.put(prefix + "/" + p.key(), p.value());
  for (const auto& b : module.named_buffers()) archive.put(prefix + "/" + b.key(), b.value());
}

void load_module(const Archive& archive, const std::string& prefix, torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  auto restore = [&](const std::string& key, torch::Tensor& target) {
    const auto& source = archive.tensor(prefix + "/" + key);
    if (source.sizes() != target.sizes())
      throw StateError("checkpoint entry '" + prefix + "/" + key + "' has shape " + c10::str(source.sizes()) +
                       ", expected " + c10::str(target.sizes()));
    target.copy_(source);
  };
  for (auto& p : module.named_parameters()) restore(p.key(), p.value());
  for (auto& b : module.named_buffers()) restore(b.key(), b.value());
}

void put_adam(Archive& archive, const std::string& prefix, torch::optim::Adam& optimizer,
              const torch::nn::Module& module) {
  auto& state = optimizer.state();
  for (const auto& p : module.named_parameters()) {
    const auto it = state.find(p.value().unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    archive.put(prefix + "/" + p.key() + "/step", s.step());
    archive.put(prefix + "/" + p.key() + "/exp_avg", s.exp_avg());
    archive.put(prefix + "/" + p.key() + "/exp_avg_sq", s.exp_avg_sq());
  }
}

void load_adam(const Archive& archive, const std::string& prefix, torch::optim::Adam& optimizer,
               const torch::nn::Module& module) {
  auto& state = optimizer.state();
  state.clear();
  for (const auto& p : module.named_parameters()) {
    const auto base = prefix + "/" + p.key();
    if (!archive.contains(base + "/step")) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(archive.integer(base + "/step"));
    s->exp_avg(archive.tensor(base + "/exp_avg").to(p.value().scalar_type()).clone());
    s->exp_avg_sq(archive.tensor(base + "/exp_avg_sq").to(p.value().scalar_type()).clone());
    state[p.value().unsafeGetTensorImpl()] = std::move(s);
  }
}

}  // namespace refstyle
