#include "hfit/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "hfit/errors.hpp"

namespace hfit {

namespace {

constexpr std::array<char, 8> kMagic = {'H', 'F', 'I', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
  }
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* p, size_t n) { out_.write(static_cast<const char*>(p), n); }
  void str(const std::string& s) {
    pod<uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw IoError("failed writing '" + path.string() + "'");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open checkpoint '" + path.string() + "'");
  }
  template <typename T>
  T pod() {
    T v{};
    bytes(&v, sizeof(T));
    return v;
  }
  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw IoError("truncated checkpoint '" + path_.string() + "'");
  }
  std::string str() {
    const auto n = pod<uint64_t>();
    if (n > (1ull << 32)) throw IoError("corrupt checkpoint '" + path_.string() + "'");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    default: throw ValueError("unsupported checkpoint dtype");
  }
}

torch::ScalarType dtype_from_code(uint8_t code) {
  switch (code) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    default: throw IoError("unknown dtype code in checkpoint");
  }
}

}  // namespace

const torch::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  Writer w(path);
  w.bytes(kMagic.data(), kMagic.size());
  w.pod(kVersion);
  w.str(checkpoint.kind);
  w.str(checkpoint.config_yaml);
  w.pod(checkpoint.fingerprint);
  w.pod(checkpoint.iteration);
  w.pod<uint64_t>(checkpoint.tensors.size());
  for (const auto& [name, value] : checkpoint.tensors) {
    const auto t = value.detach().contiguous().cpu();
    w.str(name);
    w.pod(dtype_code(t.scalar_type()));
    w.pod<uint32_t>(static_cast<uint32_t>(t.dim()));
    for (int64_t d = 0; d < t.dim(); ++d) w.pod<int64_t>(t.size(d));
    w.bytes(t.data_ptr(), t.numel() * t.element_size());
  }
  w.finish(path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint '" + path.string() + "' not found");
  Reader r(path);
  std::array<char, 8> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kMagic) throw IoError("'" + path.string() + "' is not an HFIT checkpoint");
  if (r.pod<uint32_t>() != kVersion) throw IoError("unsupported checkpoint version");
  Checkpoint c;
  c.kind = r.str();
  c.config_yaml = r.str();
  c.fingerprint = r.pod<uint64_t>();
  c.iteration = r.pod<int64_t>();
  const auto count = r.pod<uint64_t>();
  for (uint64_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.str();
    const auto dtype = dtype_from_code(r.pod<uint8_t>());
    const auto ndim = r.pod<uint32_t>();
    if (ndim > 8) throw IoError("corrupt tensor rank in checkpoint");
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = r.pod<int64_t>();
    nt.value = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    r.bytes(nt.value.data_ptr(), nt.value.numel() * nt.value.element_size());
    c.tensors.push_back(std::move(nt));
  }
  return c;
}

}  // namespace hfit
