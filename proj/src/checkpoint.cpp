#include "dcnas/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dcnas {

namespace {

constexpr char kMagic[8] = {'D', 'C', 'N', 'A', 'S', 'C', 'K', 'P'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error("checkpoint: cannot open " + path.string() + " for writing");
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  template <typename T>
  void pod(T v) {
    bytes(&v, sizeof v);
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw Error("checkpoint: write failed for " + path.string());
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw Error("checkpoint: cannot open " + path.string());
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw Error("checkpoint: truncated file " + path_.string());
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1u << 20)) throw Error("checkpoint: corrupt string length in " + path_.string());
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  Writer w(path);
  w.bytes(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(kVersion);
  w.pod<std::uint64_t>(tensors.size());
  for (const auto& [name, t] : tensors) {
    w.str(name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.shape().rank()));
    for (int d = 0; d < t.shape().rank(); ++d) w.pod<std::int32_t>(t.shape()[d]);
    w.bytes(t.data(), t.numel() * sizeof(double));
  }
  w.pod<std::uint64_t>(scalars.size());
  for (const auto& [name, v] : scalars) {
    w.str(name);
    w.pod<double>(v);
  }
  w.pod<std::uint64_t>(strings.size());
  for (const auto& [name, v] : strings) {
    w.str(name);
    w.str(v);
  }
  w.finish(path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw Error("checkpoint: bad magic in " + path.string());
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion) {
    throw Error("checkpoint: unsupported version " + std::to_string(version) + " in " + path.string());
  }
  Checkpoint ck;
  const auto n_tensors = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    const auto rank = r.pod<std::uint32_t>();
    if (rank != 4 && rank != 5) throw Error("checkpoint: bad rank for " + name);
    std::vector<int> dims(rank);
    for (auto& d : dims) d = r.pod<std::int32_t>();
    Tensor t{Shape(dims)};
    r.bytes(t.data(), t.numel() * sizeof(double));
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  const auto n_scalars = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_scalars; ++i) {
    std::string name = r.str();
    ck.scalars[name] = r.pod<double>();
  }
  const auto n_strings = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_strings; ++i) {
    std::string name = r.str();
    ck.strings[name] = r.str();
  }
  return ck;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error("checkpoint: no tensor named " + name);
  return it->second;
}

double Checkpoint::scalar(const std::string& name) const {
  auto it = scalars.find(name);
  if (it == scalars.end()) throw Error("checkpoint: no scalar named " + name);
  return it->second;
}

const std::string& Checkpoint::string(const std::string& name) const {
  auto it = strings.find(name);
  if (it == strings.end()) throw Error("checkpoint: no string named " + name);
  return it->second;
}

void restore_into(const Checkpoint& ck, const std::string& name, Tensor& dst) {
  const Tensor& src = ck.tensor(name);
  if (!(src.shape() == dst.shape())) {
    throw ShapeError("checkpoint: " + name + " has shape " + src.shape().str() + ", expected " + dst.shape().str());
  }
  dst = src;
}

}  // namespace dcnas
