#include "flowgen/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "flowgen/errors.hpp"

namespace flowgen {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void shape(const Shape& shape) {
    u32(static_cast<std::uint32_t>(shape.size()));
    for (int e : shape) u32(static_cast<std::uint32_t>(e));
  }
  void floats(const std::vector<float>& v) { raw(v.data(), v.size() * sizeof(float)); }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    bytes.insert(bytes.end(), c, c + n);
  }
  std::vector<char> bytes;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::string text() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  Shape shape() {
    const std::uint32_t rank = u32();
    if (rank > 8) fail("implausible tensor rank " + std::to_string(rank));
    Shape s(rank);
    for (auto& e : s) {
      const std::uint32_t v = u32();
      if (v == 0 || v > (1u << 24)) fail("implausible tensor extent " + std::to_string(v));
      e = static_cast<int>(v);
    }
    return s;
  }
  std::vector<float> floats(const Shape& shape) {
    std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
    raw(v.data(), v.size() * sizeof(float));
    return v;
  }
  void bytes(char* p, std::size_t n) { raw(p, n); }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& what) const { throw FormatError(origin_ + ": " + what); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail("truncated checkpoint");
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::vector<char> bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.raw("CVC1", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.text(t.name);
    w.shape(t.shape);
    w.floats(t.values);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.moments.size()));
  for (const auto& m : ckpt.moments) {
    w.text(m.name);
    w.shape(m.shape);
    w.floats(m.m);
    w.floats(m.v);
  }
  w.u64(ckpt.adam_step);
  w.text(ckpt.rng_state);
  w.u64(ckpt.epoch);
  w.text(ckpt.config);

  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());

  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "CVC1", 4) != 0) r.fail("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(version) + " (expected " +
           std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.text();
    t.shape = r.shape();
    t.values = r.floats(t.shape);
    ckpt.tensors.push_back(std::move(t));
  }
  const std::uint32_t moments = r.u32();
  for (std::uint32_t i = 0; i < moments; ++i) {
    AdamMoments m;
    m.name = r.text();
    m.shape = r.shape();
    m.m = r.floats(m.shape);
    m.v = r.floats(m.shape);
    ckpt.moments.push_back(std::move(m));
  }
  ckpt.adam_step = r.u64();
  ckpt.rng_state = r.text();
  ckpt.epoch = r.u64();
  ckpt.config = r.text();
  if (!r.done()) r.fail("trailing bytes after checkpoint payload");
  return ckpt;
}

std::vector<StoredTensor> snapshot(const ParameterList<float>& params) {
  std::vector<StoredTensor> out;
  for (const auto& p : params) {
    const auto d = p.tensor.data();
    out.push_back({p.name, p.tensor.shape(), std::vector<float>(d.begin(), d.end())});
  }
  return out;
}

void restore_parameters(const std::vector<StoredTensor>& stored, ParameterList<float>& params) {
  for (auto& p : params) {
    const auto it = std::find_if(stored.begin(), stored.end(), [&](const StoredTensor& t) { return t.name == p.name; });
    if (it == stored.end()) throw FormatError("checkpoint has no tensor named '" + p.name + "'");
    if (it->shape != p.tensor.shape()) {
      throw FormatError("checkpoint tensor '" + p.name + "' has shape " + shape_to_string(it->shape) +
                        ", model expects " + shape_to_string(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    std::copy(it->values.begin(), it->values.end(), dst.begin());
  }
}

}  // namespace flowgen
