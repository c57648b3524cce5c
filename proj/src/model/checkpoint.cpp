#include "netconv/model/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

namespace netconv::model {

namespace {

constexpr char kMagic[4] = {'N', 'C', 'K', 'P'};
constexpr std::uint8_t kDtypeF32 = 0;
constexpr const char* kExtraPrefix = "@";

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    u32(v);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  bool done() const { return pos_ == in_.size(); }
  const std::uint8_t* take(std::size_t n) {
    if (in_.size() - pos_ < n) throw CheckpointError("truncated checkpoint");
    const auto* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint16_t u16() {
    const auto* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const auto* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  float f32() {
    const std::uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::string str(std::size_t n) {
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const Tensor<float>& t) {
  if (name.size() > 0xFFFF) throw CheckpointError("tensor name too long: " + name.substr(0, 64));
  if (t.rank() > 0xFF) throw CheckpointError("tensor rank too large: " + name);
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u8(kDtypeF32);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (const auto d : t.dims()) {
    if (d > 0xFFFFFFFFu) throw CheckpointError("tensor dimension too large: " + name);
    w.u32(static_cast<std::uint32_t>(d));
  }
  for (const float v : t.storage()) w.f32(v);
}

}  // namespace

const Tensor<float>* Checkpoint::find_extra(const std::string& name) const {
  for (const auto& [n, t] : extra) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  const std::string header = nlohmann::json{{"model", ckpt.config}, {"meta", ckpt.meta}}.dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header.data(), header.size());
  for (const auto& [name, var] : ckpt.params) write_tensor(w, name, var.value());
  for (const auto& [name, t] : ckpt.extra) write_tensor(w, kExtraPrefix + name, t);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(r.take(4), kMagic, 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const std::string header = r.str(r.u32());
  try {
    const auto j = nlohmann::json::parse(header);
    ckpt.config = j.at("model").get<ModelConfig>();
    if (j.contains("meta")) ckpt.meta = j.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
  }
  while (!r.done()) {
    std::string name = r.str(r.u16());
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeF32) throw CheckpointError("unsupported tensor dtype " + std::to_string(dtype) + " for " + name);
    Shape dims(r.u8());
    for (auto& d : dims) d = r.u32();
    Tensor<float> t(dims);
    for (auto& v : t.storage()) v = r.f32();
    if (name.starts_with(kExtraPrefix)) {
      ckpt.extra.emplace_back(name.substr(1), std::move(t));
    } else {
      ckpt.params.add(name, std::move(t));
    }
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace netconv::model
