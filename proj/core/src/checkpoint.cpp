#include "setdet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "setdet/config.hpp"
#include "setdet/errors.hpp"
#include "setdet/rng.hpp"

namespace setdet {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'T', 'D', 'E', 'T', 'C', 'K'};
constexpr std::size_t kHeaderSize = sizeof kMagic + 4 + 8;

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    buf_.append(s);
  }
  void array(const NamedArray& a) {
    str(a.name);
    u32(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) u64(d);
    u64(a.values.size());
    for (double v : a.values) f64(v);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : p_(data), end_(data + size) {}

  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end_ - p_) < n) throw CorruptCheckpoint("checkpoint: truncated payload");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(*p_++);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(*p_++)) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(*p_++)) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u64();
    need(n);
    std::string s(p_, n);
    p_ += n;
    return s;
  }
  NamedArray array() {
    NamedArray a;
    a.name = str();
    const auto rank = u32();
    if (rank > 8) throw CorruptCheckpoint("checkpoint: implausible rank for " + a.name);
    for (std::uint32_t i = 0; i < rank; ++i) a.shape.push_back(u64());
    const auto n = u64();
    if (n != shape_size(a.shape)) throw CorruptCheckpoint("checkpoint: size/shape mismatch for " + a.name);
    need(n * 8);
    a.values.resize(n);
    for (auto& v : a.values) v = f64();
    return a;
  }
  bool done() const { return p_ == end_; }

 private:
  const char* p_;
  const char* end_;
};

std::uint64_t checksum(std::string_view bytes) { return hash_string(bytes); }

void write_arrays(Writer& w, const std::vector<NamedArray>& arrays) {
  w.u64(arrays.size());
  for (const auto& a : arrays) w.array(a);
}

std::vector<NamedArray> read_arrays(Reader& r) {
  const auto n = r.u64();
  std::vector<NamedArray> out;
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(r.array());
  return out;
}

}  // namespace

const NamedArray* Checkpoint::find_param(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return &p;
  return nullptr;
}

void load_parameters(DetectionModel& model, const Checkpoint& ckpt) {
  for (auto& p : model.parameters()) {
    const auto* src = ckpt.find_param(p.name);
    if (!src) throw ContractError("checkpoint: missing parameter " + p.name);
    if (src->shape != p.tensor.shape())
      throw ContractError("checkpoint: parameter " + p.name + " has shape " + shape_string(src->shape) +
                          ", model expects " + shape_string(p.tensor.shape()));
    auto dst = p.tensor.mutable_values();
    std::copy(src->values.begin(), src->values.end(), dst.begin());
  }
}

DetectionModel model_from_checkpoint(const Checkpoint& ckpt) {
  DetectionModel model(ckpt.model_config);
  load_parameters(model, ckpt);
  return model;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  Writer body;
  body.str(ckpt.config_echo);
  body.str(model_config_to_json(ckpt.model_config).dump());
  const auto& o = ckpt.optimizer_config;
  for (double v : {o.lr, o.beta1, o.beta2, o.eps, o.weight_decay}) body.f64(v);
  body.u8(o.decoupled_weight_decay ? 1 : 0);
  body.u64(ckpt.seed);
  body.u64(ckpt.epoch);
  body.u64(ckpt.adam_step);
  write_arrays(body, ckpt.params);
  write_arrays(body, ckpt.adam_m);
  write_arrays(body, ckpt.adam_v);

  Writer file;
  for (char c : kMagic) file.u8(static_cast<std::uint8_t>(c));
  file.u32(kCheckpointVersion);
  file.u64(body.bytes().size());
  std::string out = file.bytes() + body.bytes();
  Writer tail;
  tail.u64(checksum(body.bytes()));
  out += tail.bytes();

  // Write to a sibling file and rename so a crash never leaves a torn checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("checkpoint: cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("checkpoint: write failed for " + path);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFile("checkpoint: cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw CorruptCheckpoint("checkpoint: " + path + " is not a checkpoint file");
  Reader head(bytes.data() + sizeof kMagic, 12);
  const auto version = head.u32();
  if (version != kCheckpointVersion)
    throw VersionMismatch("checkpoint: format version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  const auto length = head.u64();
  if (bytes.size() != kHeaderSize + length + 8) throw CorruptCheckpoint("checkpoint: " + path + " is truncated");
  const std::string_view body(bytes.data() + kHeaderSize, length);
  Reader tail(bytes.data() + kHeaderSize + length, 8);
  if (tail.u64() != checksum(body)) throw CorruptCheckpoint("checkpoint: checksum mismatch in " + path);

  Reader r(body.data(), body.size());
  Checkpoint c;
  c.config_echo = r.str();
  try {
    c.model_config = model_config_from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception&) {
    throw CorruptCheckpoint("checkpoint: unreadable model config");
  } catch (const ConfigError&) {
    throw CorruptCheckpoint("checkpoint: unreadable model config");
  }
  auto& o = c.optimizer_config;
  o.lr = r.f64();
  o.beta1 = r.f64();
  o.beta2 = r.f64();
  o.eps = r.f64();
  o.weight_decay = r.f64();
  o.decoupled_weight_decay = r.u8() != 0;
  c.seed = r.u64();
  c.epoch = r.u64();
  c.adam_step = r.u64();
  c.params = read_arrays(r);
  c.adam_m = read_arrays(r);
  c.adam_v = read_arrays(r);
  if (!r.done()) throw CorruptCheckpoint("checkpoint: trailing bytes in payload");
  return c;
}

}  // namespace setdet
