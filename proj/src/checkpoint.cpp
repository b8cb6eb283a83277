#include "sdd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "sdd/error.hpp"

namespace sdd {
namespace {

constexpr char kMagic[8] = {'S', 'D', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr const char* kMomentPrefixM = "adam.m/";
constexpr const char* kMomentPrefixV = "adam.v/";

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, const Matrix<float>& m) {
    str(name);
    u32(2);
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) u32(std::bit_cast<std::uint32_t>(m.data()[i]));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw Error("checkpoint is truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void magic() {
    need(sizeof(kMagic));
    if (std::memcmp(in_.data(), kMagic, sizeof(kMagic)) != 0) throw Error("not a checkpoint file (bad magic)");
    pos_ += sizeof(kMagic);
  }
  std::pair<std::string, Matrix<float>> tensor() {
    std::string name = str();
    const auto ndim = u32();
    if (ndim != 2) throw Error("checkpoint tensor '" + name + "' has unsupported rank");
    const auto rows = u64();
    const auto cols = u64();
    need(rows * cols * 4);
    Matrix<float> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<float>(u32());
    return {std::move(name), std::move(m)};
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(Checkpoint::kVersion);
  w.u64(ckpt.config.fingerprint());
  w.str(ckpt.config.to_json());
  w.u64(ckpt.step);
  w.str(ckpt.metadata);
  const bool with_moments = ckpt.adam_m.size() > 0;
  if (with_moments && (ckpt.adam_m.size() != ckpt.params.size() || ckpt.adam_v.size() != ckpt.params.size())) {
    throw Error("checkpoint optimizer moments do not match parameters");
  }
  w.u32(static_cast<std::uint32_t>(ckpt.params.size() * (with_moments ? 3 : 1)));
  for (const auto& t : ckpt.params.tensors) w.tensor(t.name, t.value);
  if (with_moments) {
    for (const auto& t : ckpt.adam_m.tensors) w.tensor(kMomentPrefixM + t.name, t.value);
    for (const auto& t : ckpt.adam_v.tensors) w.tensor(kMomentPrefixV + t.name, t.value);
  }
  return w.take();
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic();
  const auto version = r.u32();
  if (version != Checkpoint::kVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  const auto fingerprint = r.u64();
  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_json(r.str());
  if (ckpt.config.fingerprint() != fingerprint) throw Error("checkpoint config fingerprint is inconsistent");
  ckpt.step = r.u64();
  ckpt.metadata = r.str();
  const auto count = r.u32();
  const auto shapes = parameter_shapes(ckpt.config);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, value] = r.tensor();
    if (name.starts_with(kMomentPrefixM)) {
      ckpt.adam_m.tensors.push_back({name.substr(std::strlen(kMomentPrefixM)), std::move(value)});
    } else if (name.starts_with(kMomentPrefixV)) {
      ckpt.adam_v.tensors.push_back({name.substr(std::strlen(kMomentPrefixV)), std::move(value)});
    } else {
      ckpt.params.tensors.push_back({std::move(name), std::move(value)});
    }
  }
  if (!r.done()) throw Error("trailing bytes after checkpoint tensors");

  auto check = [&shapes](const ParameterSet<float>& set, const char* what) {
    if (set.size() != shapes.size()) throw Error(std::string("checkpoint ") + what + " tensor count mismatch");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      const auto& t = set.tensors[i];
      if (t.name != shapes[i].first || t.value.rows() != shapes[i].second.first ||
          t.value.cols() != shapes[i].second.second) {
        throw Error(std::string("checkpoint ") + what + " tensor '" + t.name + "' does not match the config");
      }
    }
  };
  check(ckpt.params, "parameter");
  if (ckpt.adam_m.size() > 0 || ckpt.adam_v.size() > 0) {
    check(ckpt.adam_m, "moment");
    check(ckpt.adam_v, "moment");
  }
  if (!ckpt.params.all_finite()) throw Error("checkpoint holds non-finite parameters");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  // Write-then-rename so a crash never leaves a half-written checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void require_fingerprint(const Checkpoint& ckpt, const ModelConfig& expected) {
  if (ckpt.config.fingerprint() != expected.fingerprint()) {
    throw Error("checkpoint model config does not match the run config (fingerprint mismatch)");
  }
}

}  // namespace sdd
