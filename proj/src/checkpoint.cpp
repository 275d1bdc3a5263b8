#include "rsmp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rsmp {

namespace {

class Writer {
 public:
  void bytes(const void* data, std::size_t n) { out_.append(static_cast<const char*>(data), n); }
  template <typename T>
  void uint(T v) {
    for (std::size_t b = 0; b < sizeof(T); ++b) out_.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
  }
  void string(const std::string& s) {
    uint<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}

  template <typename T>
  T uint(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) {
      v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + b])) << (8 * b);
    }
    pos_ += sizeof(T);
    return v;
  }
  std::string string(const char* what) {
    const auto n = uint<std::uint32_t>(what);
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
  }
  void skip(std::size_t n) {
    need(n, "header");
    pos_ += n;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes("RSMP", 4);
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.string(to_json(ckpt.config).dump());
  w.uint<std::uint64_t>(ckpt.iteration);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.string(t.name);
    w.uint<std::uint8_t>(0);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.value.shape.size()));
    for (Index d : t.value.shape) w.uint<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (Index i = 0; i < t.value.size(); ++i) w.uint<std::uint32_t>(std::bit_cast<std::uint32_t>(t.value.values[i]));
  }
  w.string(ckpt.rng_state);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "RSMP") != 0) {
    throw std::runtime_error("checkpoint: missing RSMP magic bytes");
  }
  Reader r(bytes);
  r.skip(4);
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const std::string config_text = r.string("config");
  try {
    ckpt.config = config_from_json(nlohmann::json::parse(config_text));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: embedded config is not valid JSON: ") + e.what());
  }
  ckpt.iteration = r.uint<std::uint64_t>("iteration");
  const auto count = r.uint<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.string("tensor name");
    const auto dtype = r.uint<std::uint8_t>("dtype");
    if (dtype != 0 && dtype != 1) throw std::runtime_error("checkpoint: tensor '" + t.name + "' has unknown dtype");
    const auto rank = r.uint<std::uint32_t>("rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.uint<std::uint32_t>("shape"));
    const Index n = numel(shape);
    r.need(static_cast<std::size_t>(n) * (dtype == 0 ? 4 : 8), "tensor payload");
    Tensor<float>::Array values(n);
    for (Index k = 0; k < n; ++k) {
      values[k] = dtype == 0 ? std::bit_cast<float>(r.uint<std::uint32_t>("payload"))
                             : static_cast<float>(std::bit_cast<double>(r.uint<std::uint64_t>("payload")));
    }
    t.value = Tensor<float>(std::move(shape), std::move(values));
    ckpt.tensors.push_back(std::move(t));
  }
  ckpt.rng_state = r.string("rng state");
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes after RNG state");
  return ckpt;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot create " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace rsmp
