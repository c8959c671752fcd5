#include "xhved/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "xhved/errors.hpp"

namespace xhved {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'X', 'H', 'V', 'D'};
constexpr std::uint8_t kF32 = 1, kF64 = 2;

class Writer {
 public:
  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(V));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void str(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void entries(const ParamList<float>& list) {
    put(static_cast<std::uint32_t>(list.size()));
    for (const auto& e : list) {
      str(e.name);
      put(kF32);
      put(static_cast<std::uint32_t>(e.tensor.rank()));
      for (std::size_t d : e.tensor.shape()) put(static_cast<std::uint64_t>(d));
      bytes(e.tensor.data().data(), e.tensor.numel() * sizeof(float));
    }
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> data) : buf_(std::move(data)) {}

  void need(std::size_t n, const char* what) {
    if (pos_ + n > buf_.size())
      throw ParseError("truncated", std::string("file ends inside ") + what);
  }
  template <typename V>
  V get(const char* what) {
    need(sizeof(V), what);
    V v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string str(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  ParamList<float> entries(const char* what) {
    const auto count = get<std::uint32_t>(what);
    ParamList<float> out;
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name = str(what);
      const auto dtype = get<std::uint8_t>(what);
      if (dtype != kF32 && dtype != kF64)
        throw ParseError("dtype", "unknown dtype code " + std::to_string(dtype) + " for " + name);
      const auto rank = get<std::uint32_t>(what);
      if (rank > 8) throw ParseError("rank", "implausible rank for " + name);
      Shape shape;
      std::size_t n = 1;
      for (std::uint32_t r = 0; r < rank; ++r) {
        shape.push_back(get<std::uint64_t>(what));
        n *= shape.back();
      }
      const std::size_t width = dtype == kF32 ? 4 : 8;
      if (n > (buf_.size() - pos_) / width) throw ParseError("truncated", "tensor data of " + name);
      Tensor<float> t(shape);
      if (dtype == kF32) {
        std::memcpy(t.data().data(), buf_.data() + pos_, n * 4);
      } else {
        for (std::size_t k = 0; k < n; ++k) {
          double d;
          std::memcpy(&d, buf_.data() + pos_ + 8 * k, 8);
          t.data()[k] = static_cast<float>(d);
        }
      }
      pos_ += n * width;
      out.push_back({std::move(name), std::move(t)});
    }
    return out;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, 4);
  w.put(kCheckpointVersion);
  w.str(ckpt.model.serialize());
  w.put(ckpt.step);
  w.entries(ckpt.parameters);
  w.put(ckpt.optimizer_steps);
  w.entries(ckpt.optimizer_state);
  w.str(ckpt.rng_state);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  Reader r(std::vector<char>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>()));
  r.need(4, "magic");
  char magic[4];
  for (char& c : magic) c = r.get<char>("magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw ParseError("magic", "not an XHVD checkpoint");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw ParseError("version", "unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.model = ModelConfig::parse(r.str("model config"));
  c.step = r.get<std::uint64_t>("step");
  c.parameters = r.entries("parameters");
  c.optimizer_steps = r.get<std::uint64_t>("optimizer steps");
  c.optimizer_state = r.entries("optimizer state");
  c.rng_state = r.str("rng state");
  if (!r.done()) throw ParseError("trailing", "unexpected bytes after the RNG state");
  return c;
}

void apply_parameters(const Checkpoint& ckpt, XhvedModel<float>& model) {
  require(ckpt.model == model.config(), "apply_parameters: model config differs from checkpoint");
  auto dst = model.parameters();
  copy_parameters(ckpt.parameters, dst);
}

}  // namespace xhved
