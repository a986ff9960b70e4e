#include "t2i/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "t2i/decoder.hpp"
#include "t2i/errors.hpp"
#include "t2i/ops.hpp"

namespace t2i {

namespace {

constexpr char kMagic[8] = {'T', '2', 'I', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const NamedTensor& t) {
    str(t.name);
    uint(static_cast<std::uint8_t>(t.trainable ? 1 : 0));
    uint(static_cast<std::uint32_t>(t.tensor.ndim()));
    for (auto d : t.tensor.shape()) uint(static_cast<std::uint64_t>(d));
    for (double v : t.tensor.data()) f64(v);
  }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& buf, std::size_t end, std::string path)
      : buf_(buf), end_(end), path_(std::move(path)) {}

  const unsigned char* take(std::size_t n, const char* what) {
    if (n > end_ - pos_) {
      throw FormatError(path_ + ": truncated while reading " + what + " at byte offset " + std::to_string(pos_));
    }
    const auto* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <class T>
  T uint(const char* what) {
    const auto* p = take(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }
  std::string str(const char* what) {
    const auto n = uint<std::uint32_t>(what);
    const auto* p = take(n, what);
    return {reinterpret_cast<const char*>(p), n};
  }
  NamedTensor tensor() {
    NamedTensor t;
    t.name = str("tensor name");
    t.trainable = uint<std::uint8_t>("trainable flag") != 0;
    const auto ndim = uint<std::uint32_t>("tensor rank");
    if (ndim > 8) throw FormatError(path_ + ": tensor '" + t.name + "' has implausible rank " + std::to_string(ndim));
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      const auto d = uint<std::uint64_t>("tensor dims");
      if (d == 0 || d > (end_ - pos_) / 8) {
        throw FormatError(path_ + ": tensor '" + t.name + "' has invalid dimension " + std::to_string(d));
      }
      shape.push_back(static_cast<std::size_t>(d));
      numel *= static_cast<std::size_t>(d);
    }
    if (numel > (end_ - pos_) / 8) {
      throw FormatError(path_ + ": truncated in data of tensor '" + t.name + "' at byte offset " +
                        std::to_string(pos_));
    }
    std::vector<double> data(numel);
    for (auto& v : data) v = f64("tensor data");
    t.tensor = Tensor(std::move(shape), std::move(data));
    return t;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<unsigned char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

std::uint32_t crc32_of(const unsigned char* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

struct ParsedFile {
  std::string config_text;
  std::vector<NamedTensor> tensors;
  std::optional<OptimizerRecord> optimizer;
};

ParsedFile parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path + ": not a checkpoint (bad magic bytes)");
  }
  if (buf.size() < sizeof(kMagic) + 4 + 4) throw FormatError(path + ": truncated header");
  Reader header(buf, buf.size(), path);
  header.take(sizeof(kMagic), "magic");
  const auto version = header.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionError(path + ": checkpoint format version " + std::to_string(version) + ", this build reads " +
                       std::to_string(kCheckpointVersion));
  }
  const std::size_t body = buf.size() - 4;
  Reader trailer(buf, buf.size(), path);
  trailer.take(body, "body");
  const auto stored_crc = trailer.uint<std::uint32_t>("crc");
  if (crc32_of(buf.data(), body) != stored_crc) {
    throw FormatError(path + ": CRC-32 mismatch (file truncated or corrupted)");
  }

  Reader r(buf, body, path);
  r.take(sizeof(kMagic) + 4, "header");
  ParsedFile f;
  f.config_text = r.str("config");
  const std::string constants = r.str("design constants");
  if (constants != design_constants()) {
    throw VersionError(path + ": checkpoint was written with different design constants:\n" + constants);
  }
  r.uint<std::uint64_t>("seed");
  const auto count = r.uint<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) f.tensors.push_back(r.tensor());
  if (r.uint<std::uint8_t>("optimizer flag") != 0) {
    OptimizerRecord o;
    o.step = r.uint<std::uint64_t>("optimizer step");
    o.lr = r.f64("lr");
    o.beta1 = r.f64("beta1");
    o.beta2 = r.f64("beta2");
    o.eps = r.f64("eps");
    const auto n = r.uint<std::uint32_t>("moment count");
    for (std::uint32_t i = 0; i < n; ++i) o.moments.push_back(r.tensor());
    f.optimizer = std::move(o);
  }
  if (r.pos() != body) {
    throw FormatError(path + ": " + std::to_string(body - r.pos()) + " unexpected trailing bytes before the CRC");
  }
  return f;
}

void check_names(const Generator& g, const std::vector<NamedTensor>& tensors, const std::string& path) {
  const auto& expected = g.parameters().entries();
  const std::size_t n = std::min(expected.size(), tensors.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = expected[i];
    const auto& t = tensors[i];
    if (e.name != t.name) {
      throw NameMismatchError(path + ": tensor " + std::to_string(i) + " is '" + t.name + "', the " +
                              to_string(g.config().variant) + " architecture expects '" + e.name + "'");
    }
    if (e.tensor.shape() != t.tensor.shape() || e.trainable != t.trainable) {
      throw NameMismatchError(path + ": tensor '" + t.name + "' has shape " + shape_str(t.tensor.shape()) +
                              ", expected " + shape_str(e.tensor.shape()));
    }
  }
  if (expected.size() != tensors.size()) {
    const std::string which = expected.size() > tensors.size() ? "missing tensor '" + expected[n].name + "'"
                                                               : "unexpected tensor '" + tensors[n].name + "'";
    throw NameMismatchError(path + ": " + which + " (file has " + std::to_string(tensors.size()) +
                            " tensors, architecture has " + std::to_string(expected.size()) + ")");
  }
}

void copy_into(const Generator& g, const std::vector<NamedTensor>& tensors) {
  const auto& entries = g.parameters().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor dst = entries[i].tensor;
    auto src = tensors[i].tensor.data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

}  // namespace

std::string design_constants() {
  std::ostringstream os;
  os.precision(17);
  os << "layer_norm_eps=" << kLayerNormEps << "\n"
     << "batch_norm_eps=" << kBatchNormEps << "\n"
     << "batch_norm_momentum=" << kBatchNormMomentum << "\n"
     << "leaky_relu_slope=" << kLeakySlope << "\n"
     << "init=glorot_uniform;position_embeddings=normal(0,0.02);bias=0;gamma=1\n"
     << "padding=same;extra_pixel=bottom_right\n"
     << "transpose_kernel=" << kTransposeKernel << "\n"
     << "residual_kernel=" << kResidualKernel << "\n"
     << "head_kernel=" << kHeadKernel << "\n";
  return os.str();
}

void save_checkpoint(const Generator& g, const std::string& path, const OptimizerRecord* optimizer) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.uint(kCheckpointVersion);
  w.str(to_text(g.config()));
  w.str(design_constants());
  w.uint(static_cast<std::uint64_t>(g.config().seed));
  const auto& entries = g.parameters().entries();
  w.uint(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) w.tensor(e);
  w.uint(static_cast<std::uint8_t>(optimizer ? 1 : 0));
  if (optimizer) {
    w.uint(optimizer->step);
    w.f64(optimizer->lr);
    w.f64(optimizer->beta1);
    w.f64(optimizer->beta2);
    w.f64(optimizer->eps);
    w.uint(static_cast<std::uint32_t>(optimizer->moments.size()));
    for (const auto& m : optimizer->moments) w.tensor(m);
  }
  auto& buf = w.buffer();
  w.uint(crc32_of(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed for checkpoint " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  ParsedFile f = parse_file(path);
  Generator g(model_config_from_text(f.config_text));
  check_names(g, f.tensors, path);
  copy_into(g, f.tensors);
  return {std::move(g), std::move(f.optimizer)};
}

std::optional<OptimizerRecord> load_checkpoint_into(Generator& g, const std::string& path) {
  ParsedFile f = parse_file(path);
  check_names(g, f.tensors, path);
  copy_into(g, f.tensors);
  return std::move(f.optimizer);
}

}  // namespace t2i
