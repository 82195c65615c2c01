#include <openssl/evp.h>

#include <cstring>
#include <fstream>

#include "helio/error.hpp"
#include "helio/trainer.hpp"

namespace helio {

namespace fs = std::filesystem;

namespace {

enum : std::uint8_t { kFloat32 = 0, kInt64 = 1 };
constexpr std::size_t kDigestBytes = 32;

void sha256(const unsigned char* data, std::size_t n, unsigned char out[kDigestBytes]) {
  unsigned int len = 0;
  if (EVP_Digest(data, n, out, &len, EVP_sha256(), nullptr) != 1 || len != kDigestBytes) {
    throw Error(ErrorKind::IoFailure, "SHA-256 failed");
  }
}

class Writer {
 public:
  template <typename U>
  void put(U v) {
    for (std::size_t b = 0; b < sizeof(U); ++b) buf.push_back(static_cast<unsigned char>(static_cast<std::uint64_t>(v) >> (8 * b)));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf.insert(buf.end(), c, c + n);
  }
  void block(const std::string& name, std::uint8_t dtype, const Shape& shape, const void* payload, std::size_t elem) {
    put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    put<std::uint8_t>(dtype);
    put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put<std::uint64_t>(d);
    const std::size_t n = shape_numel(shape);
    const auto* p = static_cast<const unsigned char*>(payload);
    for (std::size_t i = 0; i < n; ++i) {
      if (elem == 4) {
        std::uint32_t v;
        std::memcpy(&v, p + 4 * i, 4);
        put(v);
      } else {
        std::uint64_t v;
        std::memcpy(&v, p + 8 * i, 8);
        put(v);
      }
    }
  }
  std::vector<unsigned char> buf;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& b, std::size_t end, const fs::path& p) : buf_(b), end_(end), path_(p) {}
  template <typename U>
  U get() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<std::uint64_t>(buf_[pos_ + b]) << (8 * b);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) {
    if (n > end_ - pos_) throw Error(ErrorKind::IoFailure, path_.string() + ": checkpoint truncated");
  }
  const std::vector<unsigned char>& buf_;
  std::size_t pos_ = 0, end_;
  fs::path path_;
};

}  // namespace

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(ck.architecture == Architecture::Pix2Pix ? 0u : 1u);
  w.put<std::uint32_t>(ck.epoch);
  w.put<std::uint64_t>(ck.config_text.size());
  w.bytes(ck.config_text.data(), ck.config_text.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size() + 1));
  for (const auto& [name, t] : ck.tensors) w.block(name, kFloat32, t.shape(), t.data(), 4);
  w.block("adam.step", kInt64, {}, &ck.adam_step, 8);
  unsigned char digest[kDigestBytes];
  sha256(w.buf.data(), w.buf.size(), digest);
  w.bytes(digest, kDigestBytes);

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw Error(ErrorKind::IoFailure, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::IoFailure, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string() + ": cannot open checkpoint");
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 + kDigestBytes || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
    throw Error(ErrorKind::IoFailure, path.string() + ": not a checkpoint file");
  }
  const std::size_t body = buf.size() - kDigestBytes;
  unsigned char digest[kDigestBytes];
  sha256(buf.data(), body, digest);
  if (std::memcmp(digest, buf.data() + body, kDigestBytes) != 0) {
    throw Error(ErrorKind::DigestMismatch, path.string() + ": checkpoint digest does not match contents");
  }

  Reader r(buf, body, path);
  r.str(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::IoFailure, path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto tag = r.get<std::uint32_t>();
  if (tag > 1) throw Error(ErrorKind::IoFailure, path.string() + ": unknown architecture tag");
  ck.architecture = tag == 0 ? Architecture::Pix2Pix : Architecture::Pix2PixHD;
  ck.epoch = r.get<std::uint32_t>();
  ck.config_text = r.str(r.get<std::uint64_t>());
  const auto blocks = r.get<std::uint32_t>();
  for (std::uint32_t b = 0; b < blocks; ++b) {
    const std::string name = r.str(r.get<std::uint32_t>());
    const auto dtype = r.get<std::uint8_t>();
    Shape shape(r.get<std::uint32_t>());
    for (std::size_t& d : shape) d = r.get<std::uint64_t>();
    if (dtype == kInt64 && shape.empty()) {
      ck.adam_step = r.get<std::int64_t>();
      continue;
    }
    if (dtype != kFloat32) throw Error(ErrorKind::IoFailure, path.string() + ": unknown dtype in block " + name);
    Tensor t(shape);
    for (float& v : t.values()) {
      const auto bits = r.get<std::uint32_t>();
      std::memcpy(&v, &bits, 4);
    }
    ck.tensors.emplace(name, std::move(t));
  }
  if (!r.done()) throw Error(ErrorKind::IoFailure, path.string() + ": trailing bytes before digest");
  return ck;
}

Checkpoint capture_checkpoint(Architecture arch, std::uint32_t epoch, const TrainConfig& cfg, Generator& g,
                              nn::Adam* opt) {
  Checkpoint ck;
  ck.architecture = arch;
  ck.epoch = epoch;
  ck.config_text = to_config_text(cfg);
  const nn::ParameterRefs refs = g.parameters();
  for (const nn::Parameter* p : refs.params) ck.tensors.emplace(p->name, p->value);
  for (const nn::Buffer* b : refs.buffers) ck.tensors.emplace(b->name, b->value);
  if (opt) {
    nn::Adam& o = *opt;
    for (std::size_t i = 0; i < o.params().size(); ++i) {
      ck.tensors.emplace("adam.m." + o.params()[i]->name, o.first_moments()[i]);
      ck.tensors.emplace("adam.v." + o.params()[i]->name, o.second_moments()[i]);
    }
    ck.adam_step = o.step_count();
  }
  return ck;
}

void restore_generator(const Checkpoint& ck, Architecture expected, Generator& g) {
  if (ck.architecture != expected) {
    throw Error(ErrorKind::ArchitectureMismatch,
                "checkpoint holds a " + to_string(ck.architecture) + " generator, expected " + to_string(expected));
  }
  auto copy = [&ck](const std::string& name, Tensor& dst) {
    const auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw Error(ErrorKind::ArchitectureMismatch, "checkpoint has no tensor " + name);
    if (it->second.shape() != dst.shape()) {
      throw Error(ErrorKind::ArchitectureMismatch, "tensor " + name + " is " + shape_string(it->second.shape()) +
                                                       " in the checkpoint, model expects " + shape_string(dst.shape()));
    }
    dst = it->second;
  };
  const nn::ParameterRefs refs = g.parameters();
  for (nn::Parameter* p : refs.params) copy(p->name, p->value);
  for (nn::Buffer* b : refs.buffers) copy(b->name, b->value);
}

LoadedGenerator load_generator(const fs::path& path, std::optional<Architecture> expected) {
  const Checkpoint ck = load_checkpoint(path);
  if (expected && *expected != ck.architecture) {
    throw Error(ErrorKind::ArchitectureMismatch,
                path.string() + " holds a " + to_string(ck.architecture) + " generator, not " + to_string(*expected));
  }
  LoadedGenerator out;
  out.config = parse_config(ck.config_text);
  out.config.architecture = ck.architecture;
  out.epoch = ck.epoch;
  out.generator = make_generator(out.config);
  restore_generator(ck, ck.architecture, *out.generator);
  return out;
}

}  // namespace helio
