#include "concss/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "concss/common.hpp"

namespace concss {
namespace {

class Writer {
 public:
  void bytes(const char* p, std::size_t n) { buf_.append(p, n); }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    le(bits);
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string buf) : buf_(std::move(buf)) {}
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw Error("corrupted checkpoint: truncated at byte " + std::to_string(pos_));
  }
  std::string tag() {
    need(4);
    std::string t = buf_.substr(pos_, 4);
    pos_ += 4;
    return t;
  }
  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  double f64() {
    const auto bits = le<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

template <typename P>
void write_values(Writer& w, const P& params) {
  w.le<std::uint64_t>(static_cast<std::uint64_t>(params.size()));
  params.for_each_block([&](const char*, const double* p, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) w.f64(p[i]);
  });
}

template <typename P>
void read_values(Reader& r, P& params) {
  const auto count = r.le<std::uint64_t>();
  if (count != static_cast<std::uint64_t>(params.size()))
    throw Error("corrupted checkpoint: parameter count " + std::to_string(count) + " does not match dims");
  params.for_each_block([&](const char*, double* p, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) p[i] = r.f64();
  });
}

void write_encoder(Writer& w, const char* tag, const EncoderParams& p) {
  w.bytes(tag, 4);
  w.le<std::uint32_t>(5);
  for (int d : {p.dims.input_dim, p.dims.embed, p.dims.hidden, p.dims.output, p.dims.buckets})
    w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
  write_values(w, p);
}

EncoderParams read_encoder(Reader& r) {
  if (r.le<std::uint32_t>() != 5) throw Error("corrupted checkpoint: encoder block needs 5 dims");
  EncoderDims d;
  d.input_dim = static_cast<int>(r.le<std::uint32_t>());
  d.embed = static_cast<int>(r.le<std::uint32_t>());
  d.hidden = static_cast<int>(r.le<std::uint32_t>());
  d.output = static_cast<int>(r.le<std::uint32_t>());
  d.buckets = static_cast<int>(r.le<std::uint32_t>());
  EncoderParams p = EncoderParams::zeros(d);
  read_values(r, p);
  return p;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Writer w;
  w.bytes("CCKP", 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint64_t>(ckpt.meta.seed);
  w.le<std::uint64_t>(ckpt.meta.step);
  w.le<std::uint32_t>(ckpt.apm ? 3 : 2);
  write_encoder(w, "ENCT", ckpt.encoders.text);
  write_encoder(w, "ENCA", ckpt.encoders.audio);
  if (ckpt.apm) {
    w.bytes("APM1", 4);
    w.le<std::uint32_t>(3);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.apm->context_dim));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.apm->attn_dim));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(kProsodyDim));
    write_values(w, *ckpt.apm);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write checkpoint: " + path.string());
  f.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint: " + path.string());
  Reader r(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));
  if (r.tag() != "CCKP") throw Error("not a checkpoint file: " + path.string());
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw Error("checkpoint version mismatch: file has " + std::to_string(version) + ", expected " +
                std::to_string(kCheckpointVersion));
  Checkpoint ckpt;
  ckpt.meta.seed = r.le<std::uint64_t>();
  ckpt.meta.step = r.le<std::uint64_t>();
  const auto blocks = r.le<std::uint32_t>();
  bool have_text = false, have_audio = false;
  for (std::uint32_t b = 0; b < blocks; ++b) {
    const std::string tag = r.tag();
    if (tag == "ENCT") {
      ckpt.encoders.text = read_encoder(r);
      have_text = true;
    } else if (tag == "ENCA") {
      ckpt.encoders.audio = read_encoder(r);
      have_audio = true;
    } else if (tag == "APM1") {
      if (r.le<std::uint32_t>() != 3) throw Error("corrupted checkpoint: APM block needs 3 dims");
      const auto ctx = static_cast<int>(r.le<std::uint32_t>());
      const auto attn = static_cast<int>(r.le<std::uint32_t>());
      if (r.le<std::uint32_t>() != static_cast<std::uint32_t>(kProsodyDim))
        throw Error("checkpoint dimension mismatch: APM prosody width");
      ApmParams apm = ApmParams::zeros(ctx, attn);
      read_values(r, apm);
      ckpt.apm = std::move(apm);
    } else {
      throw Error("corrupted checkpoint: unknown block tag '" + tag + "'");
    }
  }
  if (!have_text || !have_audio) throw Error("corrupted checkpoint: missing encoder block");
  if (!r.done()) throw Error("corrupted checkpoint: trailing bytes");
  return ckpt;
}

void require_dims(const EncoderParams& params, const EncoderDims& expected, const char* what) {
  const EncoderDims& d = params.dims;
  auto fail = [&](const char* field, int got, int want) {
    throw Error(std::string("checkpoint dimension mismatch (") + what + " " + field + "): checkpoint has " +
                std::to_string(got) + ", expected " + std::to_string(want));
  };
  if (d.input_dim != expected.input_dim) fail("input_dim", d.input_dim, expected.input_dim);
  if (d.embed != expected.embed) fail("embed", d.embed, expected.embed);
  if (d.hidden != expected.hidden) fail("hidden", d.hidden, expected.hidden);
  if (d.output != expected.output) fail("output d", d.output, expected.output);
  if (d.buckets != expected.buckets) fail("buckets", d.buckets, expected.buckets);
}

}  // namespace concss
