#include "concss/wav.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "concss/common.hpp"

namespace concss {
namespace {

std::uint32_t read_u32(const std::vector<char>& buf, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(buf[pos + i]);
  return v;
}

std::uint16_t read_u16(const std::vector<char>& buf, std::size_t pos) {
  return static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos]) |
                                    (static_cast<std::uint8_t>(buf[pos + 1]) << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open wav file: " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw Error("not a RIFF/WAVE file: " + name);

  bool have_fmt = false;
  std::uint32_t sample_rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id(buf.data() + pos, 4);
    const std::uint32_t size = read_u32(buf, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (size < 16 || body + 16 > buf.size()) throw Error("truncated fmt chunk: " + name);
      const std::uint16_t format = read_u16(buf, body);
      const std::uint16_t channels = read_u16(buf, body + 2);
      sample_rate = read_u32(buf, body + 4);
      const std::uint16_t bits = read_u16(buf, body + 14);
      if (format != 1) throw Error("unsupported wav encoding (PCM only): " + name);
      if (channels != 1)
        throw Error("unsupported channel count " + std::to_string(channels) + ": " + name);
      if (bits != 16) throw Error("unsupported bit depth " + std::to_string(bits) + ": " + name);
      if (sample_rate == 0) throw Error("zero sample rate: " + name);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw Error("data chunk before fmt chunk: " + name);
      if (body + size > buf.size() || size % 2 != 0) throw Error("truncated data chunk: " + name);
      const std::size_t n = size / 2;
      if (n == 0) throw Error("empty wav file: " + name);
      Waveform w;
      w.sample_rate = sample_rate;
      w.samples.resize(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        const auto code = static_cast<std::int16_t>(read_u16(buf, body + 2 * i));
        w.samples[static_cast<Eigen::Index>(i)] = code / 32768.0;
      }
      return w;
    }
    pos = body + size + (size & 1u);
  }
  throw Error("truncated wav file (no data chunk): " + name);
}

std::vector<std::int16_t> quantize_pcm16(const Eigen::VectorXd& samples) {
  std::vector<std::int16_t> codes(static_cast<std::size_t>(samples.size()));
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    const double v = std::clamp(std::round(samples[i] * 32768.0), -32768.0, 32767.0);
    codes[static_cast<std::size_t>(i)] = static_cast<std::int16_t>(v);
  }
  return codes;
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  const auto codes = quantize_pcm16(wave.samples);
  const auto data_bytes = static_cast<std::uint32_t>(codes.size() * 2);
  const auto rate = static_cast<std::uint32_t>(std::lround(wave.sample_rate));
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, rate);
  put_u32(out, rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (std::int16_t c : codes) put_u16(out, static_cast<std::uint16_t>(c));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write wav file: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace concss
