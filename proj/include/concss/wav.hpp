#ifndef CONCSS_WAV_HPP
#define CONCSS_WAV_HPP

#include <filesystem>
#include <vector>

#include <Eigen/Dense>

namespace concss {

/// Mono audio with samples nominally in [-1, 1].
struct Waveform {
  double sample_rate = 16000.0;
  Eigen::VectorXd samples;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Reads a mono 16-bit PCM WAV file. Samples are scaled by 1/32768.
Waveform read_wav(const std::filesystem::path& path);

/// Writes mono 16-bit PCM. Samples are clipped to the representable range
/// and rounded to the nearest integer code.
void write_wav(const std::filesystem::path& path, const Waveform& wave);

/// Quantizes to the same 16-bit codes `write_wav` would store.
std::vector<std::int16_t> quantize_pcm16(const Eigen::VectorXd& samples);

}  // namespace concss

#endif  // CONCSS_WAV_HPP
