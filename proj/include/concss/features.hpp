#ifndef CONCSS_FEATURES_HPP
#define CONCSS_FEATURES_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "concss/corpus.hpp"
#include "concss/wav.hpp"

namespace concss {

struct FeatureParams {
  double frame_len = 0.025;  ///< seconds
  double hop = 0.010;        ///< seconds
  double f0_min = 80.0;      ///< Hz; a frame must hold two periods of it
  double f0_max = 400.0;
  double voicing_threshold = 0.3;
  double silence_floor_db = -50.0;  ///< dBFS, frame RMS below this is unvoiced
  int n_mels = 40;
  int n_ceps = 13;
  int fft_len = 512;
  int hash_dim = 1024;
  double energy_floor = 1e-10;

  int frame_samples(double sample_rate) const;
  int hop_samples(double sample_rate) const;
};

/// Per-frame analysis of one waveform. All tracks share the frame grid.
struct FrameTrack {
  double hop = 0.0;
  double frame_len = 0.0;
  double sample_rate = 0.0;
  Eigen::VectorXd f0;       ///< Hz, 0 for unvoiced frames
  Eigen::VectorXd energy;   ///< frame RMS
  Eigen::MatrixXd cepstra;  ///< frames x C

  Eigen::Index frames() const { return f0.size(); }
};

struct TextFeatures {
  Eigen::VectorXd vector;  ///< unit L2 norm, or all zero for empty text
  int token_count = 0;
};

inline constexpr int kProsodyDim = 6;
/// {mean log-F0 (voiced), std log-F0, voiced ratio, mean energy, std energy,
///  duration in seconds}. Log is natural log of Hz.
using ProsodyStats = Eigen::Matrix<double, kProsodyDim, 1>;

/// Number of complete frames; throws when the waveform is shorter than one.
Eigen::Index frame_count(const Waveform& w, const FeatureParams& p);

/// Autocorrelation pitch tracker. For each frame the normalized
/// autocorrelation is searched over lags [sr/f0_max, sr/f0_min]; among
/// local maxima within 10% of the best value the shortest lag wins, which
/// suppresses octave-down errors on harmonic-rich frames.
Eigen::VectorXd extract_f0(const Waveform& w, const FeatureParams& p);

Eigen::VectorXd extract_energy(const Waveform& w, const FeatureParams& p);

/// Hann window, power spectrum, triangular mel filterbank spanning 0 Hz to
/// Nyquist, floored log, DCT-II scaled by sqrt(2/n_mels), first n_ceps kept.
Eigen::MatrixXd extract_mel_cepstrum(const Waveform& w, const FeatureParams& p);

/// n_mels x (fft_len/2 + 1) triangular filter weights on an HTK mel scale.
Eigen::MatrixXd mel_filterbank(int n_mels, int fft_len, double sample_rate);

/// n_ceps x n_mels DCT-II matrix with sqrt(2/n_mels) scaling.
Eigen::MatrixXd dct_matrix(int n_ceps, int n_mels);

FrameTrack analyze(const Waveform& w, const FeatureParams& p);

/// Hashed unigram + adjacent-bigram counts (FNV-1a 64, modulo hash_dim),
/// L2-normalized. Bigrams hash the two tokens joined by a single space.
TextFeatures featurize_text(const std::string& text, int hash_dim);

ProsodyStats summarize_prosody(const FrameTrack& track, double duration);

/// Per-utterance features consumed by the context encoders.
struct UtteranceFeatures {
  TextFeatures text;
  ProsodyStats prosody = ProsodyStats::Zero();
};

using UtteranceKey = std::pair<std::string, int>;

/// Feature lookup keyed by (conversation_id, index).
class FeatureStore {
 public:
  void put(const UtteranceKey& key, UtteranceFeatures f) { map_[key] = std::move(f); }
  const UtteranceFeatures& at(const std::string& conversation, int index) const;
  bool contains(const std::string& conversation, int index) const {
    return map_.count({conversation, index}) != 0;
  }
  std::size_t size() const { return map_.size(); }
  int hash_dim() const;
  const std::map<UtteranceKey, UtteranceFeatures>& entries() const { return map_; }

  /// JSON lines: conversation_id, index, token_count, sparse text features
  /// as parallel index/value arrays, and the prosody vector.
  void save(const std::filesystem::path& path) const;
  static FeatureStore load(const std::filesystem::path& path, int hash_dim);

 private:
  std::map<UtteranceKey, UtteranceFeatures> map_;
};

/// Featurizes every utterance of the corpus. `workers` > 1 splits the
/// utterances across threads; the result does not depend on the count.
/// When `cache_dir` is non-empty a CCF1 frame cache is written per utterance.
FeatureStore featurize_corpus(const Corpus& corpus, const FeatureParams& p, int workers = 1,
                              const std::filesystem::path& cache_dir = {});

/// CCF1 binary frame cache (little-endian): magic, sample_rate u32,
/// hop_us u32, n_frames u32, C u32, then f0, energy and row-major cepstra
/// as f32.
void write_frame_cache(const std::filesystem::path& path, const FrameTrack& track);
FrameTrack read_frame_cache(const std::filesystem::path& path);

}  // namespace concss

#endif  // CONCSS_FEATURES_HPP
