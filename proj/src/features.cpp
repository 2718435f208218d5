#include "concss/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <thread>
#include <vector>

#include <json.hpp>
#include <unsupported/Eigen/FFT>

#include "concss/common.hpp"

namespace concss {

int FeatureParams::frame_samples(double sample_rate) const {
  return static_cast<int>(std::lround(frame_len * sample_rate));
}

int FeatureParams::hop_samples(double sample_rate) const {
  return static_cast<int>(std::lround(hop * sample_rate));
}

Eigen::Index frame_count(const Waveform& w, const FeatureParams& p) {
  if (w.sample_rate <= 0.0) throw Error("waveform sample rate must be positive");
  const int len = p.frame_samples(w.sample_rate);
  const int hop = p.hop_samples(w.sample_rate);
  if (len < 2 || hop < 1) throw Error("frame length and hop must be positive");
  if (w.samples.size() < len) throw Error("waveform shorter than one frame");
  return 1 + (w.samples.size() - len) / hop;
}

Eigen::VectorXd extract_f0(const Waveform& w, const FeatureParams& p) {
  if (!(p.f0_min > 0.0 && p.f0_min < p.f0_max)) throw Error("require 0 < f0_min < f0_max");
  const Eigen::Index n_frames = frame_count(w, p);
  const double sr = w.sample_rate;
  const int len = p.frame_samples(sr);
  const int hop = p.hop_samples(sr);
  if (len + 1 < static_cast<int>(std::floor(2.0 * sr / p.f0_min)))
    throw Error("frame must hold at least two periods of f0_min");

  const int lag_lo = std::max(1, static_cast<int>(std::floor(sr / p.f0_max)));
  const int lag_hi = std::min(len - 2, static_cast<int>(std::ceil(sr / p.f0_min)));
  const double floor_rms = std::pow(10.0, p.silence_floor_db / 20.0);

  Eigen::VectorXd f0 = Eigen::VectorXd::Zero(n_frames);
  Eigen::VectorXd r(lag_hi + 2);
  for (Eigen::Index f = 0; f < n_frames; ++f) {
    Eigen::VectorXd x = w.samples.segment(f * hop, len);
    const double rms = std::sqrt(x.squaredNorm() / len);
    if (rms < floor_rms) continue;
    x.array() -= x.mean();

    r.setZero();
    for (int lag = lag_lo - 1; lag <= lag_hi + 1; ++lag) {
      if (lag < 1 || lag >= len) continue;
      const Eigen::Index m = len - lag;
      const auto head = x.head(m);
      const auto tail = x.tail(m);
      const double denom = std::sqrt(head.squaredNorm() * tail.squaredNorm());
      r[lag] = denom > 0.0 ? head.dot(tail) / denom : 0.0;
    }
    double best = -2.0;
    for (int lag = lag_lo; lag <= lag_hi; ++lag) best = std::max(best, r[lag]);
    if (best < p.voicing_threshold) continue;

    int pick = -1;
    for (int lag = lag_lo; lag <= lag_hi; ++lag) {
      const bool left_ok = lag == lag_lo || r[lag] >= r[lag - 1];
      const bool right_ok = lag == lag_hi || r[lag] >= r[lag + 1];
      if (left_ok && right_ok && r[lag] >= 0.9 * best) {
        pick = lag;
        break;
      }
    }
    double lag = pick;
    if (pick > lag_lo && pick < lag_hi) {
      const double a = r[pick - 1], b = r[pick], c = r[pick + 1];
      const double curv = a - 2.0 * b + c;
      if (curv < 0.0) {
        const double delta = 0.5 * (a - c) / curv;
        if (std::abs(delta) < 1.0) lag += delta;
      }
    }
    f0[f] = std::clamp(sr / lag, p.f0_min, p.f0_max);
  }
  return f0;
}

Eigen::VectorXd extract_energy(const Waveform& w, const FeatureParams& p) {
  const Eigen::Index n_frames = frame_count(w, p);
  const int len = p.frame_samples(w.sample_rate);
  const int hop = p.hop_samples(w.sample_rate);
  Eigen::VectorXd e(n_frames);
  for (Eigen::Index f = 0; f < n_frames; ++f)
    e[f] = std::sqrt(w.samples.segment(f * hop, len).squaredNorm() / len);
  return e;
}

Eigen::MatrixXd mel_filterbank(int n_mels, int fft_len, double sample_rate) {
  auto to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto to_hz = [](double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); };
  const int bins = fft_len / 2 + 1;
  const double top = to_mel(sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (int i = 0; i < n_mels + 2; ++i) edges[i] = to_hz(top * i / (n_mels + 1));

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double hz = k * sample_rate / fft_len;
      if (hz > lo && hz < hi) fb(m, k) = hz <= mid ? (hz - lo) / (mid - lo) : (hi - hz) / (hi - mid);
    }
  }
  return fb;
}

Eigen::MatrixXd dct_matrix(int n_ceps, int n_mels) {
  Eigen::MatrixXd d(n_ceps, n_mels);
  const double scale = std::sqrt(2.0 / n_mels);
  for (int k = 0; k < n_ceps; ++k)
    for (int m = 0; m < n_mels; ++m) d(k, m) = scale * std::cos(M_PI * k * (m + 0.5) / n_mels);
  return d;
}

Eigen::MatrixXd extract_mel_cepstrum(const Waveform& w, const FeatureParams& p) {
  if (p.n_ceps < 1 || p.n_mels < p.n_ceps) throw Error("require n_mels >= n_ceps >= 1");
  const Eigen::Index n_frames = frame_count(w, p);
  const int len = p.frame_samples(w.sample_rate);
  const int hop = p.hop_samples(w.sample_rate);
  if (len > p.fft_len) throw Error("frame longer than fft_len");

  const Eigen::MatrixXd fb = mel_filterbank(p.n_mels, p.fft_len, w.sample_rate);
  const Eigen::MatrixXd dct = dct_matrix(p.n_ceps, p.n_mels);
  Eigen::VectorXd window(len);
  for (int i = 0; i < len; ++i) window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (len - 1));

  Eigen::FFT<double> fft;
  std::vector<double> frame(static_cast<std::size_t>(p.fft_len));
  std::vector<std::complex<double>> spectrum;
  Eigen::VectorXd power(p.fft_len / 2 + 1);
  Eigen::MatrixXd cepstra(n_frames, p.n_ceps);
  for (Eigen::Index f = 0; f < n_frames; ++f) {
    std::fill(frame.begin(), frame.end(), 0.0);
    for (int i = 0; i < len; ++i) frame[i] = w.samples[f * hop + i] * window[i];
    fft.fwd(spectrum, frame);
    for (int k = 0; k < power.size(); ++k) power[k] = std::norm(spectrum[static_cast<std::size_t>(k)]);
    const Eigen::VectorXd logmel = (fb * power).array().max(p.energy_floor).log().matrix();
    cepstra.row(f) = (dct * logmel).transpose();
  }
  return cepstra;
}

FrameTrack analyze(const Waveform& w, const FeatureParams& p) {
  FrameTrack t;
  t.hop = p.hop;
  t.frame_len = p.frame_len;
  t.sample_rate = w.sample_rate;
  t.f0 = extract_f0(w, p);
  t.energy = extract_energy(w, p);
  t.cepstra = extract_mel_cepstrum(w, p);
  return t;
}

TextFeatures featurize_text(const std::string& text, int hash_dim) {
  if (hash_dim < 64 || (hash_dim & (hash_dim - 1)) != 0)
    throw Error("hash_dim must be a power of two >= 64");
  std::istringstream in(text);
  std::vector<std::string> tokens{std::istream_iterator<std::string>(in),
                                  std::istream_iterator<std::string>()};
  TextFeatures out;
  out.token_count = static_cast<int>(tokens.size());
  out.vector = Eigen::VectorXd::Zero(hash_dim);
  const auto dim = static_cast<std::uint64_t>(hash_dim);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out.vector[static_cast<Eigen::Index>(fnv1a64(tokens[i]) % dim)] += 1.0;
    if (i + 1 < tokens.size())
      out.vector[static_cast<Eigen::Index>(fnv1a64(tokens[i] + " " + tokens[i + 1]) % dim)] += 1.0;
  }
  const double norm = out.vector.norm();
  if (norm > 0.0) out.vector /= norm;
  return out;
}

ProsodyStats summarize_prosody(const FrameTrack& track, double duration) {
  const Eigen::Index n = track.frames();
  if (n == 0) throw Error("empty frame track");
  double sum = 0.0, sq = 0.0;
  int voiced = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (track.f0[i] > 0.0) {
      const double l = std::log(track.f0[i]);
      sum += l;
      sq += l * l;
      ++voiced;
    }
  }
  ProsodyStats s = ProsodyStats::Zero();
  if (voiced > 0) {
    const double mean = sum / voiced;
    s[0] = mean;
    s[1] = std::sqrt(std::max(0.0, sq / voiced - mean * mean));
  }
  s[2] = static_cast<double>(voiced) / static_cast<double>(n);
  const double emean = track.energy.mean();
  s[3] = emean;
  s[4] = std::sqrt(std::max(0.0, (track.energy.array() - emean).square().mean()));
  s[5] = duration;
  return s;
}

const UtteranceFeatures& FeatureStore::at(const std::string& conversation, int index) const {
  auto it = map_.find({conversation, index});
  if (it == map_.end())
    throw Error("missing features for " + conversation + ":" + std::to_string(index));
  return it->second;
}

int FeatureStore::hash_dim() const {
  if (map_.empty()) throw Error("empty feature store");
  return static_cast<int>(map_.begin()->second.text.vector.size());
}

void FeatureStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write feature cache: " + path.string());
  for (const auto& [key, f] : map_) {
    nlohmann::ordered_json j;
    j["conversation_id"] = key.first;
    j["index"] = key.second;
    j["token_count"] = f.text.token_count;
    std::vector<int> idx;
    std::vector<double> val;
    for (Eigen::Index i = 0; i < f.text.vector.size(); ++i) {
      if (f.text.vector[i] != 0.0) {
        idx.push_back(static_cast<int>(i));
        val.push_back(f.text.vector[i]);
      }
    }
    j["text_indices"] = idx;
    j["text_values"] = val;
    j["prosody"] = std::vector<double>(f.prosody.data(), f.prosody.data() + kProsodyDim);
    out << j.dump() << '\n';
  }
}

FeatureStore FeatureStore::load(const std::filesystem::path& path, int hash_dim) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open feature cache: " + path.string());
  FeatureStore store;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      UtteranceFeatures f;
      f.text.token_count = j.at("token_count").get<int>();
      f.text.vector = Eigen::VectorXd::Zero(hash_dim);
      const auto idx = j.at("text_indices").get<std::vector<int>>();
      const auto val = j.at("text_values").get<std::vector<double>>();
      if (idx.size() != val.size()) throw Error("index/value length mismatch");
      for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] < 0 || idx[k] >= hash_dim) throw Error("text index out of range");
        f.text.vector[idx[k]] = val[k];
      }
      const auto pros = j.at("prosody").get<std::vector<double>>();
      if (pros.size() != static_cast<std::size_t>(kProsodyDim)) throw Error("prosody length");
      for (int k = 0; k < kProsodyDim; ++k) f.prosody[k] = pros[static_cast<std::size_t>(k)];
      store.put({j.at("conversation_id").get<std::string>(), j.at("index").get<int>()}, std::move(f));
    } catch (const nlohmann::json::exception& e) {
      throw Error("feature cache line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error("feature cache line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return store;
}

FeatureStore featurize_corpus(const Corpus& corpus, const FeatureParams& p, int workers,
                              const std::filesystem::path& cache_dir) {
  std::vector<const Utterance*> utts;
  for (const auto& c : corpus.conversations)
    for (const auto& u : c.utterances) utts.push_back(&u);
  if (!cache_dir.empty()) std::filesystem::create_directories(cache_dir);

  std::vector<UtteranceFeatures> results(utts.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < utts.size(); i += step) {
      const Utterance& u = *utts[i];
      const Waveform w = read_wav(corpus.audio_path(u));
      const FrameTrack track = analyze(w, p);
      results[i].text = featurize_text(u.text, p.hash_dim);
      results[i].prosody = summarize_prosody(track, w.duration());
      if (!cache_dir.empty())
        write_frame_cache(cache_dir / (u.conversation_id + "_" + std::to_string(u.index) + ".ccf"),
                          track);
    }
  };
  const auto n_workers = static_cast<std::size_t>(std::max(1, workers));
  if (n_workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n_workers);
    for (std::size_t t = 0; t < n_workers; ++t)
      pool.emplace_back([&, t] {
        try {
          work(t, n_workers);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  FeatureStore store;
  for (std::size_t i = 0; i < utts.size(); ++i)
    store.put({utts[i]->conversation_id, utts[i]->index}, std::move(results[i]));
  return store;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, double v) {
  const auto f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

std::uint32_t get_u32(const std::string& buf, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(buf[pos + i]);
  return v;
}

double get_f32(const std::string& buf, std::size_t pos) {
  const std::uint32_t bits = get_u32(buf, pos);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

void write_frame_cache(const std::filesystem::path& path, const FrameTrack& track) {
  const auto n = static_cast<std::uint32_t>(track.frames());
  const auto c = static_cast<std::uint32_t>(track.cepstra.cols());
  std::string out = "CCF1";
  put_u32(out, static_cast<std::uint32_t>(std::lround(track.sample_rate)));
  put_u32(out, static_cast<std::uint32_t>(std::lround(track.hop * 1e6)));
  put_u32(out, n);
  put_u32(out, c);
  for (std::uint32_t i = 0; i < n; ++i) put_f32(out, track.f0[i]);
  for (std::uint32_t i = 0; i < n; ++i) put_f32(out, track.energy[i]);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t k = 0; k < c; ++k) put_f32(out, track.cepstra(i, k));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write frame cache: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

FrameTrack read_frame_cache(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open frame cache: " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 20 || buf.compare(0, 4, "CCF1") != 0) throw Error("not a CCF1 cache: " + path.string());
  FrameTrack t;
  t.sample_rate = get_u32(buf, 4);
  t.hop = get_u32(buf, 8) * 1e-6;
  const std::uint32_t n = get_u32(buf, 12);
  const std::uint32_t c = get_u32(buf, 16);
  const std::size_t need = 20 + 4ull * (2ull * n + static_cast<std::size_t>(n) * c);
  if (buf.size() != need) throw Error("corrupted CCF1 cache length: " + path.string());
  t.f0.resize(n);
  t.energy.resize(n);
  t.cepstra.resize(n, c);
  std::size_t pos = 20;
  for (std::uint32_t i = 0; i < n; ++i, pos += 4) t.f0[i] = get_f32(buf, pos);
  for (std::uint32_t i = 0; i < n; ++i, pos += 4) t.energy[i] = get_f32(buf, pos);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t k = 0; k < c; ++k, pos += 4) t.cepstra(i, k) = get_f32(buf, pos);
  return t;
}

}  // namespace concss
