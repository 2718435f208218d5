#ifndef CONCSS_TESTS_SUPPORT_HPP
#define CONCSS_TESTS_SUPPORT_HPP

#include <atomic>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <unistd.h>
#include <vector>

#include <Eigen/Dense>

#include "concss/corpus.hpp"
#include "concss/features.hpp"
#include "concss/rng.hpp"

namespace testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("concss_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

/// Minimum over every monotone path from (0,0) to (n-1,m-1) with steps
/// (1,0), (0,1), (1,1), found by explicit recursion.
inline double brute_force_dtw(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::Index n = a.rows(), m = b.rows();
  std::function<double(Eigen::Index, Eigen::Index, double)> walk = [&](Eigen::Index i, Eigen::Index j,
                                                                       double acc) -> double {
    acc += (a.row(i) - b.row(j)).norm();
    if (i == n - 1 && j == m - 1) return acc;
    double best = std::numeric_limits<double>::infinity();
    if (i + 1 < n && j + 1 < m) best = std::min(best, walk(i + 1, j + 1, acc));
    if (i + 1 < n) best = std::min(best, walk(i + 1, j, acc));
    if (j + 1 < m) best = std::min(best, walk(i, j + 1, acc));
    return best;
  };
  return walk(0, 0, 0.0);
}

inline concss::Utterance utt(const std::string& conv, int index, const std::string& speaker,
                             const std::string& text = "w") {
  return {conv, index, speaker, text, "wav/" + conv + "_" + std::to_string(index) + ".wav"};
}

/// Corpus without audio: `n_conv` conversations of `len` utterances, two
/// alternating speakers drawn from `n_speakers`, topic = conv % n_topics + 1.
inline concss::Corpus toy_corpus(int n_conv, int len, int n_speakers, int n_topics, std::uint64_t seed) {
  concss::Corpus c;
  for (int s = 0; s < n_speakers; ++s) c.speakers.push_back("s" + std::to_string(s));
  concss::Rng rng(seed);
  for (int k = 0; k < n_conv; ++k) {
    concss::Conversation conv;
    conv.id = "c" + std::to_string(100 + k);
    conv.latent_topic = k % n_topics + 1;
    const auto a = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_speakers)));
    auto b = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_speakers - 1)));
    if (b >= a) ++b;
    for (int i = 0; i < len; ++i)
      conv.utterances.push_back(utt(conv.id, i, c.speakers[static_cast<std::size_t>(i % 2 ? b : a)],
                                    "z" + std::to_string(*conv.latent_topic) + "w" + std::to_string(i)));
    c.conversations.push_back(std::move(conv));
  }
  return c;
}

/// Random features for every utterance of a corpus (no audio needed).
inline concss::FeatureStore random_features(const concss::Corpus& corpus, int hash_dim, std::uint64_t seed) {
  concss::FeatureStore store;
  concss::Rng rng(seed);
  for (const auto& conv : corpus.conversations)
    for (const auto& u : conv.utterances) {
      concss::UtteranceFeatures f;
      f.text = concss::featurize_text(u.text + " x" + std::to_string(rng.below(50)), hash_dim);
      for (int k = 0; k < concss::kProsodyDim; ++k) f.prosody[k] = rng.uniform(-1.0, 1.0);
      store.put({conv.id, u.index}, std::move(f));
    }
  return store;
}

/// A small generated corpus with its features, built once per test binary.
struct SynthFixture {
  TempDir dir;
  concss::Corpus corpus;
  concss::FeatureStore features;

  SynthFixture() {
    concss::SynthConfig cfg;
    cfg.n_conversations = 12;
    corpus = concss::generate_synthetic(cfg, 5, dir.path());
    features = concss::featurize_corpus(corpus, concss::FeatureParams{});
  }
};

inline const SynthFixture& small_synth() {
  static const SynthFixture fx;
  return fx;
}

}  // namespace testing

#endif  // CONCSS_TESTS_SUPPORT_HPP
