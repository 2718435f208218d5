#ifndef CONCSS_CORPUS_HPP
#define CONCSS_CORPUS_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace concss {

struct Utterance {
  std::string conversation_id;
  int index = 0;
  std::string speaker_id;
  std::string text;
  std::string audio_ref;  ///< relative to the corpus root unless absolute

  bool operator==(const Utterance&) const = default;
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;  ///< ordered by index, 0..N-1
  /// Generation label of synthetic corpora. Evaluation oracles read it;
  /// encoders never do.
  std::optional<int> latent_topic;

  int size() const { return static_cast<int>(utterances.size()); }
  bool operator==(const Conversation&) const = default;
};

/// An immutable collection of validated conversations. Conversations are
/// kept sorted by id.
struct Corpus {
  std::vector<Conversation> conversations;
  std::vector<std::string> speakers;
  std::filesystem::path root;  ///< base directory for relative audio_refs

  const Conversation& conversation(const std::string& id) const;
  std::size_t utterance_count() const;
  std::filesystem::path audio_path(const Utterance& u) const;

  bool operator==(const Corpus& o) const {
    return conversations == o.conversations && speakers == o.speakers;
  }
};

/// Checks every corpus invariant and throws `Error` on the first violation.
/// When `check_audio` is set, every audio_ref must name an existing file.
void validate(const Corpus& corpus, bool check_audio);

/// Sidecar speaker list path for a manifest: "x.jsonl" -> "x.speakers.txt".
std::filesystem::path speakers_path(const std::filesystem::path& manifest);

/// Loads a JSON-lines manifest plus its speakers sidecar. Utterances come back
/// sorted by (conversation_id, index).
Corpus load_manifest(const std::filesystem::path& path, bool check_audio = true);

void save_manifest(const Corpus& corpus, const std::filesystem::path& path);

struct SynthConfig {
  int n_conversations = 40;
  int min_utterances = 6;
  int max_utterances = 10;
  int n_speakers = 8;
  int n_topics = 4;
  int speakers_per_conversation = 2;
  double sample_rate = 16000.0;
  int vocab_per_topic = 150;
  int min_tokens = 3;
  int max_tokens = 8;
  double base_duration = 0.2;      ///< seconds
  double token_duration = 0.07;    ///< seconds per token
  double f0_jitter = 0.025;        ///< bound on relative F0 deviation, <= 0.03
  /// base_f0[topic - 1][speaker] in Hz; empty selects the default table.
  std::vector<std::vector<double>> base_f0;
  /// Envelope level range across topics; the level of topic z interpolates
  /// linearly between the two values.
  double amplitude_low = 0.12;
  double amplitude_high = 0.36;
  double amplitude_jitter = 0.15;  ///< relative per-utterance gain spread
  double tremolo_low = 0.05;       ///< envelope modulation depth range
  double tremolo_high = 0.45;

  /// Default table: 95 Hz * 1.3^(s/(S-1)) * 1.6^((z-1)/(K-1)), so the topic
  /// fixes the register (95..152 Hz) and speakers shift it by up to 30%.
  std::vector<std::vector<double>> resolved_base_f0() const;
};

/// Synthesizes a corpus whose conversations each draw a latent topic. Text
/// tokens come from disjoint per-topic vocabularies; audio is a harmonic
/// tone at base_f0(topic, speaker) with a topic-dependent envelope. WAVs are
/// written under `out_dir`/wav and the returned corpus is rooted at out_dir.
/// The result is a pure function of (cfg, seed).
Corpus generate_synthetic(const SynthConfig& cfg, std::uint64_t seed,
                          const std::filesystem::path& out_dir);

/// Partitions by whole conversation into train/val/test.
std::array<Corpus, 3> split(const Corpus& corpus, const std::array<double, 3>& ratios,
                            std::uint64_t seed);

/// Copy of `corpus` restricted to the given conversation ids.
Corpus subset(const Corpus& corpus, const std::vector<std::string>& ids);

}  // namespace concss

#endif  // CONCSS_CORPUS_HPP
