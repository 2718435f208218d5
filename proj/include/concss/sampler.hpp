#ifndef CONCSS_SAMPLER_HPP
#define CONCSS_SAMPLER_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "concss/corpus.hpp"
#include "concss/rng.hpp"

namespace concss {

/// The `length` utterances immediately preceding `target_index`.
struct ContextWindow {
  std::string conversation_id;
  int target_index = 0;
  int length = 0;
  std::vector<int> utterances;         ///< target-length .. target-1, oldest first
  std::vector<std::string> speakers;   ///< speaker of each entry

  bool operator==(const ContextWindow&) const = default;
};

enum class NegativeClass { inter_speaker, intra_speaker };

const char* to_string(NegativeClass c);

struct Triplet {
  ContextWindow anchor;
  ContextWindow positive;
  ContextWindow negative;
  NegativeClass negative_class = NegativeClass::inter_speaker;

  bool operator==(const Triplet&) const = default;
};

/// S1 and S2 draw only inter-speaker negatives; S3 alternates inter/intra.
enum class Strategy { S1, S2, S3 };

const char* to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

/// Throws when target_index < 1; the length is clamped to target_index.
ContextWindow make_context(const Conversation& conv, int target_index, int length);

/// Same dialogue and target, uniformly chosen different length in
/// 1..min(i_max, target).
ContextWindow sample_positive(const Conversation& conv, const ContextWindow& anchor, int i_max,
                              Rng& rng);

/// Precomputed candidate windows of a corpus for negative sampling.
class Sampler {
 public:
  Sampler(const Corpus& corpus, int i_max);

  const Corpus& corpus() const { return *corpus_; }
  int i_max() const { return i_max_; }

  /// Every (conversation, target, length) with 1 <= length <= min(i_max, target).
  const std::vector<ContextWindow>& windows() const { return windows_; }

  /// Windows eligible as `cls` negatives for `anchor`: other conversation,
  /// other latent topic when both are labelled, and a speaker set that is
  /// disjoint (inter) or intersecting (intra) with the anchor's.
  std::vector<std::size_t> eligible_negatives(const ContextWindow& anchor, NegativeClass cls) const;

  ContextWindow sample_negative(const ContextWindow& anchor, NegativeClass cls, Rng& rng) const;

  /// Anchors valid for triplet construction: target >= 2 (so a positive of
  /// another length exists) and at least one eligible negative of `cls`.
  std::vector<std::size_t> valid_anchors(NegativeClass cls) const;

  /// batch_size triplets. Negative classes follow the strategy; under S3
  /// even slots are inter-speaker and odd slots intra-speaker.
  std::vector<Triplet> build_batch(int batch_size, Strategy strategy, Rng& rng) const;

  /// Throws describing the first violated Triplet invariant.
  void check_triplet(const Triplet& t) const;

 private:
  const Corpus* corpus_;
  int i_max_;
  std::vector<ContextWindow> windows_;
  std::vector<int> window_topic_;  ///< -1 when the conversation is unlabelled
  std::vector<std::vector<std::string>> window_speakers_;  ///< sorted, unique
  std::vector<std::size_t> valid_anchors_[2];
};

/// Triplet audit dump, one JSON object per line.
void save_triplets(const std::vector<Triplet>& triplets, const std::filesystem::path& path);

}  // namespace concss

#endif  // CONCSS_SAMPLER_HPP
