#include "concss/sampler.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "concss/common.hpp"

namespace concss {

const char* to_string(NegativeClass c) {
  return c == NegativeClass::inter_speaker ? "inter_speaker" : "intra_speaker";
}

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::S1: return "S1";
    case Strategy::S2: return "S2";
    case Strategy::S3: return "S3";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "S1") return Strategy::S1;
  if (name == "S2") return Strategy::S2;
  if (name == "S3") return Strategy::S3;
  throw Error("unknown strategy '" + name + "' (expected S1, S2 or S3)");
}

ContextWindow make_context(const Conversation& conv, int target_index, int length) {
  if (target_index < 1) throw Error("context window needs target_index >= 1 (no history at 0)");
  if (target_index >= conv.size())
    throw Error("target_index " + std::to_string(target_index) + " outside conversation " + conv.id);
  if (length < 1) throw Error("context length must be >= 1");
  ContextWindow w;
  w.conversation_id = conv.id;
  w.target_index = target_index;
  w.length = std::min(length, target_index);
  for (int j = target_index - w.length; j < target_index; ++j) {
    w.utterances.push_back(j);
    w.speakers.push_back(conv.utterances[static_cast<std::size_t>(j)].speaker_id);
  }
  return w;
}

ContextWindow sample_positive(const Conversation& conv, const ContextWindow& anchor, int i_max,
                              Rng& rng) {
  const int hi = std::min(i_max, anchor.target_index);
  std::vector<int> lengths;
  for (int l = 1; l <= hi; ++l)
    if (l != anchor.length) lengths.push_back(l);
  if (lengths.empty())
    throw Error("no alternative context length for positive (target " +
                std::to_string(anchor.target_index) + ", i_max " + std::to_string(i_max) + ")");
  return make_context(conv, anchor.target_index, lengths[rng.below(lengths.size())]);
}

namespace {

std::vector<std::string> speaker_set(const ContextWindow& w) {
  std::vector<std::string> s = w.speakers;
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

bool intersects(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return true;
    if (*i < *j) ++i; else ++j;
  }
  return false;
}

std::string describe(const ContextWindow& w) {
  return w.conversation_id + "@" + std::to_string(w.target_index) + "/" + std::to_string(w.length);
}

int topic_of(const Corpus& corpus, const std::string& id) {
  const auto& t = corpus.conversation(id).latent_topic;
  return t ? *t : -1;
}

}  // namespace

Sampler::Sampler(const Corpus& corpus, int i_max) : corpus_(&corpus), i_max_(i_max) {
  if (i_max < 1) throw Error("i_max must be >= 1");
  for (const auto& conv : corpus.conversations) {
    for (int t = 1; t < conv.size(); ++t) {
      for (int l = 1; l <= std::min(i_max, t); ++l) {
        windows_.push_back(make_context(conv, t, l));
        window_topic_.push_back(conv.latent_topic ? *conv.latent_topic : -1);
        window_speakers_.push_back(speaker_set(windows_.back()));
      }
    }
  }
  for (int cls = 0; cls < 2; ++cls) {
    for (std::size_t a = 0; a < windows_.size(); ++a) {
      if (windows_[a].target_index < 2 || i_max_ < 2) continue;
      if (!eligible_negatives(windows_[a], static_cast<NegativeClass>(cls)).empty())
        valid_anchors_[cls].push_back(a);
    }
  }
}

std::vector<std::size_t> Sampler::eligible_negatives(const ContextWindow& anchor,
                                                     NegativeClass cls) const {
  const auto anchor_speakers = speaker_set(anchor);
  const int anchor_topic = topic_of(*corpus_, anchor.conversation_id);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < windows_.size(); ++i) {
    if (windows_[i].conversation_id == anchor.conversation_id) continue;
    if (anchor_topic >= 0 && window_topic_[i] >= 0 && anchor_topic == window_topic_[i]) continue;
    const bool shared = intersects(anchor_speakers, window_speakers_[i]);
    if (shared == (cls == NegativeClass::intra_speaker)) out.push_back(i);
  }
  return out;
}

ContextWindow Sampler::sample_negative(const ContextWindow& anchor, NegativeClass cls,
                                       Rng& rng) const {
  const auto eligible = eligible_negatives(anchor, cls);
  if (eligible.empty())
    throw Error(std::string("no eligible ") + to_string(cls) + " negative for anchor " +
                describe(anchor));
  return windows_[eligible[rng.below(eligible.size())]];
}

std::vector<std::size_t> Sampler::valid_anchors(NegativeClass cls) const {
  return valid_anchors_[static_cast<int>(cls)];
}

std::vector<Triplet> Sampler::build_batch(int batch_size, Strategy strategy, Rng& rng) const {
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  std::vector<Triplet> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (int k = 0; k < batch_size; ++k) {
    const NegativeClass cls = (strategy == Strategy::S3 && k % 2 == 1)
                                  ? NegativeClass::intra_speaker
                                  : NegativeClass::inter_speaker;
    const auto& anchors = valid_anchors_[static_cast<int>(cls)];
    if (anchors.empty())
      throw Error(std::string("corpus has no anchor with an eligible ") + to_string(cls) +
                  " negative");
    Triplet t;
    t.anchor = windows_[anchors[rng.below(anchors.size())]];
    t.positive = sample_positive(corpus_->conversation(t.anchor.conversation_id), t.anchor, i_max_, rng);
    t.negative = sample_negative(t.anchor, cls, rng);
    t.negative_class = cls;
    batch.push_back(std::move(t));
  }
  return batch;
}

void Sampler::check_triplet(const Triplet& t) const {
  auto check_window = [&](const ContextWindow& w, const char* role) {
    const auto& conv = corpus_->conversation(w.conversation_id);
    if (w.length < 1 || w.length > w.target_index || w.target_index >= conv.size())
      throw Error(std::string(role) + " window has invalid length/target: " + describe(w));
    if (static_cast<int>(w.utterances.size()) != w.length || w.speakers.size() != w.utterances.size())
      throw Error(std::string(role) + " window entry count mismatch: " + describe(w));
    for (int k = 0; k < w.length; ++k) {
      const int idx = w.target_index - w.length + k;
      if (w.utterances[static_cast<std::size_t>(k)] != idx ||
          w.speakers[static_cast<std::size_t>(k)] != conv.utterances[static_cast<std::size_t>(idx)].speaker_id)
        throw Error(std::string(role) + " window entries are not the preceding utterances: " + describe(w));
    }
  };
  check_window(t.anchor, "anchor");
  check_window(t.positive, "positive");
  check_window(t.negative, "negative");
  if (t.positive.conversation_id != t.anchor.conversation_id ||
      t.positive.target_index != t.anchor.target_index)
    throw Error("positive does not share dialogue and target with anchor: " + describe(t.positive));
  if (t.positive.length == t.anchor.length)
    throw Error("positive has the anchor's context length: " + describe(t.positive));
  if (t.negative.conversation_id == t.anchor.conversation_id)
    throw Error("negative shares the anchor's conversation: " + describe(t.negative));
  const bool shared = intersects(speaker_set(t.anchor), speaker_set(t.negative));
  if (t.negative_class == NegativeClass::intra_speaker && !shared)
    throw Error("intra_speaker negative shares no speaker with anchor: " + describe(t.negative));
  if (t.negative_class == NegativeClass::inter_speaker && shared)
    throw Error("inter_speaker negative shares a speaker with anchor: " + describe(t.negative));
  const int ta = topic_of(*corpus_, t.anchor.conversation_id);
  const int tn = topic_of(*corpus_, t.negative.conversation_id);
  if (ta >= 0 && tn >= 0 && ta == tn)
    throw Error("negative carries the anchor's latent topic: " + describe(t.negative));
}

void save_triplets(const std::vector<Triplet>& triplets, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write triplet dump: " + path.string());
  auto window = [](const ContextWindow& w) {
    nlohmann::ordered_json j;
    j["conversation_id"] = w.conversation_id;
    j["target_index"] = w.target_index;
    j["length"] = w.length;
    j["speakers"] = w.speakers;
    return j;
  };
  for (const auto& t : triplets) {
    nlohmann::ordered_json j;
    j["anchor"] = window(t.anchor);
    j["positive"] = window(t.positive);
    j["negative"] = window(t.negative);
    j["class"] = to_string(t.negative_class);
    out << j.dump() << '\n';
  }
}

}  // namespace concss
