#include "concss/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "concss/common.hpp"
#include "concss/rng.hpp"
#include "concss/wav.hpp"

namespace concss {

using json = nlohmann::ordered_json;

const Conversation& Corpus::conversation(const std::string& id) const {
  auto it = std::lower_bound(conversations.begin(), conversations.end(), id,
                             [](const Conversation& c, const std::string& k) { return c.id < k; });
  if (it == conversations.end() || it->id != id) throw Error("unknown conversation: " + id);
  return *it;
}

std::size_t Corpus::utterance_count() const {
  std::size_t n = 0;
  for (const auto& c : conversations) n += c.utterances.size();
  return n;
}

std::filesystem::path Corpus::audio_path(const Utterance& u) const {
  std::filesystem::path p(u.audio_ref);
  return p.is_absolute() ? p : root / p;
}

void validate(const Corpus& corpus, bool check_audio) {
  if (corpus.conversations.empty()) throw Error("no conversations");
  std::set<std::string> speakers;
  for (const auto& s : corpus.speakers) {
    if (s.empty()) throw Error("empty speaker id");
    if (!speakers.insert(s).second) throw Error("duplicate speaker id: " + s);
  }
  for (std::size_t c = 0; c < corpus.conversations.size(); ++c) {
    const auto& conv = corpus.conversations[c];
    if (conv.id.empty()) throw Error("empty conversation id");
    if (c > 0 && !(corpus.conversations[c - 1].id < conv.id))
      throw Error("conversation ids not unique/sorted at " + conv.id);
    if (conv.utterances.size() < 2)
      throw Error("conversation " + conv.id + " has fewer than 2 utterances");
    for (int i = 0; i < conv.size(); ++i) {
      const auto& u = conv.utterances[static_cast<std::size_t>(i)];
      if (u.index != i)
        throw Error("non-contiguous index in conversation " + conv.id + " (expected " +
                    std::to_string(i) + ", found " + std::to_string(u.index) + ")");
      if (u.conversation_id != conv.id) throw Error("utterance filed under wrong conversation");
      if (u.text.find_first_not_of(" \t\r\n") == std::string::npos)
        throw Error("empty text in " + conv.id + ":" + std::to_string(i));
      if (!speakers.count(u.speaker_id)) throw Error("unknown speaker: " + u.speaker_id);
      if (check_audio && !std::filesystem::exists(corpus.audio_path(u)))
        throw Error("dangling audio_ref: " + u.audio_ref);
    }
  }
}

std::filesystem::path speakers_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".speakers.txt");
  return p;
}

Corpus load_manifest(const std::filesystem::path& path, bool check_audio) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest: " + path.string());

  std::map<std::string, std::map<int, Utterance>> grouped;
  std::map<std::string, std::optional<int>> topics;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "manifest line " + std::to_string(lineno) + ": ";
    Utterance u;
    std::optional<int> topic;
    try {
      const auto j = json::parse(line);
      u.conversation_id = j.at("conversation_id").get<std::string>();
      u.index = j.at("index").get<int>();
      u.speaker_id = j.at("speaker_id").get<std::string>();
      u.text = j.at("text").get<std::string>();
      u.audio_ref = j.at("audio_ref").get<std::string>();
      if (j.contains("latent_topic") && !j.at("latent_topic").is_null())
        topic = j.at("latent_topic").get<int>();
    } catch (const json::exception& e) {
      throw Error(where + "malformed record (" + std::string(e.what()) + ")");
    }
    if (u.index < 0) throw Error(where + "negative index");
    auto& conv = grouped[u.conversation_id];
    if (conv.count(u.index))
      throw Error(where + "duplicate (conversation, index) (" + u.conversation_id + ", " +
                  std::to_string(u.index) + ")");
    auto [it, fresh] = topics.emplace(u.conversation_id, topic);
    if (!fresh && it->second != topic)
      throw Error(where + "inconsistent latent_topic in conversation " + u.conversation_id);
    conv.emplace(u.index, std::move(u));
  }

  Corpus corpus;
  corpus.root = path.parent_path();
  const auto spk = speakers_path(path);
  std::ifstream sin(spk);
  if (!sin) throw Error("cannot open speakers file: " + spk.string());
  while (std::getline(sin, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) corpus.speakers.push_back(line);
  }

  for (auto& [id, utts] : grouped) {
    Conversation c;
    c.id = id;
    c.latent_topic = topics[id];
    for (auto& [idx, u] : utts) c.utterances.push_back(std::move(u));
    corpus.conversations.push_back(std::move(c));
  }
  validate(corpus, check_audio);
  return corpus;
}

void save_manifest(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write manifest: " + path.string());
  for (const auto& c : corpus.conversations) {
    for (const auto& u : c.utterances) {
      json j;
      j["conversation_id"] = u.conversation_id;
      j["index"] = u.index;
      j["speaker_id"] = u.speaker_id;
      j["text"] = u.text;
      j["audio_ref"] = u.audio_ref;
      if (c.latent_topic) j["latent_topic"] = *c.latent_topic;
      out << j.dump() << '\n';
    }
  }
  std::ofstream sout(speakers_path(path), std::ios::trunc);
  if (!sout) throw Error("cannot write speakers file");
  for (const auto& s : corpus.speakers) sout << s << '\n';
}

std::vector<std::vector<double>> SynthConfig::resolved_base_f0() const {
  if (!base_f0.empty()) return base_f0;
  std::vector<std::vector<double>> table(static_cast<std::size_t>(n_topics),
                                         std::vector<double>(static_cast<std::size_t>(n_speakers)));
  for (int z = 0; z < n_topics; ++z) {
    const double zfrac = n_topics > 1 ? static_cast<double>(z) / (n_topics - 1) : 0.0;
    for (int s = 0; s < n_speakers; ++s) {
      const double sfrac = n_speakers > 1 ? static_cast<double>(s) / (n_speakers - 1) : 0.0;
      table[z][s] = 95.0 * std::pow(1.3, sfrac) * std::pow(1.6, zfrac);
    }
  }
  return table;
}

namespace {

std::string pad(int v, int width) {
  std::string s = std::to_string(v);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

Waveform synth_utterance(const SynthConfig& cfg, double f0, double level, double tremolo,
                         double tremolo_rate, double seconds, Rng& rng) {
  const double sr = cfg.sample_rate;
  const auto n = static_cast<Eigen::Index>(std::lround(seconds * sr));
  Waveform w;
  w.sample_rate = sr;
  w.samples.setZero(n);

  // Slow sinusoidal drift plus a constant offset; the combined deviation
  // stays within f0_jitter.
  const double offset = rng.uniform(-0.4, 0.4) * cfg.f0_jitter;
  const double drift = 0.6 * cfg.f0_jitter;
  const double drift_rate = rng.uniform(1.0, 3.0);
  const double drift_phase = rng.uniform(0.0, 2.0 * M_PI);
  const double trem_phase = rng.uniform(0.0, 2.0 * M_PI);
  const double fade = std::min(0.010 * sr, 0.5 * static_cast<double>(n));

  double phase = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    const double f = f0 * (1.0 + offset + drift * std::sin(2.0 * M_PI * drift_rate * t + drift_phase));
    phase += 2.0 * M_PI * f / sr;
    // fundamental plus overtones at -6 dB and -12 dB
    const double tone = std::sin(phase) + 0.5 * std::sin(2.0 * phase) + 0.25 * std::sin(3.0 * phase);
    double env = level * (1.0 + tremolo * std::sin(2.0 * M_PI * tremolo_rate * t + trem_phase));
    const double di = static_cast<double>(i);
    const double tail = static_cast<double>(n - 1 - i);
    if (di < fade) env *= 0.5 - 0.5 * std::cos(M_PI * di / fade);
    if (tail < fade) env *= 0.5 - 0.5 * std::cos(M_PI * tail / fade);
    w.samples[i] = env * tone / 1.75;
  }
  return w;
}

}  // namespace

Corpus generate_synthetic(const SynthConfig& cfg, std::uint64_t seed,
                          const std::filesystem::path& out_dir) {
  if (cfg.n_topics < 2) throw Error("synthetic corpus needs at least 2 topics");
  if (cfg.n_speakers < 2) throw Error("synthetic corpus needs at least 2 speakers");
  if (cfg.n_conversations < 1) throw Error("synthetic corpus needs at least 1 conversation");
  if (cfg.min_utterances < 2 || cfg.max_utterances < cfg.min_utterances)
    throw Error("invalid utterance count range");
  if (cfg.speakers_per_conversation < 1 || cfg.speakers_per_conversation > cfg.n_speakers)
    throw Error("invalid speakers_per_conversation");
  if (cfg.min_tokens < 1 || cfg.max_tokens < cfg.min_tokens) throw Error("invalid token range");
  if (cfg.f0_jitter < 0.0 || cfg.f0_jitter > 0.03) throw Error("f0_jitter must lie in [0, 0.03]");
  if (cfg.sample_rate <= 0.0) throw Error("sample_rate must be positive");
  const auto table = cfg.resolved_base_f0();
  if (table.size() != static_cast<std::size_t>(cfg.n_topics))
    throw Error("base_f0 table must have one row per topic");
  for (const auto& row : table) {
    if (row.size() != static_cast<std::size_t>(cfg.n_speakers))
      throw Error("base_f0 table must have one column per speaker");
    for (double f : row)
      if (!(f > 0.0)) throw Error("base_f0 entries must be positive");
  }

  Corpus corpus;
  corpus.root = out_dir;
  for (int s = 0; s < cfg.n_speakers; ++s) corpus.speakers.push_back("s" + pad(s, 2));
  std::filesystem::create_directories(out_dir / "wav");

  Rng rng(seed);
  for (int c = 0; c < cfg.n_conversations; ++c) {
    Conversation conv;
    conv.id = "c" + pad(c, 3);
    const int topic = static_cast<int>(rng.range(1, cfg.n_topics));
    conv.latent_topic = topic;
    const double zfrac = static_cast<double>(topic - 1) / (cfg.n_topics - 1);
    const double level = cfg.amplitude_low + zfrac * (cfg.amplitude_high - cfg.amplitude_low);
    const double tremolo = cfg.tremolo_low + zfrac * (cfg.tremolo_high - cfg.tremolo_low);
    const double tremolo_rate = 3.0 + 2.0 * zfrac;

    std::vector<int> pool(static_cast<std::size_t>(cfg.n_speakers));
    for (int s = 0; s < cfg.n_speakers; ++s) pool[s] = s;
    for (int k = 0; k < cfg.speakers_per_conversation; ++k) {
      const auto j = k + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_speakers - k)));
      std::swap(pool[k], pool[j]);
    }
    const int n_utts = static_cast<int>(rng.range(cfg.min_utterances, cfg.max_utterances));
    for (int i = 0; i < n_utts; ++i) {
      const int speaker = pool[static_cast<std::size_t>(i % cfg.speakers_per_conversation)];
      const int n_tokens = static_cast<int>(rng.range(cfg.min_tokens, cfg.max_tokens));
      std::string text;
      for (int t = 0; t < n_tokens; ++t) {
        if (t) text += ' ';
        text += "z" + std::to_string(topic) + "w" +
                pad(static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab_per_topic))), 2);
      }
      const double seconds = cfg.base_duration + cfg.token_duration * n_tokens;
      const double gain = 1.0 + rng.uniform(-1.0, 1.0) * cfg.amplitude_jitter;
      const double f0 = table[static_cast<std::size_t>(topic - 1)][static_cast<std::size_t>(speaker)];
      Waveform w = synth_utterance(cfg, f0, level * gain, tremolo, tremolo_rate, seconds, rng);

      Utterance u;
      u.conversation_id = conv.id;
      u.index = i;
      u.speaker_id = corpus.speakers[static_cast<std::size_t>(speaker)];
      u.text = std::move(text);
      u.audio_ref = "wav/" + conv.id + "_" + pad(i, 2) + ".wav";
      write_wav(out_dir / u.audio_ref, w);
      conv.utterances.push_back(std::move(u));
    }
    corpus.conversations.push_back(std::move(conv));
  }
  validate(corpus, true);
  return corpus;
}

Corpus subset(const Corpus& corpus, const std::vector<std::string>& ids) {
  Corpus out;
  out.speakers = corpus.speakers;
  out.root = corpus.root;
  std::vector<std::string> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  for (const auto& id : sorted) out.conversations.push_back(corpus.conversation(id));
  return out;
}

std::array<Corpus, 3> split(const Corpus& corpus, const std::array<double, 3>& ratios,
                            std::uint64_t seed) {
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0 && r < 1.0)) throw Error("split ratios must lie in (0, 1)");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error("split ratios must sum to 1");
  const auto n = corpus.conversations.size();
  if (n < 3) throw Error("too few conversations for a non-empty split");

  // Largest-remainder apportionment; ties go to the earlier part.
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = ratios[k] * static_cast<double>(n);
    sizes[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[k] = exact - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  while (assigned < n) {
    int best = 0;
    for (int k = 1; k < 3; ++k)
      if (rem[k] > rem[best]) best = k;
    ++sizes[best];
    rem[best] = -1.0;
    ++assigned;
  }
  for (auto s : sizes)
    if (s == 0) throw Error("too few conversations for a non-empty split");

  std::vector<std::string> ids;
  for (const auto& c : corpus.conversations) ids.push_back(c.id);
  Rng rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);

  std::array<Corpus, 3> parts;
  std::size_t pos = 0;
  for (int k = 0; k < 3; ++k) {
    std::vector<std::string> part(ids.begin() + static_cast<std::ptrdiff_t>(pos),
                                  ids.begin() + static_cast<std::ptrdiff_t>(pos + sizes[k]));
    parts[k] = subset(corpus, part);
    pos += sizes[k];
  }
  return parts;
}

}  // namespace concss
