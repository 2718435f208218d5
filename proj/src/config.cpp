#include "concss/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "concss/rng.hpp"

namespace concss {
namespace {

// Calls f(section, key, field) for every configurable field. Section "" is
// the top level.
template <typename C, typename F>
void visit_fields(C& c, F&& f) {
  f("", "seed", c.seed);
  f("", "workers", c.workers);
  f("", "with_apm", c.with_apm);
  f("", "n_fakes", c.n_fakes);
  f("", "grad_eps", c.grad_eps);
  f("", "grad_batch_size", c.grad_batch_size);
  f("", "split", c.split);

  auto& s = c.corpus;
  f("corpus", "n_conversations", s.n_conversations);
  f("corpus", "min_utterances", s.min_utterances);
  f("corpus", "max_utterances", s.max_utterances);
  f("corpus", "n_speakers", s.n_speakers);
  f("corpus", "n_topics", s.n_topics);
  f("corpus", "speakers_per_conversation", s.speakers_per_conversation);
  f("corpus", "sample_rate", s.sample_rate);
  f("corpus", "vocab_per_topic", s.vocab_per_topic);
  f("corpus", "min_tokens", s.min_tokens);
  f("corpus", "max_tokens", s.max_tokens);
  f("corpus", "base_duration", s.base_duration);
  f("corpus", "token_duration", s.token_duration);
  f("corpus", "f0_jitter", s.f0_jitter);
  f("corpus", "base_f0", s.base_f0);
  f("corpus", "amplitude_low", s.amplitude_low);
  f("corpus", "amplitude_high", s.amplitude_high);
  f("corpus", "amplitude_jitter", s.amplitude_jitter);
  f("corpus", "tremolo_low", s.tremolo_low);
  f("corpus", "tremolo_high", s.tremolo_high);

  auto& p = c.features;
  f("features", "frame_len", p.frame_len);
  f("features", "hop", p.hop);
  f("features", "f0_min", p.f0_min);
  f("features", "f0_max", p.f0_max);
  f("features", "voicing_threshold", p.voicing_threshold);
  f("features", "silence_floor_db", p.silence_floor_db);
  f("features", "n_mels", p.n_mels);
  f("features", "n_ceps", p.n_ceps);
  f("features", "fft_len", p.fft_len);
  f("features", "hash_dim", p.hash_dim);
  f("features", "energy_floor", p.energy_floor);

  auto& l = c.loss;
  f("loss", "strategy", l.strategy);
  f("loss", "margin", l.margin);
  f("loss", "batch_size", l.batch_size);
  f("loss", "steps", l.steps);
  f("loss", "learning_rate", l.learning_rate);
  f("loss", "beta1", l.beta1);
  f("loss", "beta2", l.beta2);
  f("loss", "adam_eps", l.adam_eps);
  f("loss", "text_weight", l.text_weight);
  f("loss", "audio_weight", l.audio_weight);
  f("loss", "context_max", l.context_max);
  f("loss", "eval_every", l.eval_every);
  f("loss", "eval_triplets", l.eval_triplets);

  auto& a = c.apm;
  f("apm", "attn_dim", a.attn_dim);
  f("apm", "steps", a.steps);
  f("apm", "batch_size", a.batch_size);
  f("apm", "learning_rate", a.learning_rate);
  f("apm", "beta1", a.beta1);
  f("apm", "beta2", a.beta2);
  f("apm", "adam_eps", a.adam_eps);
  f("apm", "context_max", a.context_max);
}

template <typename T>
Json field_json(const T& v) {
  return Json(v);
}
Json field_json(const Strategy& s) { return Json(to_string(s)); }

template <typename T>
void field_read(const Json& j, T& v) {
  v = j.get<T>();
}
void field_read(const Json& j, Strategy& s) { s = parse_strategy(j.get<std::string>()); }
void field_read(const Json& j, int& v) {
  if (!j.is_number_integer()) throw Error("expected an integer");
  v = j.get<int>();
}
void field_read(const Json& j, std::uint64_t& v) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0))
    throw Error("expected a non-negative integer");
  v = j.get<std::uint64_t>();
}
void field_read(const Json& j, double& v) {
  if (!j.is_number()) throw Error("expected a number");
  v = j.get<double>();
}
void field_read(const Json& j, bool& v) {
  if (!j.is_boolean()) throw Error("expected a boolean");
  v = j.get<bool>();
}

}  // namespace

void RunConfig::validate() const {
  if (workers < 1) throw Error("workers must be >= 1");
  if (n_fakes < 1) throw Error("n_fakes must be >= 1");
  if (!(grad_eps > 0.0)) throw Error("invalid epsilon");
  if (grad_batch_size < 1) throw Error("grad_batch_size must be >= 1");
  loss.validate();
  apm.validate();
}

Json to_json(const RunConfig& cfg) {
  Json j;
  j["out_dir"] = cfg.out_dir.generic_string();
  visit_fields(cfg, [&](const char* section, const char* key, const auto& v) {
    if (*section)
      j[section][key] = field_json(v);
    else
      j[key] = field_json(v);
  });
  return j;
}

RunConfig from_json(const Json& j, RunConfig base) {
  if (!j.is_object()) throw Error("config must be a JSON object");
  std::set<std::string> known{"out_dir"};
  visit_fields(base, [&](const char* section, const char* key, auto& v) {
    const std::string name = *section ? std::string(section) + "." + key : std::string(key);
    known.insert(name);
    if (*section) known.insert(section);
    const Json* node = nullptr;
    if (*section) {
      auto s = j.find(section);
      if (s != j.end()) {
        if (!s->is_object()) throw Error("config section '" + std::string(section) + "' must be an object");
        auto k = s->find(key);
        if (k != s->end()) node = &*k;
      }
    } else if (auto k = j.find(key); k != j.end()) {
      node = &*k;
    }
    if (!node) return;
    try {
      field_read(*node, v);
    } catch (const Error& e) {
      throw Error("config key " + name + ": " + e.what());
    } catch (const nlohmann::json::exception&) {
      throw Error("config key " + name + ": wrong type");
    }
  });
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw Error("unknown config key: " + it.key());
    if (it->is_object())
      for (auto k = it->begin(); k != it->end(); ++k)
        if (!known.count(it.key() + "." + k.key())) throw Error("unknown config key: " + it.key() + "." + k.key());
  }
  if (auto o = j.find("out_dir"); o != j.end()) {
    if (!o->is_string()) throw Error("config key out_dir: expected a string");
    base.out_dir = o->get<std::string>();
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config: " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("config " + path.string() + " is not valid JSON (byte " + std::to_string(e.byte) + ")");
  }
  return from_json(j);
}

Partition partition(const Corpus& corpus, const RunConfig& cfg) {
  auto parts = split(corpus, cfg.split, stream_seed(cfg.seed, 3));
  Partition p{std::move(parts[0]), std::move(parts[1])};
  for (auto& c : parts[2].conversations) p.heldout.conversations.push_back(std::move(c));
  std::sort(p.heldout.conversations.begin(), p.heldout.conversations.end(),
            [](const Conversation& a, const Conversation& b) { return a.id < b.id; });
  return p;
}

}  // namespace concss
