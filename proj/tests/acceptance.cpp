// Acceptance suite. Prints one PASS/FAIL line per criterion; exits nonzero
// when any selected criterion fails. Usage: acceptance [criterion...]

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "concss/apm.hpp"
#include "concss/checkpoint.hpp"
#include "concss/cli.hpp"
#include "concss/common.hpp"
#include "concss/config.hpp"
#include "concss/features.hpp"
#include "concss/metrics.hpp"
#include "concss/rng.hpp"
#include "concss/sampler.hpp"
#include "concss/training.hpp"
#include "concss/wav.hpp"

using namespace concss;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

class Workspace {
 public:
  Workspace() {
    std::string tmpl = (fs::temp_directory_path() / "concss_accept_XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw Error("cannot create a temporary directory");
    root_ = tmpl;
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(root_, ec);
  }
  std::string operator/(const std::string& name) const { return (root_ / name).string(); }

 private:
  fs::path root_;
};

void cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  if (run_cli(args, out, err) != 0) {
    std::string line = err.str();
    if (!line.empty() && line.back() == '\n') line.pop_back();
    throw Error(args.front() + " failed: " + line);
  }
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  return Json::parse(in);
}

/// Synthetic corpus plus features for one seed, generated through the CLI.
struct Data {
  std::string manifest, features;

  std::vector<std::string> inputs() const { return {"--manifest", manifest, "--features", features}; }
};

Data make_data(const Workspace& ws, std::uint64_t seed) {
  const std::string s = std::to_string(seed);
  Data d{ws / ("corpus" + s) + "/manifest.jsonl", ws / ("feat" + s) + "/features.jsonl"};
  if (!fs::exists(d.features)) {
    cli({"synth-corpus", "--seed", s, "--out-dir", ws / ("corpus" + s)});
    cli({"featurize", "--manifest", d.manifest, "--out-dir", ws / ("feat" + s)});
  }
  return d;
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

/// Monotone-path enumeration: every path from (0,0) to (n-1,m-1) with unit
/// steps right, down or diagonal, summing Euclidean frame distances.
double enumerate_paths(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, Eigen::Index i, Eigen::Index j) {
  const double here = (a.row(i) - b.row(j)).norm();
  if (i == a.rows() - 1 && j == b.rows() - 1) return here;
  double best = std::numeric_limits<double>::infinity();
  if (i + 1 < a.rows()) best = std::min(best, enumerate_paths(a, b, i + 1, j));
  if (j + 1 < b.rows()) best = std::min(best, enumerate_paths(a, b, i, j + 1));
  if (i + 1 < a.rows() && j + 1 < b.rows()) best = std::min(best, enumerate_paths(a, b, i + 1, j + 1));
  return here + best;
}

/// Independent statement of the Triplet invariants.
std::string triplet_violation(const Corpus& corpus, const Triplet& t) {
  auto window = [&](const ContextWindow& w) -> std::string {
    const auto& conv = corpus.conversation(w.conversation_id);
    if (w.length < 1 || w.target_index < w.length || w.target_index >= conv.size()) return "window bounds";
    if (static_cast<int>(w.utterances.size()) != w.length || w.speakers.size() != w.utterances.size())
      return "window size";
    for (int k = 0; k < w.length; ++k) {
      const auto& u = conv.utterances[static_cast<std::size_t>(w.target_index - w.length + k)];
      if (w.utterances[static_cast<std::size_t>(k)] != u.index) return "window utterances";
      if (w.speakers[static_cast<std::size_t>(k)] != u.speaker_id) return "window speakers";
    }
    return "";
  };
  for (const auto* w : {&t.anchor, &t.positive, &t.negative})
    if (auto v = window(*w); !v.empty()) return v;
  if (t.positive.conversation_id != t.anchor.conversation_id) return "positive from another dialogue";
  if (t.positive.target_index != t.anchor.target_index) return "positive target differs";
  if (t.positive.length == t.anchor.length) return "positive has the anchor's length";
  if (t.negative.conversation_id == t.anchor.conversation_id) return "negative from the anchor dialogue";
  const std::set<std::string> sa(t.anchor.speakers.begin(), t.anchor.speakers.end());
  bool shared = false;
  for (const auto& s : t.negative.speakers) shared = shared || sa.count(s) > 0;
  if (t.negative_class == NegativeClass::intra_speaker && !shared) return "intra negative shares no speaker";
  if (t.negative_class == NegativeClass::inter_speaker && shared) return "inter negative shares a speaker";
  return "";
}

std::map<std::string, std::string> snapshot(const std::string& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), dir).string()] = std::string(std::istreambuf_iterator<char>(in), {});
  }
  return files;
}

// ---------------------------------------------------------------------------

Outcome gradients(const Workspace& ws) {
  const Data d = make_data(ws, 1);
  const auto t0 = std::chrono::steady_clock::now();
  cli(cat({"grad-check", "--seed", "1", "--out-dir", ws / "gc"}, d.inputs()));
  const double secs = seconds_since(t0);
  const auto j = read_json(ws / "gc/grad_check.json");
  const double err = j["max_relative_error"].get<double>();
  const double enc = j["encoders"]["max_relative_error"].get<double>();
  const double apm = j["apm"]["max_relative_error"].get<double>();
  return {err < 1e-4 && secs < 60.0,
          "max relative error " + sci(err) + " (encoders " + sci(enc) + ", apm " + sci(apm) + "), " + num(secs, 1) +
              " s"};
}

Outcome dtw_oracle(const Workspace&) {
  Rng rng(2024);
  double worst = 0.0;
  int exact = 0;
  for (int k = 0; k < 200; ++k) {
    const auto dim = static_cast<Eigen::Index>(1 + rng.below(4));
    Eigen::MatrixXd a(static_cast<Eigen::Index>(1 + rng.below(8)), dim), b(static_cast<Eigen::Index>(1 + rng.below(8)), dim);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.uniform(-2.0, 2.0);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-2.0, 2.0);
    const double got = dtw(a, b).total_cost;
    const double want = enumerate_paths(a, b, 0, 0);
    if (got == want) ++exact;
    worst = std::max(worst, std::abs(got - want) / std::max(std::abs(want), 1e-300));
  }
  return {worst < 1e-9, "200 pairs, " + std::to_string(exact) + " bit-identical, max relative difference " + sci(worst)};
}

Outcome metric_sanity(const Workspace& ws) {
  Waveform tone;
  tone.samples.resize(16000);
  for (Eigen::Index n = 0; n < tone.samples.size(); ++n)
    tone.samples[n] = 0.5 * std::sin(2.0 * std::numbers::pi * 220.0 * static_cast<double>(n) / tone.sample_rate);
  const std::string wav = ws / "tone.wav";
  write_wav(wav, tone);
  cli({"metrics", wav, wav, "--out-dir", ws / "metrics"});
  const auto j = read_json(ws / "metrics/metrics.json");
  const double mcd_same = j["mcd_db"].get<double>();
  const bool f0_defined = !j["log_f0_rmse"].is_null();
  const double f0_same = f0_defined ? j["log_f0_rmse"].get<double>() : -1.0;

  const double expected = 10.0 / std::log(10.0) * std::sqrt(2.0);
  Eigen::MatrixXd ref = Eigen::MatrixXd::Zero(20, 13);
  Eigen::MatrixXd hyp = ref;
  hyp.col(4).setOnes();
  const double unit = mcd(ref, hyp).mcd_db;

  const Eigen::VectorXd f0 = extract_f0(tone, FeatureParams{});
  std::vector<double> voiced;
  for (double v : f0)
    if (v > 0.0) voiced.push_back(v);
  double median = 0.0;
  if (!voiced.empty()) {
    std::nth_element(voiced.begin(), voiced.begin() + static_cast<long>(voiced.size() / 2), voiced.end());
    median = voiced[voiced.size() / 2];
  }
  const double f0_err = std::abs(median - 220.0) / 220.0;

  const bool pass = mcd_same == 0.0 && f0_defined && f0_same == 0.0 && std::abs(unit - expected) < 1e-6 &&
                    f0_err < 0.05;
  return {pass, "metrics(x, x) MCD " + num(mcd_same) + " log-F0 RMSE " + num(f0_same) + "; unit perturbation " +
                    num(unit, 6) + " dB vs " + num(expected, 6) + "; 220 Hz tone median F0 " + num(median, 2) +
                    " Hz (" + num(100.0 * f0_err, 2) + "%)"};
}

Outcome learnability(const Workspace& ws) {
  const Data d = make_data(ws, 1);
  const auto t0 = std::chrono::steady_clock::now();
  cli(cat({"train", "--seed", "1", "--strategy", "S3", "--steps", "2000", "--out-dir", ws / "c4"}, d.inputs()));
  const double secs = seconds_since(t0);
  cli(cat({"eval", "--seed", "1", "--out-dir", ws / "c4eval", "--checkpoint", ws / "c4/checkpoint.bin"}, d.inputs()));
  const auto sat = read_json(ws / "c4/train_report.json")["train"]["heldout_satisfaction"];
  const double untrained = sat.front()["all"]["concat"].get<double>();
  if (sat.front()["step"].get<int>() != 0) throw Error("training report lacks the step-0 record");
  const double trained = read_json(ws / "c4eval/eval_report.json")["heldout_satisfaction"]["all"]["concat"].get<double>();
  return {trained >= 0.90 && untrained <= 0.60 && secs < 600.0,
          "held-out concat satisfaction trained " + num(trained) + " (>= 0.90), untrained " + num(untrained) +
              " (<= 0.60), training " + num(secs, 1) + " s"};
}

Outcome hard_negatives(const Workspace& ws) {
  double s2 = 0.0, s3 = 0.0;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    const Data d = make_data(ws, seed);
    const std::string s = std::to_string(seed);
    double v[2];
    int k = 0;
    for (const char* strategy : {"S2", "S3"}) {
      const std::string dir = ws / ("c5_" + s + strategy);
      cli(cat({"train", "--seed", s, "--strategy", strategy, "--out-dir", dir}, d.inputs()));
      cli(cat({"eval", "--seed", s, "--out-dir", dir + "/eval", "--checkpoint", dir + "/checkpoint.bin"}, d.inputs()));
      v[k++] = read_json(dir + "/eval/eval_report.json")["heldout_satisfaction"]["intra_speaker"]["concat"].get<double>();
    }
    s2 += v[0] / 3.0;
    s3 += v[1] / 3.0;
    per_seed += " seed " + s + " " + num(v[0], 3) + "/" + num(v[1], 3) + ";";
  }
  return {s3 - s2 >= 0.05, "intra-speaker concat satisfaction S2 " + num(s2) + ", S3 " + num(s3) + ", difference " +
                              num(s3 - s2) + " (>= 0.05);" + per_seed.substr(0, per_seed.size() - 1)};
}

Outcome sensitivity(const Workspace& ws) {
  const Data d = make_data(ws, 1);
  cli(cat({"train", "--seed", "1", "--out-dir", ws / "c6"}, d.inputs()));
  cli(cat({"sensitivity", "--seed", "1", "--out-dir", ws / "c6sens", "--checkpoint", ws / "c6/checkpoint.bin"},
          d.inputs()));
  const auto r = read_json(ws / "c6sens/sensitivity.json")["sensitivity"];
  const double lo = r["gap_ci95"][0].get<double>(), hi = r["gap_ci95"][1].get<double>();
  const double acc = r["nearest_real_accuracy"].get<double>();
  const bool trained_ok = (lo > 0.0 || hi < 0.0) && acc >= 0.85;

  const Corpus corpus = load_manifest(d.manifest);
  const FeatureStore features = FeatureStore::load(d.features, FeatureParams{}.hash_dim);
  int contains = 0;
  double gap_sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    RunConfig cfg;
    cfg.seed = seed;
    const Partition part = partition(corpus, cfg);
    const EncoderPair untrained = init_encoder_pair(stream_seed(seed, 0), features.hash_dim());
    const auto u = context_sensitivity(part.heldout, features, untrained, cfg.n_fakes, stream_seed(seed, 13),
                                       cfg.loss.context_max);
    if (u.gap_ci_low <= 0.0 && 0.0 <= u.gap_ci_high) ++contains;
    gap_sum += u.gap;
  }
  return {trained_ok && contains >= 9,
          "trained gap " + num(r["gap"].get<double>()) + " CI [" + num(lo) + ", " + num(hi) + "], accuracy " +
              num(acc) + " (>= 0.85); untrained CI contains 0 in " + std::to_string(contains) +
              "/10 seeds (>= 9), mean untrained gap " + num(gap_sum / 10.0)};
}

Outcome prosody(const Workspace& ws) {
  const Data d = make_data(ws, 1);
  cli(cat({"train", "--seed", "1", "--with-apm", "--out-dir", ws / "c7"}, d.inputs()));
  cli(cat({"eval", "--seed", "1", "--with-apm", "--out-dir", ws / "c7eval", "--checkpoint", ws / "c7/checkpoint.bin"},
          d.inputs()));
  const auto apm = read_json(ws / "c7eval/eval_report.json")["apm"];
  const double real_mse = apm["real"]["mse"].get<double>();
  const double real_f0 = apm["real"]["log_f0_rmse"].get<double>();
  const double fake_f0 = apm["fake"]["log_f0_rmse"].get<double>();

  const Corpus corpus = load_manifest(d.manifest);
  const FeatureStore features = FeatureStore::load(d.features, FeatureParams{}.hash_dim);
  RunConfig cfg;
  const Partition part = partition(corpus, cfg);
  const EncoderPair frozen = init_encoder_pair(stream_seed(cfg.seed, 0), features.hash_dim());
  const ApmTrainResult random_apm = train_apm(part.train, features, frozen, cfg.apm, cfg.seed);
  const double random_mse = eval_apm(part.heldout, features, frozen, random_apm.params, ContextMode::real,
                                     stream_seed(cfg.seed, 11), cfg.apm.context_max)
                                .mse;
  const double reduction = 1.0 - real_mse / random_mse;
  return {reduction >= 0.20 && fake_f0 > real_f0,
          "held-out APM MSE trained encoders " + num(real_mse) + " vs frozen random " + num(random_mse) +
              " (reduction " + num(100.0 * reduction, 1) + "%, need >= 20%); log-F0 RMSE fake " + num(fake_f0) +
              " vs real " + num(real_f0)};
}

Outcome determinism(const Workspace& ws) {
  const std::string root = ws / "c8";
  auto pipeline = [&] {
    const std::string c = root + "/corpus", f = root + "/feat", t = root + "/train";
    cli({"synth-corpus", "--seed", "8", "--out-dir", c});
    cli({"featurize", "--manifest", c + "/manifest.jsonl", "--out-dir", f});
    const std::vector<std::string> in{"--manifest", c + "/manifest.jsonl", "--features", f + "/features.jsonl"};
    const std::vector<std::string> ck{"--checkpoint", t + "/checkpoint.bin"};
    cli(cat(cat({"train", "--seed", "8", "--with-apm", "--out-dir", t}, in), {}));
    cli(cat(cat({"eval", "--seed", "8", "--out-dir", root + "/eval"}, in), ck));
    cli(cat(cat({"sensitivity", "--seed", "8", "--out-dir", root + "/sens"}, in), ck));
    cli(cat(cat({"project", "--seed", "8", "--modality", "concat", "--out-dir", root + "/proj"}, in), ck));
    cli(cat({"grad-check", "--seed", "8", "--out-dir", root + "/gc"}, in));
    const std::string wav = c + "/wav/c000_00.wav", other = c + "/wav/c001_00.wav";
    cli({"metrics", wav, other, "--out-dir", root + "/metrics"});
  };
  pipeline();
  const auto first = snapshot(root);
  pipeline();
  const auto second = snapshot(root);
  std::vector<std::string> differ;
  for (const auto& [name, bytes] : first) {
    const auto it = second.find(name);
    if (it == second.end() || it->second != bytes) differ.push_back(name);
  }
  const bool same_set = first.size() == second.size();
  std::string detail = std::to_string(first.size()) + " output files compared, " + std::to_string(differ.size()) +
                       " differ";
  if (!differ.empty()) detail += " (first: " + differ.front() + ")";
  return {differ.empty() && same_set && first.size() > 10, detail};
}

Outcome sampler_invariants(const Workspace& ws) {
  const Data d = make_data(ws, 1);
  const Corpus corpus = load_manifest(d.manifest);
  const Sampler sampler(corpus, 5);
  Rng rng(stream_seed(9, 9));
  int count = 0, violations = 0, intra = 0;
  std::string first;
  while (count < 10000) {
    const Strategy s = count % 3000 < 1500 ? Strategy::S3 : Strategy::S2;
    for (const auto& t : sampler.build_batch(16, s, rng)) {
      const std::string v = triplet_violation(corpus, t);
      if (!v.empty()) {
        if (first.empty()) first = v;
        ++violations;
      }
      intra += t.negative_class == NegativeClass::intra_speaker;
      ++count;
    }
  }
  std::string detail = std::to_string(count) + " triplets (" + std::to_string(intra) + " intra-speaker), " +
                       std::to_string(violations) + " violations";
  if (!first.empty()) detail += " (first: " + first + ")";
  return {violations == 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome(const Workspace&)>>> criteria{
      {"gradient correctness", gradients},
      {"DTW oracle equivalence", dtw_oracle},
      {"metric sanity", metric_sanity},
      {"pretext-task learnability", learnability},
      {"hard-negative benefit", hard_negatives},
      {"context sensitivity", sensitivity},
      {"downstream prosody benefit", prosody},
      {"determinism", determinism},
      {"sampler invariants", sampler_invariants},
  };
  std::set<int> selected;
  for (int k = 1; k < argc; ++k) {
    const int n = std::atoi(argv[k]);
    if (n < 1 || n > static_cast<int>(criteria.size())) {
      std::cerr << "acceptance: unknown criterion " << argv[k] << '\n';
      return 2;
    }
    selected.insert(n);
  }
  if (selected.empty())
    for (int n = 1; n <= static_cast<int>(criteria.size()); ++n) selected.insert(n);

  Workspace ws;
  int failed = 0;
  for (int n : selected) {
    const auto& [name, run] = criteria[static_cast<std::size_t>(n - 1)];
    Outcome o;
    try {
      o = run(ws);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << ": " << name << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
