#include <doctest.h>

#include <fstream>
#include <sstream>

#include "concss/checkpoint.hpp"
#include "concss/cli.hpp"
#include "concss/common.hpp"
#include "concss/config.hpp"
#include "support.hpp"

using namespace concss;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

bool single_error_line(const std::string& s) {
  return s.rfind("concss: error: ", 0) == 0 && s.find('\n') == s.size() - 1;
}

Json read_json(const fs::path& p) {
  std::ifstream in(p);
  return Json::parse(in);
}

void patch(const fs::path& p, std::size_t offset, char byte) {
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(offset));
  f.put(byte);
}

Checkpoint sample_checkpoint(bool with_apm) {
  Checkpoint ck;
  ck.meta.seed = 42;
  ck.meta.step = 2000;
  ck.encoders = init_encoder_pair(3, 64);
  ck.encoders.text.out_bias.setConstant(0.25);
  if (with_apm) ck.apm = init_apm(4, 64, 16);
  return ck;
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  testing::TempDir dir;
  for (bool with_apm : {false, true}) {
    const auto ck = sample_checkpoint(with_apm);
    save_checkpoint(ck, dir / "a.bin");
    const auto back = load_checkpoint(dir / "a.bin");
    CHECK(back.meta.seed == 42);
    CHECK(back.meta.step == 2000);
    CHECK(back.encoders.text == ck.encoders.text);
    CHECK(back.encoders.audio == ck.encoders.audio);
    CHECK(back.apm.has_value() == with_apm);
    if (with_apm) CHECK(*back.apm == *ck.apm);

    save_checkpoint(back, dir / "b.bin");
    std::ifstream a(dir / "a.bin", std::ios::binary), b(dir / "b.bin", std::ios::binary);
    CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));
  }
}

TEST_CASE("checkpoint corruption is reported") {
  testing::TempDir dir;
  save_checkpoint(sample_checkpoint(true), dir / "c.bin");
  const auto size = fs::file_size(dir / "c.bin");

  fs::copy_file(dir / "c.bin", dir / "v.bin");
  patch(dir / "v.bin", 4, 7);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "v.bin"), doctest::Contains("version mismatch"), concss::Error);

  fs::copy_file(dir / "c.bin", dir / "t.bin");
  fs::resize_file(dir / "t.bin", size - 9);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "t.bin"), doctest::Contains("truncated"), concss::Error);

  fs::copy_file(dir / "c.bin", dir / "x.bin");
  {
    std::ofstream f(dir / "x.bin", std::ios::app | std::ios::binary);
    f.put('\0');
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "x.bin"), doctest::Contains("trailing"), concss::Error);

  fs::copy_file(dir / "c.bin", dir / "m.bin");
  patch(dir / "m.bin", 0, 'X');
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "m.bin"), doctest::Contains("not a checkpoint"), concss::Error);

  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), concss::Error);
}

TEST_CASE("dimension checks name the field") {
  const auto ck = sample_checkpoint(false);
  EncoderDims want = ck.encoders.text.dims;
  CHECK_NOTHROW(require_dims(ck.encoders.text, want, "text encoder"));
  want.hidden = 10;
  CHECK_THROWS_WITH_AS(require_dims(ck.encoders.text, want, "text encoder"), doctest::Contains("hidden"),
                       concss::Error);
  want = ck.encoders.text.dims;
  want.input_dim = 2048;
  CHECK_THROWS_WITH_AS(require_dims(ck.encoders.text, want, "text encoder"),
                       doctest::Contains("dimension mismatch"), concss::Error);
}

TEST_CASE("config defaults, overrides and errors") {
  const RunConfig def;
  CHECK(def.loss.strategy == Strategy::S3);
  CHECK(def.loss.margin == 1.0);
  CHECK(def.loss.batch_size == 16);
  CHECK(def.loss.steps == 2000);
  CHECK(def.loss.context_max == 5);
  CHECK(def.corpus.n_conversations == 40);
  CHECK(def.corpus.n_topics == 4);
  CHECK(def.corpus.n_speakers == 8);
  CHECK(def.apm.attn_dim == 16);
  CHECK(def.features.hash_dim == 1024);

  const Json j = to_json(def);
  CHECK(to_json(from_json(j)) == j);

  const auto o = from_json(Json::parse(R"({"seed": 9, "loss": {"strategy": "S2", "margin": 0.5}, "out_dir": "x"})"));
  CHECK(o.seed == 9);
  CHECK(o.loss.strategy == Strategy::S2);
  CHECK(o.loss.margin == 0.5);
  CHECK(o.loss.batch_size == 16);
  CHECK(o.out_dir == "x");

  CHECK_THROWS_WITH_AS(from_json(Json::parse(R"({"sed": 1})")), doctest::Contains("unknown config key: sed"),
                       concss::Error);
  CHECK_THROWS_WITH_AS(from_json(Json::parse(R"({"loss": {"marg": 1}})")),
                       doctest::Contains("unknown config key: loss.marg"), concss::Error);
  CHECK_THROWS_WITH_AS(from_json(Json::parse(R"({"loss": 3})")), doctest::Contains("must be an object"),
                       concss::Error);
  CHECK_THROWS_WITH_AS(from_json(Json::parse(R"({"seed": "one"})")), doctest::Contains("config key seed"),
                       concss::Error);
  CHECK_THROWS_AS(from_json(Json::parse(R"({"loss": {"strategy": "S9"}})")), concss::Error);
  CHECK_THROWS_AS(from_json(Json::parse("[1]")), concss::Error);

  RunConfig bad;
  bad.grad_eps = 0.0;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("invalid epsilon"), concss::Error);

  testing::TempDir dir;
  std::ofstream(dir / "broken.json") << "{\"seed\": ";
  CHECK_THROWS_WITH_AS(load_config(dir / "broken.json"), doctest::Contains("not valid JSON"), concss::Error);
  std::ofstream(dir / "ok.json") << R"({"corpus": {"n_conversations": 12}})";
  CHECK(load_config(dir / "ok.json").corpus.n_conversations == 12);
}

TEST_CASE("partition keeps train and held-out disjoint") {
  const Corpus corpus = testing::toy_corpus(20, 5, 6, 4, 2);
  RunConfig cfg;
  const auto p = partition(corpus, cfg);
  CHECK(p.train.conversations.size() == 12);
  CHECK(p.heldout.conversations.size() == 8);
  for (std::size_t k = 1; k < p.heldout.conversations.size(); ++k)
    CHECK(p.heldout.conversations[k - 1].id < p.heldout.conversations[k].id);
  for (const auto& a : p.train.conversations)
    for (const auto& b : p.heldout.conversations) CHECK(a.id != b.id);
  cfg.seed = 2;
  const auto q = partition(corpus, cfg);
  CHECK_FALSE(q.train.conversations == p.train.conversations);
}

TEST_CASE("CLI usage errors are one line and nonzero") {
  auto r = cli({"frobnicate"});
  CHECK(r.code == 2);
  CHECK(single_error_line(r.err));
  CHECK(r.err.find("unknown command") != std::string::npos);

  r = cli({});
  CHECK(r.code != 0);
  CHECK(single_error_line(r.err));

  r = cli({"train", "--manifest", "m.jsonl"});
  CHECK(r.code != 0);
  CHECK(single_error_line(r.err));

  r = cli({"train", "--manifest", "/nonexistent/m.jsonl", "--features", "/nonexistent/f.jsonl"});
  CHECK(r.code == 1);
  CHECK(single_error_line(r.err));

  r = cli({"synth-corpus", "--strategy", "S7"});
  CHECK(r.code == 1);
  CHECK(single_error_line(r.err));

  r = cli({"synth-corpus", "--seed", "abc"});
  CHECK(r.code != 0);
  CHECK(single_error_line(r.err));

  r = cli({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("grad-check") != std::string::npos);
  CHECK(r.err.empty());
}

TEST_CASE("CLI pipeline on a small corpus") {
  testing::TempDir dir;
  const auto d = dir.path().string();
  std::ofstream(dir / "cfg.json") << R"({"corpus": {"n_conversations": 12}, "loss": {"eval_every": 10},
                                        "apm": {"steps": 20}})";
  const std::string cfg = (dir / "cfg.json").string();

  auto r = cli({"synth-corpus", "--config", cfg, "--seed", "3", "--out-dir", d + "/corpus"});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "corpus/manifest.jsonl"));
  CHECK(read_json(dir / "corpus/synth_report.json")["conversations"] == 12);

  r = cli({"featurize", "--config", cfg, "--manifest", d + "/corpus/manifest.jsonl", "--out-dir", d + "/feat"});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "feat/features.jsonl"));
  CHECK_FALSE(fs::is_empty(dir / "feat/frames"));

  const std::vector<std::string> inputs{"--manifest", d + "/corpus/manifest.jsonl", "--features",
                                        d + "/feat/features.jsonl"};
  auto with = [&](std::vector<std::string> a, const std::vector<std::string>& more) {
    a.insert(a.end(), inputs.begin(), inputs.end());
    a.insert(a.end(), more.begin(), more.end());
    return a;
  };

  r = cli(with({"train", "--config", cfg, "--out-dir", d + "/train"}, {"--steps", "30", "--with-apm"}));
  REQUIRE(r.code == 0);
  const auto report = read_json(dir / "train/train_report.json");
  CHECK(report["command"] == "train");
  CHECK(report["config"]["loss"]["steps"] == 30);
  CHECK(report["train"]["steps"] == 30);
  CHECK(report.contains("apm"));
  CHECK(fs::exists(dir / "train/loss_curve.csv"));
  CHECK(fs::exists(dir / "train/satisfaction.csv"));
  const auto ck = load_checkpoint(dir / "train/checkpoint.bin");
  CHECK(ck.apm.has_value());
  CHECK(ck.meta.step == 30);

  const std::vector<std::string> ckpt{"--checkpoint", d + "/train/checkpoint.bin"};
  r = cli(with({"eval", "--config", cfg, "--out-dir", d + "/eval"}, ckpt));
  REQUIRE(r.code == 0);
  const auto ev = read_json(dir / "eval/eval_report.json");
  CHECK(ev["heldout_satisfaction"]["all"].contains("concat"));
  CHECK(ev["apm"].contains("fake"));
  CHECK(fs::exists(dir / "eval/apm_eval.csv"));

  r = cli(with({"sensitivity", "--config", cfg, "--out-dir", d + "/sens"}, ckpt));
  REQUIRE(r.code == 0);
  const auto sens = read_json(dir / "sens/sensitivity.json");
  CHECK(sens["sensitivity"]["gap_ci95"].size() == 2);

  r = cli(with({"project", "--config", cfg, "--out-dir", d + "/proj"}, {"--checkpoint", d + "/train/checkpoint.bin",
                                                                         "--modality", "concat"}));
  REQUIRE(r.code == 0);
  std::ifstream csv(dir / "proj/projection.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "id,conversation_id,context_kind,x,y");

  r = cli(with({"grad-check", "--config", cfg, "--out-dir", d + "/gc"}, {"--batch-size", "1"}));
  CHECK(r.code == 0);
  CHECK(read_json(dir / "gc/grad_check.json")["max_relative_error"].get<double>() < 1e-4);

  const auto corpus = load_manifest(dir / "corpus/manifest.jsonl");
  const auto utt = (corpus.root / corpus.conversations[0].utterances[0].audio_ref).string();
  r = cli({"metrics", utt, utt, "--out-dir", d + "/met"});
  REQUIRE(r.code == 0);
  const auto met = read_json(dir / "met/metrics.json");
  CHECK(met["mcd_db"] == 0.0);
  CHECK(met["log_f0_rmse"] == 0.0);

  r = cli(with({"eval", "--config", cfg, "--out-dir", d + "/eval2"}, {"--checkpoint", d + "/nope.bin"}));
  CHECK(r.code == 1);
  CHECK(single_error_line(r.err));
}

TEST_CASE("compare_wavs on identical and shifted audio") {
  const auto& fx = testing::small_synth();
  const auto& u = fx.corpus.conversations[0].utterances[0];
  const auto path = fx.corpus.root / u.audio_ref;
  const auto same = compare_wavs(path, path, FeatureParams{});
  CHECK(same.mcd_db == 0.0);
  REQUIRE(same.log_f0_rmse.has_value());
  CHECK(*same.log_f0_rmse == 0.0);
  CHECK(same.ref_frames == same.hyp_frames);

  const auto& v = fx.corpus.conversations[3].utterances[1];
  const auto diff = compare_wavs(path, fx.corpus.root / v.audio_ref, FeatureParams{});
  CHECK(diff.mcd_db > 0.0);
}
