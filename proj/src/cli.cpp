#include "concss/cli.hpp"

#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "concss/checkpoint.hpp"
#include "concss/reports.hpp"
#include "concss/wav.hpp"

namespace concss {
namespace {

namespace fs = std::filesystem;

constexpr double kGradTolerance = 1e-4;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> strategy;
  std::optional<double> margin;
  std::optional<int> batch_size;
  std::optional<int> steps;
  std::optional<int> context_max;
  std::optional<int> workers;
  bool with_apm = false;
  std::string manifest;
  std::string features;
  std::string checkpoint;
  std::string modality = "text";
  std::string ref_wav;
  std::string hyp_wav;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON config file; flags override its values");
  cmd->add_option("--seed", f.seed, "global seed");
  cmd->add_option("--out-dir", f.out_dir, "output directory");
  cmd->add_option("--strategy", f.strategy, "S1, S2 or S3");
  cmd->add_option("--margin", f.margin, "triplet margin m");
  cmd->add_option("--batch-size", f.batch_size, "triplets per batch (grad-check: batch to check)");
  cmd->add_option("--steps", f.steps, "training steps");
  cmd->add_option("--context-max", f.context_max, "longest context window i_max");
  cmd->add_flag("--with-apm", f.with_apm, "also train or evaluate the prosody predictor");
  cmd->add_option("--workers", f.workers, "featurization threads");
}

void add_inputs(CLI::App* cmd, Flags& f, bool need_checkpoint) {
  cmd->add_option("--manifest", f.manifest, "corpus manifest (JSON lines)")->required();
  cmd->add_option("--features", f.features, "feature store written by featurize")->required();
  if (need_checkpoint) cmd->add_option("--checkpoint", f.checkpoint, "encoder checkpoint")->required();
}

RunConfig resolve(const Flags& f, const std::string& command) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.out_dir) cfg.out_dir = *f.out_dir;
  if (f.strategy) cfg.loss.strategy = parse_strategy(*f.strategy);
  if (f.margin) cfg.loss.margin = *f.margin;
  if (f.batch_size) (command == "grad-check" ? cfg.grad_batch_size : cfg.loss.batch_size) = *f.batch_size;
  if (f.steps) cfg.loss.steps = *f.steps;
  if (f.context_max) {
    cfg.loss.context_max = *f.context_max;
    cfg.apm.context_max = *f.context_max;
  }
  if (f.workers) cfg.workers = *f.workers;
  if (f.with_apm) cfg.with_apm = true;
  cfg.validate();
  return cfg;
}

Json with_config(const RunConfig& cfg, const char* command) {
  Json j;
  j["command"] = command;
  j["config"] = to_json(cfg);
  return j;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(6) << v;
  return s.str();
}

struct Inputs {
  Corpus corpus;
  FeatureStore features;
};

Inputs load_inputs(const Flags& f, const RunConfig& cfg) {
  Inputs in;
  in.corpus = load_manifest(f.manifest);
  in.features = FeatureStore::load(f.features, cfg.features.hash_dim);
  for (const auto& c : in.corpus.conversations)
    for (const auto& u : c.utterances)
      if (!in.features.contains(c.id, u.index))
        throw Error("feature store has no entry for " + c.id + ":" + std::to_string(u.index));
  return in;
}

Checkpoint load_encoders(const Flags& f, const FeatureStore& features) {
  Checkpoint ck = load_checkpoint(f.checkpoint);
  const EncoderPair expected = init_encoder_pair(0, features.hash_dim());
  require_dims(ck.encoders.text, expected.text.dims, "text encoder");
  require_dims(ck.encoders.audio, expected.audio.dims, "audio encoder");
  return ck;
}

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  const Corpus corpus = generate_synthetic(cfg.corpus, cfg.seed, cfg.out_dir);
  save_manifest(corpus, cfg.out_dir / "manifest.jsonl");
  Json j = with_config(cfg, "synth-corpus");
  j["manifest"] = "manifest.jsonl";
  j["conversations"] = corpus.conversations.size();
  j["utterances"] = corpus.utterance_count();
  j["speakers"] = corpus.speakers.size();
  write_json(cfg.out_dir / "synth_report.json", j);
  out << "wrote " << corpus.utterance_count() << " utterances in " << corpus.conversations.size()
      << " conversations to " << (cfg.out_dir / "manifest.jsonl").string() << '\n';
  return 0;
}

int cmd_featurize(const Flags& f, const RunConfig& cfg, std::ostream& out) {
  const Corpus corpus = load_manifest(f.manifest);
  const FeatureStore store = featurize_corpus(corpus, cfg.features, cfg.workers, cfg.out_dir / "frames");
  store.save(cfg.out_dir / "features.jsonl");
  Json j = with_config(cfg, "featurize");
  j["utterances"] = store.size();
  j["features"] = "features.jsonl";
  j["frame_cache"] = "frames";
  write_json(cfg.out_dir / "featurize_report.json", j);
  out << "featurized " << store.size() << " utterances into " << (cfg.out_dir / "features.jsonl").string()
      << '\n';
  return 0;
}

int cmd_train(const Flags& f, const RunConfig& cfg, std::ostream& out) {
  const Inputs in = load_inputs(f, cfg);
  const Partition part = partition(in.corpus, cfg);
  TrainResult result = train(part.train, in.features, cfg.loss, cfg.seed, &part.heldout);
  Checkpoint ck;
  ck.meta.seed = cfg.seed;
  ck.meta.step = static_cast<std::uint64_t>(cfg.loss.steps);
  ck.encoders = result.encoders;
  Json j = with_config(cfg, "train");
  if (cfg.with_apm) {
    const ApmTrainResult apm = train_apm(part.train, in.features, result.encoders, cfg.apm, cfg.seed);
    ck.apm = apm.params;
    j["apm"] = to_json(apm.report);
  }
  fs::create_directories(cfg.out_dir);
  save_checkpoint(ck, cfg.out_dir / "checkpoint.bin");
  result.report.checkpoint = "checkpoint.bin";
  j["train"] = to_json(result.report);
  write_json(cfg.out_dir / "train_report.json", j);
  write_loss_csv(cfg.out_dir / "loss_curve.csv", result.report);
  write_satisfaction_csv(cfg.out_dir / "satisfaction.csv", result.report);
  out << "trained " << to_string(cfg.loss.strategy) << " for " << cfg.loss.steps << " steps";
  if (!result.report.satisfaction.empty())
    out << "; held-out concat satisfaction " << fmt(result.report.satisfaction.back().all.concat);
  out << '\n';
  return 0;
}

int cmd_grad_check(const Flags& f, const RunConfig& cfg, std::ostream& out) {
  const Inputs in = load_inputs(f, cfg);
  LossConfig lc = cfg.loss;
  lc.batch_size = cfg.grad_batch_size;
  const GradCheckReport enc = grad_check(in.corpus, in.features, lc, cfg.seed, cfg.grad_eps);

  const EncoderPair encoders = init_encoder_pair(stream_seed(cfg.seed, 0), in.features.hash_dim());
  const auto all = real_examples(in.corpus, in.features, encoders, cfg.apm.context_max);
  Rng rng(stream_seed(cfg.seed, 0x6d00));
  std::vector<ApmExample> batch;
  for (int k = 0; k < cfg.grad_batch_size; ++k) batch.push_back(all[rng.below(all.size())]);
  ApmParams apm = init_apm(stream_seed(cfg.seed, 0xa9a), encoders.text.dims.output + encoders.audio.dims.output,
                           cfg.apm.attn_dim);
  for (int k = 0; k < kProsodyDim; ++k) apm.output_bias[k] = rng.uniform(-1.0, 1.0);
  std::string apm_worst;
  const double apm_err = apm_grad_check(batch, apm, cfg.grad_eps, &apm_worst);

  const double worst = std::max(enc.max_relative_error, apm_err);
  const bool passed = worst < kGradTolerance;
  Json j = with_config(cfg, "grad-check");
  j["encoders"] = to_json(enc);
  j["apm"] = Json{{"max_relative_error", apm_err}, {"worst_parameter", apm_worst}, {"parameters", apm.size()}};
  j["max_relative_error"] = worst;
  j["tolerance"] = kGradTolerance;
  j["passed"] = passed;
  write_json(cfg.out_dir / "grad_check.json", j);
  out << "max relative error " << std::scientific << std::setprecision(3) << worst << " (encoders "
      << enc.max_relative_error << " at " << enc.worst_parameter << ", apm " << apm_err << " at " << apm_worst
      << ")" << std::defaultfloat << '\n';
  return passed ? 0 : 1;
}

int cmd_eval(const Flags& f, const RunConfig& cfg, std::ostream& out) {
  const Inputs in = load_inputs(f, cfg);
  const Checkpoint ck = load_encoders(f, in.features);
  const Partition part = partition(in.corpus, cfg);
  const Sampler sampler(part.heldout, cfg.loss.context_max);
  const auto triplets = heldout_triplets(sampler, cfg.loss.eval_triplets, stream_seed(cfg.seed, 7));
  std::vector<Triplet> inter, intra;
  for (const auto& t : triplets) (t.negative_class == NegativeClass::inter_speaker ? inter : intra).push_back(t);

  Json j = with_config(cfg, "eval");
  Json sat;
  sat["all"] = to_json(triplet_satisfaction(ck.encoders, in.features, triplets, cfg.loss.margin));
  if (!inter.empty()) sat["inter_speaker"] = to_json(triplet_satisfaction(ck.encoders, in.features, inter, cfg.loss.margin));
  if (!intra.empty()) sat["intra_speaker"] = to_json(triplet_satisfaction(ck.encoders, in.features, intra, cfg.loss.margin));
  j["heldout_satisfaction"] = sat;
  out << "held-out concat satisfaction " << fmt(sat["all"]["concat"].get<double>()) << '\n';

  if (cfg.with_apm && !ck.apm) throw Error("checkpoint has no APM block; train with --with-apm");
  if (ck.apm) {
    std::vector<ApmEvalReport> reports;
    for (ContextMode mode : {ContextMode::real, ContextMode::fake})
      reports.push_back(eval_apm(part.heldout, in.features, ck.encoders, *ck.apm, mode, stream_seed(cfg.seed, 11),
                                 cfg.apm.context_max));
    j["apm"] = Json{{"real", to_json(reports[0])}, {"fake", to_json(reports[1])}};
    write_apm_csv(cfg.out_dir / "apm_eval.csv", reports);
    out << "apm log-F0 RMSE real " << fmt(reports[0].log_f0_rmse) << ", fake " << fmt(reports[1].log_f0_rmse)
        << '\n';
  }
  write_json(cfg.out_dir / "eval_report.json", j);
  return 0;
}

int cmd_sensitivity(const Flags& f, const RunConfig& cfg, std::ostream& out) {
  const Inputs in = load_inputs(f, cfg);
  const Checkpoint ck = load_encoders(f, in.features);
  const Partition part = partition(in.corpus, cfg);
  const SensitivityReport r = context_sensitivity(part.heldout, in.features, ck.encoders, cfg.n_fakes,
                                                  stream_seed(cfg.seed, 13), cfg.loss.context_max);
  Json j = with_config(cfg, "sensitivity");
  j["sensitivity"] = to_json(r);
  write_json(cfg.out_dir / "sensitivity.json", j);
  out << "gap " << fmt(r.gap) << " [" << fmt(r.gap_ci_low) << ", " << fmt(r.gap_ci_high)
      << "], nearest-real accuracy " << fmt(r.nearest_real_accuracy) << '\n';
  return 0;
}

int cmd_project(const Flags& f, const RunConfig& cfg, std::ostream& out) {
  if (f.modality != "text" && f.modality != "audio" && f.modality != "concat")
    throw Error("unknown modality: " + f.modality + " (expected text, audio or concat)");
  const Inputs in = load_inputs(f, cfg);
  const Checkpoint ck = load_encoders(f, in.features);
  const Partition part = partition(in.corpus, cfg);
  const Sampler sampler(part.heldout, cfg.loss.context_max);
  Rng rng(stream_seed(cfg.seed, 17));

  auto embed = [&](const ContextWindow& w) -> Eigen::VectorXd {
    if (f.modality == "concat") return ck.encoders.encode_concat(w, in.features);
    const Modality m = f.modality == "text" ? Modality::text : Modality::audio;
    return encode(w, in.features, ck.encoders.get(m), m);
  };
  std::vector<ProjectedPoint> points;
  std::vector<Eigen::VectorXd> rows;
  for (const auto& conv : part.heldout.conversations) {
    for (int t = 1; t < conv.size(); ++t) {
      const std::string id = conv.id + "@" + std::to_string(t);
      rows.push_back(embed(make_context(conv, t, cfg.loss.context_max)));
      points.push_back({id, conv.id, "real"});
      rows.push_back(embed(sample_fake_context(sampler, conv.id, rng)));
      points.push_back({id + "~fake", conv.id, "fake"});
    }
  }
  if (rows.empty()) throw Error("held-out split has no targets to project");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  const Projection p = project_embeddings(m);
  write_projection_csv(cfg.out_dir / "projection.csv", points, p);
  Json j = with_config(cfg, "project");
  j["modality"] = f.modality;
  j["points"] = points.size();
  j["variances"] = Json::array({p.variances[0], p.variances[1]});
  write_json(cfg.out_dir / "projection.json", j);
  out << "projected " << points.size() << " context vectors to " << (cfg.out_dir / "projection.csv").string()
      << '\n';
  return 0;
}

int cmd_metrics(const Flags& f, const RunConfig& cfg, std::ostream& out) {
  const MetricsResult r = compare_wavs(f.ref_wav, f.hyp_wav, cfg.features);
  Json j = with_config(cfg, "metrics");
  j["ref"] = f.ref_wav;
  j["hyp"] = f.hyp_wav;
  j["mcd_db"] = r.mcd_db;
  j["log_f0_rmse"] = r.log_f0_rmse ? Json(*r.log_f0_rmse) : Json(nullptr);
  write_json(cfg.out_dir / "metrics.json", j);
  out << "MCD " << std::fixed << std::setprecision(4) << r.mcd_db << " dB, log-F0 RMSE ";
  if (r.log_f0_rmse)
    out << *r.log_f0_rmse;
  else
    out << "undefined (no voiced pair)";
  out << std::defaultfloat << '\n';
  return 0;
}

}  // namespace

MetricsResult compare_wavs(const fs::path& ref, const fs::path& hyp, const FeatureParams& params) {
  const FrameTrack a = analyze(read_wav(ref), params);
  const FrameTrack b = analyze(read_wav(hyp), params);
  const McdResult m = mcd(a.cepstra, b.cepstra);
  MetricsResult r;
  r.mcd_db = m.mcd_db;
  r.log_f0_rmse = log_f0_rmse(a.f0, b.f0, m.alignment);
  r.ref_frames = static_cast<long>(a.frames());
  r.hyp_frames = static_cast<long>(b.frames());
  return r;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive context-representation workbench"};
  app.require_subcommand(1);
  Flags f;
  auto* synth = app.add_subcommand("synth-corpus", "generate a synthetic conversational corpus");
  auto* featurize = app.add_subcommand("featurize", "extract text and prosody features");
  auto* trn = app.add_subcommand("train", "contrastive training of the context encoders");
  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient check (encoders and APM)");
  auto* ev = app.add_subcommand("eval", "held-out triplet satisfaction and APM prosody error");
  auto* sens = app.add_subcommand("sensitivity", "real-vs-fake context sensitivity");
  auto* proj = app.add_subcommand("project", "PCA projection of held-out context vectors");
  auto* met = app.add_subcommand("metrics", "MCD and log-F0 RMSE between two WAV files");
  for (auto* c : {synth, featurize, trn, gc, ev, sens, proj, met}) add_common(c, f);
  featurize->add_option("--manifest", f.manifest, "corpus manifest (JSON lines)")->required();
  add_inputs(trn, f, false);
  add_inputs(gc, f, false);
  add_inputs(ev, f, true);
  add_inputs(sens, f, true);
  add_inputs(proj, f, true);
  proj->add_option("--modality", f.modality, "text, audio or concat");
  met->add_option("ref", f.ref_wav, "reference WAV")->required();
  met->add_option("hyp", f.hyp_wav, "hypothesis WAV")->required();

  if (!args.empty() && !args.front().empty() && args.front()[0] != '-' &&
      app.get_subcommands([&](CLI::App* c) { return c->get_name() == args.front(); }).empty()) {
    err << "concss: error: unknown command: " << args.front() << '\n';
    return 2;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "concss: error: " << e.what() << '\n';
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    const RunConfig cfg = resolve(f, name);
    if (name == "synth-corpus") return cmd_synth(cfg, out);
    if (name == "featurize") return cmd_featurize(f, cfg, out);
    if (name == "train") return cmd_train(f, cfg, out);
    if (name == "grad-check") return cmd_grad_check(f, cfg, out);
    if (name == "eval") return cmd_eval(f, cfg, out);
    if (name == "sensitivity") return cmd_sensitivity(f, cfg, out);
    if (name == "project") return cmd_project(f, cfg, out);
    return cmd_metrics(f, cfg, out);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg)
      if (c == '\n') c = ' ';
    err << "concss: error: " << msg << '\n';
    return 1;
  }
}

}  // namespace concss
