#include "concss/apm.hpp"

#include <cmath>

#include "concss/metrics.hpp"
#include "concss/rng.hpp"
#include "concss/training.hpp"

namespace concss {

ApmParams ApmParams::zeros(int context_dim, int attn_dim) {
  if (context_dim < 1 || attn_dim < 1) throw Error("invalid APM dims");
  ApmParams p;
  p.context_dim = context_dim;
  p.attn_dim = attn_dim;
  p.query = Eigen::MatrixXd::Zero(attn_dim, context_dim);
  p.key = Eigen::MatrixXd::Zero(attn_dim, kProsodyDim);
  p.value = Eigen::MatrixXd::Zero(attn_dim, kProsodyDim);
  p.output = Eigen::MatrixXd::Zero(kProsodyDim, context_dim + attn_dim);
  p.output_bias = Eigen::VectorXd::Zero(kProsodyDim);
  return p;
}

Eigen::Index ApmParams::size() const {
  Eigen::Index n = 0;
  for_each_block([&](const char*, const double*, Eigen::Index k) { n += k; });
  return n;
}

Eigen::VectorXd ApmParams::pack() const {
  Eigen::VectorXd flat(size());
  Eigen::Index pos = 0;
  for_each_block([&](const char*, const double* p, Eigen::Index k) {
    flat.segment(pos, k) = Eigen::Map<const Eigen::VectorXd>(p, k);
    pos += k;
  });
  return flat;
}

void ApmParams::unpack(const Eigen::VectorXd& flat) {
  if (flat.size() != size()) throw Error("APM parameter vector length mismatch");
  Eigen::Index pos = 0;
  for_each_block([&](const char*, double* p, Eigen::Index k) {
    Eigen::Map<Eigen::VectorXd>(p, k) = flat.segment(pos, k);
    pos += k;
  });
}

ApmParams init_apm(std::uint64_t seed, int context_dim, int attn_dim) {
  ApmParams p = ApmParams::zeros(context_dim, attn_dim);
  Rng rng(seed);
  auto glorot = [&](Eigen::MatrixXd& m) {
    const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-bound, bound);
  };
  glorot(p.query);
  glorot(p.key);
  glorot(p.value);
  glorot(p.output);
  return p;
}

ApmTrace apm_forward(const Eigen::VectorXd& context, const LpvSequence& lpvs, const ApmParams& params) {
  if (context.size() != params.context_dim)
    throw Error("APM context dimension mismatch: got " + std::to_string(context.size()) + ", expected " +
                std::to_string(params.context_dim));
  if (lpvs.cols() == 0) throw Error("APM needs at least one preceding LPV");
  ApmTrace t;
  t.context = context;
  t.lpvs = lpvs;
  t.query = params.query * context;
  t.keys = params.key * lpvs;
  t.values = params.value * lpvs;
  const Eigen::VectorXd scores = t.keys.transpose() * t.query / std::sqrt(static_cast<double>(params.attn_dim));
  t.weights = (scores.array() - scores.maxCoeff()).exp().matrix();
  t.weights /= t.weights.sum();
  t.attended = t.values * t.weights;
  Eigen::VectorXd joint(params.context_dim + params.attn_dim);
  joint << context, t.attended;
  t.prediction = params.output * joint + params.output_bias;
  return t;
}

ProsodyStats predict_lpv(const Eigen::VectorXd& context, const LpvSequence& lpvs, const ApmParams& params) {
  return apm_forward(context, lpvs, params).prediction;
}

void apm_backward(const ApmTrace& t, const ApmParams& params, const ProsodyStats& upstream, ApmParams& grads) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.attn_dim));
  grads.output.leftCols(params.context_dim).noalias() += upstream * t.context.transpose();
  grads.output.rightCols(params.attn_dim).noalias() += upstream * t.attended.transpose();
  grads.output_bias += upstream;
  const Eigen::VectorXd g_att = params.output.rightCols(params.attn_dim).transpose() * upstream;
  grads.value.noalias() += g_att * (t.lpvs * t.weights).transpose();
  const Eigen::VectorXd g_alpha = t.values.transpose() * g_att;
  const Eigen::VectorXd g_scores =
      (t.weights.array() * (g_alpha.array() - t.weights.dot(g_alpha))).matrix();
  const Eigen::VectorXd g_query = scale * (t.keys * g_scores);
  const Eigen::MatrixXd g_keys = scale * (t.query * g_scores.transpose());
  grads.key.noalias() += g_keys * t.lpvs.transpose();
  grads.query.noalias() += g_query * t.context.transpose();
}

void ApmConfig::validate() const {
  if (attn_dim < 1) throw Error("attn_dim must be >= 1");
  if (steps < 0) throw Error("APM steps must be >= 0");
  if (batch_size < 1) throw Error("APM batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw Error("APM learning rate must be >= 0");
  if (context_max < 1) throw Error("APM context_max must be >= 1");
}

LpvSequence window_lpvs(const ContextWindow& w, const FeatureStore& features) {
  LpvSequence l(kProsodyDim, static_cast<Eigen::Index>(w.utterances.size()));
  for (std::size_t j = 0; j < w.utterances.size(); ++j)
    l.col(static_cast<Eigen::Index>(j)) = features.at(w.conversation_id, w.utterances[j]).prosody;
  return l;
}

ApmExample make_example(const ContextWindow& window, const std::string& conversation_id, int target_index,
                        const FeatureStore& features, const EncoderPair& encoders) {
  ApmExample e;
  e.conversation_id = conversation_id;
  e.target_index = target_index;
  e.context = encoders.encode_concat(window, features);
  e.lpvs = window_lpvs(window, features);
  e.target = features.at(conversation_id, target_index).prosody;
  return e;
}

std::vector<ApmExample> real_examples(const Corpus& corpus, const FeatureStore& features,
                                      const EncoderPair& encoders, int context_max) {
  std::vector<ApmExample> out;
  for (const auto& conv : corpus.conversations)
    for (int t = 1; t < conv.size(); ++t)
      out.push_back(make_example(make_context(conv, t, context_max), conv.id, t, features, encoders));
  return out;
}

double apm_mse(const std::vector<ApmExample>& examples, const ApmParams& params, ApmParams* grads) {
  if (examples.empty()) throw Error("apm_mse: no examples");
  const double scale = 1.0 / (static_cast<double>(examples.size()) * kProsodyDim);
  double sum = 0.0;
  for (const auto& e : examples) {
    const ApmTrace t = apm_forward(e.context, e.lpvs, params);
    const ProsodyStats diff = t.prediction - e.target;
    sum += diff.squaredNorm();
    if (grads) apm_backward(t, params, 2.0 * scale * diff, *grads);
  }
  return sum * scale;
}

ApmTrainResult train_apm_examples(const std::vector<ApmExample>& examples, int context_dim,
                                  const ApmConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (examples.empty()) throw Error("train_apm: no training examples");
  ApmTrainResult r{init_apm(stream_seed(seed, 0xa9a), context_dim, cfg.attn_dim), {}};
  ProsodyStats mean = ProsodyStats::Zero();
  for (const auto& e : examples) mean += e.target;
  r.params.output_bias = mean / static_cast<double>(examples.size());

  Adam adam(r.params.size(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Eigen::VectorXd flat = r.params.pack();
  std::vector<ApmExample> batch(static_cast<std::size_t>(cfg.batch_size));
  for (int step = 1; step <= cfg.steps; ++step) {
    Rng rng(stream_seed(seed, 0xa9a00000ULL + static_cast<std::uint64_t>(step)));
    for (auto& b : batch) b = examples[rng.below(examples.size())];
    ApmParams grads = ApmParams::zeros(context_dim, cfg.attn_dim);
    const double loss = apm_mse(batch, r.params, &grads);
    if (!std::isfinite(loss)) throw Error("non-finite APM loss at step " + std::to_string(step));
    adam.step(flat, grads.pack());
    r.params.unpack(flat);
    r.report.losses.push_back(loss);
  }
  r.report.train_mse = apm_mse(examples, r.params);
  r.report.examples = examples.size();
  r.report.seed = seed;
  return r;
}

ApmTrainResult train_apm(const Corpus& corpus, const FeatureStore& features, const EncoderPair& encoders,
                         const ApmConfig& cfg, std::uint64_t seed) {
  const auto examples = real_examples(corpus, features, encoders, cfg.context_max);
  return train_apm_examples(examples, encoders.text.dims.output + encoders.audio.dims.output, cfg, seed);
}

const char* to_string(ContextMode m) { return m == ContextMode::real ? "real" : "fake"; }

ApmEvalReport eval_apm(const Corpus& split, const FeatureStore& features, const EncoderPair& encoders,
                       const ApmParams& apm, ContextMode mode, std::uint64_t seed, int context_max) {
  if (context_max < 1) throw Error("context_max must be >= 1");
  const Sampler sampler(split, context_max);
  Rng rng(seed);
  ApmEvalReport r;
  r.mode = mode;
  ProsodyStats sq = ProsodyStats::Zero();
  std::vector<double> abs_f0;
  for (const auto& conv : split.conversations) {
    for (int t = 1; t < conv.size(); ++t) {
      ContextWindow window = make_context(conv, t, context_max);
      if (mode == ContextMode::fake) {
        window = sample_fake_context(sampler, conv.id, rng);
        if (window.conversation_id == conv.id) throw Error("fake context drawn from the target's own dialogue");
      }
      const ApmExample e = make_example(window, conv.id, t, features, encoders);
      const ProsodyStats diff = predict_lpv(e.context, e.lpvs, apm) - e.target;
      sq += diff.cwiseAbs2();
      abs_f0.push_back(std::abs(diff[0]));
    }
  }
  if (abs_f0.empty()) throw Error("eval_apm: split has no targets");
  const double n = static_cast<double>(abs_f0.size());
  r.targets = abs_f0.size();
  for (int k = 0; k < kProsodyDim; ++k) r.rmse[static_cast<std::size_t>(k)] = std::sqrt(sq[k] / n);
  r.mse = sq.sum() / (n * kProsodyDim);
  r.log_f0_rmse = r.rmse[0];
  double mean = 0.0;
  for (double v : abs_f0) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : abs_f0) var += (v - mean) * (v - mean);
  r.log_f0_abs_error_std = std::sqrt(var / n);
  return r;
}

double apm_grad_check(const std::vector<ApmExample>& examples, const ApmParams& params, double eps,
                      std::string* worst) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw Error("invalid epsilon");
  ApmParams grads = ApmParams::zeros(params.context_dim, params.attn_dim);
  apm_mse(examples, params, &grads);
  const Eigen::VectorXd analytic = grads.pack();
  ApmParams work = params;
  double max_err = 0.0;
  Eigen::Index k = 0;
  work.for_each_block([&](const char* name, double* p, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i, ++k) {
      const double saved = p[i];
      p[i] = saved + eps;
      const double up = apm_mse(examples, work);
      p[i] = saved - eps;
      const double down = apm_mse(examples, work);
      p[i] = saved;
      const double err = relative_error(analytic[k], (up - down) / (2.0 * eps));
      if (err > max_err || (worst && worst->empty())) {
        max_err = std::max(max_err, err);
        if (worst) *worst = std::string("apm.") + name + "[" + std::to_string(i) + "]";
      }
    }
  });
  return max_err;
}

}  // namespace concss
