#include "concss/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <memory>

#include "concss/losses.hpp"

namespace concss {

const char* to_string(LossKind k) { return k == LossKind::pairwise ? "pairwise" : "triplet"; }

void LossConfig::validate() const {
  if (!(margin > 0.0)) throw Error("margin must be positive");
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  if (steps < 0) throw Error("steps must be >= 0");
  if (!(learning_rate >= 0.0)) throw Error("learning rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw Error("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw Error("Adam epsilon must be positive");
  if (context_max < 2) throw Error("context_max must be >= 2 so positives exist");
  if (eval_every < 1) throw Error("eval_every must be >= 1");
  if (eval_triplets < 2) throw Error("eval_triplets must be >= 2");
}

double modality_loss(const std::vector<Triplet>& batch, const FeatureStore& features,
                     const EncoderParams& params, Modality modality, const LossConfig& cfg,
                     double weight, EncoderParams* grads, double* min_kink) {
  if (batch.empty()) throw Error("empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double sum = 0.0;
  for (const auto& t : batch) {
    const EncodeTrace a = encode_trace(t.anchor, features, params, modality);
    const EncodeTrace p = encode_trace(t.positive, features, params, modality);
    const EncodeTrace n = encode_trace(t.negative, features, params, modality);
    const auto term = cfg.loss_kind() == LossKind::triplet
                          ? triplet_term(a.output, p.output, n.output, cfg.margin)
                          : pairwise_term(a.output, p.output, n.output, cfg.margin);
    sum += term.loss;
    if (min_kink) *min_kink = std::min(*min_kink, term.kink_distance);
    if (grads && term.loss > 0.0) {
      const double s = weight * inv_n;
      encode_backward(a, params, s * term.grad_anchor, *grads);
      encode_backward(p, params, s * term.grad_positive, *grads);
      encode_backward(n, params, s * term.grad_negative, *grads);
    }
  }
  return sum * inv_n;
}

BatchLoss batch_loss(const std::vector<Triplet>& batch, const FeatureStore& features,
                     const EncoderPair& encoders, const LossConfig& cfg) {
  BatchLoss out;
  out.grads.text = EncoderParams::zeros(encoders.text.dims);
  out.grads.audio = EncoderParams::zeros(encoders.audio.dims);
  out.min_kink_distance = std::numeric_limits<double>::infinity();
  out.text = modality_loss(batch, features, encoders.text, Modality::text, cfg, cfg.text_weight,
                           &out.grads.text, &out.min_kink_distance);
  out.audio = modality_loss(batch, features, encoders.audio, Modality::audio, cfg, cfg.audio_weight,
                            &out.grads.audio, &out.min_kink_distance);
  out.total = cfg.text_weight * out.text + cfg.audio_weight * out.audio;
  return out;
}

Adam::Adam(Eigen::Index size, double lr, double beta1, double beta2, double eps)
    : m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)),
      lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

std::vector<Triplet> heldout_triplets(const Sampler& sampler, int count, std::uint64_t seed) {
  Rng rng(seed);
  const bool has_inter = !sampler.valid_anchors(NegativeClass::inter_speaker).empty();
  const bool has_intra = !sampler.valid_anchors(NegativeClass::intra_speaker).empty();
  if (has_inter && has_intra) return sampler.build_batch(count, Strategy::S3, rng);
  if (has_inter) return sampler.build_batch(count, Strategy::S2, rng);
  throw Error("held-out corpus has no anchor with an eligible inter_speaker negative");
}

namespace {

SatisfactionRecord evaluate(int step, const EncoderPair& enc, const FeatureStore& features,
                            const std::vector<Triplet>& triplets, double margin) {
  SatisfactionRecord r;
  r.step = step;
  r.all = triplet_satisfaction(enc, features, triplets, margin);
  std::vector<Triplet> inter, intra;
  for (const auto& t : triplets)
    (t.negative_class == NegativeClass::inter_speaker ? inter : intra).push_back(t);
  if (!inter.empty()) r.inter = triplet_satisfaction(enc, features, inter, margin);
  if (!intra.empty()) r.intra = triplet_satisfaction(enc, features, intra, margin);
  return r;
}

std::string describe_batch(const std::vector<Triplet>& batch) {
  std::string s;
  auto w = [](const ContextWindow& c) {
    return c.conversation_id + "@" + std::to_string(c.target_index) + "/" + std::to_string(c.length);
  };
  for (const auto& t : batch) {
    if (!s.empty()) s += "; ";
    s += w(t.anchor) + " " + w(t.positive) + " " + w(t.negative);
  }
  return s;
}

}  // namespace

TrainResult train_from(EncoderPair start, const Corpus& corpus, const FeatureStore& features,
                       const LossConfig& cfg, std::uint64_t seed, const Corpus* heldout) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Sampler sampler(corpus, cfg.context_max);

  std::vector<Triplet> eval_set;
  std::unique_ptr<Sampler> eval_sampler;
  if (heldout) {
    eval_sampler = std::make_unique<Sampler>(*heldout, cfg.context_max);
    eval_set = heldout_triplets(*eval_sampler, cfg.eval_triplets, stream_seed(seed, 7));
  }

  TrainResult result{std::move(start), {}};
  TrainReport& report = result.report;
  report.seed = seed;
  report.batch_size = cfg.batch_size;
  report.inter_per_batch = cfg.strategy == Strategy::S3 ? (cfg.batch_size + 1) / 2 : cfg.batch_size;
  report.intra_per_batch = cfg.batch_size - report.inter_per_batch;

  EncoderPair& enc = result.encoders;
  Adam adam_text(enc.text.size(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Adam adam_audio(enc.audio.size(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Eigen::VectorXd flat_text = enc.text.pack();
  Eigen::VectorXd flat_audio = enc.audio.pack();

  if (heldout) report.satisfaction.push_back(evaluate(0, enc, features, eval_set, cfg.margin));
  for (int step = 1; step <= cfg.steps; ++step) {
    Rng rng(stream_seed(seed, 1000003ULL + static_cast<std::uint64_t>(step)));
    const auto batch = sampler.build_batch(cfg.batch_size, cfg.strategy, rng);
    const BatchLoss bl = batch_loss(batch, features, enc, cfg);
    if (!std::isfinite(bl.total))
      throw Error("non-finite loss at step " + std::to_string(step) + " (batch: " + describe_batch(batch) + ")");
    adam_text.step(flat_text, bl.grads.text.pack());
    adam_audio.step(flat_audio, bl.grads.audio.pack());
    enc.text.unpack(flat_text);
    enc.audio.unpack(flat_audio);
    report.losses.push_back({step, bl.total, bl.text, bl.audio});
    if (heldout && (step % cfg.eval_every == 0 || step == cfg.steps))
      report.satisfaction.push_back(evaluate(step, enc, features, eval_set, cfg.margin));
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

TrainResult train(const Corpus& corpus, const FeatureStore& features, const LossConfig& cfg,
                  std::uint64_t seed, const Corpus* heldout) {
  return train_from(init_encoder_pair(stream_seed(seed, 0), features.hash_dim()), corpus, features,
                    cfg, seed, heldout);
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check_batch(const std::vector<Triplet>& batch, const FeatureStore& features,
                                 const EncoderPair& encoders, const LossConfig& cfg, double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw Error("invalid epsilon");
  const BatchLoss analytic = batch_loss(batch, features, encoders, cfg);
  GradCheckReport report;
  for (Modality m : {Modality::text, Modality::audio}) {
    const double weight = m == Modality::text ? cfg.text_weight : cfg.audio_weight;
    EncoderParams work = encoders.get(m);
    const Eigen::VectorXd grad = analytic.grads.get(m).pack();
    std::vector<std::pair<std::string, double*>> entries;
    work.for_each_block([&](const char* name, double* p, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i)
        entries.emplace_back(std::string(to_string(m)) + "." + name + "[" + std::to_string(i) + "]", p + i);
    });
    for (std::size_t k = 0; k < entries.size(); ++k) {
      double* p = entries[k].second;
      const double saved = *p;
      *p = saved + eps;
      const double up = modality_loss(batch, features, work, m, cfg, weight, nullptr);
      *p = saved - eps;
      const double down = modality_loss(batch, features, work, m, cfg, weight, nullptr);
      *p = saved;
      const double numeric = weight * (up - down) / (2.0 * eps);
      const double err = relative_error(grad[static_cast<Eigen::Index>(k)], numeric);
      if (report.worst_parameter.empty() || err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_parameter = entries[k].first;
      }
    }
    report.parameters += static_cast<Eigen::Index>(entries.size());
  }
  return report;
}

GradCheckReport grad_check(const Corpus& corpus, const FeatureStore& features, const LossConfig& cfg,
                           std::uint64_t seed, double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw Error("invalid epsilon");
  cfg.validate();
  const EncoderPair enc = init_encoder_pair(stream_seed(seed, 0), features.hash_dim());
  const Sampler sampler(corpus, cfg.context_max);
  constexpr int kMaxDraws = 100;
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    Rng rng(stream_seed(seed, 0x6c00ULL + static_cast<std::uint64_t>(draw)));
    const auto batch = sampler.build_batch(cfg.batch_size, cfg.strategy, rng);
    const BatchLoss bl = batch_loss(batch, features, enc, cfg);
    if (bl.min_kink_distance < 10.0 * eps) continue;
    GradCheckReport r = grad_check_batch(batch, features, enc, cfg, eps);
    r.skipped_batches = draw;
    return r;
  }
  throw Error("grad_check: every drawn batch lies next to a hinge kink");
}

}  // namespace concss
