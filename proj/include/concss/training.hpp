#ifndef CONCSS_TRAINING_HPP
#define CONCSS_TRAINING_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "concss/encoder.hpp"
#include "concss/metrics.hpp"
#include "concss/sampler.hpp"

namespace concss {

enum class LossKind { pairwise, triplet };

const char* to_string(LossKind k);

struct LossConfig {
  Strategy strategy = Strategy::S3;
  double margin = 1.0;
  int batch_size = 16;
  int steps = 2000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double text_weight = 1.0;
  double audio_weight = 1.0;
  int context_max = 5;       ///< i_max
  int eval_every = 100;      ///< steps between held-out satisfaction checks
  int eval_triplets = 256;

  /// S1 uses the pairwise loss, S2/S3 the triplet loss.
  LossKind loss_kind() const { return strategy == Strategy::S1 ? LossKind::pairwise : LossKind::triplet; }
  void validate() const;
};

struct BatchLoss {
  double total = 0.0;  ///< text_weight * text + audio_weight * audio
  double text = 0.0;   ///< (1/N) sum_k L_text^k
  double audio = 0.0;
  EncoderPair grads;
  double min_kink_distance = 0.0;  ///< over all terms and modalities
};

/// Loss of one modality over the batch, averaged over triplets. Gradients
/// (scaled by `weight`) are accumulated into `grads` when non-null.
double modality_loss(const std::vector<Triplet>& batch, const FeatureStore& features,
                     const EncoderParams& params, Modality modality, const LossConfig& cfg,
                     double weight, EncoderParams* grads, double* min_kink = nullptr);

BatchLoss batch_loss(const std::vector<Triplet>& batch, const FeatureStore& features,
                     const EncoderPair& encoders, const LossConfig& cfg);

/// Adam on a flat parameter vector.
class Adam {
 public:
  Adam(Eigen::Index size, double lr, double beta1, double beta2, double eps);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
  long steps() const { return t_; }

 private:
  Eigen::VectorXd m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

struct StepRecord {
  int step = 0;
  double total = 0.0, text = 0.0, audio = 0.0;
};

struct SatisfactionRecord {
  int step = 0;
  SatisfactionReport all, inter, intra;
};

struct TrainReport {
  std::vector<StepRecord> losses;
  std::vector<SatisfactionRecord> satisfaction;
  std::uint64_t seed = 0;
  int batch_size = 0;
  int inter_per_batch = 0;
  int intra_per_batch = 0;
  std::string checkpoint;
  double wall_seconds = 0.0;  ///< kept out of serialized reports
};

struct TrainResult {
  EncoderPair encoders;
  TrainReport report;
};

/// Held-out triplets laid out like an S3 batch (even slots inter-speaker,
/// odd slots intra-speaker), or all inter-speaker when no intra negative
/// exists.
std::vector<Triplet> heldout_triplets(const Sampler& sampler, int count, std::uint64_t seed);

/// Contrastive pretext training. Batches of step t are drawn from a stream
/// seeded by (seed, t); encoder initialization uses its own stream. When
/// `heldout` is non-null, satisfaction on its triplets is recorded every
/// eval_every steps and after the last step.
TrainResult train(const Corpus& corpus, const FeatureStore& features, const LossConfig& cfg,
                  std::uint64_t seed, const Corpus* heldout = nullptr);

/// Training from a given starting point (used by `train` and by tests).
TrainResult train_from(EncoderPair start, const Corpus& corpus, const FeatureStore& features,
                       const LossConfig& cfg, std::uint64_t seed, const Corpus* heldout);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Eigen::Index parameters = 0;
  int skipped_batches = 0;
};

/// Relative error used by every gradient check:
/// |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

/// Central finite differences of L_contra with respect to every encoder
/// parameter on the given batch.
GradCheckReport grad_check_batch(const std::vector<Triplet>& batch, const FeatureStore& features,
                                 const EncoderPair& encoders, const LossConfig& cfg, double eps);

/// Draws a random batch (redrawing while any term lies within 10 eps of a
/// kink) from freshly initialized encoders and checks it.
GradCheckReport grad_check(const Corpus& corpus, const FeatureStore& features, const LossConfig& cfg,
                           std::uint64_t seed, double eps);

}  // namespace concss

#endif  // CONCSS_TRAINING_HPP
