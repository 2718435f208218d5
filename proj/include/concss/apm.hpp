#ifndef CONCSS_APM_HPP
#define CONCSS_APM_HPP

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "concss/encoder.hpp"
#include "concss/features.hpp"

namespace concss {

/// Attention-based next-prosody predictor.
///
///   q = Wq h,  k_j = Wk l_j,  v_j = Wv l_j
///   alpha = softmax(q . k_j / sqrt(a))
///   y = Wo [h ; sum_j alpha_j v_j] + bo
///
/// h is the concatenated context vector and l_j the prosody summaries of
/// the preceding utterances. There is no positional code: the order of
/// the l_j only matters through their values.
struct ApmParams {
  int context_dim = 64;
  int attn_dim = 16;
  Eigen::MatrixXd query;   ///< attn x context
  Eigen::MatrixXd key;     ///< attn x 6
  Eigen::MatrixXd value;   ///< attn x 6
  Eigen::MatrixXd output;  ///< 6 x (context + attn)
  Eigen::VectorXd output_bias;

  static ApmParams zeros(int context_dim, int attn_dim);

  template <typename F>
  void for_each_block(F&& f) {
    f("query", query.data(), query.size());
    f("key", key.data(), key.size());
    f("value", value.data(), value.size());
    f("output", output.data(), output.size());
    f("output_bias", output_bias.data(), output_bias.size());
  }
  template <typename F>
  void for_each_block(F&& f) const {
    const_cast<ApmParams*>(this)->for_each_block(
        [&](const char* name, double* p, Eigen::Index n) { f(name, static_cast<const double*>(p), n); });
  }

  Eigen::Index size() const;
  Eigen::VectorXd pack() const;
  void unpack(const Eigen::VectorXd& flat);

  bool operator==(const ApmParams& o) const {
    return context_dim == o.context_dim && attn_dim == o.attn_dim && pack() == o.pack();
  }
};

ApmParams init_apm(std::uint64_t seed, int context_dim, int attn_dim);

/// Preceding prosody summaries, one column per utterance, oldest first.
using LpvSequence = Eigen::Matrix<double, kProsodyDim, Eigen::Dynamic>;

struct ApmTrace {
  Eigen::VectorXd context;
  LpvSequence lpvs;
  Eigen::VectorXd query;
  Eigen::MatrixXd keys;     ///< attn x i
  Eigen::MatrixXd values;   ///< attn x i
  Eigen::VectorXd weights;  ///< attention distribution over the i entries
  Eigen::VectorXd attended;
  ProsodyStats prediction;
};

ApmTrace apm_forward(const Eigen::VectorXd& context, const LpvSequence& lpvs, const ApmParams& params);

ProsodyStats predict_lpv(const Eigen::VectorXd& context, const LpvSequence& lpvs, const ApmParams& params);

/// Accumulates d<upstream, prediction>/d params into `grads`.
void apm_backward(const ApmTrace& trace, const ApmParams& params, const ProsodyStats& upstream,
                  ApmParams& grads);

struct ApmConfig {
  int attn_dim = 16;
  int steps = 3000;
  int batch_size = 16;
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int context_max = 5;

  void validate() const;
};

/// One prediction target: context vector and preceding LPVs of a window,
/// plus the measured prosody of the target utterance.
struct ApmExample {
  std::string conversation_id;
  int target_index = 0;
  Eigen::VectorXd context;
  LpvSequence lpvs;
  ProsodyStats target;
};

LpvSequence window_lpvs(const ContextWindow& w, const FeatureStore& features);

ApmExample make_example(const ContextWindow& context_window, const std::string& conversation_id,
                        int target_index, const FeatureStore& features, const EncoderPair& encoders);

/// Every target (index >= 1) with its true history of up to context_max
/// utterances.
std::vector<ApmExample> real_examples(const Corpus& corpus, const FeatureStore& features,
                                      const EncoderPair& encoders, int context_max);

/// Mean over examples and the six dimensions of the squared error.
double apm_mse(const std::vector<ApmExample>& examples, const ApmParams& params,
               ApmParams* grads = nullptr);

struct ApmTrainReport {
  std::vector<double> losses;  ///< minibatch MSE per step
  double train_mse = 0.0;
  std::size_t examples = 0;
  std::uint64_t seed = 0;
};

struct ApmTrainResult {
  ApmParams params;
  ApmTrainReport report;
};

/// Teacher-forced MSE training with frozen encoders. The output bias
/// starts at the mean training target.
ApmTrainResult train_apm(const Corpus& corpus, const FeatureStore& features,
                         const EncoderPair& encoders, const ApmConfig& cfg, std::uint64_t seed);

ApmTrainResult train_apm_examples(const std::vector<ApmExample>& examples, int context_dim,
                                  const ApmConfig& cfg, std::uint64_t seed);

enum class ContextMode { real, fake };

const char* to_string(ContextMode m);

struct ApmEvalReport {
  ContextMode mode = ContextMode::real;
  std::array<double, kProsodyDim> rmse{};
  double mse = 0.0;
  double log_f0_rmse = 0.0;  ///< of predicted vs true mean log-F0
  double log_f0_abs_error_std = 0.0;  ///< per-utterance spread
  std::size_t targets = 0;
};

/// Fake mode swaps each target's context window for one drawn from an
/// unrelated dialogue; both the context vector and the LPVs come from it.
ApmEvalReport eval_apm(const Corpus& split, const FeatureStore& features, const EncoderPair& encoders,
                       const ApmParams& apm, ContextMode mode, std::uint64_t seed, int context_max);

/// APM gradient check on the given examples.
double apm_grad_check(const std::vector<ApmExample>& examples, const ApmParams& params, double eps,
                      std::string* worst = nullptr);

}  // namespace concss

#endif  // CONCSS_APM_HPP
