#ifndef CONCSS_ENCODER_HPP
#define CONCSS_ENCODER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "concss/features.hpp"
#include "concss/sampler.hpp"

namespace concss {

enum class Modality { text, audio };

const char* to_string(Modality m);

struct EncoderDims {
  int input_dim = 0;
  int embed = 8;     ///< speaker embedding width
  int hidden = 64;
  int output = 32;   ///< context vector dimension d
  int buckets = 64;  ///< speaker hash buckets

  int aggregate_dim() const { return input_dim + embed; }
  bool operator==(const EncoderDims&) const = default;
};

std::string describe(const EncoderDims& d);

/// Context encoder for one modality.
///
///   agg = sum_j w_j [x_j ; E[bucket(p_j)]],  w_j proportional to 2^(j-i)
///   z   = P agg + p_b                        (input projection)
///   h   = tanh(W1 z + b1)
///   out = W2 h + b2
///
/// j runs oldest (1) to newest (i), so the newest entry carries the
/// largest weight.
struct EncoderParams {
  EncoderDims dims;
  Eigen::MatrixXd speaker;  ///< buckets x embed
  Eigen::MatrixXd proj;     ///< hidden x (input_dim + embed)
  Eigen::VectorXd proj_bias;
  Eigen::MatrixXd hidden;   ///< hidden x hidden
  Eigen::VectorXd hidden_bias;
  Eigen::MatrixXd out;      ///< output x hidden
  Eigen::VectorXd out_bias;

  static EncoderParams zeros(const EncoderDims& dims);

  /// Visits the parameter blocks in their serialization order:
  /// speaker, proj, proj_bias, hidden, hidden_bias, out, out_bias.
  template <typename F>
  void for_each_block(F&& f) {
    f("speaker", speaker.data(), speaker.size());
    f("proj", proj.data(), proj.size());
    f("proj_bias", proj_bias.data(), proj_bias.size());
    f("hidden", hidden.data(), hidden.size());
    f("hidden_bias", hidden_bias.data(), hidden_bias.size());
    f("out", out.data(), out.size());
    f("out_bias", out_bias.data(), out_bias.size());
  }
  template <typename F>
  void for_each_block(F&& f) const {
    const_cast<EncoderParams*>(this)->for_each_block(
        [&](const char* name, double* p, Eigen::Index n) { f(name, static_cast<const double*>(p), n); });
  }

  Eigen::Index size() const;
  Eigen::VectorXd pack() const;
  void unpack(const Eigen::VectorXd& flat);
  bool all_finite() const;

  bool operator==(const EncoderParams& o) const { return dims == o.dims && pack() == o.pack(); }
};

/// Glorot-uniform weights, zero biases.
EncoderParams init_params(std::uint64_t seed, const EncoderDims& dims);

int speaker_bucket(const std::string& speaker_id, int buckets);

/// Per-utterance encoder input for the modality.
Eigen::VectorXd modality_input(const UtteranceFeatures& f, Modality m);

int modality_input_dim(Modality m, int hash_dim);

/// Normalized recency weights 2^(j-i), j = 1..i.
Eigen::VectorXd recency_weights(int length);

/// Intermediate values of one forward pass, reused by the backward pass.
struct EncodeTrace {
  Eigen::VectorXd weights;
  std::vector<int> buckets;
  Eigen::VectorXd aggregate;
  std::vector<Eigen::Index> active;  ///< nonzero aggregate entries
  Eigen::VectorXd projected;
  Eigen::VectorXd activation;
  Eigen::VectorXd output;
};

EncodeTrace encode_trace(const ContextWindow& window, const FeatureStore& features,
                         const EncoderParams& params, Modality modality);

Eigen::VectorXd encode(const ContextWindow& window, const FeatureStore& features,
                       const EncoderParams& params, Modality modality);

/// Accumulates (adds) d<upstream, out>/d params into `grads`.
void encode_backward(const EncodeTrace& trace, const EncoderParams& params,
                     const Eigen::VectorXd& upstream, EncoderParams& grads);

/// Convenience: forward + backward, returning fresh gradients.
EncoderParams encode_backward(const ContextWindow& window, const FeatureStore& features,
                              const EncoderParams& params, Modality modality,
                              const Eigen::VectorXd& upstream);

/// Text and audio encoders trained side by side on disjoint parameters.
struct EncoderPair {
  EncoderParams text;
  EncoderParams audio;

  const EncoderParams& get(Modality m) const { return m == Modality::text ? text : audio; }
  EncoderParams& get(Modality m) { return m == Modality::text ? text : audio; }

  /// [H_text ; H_audio]
  Eigen::VectorXd encode_concat(const ContextWindow& w, const FeatureStore& f) const;
};

EncoderPair init_encoder_pair(std::uint64_t seed, int hash_dim, const EncoderDims& shape = {});

}  // namespace concss

#endif  // CONCSS_ENCODER_HPP
