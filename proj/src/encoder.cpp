#include "concss/encoder.hpp"

#include <cmath>

#include "concss/common.hpp"
#include "concss/rng.hpp"

namespace concss {

const char* to_string(Modality m) { return m == Modality::text ? "text" : "audio"; }

std::string describe(const EncoderDims& d) {
  return "input=" + std::to_string(d.input_dim) + " embed=" + std::to_string(d.embed) +
         " hidden=" + std::to_string(d.hidden) + " output=" + std::to_string(d.output) +
         " buckets=" + std::to_string(d.buckets);
}

EncoderParams EncoderParams::zeros(const EncoderDims& dims) {
  if (dims.input_dim < 1 || dims.embed < 1 || dims.hidden < 1 || dims.output < 1 || dims.buckets < 1)
    throw Error("invalid encoder dims: " + describe(dims));
  EncoderParams p;
  p.dims = dims;
  p.speaker = Eigen::MatrixXd::Zero(dims.buckets, dims.embed);
  p.proj = Eigen::MatrixXd::Zero(dims.hidden, dims.aggregate_dim());
  p.proj_bias = Eigen::VectorXd::Zero(dims.hidden);
  p.hidden = Eigen::MatrixXd::Zero(dims.hidden, dims.hidden);
  p.hidden_bias = Eigen::VectorXd::Zero(dims.hidden);
  p.out = Eigen::MatrixXd::Zero(dims.output, dims.hidden);
  p.out_bias = Eigen::VectorXd::Zero(dims.output);
  return p;
}

Eigen::Index EncoderParams::size() const {
  Eigen::Index n = 0;
  for_each_block([&](const char*, const double*, Eigen::Index k) { n += k; });
  return n;
}

Eigen::VectorXd EncoderParams::pack() const {
  Eigen::VectorXd flat(size());
  Eigen::Index pos = 0;
  for_each_block([&](const char*, const double* p, Eigen::Index k) {
    flat.segment(pos, k) = Eigen::Map<const Eigen::VectorXd>(p, k);
    pos += k;
  });
  return flat;
}

void EncoderParams::unpack(const Eigen::VectorXd& flat) {
  if (flat.size() != size()) throw Error("parameter vector length mismatch");
  Eigen::Index pos = 0;
  for_each_block([&](const char*, double* p, Eigen::Index k) {
    Eigen::Map<Eigen::VectorXd>(p, k) = flat.segment(pos, k);
    pos += k;
  });
}

bool EncoderParams::all_finite() const {
  bool ok = true;
  for_each_block([&](const char*, const double* p, Eigen::Index k) {
    ok = ok && Eigen::Map<const Eigen::VectorXd>(p, k).allFinite();
  });
  return ok;
}

EncoderParams init_params(std::uint64_t seed, const EncoderDims& dims) {
  EncoderParams p = EncoderParams::zeros(dims);
  Rng rng(seed);
  auto glorot = [&](Eigen::MatrixXd& m, int fan_in, int fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-bound, bound);
  };
  glorot(p.speaker, dims.buckets, dims.embed);
  glorot(p.proj, dims.aggregate_dim(), dims.hidden);
  glorot(p.hidden, dims.hidden, dims.hidden);
  glorot(p.out, dims.hidden, dims.output);
  return p;
}

int speaker_bucket(const std::string& speaker_id, int buckets) {
  return static_cast<int>(fnv1a64(speaker_id) % static_cast<std::uint64_t>(buckets));
}

Eigen::VectorXd modality_input(const UtteranceFeatures& f, Modality m) {
  if (m == Modality::text) return f.text.vector;
  return f.prosody;
}

int modality_input_dim(Modality m, int hash_dim) {
  return m == Modality::text ? hash_dim : kProsodyDim;
}

Eigen::VectorXd recency_weights(int length) {
  if (length < 1) throw Error("recency weights need length >= 1");
  Eigen::VectorXd w(length);
  for (int j = 0; j < length; ++j) w[j] = std::ldexp(1.0, j - (length - 1));
  return w / w.sum();
}

EncodeTrace encode_trace(const ContextWindow& window, const FeatureStore& features,
                         const EncoderParams& params, Modality modality) {
  const EncoderDims& d = params.dims;
  if (window.utterances.empty()) throw Error("empty context window");
  EncodeTrace t;
  t.weights = recency_weights(static_cast<int>(window.utterances.size()));
  t.aggregate = Eigen::VectorXd::Zero(d.aggregate_dim());
  for (std::size_t j = 0; j < window.utterances.size(); ++j) {
    const auto& f = features.at(window.conversation_id, window.utterances[j]);
    const Eigen::VectorXd x = modality_input(f, modality);
    if (x.size() != d.input_dim)
      throw Error(std::string("dimension mismatch: ") + to_string(modality) + " features have " +
                  std::to_string(x.size()) + " entries, encoder expects " + std::to_string(d.input_dim));
    const int b = speaker_bucket(window.speakers[j], d.buckets);
    t.buckets.push_back(b);
    const double w = t.weights[static_cast<Eigen::Index>(j)];
    t.aggregate.head(d.input_dim) += w * x;
    t.aggregate.tail(d.embed) += w * params.speaker.row(b).transpose();
  }
  for (Eigen::Index c = 0; c < t.aggregate.size(); ++c)
    if (t.aggregate[c] != 0.0) t.active.push_back(c);

  t.projected = params.proj_bias;
  for (Eigen::Index c : t.active) t.projected += params.proj.col(c) * t.aggregate[c];
  t.activation = (params.hidden * t.projected + params.hidden_bias).array().tanh().matrix();
  t.output = params.out * t.activation + params.out_bias;
  return t;
}

Eigen::VectorXd encode(const ContextWindow& window, const FeatureStore& features,
                       const EncoderParams& params, Modality modality) {
  return encode_trace(window, features, params, modality).output;
}

void encode_backward(const EncodeTrace& t, const EncoderParams& params,
                     const Eigen::VectorXd& upstream, EncoderParams& grads) {
  const EncoderDims& d = params.dims;
  if (upstream.size() != d.output) throw Error("upstream gradient dimension mismatch");
  grads.out.noalias() += upstream * t.activation.transpose();
  grads.out_bias += upstream;
  const Eigen::VectorXd g_pre =
      ((params.out.transpose() * upstream).array() * (1.0 - t.activation.array().square())).matrix();
  grads.hidden.noalias() += g_pre * t.projected.transpose();
  grads.hidden_bias += g_pre;
  const Eigen::VectorXd g_proj = params.hidden.transpose() * g_pre;
  grads.proj_bias += g_proj;
  for (Eigen::Index c : t.active) grads.proj.col(c) += g_proj * t.aggregate[c];
  const Eigen::VectorXd g_embed = params.proj.rightCols(d.embed).transpose() * g_proj;
  for (std::size_t j = 0; j < t.buckets.size(); ++j)
    grads.speaker.row(t.buckets[j]) += t.weights[static_cast<Eigen::Index>(j)] * g_embed.transpose();
}

EncoderParams encode_backward(const ContextWindow& window, const FeatureStore& features,
                              const EncoderParams& params, Modality modality,
                              const Eigen::VectorXd& upstream) {
  EncoderParams grads = EncoderParams::zeros(params.dims);
  encode_backward(encode_trace(window, features, params, modality), params, upstream, grads);
  return grads;
}

Eigen::VectorXd EncoderPair::encode_concat(const ContextWindow& w, const FeatureStore& f) const {
  Eigen::VectorXd out(text.dims.output + audio.dims.output);
  out << encode(w, f, text, Modality::text), encode(w, f, audio, Modality::audio);
  return out;
}

EncoderPair init_encoder_pair(std::uint64_t seed, int hash_dim, const EncoderDims& shape) {
  EncoderDims td = shape, ad = shape;
  td.input_dim = modality_input_dim(Modality::text, hash_dim);
  ad.input_dim = modality_input_dim(Modality::audio, hash_dim);
  return {init_params(stream_seed(seed, 1), td), init_params(stream_seed(seed, 2), ad)};
}

}  // namespace concss
