#include "concss/metrics.hpp"

#include <algorithm>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "concss/losses.hpp"

namespace concss {

McdResult mcd(const Eigen::MatrixXd& ref, const Eigen::MatrixXd& hyp) {
  if (ref.rows() == 0 || hyp.rows() == 0) throw Error("mcd: empty cepstral track");
  if (ref.cols() != hyp.cols()) throw Error("mcd: cepstral order mismatch");
  if (ref.cols() < 2) throw Error("mcd: need at least 2 cepstral coefficients");
  const Eigen::Index c = ref.cols() - 1;
  McdResult r;
  r.alignment = dtw(ref.rightCols(c), hyp.rightCols(c));
  double sum = 0.0;
  for (const auto& [i, j] : r.alignment.path)
    sum += std::sqrt(2.0 * (ref.row(i).tail(c) - hyp.row(j).tail(c)).squaredNorm());
  r.mcd_db = (10.0 / std::log(10.0)) * sum / static_cast<double>(r.alignment.path.size());
  return r;
}

std::optional<double> log_f0_rmse(const Eigen::VectorXd& ref_f0, const Eigen::VectorXd& hyp_f0,
                                  const DtwResult& alignment) {
  if (alignment.path.empty()) throw Error("log_f0_rmse: empty alignment");
  const auto& last = alignment.path.back();
  if (last.first != ref_f0.size() - 1 || last.second != hyp_f0.size() - 1)
    throw Error("log_f0_rmse: track/alignment length mismatch");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& [i, j] : alignment.path) {
    if (i >= ref_f0.size() || j >= hyp_f0.size())
      throw Error("log_f0_rmse: track/alignment length mismatch");
    if (ref_f0[i] > 0.0 && hyp_f0[j] > 0.0) {
      const double d = std::log(ref_f0[i]) - std::log(hyp_f0[j]);
      sum += d * d;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return std::sqrt(sum / static_cast<double>(count));
}

double triplet_satisfaction(const Eigen::MatrixXd& anchors, const Eigen::MatrixXd& positives,
                            const Eigen::MatrixXd& negatives, double margin) {
  if (anchors.rows() == 0) throw Error("triplet_satisfaction: no triplets");
  std::size_t ok = 0;
  for (Eigen::Index k = 0; k < anchors.rows(); ++k) {
    const double dp = (anchors.row(k) - positives.row(k)).squaredNorm();
    const double dn = (anchors.row(k) - negatives.row(k)).squaredNorm();
    if (dp + margin < dn) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(anchors.rows());
}

SatisfactionReport triplet_satisfaction(const EncoderPair& encoders, const FeatureStore& features,
                                        const std::vector<Triplet>& triplets, double margin) {
  if (triplets.empty()) throw Error("triplet_satisfaction: no triplets");
  const auto n = static_cast<Eigen::Index>(triplets.size());
  const Eigen::Index dt = encoders.text.dims.output, da = encoders.audio.dims.output;
  Eigen::MatrixXd a(n, dt + da), p(n, dt + da), g(n, dt + da);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& t = triplets[static_cast<std::size_t>(k)];
    a.row(k) = encoders.encode_concat(t.anchor, features).transpose();
    p.row(k) = encoders.encode_concat(t.positive, features).transpose();
    g.row(k) = encoders.encode_concat(t.negative, features).transpose();
  }
  SatisfactionReport r;
  r.triplets = triplets.size();
  r.text = triplet_satisfaction(a.leftCols(dt), p.leftCols(dt), g.leftCols(dt), margin);
  r.audio = triplet_satisfaction(a.rightCols(da), p.rightCols(da), g.rightCols(da), margin);
  r.concat = triplet_satisfaction(a, p, g, margin);
  return r;
}

ContextWindow sample_fake_context(const Sampler& sampler, const std::string& conv_id, Rng& rng) {
  const auto& corpus = sampler.corpus();
  const auto& topic = corpus.conversation(conv_id).latent_topic;
  std::vector<std::size_t> pool;
  const auto& windows = sampler.windows();
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i].conversation_id == conv_id) continue;
    const auto& other = corpus.conversation(windows[i].conversation_id).latent_topic;
    if (topic && other && *topic == *other) continue;
    pool.push_back(i);
  }
  if (pool.empty()) throw Error("no unrelated dialogue available for a fake context of " + conv_id);
  return windows[pool[rng.below(pool.size())]];
}

SensitivityReport context_sensitivity(const Corpus& split, const Embedder& embed, int n_fakes,
                                      std::uint64_t seed, int i_max) {
  if (n_fakes < 1) throw Error("context_sensitivity: n_fakes must be >= 1");
  if (i_max < 2) throw Error("context_sensitivity: i_max must be >= 2");
  const Sampler sampler(split, i_max);
  Rng rng(seed);
  std::vector<double> gaps;
  double sum_pos = 0.0, sum_fake = 0.0;
  std::size_t nearest_ok = 0;
  for (const auto& conv : split.conversations) {
    for (int t = 2; t < conv.size(); ++t) {
      const ContextWindow anchor = make_context(conv, t, i_max);
      const ContextWindow positive = sample_positive(conv, anchor, i_max, rng);
      const Eigen::VectorXd ha = embed(anchor);
      const double dp = squared_euclidean(ha, embed(positive));
      double fake_sum = 0.0;
      double fake_min = std::numeric_limits<double>::infinity();
      for (int f = 0; f < n_fakes; ++f) {
        const double df = squared_euclidean(ha, embed(sample_fake_context(sampler, conv.id, rng)));
        fake_sum += df;
        fake_min = std::min(fake_min, df);
      }
      const double fake_mean = fake_sum / n_fakes;
      sum_pos += dp;
      sum_fake += fake_mean;
      gaps.push_back(fake_mean - dp);
      if (dp < fake_min) ++nearest_ok;
    }
  }
  if (gaps.empty()) throw Error("context_sensitivity: split has no target with two history lengths");

  SensitivityReport r;
  r.n_fakes = n_fakes;
  r.targets = gaps.size();
  const double n = static_cast<double>(gaps.size());
  r.mean_positive_distance = sum_pos / n;
  r.mean_fake_distance = sum_fake / n;
  r.gap = std::accumulate(gaps.begin(), gaps.end(), 0.0) / n;
  r.nearest_real_accuracy = static_cast<double>(nearest_ok) / n;

  constexpr int kResamples = 1000;
  std::vector<double> means(kResamples);
  Rng boot(stream_seed(seed, 0xb007));
  for (int b = 0; b < kResamples; ++b) {
    double s = 0.0;
    for (std::size_t k = 0; k < gaps.size(); ++k) s += gaps[boot.below(gaps.size())];
    means[static_cast<std::size_t>(b)] = s / n;
  }
  std::sort(means.begin(), means.end());
  // percentile interval: 25th and 975th order statistics of 1000
  r.gap_ci_low = means[static_cast<std::size_t>(0.025 * kResamples) - 1];
  r.gap_ci_high = means[static_cast<std::size_t>(0.975 * kResamples) - 1];
  return r;
}

SensitivityReport context_sensitivity(const Corpus& split, const FeatureStore& features,
                                      const EncoderPair& encoders, int n_fakes, std::uint64_t seed,
                                      int i_max) {
  return context_sensitivity(
      split, [&](const ContextWindow& w) { return encoders.encode_concat(w, features); }, n_fakes,
      seed, i_max);
}

Projection project_embeddings(const Eigen::MatrixXd& x) {
  if (x.rows() == 0 || x.cols() == 0) throw Error("project_embeddings: no vectors");
  Projection p;
  p.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - p.mean;
  const double denom = x.rows() > 1 ? static_cast<double>(x.rows() - 1) : 1.0;
  const Eigen::MatrixXd cov = centered.transpose() * centered / denom;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error("project_embeddings: eigendecomposition failed");

  const Eigen::Index d = x.cols();
  p.components = Eigen::MatrixXd::Zero(d, 2);
  p.variances.setZero();
  for (int k = 0; k < 2 && k < d; ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    p.components.col(k) = v;
    p.variances[k] = std::max(0.0, eig.eigenvalues()[d - 1 - k]);
  }
  p.coords = centered * p.components;
  return p;
}

}  // namespace concss
