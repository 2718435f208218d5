#ifndef CONCSS_METRICS_HPP
#define CONCSS_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "concss/common.hpp"
#include "concss/encoder.hpp"
#include "concss/sampler.hpp"

namespace concss {

struct DtwResult {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> path;  ///< (0,0) .. (n-1,m-1)
  double total_cost = 0.0;
};

/// Dynamic time warping between two frame sequences (one frame per row)
/// under Euclidean local distance. Steps are (1,0), (0,1) and (1,1); ties
/// prefer the diagonal predecessor, then (i-1, j).
template <typename A, typename B>
DtwResult dtw(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  const Eigen::Index n = a.rows(), m = b.rows();
  if (n == 0 || m == 0) throw Error("dtw: empty sequence");
  if (a.cols() != b.cols()) throw Error("dtw: frame dimension mismatch");

  Eigen::MatrixXd acc(n, m);
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> from(n, m);  // 0 diag, 1 up, 2 left
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double local = (a.row(i) - b.row(j)).norm();
      if (i == 0 && j == 0) {
        acc(i, j) = local;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      std::uint8_t step = 0;
      if (i > 0 && j > 0) best = acc(i - 1, j - 1);
      if (i > 0 && acc(i - 1, j) < best) { best = acc(i - 1, j); step = 1; }
      if (j > 0 && acc(i, j - 1) < best) { best = acc(i, j - 1); step = 2; }
      acc(i, j) = best + local;
      from(i, j) = step;
    }
  }

  DtwResult r;
  r.total_cost = acc(n - 1, m - 1);
  Eigen::Index i = n - 1, j = m - 1;
  r.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    switch (from(i, j)) {
      case 0: --i; --j; break;
      case 1: --i; break;
      default: --j; break;
    }
    r.path.emplace_back(i, j);
  }
  std::reverse(r.path.begin(), r.path.end());
  return r;
}

/// (10 / ln 10) * sqrt(2)
inline const double kMcdScale = 10.0 / std::log(10.0) * std::sqrt(2.0);

struct McdResult {
  double mcd_db = 0.0;
  DtwResult alignment;  ///< computed on c1..c_{C-1}
};

/// Mel-cepstral distortion averaged over the DTW path, c0 excluded.
McdResult mcd(const Eigen::MatrixXd& ref_cepstra, const Eigen::MatrixXd& hyp_cepstra);

/// RMSE of natural-log F0 over aligned pairs where both frames are voiced;
/// nullopt when no such pair exists.
std::optional<double> log_f0_rmse(const Eigen::VectorXd& ref_f0, const Eigen::VectorXd& hyp_f0,
                                  const DtwResult& alignment);

struct SatisfactionReport {
  double text = 0.0;
  double audio = 0.0;
  double concat = 0.0;
  std::size_t triplets = 0;
};

/// Fraction of triplets with D(a,p) + m < D(a,n), per modality and on the
/// concatenated vector [H_text ; H_audio].
SatisfactionReport triplet_satisfaction(const EncoderPair& encoders, const FeatureStore& features,
                                        const std::vector<Triplet>& triplets, double margin);

/// Triplet satisfaction from precomputed embeddings (one row per triplet).
double triplet_satisfaction(const Eigen::MatrixXd& anchors, const Eigen::MatrixXd& positives,
                            const Eigen::MatrixXd& negatives, double margin);

struct SensitivityReport {
  double mean_positive_distance = 0.0;
  double mean_fake_distance = 0.0;
  double gap = 0.0;  ///< mean_fake - mean_positive
  double nearest_real_accuracy = 0.0;
  double gap_ci_low = 0.0;
  double gap_ci_high = 0.0;
  std::size_t targets = 0;
  int n_fakes = 0;

  bool gap_ci_excludes_zero() const { return gap_ci_low > 0.0 || gap_ci_high < 0.0; }
};

using Embedder = std::function<Eigen::VectorXd(const ContextWindow&)>;

/// Draws a context window from a conversation other than `conv_id` (and of
/// another latent topic when labels exist), uniformly over the sampler's
/// windows.
ContextWindow sample_fake_context(const Sampler& sampler, const std::string& conv_id, Rng& rng);

/// Real-vs-fake context probe. Each target with index >= 2 gets an anchor
/// with the full available history (up to i_max), a positive of another
/// length and n_fakes substituted contexts from unrelated dialogues.
/// The gap CI is a 1000-resample percentile bootstrap over targets.
SensitivityReport context_sensitivity(const Corpus& split, const Embedder& embed, int n_fakes,
                                      std::uint64_t seed, int i_max);

SensitivityReport context_sensitivity(const Corpus& split, const FeatureStore& features,
                                      const EncoderPair& encoders, int n_fakes, std::uint64_t seed,
                                      int i_max);

struct Projection {
  Eigen::MatrixXd coords;       ///< n x 2
  Eigen::Vector2d variances;    ///< PC1, PC2 eigenvalues
  Eigen::MatrixXd components;   ///< d x 2 loadings
  Eigen::RowVectorXd mean;
};

/// Two-component PCA from the eigendecomposition of the sample covariance.
/// Each component's largest-magnitude loading is made positive.
Projection project_embeddings(const Eigen::MatrixXd& vectors);

}  // namespace concss

#endif  // CONCSS_METRICS_HPP
