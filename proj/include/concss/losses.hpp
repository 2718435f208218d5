#ifndef CONCSS_LOSSES_HPP
#define CONCSS_LOSSES_HPP

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "concss/common.hpp"

namespace concss {

template <typename A, typename B>
void require_same_size(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.size() != b.size())
    throw Error("dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
}

/// sum_k (a_k - b_k)^2
template <typename A, typename B>
typename A::Scalar squared_euclidean(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  require_same_size(a, b);
  return (a.derived() - b.derived()).squaredNorm();
}

/// Argument of the triplet hinge, D(a,p) - D(a,n) + m.
template <typename A, typename P, typename N>
typename A::Scalar triplet_hinge_arg(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<P>& p,
                                     const Eigen::MatrixBase<N>& n, typename A::Scalar margin) {
  return squared_euclidean(a, p) - squared_euclidean(a, n) + margin;
}

/// max{D(a,p) - D(a,n) + m, 0}
template <typename A, typename P, typename N>
typename A::Scalar triplet_loss(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<P>& p,
                                const Eigen::MatrixBase<N>& n, typename A::Scalar margin) {
  if (!(margin > 0)) throw Error("margin must be positive");
  require_same_size(a, n);
  return std::max(triplet_hinge_arg(a, p, n, margin), typename A::Scalar(0));
}

/// Chopra-style contrastive loss on one pair: 1/2 D for similar pairs,
/// 1/2 max{0, m - sqrt(D)}^2 for dissimilar ones.
template <typename X, typename Y>
typename X::Scalar pairwise_contrastive_loss(const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<Y>& y,
                                             bool same, typename X::Scalar margin) {
  using S = typename X::Scalar;
  if (!(margin > 0)) throw Error("margin must be positive");
  const S d = squared_euclidean(x, y);
  if (same) return S(0.5) * d;
  const S gap = std::max(S(0), margin - std::sqrt(d));
  return S(0.5) * gap * gap;
}

/// Value and gradients of one loss term with respect to the three
/// embeddings of a triplet.
template <typename Scalar>
struct TripletTerm {
  Scalar loss = 0;
  Scalar kink_distance = 0;  ///< |argument| of the non-smooth point(s)
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> grad_anchor, grad_positive, grad_negative;
};

template <typename Scalar>
TripletTerm<Scalar> triplet_term(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& a,
                                 const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& p,
                                 const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& n, Scalar margin) {
  TripletTerm<Scalar> t;
  const Scalar arg = triplet_hinge_arg(a, p, n, margin);
  t.kink_distance = std::abs(arg);
  t.grad_anchor.setZero(a.size());
  t.grad_positive.setZero(a.size());
  t.grad_negative.setZero(a.size());
  if (!(arg <= 0)) {  // subgradient 0 at the kink; NaN propagates
    t.loss = arg;
    t.grad_anchor = Scalar(2) * (n - p);
    t.grad_positive = Scalar(-2) * (a - p);
    t.grad_negative = Scalar(2) * (a - n);
  }
  return t;
}

/// S1 ablation term: the anchor/positive pair is "same", the
/// anchor/negative pair "different".
template <typename Scalar>
TripletTerm<Scalar> pairwise_term(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& a,
                                  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& p,
                                  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& n, Scalar margin) {
  TripletTerm<Scalar> t;
  t.loss = pairwise_contrastive_loss(a, p, true, margin) + pairwise_contrastive_loss(a, n, false, margin);
  t.grad_anchor = a - p;
  t.grad_positive = p - a;
  t.grad_negative.setZero(a.size());
  const Scalar dist = std::sqrt(squared_euclidean(a, n));
  // non-smooth where the distance equals the margin, undefined at 0
  t.kink_distance = std::min(std::abs(margin - dist), dist);
  if (dist < margin && dist > 0) {
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> g = -(margin - dist) / dist * (a - n);
    t.grad_anchor += g;
    t.grad_negative -= g;
  }
  return t;
}

}  // namespace concss

#endif  // CONCSS_LOSSES_HPP
