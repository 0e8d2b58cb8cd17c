#pragma once

#include <string_view>

#include "fedlwr/tensor.hpp"

namespace fedlwr {

enum class SimilarityMethod { cka_linear, cosine_mean };

std::string_view to_string(SimilarityMethod method);

// A similarity in [0, 1]. `degenerate` is set when one side has (numerically)
// zero variance, in which case CKA is undefined and `value` is 0.
struct SimilarityScore {
  double value = 0.0;
  SimilarityMethod method = SimilarityMethod::cka_linear;
  bool degenerate = false;
};

// Product of self-HSICs at or below which CKA is reported degenerate.
inline constexpr double kDegenerateVarianceThreshold = 1e-24;

// K = U U^T, built symmetrically.
Matrix gram(const FeatureMatrix& features);

// K' = H K H with H = I - 11^T / n.
Matrix center_gram(const Matrix& kernel);

// Biased estimator vec(K') . vec(L') / (n-1)^2.
double hsic(const Matrix& k, const Matrix& l);

// Linear CKA: HSIC(K,L) / sqrt(HSIC(K,K) HSIC(L,L)), clamped to [0, 1].
// Feature dimensions of u and v may differ; sample counts must agree.
SimilarityScore cka(const FeatureMatrix& u, const FeatureMatrix& v);

// Mean per-sample cosine similarity mapped from [-1,1] to [0,1]. Rows where
// either side is the zero vector contribute a cosine of 0.
SimilarityScore cosine_mean(const FeatureMatrix& u, const FeatureMatrix& v);

SimilarityScore similarity(SimilarityMethod method, const FeatureMatrix& u, const FeatureMatrix& v);

}  // namespace fedlwr
