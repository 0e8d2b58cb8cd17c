#include "fedlwr/cka.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedlwr/errors.hpp"

namespace fedlwr {

namespace {

void require_samples(std::size_t n, std::string_view what) {
  if (n < 2) {
    throw InvalidArgument(std::string(what) + " needs at least 2 samples, got " + std::to_string(n));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double centered_dot(const Matrix& kc, const Matrix& lc) {
  const std::size_t n = kc.rows();
  const double scale = static_cast<double>(n - 1) * static_cast<double>(n - 1);
  return dot(kc.values(), lc.values()) / scale;
}

}  // namespace

std::string_view to_string(SimilarityMethod method) {
  return method == SimilarityMethod::cka_linear ? "cka_linear" : "cosine_mean";
}

Matrix gram(const FeatureMatrix& features) {
  const std::size_t n = features.rows();
  require_samples(n, "gram");
  Matrix k(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double v = dot(features.row(i), features.row(j));
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

Matrix center_gram(const Matrix& kernel) {
  const std::size_t n = kernel.rows();
  if (kernel.cols() != n) {
    throw ShapeError("center_gram needs a square matrix, got " + std::to_string(kernel.rows()) + "x" +
                     std::to_string(kernel.cols()));
  }
  require_samples(n, "center_gram");
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> row_mean(n, 0.0), col_mean(n, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      row_mean[i] += kernel(i, j);
      col_mean[j] += kernel(i, j);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    grand += row_mean[i];
    row_mean[i] *= inv_n;
    col_mean[i] *= inv_n;
  }
  grand *= inv_n * inv_n;
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) = kernel(i, j) - row_mean[i] - col_mean[j] + grand;
  }
  return out;
}

double hsic(const Matrix& k, const Matrix& l) {
  if (k.rows() != l.rows() || k.cols() != l.cols()) {
    throw ShapeError("hsic size mismatch: " + std::to_string(k.rows()) + " vs " + std::to_string(l.rows()));
  }
  return centered_dot(center_gram(k), center_gram(l));
}

SimilarityScore cka(const FeatureMatrix& u, const FeatureMatrix& v) {
  if (u.rows() != v.rows()) {
    throw ShapeError("cka sample-count mismatch: " + std::to_string(u.rows()) + " vs " +
                     std::to_string(v.rows()));
  }
  require_samples(u.rows(), "cka");
  const Matrix kc = center_gram(gram(u));
  const Matrix lc = center_gram(gram(v));
  const double kl = centered_dot(kc, lc);
  const double kk = centered_dot(kc, kc);
  const double ll = centered_dot(lc, lc);
  const double denom = kk * ll;
  if (!(denom > kDegenerateVarianceThreshold)) {
    return {0.0, SimilarityMethod::cka_linear, true};
  }
  const double delta = kl / std::sqrt(denom);
  if (!std::isfinite(delta)) throw NumericError("cka produced a non-finite score");
  return {std::clamp(delta, 0.0, 1.0), SimilarityMethod::cka_linear, false};
}

SimilarityScore cosine_mean(const FeatureMatrix& u, const FeatureMatrix& v) {
  if (u.rows() != v.rows() || u.cols() != v.cols()) {
    throw ShapeError("cosine_mean needs equal shapes, got " + std::to_string(u.rows()) + "x" +
                     std::to_string(u.cols()) + " vs " + std::to_string(v.rows()) + "x" +
                     std::to_string(v.cols()));
  }
  if (u.rows() == 0) throw InvalidArgument("cosine_mean needs at least 1 sample");
  double total = 0.0;
  for (std::size_t i = 0; i < u.rows(); ++i) {
    const double nu = std::sqrt(dot(u.row(i), u.row(i)));
    const double nv = std::sqrt(dot(v.row(i), v.row(i)));
    if (nu > 0.0 && nv > 0.0) total += std::clamp(dot(u.row(i), v.row(i)) / (nu * nv), -1.0, 1.0);
  }
  const double mean = total / static_cast<double>(u.rows());
  return {std::clamp((mean + 1.0) / 2.0, 0.0, 1.0), SimilarityMethod::cosine_mean, false};
}

SimilarityScore similarity(SimilarityMethod method, const FeatureMatrix& u, const FeatureMatrix& v) {
  return method == SimilarityMethod::cka_linear ? cka(u, v) : cosine_mean(u, v);
}

}  // namespace fedlwr
