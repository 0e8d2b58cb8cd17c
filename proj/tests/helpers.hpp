#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "fedlwr/data.hpp"
#include "fedlwr/nn.hpp"
#include "fedlwr/rng.hpp"
#include "fedlwr/tensor.hpp"

namespace testing {

inline fedlwr::FeatureMatrix random_matrix(std::size_t n, std::size_t d, fedlwr::Rng& rng) {
  fedlwr::FeatureMatrix m(n, d);
  for (auto& v : m.values()) v = rng.normal();
  return m;
}

inline Eigen::MatrixXd to_eigen(const fedlwr::Matrix& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, c);
  return out;
}

inline fedlwr::Matrix from_eigen(const Eigen::MatrixXd& m) {
  fedlwr::Matrix out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(r, c) = m(r, c);
  return out;
}

// HSIC via explicit centering matrix and trace(K H L H) / (n-1)^2.
inline double hsic_trace_oracle(const Eigen::MatrixXd& k, const Eigen::MatrixXd& l) {
  const auto n = k.rows();
  const Eigen::MatrixXd h =
      Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  return (k * h * l * h).trace() / static_cast<double>((n - 1) * (n - 1));
}

inline double cka_trace_oracle(const fedlwr::Matrix& u, const fedlwr::Matrix& v) {
  const Eigen::MatrixXd eu = to_eigen(u), ev = to_eigen(v);
  const Eigen::MatrixXd k = eu * eu.transpose();
  const Eigen::MatrixXd l = ev * ev.transpose();
  const double value = hsic_trace_oracle(k, l) / std::sqrt(hsic_trace_oracle(k, k) * hsic_trace_oracle(l, l));
  return std::clamp(value, 0.0, 1.0);
}

inline Eigen::MatrixXd random_orthogonal(std::size_t d, fedlwr::Rng& rng) {
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ();
}

inline double relative_error(double a, double b, double floor = 1e-300) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline fedlwr::Tensor random_batch(std::size_t b, std::size_t h, std::size_t w, fedlwr::Rng& rng) {
  fedlwr::Tensor t({b, 1, h, w});
  for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

inline fedlwr::Tensor random_mask(std::size_t b, std::size_t h, std::size_t w, fedlwr::Rng& rng) {
  fedlwr::Tensor t({b, 1, h, w});
  for (auto& v : t.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  return t;
}

// Visits every scalar parameter of the model.
template <typename F>
void for_each_param(fedlwr::ModelParams& m, F&& f) {
  for (auto& layer : m.layers) {
    for (auto& v : layer.weights.data) f(layer.layer_id, v);
    for (auto& v : layer.biases.data) f(layer.layer_id, v);
  }
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central finite differences against backward() for every parameter.
// `floor` bounds the relative-error denominator from below; entries whose
// analytic and numeric values are both below it are at finite-difference
// noise level.
inline GradCheck check_gradients(fedlwr::ModelParams model, const fedlwr::Tensor& batch,
                                 const fedlwr::Tensor& target, double h = 1e-5, double floor = 1e-7) {
  const auto trace = fedlwr::forward(model, batch);
  fedlwr::ModelParams grads = fedlwr::backward(model, trace, target);
  std::vector<double> analytic;
  for_each_param(grads, [&](int, double& g) { analytic.push_back(g); });

  GradCheck out;
  std::size_t i = 0;
  for_each_param(model, [&](int, double& w) {
    const double saved = w;
    w = saved + h;
    const double up = fedlwr::dice_loss(fedlwr::forward(model, batch).logits, target);
    w = saved - h;
    const double down = fedlwr::dice_loss(fedlwr::forward(model, batch).logits, target);
    w = saved;
    const double numeric = (up - down) / (2.0 * h);
    out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[i], numeric, floor));
    ++i;
    ++out.checked;
  });
  return out;
}

inline double max_abs_diff(const fedlwr::ModelParams& a, const fedlwr::ModelParams& b) {
  double d = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const auto& x = a.layers[l];
    const auto& y = b.layers[l];
    for (std::size_t i = 0; i < x.weights.size(); ++i) d = std::max(d, std::abs(x.weights.data[i] - y.weights.data[i]));
    for (std::size_t i = 0; i < x.biases.size(); ++i) d = std::max(d, std::abs(x.biases.data[i] - y.biases.data[i]));
  }
  return d;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fedlwr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing
