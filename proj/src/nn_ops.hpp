#pragma once

// Dense building blocks shared by the training forward/backward passes and the
// incremental decoder. Rows are tokens, columns are features.

#include <cmath>
#include <numbers>

#include "unitmt/model.hpp"

namespace unitmt::ops {

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Matrix xhat;
  Eigen::VectorXd rstd;
};

inline Matrix layer_norm(const Matrix& x, const LayerNorm& p, LayerNormCache* cache = nullptr) {
  const auto n = x.rows();
  const auto d = x.cols();
  Matrix y(n, d);
  if (cache) {
    cache->xhat.resize(n, d);
    cache->rstd.resize(n);
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).mean();
    const Eigen::RowVectorXd centered = x.row(r).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    const Eigen::RowVectorXd xhat = centered * rstd;
    y.row(r) = xhat.cwiseProduct(p.gain.row(0)) + p.bias.row(0);
    if (cache) {
      cache->xhat.row(r) = xhat;
      cache->rstd(r) = rstd;
    }
  }
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const LayerNorm& p, const LayerNormCache& c, LayerNorm& g) {
  g.gain += dy.cwiseProduct(c.xhat).colwise().sum();
  g.bias += dy.colwise().sum();
  Matrix dx(dy.rows(), dy.cols());
  const auto d = static_cast<double>(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(p.gain.row(0));
    const double m1 = dxhat.sum() / d;
    const double m2 = dxhat.dot(c.xhat.row(r)) / d;
    dx.row(r) = c.rstd(r) * (dxhat.array() - m1 - c.xhat.row(r).array() * m2).matrix();
  }
  return dx;
}

inline Matrix linear(const Matrix& x, const Linear& p) {
  Matrix y(x.rows(), p.weight.cols());
  y.noalias() = x * p.weight;
  y.rowwise() += p.bias.row(0);
  return y;
}

inline Matrix linear_backward(const Matrix& x, const Matrix& dy, const Linear& p, Linear& g) {
  g.weight.noalias() += x.transpose() * dy;
  g.bias += dy.colwise().sum();
  Matrix dx(dy.rows(), p.weight.rows());
  dx.noalias() = dy * p.weight.transpose();
  return dx;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

inline Matrix gelu(const Matrix& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

// In-place numerically stable softmax over the first `valid` entries of each
// row; entries past `valid` are set to zero.
template <class Row>
inline void softmax_prefix(Row&& row, Eigen::Index valid) {
  const double m = row.head(valid).maxCoeff();
  double z = 0.0;
  for (Eigen::Index j = 0; j < valid; ++j) {
    row(j) = std::exp(row(j) - m);
    z += row(j);
  }
  for (Eigen::Index j = 0; j < valid; ++j) row(j) /= z;
  for (Eigen::Index j = valid; j < row.size(); ++j) row(j) = 0.0;
}

inline Matrix feed_forward(const Matrix& h, const EncoderLayer& l) {
  return linear(gelu(linear(h, l.ffn_in)), l.ffn_out);
}

inline Matrix feed_forward(const Matrix& h, const DecoderLayer& l) {
  return linear(gelu(linear(h, l.ffn_in)), l.ffn_out);
}

}  // namespace unitmt::ops
