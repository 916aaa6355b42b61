#pragma once

// Naive loop implementations used as independent references in tests.
// Nothing here calls into the library's numeric code.

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace pfc::oracle {

// Features as explicit [sample][coordinate] arrays, class-contiguous.
struct Points {
  std::size_t k = 0, n = 0, d = 0;
  std::vector<std::vector<double>> h;  // k*n samples, each of length d
};

inline Points from_matrix(const Eigen::MatrixXd& m, std::size_t k, std::size_t n) {
  Points p{k, n, static_cast<std::size_t>(m.rows()), {}};
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    std::vector<double> col(p.d);
    for (std::size_t i = 0; i < p.d; ++i) col[i] = m(static_cast<Eigen::Index>(i), j);
    p.h.push_back(col);
  }
  return p;
}

inline std::vector<std::vector<double>> class_means(const Points& p) {
  std::vector<std::vector<double>> means(p.k, std::vector<double>(p.d, 0.0));
  for (std::size_t c = 0; c < p.k; ++c)
    for (std::size_t i = 0; i < p.n; ++i)
      for (std::size_t r = 0; r < p.d; ++r) means[c][r] += p.h[c * p.n + i][r] / static_cast<double>(p.n);
  return means;
}

inline std::vector<double> global_mean(const Points& p) {
  std::vector<double> g(p.d, 0.0);
  for (const auto& s : p.h)
    for (std::size_t r = 0; r < p.d; ++r) g[r] += s[r] / static_cast<double>(p.h.size());
  return g;
}

inline double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.size(); ++r) s += (a[r] - b[r]) * (a[r] - b[r]);
  return s;
}

inline double tr_within(const Points& p) {
  const auto means = class_means(p);
  double s = 0.0;
  for (std::size_t c = 0; c < p.k; ++c)
    for (std::size_t i = 0; i < p.n; ++i) s += sqdist(p.h[c * p.n + i], means[c]);
  return s / static_cast<double>(p.k * p.n);
}

inline double tr_between(const Points& p) {
  const auto means = class_means(p);
  const auto g = global_mean(p);
  double s = 0.0;
  for (std::size_t c = 0; c < p.k; ++c) s += sqdist(means[c], g);
  return s / static_cast<double>(p.k);
}

inline double pfc1(const Points& p) { return tr_within(p) / tr_between(p); }

inline double pfc2(const Points& p) {
  const auto means = class_means(p);
  const auto g = global_mean(p);
  std::vector<std::vector<double>> gram(p.k, std::vector<double>(p.k, 0.0));
  double fro = 0.0;
  for (std::size_t a = 0; a < p.k; ++a)
    for (std::size_t b = 0; b < p.k; ++b) {
      for (std::size_t r = 0; r < p.d; ++r) gram[a][b] += (means[a][r] - g[r]) * (means[b][r] - g[r]);
      fro += gram[a][b] * gram[a][b];
    }
  fro = std::sqrt(fro);
  const double inv = 1.0 / std::sqrt(static_cast<double>(p.k - 1));
  double dist = 0.0;
  for (std::size_t a = 0; a < p.k; ++a)
    for (std::size_t b = 0; b < p.k; ++b) {
      const double e = ((a == b ? 1.0 : 0.0) - 1.0 / static_cast<double>(p.k)) * inv;
      const double diff = gram[a][b] / fro - e;
      dist += diff * diff;
    }
  return std::sqrt(dist);
}

inline double pfc3(const Points& p) {
  const auto means = class_means(p);
  std::size_t correct = 0;
  for (std::size_t c = 0; c < p.k; ++c)
    for (std::size_t i = 0; i < p.n; ++i) {
      std::size_t best = 0;
      double best_d = sqdist(p.h[c * p.n + i], means[0]);
      for (std::size_t m = 1; m < p.k; ++m) {
        const double dm = sqdist(p.h[c * p.n + i], means[m]);
        if (dm < best_d) {
          best_d = dm;
          best = m;
        }
      }
      if (best == c) ++correct;
    }
  return static_cast<double>(correct) / static_cast<double>(p.k * p.n);
}

inline double alignment(const Eigen::MatrixXd& h, const Eigen::MatrixXd& x) {
  double nh = 0.0, nx = 0.0;
  for (Eigen::Index j = 0; j < h.cols(); ++j)
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
      nh += h(i, j) * h(i, j);
      nx += x(i, j) * x(i, j);
    }
  nh = std::sqrt(nh);
  nx = std::sqrt(nx);
  double s = 0.0;
  for (Eigen::Index j = 0; j < h.cols(); ++j)
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
      const double diff = h(i, j) / nh - x(i, j) / nx;
      s += diff * diff;
    }
  return std::sqrt(s);
}

inline double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

/// Central finite differences of f over every entry of m.
template <class F>
Eigen::MatrixXd finite_difference(Eigen::MatrixXd& m, F&& f, double step = 1e-5) {
  Eigen::MatrixXd g(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double orig = m(i, j);
      m(i, j) = orig + step;
      const double up = f();
      m(i, j) = orig - step;
      const double down = f();
      m(i, j) = orig;
      g(i, j) = (up - down) / (2.0 * step);
    }
  return g;
}

}  // namespace pfc::oracle
