#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "expanel/panel.hpp"

namespace testing {

/// Central differences with step h * (1 + |x_j|).
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double step = h * (1.0 + std::abs(x(j)));
    Eigen::VectorXd up = x, down = x;
    up(j) += step;
    down(j) -= step;
    g(j) = (f(up) - f(down)) / (up(j) - down(j));
  }
  return g;
}

/// Kendall's tau-a by direct pair counting.
inline double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  long long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = (a[i] - a[j]) * (b[i] - b[j]);
      if (s > 0) ++concordant;
      else if (s < 0) ++discordant;
    }
  }
  return static_cast<double>(concordant - discordant) / (0.5 * static_cast<double>(n) * (n - 1));
}

/// Two-sided Kolmogorov-Smirnov distance between a sample and a CDF.
inline double ks_distance(std::vector<double> sample, const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0;
  for (std::size_t k = 0; k < sample.size(); ++k) {
    const double f = cdf(sample[k]);
    d = std::max({d, std::abs(f - k / n), std::abs((k + 1) / n - f)});
  }
  return d;
}

/// Standard Gumbel variate by inversion, written out independently of the library.
inline double gumbel_draw(std::mt19937_64& eng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double v;
  do v = u(eng);
  while (v <= 0.0);
  return -std::log(-std::log(v));
}

/// GEV(mu, sigma, xi) variate by inversion of the closed-form CDF.
inline double gev_draw(std::mt19937_64& eng, double mu, double sigma, double xi) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double v;
  do v = u(eng);
  while (v <= 0.0);
  const double e = -std::log(v);
  if (xi == 0.0) return mu - sigma * std::log(e);
  return mu + sigma * (std::pow(e, -xi) - 1.0) / xi;
}

/// GP(sigma, xi) variate by inversion.
inline double gp_draw(std::mt19937_64& eng, double sigma, double xi) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double v;
  do v = u(eng);
  while (v <= 0.0);
  if (xi == 0.0) return -sigma * std::log(v);
  return sigma * (std::pow(v, -xi) - 1.0) / xi;
}

/// Panel without covariates.
inline expanel::PanelData response_panel(const Eigen::MatrixXd& y) {
  std::vector<Eigen::MatrixXd> x(static_cast<std::size_t>(y.rows()), Eigen::MatrixXd(y.cols(), 0));
  return expanel::PanelData(y, std::move(x));
}

/// Every labeling of n items into two nonempty groups with item 0 in group 0.
inline std::vector<std::vector<int>> two_partitions(int n) {
  std::vector<std::vector<int>> out;
  for (unsigned mask = 1; mask < (1u << (n - 1)); ++mask) {
    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    for (int i = 1; i < n; ++i) labels[static_cast<std::size_t>(i)] = (mask >> (i - 1)) & 1u;
    out.push_back(labels);
  }
  return out;
}

/// Scratch directory unique to one test binary.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("expanel-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void spit(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace testing
