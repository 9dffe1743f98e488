#pragma once

// Small statistics helpers shared by the analysis pipeline: centered moving
// average, histogramming, a Gaussian fit to histogram counts, and a
// Jarque-Bera normality check.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "spcal/levmar.hpp"

namespace spcal {

// Centered moving average; the window shrinks symmetrically at the edges so
// the estimate stays centered on every sample.
inline std::vector<double> moving_average_centered(std::span<const double> x,
                                                   int window) {
  if (window < 1) throw std::invalid_argument("moving average: window >= 1");
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const std::ptrdiff_t half = window / 2;
  std::vector<double> out(x.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    std::ptrdiff_t h = std::min({half, i, n - 1 - i});
    double s = 0.0;
    for (std::ptrdiff_t j = i - h; j <= i + h; ++j)
      s += x[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s / static_cast<double>(2 * h + 1);
  }
  return out;
}

struct Histogram {
  std::vector<double> edges;   // size bins + 1
  std::vector<double> counts;  // size bins

  double center(std::size_t i) const { return 0.5 * (edges[i] + edges[i + 1]); }
};

inline Histogram make_histogram(std::span<const double> data, int bins) {
  if (bins < 2) throw std::invalid_argument("histogram: bins >= 2");
  if (data.empty()) throw std::invalid_argument("histogram: empty data");
  auto [lo_it, hi_it] = std::minmax_element(data.begin(), data.end());
  double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) {  // degenerate: widen around the single value
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  h.counts.assign(static_cast<std::size_t>(bins), 0.0);
  double width = (hi - lo) / bins;
  for (std::size_t i = 0; i < h.edges.size(); ++i)
    h.edges[i] = lo + width * static_cast<double>(i);
  for (double v : data) {
    auto idx = static_cast<std::ptrdiff_t>((v - lo) / width);
    idx = std::clamp<std::ptrdiff_t>(idx, 0, bins - 1);
    h.counts[static_cast<std::size_t>(idx)] += 1.0;
  }
  return h;
}

struct GaussianFit {
  double amplitude = 0.0;
  double mean = 0.0;
  double sigma = 0.0;
  bool converged = false;
};

// Unweighted fit of A exp(-(x-mu)^2 / 2 sigma^2) to the bin counts.
inline GaussianFit fit_gaussian_to_histogram(const Histogram& h) {
  const std::size_t nb = h.counts.size();
  std::vector<double> y(h.counts.begin(), h.counts.end());
  std::vector<double> ones(nb, 1.0);

  // moment-based starting point
  double total = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < nb; ++i) {
    total += h.counts[i];
    mean += h.counts[i] * h.center(i);
  }
  if (!(total > 0.0)) throw std::invalid_argument("gaussian fit: empty histogram");
  mean /= total;
  double var = 0.0;
  for (std::size_t i = 0; i < nb; ++i) {
    double dx = h.center(i) - mean;
    var += h.counts[i] * dx * dx;
  }
  var /= total;
  double sigma0 = std::sqrt(std::max(var, 1e-300));
  double amp0 = *std::max_element(h.counts.begin(), h.counts.end());

  auto model = [&h](const std::vector<double>& p, std::size_t i,
                    double* grad) {
    double dx = h.center(i) - p[1];
    double s2 = p[2] * p[2];
    double e = std::exp(-0.5 * dx * dx / s2);
    if (grad) {
      grad[0] = e;
      grad[1] = p[0] * e * dx / s2;
      grad[2] = p[0] * e * dx * dx / (s2 * p[2]);
    }
    return p[0] * e;
  };
  auto feasible = [](const std::vector<double>& p) { return p[2] > 0.0; };
  LevMarResult r =
      levmar_fit(model, y, ones, {amp0, mean, sigma0}, feasible);
  GaussianFit g;
  g.amplitude = r.params[0];
  g.mean = r.params[1];
  g.sigma = std::abs(r.params[2]);
  g.converged = r.converged;
  return g;
}

struct NormalityCheck {
  double statistic = 0.0;  // Jarque-Bera, asymptotically chi^2 with 2 dof
  double p_value = 1.0;
};

inline NormalityCheck jarque_bera(std::span<const double> x) {
  const auto n = static_cast<double>(x.size());
  if (x.size() < 8) throw std::invalid_argument("jarque_bera: need >= 8 samples");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  double skew = m3 / std::pow(m2, 1.5);
  double excess_kurt = m4 / (m2 * m2) - 3.0;
  NormalityCheck out;
  out.statistic = n / 6.0 * (skew * skew + 0.25 * excess_kurt * excess_kurt);
  out.p_value = std::exp(-0.5 * out.statistic);
  return out;
}

inline double mean_of(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double sample_std(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

}  // namespace spcal
