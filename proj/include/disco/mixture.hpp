#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "disco/rng.hpp"
#include "disco/tensor.hpp"

namespace disco {

using Vec2 = std::array<double, 2>;

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a[0] + b[0], a[1] + b[1]}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a[0] - b[0], a[1] - b[1]}; }
inline Vec2 operator*(double c, Vec2 a) { return {c * a[0], c * a[1]}; }
inline double dot(Vec2 a, Vec2 b) { return a[0] * b[0] + a[1] * b[1]; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

// Isotropic 2-D Gaussian mixture with a shared component std. Serves both
// as the data generator and as the analytic oracle (density, score, exact
// posterior-mean denoiser) for the diffused distribution.
struct MixtureSpec {
  std::vector<Vec2> means;
  double sigma1 = 0.2;
  std::vector<double> weights;

  void validate() const {
    if (means.empty()) throw std::invalid_argument("MixtureSpec: no components");
    if (sigma1 <= 0.0) throw std::invalid_argument("MixtureSpec: sigma1 must be positive");
    if (weights.size() != means.size())
      throw std::invalid_argument("MixtureSpec: weights/means size mismatch");
    double s = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw std::invalid_argument("MixtureSpec: negative weight");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-12)
      throw std::invalid_argument("MixtureSpec: weights must sum to 1");
  }
};

// Eight components on a regular octagon of circumradius 3, uniform weights.
inline MixtureSpec default_mixture() {
  double r = 3.0;
  double d = 3.0 / std::sqrt(2.0);
  MixtureSpec spec;
  spec.means = {{r, 0},  {-r, 0}, {0, r},  {0, -r},
                {d, d},  {d, -d}, {-d, d}, {-d, -d}};
  spec.sigma1 = 0.2;
  spec.weights.assign(8, 1.0 / 8.0);
  return spec;
}

struct Dataset {
  Tensor points;                // N x 2
  std::vector<int> labels;      // diagnostics only, never used in training
};

inline Dataset sample_dataset(const MixtureSpec& spec, std::size_t n_per_component,
                              std::uint64_t seed) {
  spec.validate();
  if (n_per_component < 1)
    throw std::invalid_argument("sample_dataset: n_per_component must be >= 1");
  Rng rng(seed);
  std::size_t n = n_per_component * spec.means.size();
  Dataset ds{Tensor::zeros({n, 2}), std::vector<int>(n)};
  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.means.size(); ++c) {
    for (std::size_t i = 0; i < n_per_component; ++i, ++row) {
      ds.points(row, 0) = spec.means[c][0] + spec.sigma1 * rng.normal();
      ds.points(row, 1) = spec.means[c][1] + spec.sigma1 * rng.normal();
      ds.labels[row] = static_cast<int>(c);
    }
  }
  return ds;
}

// Log density of the diffused mixture log sum_i w_i N(x; mu_i, (sigma1^2+t^2) I).
inline double diffused_logpdf(const MixtureSpec& spec, Vec2 x, double t) {
  double s2 = spec.sigma1 * spec.sigma1 + t * t;
  double lmax = -INFINITY;
  std::vector<double> terms(spec.means.size());
  for (std::size_t i = 0; i < spec.means.size(); ++i) {
    Vec2 d = x - spec.means[i];
    terms[i] = std::log(spec.weights[i]) - dot(d, d) / (2.0 * s2);
    lmax = std::max(lmax, terms[i]);
  }
  double acc = 0.0;
  for (double v : terms) acc += std::exp(v - lmax);
  return lmax + std::log(acc) - std::log(2.0 * M_PI * s2);
}

// Exact score of the diffused mixture via log-sum-exp responsibilities.
inline Vec2 diffused_score(const MixtureSpec& spec, Vec2 x, double t) {
  double s2 = spec.sigma1 * spec.sigma1 + t * t;
  std::vector<double> logr(spec.means.size());
  double lmax = -INFINITY;
  for (std::size_t i = 0; i < spec.means.size(); ++i) {
    Vec2 d = x - spec.means[i];
    logr[i] = std::log(spec.weights[i]) - dot(d, d) / (2.0 * s2);
    lmax = std::max(lmax, logr[i]);
  }
  double z = 0.0;
  for (double v : logr) z += std::exp(v - lmax);
  Vec2 g{0, 0};
  for (std::size_t i = 0; i < spec.means.size(); ++i) {
    double r = std::exp(logr[i] - lmax) / z;
    g = g + (r / s2) * (spec.means[i] - x);
  }
  return g;
}

// Posterior mean E[y|x] at noise level t: D*(x,t) = x + t^2 * score.
inline Vec2 exact_denoiser(const MixtureSpec& spec, Vec2 x, double t) {
  Vec2 s = diffused_score(spec, x, t);
  return x + (t * t) * s;
}

inline void export_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_csv: cannot open " + path);
  out << "x,y,component\n";
  char buf[96];
  for (std::size_t i = 0; i < ds.points.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d\n", ds.points(i, 0), ds.points(i, 1),
                  ds.labels[i]);
    out << buf;
  }
}

}  // namespace disco
