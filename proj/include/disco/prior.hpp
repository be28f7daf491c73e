#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "disco/adam.hpp"
#include "disco/disco.hpp"
#include "disco/rng.hpp"
#include "disco/tape.hpp"

namespace disco {

// Second-stage model over discrete latents. For m=1 the maximum-likelihood
// fit is a categorical table; for m>1 an MLP maps the embedded prefix plus
// a position one-hot to the next-symbol logits, so position i never sees
// z_{>=i}.
struct LatentPrior {
  int m = 1;
  int k = 8;
  int hidden = 32;
  ParamMap params;  // m==1: "table" (1,k) logits; m>1: "P.w0/b0/w1/b1"

  static LatentPrior init(int m, int k, Rng& rng, int hidden = 32) {
    if (m < 1 || k < 2) throw std::invalid_argument("LatentPrior: need m >= 1, k >= 2");
    LatentPrior p;
    p.m = m;
    p.k = k;
    p.hidden = hidden;
    if (m == 1) {
      p.params["table"] = Tensor::zeros({1, static_cast<std::size_t>(k)});
    } else {
      std::size_t in = static_cast<std::size_t>(m * k + m);  // prefix one-hots + position
      std::size_t w = static_cast<std::size_t>(hidden);
      auto randn = [&rng](std::vector<std::size_t> shape, double scale) {
        Tensor t = Tensor::zeros(std::move(shape));
        for (double& v : t.vec()) v = scale * rng.normal();
        return t;
      };
      p.params["P.w0"] = randn({in, w}, std::sqrt(2.0 / static_cast<double>(in)));
      p.params["P.b0"] = Tensor::zeros({w});
      p.params["P.w1"] = randn({w, static_cast<std::size_t>(k)}, std::sqrt(2.0 / w));
      p.params["P.b1"] = Tensor::zeros({static_cast<std::size_t>(k)});
    }
    return p;
  }

  // Masked input row for position i: one-hots of z_0..z_{i-1}, zeros beyond,
  // plus the position indicator.
  std::vector<double> prefix_features(const std::vector<int>& z, int pos) const {
    std::vector<double> f(static_cast<std::size_t>(m * k + m), 0.0);
    for (int j = 0; j < pos; ++j) f[static_cast<std::size_t>(j * k + z[j])] = 1.0;
    f[static_cast<std::size_t>(m * k + pos)] = 1.0;
    return f;
  }

  std::vector<double> logits_at(const std::vector<int>& z, int pos) const {
    if (m == 1) {
      const Tensor& t = params.at("table");
      return std::vector<double>(t.vec());
    }
    std::vector<double> h = prefix_features(z, pos);
    const Tensor& w0 = params.at("P.w0");
    const Tensor& b0 = params.at("P.b0");
    std::vector<double> mid(w0.cols());
    for (std::size_t j = 0; j < w0.cols(); ++j) {
      double s = b0[j];
      for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * w0(i, j);
      double sg = s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
      mid[j] = s * sg;
    }
    const Tensor& w1 = params.at("P.w1");
    const Tensor& b1 = params.at("P.b1");
    std::vector<double> out(w1.cols());
    for (std::size_t j = 0; j < w1.cols(); ++j) {
      double s = b1[j];
      for (std::size_t i = 0; i < mid.size(); ++i) s += mid[i] * w1(i, j);
      out[j] = s;
    }
    return out;
  }

  std::vector<double> probs_at(const std::vector<int>& z, int pos,
                               double temperature = 1.0) const {
    std::vector<double> logits = logits_at(z, pos);
    double mx = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = std::exp((logits[i] - mx) / temperature);
      s += p[i];
    }
    for (double& v : p) v /= s;
    return p;
  }
};

// Hard latents extracted from the training set by the trained encoder.
inline std::vector<std::vector<int>> extract_latents(const DiscoModel& model,
                                                     const Dataset& data, double tau_extract,
                                                     Rng& rng) {
  std::vector<std::vector<int>> out;
  out.reserve(data.points.rows());
  for (std::size_t i = 0; i < data.points.rows(); ++i) {
    Vec2 y{data.points(i, 0), data.points(i, 1)};
    out.push_back(encode(model, y, tau_extract, rng).hard);
  }
  return out;
}

// Negative log-likelihood of a latent set under the prior.
inline double prior_nll(const LatentPrior& prior, const std::vector<std::vector<int>>& zs) {
  double nll = 0.0;
  for (const auto& z : zs)
    for (int i = 0; i < prior.m; ++i) {
      auto p = prior.probs_at(z, i);
      nll -= std::log(std::max(p[static_cast<std::size_t>(z[i])], 1e-300));
    }
  return nll / static_cast<double>(zs.size());
}

// Alg.-2 training on extracted hard latents. m=1 admits the closed-form
// categorical MLE; m>1 minimizes the NLL with Adam.
inline void ar_train(LatentPrior& prior, const std::vector<std::vector<int>>& zs,
                     int epochs = 200, double lr = 1e-3, std::uint64_t seed = 0) {
  if (zs.empty()) throw std::invalid_argument("ar_train: no latents");
  if (prior.m == 1) {
    std::vector<double> counts(static_cast<std::size_t>(prior.k), 0.0);
    for (const auto& z : zs) counts[static_cast<std::size_t>(z[0])] += 1.0;
    Tensor& table = prior.params["table"];
    double n = static_cast<double>(zs.size());
    for (int j = 0; j < prior.k; ++j)
      table[static_cast<std::size_t>(j)] = std::log(std::max(counts[j] / n, 1e-12));
    return;
  }

  AdamState opt;
  opt.lr = lr;
  Rng rng(seed);
  std::size_t batch = std::min<std::size_t>(zs.size(), 256);
  std::size_t steps_per_epoch = (zs.size() + batch - 1) / batch;
  for (int e = 0; e < epochs; ++e) {
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      std::size_t b = batch;
      Tape tape;
      Value w0 = tape.leaf(prior.params["P.w0"]);
      Value b0 = tape.leaf(prior.params["P.b0"]);
      Value w1 = tape.leaf(prior.params["P.w1"]);
      Value b1 = tape.leaf(prior.params["P.b1"]);

      std::size_t rows = b * static_cast<std::size_t>(prior.m);
      Tensor feats = Tensor::zeros({rows, static_cast<std::size_t>(prior.m * prior.k + prior.m)});
      std::vector<std::size_t> targets(rows);
      for (std::size_t i = 0; i < b; ++i) {
        const auto& z = zs[rng.index(zs.size())];
        for (int pos = 0; pos < prior.m; ++pos) {
          std::vector<double> f = prior.prefix_features(z, pos);
          std::size_t r = i * static_cast<std::size_t>(prior.m) + static_cast<std::size_t>(pos);
          for (std::size_t j = 0; j < f.size(); ++j) feats(r, j) = f[j];
          targets[r] = static_cast<std::size_t>(z[pos]);
        }
      }
      Value h = tape.silu(tape.affine(tape.constant(std::move(feats)), w0, b0));
      Value logits = tape.affine(h, w1, b1);
      Value logp = tape.log_softmax(logits);
      Tensor pick = Tensor::zeros({rows, static_cast<std::size_t>(prior.k)});
      for (std::size_t r = 0; r < rows; ++r)
        pick(r, targets[r]) = -1.0 / static_cast<double>(rows);
      Value loss = tape.sum(tape.mul(logp, tape.constant(std::move(pick))));
      tape.backward(loss);
      GradMap grads{{"P.w0", tape.grad(w0.id)},
                    {"P.b0", tape.grad(b0.id)},
                    {"P.w1", tape.grad(w1.id)},
                    {"P.b1", tape.grad(b1.id)}};
      adam_step(opt, prior.params, grads);
    }
  }
}

// Ancestral sampling (Alg. 3 lines 3-5); temperature scales logits.
inline std::vector<int> ar_sample(const LatentPrior& prior, Rng& rng,
                                  double temperature = 1.0) {
  std::vector<int> z(static_cast<std::size_t>(prior.m), 0);
  for (int i = 0; i < prior.m; ++i) {
    std::vector<double> p =
        temperature <= 1e-12 ? std::vector<double>() : prior.probs_at(z, i, temperature);
    if (p.empty()) {
      // zero-temperature limit: argmax chain
      std::vector<double> logits = prior.logits_at(z, i);
      z[static_cast<std::size_t>(i)] = static_cast<int>(
          std::max_element(logits.begin(), logits.end()) - logits.begin());
      continue;
    }
    double u = rng.uniform();
    double acc = 0.0;
    int pick = prior.k - 1;
    for (int j = 0; j < prior.k; ++j) {
      acc += p[static_cast<std::size_t>(j)];
      if (u < acc) {
        pick = j;
        break;
      }
    }
    z[static_cast<std::size_t>(i)] = pick;
  }
  return z;
}

// Draw a batch of latents by systematic (low-discrepancy) sampling of the
// prior's joint distribution: each draw is marginally distributed as the
// prior, but realized counts track the prior probabilities within one
// sample. This removes the multinomial mode-count noise that otherwise
// dominates small-sample W-2 estimates. Falls back to iid ancestral
// sampling when the joint support k^m is too large to enumerate.
inline std::vector<std::vector<int>> ar_sample_batch(const LatentPrior& prior, std::size_t n,
                                                     Rng& rng) {
  double support = std::pow(static_cast<double>(prior.k), prior.m);
  if (support > 4096.0) {
    std::vector<std::vector<int>> out(n);
    for (auto& z : out) z = ar_sample(prior, rng);
    return out;
  }
  std::size_t cells = static_cast<std::size_t>(support);
  // joint pmf by chaining the AR conditionals over all k^m sequences
  std::vector<std::vector<int>> seq(cells, std::vector<int>(static_cast<std::size_t>(prior.m)));
  std::vector<double> pmf(cells, 1.0);
  for (std::size_t c = 0; c < cells; ++c) {
    std::size_t rem = c;
    for (int i = 0; i < prior.m; ++i) {
      seq[c][static_cast<std::size_t>(i)] = static_cast<int>(rem % static_cast<std::size_t>(prior.k));
      rem /= static_cast<std::size_t>(prior.k);
    }
    for (int i = 0; i < prior.m; ++i)
      pmf[c] *= prior.probs_at(seq[c], i)[static_cast<std::size_t>(seq[c][static_cast<std::size_t>(i)])];
  }
  // systematic resampling: one uniform offset, n evenly spaced probes
  std::vector<std::vector<int>> out;
  out.reserve(n);
  double u = rng.uniform() / static_cast<double>(n);
  double acc = 0.0;
  std::size_t c = 0;
  for (std::size_t s = 0; s < n; ++s) {
    double target = u + static_cast<double>(s) / static_cast<double>(n);
    while (c + 1 < cells && acc + pmf[c] < target) acc += pmf[c], ++c;
    out.push_back(seq[c]);
  }
  // decouple latent order from x0 draws
  for (std::size_t i = n; i > 1; --i) std::swap(out[i - 1], out[rng.index(i)]);
  return out;
}

// Total-variation distance between two categorical histograms.
inline double tv_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("tv_distance: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

}  // namespace disco
