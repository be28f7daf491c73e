#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "disco/assignment.hpp"
#include "disco/diffusion.hpp"
#include "disco/disco.hpp"
#include "disco/mixture.hpp"
#include "disco/prior.hpp"
#include "disco/rng.hpp"
#include "disco/sampler.hpp"
#include "disco/tape.hpp"

namespace disco {

using DriftFn = std::function<Vec2(Vec2, double)>;

// Finite-difference curvature at (x,t): compare the unit tangent of the
// drift against one backward Euler step along the unit tangent,
// kappa = ||T(t)-T(t-dt)|| / ||x(t)-x(t-dt)|| with ||dx|| = dt. Stepping
// along T rather than the raw drift makes kappa exactly invariant to
// positive rescaling of the drift field (same limit as dt -> 0).
// Vanishing drift at either point flags the probe instead of dividing by 0.
inline std::optional<double> curvature_at(const DriftFn& drift, Vec2 x, double t,
                                          double dt = 0.001) {
  Vec2 v = drift(x, t);
  double nv = norm(v);
  if (nv <= 1e-9) return std::nullopt;
  Vec2 t1 = (1.0 / nv) * v;
  Vec2 xp = x - dt * t1;
  Vec2 v2 = drift(xp, t - dt);
  double nv2 = norm(v2);
  if (nv2 <= 1e-9) return std::nullopt;
  Vec2 tdiff = t1 - (1.0 / nv2) * v2;
  return norm(tdiff) / dt;
}

struct CurvatureProfile {
  std::vector<double> times;       // bin centers (grid times, descending)
  std::vector<double> mean_kappa;  // mean curvature per time
  std::vector<std::size_t> count;  // probes that survived the drift check
};

// Alg.-3 drift (x - D)/t for one latent assignment.
inline DriftFn model_drift(const DiscoModel& model, const std::optional<std::vector<int>>& z) {
  return [&model, z](Vec2 x, double t) {
    Vec2 d = denoise(model, x, t, z);
    return (1.0 / t) * (x - d);
  };
}

// Expected curvature per grid time over simulated reverse trajectories.
inline CurvatureProfile curvature_profile(const DiscoModel& model, const LatentPrior* prior,
                                          const DiffusionConfig& dcfg, std::size_t n_traj,
                                          const TimeGrid& grid, bool baseline,
                                          std::uint64_t seed, double dt = 0.001) {
  CurvatureProfile prof;
  std::size_t nt = grid.n_steps();  // exclude t = 0
  prof.times.assign(grid.times.begin(), grid.times.begin() + static_cast<long>(nt));
  prof.mean_kappa.assign(nt, 0.0);
  prof.count.assign(nt, 0);
  if (n_traj == 0) return prof;

  GenerateOptions opt;
  opt.n_samples = n_traj;
  opt.seed = seed;
  opt.n_steps = nt;
  opt.baseline = baseline;
  opt.record = true;
  GenerateResult gr = generate(model, prior, dcfg, opt);

  for (const Trajectory& tr : gr.trajectories) {
    std::optional<std::vector<int>> z;
    if (!baseline) z = tr.latent;
    DriftFn drift = model_drift(model, z);
    for (std::size_t i = 0; i < nt; ++i) {
      auto k = curvature_at(drift, tr.states[i], tr.times[i], dt);
      if (k) {
        prof.mean_kappa[i] += *k;
        prof.count[i] += 1;
      }
    }
  }
  for (std::size_t i = 0; i < nt; ++i)
    if (prof.count[i] > 0) prof.mean_kappa[i] /= static_cast<double>(prof.count[i]);
  return prof;
}

// ---- Jacobian Frobenius norms ----

// Function-on-tape abstraction: builds a (1,2) output from a (1,2) leaf.
using TapeFn2 = std::function<Value(Tape&, Value)>;

// ||d fn / d x||_F^2 by one reverse sweep per output component.
inline double jacobian_frob_sq(const TapeFn2& fn, Vec2 x) {
  double acc = 0.0;
  for (std::size_t j = 0; j < 2; ++j) {
    Tape tape;
    Value xv = tape.leaf(Tensor::row2(x[0], x[1]));
    Value out = fn(tape, xv);
    if (out.tensor().size() != 2)
      throw std::invalid_argument("jacobian_frob_sq: fn must return a 2-vector");
    tape.backward(tape.select(out, j));
    Tensor g = tape.grad(xv.id);
    acc += g[0] * g[0] + g[1] * g[1];
  }
  return acc;
}

// Denoiser D(x,t,z) or score head G(x,t,z) as tape functions of x.
inline TapeFn2 denoiser_tape_fn(const DiscoModel& model, double t,
                                const std::optional<std::vector<int>>& z) {
  Vec2 fb = z ? mean_embedding(model, *z) : null_embedding(model);
  return [&model, t, fb](Tape& tape, Value xv) {
    TapeModel tm = TapeModel::lift(tape, model);
    Value fbar = tape.constant(Tensor::row2(fb[0], fb[1]));
    return denoise_batch(tm, xv, {t}, fbar);
  };
}

inline TapeFn2 score_tape_fn(const DiscoModel& model, double t,
                             const std::optional<std::vector<int>>& z) {
  Vec2 fb = z ? mean_embedding(model, *z) : null_embedding(model);
  return [&model, t, fb](Tape& tape, Value xv) {
    TapeModel tm = TapeModel::lift(tape, model);
    Value fbar = tape.constant(Tensor::row2(fb[0], fb[1]));
    return score_head_batch(tm, xv, {t}, fbar);
  };
}

struct JacobianProfile {
  std::vector<double> times;
  std::vector<double> mean_jac_d;  // E ||dD/dx||_F^2
  std::vector<double> mean_jac_g;  // E ||dG/dx||_F^2
  std::vector<std::size_t> count;
};

// Jacobian norms probed at states drawn from recorded trajectories.
inline JacobianProfile jacobian_profile(const DiscoModel& model, const LatentPrior* prior,
                                        const DiffusionConfig& dcfg, std::size_t n_traj,
                                        const TimeGrid& grid, bool baseline,
                                        std::uint64_t seed,
                                        std::size_t probes_per_bin = 64) {
  JacobianProfile prof;
  std::size_t nt = grid.n_steps();
  prof.times.assign(grid.times.begin(), grid.times.begin() + static_cast<long>(nt));
  prof.mean_jac_d.assign(nt, 0.0);
  prof.mean_jac_g.assign(nt, 0.0);
  prof.count.assign(nt, 0);

  GenerateOptions opt;
  opt.n_samples = n_traj;
  opt.seed = seed;
  opt.n_steps = nt;
  opt.baseline = baseline;
  opt.record = true;
  GenerateResult gr = generate(model, prior, dcfg, opt);
  if (gr.trajectories.empty()) return prof;

  Rng rng(seed ^ 0x9a751ULL);
  for (std::size_t i = 0; i < nt; ++i) {
    double t = prof.times[i];
    for (std::size_t p = 0; p < probes_per_bin; ++p) {
      const Trajectory& tr = gr.trajectories[rng.index(gr.trajectories.size())];
      Vec2 x = tr.states[i];
      std::optional<std::vector<int>> z;
      if (!baseline) z = tr.latent;
      prof.mean_jac_d[i] += jacobian_frob_sq(denoiser_tape_fn(model, t, z), x);
      prof.mean_jac_g[i] += jacobian_frob_sq(score_tape_fn(model, t, z), x);
      prof.count[i] += 1;
    }
    if (prof.count[i] > 0) {
      prof.mean_jac_d[i] /= static_cast<double>(prof.count[i]);
      prof.mean_jac_g[i] /= static_cast<double>(prof.count[i]);
    }
  }
  return prof;
}

// ---- Wasserstein-2 ----

// Exact empirical W-2: sqrt of the optimal mean squared matching distance.
// Unequal sets are reduced by uniform subsampling of the larger one.
inline double wasserstein2(const Tensor& a, const Tensor& b, std::uint64_t subsample_seed = 0) {
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("wasserstein2: empty set");
  std::vector<Vec2> pa, pb;
  pa.reserve(a.rows());
  pb.reserve(b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) pa.push_back({a(i, 0), a(i, 1)});
  for (std::size_t i = 0; i < b.rows(); ++i) pb.push_back({b(i, 0), b(i, 1)});

  Rng rng(subsample_seed);
  auto shrink = [&rng](std::vector<Vec2>& v, std::size_t target) {
    // partial Fisher-Yates, then truncate
    for (std::size_t i = 0; i < target; ++i)
      std::swap(v[i], v[i + rng.index(v.size() - i)]);
    v.resize(target);
  };
  std::size_t n = std::min(pa.size(), pb.size());
  if (pa.size() > n) shrink(pa, n);
  if (pb.size() > n) shrink(pb, n);

  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Vec2 d = pa[i] - pb[j];
      cost[i * n + j] = dot(d, d);
    }
  std::vector<int> sol;
  double total = solve_assignment(cost, n, sol);
  return std::sqrt(total / static_cast<double>(n));
}

// ---- loss vs t ----

struct LossBin {
  double t = 0.0;
  double mean_loss = 0.0;
  std::size_t n = 0;  // n == 0 marks an absent bin
};

// Denoiser-with-latent-policy probe: maps (y, x_noisy, sigma) to D.
using ProbeDenoiser = std::function<Vec2(Vec2 /*y*/, Vec2 /*x*/, double /*sigma*/)>;

inline ProbeDenoiser disco_probe(const DiscoModel& model) {
  // oracle latents: deterministic encoder argmax of the clean sample
  return [&model](Vec2 y, Vec2 x, double sigma) {
    return denoise(model, x, sigma, encode_argmax(model, y));
  };
}

inline ProbeDenoiser baseline_probe(const DiscoModel& model) {
  return [&model](Vec2, Vec2 x, double sigma) { return denoise(model, x, sigma, std::nullopt); };
}

inline ProbeDenoiser oracle_probe(const MixtureSpec& spec) {
  return [&spec](Vec2, Vec2 x, double sigma) { return exact_denoiser(spec, x, sigma); };
}

inline std::vector<double> log_spaced_bins(double lo, double hi, std::size_t n) {
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) {
    double f = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    t[i] = std::exp(std::log(lo) + f * (std::log(hi) - std::log(lo)));
  }
  return t;
}

// Mean Eq.-3 loss per noise-level bin, with shared (y, n) draws so that
// two arms can be compared on identical probes.
inline std::vector<LossBin> loss_vs_t(const ProbeDenoiser& probe, const Dataset& data,
                                      const DiffusionConfig& dcfg,
                                      const std::vector<double>& bin_centers,
                                      std::size_t n_per_bin, std::uint64_t seed) {
  std::vector<LossBin> out;
  for (double t : bin_centers) {
    LossBin bin;
    bin.t = t;
    Rng rng(seed);  // same draws in every bin and for every arm
    double lam = loss_weight(dcfg, t);
    for (std::size_t i = 0; i < n_per_bin; ++i) {
      std::size_t idx = rng.index(data.points.rows());
      Vec2 y{data.points(idx, 0), data.points(idx, 1)};
      Vec2 x = y + Vec2{t * rng.normal(), t * rng.normal()};
      Vec2 d = probe(y, x, t);
      bin.mean_loss += lam * dot(d - y, d - y);
      bin.n += 1;
    }
    if (bin.n > 0) bin.mean_loss /= static_cast<double>(bin.n);
    out.push_back(bin);
  }
  return out;
}

// ---- mode capture ----

// Majority-vote purity of codebook indices against ground-truth components.
inline double codebook_purity(const DiscoModel& model, const Dataset& data) {
  std::size_t n = data.points.rows();
  if (n == 0) throw std::invalid_argument("codebook_purity: empty dataset");
  std::size_t k = static_cast<std::size_t>(model.mc.k);
  std::size_t ncomp = 0;
  for (int l : data.labels) ncomp = std::max(ncomp, static_cast<std::size_t>(l) + 1);
  std::vector<std::vector<std::size_t>> table(k, std::vector<std::size_t>(ncomp, 0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> z = encode_argmax(model, {data.points(i, 0), data.points(i, 1)});
    table[static_cast<std::size_t>(z[0])][static_cast<std::size_t>(data.labels[i])] += 1;
  }
  std::size_t agree = 0;
  for (std::size_t c = 0; c < k; ++c)
    agree += *std::max_element(table[c].begin(), table[c].end());
  return static_cast<double>(agree) / static_cast<double>(n);
}

}  // namespace disco
