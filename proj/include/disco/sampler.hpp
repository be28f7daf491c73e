#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "disco/diffusion.hpp"
#include "disco/disco.hpp"
#include "disco/mixture.hpp"
#include "disco/prior.hpp"
#include "disco/rng.hpp"

namespace disco {

// EDM rho-spaced noise levels t_0 = sigma_max .. t_{n-1} = sigma_min, with
// t_n = 0 appended.
struct TimeGrid {
  std::vector<double> times;  // length n_steps + 1
  std::size_t n_steps() const { return times.size() - 1; }
};

inline TimeGrid edm_time_grid(const DiffusionConfig& cfg, std::size_t n_steps) {
  if (n_steps < 2) throw std::invalid_argument("edm_time_grid: n_steps must be >= 2");
  TimeGrid grid;
  grid.times.resize(n_steps + 1);
  double a = std::pow(cfg.sigma_max, 1.0 / cfg.rho);
  double b = std::pow(cfg.sigma_min, 1.0 / cfg.rho);
  for (std::size_t i = 0; i < n_steps; ++i) {
    double frac = static_cast<double>(i) / static_cast<double>(n_steps - 1);
    grid.times[i] = std::pow(a + frac * (b - a), cfg.rho);
  }
  grid.times[n_steps] = 0.0;
  return grid;
}

using DenoiseFn = std::function<Vec2(Vec2, double)>;

struct Trajectory {
  std::vector<double> times;
  std::vector<Vec2> states;
  std::vector<Vec2> drifts;  // predictor-point drift at each time except t=0
  std::vector<int> latent;
  std::uint64_t seed = 0;
};

struct HeunResult {
  Vec2 x;
  std::size_t nfe = 0;
  std::optional<Trajectory> trajectory;
};

// Alg.-3 Heun solve of dx/dt = (x - D(x,t))/t from x0 at t0 down to 0; the
// final step (t=0) is plain Euler since the drift is undefined there.
inline HeunResult heun_solve(const DenoiseFn& denoise_fn, const TimeGrid& grid, Vec2 x0,
                             bool record = false) {
  HeunResult res;
  res.x = x0;
  if (record) {
    res.trajectory.emplace();
    res.trajectory->times = grid.times;
    res.trajectory->states.reserve(grid.times.size());
    res.trajectory->states.push_back(x0);
  }
  std::size_t n = grid.n_steps();
  Vec2 x = x0;
  for (std::size_t i = 0; i < n; ++i) {
    double ti = grid.times[i];
    double tn = grid.times[i + 1];
    Vec2 d = (1.0 / ti) * (x - denoise_fn(x, ti));
    res.nfe++;
    Vec2 xn = x + (tn - ti) * d;
    if (tn != 0.0) {
      Vec2 d2 = (1.0 / tn) * (xn - denoise_fn(xn, tn));
      res.nfe++;
      xn = x + (tn - ti) * (0.5 * d + 0.5 * d2);
    }
    if (!std::isfinite(xn[0]) || !std::isfinite(xn[1]))
      throw std::runtime_error("heun_solve: non-finite state at step " + std::to_string(i));
    if (record) {
      res.trajectory->drifts.push_back(d);
      res.trajectory->states.push_back(xn);
    }
    x = xn;
  }
  res.x = x;
  return res;
}

struct GeneratedSample {
  Vec2 x;
  std::vector<int> latent;  // empty in baseline mode
  std::uint64_t seed = 0;
};

struct GenerateOptions {
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
  double w_cfg = 1.0;      // guidance scale; with latents, 1 = conditional
  std::size_t n_steps = 50;
  bool baseline = false;   // null token everywhere, prior skipped
  bool record = false;
  bool stratify_latents = true;  // systematic prior sampling (see ar_sample_batch)
};

struct GenerateResult {
  std::vector<GeneratedSample> samples;
  std::vector<Trajectory> trajectories;  // only when record
};

// Alg. 3: z ~ prior, x0 ~ N(0, t0^2 I), ODE solve with (optionally guided)
// denoiser. Baseline mode reproduces a plain EDM sampler.
inline GenerateResult generate(const DiscoModel& model, const LatentPrior* prior,
                               const DiffusionConfig& dcfg, const GenerateOptions& opt) {
  if (!opt.baseline && prior == nullptr)
    throw std::invalid_argument("generate: prior required unless baseline");
  TimeGrid grid = edm_time_grid(dcfg, opt.n_steps);
  GenerateResult out;
  Rng rng(opt.seed);
  std::vector<std::vector<int>> latents;
  if (!opt.baseline && opt.stratify_latents)
    latents = ar_sample_batch(*prior, opt.n_samples, rng);
  for (std::size_t s = 0; s < opt.n_samples; ++s) {
    GeneratedSample gs;
    gs.seed = opt.seed;
    DenoiseFn fn;
    if (opt.baseline) {
      fn = [&model](Vec2 x, double t) { return denoise(model, x, t, std::nullopt); };
    } else {
      gs.latent = latents.empty() ? ar_sample(*prior, rng) : latents[s];
      std::vector<int> z = gs.latent;
      double w = opt.w_cfg;
      fn = [&model, z, w](Vec2 x, double t) { return cfg_denoise(model, x, t, z, w); };
    }
    double t0 = grid.times[0];
    Vec2 x0{t0 * rng.normal(), t0 * rng.normal()};
    HeunResult hr = heun_solve(fn, grid, x0, opt.record);
    gs.x = hr.x;
    if (opt.record && hr.trajectory) {
      hr.trajectory->latent = gs.latent;
      hr.trajectory->seed = opt.seed;
      out.trajectories.push_back(std::move(*hr.trajectory));
    }
    out.samples.push_back(std::move(gs));
  }
  return out;
}

}  // namespace disco
