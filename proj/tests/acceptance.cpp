// End-to-end acceptance gate: trains both arms from scratch over three seeds
// and checks every headline claim, printing one pass/fail line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "disco/analysis.hpp"
#include "disco/config.hpp"

using namespace disco;

namespace {

struct Criterion {
  bool pass = false;
  std::string detail;
};

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

struct TrainedSeed {
  Dataset data;
  TrainState disco;
  TrainState baseline;
  LatentPrior prior;
  double w2_disco = 0.0;
  double w2_baseline = 0.0;
  std::vector<int> sampled_latents;  // one code per generated disco sample
};

TrainedSeed run_seed(const RunConfig& cfg, std::uint64_t seed) {
  TrainedSeed out;
  out.data = sample_dataset(cfg.mixture(), cfg.n_per_component, seed);
  DiffusionConfig dcfg = cfg.diffusion();
  TrainSettings set = cfg.training();

  for (bool baseline : {false, true}) {
    Rng init(baseline ? seed + 100 : seed);
    TrainState ts;
    ts.model = DiscoModel::init(cfg.model(), init);
    set.baseline = baseline;
    Rng trng(baseline ? seed + 101 : seed + 1);
    for (std::size_t i = 0; i < cfg.train_steps; ++i) joint_train_step(ts, out.data, dcfg, set, trng);
    (baseline ? out.baseline : out.disco) = std::move(ts);
  }

  Rng erng(seed + 2);
  auto latents = extract_latents(out.disco.model, out.data, cfg.tau_extract, erng);
  out.prior = LatentPrior::init(cfg.m, cfg.k, erng, cfg.prior_hidden);
  ar_train(out.prior, latents, static_cast<int>(cfg.prior_steps), cfg.prior_lr, seed + 3);

  Dataset ref = sample_dataset(cfg.mixture(), 1000 / cfg.mixture().means.size(), seed + 777);
  for (bool baseline : {false, true}) {
    GenerateOptions opt;
    opt.n_samples = 1000;
    opt.seed = seed + 9;
    opt.baseline = baseline;
    GenerateResult gr =
        generate(baseline ? out.baseline.model : out.disco.model,
                 baseline ? nullptr : &out.prior, dcfg, opt);
    Tensor pts = Tensor::zeros({gr.samples.size(), 2});
    for (std::size_t i = 0; i < gr.samples.size(); ++i) {
      pts(i, 0) = gr.samples[i].x[0];
      pts(i, 1) = gr.samples[i].x[1];
      if (!baseline) out.sampled_latents.push_back(gr.samples[i].latent[0]);
    }
    (baseline ? out.w2_baseline : out.w2_disco) = wasserstein2(pts, ref.points, seed + 13);
  }
  return out;
}

// ---- criterion 9 helpers: finite-difference gradchecks ----

double fd_partial(const std::function<double(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, std::size_t which, std::size_t idx,
                  double h = 1e-5) {
  inputs[which][idx] += h;
  double up = f(inputs);
  inputs[which][idx] -= 2.0 * h;
  double down = f(inputs);
  return (up - down) / (2.0 * h);
}

// Max relative error of the tape gradient against central differences.
double gradcheck_err(const std::function<Value(Tape&, const std::vector<Value>&)>& build,
                     const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Value> vals;
  for (const Tensor& t : inputs) vals.push_back(tape.leaf(t));
  tape.backward(build(tape, vals));
  auto scalar_f = [&](const std::vector<Tensor>& xs) {
    Tape t2;
    std::vector<Value> vs;
    for (const Tensor& t : xs) vs.push_back(t2.leaf(t));
    return build(t2, vs).scalar();
  };
  double worst = 0.0;
  for (std::size_t w = 0; w < inputs.size(); ++w) {
    Tensor g = tape.grad(vals[w].id);
    for (std::size_t i = 0; i < inputs[w].size(); ++i) {
      double fd = fd_partial(scalar_f, inputs, w, i);
      double denom = std::max({std::abs(fd), std::abs(g[i]), 1.0});
      worst = std::max(worst, std::abs(g[i] - fd) / denom);
    }
  }
  return worst;
}

Criterion criterion9() {
  Criterion c;
  Rng rng(17);

  // composite tensor-op chain through the tape
  Tensor w = Tensor::zeros({3, 3}), x = Tensor::zeros({2, 3}), b = Tensor::zeros({1, 3});
  for (double& v : w.vec()) v = rng.normal();
  for (double& v : x.vec()) v = rng.normal();
  for (double& v : b.vec()) v = rng.normal();
  double e_ops = gradcheck_err(
      [](Tape& t, const std::vector<Value>& v) {
        Value h = t.silu(t.affine(v[1], v[0], v[2]));
        return t.mean(t.mul(h, h));
      },
      {w, x, b});

  // Eq.-3 joint loss: exercises the Gumbel-Softmax relaxation, the denoiser
  // stack, and dsm_loss in one graph, gradients w.r.t. every parameter
  ModelConfig mc;
  mc.hidden = 8;
  mc.time_dim = 4;
  Rng mrng(5);
  DiscoModel model = DiscoModel::init(mc, mrng);
  for (auto& [name, p] : model.params)
    for (double& v : p.vec()) v += 0.05 * mrng.normal();
  DiffusionConfig dcfg;
  Dataset tiny = sample_dataset(default_mixture(), 2, 7);
  Rng brng(9);
  JointBatch jb = make_joint_batch(model, tiny, dcfg, 4, 0.7, 0.25, false, brng);
  std::vector<std::string> names;
  std::vector<Tensor> init;
  for (const auto& [name, p] : model.params) {
    names.push_back(name);
    init.push_back(p);
  }
  double e_joint = gradcheck_err(
      [&](Tape& t, const std::vector<Value>& v) {
        TapeModel tm{&t, &mc, {}};
        for (std::size_t i = 0; i < names.size(); ++i) tm.leaves.emplace(names[i], v[i]);
        return build_joint_loss(t, tm, jb, dcfg, 0.5, 1e-3);
      },
      init);

  // jacobian_frob_sq against central differences of the denoiser itself
  double e_jac = 0.0;
  for (int trial = 0; trial < 8; ++trial) {
    Vec2 xp{3.0 * rng.normal(), 3.0 * rng.normal()};
    double t = std::exp(rng.normal());
    auto fn = denoiser_tape_fn(model, t, std::vector<int>{trial % mc.k});
    double got = jacobian_frob_sq(fn, xp);
    double h = 1e-5, fd = 0.0;
    for (int ax = 0; ax < 2; ++ax) {
      Vec2 up = xp, dn = xp;
      up[ax] += h;
      dn[ax] -= h;
      Vec2 d = (1.0 / (2.0 * h)) * (denoise(model, up, t, std::vector<int>{trial % mc.k}) -
                                    denoise(model, dn, t, std::vector<int>{trial % mc.k}));
      fd += d[0] * d[0] + d[1] * d[1];
    }
    e_jac = std::max(e_jac, std::abs(got - fd) / std::max(1.0, std::abs(fd)));
  }

  // Heun local order on the single-Gaussian oracle drift: halving the step
  // count should scale the endpoint error by ~2^2 per step * 2 steps lost,
  // i.e. a factor in [3,5] for an order-3 local / order-2 global scheme
  MixtureSpec one;
  one.means = {{1.0, 0.5}};
  one.sigma1 = 0.2;
  one.weights = {1.0};
  DiffusionConfig ocfg;
  ocfg.sigma_min = 0.1;
  auto endpoint = [&](std::size_t steps) {
    TimeGrid g = edm_time_grid(ocfg, steps);
    g.times.pop_back();  // stay inside the smooth region, no final Euler-to-0
    Vec2 x{35.0, -20.0};
    for (std::size_t i = 0; i + 1 < g.times.size(); ++i) {
      double ti = g.times[i], tn = g.times[i + 1];
      Vec2 d = (1.0 / ti) * (x - exact_denoiser(one, x, ti));
      Vec2 xp = x + (tn - ti) * d;
      Vec2 d2 = (1.0 / tn) * (xp - exact_denoiser(one, xp, tn));
      x = x + (tn - ti) * (0.5 * d + 0.5 * d2);
    }
    return x;
  };
  Vec2 ref = endpoint(4096);
  double ratio = norm(endpoint(20) - ref) / norm(endpoint(40) - ref);

  bool grads_ok = e_ops < 1e-5 && e_joint < 1e-4 && e_jac < 1e-4;
  c.pass = grads_ok && ratio > 3.0 && ratio < 5.0;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "gradcheck rel err: ops %.2e, joint loss %.2e, jacobian %.2e; Heun error ratio %.2f",
                e_ops, e_joint, e_jac, ratio);
  c.detail = buf;
  return c;
}

Criterion criterion5() {
  Criterion c;
  MixtureSpec one;
  one.means = {{1.0, 0.5}};
  one.sigma1 = 0.2;
  one.weights = {1.0};
  DiffusionConfig dcfg;
  TimeGrid grid = edm_time_grid(dcfg, 50);
  DenoiseFn fn = [&one](Vec2 x, double t) { return exact_denoiser(one, x, t); };

  Rng rng(123);
  const int n = 10000;
  double sx = 0, sy = 0, sxx = 0, syy = 0;
  bool nfe_ok = true;
  for (int i = 0; i < n; ++i) {
    Vec2 x0{dcfg.sigma_max * rng.normal(), dcfg.sigma_max * rng.normal()};
    HeunResult res = heun_solve(fn, grid, x0);
    if (res.nfe != 99) nfe_ok = false;
    sx += res.x[0];
    sy += res.x[1];
    sxx += res.x[0] * res.x[0];
    syy += res.x[1] * res.x[1];
  }
  double mx = sx / n, my = sy / n;
  double stdx = std::sqrt(sxx / n - mx * mx), stdy = std::sqrt(syy / n - my * my);
  double mean_err = std::max(std::abs(mx - 1.0), std::abs(my - 0.5));
  double std_err = std::max(std::abs(stdx - 0.2), std::abs(stdy - 0.2)) / 0.2;
  c.pass = nfe_ok && mean_err < 0.01 && std_err < 0.02;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "mean (%.4f, %.4f) vs (1, 0.5), std (%.4f, %.4f) vs 0.2, NFE %s99",
                mx, my, stdx, stdy, nfe_ok ? "= " : "!= ");
  c.detail = buf;
  return c;
}

Criterion criterion10() {
  Criterion c;
  ModelConfig mc;
  Rng rng(41);
  DiscoModel model = DiscoModel::init(mc, rng);
  for (auto& [name, p] : model.params)
    for (double& v : p.vec()) v += 0.1 * rng.normal();

  double worst = 0.0;
  for (int i = 0; i < 32; ++i) {
    Vec2 x{5.0 * rng.normal(), 5.0 * rng.normal()};
    double t = std::exp(2.0 * rng.normal());
    std::vector<int> z{static_cast<int>(rng.uniform() * mc.k)};
    Vec2 dc = denoise(model, x, t, z);
    Vec2 du = denoise(model, x, t, std::nullopt);
    worst = std::max(worst, norm(cfg_denoise(model, x, t, z, 1.0) - dc));
    worst = std::max(worst, norm(cfg_denoise(model, x, t, z, 0.0) - du));
    for (double w : {-0.5, 0.3, 2.0, 7.0}) {
      Vec2 affine = du + w * (dc - du);
      worst = std::max(worst, norm(cfg_denoise(model, x, t, z, w) - affine));
    }
  }
  c.pass = worst < 1e-12;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "max identity residual %.2e (tol 1e-12)", worst);
  c.detail = buf;
  return c;
}

}  // namespace

int main() {
  RunConfig cfg;
  DiffusionConfig dcfg = cfg.diffusion();
  std::vector<Criterion> crit(10);

  auto t0 = std::chrono::steady_clock::now();
  std::vector<TrainedSeed> seeds;
  for (std::uint64_t s : {0, 1, 2}) {
    std::printf("[setup] training both arms, seed %llu...\n", (unsigned long long)s);
    seeds.push_back(run_seed(cfg, s));
  }
  double train_minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;

  // 1: W-2 improvement
  {
    std::vector<double> wd, wb;
    for (const auto& s : seeds) {
      wd.push_back(s.w2_disco);
      wb.push_back(s.w2_baseline);
    }
    double md = median3(wd), mb = median3(wb);
    crit[0].pass = md <= 0.18 && mb >= 1.3 * md && train_minutes < 15.0;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "median W-2 disco %.3f (<= 0.18), baseline %.3f (ratio %.2f >= 1.3), %.1f min",
                  md, mb, mb / md, train_minutes);
    crit[0].detail = buf;
  }

  const TrainedSeed& s0 = seeds[0];
  TimeGrid grid = edm_time_grid(dcfg, 50);

  // 2: curvature reduction over t in [0.1, 80]
  {
    auto cd = curvature_profile(s0.disco.model, &s0.prior, dcfg, 256, grid, false, 211);
    auto cb = curvature_profile(s0.baseline.model, nullptr, dcfg, 256, grid, true, 211);
    std::size_t win = 0, tot = 0;
    for (std::size_t i = 0; i < cd.times.size(); ++i) {
      if (cd.times[i] < 0.1 || cd.times[i] > 80.0) continue;
      if (cd.count[i] == 0 || cb.count[i] == 0) continue;
      ++tot;
      if (cd.mean_kappa[i] < cb.mean_kappa[i]) ++win;
    }
    crit[1].pass = tot > 0 && win >= (9 * tot + 9) / 10;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "disco curvature lower in %zu/%zu t bins (need >= 90%%)", win,
                  tot);
    crit[1].detail = buf;
  }

  // 3: Jacobian-norm reduction, 1024 probes per bin
  {
    auto jd = jacobian_profile(s0.disco.model, &s0.prior, dcfg, 256, grid, false, 212, 1024);
    auto jb = jacobian_profile(s0.baseline.model, nullptr, dcfg, 256, grid, true, 212, 1024);
    std::size_t win = 0, tot = 0;
    for (std::size_t i = 0; i < jd.times.size(); ++i) {
      if (jd.count[i] == 0 || jb.count[i] == 0) continue;
      ++tot;
      if (jd.mean_jac_d[i] < jb.mean_jac_d[i]) ++win;
    }
    crit[2].pass = tot > 0 && win >= (9 * tot + 9) / 10;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "disco ||dD/dx||_F^2 lower in %zu/%zu t bins (need >= 90%%)",
                  win, tot);
    crit[2].detail = buf;
  }

  // 4: loss-vs-t pattern with oracle latents
  {
    auto bins = log_spaced_bins(0.01, 20.0, 16);
    auto ld = loss_vs_t(disco_probe(s0.disco.model), s0.data, dcfg, bins, 512, 213);
    auto lb = loss_vs_t(baseline_probe(s0.baseline.model), s0.data, dcfg, bins, 512, 213);
    bool hi_ok = true, lo_ok = true;
    double worst_lo = 0.0;
    for (std::size_t i = 0; i < bins.size(); ++i) {
      if (ld[i].n == 0 || lb[i].n == 0) continue;
      if (bins[i] >= 1.0 && ld[i].mean_loss > lb[i].mean_loss) hi_ok = false;
      if (bins[i] <= 0.05) {
        double rel = std::abs(ld[i].mean_loss - lb[i].mean_loss) / lb[i].mean_loss;
        worst_lo = std::max(worst_lo, rel);
        if (rel > 0.10) lo_ok = false;
      }
    }
    crit[3].pass = hi_ok && lo_ok;
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "disco <= baseline at every t >= 1: %s; max gap at t <= 0.05: %.1f%% (tol 10%%)",
                  hi_ok ? "yes" : "no", 100.0 * worst_lo);
    crit[3].detail = buf;
  }

  crit[4] = criterion5();

  // 6: trained baseline vs the exact mixture denoiser
  {
    Rng prng(214);
    double err2 = 0.0, ref2 = 0.0;
    double box = 3.0 * dcfg.sigma_data;
    for (int i = 0; i < 10000; ++i) {
      double t = 0.05 * std::pow(10.0 / 0.05, prng.uniform());
      Vec2 x{(2.0 * prng.uniform() - 1.0) * box, (2.0 * prng.uniform() - 1.0) * box};
      Vec2 e = denoise(s0.baseline.model, x, t, std::nullopt) - exact_denoiser(cfg.mixture(), x, t);
      Vec2 r = exact_denoiser(cfg.mixture(), x, t);
      err2 += e[0] * e[0] + e[1] * e[1];
      ref2 += r[0] * r[0] + r[1] * r[1];
    }
    double rel = std::sqrt(err2 / ref2);
    crit[5].pass = rel < 0.15;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "baseline vs exact denoiser rel RMSE %.3f (< 0.15)", rel);
    crit[5].detail = buf;
  }

  // 7: mode capture
  {
    double purity = codebook_purity(s0.disco.model, s0.data);
    crit[6].pass = purity >= 0.9;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "codebook purity %.3f (>= 0.9)", purity);
    crit[6].detail = buf;
  }

  // 8: prior fidelity
  {
    Rng erng(2);
    auto latents = extract_latents(s0.disco.model, s0.data, cfg.tau_extract, erng);
    std::vector<double> hist(static_cast<std::size_t>(cfg.k), 0.0);
    for (const auto& z : latents) hist[static_cast<std::size_t>(z[0])] += 1.0 / latents.size();
    double tv_prior = tv_distance(s0.prior.probs_at({0}, 0), hist);

    std::vector<double> ghist(static_cast<std::size_t>(cfg.k), 0.0);
    for (int z : s0.sampled_latents)
      ghist[static_cast<std::size_t>(z)] += 1.0 / s0.sampled_latents.size();
    double tv_end = tv_distance(ghist, hist);
    crit[7].pass = tv_prior <= 0.02 && tv_end <= 0.05;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "prior TV %.4f (<= 0.02), end-to-end TV %.4f (<= 0.05)",
                  tv_prior, tv_end);
    crit[7].detail = buf;
  }

  crit[8] = criterion9();
  crit[9] = criterion10();

  static const char* kNames[10] = {
      "W-2 improvement over baseline", "curvature reduction",
      "Jacobian-norm reduction",       "loss-vs-t pattern",
      "sampler correctness oracle",    "analytic-score recovery",
      "mode capture (purity)",         "prior fidelity (TV)",
      "numerics suite",                "CFG identities"};
  int failures = 0;
  for (int i = 0; i < 10; ++i) {
    if (!crit[i].pass) ++failures;
    std::printf("criterion %2d [%s]: %-32s — %s\n", i + 1, crit[i].pass ? "PASS" : "FAIL",
                kNames[i], crit[i].detail.c_str());
  }
  std::printf("%d/10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
