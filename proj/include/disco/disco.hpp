#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "disco/adam.hpp"
#include "disco/diffusion.hpp"
#include "disco/mixture.hpp"
#include "disco/rng.hpp"
#include "disco/tape.hpp"

namespace disco {

// Standalone Gumbel-Softmax draw: softmax((logits + g)/tau).
inline std::vector<double> gumbel_softmax(const std::vector<double>& logits, double tau,
                                          Rng& rng) {
  if (tau <= 0.0) throw std::invalid_argument("gumbel_softmax: tau must be positive");
  std::vector<double> y(logits.size());
  double mx = -INFINITY;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    y[i] = (logits[i] + rng.gumbel()) / tau;
    mx = std::max(mx, y[i]);
  }
  double s = 0.0;
  for (double& v : y) {
    v = std::exp(v - mx);
    s += v;
  }
  for (double& v : y) v /= s;
  return y;
}

struct LatentSample {
  std::vector<int> hard;                       // m indices
  std::vector<std::vector<double>> relaxed;    // m simplex rows of length k
  double tau = 1.0;
};

// Encoder logits for one clean point: m rows of k.
inline std::vector<std::vector<double>> encoder_logits(const DiscoModel& model, Vec2 y) {
  std::vector<double> h = detail::mlp_forward(model, "E", 2, {y[0], y[1]});
  // trunk output still needs the SiLU the per-head affine expects
  for (double& v : h) {
    double sg = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    v *= sg;
  }
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(model.mc.m));
  for (int i = 0; i < model.mc.m; ++i) {
    const Tensor& w = model.p("E.head" + std::to_string(i) + ".w");
    const Tensor& b = model.p("E.head" + std::to_string(i) + ".b");
    std::vector<double> logits(w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = b[j];
      for (std::size_t a = 0; a < h.size(); ++a) s += h[a] * w(a, j);
      logits[j] = s;
    }
    rows[static_cast<std::size_t>(i)] = std::move(logits);
  }
  return rows;
}

inline LatentSample encode(const DiscoModel& model, Vec2 y, double tau, Rng& rng) {
  LatentSample out;
  out.tau = tau;
  auto rows = encoder_logits(model, y);
  for (auto& logits : rows) {
    std::vector<double> relaxed = gumbel_softmax(logits, tau, rng);
    int arg = static_cast<int>(std::max_element(relaxed.begin(), relaxed.end()) -
                               relaxed.begin());
    out.hard.push_back(arg);
    out.relaxed.push_back(std::move(relaxed));
  }
  return out;
}

// Deterministic hard latent (argmax of logits, no Gumbel noise).
inline std::vector<int> encode_argmax(const DiscoModel& model, Vec2 y) {
  std::vector<int> z;
  for (auto& logits : encoder_logits(model, y))
    z.push_back(static_cast<int>(std::max_element(logits.begin(), logits.end()) -
                                 logits.begin()));
  return z;
}

// Classifier-free guidance: D~ = w * D(x,t,z) + (1-w) * D(x,t,null).
inline Vec2 cfg_denoise(const DiscoModel& model, Vec2 x, double t, const std::vector<int>& z,
                        double w) {
  Vec2 dc = denoise(model, x, t, z);
  if (w == 1.0) return dc;
  Vec2 du = denoise(model, x, t, std::nullopt);
  return w * dc + (1.0 - w) * du;
}

// One mini-batch with all randomness materialized, so the Eq.-3 graph is a
// deterministic function of the parameters (used for both training and
// gradient checks with frozen noise).
struct JointBatch {
  Tensor y;                              // (B,2) clean
  Tensor x_noisy;                        // (B,2) perturbed
  std::vector<double> sigma;             // per-sample noise level
  std::vector<Tensor> gumbel;            // per latent dim: (B,k) Gumbel draws
  std::vector<bool> dropped;             // per-sample null substitution
  double tau = 1.0;
};

inline JointBatch make_joint_batch(const DiscoModel& model, const Dataset& data,
                                   const DiffusionConfig& dcfg, std::size_t batch_size,
                                   double tau, double p_drop, bool baseline, Rng& rng) {
  std::size_t n = data.points.rows();
  if (n == 0) throw std::invalid_argument("make_joint_batch: empty dataset");
  JointBatch jb;
  jb.tau = tau;
  jb.y = Tensor::zeros({batch_size, kDataDim});
  jb.x_noisy = Tensor::zeros({batch_size, kDataDim});
  jb.sigma.resize(batch_size);
  jb.dropped.resize(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::size_t idx = rng.index(n);
    jb.y(i, 0) = data.points(idx, 0);
    jb.y(i, 1) = data.points(idx, 1);
    jb.sigma[i] = sample_training_sigma(dcfg, rng);
    jb.x_noisy(i, 0) = jb.y(i, 0) + jb.sigma[i] * rng.normal();
    jb.x_noisy(i, 1) = jb.y(i, 1) + jb.sigma[i] * rng.normal();
    jb.dropped[i] = baseline || rng.uniform() < p_drop;
  }
  for (int d = 0; d < model.mc.m; ++d) {
    Tensor g = Tensor::zeros({batch_size, static_cast<std::size_t>(model.mc.k)});
    for (double& v : g.vec()) v = rng.gumbel();
    jb.gumbel.push_back(std::move(g));
  }
  return jb;
}

// Eq.-3 loss graph for one batch: relaxed latents mix codebook rows so the
// gradient reaches the encoder; dropped samples use the null embedding.
inline Value build_joint_loss(Tape& tape, TapeModel& tm, const JointBatch& jb,
                              const DiffusionConfig& dcfg, double balance_weight = 0.0,
                              double h_decay = 0.0) {
  const ModelConfig& mc = *tm.mc;
  std::size_t b = jb.y.rows();

  Tensor keep = Tensor::zeros({b, kDataDim});
  Tensor drop = Tensor::zeros({b, kDataDim});
  bool any_kept = false;
  for (std::size_t i = 0; i < b; ++i) {
    double kv = jb.dropped[i] ? 0.0 : 1.0;
    keep(i, 0) = keep(i, 1) = kv;
    drop(i, 0) = drop(i, 1) = 1.0 - kv;
    any_kept = any_kept || !jb.dropped[i];
  }

  Value ones = tape.constant(Tensor::full({b, 1}, 1.0));
  Value null_acc{};
  for (int d = 0; d < mc.m; ++d) {
    Value row = tape.matmul(ones, tm.at("null." + std::to_string(d)));
    null_acc = d == 0 ? row : tape.add(null_acc, row);
  }
  Value null_rows = tape.scale(null_acc, 1.0 / mc.m);

  Value fbar{};
  Value balance{};
  bool has_balance = false;
  if (any_kept) {
    Value h = tape.constant(jb.y);
    h = tape.silu(tape.affine(h, tm.at("E.w0"), tm.at("E.b0")));
    h = tape.silu(tape.affine(h, tm.at("E.w1"), tm.at("E.b1")));

    Value enc_acc{};
    for (int d = 0; d < mc.m; ++d) {
      std::string head = "E.head" + std::to_string(d);
      Value logits = tape.affine(h, tm.at(head + ".w"), tm.at(head + ".b"));
      Value relaxed = tape.softmax(tape.scale(
          tape.add(logits, tape.constant(jb.gumbel[static_cast<std::size_t>(d)])),
          1.0 / jb.tau));
      Value emb = tape.matmul(relaxed, tm.at("F." + std::to_string(d)));
      enc_acc = d == 0 ? emb : tape.add(enc_acc, emb);
      if (balance_weight > 0.0) {
        // code-usage balance: mean relaxed assignment pulled toward uniform,
        // the true usage for equally weighted modes; prevents dead codes
        Value mean_p = tape.matmul(tape.constant(Tensor::full({1, b}, 1.0 / b)), relaxed);
        Value dev = tape.sub(mean_p, tape.constant(Tensor::full(
                                         {1, static_cast<std::size_t>(mc.k)}, 1.0 / mc.k)));
        Value pen = tape.squared_l2(dev);
        balance = has_balance ? tape.add(balance, pen) : pen;
        has_balance = true;
      }
    }
    Value enc_rows = tape.scale(enc_acc, 1.0 / mc.m);
    fbar = tape.add(tape.mul(enc_rows, tape.constant(keep)),
                    tape.mul(null_rows, tape.constant(drop)));
  } else {
    fbar = null_rows;
  }

  Value xv = tape.constant(jb.x_noisy);
  Value loss = dsm_loss_batch(tm, dcfg, xv, jb.y, jb.sigma, fbar);
  if (has_balance) loss = tape.add(loss, tape.scale(balance, balance_weight / mc.m));
  if (h_decay > 0.0) {
    // L2 on the correction head; its ideal conditional contribution is zero,
    // so decay damps untrained wobble without biasing the F path
    Value reg{};
    for (int l = 0; l < 4; ++l) {
      Value w = tape.squared_l2(tm.at("H.w" + std::to_string(l)));
      reg = l == 0 ? w : tape.add(reg, w);
    }
    loss = tape.add(loss, tape.scale(reg, h_decay));
  }
  return loss;
}

struct TrainSettings {
  double tau_train = 1.0;
  double p_drop = 0.1;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  double clip_norm = 0.0;       // gradient NaN guard, off by default
  double balance_weight = 0.0;  // code-usage balance penalty (see build_joint_loss)
  double h_decay = 0.0;         // L2 weight decay on the correction head H
  bool baseline = false;        // latents always null, encoder untouched
};

struct TrainState {
  DiscoModel model;
  AdamState opt;
  long step = 0;
};

// One Alg.-1 step: encode relaxed latents, drop to null per sample, Eq.-3
// loss, joint Adam update of theta and phi. Returns the loss value.
inline double joint_train_step(TrainState& ts, const Dataset& data,
                               const DiffusionConfig& dcfg, const TrainSettings& set,
                               Rng& rng) {
  JointBatch jb = make_joint_batch(ts.model, data, dcfg, set.batch_size, set.tau_train,
                                   set.p_drop, set.baseline, rng);
  Tape tape;
  TapeModel tm = TapeModel::lift(tape, ts.model);
  Value loss = build_joint_loss(tape, tm, jb, dcfg, set.baseline ? 0.0 : set.balance_weight,
                                set.h_decay);
  tape.backward(loss);
  GradMap grads = tm.grads();

  ts.opt.lr = set.lr;
  ts.opt.clip_norm = set.clip_norm;
  adam_step(ts.opt, ts.model.params, grads);
  ts.step += 1;
  return loss.scalar();
}

}  // namespace disco
