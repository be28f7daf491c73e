#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "disco/diffusion.hpp"
#include "disco/disco.hpp"
#include "disco/mixture.hpp"

namespace disco {

// Flat key=value run configuration; one experiment end to end.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string arm = "disco";  // disco | baseline

  // dataset
  std::size_t n_per_component = 1000;
  double sigma1 = 0.2;

  // model
  int m = 1;
  int k = 8;
  int hidden = 64;
  int time_dim = 16;

  // training
  std::size_t train_steps = 4000;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  double clip_norm = 0.0;
  double tau_train = 0.3;
  double tau_extract = 0.01;
  double p_drop = 0.02;
  double balance_weight = 16.0;
  double h_decay = 1e-4;

  // prior
  int prior_hidden = 32;
  std::size_t prior_steps = 2000;
  double prior_lr = 1e-2;

  // diffusion
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
  double p_mean = -2.0;
  double p_std = 1.2;
  double p_mean_hi = 1.4;
  double p_hi = 0.85;
  double sigma_data = 2.16;

  // sampling
  std::size_t n_samples = 8000;
  std::size_t n_steps = 50;
  double w_cfg = 1.0;

  void validate() const {
    if (arm != "disco" && arm != "baseline")
      throw std::invalid_argument("config: arm must be disco or baseline");
    if (n_per_component == 0) throw std::invalid_argument("config: n_per_component must be > 0");
    if (sigma1 <= 0.0) throw std::invalid_argument("config: sigma1 must be positive");
    if (m < 1 || k < 2) throw std::invalid_argument("config: need m >= 1 and k >= 2");
    if (hidden < 1 || time_dim < 1) throw std::invalid_argument("config: bad network widths");
    if (batch_size == 0) throw std::invalid_argument("config: batch_size must be > 0");
    if (lr <= 0.0 || prior_lr <= 0.0) throw std::invalid_argument("config: lr must be positive");
    if (tau_train <= 0.0 || tau_extract <= 0.0)
      throw std::invalid_argument("config: temperatures must be positive");
    if (p_drop < 0.0 || p_drop > 1.0) throw std::invalid_argument("config: p_drop in [0,1]");
    if (balance_weight < 0.0 || h_decay < 0.0)
      throw std::invalid_argument("config: penalty weights must be >= 0");
    if (n_steps < 2) throw std::invalid_argument("config: n_steps must be >= 2");
    diffusion().validate();
    mixture().validate();
  }

  DiffusionConfig diffusion() const {
    DiffusionConfig d;
    d.sigma_min = sigma_min;
    d.sigma_max = sigma_max;
    d.rho = rho;
    d.p_mean = p_mean;
    d.p_std = p_std;
    d.p_mean_hi = p_mean_hi;
    d.p_hi = p_hi;
    d.sigma_data = sigma_data;
    return d;
  }

  ModelConfig model() const {
    ModelConfig mc;
    mc.m = m;
    mc.k = k;
    mc.hidden = hidden;
    mc.time_dim = time_dim;
    mc.sigma1 = sigma1;
    return mc;
  }

  MixtureSpec mixture() const {
    MixtureSpec spec = default_mixture();
    spec.sigma1 = sigma1;
    return spec;
  }

  TrainSettings training() const {
    TrainSettings ts;
    ts.tau_train = tau_train;
    ts.p_drop = p_drop;
    ts.batch_size = batch_size;
    ts.lr = lr;
    ts.clip_norm = clip_norm;
    ts.balance_weight = balance_weight;
    ts.h_decay = h_decay;
    ts.baseline = arm == "baseline";
    return ts;
  }

 private:
  template <typename F>
  void each_field(F&& f) {
    f("seed", seed);
    f("arm", arm);
    f("n_per_component", n_per_component);
    f("sigma1", sigma1);
    f("m", m);
    f("k", k);
    f("hidden", hidden);
    f("time_dim", time_dim);
    f("train_steps", train_steps);
    f("batch_size", batch_size);
    f("lr", lr);
    f("clip_norm", clip_norm);
    f("tau_train", tau_train);
    f("tau_extract", tau_extract);
    f("p_drop", p_drop);
    f("balance_weight", balance_weight);
    f("h_decay", h_decay);
    f("prior_hidden", prior_hidden);
    f("prior_steps", prior_steps);
    f("prior_lr", prior_lr);
    f("sigma_min", sigma_min);
    f("sigma_max", sigma_max);
    f("rho", rho);
    f("p_mean", p_mean);
    f("p_std", p_std);
    f("p_mean_hi", p_mean_hi);
    f("p_hi", p_hi);
    f("sigma_data", sigma_data);
    f("n_samples", n_samples);
    f("n_steps", n_steps);
    f("w_cfg", w_cfg);
  }

  static void parse_into(const std::string& text, std::uint64_t& out) { out = std::stoull(text); }
  static void parse_into(const std::string& text, int& out) { out = std::stoi(text); }
  static void parse_into(const std::string& text, double& out) { out = std::stod(text); }
  static void parse_into(const std::string& text, std::string& out) { out = text; }

  static std::string render(std::uint64_t v) { return std::to_string(v); }
  static std::string render(int v) { return std::to_string(v); }
  static std::string render(const std::string& v) { return v; }
  static std::string render(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  }

 public:
  // One assignment: "key = value". Unknown keys are rejected.
  void set(const std::string& key, const std::string& text) {
    bool found = false;
    each_field([&](const char* name, auto& field) {
      if (key != name) return;
      found = true;
      try {
        parse_into(text, field);
      } catch (const std::exception&) {
        throw std::invalid_argument("config: bad value for " + key + ": '" + text + "'");
      }
    });
    if (!found) throw std::invalid_argument("config: unknown key '" + key + "'");
  }

  static RunConfig parse(std::istream& in) {
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      std::string t = trim(line);
      if (t.empty()) continue;
      auto eq = t.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                    " is not key = value");
      cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    return parse(in);
  }

  // Effective config as reloadable key=value text, echoed into artifacts.
  std::string dump() const {
    std::ostringstream os;
    const_cast<RunConfig*>(this)->each_field(
        [&](const char* name, auto& field) { os << name << " = " << render(field) << "\n"; });
    return os.str();
  }

  // FNV-1a of the dump: cheap provenance fingerprint, not cryptographic.
  std::string hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : dump()) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

}  // namespace disco
