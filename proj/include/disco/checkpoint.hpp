#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "disco/adam.hpp"
#include "disco/disco.hpp"
#include "disco/prior.hpp"
#include "disco/rng.hpp"
#include "disco/tensor.hpp"

namespace disco {

namespace detail {

inline const char* kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const unsigned char* data, std::size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    std::uint32_t v = data[i] << 16;
    if (i + 1 < n) v |= data[i + 1] << 8;
    if (i + 2 < n) v |= data[i + 2];
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back(i + 1 < n ? kB64[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < n ? kB64[v & 63] : '=');
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& s) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    if (c == '=') return -1;
    throw std::invalid_argument("checkpoint: invalid base64 character");
  };
  if (s.size() % 4 != 0) throw std::invalid_argument("checkpoint: base64 length not 4-aligned");
  std::vector<unsigned char> out;
  out.reserve(s.size() / 4 * 3);
  for (std::size_t i = 0; i < s.size(); i += 4) {
    int a = val(s[i]), b = val(s[i + 1]), c = val(s[i + 2]), d = val(s[i + 3]);
    if (a < 0 || b < 0) throw std::invalid_argument("checkpoint: malformed base64 block");
    std::uint32_t v = (static_cast<std::uint32_t>(a) << 18) | (static_cast<std::uint32_t>(b) << 12);
    if (c >= 0) v |= static_cast<std::uint32_t>(c) << 6;
    if (d >= 0) v |= static_cast<std::uint32_t>(d);
    out.push_back((v >> 16) & 0xff);
    if (c >= 0) out.push_back((v >> 8) & 0xff);
    if (d >= 0) out.push_back(v & 0xff);
  }
  return out;
}

// doubles <-> base64 of their little-endian bytes
inline std::string encode_doubles(const std::vector<double>& v) {
  std::vector<unsigned char> bytes(v.size() * 8);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &v[i], 8);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = (bits >> (8 * b)) & 0xff;
  }
  return base64_encode(bytes.data(), bytes.size());
}

inline std::vector<double> decode_doubles(const std::string& s) {
  std::vector<unsigned char> bytes = base64_decode(s);
  if (bytes.size() % 8 != 0) throw std::invalid_argument("checkpoint: array bytes not 8-aligned");
  std::vector<double> v(bytes.size() / 8);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    std::memcpy(&v[i], &bits, 8);
  }
  return v;
}

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", encode_doubles(t.vec())}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  std::vector<std::size_t> shape = j.at("shape").get<std::vector<std::size_t>>();
  return Tensor(std::move(shape), decode_doubles(j.at("data").get<std::string>()));
}

inline nlohmann::json params_to_json(const ParamMap& p) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, t] : p) j[name] = tensor_to_json(t);
  return j;
}

inline ParamMap params_from_json(const nlohmann::json& j) {
  ParamMap p;
  for (auto it = j.begin(); it != j.end(); ++it) p[it.key()] = tensor_from_json(it.value());
  return p;
}

}  // namespace detail

constexpr int kCheckpointVersion = 1;

// Full first-stage training state: model, optimizer, data-stream rng, step.
struct Checkpoint {
  std::string config_hash;
  ModelConfig mc;
  ParamMap params;
  AdamState opt;
  std::string rng_state;
  long step = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format_version"] = kCheckpointVersion;
    j["kind"] = "model";
    j["config_hash"] = config_hash;
    j["model"] = {{"m", mc.m},
                  {"k", mc.k},
                  {"hidden", mc.hidden},
                  {"time_dim", mc.time_dim},
                  {"sigma1", mc.sigma1}};
    j["params"] = detail::params_to_json(params);
    j["opt"] = {{"lr", opt.lr},       {"beta1", opt.beta1},
                {"beta2", opt.beta2}, {"eps", opt.eps},
                {"step", opt.step},   {"clip_norm", opt.clip_norm},
                {"m", detail::params_to_json(opt.m)},
                {"v", detail::params_to_json(opt.v)}};
    j["rng_state"] = rng_state;
    j["step"] = step;
    return j;
  }

  static Checkpoint from_json(const nlohmann::json& j) {
    if (j.at("format_version").get<int>() != kCheckpointVersion)
      throw std::invalid_argument("checkpoint: unsupported format version");
    if (j.at("kind").get<std::string>() != "model")
      throw std::invalid_argument("checkpoint: not a model checkpoint");
    Checkpoint c;
    c.config_hash = j.at("config_hash").get<std::string>();
    const auto& m = j.at("model");
    c.mc.m = m.at("m").get<int>();
    c.mc.k = m.at("k").get<int>();
    c.mc.hidden = m.at("hidden").get<int>();
    c.mc.time_dim = m.at("time_dim").get<int>();
    c.mc.sigma1 = m.at("sigma1").get<double>();
    c.params = detail::params_from_json(j.at("params"));
    const auto& o = j.at("opt");
    c.opt.lr = o.at("lr").get<double>();
    c.opt.beta1 = o.at("beta1").get<double>();
    c.opt.beta2 = o.at("beta2").get<double>();
    c.opt.eps = o.at("eps").get<double>();
    c.opt.step = o.at("step").get<long>();
    c.opt.clip_norm = o.at("clip_norm").get<double>();
    c.opt.m = detail::params_from_json(o.at("m"));
    c.opt.v = detail::params_from_json(o.at("v"));
    c.rng_state = j.at("rng_state").get<std::string>();
    c.step = j.at("step").get<long>();
    return c;
  }

  DiscoModel model() const {
    DiscoModel model;
    model.mc = mc;
    model.params = params;
    return model;
  }
};

// Second-stage prior checkpoint.
struct PriorCheckpoint {
  std::string config_hash;
  int m = 1;
  int k = 8;
  int hidden = 32;
  ParamMap params;

  nlohmann::json to_json() const {
    return {{"format_version", kCheckpointVersion},
            {"kind", "prior"},
            {"config_hash", config_hash},
            {"m", m},
            {"k", k},
            {"hidden", hidden},
            {"params", detail::params_to_json(params)}};
  }

  static PriorCheckpoint from_json(const nlohmann::json& j) {
    if (j.at("format_version").get<int>() != kCheckpointVersion)
      throw std::invalid_argument("checkpoint: unsupported format version");
    if (j.at("kind").get<std::string>() != "prior")
      throw std::invalid_argument("checkpoint: not a prior checkpoint");
    PriorCheckpoint c;
    c.config_hash = j.at("config_hash").get<std::string>();
    c.m = j.at("m").get<int>();
    c.k = j.at("k").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.params = detail::params_from_json(j.at("params"));
    return c;
  }

  LatentPrior prior() const {
    LatentPrior p;
    p.m = m;
    p.k = k;
    p.hidden = hidden;
    p.params = params;
    return p;
  }
};

template <typename Ckpt>
inline void save_checkpoint(const Ckpt& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out << c.to_json().dump(1) << "\n";
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

template <typename Ckpt>
inline Ckpt load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return Ckpt::from_json(j);
}

}  // namespace disco
