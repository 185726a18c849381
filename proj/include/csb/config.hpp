#pragma once

// Run configuration: one JSON document with an explicit schema version.
// Every key is optional (defaults below) but unknown keys are rejected, and
// the whole document is validated before any command starts work.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "csb/consistency.hpp"
#include "csb/error.hpp"
#include "csb/metrics.hpp"
#include "csb/net.hpp"
#include "csb/schedule.hpp"
#include "csb/toy.hpp"

namespace csb {

inline constexpr int kSchemaVersion = 1;

enum class LrSchedule { Constant, Cosine };

struct RunConfig {
  std::uint64_t seed = 0;

  struct {
    double beta0 = 0.1;
    double beta1 = 20.0;
    bool drift_uses_beta_squared = true;
  } schedule;

  struct {
    std::size_t n_steps = 120;
    double t_min = 0.001;
    double t_max = 0.999;
  } grid;

  struct {
    std::size_t width = 128;
    std::size_t depth = 4;
    std::size_t time_embed = 32;
    double sigma_data = 0.5;
    double ema_decay = 0.999;
    TimeInput time_input = TimeInput::LogVarianceRatio;
    bool center_input = true;
  } model;

  struct {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t batch_size = 16;
    std::size_t steps = 5000;
    LrSchedule lr_schedule = LrSchedule::Constant;
  } optimizer;

  struct {
    Distance distance = Distance::SquaredL2;
    double huber_c = 0.03;
    Coupling coupling = Coupling::SharedNoise;
    bool boundary_shift = true;
  } loss;

  struct {
    ToySpec spec;
    std::size_t train_size = 20000;
  } toy;

  struct {
    std::size_t count = 4096;
    bool use_target = false;
  } sampling;

  struct {
    LreMode lre_mode = LreMode::Decibel;
    std::string system = "csb";
  } metrics;

  struct {
    bool mask_same_side = true;
  } spatial;

  struct {
    std::string out_dir = "out";
  } io;

  NoiseSchedule make_schedule() const { return NoiseSchedule(schedule.beta0, schedule.beta1); }
  TimeGrid make_time_grid() const { return TimeGrid(grid.n_steps, grid.t_min, grid.t_max); }

  MlpShape mlp_shape() const {
    const std::size_t d = toy.spec.dim();
    return {d, model.time_embed, d, model.width, model.depth};
  }

  ConsistencyOptions consistency_options() const {
    ConsistencyOptions o;
    o.distance = loss.distance;
    o.huber_c = loss.huber_c;
    o.coupling = loss.coupling;
    o.boundary_shift = loss.boundary_shift;
    o.sample_with_target = sampling.use_target;
    o.time_input = model.time_input;
    o.center_input = model.center_input;
    return o;
  }

  double lr_at(std::size_t step) const {
    return optimizer.lr_schedule == LrSchedule::Cosine ? cosine_lr(optimizer.lr, step, optimizer.steps)
                                                       : optimizer.lr;
  }
};

namespace detail {

using nlohmann::json;

// Walks one JSON object, handing out typed fields and remembering which keys
// were consumed so leftovers can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<std::int64_t>() < 0)) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(where(key) + ": wrong type (" + std::string(v.type_name()) + ")");
    }
  }

  template <class E>
  void get_enum(const char* key, E& out, std::initializer_list<std::pair<const char*, E>> names) {
    if (!j_.contains(key)) {
      seen_.insert(key);
      return;
    }
    std::string s;
    get(key, s);
    for (const auto& [name, value] : names) {
      if (s == name) {
        out = value;
        return;
      }
    }
    std::string allowed;
    for (const auto& n : names) allowed += std::string(allowed.empty() ? "" : ", ") + n.first;
    throw ConfigError(where(key) + ": unknown value \"" + s + "\" (expected one of " + allowed + ")");
  }

  Section child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, where(key));
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown key");
    }
  }

  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& where, const std::string& what) {
  if (!ok) throw ConfigError(where + ": " + what);
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  using detail::require;
  require(c.schedule.beta0 > 0.0 && c.schedule.beta1 > 0.0, "schedule", "beta0 and beta1 must be > 0");
  require(c.grid.n_steps >= 1, "grid.n_steps", "must be >= 1");
  require(c.grid.t_min > 0.0, "grid.t_min", "must be > 0");
  require(c.grid.t_max < 1.0, "grid.t_max", "must be < 1 (the bridge variance vanishes at t = 1)");
  require(c.grid.t_min < c.grid.t_max, "grid", "t_min must be < t_max");
  require(c.model.width >= 1 && c.model.depth >= 1, "model", "width and depth must be >= 1");
  require(c.model.time_embed >= 2 && c.model.time_embed % 2 == 0, "model.time_embed", "must be even and >= 2");
  require(c.model.sigma_data > 0.0, "model.sigma_data", "must be > 0");
  require(c.model.ema_decay >= 0.0 && c.model.ema_decay < 1.0, "model.ema_decay", "must be in [0, 1)");
  require(c.optimizer.lr >= 0.0, "optimizer.lr", "must be >= 0");
  require(c.optimizer.beta1 >= 0.0 && c.optimizer.beta1 < 1.0, "optimizer.beta1", "must be in [0, 1)");
  require(c.optimizer.beta2 >= 0.0 && c.optimizer.beta2 < 1.0, "optimizer.beta2", "must be in [0, 1)");
  require(c.optimizer.eps > 0.0, "optimizer.eps", "must be > 0");
  require(c.optimizer.batch_size >= 1, "optimizer.batch_size", "must be >= 1");
  require(c.optimizer.steps >= 1, "optimizer.steps", "must be >= 1");
  require(c.loss.huber_c > 0.0, "loss.huber_c", "must be > 0");
  const auto& spec = c.toy.spec;
  require(spec.means.size() == 2, "toy.means", "exactly two component means are required");
  require(!spec.means[0].empty() && spec.means[0].size() == spec.means[1].size(), "toy.means",
          "means must be nonempty and of equal dimension");
  require(spec.stddev > 0.0, "toy.stddev", "must be > 0");
  require(spec.weight0 >= 0.0 && spec.weight0 <= 1.0, "toy.weight0", "must be in [0, 1]");
  require(c.toy.train_size >= 1, "toy.train_size", "must be >= 1");
  require(c.sampling.count >= 1, "sampling.count", "must be >= 1");
}

inline RunConfig parse_config(const nlohmann::json& j) {
  RunConfig c;
  detail::Section root(j, "");
  int version = -1;
  root.get("schema_version", version);
  if (!j.contains("schema_version")) throw ConfigError("schema_version: missing");
  if (version != kSchemaVersion) {
    throw ConfigError("schema_version: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kSchemaVersion) + ")");
  }
  root.get("seed", c.seed);

  auto s = root.child("schedule");
  s.get("beta0", c.schedule.beta0);
  s.get("beta1", c.schedule.beta1);
  s.get("drift_uses_beta_squared", c.schedule.drift_uses_beta_squared);
  s.finish();

  auto g = root.child("grid");
  g.get("n_steps", c.grid.n_steps);
  g.get("t_min", c.grid.t_min);
  g.get("t_max", c.grid.t_max);
  g.finish();

  auto m = root.child("model");
  m.get("width", c.model.width);
  m.get("depth", c.model.depth);
  m.get("time_embed", c.model.time_embed);
  m.get("sigma_data", c.model.sigma_data);
  m.get("ema_decay", c.model.ema_decay);
  m.get_enum("time_input", c.model.time_input,
             {{"raw", TimeInput::Raw}, {"log_variance_ratio", TimeInput::LogVarianceRatio}});
  m.get("center_input", c.model.center_input);
  m.finish();

  auto o = root.child("optimizer");
  o.get("lr", c.optimizer.lr);
  o.get("beta1", c.optimizer.beta1);
  o.get("beta2", c.optimizer.beta2);
  o.get("eps", c.optimizer.eps);
  o.get("batch_size", c.optimizer.batch_size);
  o.get("steps", c.optimizer.steps);
  o.get_enum("lr_schedule", c.optimizer.lr_schedule,
             {{"constant", LrSchedule::Constant}, {"cosine", LrSchedule::Cosine}});
  o.finish();

  auto l = root.child("loss");
  l.get_enum("distance", c.loss.distance,
             {{"squared_l2", Distance::SquaredL2}, {"pseudo_huber", Distance::PseudoHuber}});
  l.get("huber_c", c.loss.huber_c);
  l.get_enum("coupling", c.loss.coupling,
             {{"shared_noise", Coupling::SharedNoise}, {"heun_step", Coupling::HeunStep}});
  l.get("boundary_shift", c.loss.boundary_shift);
  l.finish();

  auto t = root.child("toy");
  if (t.has("means")) {
    const auto& means = t.raw("means");
    try {
      c.toy.spec.means = means.get<std::vector<Vec>>();
    } catch (const std::exception&) {
      throw ConfigError("toy.means: expected a list of numeric vectors");
    }
  }
  t.get("stddev", c.toy.spec.stddev);
  t.get("weight0", c.toy.spec.weight0);
  t.get("train_size", c.toy.train_size);
  t.finish();

  auto sm = root.child("sampling");
  sm.get("count", c.sampling.count);
  sm.get("use_target", c.sampling.use_target);
  sm.finish();

  auto mt = root.child("metrics");
  mt.get_enum("lre_mode", c.metrics.lre_mode, {{"db", LreMode::Decibel}, {"linear", LreMode::LinearRatio}});
  mt.get("system", c.metrics.system);
  mt.finish();

  auto sp = root.child("spatial");
  sp.get("mask_same_side", c.spatial.mask_same_side);
  sp.finish();

  auto io = root.child("io");
  io.get("out_dir", c.io.out_dir);
  io.finish();

  root.finish();
  validate(c);
  return c;
}

inline RunConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("parse error at byte ") + std::to_string(e.byte) + ": " + e.what());
  }
  return parse_config(j);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Canonical JSON form of a config (all fields, defaults filled in).
inline nlohmann::json to_json(const RunConfig& c) {
  auto name = [](auto v, std::initializer_list<std::pair<decltype(v), const char*>> names) {
    for (const auto& [k, n] : names)
      if (k == v) return std::string(n);
    return std::string("?");
  };
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["seed"] = c.seed;
  j["schedule"] = {{"beta0", c.schedule.beta0},
                   {"beta1", c.schedule.beta1},
                   {"drift_uses_beta_squared", c.schedule.drift_uses_beta_squared}};
  j["grid"] = {{"n_steps", c.grid.n_steps}, {"t_min", c.grid.t_min}, {"t_max", c.grid.t_max}};
  j["model"] = {{"width", c.model.width},
                {"depth", c.model.depth},
                {"time_embed", c.model.time_embed},
                {"sigma_data", c.model.sigma_data},
                {"ema_decay", c.model.ema_decay},
                {"time_input", name(c.model.time_input, {{TimeInput::Raw, "raw"},
                                                         {TimeInput::LogVarianceRatio, "log_variance_ratio"}})},
                {"center_input", c.model.center_input}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"batch_size", c.optimizer.batch_size},
                    {"steps", c.optimizer.steps},
                    {"lr_schedule", name(c.optimizer.lr_schedule,
                                         {{LrSchedule::Constant, "constant"}, {LrSchedule::Cosine, "cosine"}})}};
  j["loss"] = {{"distance", name(c.loss.distance, {{Distance::SquaredL2, "squared_l2"},
                                                   {Distance::PseudoHuber, "pseudo_huber"}})},
               {"huber_c", c.loss.huber_c},
               {"coupling", name(c.loss.coupling, {{Coupling::SharedNoise, "shared_noise"},
                                                   {Coupling::HeunStep, "heun_step"}})},
               {"boundary_shift", c.loss.boundary_shift}};
  j["toy"] = {{"means", c.toy.spec.means},
              {"stddev", c.toy.spec.stddev},
              {"weight0", c.toy.spec.weight0},
              {"train_size", c.toy.train_size}};
  j["sampling"] = {{"count", c.sampling.count}, {"use_target", c.sampling.use_target}};
  j["metrics"] = {{"lre_mode", name(c.metrics.lre_mode, {{LreMode::Decibel, "db"}, {LreMode::LinearRatio, "linear"}})},
                  {"system", c.metrics.system}};
  j["spatial"] = {{"mask_same_side", c.spatial.mask_same_side}};
  j["io"] = {{"out_dir", c.io.out_dir}};
  return j;
}

/// FNV-1a over the canonical JSON dump, as 16 hex digits.
inline std::string config_hash(const RunConfig& c) {
  const std::string text = to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream ss;
  ss << std::hex;
  ss.width(16);
  ss.fill('0');
  ss << h;
  return ss.str();
}

}  // namespace csb
