#pragma once

// Batch commands behind the csb CLI. Each returns a process exit code:
// 0 success, 1 check or metric failure, 2 usage or config error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "csb/config.hpp"
#include "csb/consistency.hpp"
#include "csb/dsp.hpp"
#include "csb/metrics.hpp"
#include "csb/net.hpp"
#include "csb/selftest.hpp"
#include "csb/toy.hpp"

namespace csb {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::json check_json(const CheckResult& c) {
  return {{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"tolerance", c.tolerance}, {"detail", c.detail}};
}

// Paper choices this implementation had to fill in or replace; recorded in run metadata.
inline nlohmann::json substitutions(const RunConfig& c) {
  const auto j = to_json(c);
  return {
      {"distance", j["loss"]["distance"]},
      {"lambda", "constant 1 for every t_n"},
      {"schedule", "linear beta(t) from " + fmt17(c.schedule.beta0) + " to " + fmt17(c.schedule.beta1)},
      {"pf_drift_coefficient", c.schedule.drift_uses_beta_squared ? "beta^2" : "beta"},
      {"base_drift", "zero"},
      {"coupling", j["loss"]["coupling"]},
      {"boundary_scalings", c.loss.boundary_shift ? "cap_sigma2 shifted by cap_sigma2(t_min)" : "unshifted"},
      {"network", "conditioned SiLU MLP"},
      {"network_time_input", j["model"]["time_input"]},
      {"network_state_input", c.model.center_input ? "standardized bridge residual" : "raw x_t"},
      {"lr_schedule", j["optimizer"]["lr_schedule"]},
      {"training_steps", "desk scale " + std::to_string(c.optimizer.steps) + " (paper: 800000)"},
  };
}

}  // namespace detail

// ---------------------------------------------------------------- selftest

inline std::vector<CheckResult> run_bridge_selftest(const RunConfig& cfg) {
  const auto sched = cfg.make_schedule();
  const auto grid = cfg.make_time_grid();
  Rng rng(cfg.seed);
  Rng r0 = rng.split(1), r1 = rng.split(2), r2 = rng.split(3), r3 = rng.split(4);
  std::vector<CheckResult> out;
  out.push_back(check_schedule_closed_form(sched, r0));
  out.push_back(check_pinning(sched, r1));
  out.push_back(check_moments(sched, grid, r2, 4, 5, 20000));
  out.push_back(check_score_oracle(sched, grid, r3, 8, 200));
  for (auto& c : check_ode(cfg.schedule.beta0, grid)) out.push_back(std::move(c));
  return out;
}

inline int cmd_selftest_bridge(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log) {
  const auto checks = run_bridge_selftest(cfg);
  nlohmann::json report;
  bool ok = true;
  for (const auto& c : checks) {
    report["checks"].push_back(detail::check_json(c));
    ok = ok && c.passed;
    log << (c.passed ? "PASS " : "FAIL ") << c.name << " value=" << c.value << " tol=" << c.tolerance << "\n";
  }
  report["passed"] = ok;
  report["config_hash"] = config_hash(cfg);
  detail::write_text(out_dir / "selftest_bridge.json", report.dump(2) + "\n");
  return ok ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------- training

struct ToyRun {
  ConsistencyModel model;
  std::vector<double> losses;
  std::vector<double> wall_ms;
  std::optional<std::string> failure;
};

inline ConsistencyModel make_toy_model(const RunConfig& cfg) {
  Rng init = Rng(cfg.seed).split(1);
  return ConsistencyModel::create(cfg.mlp_shape(), cfg.make_schedule(), cfg.make_time_grid(), cfg.model.sigma_data,
                                  cfg.model.ema_decay, init, cfg.consistency_options());
}

inline std::vector<TrainItem> toy_training_set(const RunConfig& cfg) {
  Rng data = Rng(cfg.seed).split(2);
  return sample_toy(cfg.toy.spec, cfg.toy.train_size, data);
}

/// Deterministic toy training run. `on_step(step, model)` is called after
/// every completed step. A non-finite loss or parameter stops the run and
/// leaves the model at its last good state.
template <class OnStep>
ToyRun train_toy(const RunConfig& cfg, OnStep&& on_step) {
  ToyRun run{make_toy_model(cfg), {}, {}, std::nullopt};
  const auto trainset = toy_training_set(cfg);
  Rng train = Rng(cfg.seed).split(3);
  AdamState opt(run.model.online.size(), cfg.optimizer.lr);
  opt.beta1 = cfg.optimizer.beta1;
  opt.beta2 = cfg.optimizer.beta2;
  opt.eps = cfg.optimizer.eps;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<TrainItem> batch(cfg.optimizer.batch_size);
  for (std::size_t step = 0; step < cfg.optimizer.steps; ++step) {
    for (auto& item : batch) item = trainset[train.index(0, trainset.size() - 1)];
    opt.lr = cfg.lr_at(step);
    const auto online = run.model.online;
    const auto target = run.model.target;
    const auto saved_opt = opt;
    double loss = 0.0;
    try {
      loss = train_step(run.model, batch, opt, train);
    } catch (const TrainingError& e) {
      run.failure = "step " + std::to_string(step) + ": " + e.what();
      break;
    }
    if (!run.model.online.all_finite() || !run.model.target.params.all_finite()) {
      run.model.online = online;
      run.model.target = target;
      opt = saved_opt;
      run.failure = "step " + std::to_string(step) + ": parameters became non-finite";
      break;
    }
    run.losses.push_back(loss);
    run.wall_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    on_step(step, run.model);
  }
  return run;
}

inline ToyRun train_toy(const RunConfig& cfg) {
  return train_toy(cfg, [](std::size_t, const ConsistencyModel&) {});
}

inline int cmd_train_toy(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto run = train_toy(cfg);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::filesystem::create_directories(out_dir);
  save_checkpoint((out_dir / "checkpoint.bin").string(), Checkpoint{run.model.online, run.model.target});
  std::ostringstream csv;
  csv << "step,loss,wall_ms\n";
  for (std::size_t i = 0; i < run.losses.size(); ++i) {
    csv << i << ',' << detail::fmt17(run.losses[i]) << ',' << detail::fmt17(run.wall_ms[i]) << '\n';
  }
  detail::write_text(out_dir / "loss.csv", csv.str());

  nlohmann::json meta;
  meta["command"] = "train-toy";
  meta["config"] = to_json(cfg);
  meta["config_hash"] = config_hash(cfg);
  meta["steps_completed"] = run.losses.size();
  meta["final_loss"] = run.losses.empty() ? nlohmann::json(nullptr) : nlohmann::json(run.losses.back());
  meta["substitutions"] = detail::substitutions(cfg);
  meta["failure"] = run.failure ? nlohmann::json(*run.failure) : nlohmann::json(nullptr);
  meta["wall_clock"] = {{"seconds", wall}, {"note", "wall-clock field, excluded from determinism"}};
  detail::write_text(out_dir / "train_meta.json", meta.dump(2) + "\n");

  if (run.failure) {
    log << "training stopped: " << *run.failure << " (last good checkpoint kept)\n";
    return kExitFailure;
  }
  log << "trained " << run.losses.size() << " steps, final loss " << run.losses.back() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- sampling

inline bool valid_nfe(std::size_t nfe) { return nfe == 1 || nfe == 2 || nfe == 4 || nfe == 8; }

/// Restores a trained model from a checkpoint, checking it against the config.
inline ConsistencyModel model_from_checkpoint(const RunConfig& cfg, const Checkpoint& ck) {
  const MlpShape want = cfg.mlp_shape();
  const MlpShape& got = ck.online.shape();
  if (!(got == want)) {
    throw ConfigError("checkpoint network (x_dim " + std::to_string(got.x_dim) + ", cond_dim " +
                      std::to_string(got.cond_dim) + ", width " + std::to_string(got.width) + ", depth " +
                      std::to_string(got.depth) + ", time_embed " + std::to_string(got.time_embed) +
                      ") does not match the config");
  }
  return ConsistencyModel{ck.online, ck.target, cfg.make_schedule(), cfg.make_time_grid(), cfg.model.sigma_data,
                          cfg.consistency_options()};
}

struct SampleBatch {
  std::vector<std::size_t> component;
  std::vector<Vec> prior;
  std::vector<Vec> samples;
  std::size_t network_evals = 0;
  double wall_seconds = 0.0;
};

/// Draws `count` toy samples with the given NFE. Priors (component means)
/// come from `seed`'s stream 10, sampler noise from stream 11.
inline SampleBatch sample_toy_model(const ConsistencyModel& m, const ToySpec& spec, std::size_t count,
                                    std::size_t nfe, std::uint64_t seed) {
  if (!valid_nfe(nfe)) throw ConfigError("nfe must be one of 1, 2, 4, 8");
  Rng pick = Rng(seed).split(10);
  Rng noise = Rng(seed).split(11);
  SampleBatch out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t k = pick.uniform() < spec.weight0 ? 0 : 1;
    out.component.push_back(k);
    out.prior.push_back(spec.means[k]);
  }
  const auto times = multistep_times(m.grid, nfe);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < count; ++i) {
    const Vec& x1 = out.prior[i];
    auto r = nfe == 1 ? sample_one_step(m, x1, x1, noise.normal_vec(x1.size()))
                      : sample_multistep(m, x1, x1, times, noise);
    if (r.nfe != nfe) throw SamplingError("network evaluation count does not match the requested NFE");
    out.network_evals += r.nfe;
    out.samples.push_back(std::move(r.x0));
  }
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline int cmd_sample(const RunConfig& cfg, const std::filesystem::path& checkpoint, std::size_t nfe,
                      const std::filesystem::path& out_dir, std::ostream& log) {
  if (!valid_nfe(nfe)) throw ConfigError("--nfe must be one of 1, 2, 4, 8");
  const auto model = model_from_checkpoint(cfg, load_checkpoint(checkpoint.string()));
  const auto batch = sample_toy_model(model, cfg.toy.spec, cfg.sampling.count, nfe, cfg.seed);

  std::ostringstream csv;
  const std::size_t dim = cfg.toy.spec.dim();
  csv << "component";
  for (std::size_t k = 0; k < dim; ++k) csv << ",prior_" << k;
  for (std::size_t k = 0; k < dim; ++k) csv << ",x_" << k;
  csv << '\n';
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    csv << batch.component[i];
    for (double v : batch.prior[i]) csv << ',' << detail::fmt17(v);
    for (double v : batch.samples[i]) csv << ',' << detail::fmt17(v);
    csv << '\n';
  }
  std::filesystem::create_directories(out_dir);
  detail::write_text(out_dir / "samples.csv", csv.str());

  const double n = static_cast<double>(batch.samples.size());
  nlohmann::json timing = {
      {"nfe", nfe},
      {"sample_count", batch.samples.size()},
      {"network_evals", batch.network_evals},
      {"network_evals_per_sample", static_cast<double>(batch.network_evals) / n},
      {"wall_seconds", batch.wall_seconds},
      {"seconds_per_sample", batch.wall_seconds / n},
      {"samples_per_second", batch.wall_seconds > 0.0 ? n / batch.wall_seconds : 0.0},
      {"wall_clock_fields", {"wall_seconds", "seconds_per_sample", "samples_per_second"}},
      {"config_hash", config_hash(cfg)},
  };
  detail::write_text(out_dir / "timing.json", timing.dump(2) + "\n");
  log << "wrote " << batch.samples.size() << " samples at NFE " << nfe << " in " << batch.wall_seconds << " s\n";
  return kExitOk;
}

// ---------------------------------------------------------------- evaluation

struct PairResult {
  std::string ref;
  std::string syn;
  std::optional<double> mcd, lre, rte;
  double syn_seconds = 0.0;
  std::vector<std::string> errors;
};

inline PairResult evaluate_pair(const std::string& ref_path, const std::string& syn_path, LreMode mode) {
  PairResult r{ref_path, syn_path, {}, {}, {}, 0.0, {}};
  StereoWaveform ref, syn;
  try {
    ref = read_wav(ref_path);
    syn = read_wav(syn_path);
    if (ref.channel_count() != 2 || syn.channel_count() != 2) throw MetricError("both files must be stereo");
    if (ref.rate != syn.rate) throw MetricError("sample rates differ");
    r.syn_seconds = syn.seconds();
  } catch (const std::exception& e) {
    r.errors.push_back(std::string("read: ") + e.what());
    return r;
  }
  try {
    r.mcd = 0.5 * (mcd(channel_cepstra(ref, 0), channel_cepstra(syn, 0)) +
                   mcd(channel_cepstra(ref, 1), channel_cepstra(syn, 1)));
  } catch (const std::exception& e) {
    r.errors.push_back(std::string("mcd: ") + e.what());
  }
  try {
    r.lre = lre(ref, syn, mode);
  } catch (const std::exception& e) {
    r.errors.push_back(std::string("lre: ") + e.what());
  }
  try {
    // Decay of the summed channel energy, one RT60 per file.
    auto rt = [](const StereoWaveform& w) {
      Vec mono(w.length());
      for (std::size_t i = 0; i < mono.size(); ++i) mono[i] = std::sqrt(0.5 * (w.channels[0][i] * w.channels[0][i] +
                                                                               w.channels[1][i] * w.channels[1][i]));
      return rt60_schroeder(mono, w.rate);
    };
    r.rte = rte(rt(ref), rt(syn));
  } catch (const std::exception& e) {
    r.errors.push_back(std::string("rte: ") + e.what());
  }
  return r;
}

struct EvalTiming {
  double wall_seconds = 0.0;
  std::size_t nfe = 1;
};

inline EvalTiming read_timing(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open timing file");
  try {
    const auto j = nlohmann::json::parse(in);
    return {j.at("wall_seconds").get<double>(), j.at("nfe").get<std::size_t>()};
  } catch (const std::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline const char* kTableHeader = "System,NFE,MCD,LRE,RTE,RTF";

inline int cmd_eval(const RunConfig& cfg, const std::vector<std::string>& refs, const std::vector<std::string>& syns,
                    const std::optional<std::filesystem::path>& timing_path, const std::filesystem::path& out_dir,
                    std::ostream& log) {
  if (refs.size() != syns.size()) throw ConfigError("--ref and --syn lists differ in length");
  if (refs.empty()) throw ConfigError("no files to evaluate");
  const std::optional<EvalTiming> timing =
      timing_path ? std::optional<EvalTiming>(read_timing(*timing_path)) : std::nullopt;

  std::vector<PairResult> results;
  for (std::size_t i = 0; i < refs.size(); ++i) results.push_back(evaluate_pair(refs[i], syns[i], cfg.metrics.lre_mode));

  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json pairs = nlohmann::json::array();
  bool ok = true;
  double audio_seconds = 0.0;
  double sums[3] = {0, 0, 0};
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& r : results) {
    pairs.push_back({{"ref", r.ref},
                     {"syn", r.syn},
                     {"mcd_db", opt(r.mcd)},
                     {"lre", opt(r.lre)},
                     {"rte_s", opt(r.rte)},
                     {"failed", !r.errors.empty()},
                     {"errors", r.errors}});
    if (!r.errors.empty()) {
      ok = false;
      for (const auto& e : r.errors) log << "FAILED " << r.ref << " vs " << r.syn << ": " << e << "\n";
    }
    audio_seconds += r.syn_seconds;
    const std::optional<double> vals[3] = {r.mcd, r.lre, r.rte};
    for (int k = 0; k < 3; ++k) {
      if (vals[k]) {
        sums[k] += *vals[k];
        ++counts[k];
      }
    }
  }
  std::filesystem::create_directories(out_dir);
  detail::write_text(out_dir / "eval_pairs.json", pairs.dump(2) + "\n");

  auto mean = [&](int k) { return counts[k] ? detail::fmt17(sums[k] / counts[k]) : std::string("nan"); };
  std::string rtf_field = "nan";
  if (timing && audio_seconds > 0.0) rtf_field = detail::fmt17(rtf(timing->wall_seconds, audio_seconds));
  std::ostringstream csv;
  csv << kTableHeader << '\n'
      << cfg.metrics.system << ',' << (timing ? timing->nfe : std::size_t{1}) << ',' << mean(0) << ',' << mean(1)
      << ',' << mean(2) << ',' << rtf_field << '\n';
  detail::write_text(out_dir / "eval_summary.csv", csv.str());
  log << "evaluated " << results.size() << " pairs" << (ok ? "" : " with failures") << "\n";
  return ok ? kExitOk : kExitFailure;
}

}  // namespace csb
