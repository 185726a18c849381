// csb: batch front-end for bridge self-tests, toy training, sampling and
// metric evaluation. Exit codes: 0 ok, 1 check/metric failure, 2 usage/config.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "csb/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run config (defaults apply when omitted)");
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--out", c.out, "output directory (overrides io.out_dir)");
}

csb::RunConfig resolve(const Common& c) {
  csb::RunConfig cfg;
  if (!c.config.empty()) {
    cfg = csb::load_config(c.config);
  } else {
    csb::validate(cfg);
  }
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.io.out_dir = c.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consistency Schrodinger bridge toolkit"};
  app.require_subcommand(1);

  Common common;
  auto* selftest = app.add_subcommand("selftest-bridge", "run the bridge/schedule invariant checks");
  add_common(selftest, common);

  auto* train = app.add_subcommand("train-toy", "train the consistency model on the two-Gaussian toy");
  add_common(train, common);

  std::string checkpoint;
  std::size_t nfe = 1;
  auto* sample = app.add_subcommand("sample", "draw toy samples from a checkpoint");
  add_common(sample, common);
  sample->add_option("--checkpoint", checkpoint, "checkpoint written by train-toy")->required();
  sample->add_option("--nfe", nfe, "network evaluations per sample (1, 2, 4 or 8)");

  std::vector<std::string> refs, syns;
  std::string timing;
  auto* eval = app.add_subcommand("eval", "MCD/LRE/RTE/RTF over reference and synthesized stereo WAV pairs");
  add_common(eval, common);
  eval->add_option("--ref", refs, "reference WAV files")->required();
  eval->add_option("--syn", syns, "synthesized WAV files, same order as --ref")->required();
  eval->add_option("--timing", timing, "timing.json from sample, used for RTF and NFE");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? csb::kExitOk : csb::kExitUsage;
  }

  try {
    const auto cfg = resolve(common);
    const std::filesystem::path out = cfg.io.out_dir;
    if (*selftest) return csb::cmd_selftest_bridge(cfg, out, std::cout);
    if (*train) return csb::cmd_train_toy(cfg, out, std::cout);
    if (*sample) return csb::cmd_sample(cfg, checkpoint, nfe, out, std::cout);
    if (*eval) {
      std::optional<std::filesystem::path> t;
      if (!timing.empty()) t = timing;
      return csb::cmd_eval(cfg, refs, syns, t, out, std::cout);
    }
  } catch (const csb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return csb::kExitUsage;
  } catch (const csb::ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return csb::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return csb::kExitFailure;
  }
  return csb::kExitUsage;
}
