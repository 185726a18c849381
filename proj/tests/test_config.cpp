#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "csb/config.hpp"

using namespace csb;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, MinimalDocumentGivesDefaults) {
  const auto c = parse_config_text(R"({"schema_version": 1})");
  EXPECT_EQ(c.grid.n_steps, 120u);
  EXPECT_EQ(c.grid.t_min, 0.001);
  EXPECT_EQ(c.grid.t_max, 0.999);
  EXPECT_EQ(c.optimizer.lr, 1e-4);
  EXPECT_EQ(c.optimizer.batch_size, 16u);
  EXPECT_EQ(c.optimizer.steps, 5000u);
  EXPECT_EQ(c.schedule.beta0, 0.1);
  EXPECT_EQ(c.schedule.beta1, 20.0);
  EXPECT_EQ(c.model.ema_decay, 0.999);
  EXPECT_TRUE(c.schedule.drift_uses_beta_squared);
}

TEST(Config, CanonicalRoundTrip) {
  auto c = parse_config_text(R"({"schema_version": 1, "seed": 9,
    "optimizer": {"lr_schedule": "cosine"}, "loss": {"distance": "pseudo_huber", "coupling": "heun_step"},
    "metrics": {"lre_mode": "linear"}, "model": {"width": 32, "time_input": "raw"}})");
  const auto back = parse_config(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.model.width, 32u);
  EXPECT_EQ(back.optimizer.lr_schedule, LrSchedule::Cosine);
  EXPECT_EQ(back.loss.distance, Distance::PseudoHuber);
  EXPECT_EQ(back.loss.coupling, Coupling::HeunStep);
  EXPECT_EQ(back.metrics.lre_mode, LreMode::LinearRatio);
  EXPECT_EQ(back.model.time_input, TimeInput::Raw);
}

TEST(Config, UnknownKeysAreErrorsWithPaths) {
  EXPECT_NE(error_of(R"({"schema_version": 1, "bogus": 1})").find("bogus"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema_version": 1, "model": {"widht": 3}})").find("model.widht"), std::string::npos);
}

TEST(Config, ValidationErrors) {
  EXPECT_NE(error_of(R"({"schema_version": 1, "grid": {"t_max": 1.0}})").find("grid.t_max"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema_version": 1, "grid": {"t_min": 0.0}})").find("grid.t_min"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema_version": 2})").find("schema_version"), std::string::npos);
  EXPECT_NE(error_of(R"({"seed": 1})").find("schema_version"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema_version": 1, "model": {"width": "wide"}})").find("model.width"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema_version": 1, "loss": {"distance": "lpips"}})").find("loss.distance"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"schema_version": 1, "model": {"ema_decay": 1.0}})").find("ema_decay"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema_version": 1,)").find("parse error at byte"), std::string::npos);
}

TEST(Config, HashIsStableAndSensitive) {
  const auto a = parse_config_text(R"({"schema_version": 1})");
  const auto b = parse_config_text(R"({"schema_version": 1, "seed": 0})");
  const auto c = parse_config_text(R"({"schema_version": 1, "seed": 1})");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, DerivedObjects) {
  auto c = parse_config_text(R"({"schema_version": 1, "model": {"width": 16, "depth": 2},
    "optimizer": {"lr": 0.01, "steps": 100, "lr_schedule": "cosine"}})");
  const auto shape = c.mlp_shape();
  EXPECT_EQ(shape.x_dim, 2u);
  EXPECT_EQ(shape.cond_dim, 2u);
  EXPECT_EQ(shape.width, 16u);
  EXPECT_EQ(c.make_time_grid().nodes().size(), 121u);
  EXPECT_DOUBLE_EQ(c.lr_at(0), 0.01);
  EXPECT_NEAR(c.lr_at(50), 0.005, 1e-15);
}

TEST(Config, ShippedConfigsLoad) {
  const std::filesystem::path dir = CSB_SOURCE_DIR "/configs";
  for (const char* name : {"default.json", "toy.json"}) {
    const auto c = load_config((dir / name).string());
    EXPECT_EQ(to_json(parse_config(to_json(c))), to_json(c));
  }
  const auto def = load_config((dir / "default.json").string());
  EXPECT_EQ(to_json(def), to_json(RunConfig{}));
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}
