#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "csb/net.hpp"

using namespace csb;

namespace {

MlpShape probe_shape() {
  MlpShape s;
  s.x_dim = 2;
  s.time_embed = 4;
  s.cond_dim = 2;
  s.width = 8;
  s.depth = 2;
  return s;
}

std::vector<NetInput> probe_batch(Rng& rng, std::size_t n) {
  std::vector<NetInput> b;
  for (std::size_t i = 0; i < n; ++i) b.push_back({rng.normal_vec(2), rng.uniform(), rng.normal_vec(2)});
  return b;
}

LossGrad weighted_square(const std::vector<Vec>& outs) {
  LossGrad lg;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    Vec g(outs[i].size());
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double w = 1.0 + static_cast<double>(k + i);
      lg.loss += w * outs[i][k] * outs[i][k] + 0.3 * outs[i][k];
      g[k] = 2.0 * w * outs[i][k] + 0.3;
    }
    lg.d_outputs.push_back(std::move(g));
  }
  return lg;
}

}  // namespace

TEST(Net, ShapeCounts) {
  const auto s = probe_shape();
  EXPECT_EQ(s.in_dim(), 8u);
  EXPECT_EQ(s.n_values(), 8u * 9 + 8u * 9 + 2u * 9);
}

TEST(Net, ZeroOutputLayerGivesZero) {
  Rng rng(1);
  const auto p = DenoiserParams::init(probe_shape(), rng);
  for (int i = 0; i < 5; ++i) {
    for (double v : forward(p, rng.normal_vec(2), rng.uniform(), rng.normal_vec(2))) EXPECT_EQ(v, 0.0);
  }
}

TEST(Net, ForwardRejectsBadShapes) {
  Rng rng(1);
  const auto p = DenoiserParams::init(probe_shape(), rng);
  EXPECT_THROW(forward(p, Vec{1.0}, 0.5, Vec{0.0, 0.0}), ShapeError);
  EXPECT_THROW(forward(p, Vec{1.0, 2.0}, 0.5, Vec{0.0}), ShapeError);
}

TEST(Net, TimeEmbeddingLayout) {
  const auto e = time_embedding(0.0, 6);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(e[k], 0.0);
    EXPECT_EQ(e[3 + k], 1.0);
  }
  const auto f = time_embedding(0.37, 8);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(f[k] * f[k] + f[4 + k] * f[4 + k], 1.0, 1e-15);
}

TEST(Net, ConstantLossGivesZeroGradients) {
  Rng rng(2);
  const auto p = DenoiserParams::init(probe_shape(), rng, false);
  const auto batch = probe_batch(rng, 3);
  const auto lg = loss_and_grads(p, batch, [](const std::vector<Vec>& outs) {
    LossGrad r{4.2, {}};
    for (const auto& o : outs) r.d_outputs.emplace_back(o.size(), 0.0);
    return r;
  });
  EXPECT_EQ(lg.loss, 4.2);
  for (double g : lg.grads) EXPECT_EQ(g, 0.0);
}

TEST(Net, LinearNetNormalEquationGradient) {
  // depth 0 is a single affine map y = W u + b; for L = sum |y - target|^2
  // dL/dW = sum 2 (y - target) u^T and dL/db = sum 2 (y - target).
  MlpShape s;
  s.x_dim = 2;
  s.time_embed = 2;
  s.cond_dim = 0;
  s.width = 4;
  s.depth = 0;
  Rng rng(3);
  auto p = DenoiserParams::init(s, rng, false);
  for (auto& v : p.values()) v = rng.normal();
  const auto batch = probe_batch(rng, 4);
  std::vector<NetInput> inputs;
  for (const auto& b : batch) inputs.push_back({b.x, b.t, {}});
  const Vec target{0.3, -0.7};
  const auto lg = loss_and_grads(p, inputs, [&](const std::vector<Vec>& outs) {
    LossGrad r;
    for (const auto& o : outs) {
      Vec g(2);
      for (std::size_t k = 0; k < 2; ++k) {
        r.loss += (o[k] - target[k]) * (o[k] - target[k]);
        g[k] = 2.0 * (o[k] - target[k]);
      }
      r.d_outputs.push_back(g);
    }
    return r;
  });
  Vec expect(p.size(), 0.0);
  for (const auto& in : inputs) {
    Vec u = in.x;
    const auto e = time_embedding(in.t, 2);
    u.insert(u.end(), e.begin(), e.end());
    const auto w = p.weight(0);
    const auto b = p.bias(0);
    for (std::size_t o = 0; o < 2; ++o) {
      double y = b[o];
      for (std::size_t i = 0; i < 4; ++i) y += w[o * 4 + i] * u[i];
      const double r = 2.0 * (y - target[o]);
      for (std::size_t i = 0; i < 4; ++i) expect[o * 4 + i] += r * u[i];
      expect[8 + o] += r;
    }
  }
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(lg.grads[i], expect[i], 1e-12);
}

TEST(Net, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  auto p = DenoiserParams::init(probe_shape(), rng, false);
  const auto batch = probe_batch(rng, 3);
  const auto lg = loss_and_grads(p, batch, weighted_square);
  const double h = 1e-5;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p.values()[i];
    p.values()[i] = keep + h;
    const double up = loss_and_grads(p, batch, weighted_square).loss;
    p.values()[i] = keep - h;
    const double dn = loss_and_grads(p, batch, weighted_square).loss;
    p.values()[i] = keep;
    const double fd = (up - dn) / (2.0 * h);
    EXPECT_LE(std::abs(fd - lg.grads[i]), 1e-4 * std::max(1.0, std::abs(fd))) << "param " << i;
  }
}

TEST(Net, NonFiniteLossRaisesTrainingError) {
  Rng rng(5);
  const auto p = DenoiserParams::init(probe_shape(), rng);
  const auto batch = probe_batch(rng, 2);
  EXPECT_THROW(loss_and_grads(p, batch, [](const std::vector<Vec>&) { return LossGrad{NAN, {}}; }),
               TrainingError);
}

TEST(Net, AdamZeroGradientLeavesParameters) {
  Rng rng(6);
  auto p = DenoiserParams::init(probe_shape(), rng, false);
  const auto before = p;
  AdamState st(p.size(), 1e-3);
  adam_step(st, p, Vec(p.size(), 0.0));
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 1u);
}

TEST(Net, AdamFirstStepIsLearningRate) {
  MlpShape s;
  s.x_dim = 1;
  s.time_embed = 0;
  s.width = 1;
  s.depth = 0;
  DenoiserParams p(s);  // one weight, one bias
  ASSERT_EQ(p.size(), 2u);
  AdamState st(2, 1e-3);
  adam_step(st, p, Vec{1.0, 0.0});
  EXPECT_NEAR(p.values()[0], -1e-3, 1e-10);
  EXPECT_EQ(p.values()[1], 0.0);
  adam_step(st, p, Vec{1.0, 0.0});
  EXPECT_NEAR(p.values()[0], -2e-3, 1e-10);
}

TEST(Net, AdamRejectsSizeMismatch) {
  Rng rng(6);
  auto p = DenoiserParams::init(probe_shape(), rng);
  AdamState st(p.size(), 1e-3);
  EXPECT_THROW(adam_step(st, p, Vec(3, 0.0)), ShapeError);
}

TEST(Net, CosineSchedule) {
  EXPECT_DOUBLE_EQ(cosine_lr(1e-3, 0, 100), 1e-3);
  EXPECT_NEAR(cosine_lr(1e-3, 50, 100), 5e-4, 1e-15);
  EXPECT_NEAR(cosine_lr(1e-3, 100, 100), 0.0, 1e-18);
  EXPECT_NEAR(cosine_lr(1e-3, 500, 100), 0.0, 1e-18);
}

TEST(Net, EmaCases) {
  MlpShape s;
  s.x_dim = 1;
  s.time_embed = 0;
  s.width = 1;
  s.depth = 0;
  DenoiserParams online(s);
  online.values()[0] = 2.0;
  EmaParams half{DenoiserParams(s), 0.5};
  ema_update(half, online);
  EXPECT_EQ(half.params.values()[0], 1.0);
  EmaParams copy{DenoiserParams(s), 0.0};
  ema_update(copy, online);
  EXPECT_EQ(copy.params.values()[0], 2.0);
  EmaParams frozen{DenoiserParams(s), 1.0};
  ema_update(frozen, online);
  EXPECT_EQ(frozen.params.values()[0], 0.0);
}

TEST(Net, AdamNeverTouchesEma) {
  Rng rng(7);
  auto p = DenoiserParams::init(probe_shape(), rng, false);
  EmaParams ema{p, 0.9};
  const auto snapshot = ema.params;
  AdamState st(p.size(), 1e-2);
  adam_step(st, p, rng.normal_vec(p.size()));
  EXPECT_EQ(ema.params, snapshot);
}

TEST(Net, TrainingIsBitwiseDeterministic) {
  auto run = [] {
    Rng rng(9);
    auto p = DenoiserParams::init(probe_shape(), rng, false);
    AdamState st(p.size(), 1e-2);
    for (int k = 0; k < 20; ++k) {
      const auto batch = probe_batch(rng, 4);
      adam_step(st, p, loss_and_grads(p, batch, weighted_square).grads);
    }
    return p;
  };
  EXPECT_EQ(run(), run());
}

TEST(Net, CheckpointRoundTrip) {
  Rng rng(10);
  Checkpoint ck{DenoiserParams::init(probe_shape(), rng, false), {}};
  ck.target = EmaParams{DenoiserParams::init(probe_shape(), rng, false), 0.95};
  const auto bytes = encode_checkpoint(ck);
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.online, ck.online);
  EXPECT_EQ(back.target.params, ck.target.params);
  EXPECT_EQ(back.target.decay, 0.95);
  EXPECT_EQ(encode_checkpoint(back), bytes);

  const auto path = std::filesystem::temp_directory_path() / "csb_net_ckpt.bin";
  save_checkpoint(path.string(), ck);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path.string())), bytes);
  std::filesystem::remove(path);
}

TEST(Net, CheckpointRejectsCorruption) {
  Rng rng(11);
  Checkpoint ck{DenoiserParams::init(probe_shape(), rng), {}};
  ck.target = EmaParams{ck.online, 0.9};
  auto bytes = encode_checkpoint(ck);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), ParseError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), ParseError);
  bad = bytes;
  bad[8] = 7;
  EXPECT_THROW(decode_checkpoint(bad), ParseError);
}
