#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "mhqa/backbone.hpp"
#include "mhqa/error.hpp"
#include "mhqa/nn/checkpoint.hpp"
#include "mhqa/nn/graph.hpp"
#include "mhqa/nn/layers.hpp"
#include "mhqa/nn/optim.hpp"
#include "support.hpp"

using namespace mhqa::nn;
using mhqa::testing::TempDir;

namespace {

// Central differences against the tape's gradient for every parameter entry.
void check_gradients(ParameterStore& store, const std::function<Var(Graph&)>& build, double tol = 1e-6) {
  store.zero_grad();
  {
    Graph g;
    g.backward(build(g));
  }
  const double h = 1e-5;
  for (const auto& p : store.all()) {
    ASSERT_EQ(p->grad.rows(), p->value.rows()) << p->name;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data()[i];
      p->value.data()[i] = saved + h;
      Graph gp;
      const double up = gp.scalar(build(gp));
      p->value.data()[i] = saved - h;
      Graph gm;
      const double down = gm.scalar(build(gm));
      p->value.data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p->grad.data()[i];
      EXPECT_NEAR(analytic, numeric, tol * std::max(1.0, std::abs(numeric))) << p->name << "[" << i << "]";
    }
  }
}

}  // namespace

TEST(Graph, ElementaryOpsMatchFiniteDifferences) {
  ParameterStore store(3);
  auto& a = store.normal("a", 3, 4, 0.7);
  auto& b = store.normal("b", 4, 2, 0.7);
  auto& row = store.normal("row", 1, 2, 0.5);
  auto& c = store.normal("c", 3, 2, 0.5);
  auto& gamma = store.normal("gamma", 1, 4, 0.3);
  auto& beta = store.normal("beta", 1, 4, 0.3);
  auto& table = store.normal("table", 5, 4, 0.5);
  const std::vector<int> ids = {1, 3, 1};
  Matrix mask = Matrix::Zero(3, 3);
  mask(0, 2) = kMaskedOut;

  check_gradients(store, [&](Graph& g) {
    Var x = g.add(g.param(a), g.embedding(table, ids));
    x = g.layer_norm(x, g.param(gamma), g.param(beta));
    Var attn = g.softmax_rows(g.matmul_transposed(x, x), &mask);
    Var mixed = g.matmul(attn, g.gelu(x));
    Var y = g.add_row(g.matmul(mixed, g.param(b)), g.param(row));
    y = g.mul(g.tanh(y), g.param(c));
    Var z = g.concat_cols({y, g.scale(g.cols(x, 1, 2), 0.5)});
    Var rows = g.concat_rows({g.rows(z, 0, 1), g.mean_rows(z, 1, 2)});
    Var t = g.transpose(rows);
    const int targets[] = {1, -1, 0, 1};
    Var ce = g.cross_entropy(t, targets);
    const double labels[] = {1.0, 0.0, 1.0};
    Var bce = g.bce_with_logits(g.cols(y, 0, 1), labels);
    return g.weighted_sum({ce, bce}, {0.7, 1.3});
  });
}

TEST(Graph, MaskedCrossEntropyGradient) {
  ParameterStore store(5);
  auto& logits = store.normal("logits", 2, 5, 1.0);
  Matrix mask = Matrix::Zero(2, 5);
  mask(0, 4) = kMaskedOut;
  mask(1, 0) = kMaskedOut;
  check_gradients(store, [&](Graph& g) {
    const int targets[] = {1, 3};
    return g.cross_entropy(g.param(logits), targets, &mask);
  });
}

TEST(Graph, LossReferenceValues) {
  Graph g;
  const int target[] = {1};
  EXPECT_NEAR(g.scalar(g.cross_entropy(g.constant(Matrix::Zero(1, 3)), target)), std::log(3.0), 1e-12);
  const double label[] = {1.0};
  EXPECT_NEAR(g.scalar(g.bce_with_logits(g.constant(Matrix::Zero(1, 1)), label)), std::log(2.0), 1e-12);
  const int ignored[] = {-1};
  EXPECT_EQ(g.scalar(g.cross_entropy(g.constant(Matrix::Zero(1, 3)), ignored)), 0.0);
}

TEST(Layers, TransformerBlocksMatchFiniteDifferences) {
  ParameterStore store(11);
  EncoderShape shape{.vocab_size = 12, .dim = 8, .heads = 2, .hidden = 12, .layers = 1, .max_positions = 8, .segments = 2};
  TransformerEncoder encoder(store, "enc", shape);
  DecoderLayer decoder(store, "dec", 8, 2, 12);
  Linear head(store, "head", 8, 3);
  const std::vector<int> tokens = {2, 5, 7, 3}, segments = {0, 0, 1, 1};
  const Matrix causal = causal_mask(3);
  check_gradients(
      store,
      [&](Graph& g) {
        Var memory = encoder(g, tokens, segments);
        Var y = decoder(g, g.rows(memory, 0, 3), memory, &causal, nullptr);
        const int targets[] = {0, 2, 1};
        return g.cross_entropy(head(g, y), targets);
      },
      1e-5);
}

TEST(Layers, CausalMaskAndSeededInit) {
  const Matrix mask = causal_mask(3);
  EXPECT_EQ(mask(0, 0), 0.0);
  EXPECT_EQ(mask(0, 1), kMaskedOut);
  EXPECT_EQ(mask(2, 1), 0.0);

  ParameterStore a(42), b(42), c(43);
  EXPECT_EQ(a.normal("w", 3, 3, 1.0).value, b.normal("w", 3, 3, 1.0).value);
  EXPECT_NE(a.normal("v", 3, 3, 1.0).value, c.normal("v", 3, 3, 1.0).value);
}

TEST(Optim, ZeroGradientLeavesParametersUnchanged) {
  ParameterStore store(1);
  auto& w = store.normal("w", 2, 2, 1.0);
  const Matrix before = w.value;
  Adam adam(store, {});
  store.zero_grad();
  adam.step();
  EXPECT_EQ(w.value, before);
}

TEST(Optim, AdamDescendsQuadratic) {
  ParameterStore store(1);
  auto& w = store.constant("w", 1, 1, 3.0);
  Adam adam(store, {.learning_rate = 0.1, .beta1 = 0.9, .beta2 = 0.999, .epsilon = 1e-8, .clip_norm = 0.0});
  for (int i = 0; i < 200; ++i) {
    Graph g;
    Var x = g.param(w);
    g.backward(g.mul(x, x));
    adam.step();
  }
  EXPECT_LT(std::abs(w.value(0, 0)), 0.1);
}

TEST(Checkpoint, RoundTripAndMismatch) {
  TempDir dir;
  ParameterStore a(5);
  a.normal("x", 2, 3, 1.0);
  a.normal("y", 1, 4, 1.0);
  save_weights(a, dir / "w.bin");

  ParameterStore b(99);
  b.zeros("x", 2, 3);
  b.zeros("y", 1, 4);
  load_weights(b, dir / "w.bin");
  EXPECT_EQ(b.find("x")->value, a.find("x")->value);
  EXPECT_EQ(b.find("y")->value, a.find("y")->value);

  ParameterStore wrong(1);
  wrong.zeros("x", 3, 2);
  wrong.zeros("y", 1, 4);
  EXPECT_THROW(load_weights(wrong, dir / "w.bin"), mhqa::DataError);
  ParameterStore missing(1);
  missing.zeros("x", 2, 3);
  EXPECT_THROW(load_weights(missing, dir / "w.bin"), mhqa::DataError);
}

TEST(Training, RunTrainingIsSeededAndBounded) {
  auto run = [](std::uint64_t seed) {
    ParameterStore store(1);
    auto& w = store.constant("w", 1, 1, 2.0);
    mhqa::TrainingOptions options{.epochs = 3, .batch_size = 2, .learning_rate = 0.05, .max_steps = 5, .seed = seed};
    std::vector<std::size_t> order;
    auto log = mhqa::run_training(store, 5, options, [&](std::span<const std::size_t> batch) -> std::optional<double> {
      order.insert(order.end(), batch.begin(), batch.end());
      Graph g;
      Var x = g.param(w);
      Var l = g.mul(x, x);
      g.backward(l);
      return g.scalar(l);
    });
    return std::pair{log.losses, order};
  };
  const auto a = run(7), b = run(7), c = run(8);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.first.size(), 5u);
  EXPECT_NE(a.second, c.second);
  ParameterStore store(1);
  EXPECT_THROW(mhqa::run_training(store, 0, {}, [](auto) { return std::optional<double>(0.0); }), mhqa::ConfigError);
}

TEST(Training, SkippedBatchesAreCounted) {
  ParameterStore store(1);
  store.constant("w", 1, 1, 1.0);
  mhqa::TrainingOptions options{.epochs = 1, .batch_size = 1};
  auto log = mhqa::run_training(store, 4, options, [](std::span<const std::size_t> batch) -> std::optional<double> {
    if (batch[0] % 2 == 0) return std::nullopt;
    return 1.0;
  });
  EXPECT_EQ(log.skipped_batches, 2);
  EXPECT_EQ(log.losses.size(), 2u);
}

TEST(Backbone, PresetsAndOptions) {
  EXPECT_EQ(mhqa::backbone_preset("tiny").dim, 32);
  EXPECT_EQ(mhqa::backbone_preset("small").layers, 2);
  EXPECT_THROW(mhqa::backbone_preset("huge"), mhqa::ConfigError);
  EXPECT_THROW(mhqa::training_options_from_json({{"batch_size", 0}}), mhqa::ConfigError);
  EXPECT_THROW(mhqa::training_options_from_json({{"learning_rate", -1.0}}), mhqa::ConfigError);
  const auto o = mhqa::training_options_from_json({{"epochs", 2}, {"seed", 99}});
  EXPECT_EQ(o.epochs, 2);
  EXPECT_EQ(o.seed, 99u);
  EXPECT_EQ(mhqa::training_options_from_json(mhqa::to_json(o)), o);
}
