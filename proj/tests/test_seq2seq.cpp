#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "mls2s/seq2seq.hpp"
#include "reference_models.hpp"
#include "test_support.hpp"

using namespace mls2s;
using mls2s::testing::max_relative_error;
using mls2s::testing::random_tensor;

namespace {

MLS2SConfig small_config(std::size_t levels, std::size_t hidden, std::size_t history,
                         std::size_t horizon) {
  MLS2SConfig c;
  c.levels = levels;
  c.hidden_dim = hidden;
  c.history = history;
  c.horizon = horizon;
  return c;
}

void randomize(MLS2SModel& m, std::uint64_t seed, double spread) {
  std::mt19937_64 rng(seed);
  for (Parameter& p : m.params()) p.value = random_tensor(p.value.rows(), p.value.cols(), rng, -spread, spread);
}

std::vector<Var> frames_of(Tape& tape, const Tensor& x) {
  std::vector<Var> out;
  for (std::size_t t = 0; t < x.cols(); ++t) {
    Tensor col(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i) col(i, 0) = x(i, t);
    out.push_back(tape.constant(col));
  }
  return out;
}

RoadGraph random_graph(std::size_t n, std::mt19937_64& rng) {
  Tensor a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng() % 2) a(i, j) = a(j, i) = 1.0;
  return RoadGraph(default_node_ids(n), a);
}

}  // namespace

TEST(MLS2SModel, ParameterLayoutFollowsLevels) {
  MLS2SModel m(small_config(3, 4, 5, 2), 1);
  EXPECT_EQ(m.encoder().size(), 3u);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(m.encoder()[l].size(), l + 1);
  EXPECT_EQ(m.decoder().size(), 3u);
  EXPECT_EQ(m.params().at("encoder.level1.layer1.reset.W").value.rows(), 1u + 4u);
  EXPECT_EQ(m.params().at("encoder.level3.layer2.update.W").value.rows(), 4u + 4u);
  EXPECT_EQ(m.params().at("decoder.layer1.candidate.W").value.rows(), 1u + 4u);
  EXPECT_EQ(m.params().at("decoder.layer3.candidate.W").value.rows(), 8u);
  EXPECT_EQ(m.params().at("output.W").value.shape(), (std::array<std::size_t, 2>{4, 1}));
  // 6 encoder layers + 3 decoder layers, 6 tensors each, plus the projection.
  EXPECT_EQ(m.params().size(), 9u * 6u + 2u);
}

TEST(MLS2SConfig, InvalidValuesRejected) {
  auto c = small_config(0, 4, 3, 2);
  EXPECT_THROW(c.validate(), ContractError);
  c = small_config(1, 4, 3, 0);
  EXPECT_THROW(c.validate(), ContractError);
  c = small_config(1, 4, 3, 1);
  c.teacher_forcing_prob = 1.5;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(EncodeLevel, ZeroParametersAndInputsStayAtZero) {
  MLS2SModel m(small_config(1, 3, 1, 1), 2);
  m.zero_parameters();
  Tape tape;
  const auto b = bind(tape, m);
  const auto prop = normalize_propagation(path_graph(4));
  const std::vector<Var> inputs{tape.constant(Tensor(4, 1))};
  EXPECT_EQ(encode_level(prop, inputs, b.encoder[0]).value(), Tensor(4, 3));
}

TEST(EncodeLevel, SingleStepEqualsOneCellStep) {
  MLS2SModel m(small_config(1, 3, 1, 1), 3);
  std::mt19937_64 rng(4);
  Tape tape;
  const auto b = bind(tape, m);
  const auto prop = normalize_propagation(path_graph(4));
  const Var x = tape.constant(random_tensor(4, 1, rng));
  const std::vector<Var> inputs{x};
  const Var direct = gcgru_step(prop, x, tape.constant(Tensor(4, 3)), b.encoder[0][0]);
  EXPECT_EQ(encode_level(prop, inputs, b.encoder[0]).value(), direct.value());
}

TEST(EncodeLevel, EmptySequenceRejected) {
  MLS2SModel m(small_config(1, 3, 1, 1), 3);
  Tape tape;
  const auto b = bind(tape, m);
  EXPECT_THROW(encode_level(normalize_propagation(path_graph(2)), {}, b.encoder[0]), ContractError);
}

TEST(EncodeLevel, TwoLayersThreeStepsMatchHandUnrolling) {
  MLS2SModel m(small_config(2, 4, 3, 1), 5);
  randomize(m, 6, 1.0);
  std::mt19937_64 rng(7);
  const auto prop = normalize_propagation(path_graph(3));
  const Tensor x = random_tensor(3, 3, rng);
  Tape tape;
  const auto b = bind(tape, m);
  const auto frames = frames_of(tape, x);
  const auto& layers = b.encoder[1];
  // Six explicit cell applications.
  Var h1 = tape.constant(Tensor(3, 4));
  Var h2 = tape.constant(Tensor(3, 4));
  h1 = gcgru_step(prop, frames[0], h1, layers[0]);
  h2 = gcgru_step(prop, h1, h2, layers[1]);
  h1 = gcgru_step(prop, frames[1], h1, layers[0]);
  h2 = gcgru_step(prop, h1, h2, layers[1]);
  h1 = gcgru_step(prop, frames[2], h1, layers[0]);
  h2 = gcgru_step(prop, h1, h2, layers[1]);
  EXPECT_EQ(encode_level(prop, frames, layers).value(), h2.value());
}

TEST(MultilevelEncode, SingleLevelIsSingleton) {
  MLS2SModel m(small_config(1, 3, 4, 1), 8);
  std::mt19937_64 rng(9);
  const auto prop = normalize_propagation(ring_graph(4));
  Tape tape;
  const auto b = bind(tape, m);
  const auto frames = frames_of(tape, random_tensor(4, 4, rng));
  const auto out = multilevel_encode(prop, frames, b);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].value(), encode_level(prop, frames, b.encoder[0]).value());
}

TEST(MultilevelEncode, ZeroParametersGiveZeroStates) {
  MLS2SModel m(small_config(3, 2, 4, 1), 10);
  m.zero_parameters();
  std::mt19937_64 rng(11);
  Tape tape;
  const auto b = bind(tape, m);
  const auto out = multilevel_encode(normalize_propagation(ring_graph(5)), frames_of(tape, random_tensor(5, 4, rng)), b);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& h : out) EXPECT_EQ(h.value(), Tensor(5, 2));
}

TEST(MultilevelEncode, FirstLevelMatchesFreshOneLayerEncoder) {
  MLS2SConfig c2 = small_config(2, 3, 5, 1);
  MLS2SModel two(c2, 12);
  randomize(two, 13, 1.0);
  MLS2SModel one(small_config(1, 3, 5, 1), 99);
  for (const char* gate : {"reset", "update", "candidate"})
    for (const char* part : {"W", "b"}) {
      const std::string name = std::string("encoder.level1.layer1.") + gate + "." + part;
      one.params().at(name).value = two.params().at(name).value;
    }
  std::mt19937_64 rng(14);
  const Tensor x = random_tensor(4, 5, rng);
  const auto prop = normalize_propagation(path_graph(4));
  Tape tape;
  const auto b2 = bind(tape, two);
  const auto b1 = bind(tape, one);
  const auto frames = frames_of(tape, x);
  EXPECT_EQ(multilevel_encode(prop, frames, b2)[0].value(), encode_level(prop, frames, b1.encoder[0]).value());
}

TEST(MultilevelEncode, LevelsAreIndependent) {
  MLS2SModel m(small_config(3, 3, 4, 1), 15);
  randomize(m, 16, 1.0);
  std::mt19937_64 rng(17);
  const auto prop = normalize_propagation(ring_graph(4));
  const Tensor x = random_tensor(4, 4, rng);
  for (std::size_t k = 0; k < 3; ++k) {
    m.params().zero_grad();
    Tape tape;
    const auto b = bind(tape, m);
    const auto states = multilevel_encode(prop, frames_of(tape, x), b);
    tape.backward(sum(states[k]));
    for (const Parameter& p : m.params()) {
      const bool own = p.name.starts_with("encoder.level" + std::to_string(k + 1) + ".");
      double mag = 0.0;
      for (double g : p.grad.data()) mag = std::max(mag, std::abs(g));
      if (own) {
        EXPECT_GT(mag, 0.0) << p.name;
      } else {
        EXPECT_EQ(mag, 0.0) << p.name << " leaks into level " << k + 1;
      }
    }
  }
}

TEST(Decode, ZeroEverythingPredictsOutputBias) {
  MLS2SModel m(small_config(2, 3, 2, 3), 18);
  m.zero_parameters();
  Tape tape;
  const auto b = bind(tape, m);
  const std::vector<Var> init{tape.constant(Tensor(4, 3)), tape.constant(Tensor(4, 3))};
  const auto out = decode(normalize_propagation(ring_graph(4)), init, tape.constant(Tensor(4, 1)), b, 3);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& y : out) EXPECT_EQ(y.value(), Tensor(4, 1));
}

TEST(Decode, FirstStepIgnoresTeacherForcing) {
  MLS2SModel m(small_config(2, 3, 2, 1), 19);
  randomize(m, 20, 1.0);
  std::mt19937_64 data(21);
  const auto prop = normalize_propagation(path_graph(4));
  const Tensor h0 = random_tensor(4, 3, data, -1, 1), first = random_tensor(4, 1, data);
  const Tensor target = random_tensor(4, 1, data);
  auto run = [&](double tf) {
    std::mt19937_64 rng(1);
    Tape tape;
    const auto b = bind(tape, m);
    const std::vector<Var> init{tape.constant(h0), tape.constant(h0)};
    return decode(prop, init, tape.constant(first), b, 1, tape.constant(target), tf, &rng)[0].value();
  };
  EXPECT_EQ(run(0.0), run(1.0));
}

TEST(Decode, FullTeacherForcingFeedsPreviousTruth) {
  MLS2SModel m(small_config(1, 3, 2, 2), 22);
  randomize(m, 23, 1.0);
  std::mt19937_64 data(24);
  const auto prop = normalize_propagation(path_graph(3));
  const Tensor h0 = random_tensor(3, 3, data, -1, 1), first = random_tensor(3, 1, data);
  const Tensor targets = random_tensor(3, 2, data);
  std::mt19937_64 rng(1);
  Tape tape;
  const auto b = bind(tape, m);
  const std::vector<Var> init{tape.constant(h0)};
  const auto forced = decode(prop, init, tape.constant(first), b, 2, tape.constant(targets), 1.0, &rng);
  // Oracle: step 2 consumes targets[:, 0].
  const Var h1 = gcgru_step(prop, tape.constant(first), tape.constant(h0), b.decoder[0]);
  const Var h2 = gcgru_step(prop, slice_cols(tape.constant(targets), 0, 1), h1, b.decoder[0]);
  EXPECT_EQ(forced[1].value(), project_output(b, h2).value());
}

TEST(Decode, TwoLayersTwoStepsMatchHandUnrolling) {
  MLS2SModel m(small_config(2, 3, 2, 2), 25);
  randomize(m, 26, 1.0);
  std::mt19937_64 data(27);
  const auto prop = normalize_propagation(path_graph(3));
  const Tensor i1 = random_tensor(3, 3, data, -1, 1), i2 = random_tensor(3, 3, data, -1, 1);
  const Tensor first = random_tensor(3, 1, data);
  Tape tape;
  const auto b = bind(tape, m);
  const std::vector<Var> init{tape.constant(i1), tape.constant(i2)};
  const auto out = decode(prop, init, tape.constant(first), b, 2);
  Var s1 = gcgru_step(prop, tape.constant(first), init[0], b.decoder[0]);
  Var s2 = gcgru_step(prop, s1, init[1], b.decoder[1]);
  const Var y1 = project_output(b, s2);
  s1 = gcgru_step(prop, y1, s1, b.decoder[0]);
  s2 = gcgru_step(prop, s1, s2, b.decoder[1]);
  const Var y2 = project_output(b, s2);
  EXPECT_EQ(out[0].value(), y1.value());
  EXPECT_EQ(out[1].value(), y2.value());
}

TEST(Decode, ShortTargetsAndWrongDepthRejected) {
  MLS2SModel m(small_config(2, 3, 2, 3), 28);
  Tape tape;
  const auto b = bind(tape, m);
  const auto prop = normalize_propagation(path_graph(2));
  const std::vector<Var> init{tape.constant(Tensor(2, 3)), tape.constant(Tensor(2, 3))};
  std::mt19937_64 rng(1);
  EXPECT_THROW(decode(prop, init, tape.constant(Tensor(2, 1)), b, 3, tape.constant(Tensor(2, 2)), 0.5, &rng),
               ContractError);
  const std::vector<Var> one{init[0]};
  EXPECT_THROW(decode(prop, one, tape.constant(Tensor(2, 1)), b, 3), ContractError);
}

TEST(Forward, ZeroParametersOnSingleNodeGiveZeros) {
  MLS2SModel m(small_config(2, 4, 5, 3), 29);
  m.zero_parameters();
  const Tensor x = Tensor::from_rows({{3, 1, 4, 1, 5}});
  EXPECT_EQ(predict(PropagationMatrix{Tensor::identity(1)}, x, m), Tensor(1, 3));
}

TEST(Forward, OutputShapeIsNodesByHorizon) {
  std::mt19937_64 rng(30);
  for (std::size_t levels : {1u, 2u, 3u})
    for (std::size_t horizon : {1u, 4u}) {
      MLS2SModel m(small_config(levels, 3, 6, horizon), 31);
      const Tensor y = predict(normalize_propagation(ring_graph(5)), random_tensor(5, 6, rng), m);
      EXPECT_EQ(y.rows(), 5u);
      EXPECT_EQ(y.cols(), horizon);
    }
}

TEST(Forward, WrongHistoryWidthRejected) {
  MLS2SModel m(small_config(1, 3, 6, 2), 32);
  EXPECT_THROW(predict(normalize_propagation(ring_graph(3)), Tensor(3, 5), m), ShapeError);
}

TEST(Forward, BatchedRowsMatchSeparateCalls) {
  MLS2SModel m(small_config(2, 3, 4, 2), 33);
  std::mt19937_64 rng(34);
  const auto prop = normalize_propagation(path_graph(3));
  const Tensor a = random_tensor(3, 4, rng), b = random_tensor(3, 4, rng);
  Tensor stacked(6, 4);
  for (std::size_t i = 0; i < 12; ++i) {
    stacked[i] = a[i];
    stacked[12 + i] = b[i];
  }
  const Tensor ya = predict(prop, a, m), yb = predict(prop, b, m), ys = predict(prop, stacked, m);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(ys[i], ya[i]);
    EXPECT_EQ(ys[6 + i], yb[i]);
  }
}

TEST(Forward, PermutationEquivariance) {
  std::mt19937_64 rng(35);
  const std::size_t n = 5;
  MLS2SModel m(small_config(2, 4, 4, 3), 36);
  randomize(m, 37, 0.8);
  const auto g = random_graph(n, rng);
  const Tensor x = random_tensor(n, 4, rng);
  const Tensor y = predict(normalize_propagation(g), x, m);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor xp(n, 4);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < 4; ++t) xp(i, t) = x(perm[i], t);
  const Tensor yp = predict(normalize_propagation(g.subgraph(perm)), xp, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(yp(i, k), y(perm[i], k), 1e-12);
}

TEST(Forward, SingleLevelMatchesIndependentSeq2Seq) {
  std::mt19937_64 rng(38);
  for (int trial = 0; trial < 10; ++trial) {
    MLS2SModel m(small_config(1, 4, 6, 3), 40 + trial);
    randomize(m, 60 + trial, 1.0);
    const auto g = random_graph(5, rng);
    const auto prop = normalize_propagation(g);
    const Tensor x = random_tensor(5, 6, rng);
    const auto ref = reference::single_level_seq2seq(reference::to_matrix(prop.p), reference::to_matrix(x), m);
    EXPECT_LE(max_abs_diff(predict(prop, x, m), reference::to_tensor(ref)), 1e-12);
  }
}

TEST(Forward, EndToEndMaeGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(41);
  MLS2SModel m(small_config(2, 5, 3, 2), 42);
  randomize(m, 43, 0.8);
  const auto prop = normalize_propagation(path_graph(4));
  const Tensor x = random_tensor(4, 3, rng), y = random_tensor(4, 2, rng);
  const std::vector<std::uint8_t> mask(8, 1);
  auto loss = [&](Tape& tape) {
    const auto b = bind(tape, m);
    return masked_mean_abs(forward(prop, tape.constant(x), b, m.config()), y, mask);
  };
  m.params().zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  for (Parameter& p : m.params()) {
    auto f = [&](const Tensor& v) {
      const Tensor saved = p.value;
      p.value = v;
      Tape tape;
      const double out = loss(tape).value().item();
      p.value = saved;
      return out;
    };
    EXPECT_LT(max_relative_error(p.grad, finite_difference_grad(f, p.value, 1e-6)), 1e-4) << p.name;
  }
}
