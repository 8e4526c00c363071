#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "escq/error.hpp"
#include "escq/rewards.hpp"
#include "escq/trainer.hpp"

using namespace escq;

namespace {

std::shared_ptr<const ScorerContext> mlp_context() { return std::make_shared<ScorerContext>(); }

ScorerConfig mlp_config(std::vector<std::size_t> hidden = {16}, std::uint64_t seed = 3) {
  ScorerConfig c;
  c.backend = Backend::Mlp;
  c.mlp.hidden = std::move(hidden);
  c.mlp.features.hash_dim = 16;
  c.seed = seed;
  return c;
}

// Linear scorer with zero weights except the output bias.
QNet constant_net(double value) {
  QNet net(mlp_config({}), mlp_context());
  std::vector<double> w(net.num_params(), 0.0);
  w.back() = value;
  net.params().assign(w);
  return net;
}

DialogueState make_state(const std::string& query, const std::string& emotion = "sadness") {
  DialogueState s;
  s.description = "I feel stuck at work.";
  s.emotion = {emotion, 3};
  s.query = query;
  return s;
}

Transition terminal(const DialogueState& s, StrategyId a, double r) {
  Transition t;
  t.state = s;
  t.action = a;
  t.reward = r;
  t.terminal = true;
  return t;
}

Transition step_to(const DialogueState& s, StrategyId a, double r, const DialogueState& next) {
  Transition t = terminal(s, a, r);
  t.terminal = false;
  t.next_state = next;
  return t;
}

std::vector<const Transition*> pointers(const std::vector<Transition>& data) {
  std::vector<const Transition*> out;
  for (const auto& t : data) out.push_back(&t);
  return out;
}

double td_loss(const QNet& online, const QNet& target, const std::vector<Transition>& data, double gamma) {
  return evaluate_td(online, target, std::span<const Transition>(data), gamma).loss;
}

std::vector<Transition> mixed_batch() {
  const auto a = make_state("I cannot focus on anything.");
  const auto b = make_state("My boss keeps yelling at me.", "anger");
  std::vector<Transition> out;
  out.push_back(step_to(a, 1, 0.5, b));
  out.push_back(terminal(a, 4, -1.0));
  out.push_back(step_to(b, 7, 1.0, a));
  out.push_back(terminal(b, 2, 0.25));
  return out;
}

}  // namespace

TEST(TdTarget, TerminalIsReward) {
  const QNet target = constant_net(2.0);
  EXPECT_DOUBLE_EQ(td_target(-1.0, std::nullopt, true, target, 0.85), -1.0);
}

TEST(TdTarget, BootstrapsFromTarget) {
  const QNet target = constant_net(2.0);
  EXPECT_NEAR(td_target(1.0, make_state("next"), false, target, 0.85), 2.7, 1e-12);
  EXPECT_DOUBLE_EQ(td_target(1.0, make_state("next"), false, target, 0.0), 1.0);
}

TEST(TdTarget, UsesMaxOverActions) {
  QNet target(mlp_config({}), mlp_context());
  std::vector<double> w(target.num_params(), 0.0);
  // Action one-hot block follows the 9 emotion slots.
  for (int k = 0; k < 8; ++k) w[9 + k] = 0.1 * (k + 1);
  target.params().assign(w);
  EXPECT_NEAR(td_target(0.0, make_state("next"), false, target, 0.5), 0.4, 1e-12);
}

TEST(TdTarget, MissingNextState) {
  const QNet target = constant_net(0.0);
  try {
    td_target(1.0, std::nullopt, false, target, 0.85);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingNextState);
  }
}

TEST(EvaluateTd, ZeroAtFixedPoint) {
  const QNet net = constant_net(0.7);
  std::vector<Transition> data{terminal(make_state("a"), 1, 0.7), terminal(make_state("b"), 5, 0.7)};
  const auto ev = evaluate_td(net, net, std::span<const Transition>(data), 0.85);
  EXPECT_EQ(ev.loss, 0.0);
  for (double g : ev.grad) EXPECT_EQ(g, 0.0);
}

TEST(EvaluateTd, DuplicatedBatchSameLossAndGradient) {
  const QNet online(mlp_config(), mlp_context());
  const QNet target(mlp_config({16}, 9), mlp_context());
  auto data = mixed_batch();
  auto doubled = data;
  doubled.insert(doubled.end(), data.begin(), data.end());
  const auto a = evaluate_td(online, target, std::span<const Transition>(data), 0.85);
  const auto b = evaluate_td(online, target, std::span<const Transition>(doubled), 0.85);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  for (std::size_t i = 0; i < a.grad.size(); ++i) EXPECT_NEAR(a.grad[i], b.grad[i], 1e-12);
}

TEST(EvaluateTd, SemiGradientOracle) {
  const QNet online(mlp_config(), mlp_context());
  const QNet target(mlp_config({16}, 9), mlp_context());
  const auto data = mixed_batch();
  const auto ev = evaluate_td(online, target, std::span<const Transition>(data), 0.85);

  std::vector<double> expect(online.num_params(), 0.0);
  double loss = 0.0;
  for (const auto& t : data) {
    double y = t.reward;
    if (!t.terminal) {
      const auto q = target.q_all(*t.next_state);
      y += 0.85 * *std::max_element(q.values.begin(), q.values.end());
    }
    const double q = online.q_value(t.state, t.action);
    loss += (y - q) * (y - q) / data.size();
    const auto g = online.grad_q(t.state, t.action);
    for (std::size_t i = 0; i < g.size(); ++i) expect[i] += -2.0 * (y - q) / data.size() * g[i];
  }
  EXPECT_NEAR(ev.loss, loss, 1e-12);
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(ev.grad[i], expect[i], 1e-12);
}

TEST(EvaluateTd, FiniteDifferenceWithFrozenTarget) {
  QNet online(mlp_config(), mlp_context());
  const QNet target = online;  // same weights, but held fixed
  const auto data = mixed_batch();
  const auto ev = evaluate_td(online, target, std::span<const Transition>(data), 0.85);
  const double h = 1e-6;
  Rng rng(11);
  int bad = 0;
  for (int n = 0; n < 100; ++n) {
    const std::size_t i = rng.uniform_index(online.num_params());
    const double w = online.params().get(i);
    online.params().set(i, w + h);
    const double up = td_loss(online, target, data, 0.85);
    online.params().set(i, w - h);
    const double down = td_loss(online, target, data, 0.85);
    online.params().set(i, w);
    const double fd = (up - down) / (2 * h);
    const double rel = std::abs(fd - ev.grad[i]) / std::max({std::abs(fd), std::abs(ev.grad[i]), 1e-3});
    if (rel > 1e-4) ++bad;
  }
  EXPECT_EQ(bad, 0);
}

TEST(EvaluateTd, ThreadCountInvariant) {
  const QNet online(mlp_config(), mlp_context());
  const QNet target(mlp_config({16}, 9), mlp_context());
  std::vector<Transition> data;
  for (int i = 0; i < 5; ++i) {
    auto batch = mixed_batch();
    data.insert(data.end(), batch.begin(), batch.end());
  }
  const auto one = evaluate_td(online, target, std::span<const Transition>(data), 0.85, 1);
  const auto four = evaluate_td(online, target, std::span<const Transition>(data), 0.85, 4);
  EXPECT_EQ(one.loss, four.loss);
  EXPECT_EQ(one.grad, four.grad);
}

TEST(ClipGlobalNorm, ScalesOnlyAboveThreshold) {
  std::vector<double> g{3.0, 4.0};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0], 0.6, 1e-15);
  EXPECT_NEAR(g[1], 0.8, 1e-15);
  std::vector<double> small{0.3, 0.4};
  EXPECT_DOUBLE_EQ(clip_global_norm(small, 1.0), 0.5);
  EXPECT_EQ(small, (std::vector<double>{0.3, 0.4}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ScorerParams p(ScorerConfig{}, 3);
  p.assign(std::vector<double>{1.0, 1.0, 1.0});
  Adam adam(3, 0.01);
  const std::vector<double> g{2.0, -0.5, 0.0};
  adam.step(p, g);
  EXPECT_NEAR(p.get(0), 1.0 - 0.01 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.get(1), 1.0 + 0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_EQ(p.get(2), 1.0);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, SecondStepOracle) {
  ScorerParams p(ScorerConfig{}, 1);
  Adam adam(1, 0.1);
  adam.step(p, std::vector<double>{1.0});
  adam.step(p, std::vector<double>{-1.0});
  // m2 = 0.09 - 0.1, v2 = 0.000999 + 0.001.
  const double m = (0.9 * 0.1 - 0.1) / (1 - 0.81);
  const double v = (0.999 * 0.001 + 0.001) / (1 - 0.999 * 0.999);
  const double expect = -0.1 / (1.0 + 1e-8) - 0.1 * m / (std::sqrt(v) + 1e-8);
  EXPECT_NEAR(p.get(0), expect, 1e-12);
}

TEST(TrainStep, LeavesTargetUntouched) {
  QNet online(mlp_config(), mlp_context());
  const QNet target = online;
  const auto before = target.params();
  const auto data = mixed_batch();
  TrainerConfig cfg;
  Adam adam(online.num_params(), cfg.learning_rate);
  train_step(online, target, pointers(data), cfg, adam);
  EXPECT_TRUE(target.params() == before);
  EXPECT_FALSE(online.params() == before);
}

TEST(SyncTarget, ExactCopyWithValueSemantics) {
  QNet online(mlp_config(), mlp_context());
  QNet target(mlp_config({16}, 9), mlp_context());
  sync_target(online, target);
  EXPECT_TRUE(target.params() == online.params());
  sync_target(online, target);
  EXPECT_TRUE(target.params() == online.params());
  const auto snapshot = target.params();
  const auto data = mixed_batch();
  TrainerConfig cfg;
  Adam adam(online.num_params(), cfg.learning_rate);
  train_step(online, target, pointers(data), cfg, adam);
  EXPECT_TRUE(target.params() == snapshot);
}

TEST(ReplayBuffer, FifoEviction) {
  ReplayBuffer buf(3, 1);
  for (int i = 0; i < 5; ++i) buf.push(terminal(make_state("q"), 1, i));
  ASSERT_EQ(buf.size(), 3u);
  EXPECT_EQ(buf.at(0).reward, 2.0);
  EXPECT_EQ(buf.at(1).reward, 3.0);
  EXPECT_EQ(buf.at(2).reward, 4.0);
  EXPECT_THROW(buf.at(3), Error);
}

TEST(ReplayBuffer, SamplingSeededAndInRange) {
  ReplayBuffer a(100, 5), b(100, 5);
  for (int i = 0; i < 40; ++i) {
    a.push(terminal(make_state("q"), 1, i));
    b.push(terminal(make_state("q"), 1, i));
  }
  const auto ia = a.sample_indices(500);
  EXPECT_EQ(ia, b.sample_indices(500));
  for (auto i : ia) EXPECT_LT(i, 40u);
  EXPECT_THROW(ReplayBuffer(4).sample_indices(1), Error);
}

TEST(ReplayBuffer, InOrderWraps) {
  ReplayBuffer buf(10);
  for (int i = 0; i < 4; ++i) buf.push(terminal(make_state("q"), 1, i));
  EXPECT_EQ(buf.next_in_order(3), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(buf.next_in_order(3), (std::vector<std::size_t>{3, 0, 1}));
}

TEST(TrainerConfig, DefaultsAndValidation) {
  EXPECT_EQ(TrainerConfig::defaults_for(Backend::Seq).learning_rate, 5e-6);
  EXPECT_EQ(TrainerConfig::defaults_for(Backend::Mlp).learning_rate, 2e-3);
  const auto c = TrainerConfig::defaults_for(Backend::Seq);
  EXPECT_EQ(c.gamma, 0.85);
  EXPECT_EQ(c.batch_size, 64u);
  EXPECT_EQ(c.target_sync_every, 10u);
  EXPECT_EQ(c.epochs, 4u);
  EXPECT_EQ(c.buffer_capacity, 12000u);
  EXPECT_EQ(c.clip_norm, 1.0);
  TrainerConfig bad;
  bad.gamma = 1.0;
  EXPECT_THROW(bad.validate(), Error);
  bad = {};
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Fit, InsufficientData) {
  const auto data = mixed_batch();
  TrainerConfig cfg;
  try {
    fit(QNet(mlp_config(), mlp_context()), data, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientData);
  }
}

TEST(Fit, StepCountSyncScheduleAndCheckpoints) {
  std::vector<Transition> data;
  for (int i = 0; i < 25; ++i) {
    auto batch = mixed_batch();
    data.insert(data.end(), batch.begin(), batch.end());
  }
  TrainerConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 3;
  cfg.target_sync_every = 4;
  cfg.checkpoint_every = 5;
  std::vector<std::size_t> seen;
  FitHooks hooks;
  hooks.on_checkpoint = [&](std::size_t step, const QNet&) { seen.push_back(step); };
  const auto r = fit(QNet(mlp_config(), mlp_context()), data, cfg, hooks);
  ASSERT_EQ(r.log.entries.size(), 3u * (100 / 8));
  for (const auto& e : r.log.entries) EXPECT_EQ(e.synced, e.step % 4 == 0);
  EXPECT_EQ(seen, (std::vector<std::size_t>{5, 10, 15, 20, 25, 30, 35}));
  const std::string csv = r.log.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,loss,mean_target,synced");
}

TEST(Fit, BitwiseDeterministicAcrossRunsAndThreads) {
  std::vector<Transition> data;
  for (int i = 0; i < 20; ++i) {
    auto batch = mixed_batch();
    data.insert(data.end(), batch.begin(), batch.end());
  }
  TrainerConfig cfg;
  cfg.batch_size = 16;
  cfg.seed = 42;
  const auto a = fit(QNet(mlp_config(), mlp_context()), data, cfg);
  const auto b = fit(QNet(mlp_config(), mlp_context()), data, cfg);
  cfg.threads = 4;
  const auto c = fit(QNet(mlp_config(), mlp_context()), data, cfg);
  EXPECT_TRUE(a.online.params() == b.online.params());
  EXPECT_TRUE(a.online.params() == c.online.params());
  EXPECT_EQ(a.log.losses(), b.log.losses());
  EXPECT_EQ(a.log.losses(), c.log.losses());
}

// s0 --1--> s1 (r = 0), s0 --2--> end (r = 0.5), s1 --3--> end (r = 1); all
// other actions end with r = 0. With gamma 0.85 the best first move is 1
// (value 0.85), which a myopic learner would miss.
TEST(Fit, TwoStateMdpReachesOptimalPolicy) {
  const auto s0 = make_state("where should I even start");
  DialogueState s1 = make_state("that makes sense, what next");
  s1.history = {Turn::seeker("where should I even start"), Turn::supporter("Tell me more.", 1)};
  std::vector<Transition> data;
  for (int rep = 0; rep < 16; ++rep) {
    for (int a = 1; a <= 8; ++a) {
      data.push_back(a == 1 ? step_to(s0, 1, 0.0, s1) : terminal(s0, a, a == 2 ? 0.5 : 0.0));
      data.push_back(terminal(s1, a, a == 3 ? 1.0 : 0.0));
    }
  }
  TrainerConfig cfg;
  cfg.batch_size = 32;
  cfg.learning_rate = 3e-3;
  FitHooks hooks;
  hooks.steps = 1500;
  const auto r = fit(QNet(mlp_config({32}), mlp_context()), data, cfg, hooks);
  EXPECT_EQ(r.online.select(s0), 1);
  EXPECT_EQ(r.online.select(s1), 3);
  const auto q0 = r.online.q_all(s0);
  const auto q1 = r.online.q_all(s1);
  EXPECT_NEAR(q0.at(1), 0.85, 0.05);
  EXPECT_NEAR(q0.at(2), 0.5, 0.05);
  EXPECT_NEAR(q1.at(3), 1.0, 0.05);
}

TEST(Fit, ImitationWithZeroGammaFitsSeparableData) {
  const std::vector<std::pair<std::string, StrategyId>> pairs{
      {"anxiety", 1}, {"depression", 3}, {"sadness", 5}, {"anger", 7}, {"fear", 2}};
  std::vector<Transition> gold;
  for (int rep = 0; rep < 24; ++rep) {
    for (const auto& [emotion, action] : pairs) {
      gold.push_back(terminal(make_state("I do not know what to do " + std::to_string(rep), emotion), action, 1.0));
    }
  }
  const auto data = imitation_rewards(gold, StrategyCatalog::esconv(), 7);
  TrainerConfig cfg;
  cfg.gamma = 0.0;
  cfg.batch_size = 16;
  cfg.learning_rate = 5e-3;
  FitHooks hooks;
  hooks.steps = 3000;
  const auto r = fit(QNet(mlp_config(), mlp_context()), data, cfg, hooks);
  int correct = 0;
  for (const auto& t : gold) correct += r.online.select(t.state) == t.action;
  EXPECT_EQ(correct, static_cast<int>(gold.size()));

  const auto losses = r.log.losses();
  const std::size_t decile = losses.size() / 10;
  const double first = std::accumulate(losses.begin(), losses.begin() + decile, 0.0) / decile;
  const double last = std::accumulate(losses.end() - decile, losses.end(), 0.0) / decile;
  EXPECT_LT(last, first);
}

TEST(FitEnv, TrainsOnRandomRollouts) {
  StagedEnvConfig ec;
  StagedEnv env(ec);
  TrainerConfig cfg;
  cfg.batch_size = 32;
  FitHooks hooks;
  hooks.steps = 20;
  const auto r = fit_env(QNet(mlp_config(), mlp_context()), env, 10, cfg, hooks);
  EXPECT_EQ(r.log.entries.size(), 20u);
  for (const auto& e : r.log.entries) EXPECT_TRUE(std::isfinite(e.loss));
}
