#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "escq/core.hpp"
#include "escq/env.hpp"
#include "escq/qnet.hpp"
#include "escq/util.hpp"

namespace escq {

// FIFO ring of transitions with seeded uniform sampling (with replacement).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 12000, std::uint64_t seed = 0);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }

  // i = 0 is the oldest retained transition.
  const Transition& at(std::size_t i) const;

  std::vector<std::size_t> sample_indices(std::size_t n);
  // Consecutive indices starting where the previous call stopped, wrapping.
  std::vector<std::size_t> next_in_order(std::size_t n);

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
  std::size_t head_ = 0;  // slot of the oldest item once full
  std::size_t cursor_ = 0;
  Rng rng_;
};

enum class Sampling { Uniform, InOrder };

struct TrainerConfig {
  double gamma = 0.85;
  double learning_rate = 2e-3;
  std::size_t batch_size = 64;
  std::size_t target_sync_every = 10;
  std::size_t epochs = 4;
  std::size_t window = kDefaultWindow;
  std::size_t buffer_capacity = 12000;
  double clip_norm = 1.0;
  Sampling sampling = Sampling::Uniform;
  std::size_t threads = 1;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::uint64_t seed = 0;

  // Learning rate 5e-6 for Seq, 2e-3 for Mlp; everything else shared.
  static TrainerConfig defaults_for(Backend backend);
  void validate() const;
};

struct TrainLogEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double mean_target = 0.0;
  bool synced = false;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;

  std::string to_csv() const;
  std::vector<double> losses() const;
};

// r for terminal transitions, otherwise r + gamma * max_a' Q_target(s', a').
double td_target(double reward, const std::optional<DialogueState>& next_state, bool terminal,
                 const QNet& target, double gamma);

struct TdEvaluation {
  double loss = 0.0;  // mean squared TD error
  std::vector<double> targets;
  std::vector<double> q;
  std::vector<double> grad;  // d loss / d online weights, targets held fixed
};

// Gradients are accumulated in fixed chunks of the batch and summed in chunk
// order, so the result does not depend on `threads`.
TdEvaluation evaluate_td(const QNet& online, const QNet& target, std::span<const Transition* const> batch,
                         double gamma, std::size_t threads = 1);
TdEvaluation evaluate_td(const QNet& online, const QNet& target, std::span<const Transition> batch,
                         double gamma, std::size_t threads = 1);

class Adam {
 public:
  Adam(std::size_t size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ScorerParams& params, std::span<const double> grad);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

// Scales grad in place to global norm <= max_norm; returns the original norm.
double clip_global_norm(std::span<double> grad, double max_norm);

struct TrainStepResult {
  double loss = 0.0;
  double mean_target = 0.0;
  double grad_norm = 0.0;  // before clipping
};

// One optimizer step on the mean squared TD error; `target` is untouched.
TrainStepResult train_step(QNet& online, const QNet& target, std::span<const Transition* const> batch,
                           const TrainerConfig& config, Adam& optimizer);

void sync_target(const QNet& online, QNet& target);

struct FitResult {
  QNet online;
  TrainLog log;
};

struct FitHooks {
  // Called every checkpoint_every steps with the step number.
  std::function<void(std::size_t step, const QNet& online)> on_checkpoint;
  // Overrides the number of optimizer steps (default epochs * N / batch).
  std::optional<std::size_t> steps;
};

// Fills the buffer with `data`, then runs sample -> train_step, syncing the
// target every target_sync_every steps.
FitResult fit(QNet initial, std::span<const Transition> data, const TrainerConfig& config,
              const FitHooks& hooks = {});

// Collects `episodes` uniform-random rollouts from the environment and fits
// on them.
FitResult fit_env(QNet initial, StagedEnv& env, std::size_t episodes, const TrainerConfig& config,
                  const FitHooks& hooks = {});

}  // namespace escq
