#include "escq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "escq/error.hpp"

namespace escq {

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
  if (capacity_ == 0) throw Error(ErrorCode::kInvalidArgument, "replay capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity_, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw Error(ErrorCode::kIndexOutOfRange, "replay index " + std::to_string(i));
  return items_[(head_ + i) % items_.size()];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n) {
  if (items_.empty()) throw Error(ErrorCode::kEmpty, "replay buffer is empty");
  std::vector<std::size_t> out(n);
  for (auto& i : out) i = rng_.uniform_index(items_.size());
  return out;
}

std::vector<std::size_t> ReplayBuffer::next_in_order(std::size_t n) {
  if (items_.empty()) throw Error(ErrorCode::kEmpty, "replay buffer is empty");
  std::vector<std::size_t> out(n);
  for (auto& i : out) {
    i = cursor_ % items_.size();
    cursor_ = (cursor_ + 1) % items_.size();
  }
  return out;
}

TrainerConfig TrainerConfig::defaults_for(Backend backend) {
  TrainerConfig c;
  c.learning_rate = backend == Backend::Seq ? 5e-6 : 2e-3;
  return c;
}

void TrainerConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (!(gamma >= 0.0 && gamma < 1.0)) fail("gamma must be in [0, 1)");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (target_sync_every == 0) fail("target_sync_every must be positive");
  if (epochs == 0) fail("epochs must be positive");
  if (window == 0) fail("window must be positive");
  if (buffer_capacity == 0) fail("buffer_capacity must be positive");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  if (threads == 0) fail("threads must be positive");
}

std::string TrainLog::to_csv() const {
  std::string out = "step,loss,mean_target,synced\n";
  for (const auto& e : entries) {
    out += std::to_string(e.step) + "," + format_double(e.loss) + "," + format_double(e.mean_target) + "," +
           (e.synced ? "1" : "0") + "\n";
  }
  return out;
}

std::vector<double> TrainLog::losses() const {
  std::vector<double> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.loss);
  return out;
}

double td_target(double reward, const std::optional<DialogueState>& next_state, bool terminal,
                 const QNet& target, double gamma) {
  if (terminal) {
    if (next_state) throw Error(ErrorCode::kInvalidArgument, "terminal transition with a next state");
    return reward;
  }
  if (!next_state) throw Error(ErrorCode::kMissingNextState, "non-terminal transition without a next state");
  if (gamma == 0.0) return reward;
  const QVector q = target.q_all(*next_state);
  return reward + gamma * *std::max_element(q.values.begin(), q.values.end());
}

namespace {

constexpr std::size_t kMaxChunks = 8;

}  // namespace

TdEvaluation evaluate_td(const QNet& online, const QNet& target, std::span<const Transition* const> batch,
                         double gamma, std::size_t threads) {
  if (batch.empty()) throw Error(ErrorCode::kEmpty, "empty batch");
  const std::size_t n = batch.size();
  const std::size_t P = online.num_params();
  const std::size_t chunks = std::min(kMaxChunks, n);
  TdEvaluation ev;
  ev.targets.resize(n);
  ev.q.resize(n);
  std::vector<std::vector<double>> partial(chunks);
  std::vector<double> sq(n);

  auto run_chunk = [&](std::size_t c, std::vector<double>& scratch) {
    const std::size_t begin = c * n / chunks;
    const std::size_t end = (c + 1) * n / chunks;
    partial[c].assign(P, 0.0);
    for (std::size_t i = begin; i < end; ++i) {
      const Transition& t = *batch[i];
      ev.targets[i] = td_target(t.reward, t.next_state, t.terminal, target, gamma);
      std::fill(scratch.begin(), scratch.end(), 0.0);
      ev.q[i] = online.accumulate_grad(t.state, t.action, 1.0, scratch);
      const double err = ev.targets[i] - ev.q[i];
      sq[i] = err * err;
      const double coef = -2.0 * err / static_cast<double>(n);
      for (std::size_t j = 0; j < P; ++j) partial[c][j] += coef * scratch[j];
    }
  };

  const std::size_t workers = std::min(threads, chunks);
  if (workers <= 1) {
    std::vector<double> scratch(P);
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c, scratch);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          std::vector<double> scratch(P);
          for (std::size_t c = w; c < chunks; c += workers) run_chunk(c, scratch);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  ev.grad.assign(P, 0.0);
  for (std::size_t c = 0; c < chunks; ++c) {
    for (std::size_t j = 0; j < P; ++j) ev.grad[j] += partial[c][j];
  }
  double total = 0.0;
  for (double x : sq) total += x;
  ev.loss = total / static_cast<double>(n);
  return ev;
}

TdEvaluation evaluate_td(const QNet& online, const QNet& target, std::span<const Transition> batch,
                         double gamma, std::size_t threads) {
  std::vector<const Transition*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& t : batch) ptrs.push_back(&t);
  return evaluate_td(online, target, ptrs, gamma, threads);
}

Adam::Adam(std::size_t size, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(ScorerParams& params, std::span<const double> grad) {
  if (grad.size() != m_.size() || params.size() != m_.size()) {
    throw Error(ErrorCode::kLengthMismatch, "optimizer state size");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.visit([&](auto& w) {
    using Real = typename std::decay_t<decltype(w)>::value_type;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      const double update = lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
      w[i] = static_cast<Real>(static_cast<double>(w[i]) - update);
    }
  });
}

double clip_global_norm(std::span<double> grad, double max_norm) {
  double sum = 0.0;
  for (double g : grad) sum += g * g;
  const double norm = std::sqrt(sum);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grad) g *= scale;
  }
  return norm;
}

TrainStepResult train_step(QNet& online, const QNet& target, std::span<const Transition* const> batch,
                           const TrainerConfig& config, Adam& optimizer) {
  TdEvaluation ev = evaluate_td(online, target, batch, config.gamma, config.threads);
  TrainStepResult r;
  r.loss = ev.loss;
  double sum = 0.0;
  for (double y : ev.targets) sum += y;
  r.mean_target = sum / static_cast<double>(ev.targets.size());
  r.grad_norm = clip_global_norm(ev.grad, config.clip_norm);
  optimizer.step(online.params(), ev.grad);
  return r;
}

void sync_target(const QNet& online, QNet& target) { target = online; }

FitResult fit(QNet initial, std::span<const Transition> data, const TrainerConfig& config, const FitHooks& hooks) {
  config.validate();
  if (data.size() < config.batch_size) {
    throw Error(ErrorCode::kInsufficientData, std::to_string(data.size()) + " transitions for batch size " +
                                                  std::to_string(config.batch_size));
  }
  ReplayBuffer buffer(config.buffer_capacity, derive_seed(config.seed, 0x7e91));
  for (const auto& t : data) buffer.push(t);

  FitResult result{std::move(initial), {}};
  QNet target = result.online;
  Adam adam(result.online.num_params(), config.learning_rate);
  const std::size_t steps =
      hooks.steps.value_or(std::max<std::size_t>(1, config.epochs * (data.size() / config.batch_size)));
  result.log.entries.reserve(steps);

  std::vector<const Transition*> batch(config.batch_size);
  for (std::size_t step = 1; step <= steps; ++step) {
    const auto idx = config.sampling == Sampling::Uniform ? buffer.sample_indices(config.batch_size)
                                                          : buffer.next_in_order(config.batch_size);
    for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = &buffer.at(idx[i]);
    const TrainStepResult r = train_step(result.online, target, batch, config, adam);
    const bool synced = step % config.target_sync_every == 0;
    if (synced) sync_target(result.online, target);
    result.log.entries.push_back({step, r.loss, r.mean_target, synced});
    if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0 && hooks.on_checkpoint) {
      hooks.on_checkpoint(step, result.online);
    }
  }
  return result;
}

FitResult fit_env(QNet initial, StagedEnv& env, std::size_t episodes, const TrainerConfig& config,
                  const FitHooks& hooks) {
  const auto runs = rollouts(env, uniform_policy(env.catalog().size()), episodes, derive_seed(config.seed, 0xe5));
  const auto data = flatten(runs);
  return fit(std::move(initial), data, config, hooks);
}

}  // namespace escq
