#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "escq/core.hpp"

namespace escq {

struct JudgeScale {
  int min = 1;
  int max = 5;
  bool contains(int score) const { return score >= min && score <= max; }
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual int score(const DialogueState& state, StrategyId action, std::string_view response) const = 0;
  virtual JudgeScale scale() const = 0;
};

// Scores a strategy by how well it follows the I -> II -> III progression.
//
//   score = 3 + [stage(action) == expected stage of the progress tercile]
//             + [0 <= rank(action) - rank(previous) <= 1]
//             - [rank(action) - rank(previous) <= -2]
//
// where rank is 1..3 for staged strategies and 0 for unstaged or absent ones,
// and the tercile of progress t within `horizon` expects I for 3t < T, II for
// 3t < 2T and III otherwise. With probability `noise` the score moves by +-1
// (keyed on the seed and the scored content). The result is clamped.
class SyntheticJudge : public Judge {
 public:
  explicit SyntheticJudge(StrategyCatalog catalog, std::uint64_t seed = 0, std::size_t horizon = 8,
                          JudgeScale scale = {}, double noise = 0.1);

  int score(const DialogueState& state, StrategyId action, std::string_view response) const override;
  JudgeScale scale() const override { return scale_; }

  // Score before noise and clamping.
  int base_score(std::size_t progress, std::optional<StrategyId> previous, StrategyId action) const;
  static Stage expected_stage(std::size_t progress, std::size_t horizon);

 private:
  int rank(std::optional<StrategyId> id) const;

  StrategyCatalog catalog_;
  std::uint64_t seed_;
  std::size_t horizon_;
  JudgeScale scale_;
  double noise_;
};

struct RewardMapping {
  enum class Kind { Identity, Affine };
  Kind kind = Kind::Identity;
  double center = 2.5;
  double half_width = 2.5;

  static RewardMapping identity() { return {}; }
  static RewardMapping affine(double center = 2.5, double half_width = 2.5) {
    return {Kind::Affine, center, half_width};
  }
  double apply(int score) const;
};

// Gold transitions get +1; each is followed by one sibling with a different,
// uniformly drawn action and reward -1 (same state, next state and terminal
// flag). Output order: gold_0, negative_0, gold_1, negative_1, ...
std::vector<Transition> imitation_rewards(std::span<const Transition> gold,
                                          const StrategyCatalog& catalog, std::uint64_t seed);

// Rewards every transition with mapping(judge.score(...)). Any judge error is
// rethrown as JudgeFailure and nothing is returned. Up to `concurrency` judge
// calls run at once.
std::vector<Transition> distill_rewards(std::span<const Transition> transitions, const Judge& judge,
                                        RewardMapping mapping = {}, std::size_t concurrency = 1);

// Prompt asking a chat model to rate a supporter response.
std::string render_judge_prompt(const DialogueState& state, std::string_view response,
                                JudgeScale scale = {});

// First integer in a free-text reply. MalformedReply when there is none,
// OutOfRange when it falls outside the scale.
int parse_judge_reply(std::string_view reply, JudgeScale scale);

struct RemoteJudgeConfig {
  std::string endpoint = "http://127.0.0.1:8000/v1/chat/completions";
  std::string model = "gpt-4";
  std::string api_key;
  JudgeScale scale;
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{250};
  double backoff_factor = 2.0;
  std::chrono::milliseconds timeout{30000};
  std::string cache_dir;  // empty disables the on-disk cache
  bool log_bodies = false;
};

// Chat-completion client. Replies are cached by the hash of (model, prompt),
// both in memory and, when configured, as files named by that hash.
class RemoteJudge : public Judge {
 public:
  explicit RemoteJudge(RemoteJudgeConfig config);

  int score(const DialogueState& state, StrategyId action, std::string_view response) const override;
  JudgeScale scale() const override { return config_.scale; }

  // Sends one prompt, honoring the cache and retry policy; returns the raw
  // reply text.
  std::string complete(const std::string& prompt) const;
  std::size_t requests_sent() const;

 private:
  std::string request_once(const std::string& prompt) const;

  RemoteJudgeConfig config_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, std::string> memo_;
  mutable std::size_t requests_ = 0;
};

}  // namespace escq
