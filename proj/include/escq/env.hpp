#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "escq/core.hpp"
#include "escq/rewards.hpp"
#include "escq/util.hpp"

namespace escq {

enum class RewardSource { StageMatch, Judge };

// Fixed supporter utterance for a strategy; the environment speaks with it and
// dataset evaluation uses it as the hypothesis text.
std::string template_response(const StrategyCatalog& catalog, StrategyId action);

std::string_view to_string(RewardSource source);
RewardSource parse_reward_source(std::string_view text);

struct StagedEnvConfig {
  std::size_t horizon = 8;
  // ESConv session counts per emotion.
  std::vector<std::pair<std::string, double>> emotion_weights{
      {"anxiety", 354}, {"depression", 334}, {"sadness", 308}, {"anger", 111},
      {"fear", 95},     {"shame", 42},       {"disgust", 40},  {"nervousness", 13}};
  // Probability that the expected stage moves up one step after an action
  // whose stage matches it, and after any other action.
  double advance_on_match = 0.8;
  double advance_otherwise = 0.2;
  RewardSource reward_source = RewardSource::StageMatch;
  std::uint64_t seed = 0;
  std::size_t max_states = 10000;

  void validate() const;
};

// Hidden state: step t, expected stage sigma, emotion index into
// emotion_weights, and the stage of the previous strategy (nullopt before the
// first one, Stage::None after an unstaged one).
struct LatentState {
  std::size_t t = 0;
  Stage sigma = Stage::I;
  std::size_t emotion = 0;
  std::optional<Stage> last;
  bool operator==(const LatentState&) const = default;
};

struct StepResult {
  std::optional<DialogueState> next_state;
  double reward = 0.0;
  bool terminal = false;
  std::string response;
};

// Staged support conversation. Utterances are templates determined by the
// latent state, so the latent state can be recovered from the dialogue state.
//
// Rewards under StageMatch: +1 when stage(a) == sigma, -1 for a staged action
// below sigma, 0 otherwise. Under Judge: the judge score of the templated
// response.
class StagedEnv {
 public:
  explicit StagedEnv(StagedEnvConfig config, StrategyCatalog catalog = StrategyCatalog::esconv(),
                     std::shared_ptr<const Judge> judge = nullptr);

  DialogueState reset(std::uint64_t seed);
  StepResult step(StrategyId action);

  bool active() const { return active_; }
  const LatentState& latent() const { return latent_; }
  const DialogueState& state() const { return state_; }
  const StagedEnvConfig& config() const { return config_; }
  const StrategyCatalog& catalog() const { return catalog_; }
  const Judge* judge() const { return judge_.get(); }

  // Template text.
  std::string description(std::size_t emotion) const;
  static std::string query(Stage sigma, std::size_t t);
  std::string response(StrategyId action) const;

  // Recovers the latent tuple from a state produced by this environment.
  LatentState latent_of(const DialogueState& state) const;
  // A dialogue state whose text and annotations render `latent`.
  DialogueState representative_state(const LatentState& latent) const;

  // Reward for taking `action` in `state` (whose latent is `latent`).
  double reward(const LatentState& latent, const DialogueState& state, StrategyId action) const;
  // Probability that sigma advances after `action`.
  double advance_probability(const LatentState& latent, StrategyId action) const;

 private:
  StagedEnvConfig config_;
  StrategyCatalog catalog_;
  std::shared_ptr<const Judge> judge_;
  std::vector<double> weights_;
  bool esconv_catalog_ = false;
  Rng rng_;
  LatentState latent_;
  DialogueState state_;
  bool active_ = false;
};

struct TabularMDP {
  int num_actions = 0;
  std::vector<LatentState> states;  // may be empty for hand-built MDPs
  // transitions[s][a - 1] = sparse list of (next state, probability).
  std::vector<std::vector<std::vector<std::pair<std::size_t, double>>>> transitions;
  std::vector<std::vector<double>> rewards;  // rewards[s][a - 1]
  std::vector<bool> terminal;

  std::size_t size() const { return transitions.size(); }
  std::optional<std::size_t> index_of(const LatentState& latent) const;
  std::string to_json() const;
};

// Reachable latent states in (t, sigma, emotion, last) order with exact
// transition probabilities and expected rewards.
TabularMDP to_tabular(const StagedEnv& env);

struct ValueIterationResult {
  std::vector<std::vector<double>> q;  // q[s][a - 1]; empty rows for terminals
  std::vector<double> v;
  std::vector<StrategyId> policy;  // 0 for terminal states
  std::size_t iterations = 0;
};

// Bellman optimality backups until the largest change in Q drops below tol
// and below tol * (1 - gamma) / gamma, which keeps Q within tol of the fixed
// point. The policy takes the smallest id among maximizers.
ValueIterationResult value_iteration(const TabularMDP& mdp, double gamma, double tol);

// A policy maps the current state to an action; it may draw from `rng`.
using Policy = std::function<StrategyId(const DialogueState& state, Rng& rng)>;

Policy uniform_policy(int num_actions);
// Follows the value-iteration policy, decoding latent states from the text.
Policy tabular_policy(const StagedEnv& env, const TabularMDP& mdp, std::vector<StrategyId> policy);
// Dataset-like behavior: "Others" with probability p_other, otherwise a
// strategy of the expected stage with probability p_match, otherwise a
// uniformly drawn staged strategy.
Policy demonstrator_policy(const StagedEnv& env, double p_match = 0.35, double p_other = 0.178);

struct Rollout {
  std::vector<Transition> steps;
  std::vector<LatentState> latents;  // latent state before each step
};

Rollout rollout(StagedEnv& env, const Policy& policy, std::uint64_t seed);
std::vector<Rollout> rollouts(StagedEnv& env, const Policy& policy, std::size_t episodes,
                              std::uint64_t seed);
std::vector<Transition> flatten(const std::vector<Rollout>& runs);
Episode to_episode(const Rollout& run, const StagedEnv& env, std::string session_id);

}  // namespace escq
