#include "escq/env.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "escq/error.hpp"
#include "json.hpp"

namespace escq {

namespace {

constexpr std::array<std::array<const char*, 3>, 3> kQueries{{
    {"I don't really know where to start, everything feels heavy.",
     "It has been building up for weeks and I can't explain it.",
     "I am not sure anyone understands what is going on with me."},
    {"Talking about it makes me realize how hurt I still am.",
     "Sometimes I wonder if I am the only one who feels like this.",
     "I just want someone to tell me my feelings make sense."},
    {"What can I actually do to make things better?",
     "Do you have any ideas for the next step?",
     "I think I am ready to try something different."},
}};

constexpr std::array<const char*, 8> kEsconvResponses{
    "Can you tell me more about what has been happening?",
    "So you are saying this has been weighing on you for a while.",
    "It sounds like you are feeling really overwhelmed right now.",
    "I went through something similar once and it was hard for me too.",
    "You are doing the right thing by reaching out, and you will get through this.",
    "Maybe you could try writing down one small goal for this week.",
    "Many people find that regular sleep and exercise help with stress.",
    "I see. Thank you for sharing that with me.",
};

Stage next_stage(Stage s) {
  switch (s) {
    case Stage::I: return Stage::II;
    case Stage::II: return Stage::III;
    default: return s;
  }
}

std::optional<Stage> stage_of_id(const StrategyCatalog& catalog, std::optional<StrategyId> id) {
  if (!id || !catalog.contains(*id)) return std::nullopt;
  return catalog.stage_of(*id);
}

}  // namespace

std::string_view to_string(RewardSource source) {
  return source == RewardSource::StageMatch ? "stage_match" : "judge";
}

RewardSource parse_reward_source(std::string_view text) {
  const std::string key = to_lower(text);
  if (key == "stage_match") return RewardSource::StageMatch;
  if (key == "judge") return RewardSource::Judge;
  throw Error(ErrorCode::kInvalidArgument, "unknown reward source '" + std::string(text) + "'");
}

void StagedEnvConfig::validate() const {
  if (horizon < 2) throw Error(ErrorCode::kInvalidArgument, "horizon must be at least 2");
  if (emotion_weights.empty()) throw Error(ErrorCode::kInvalidArgument, "no emotions configured");
  double total = 0.0;
  for (const auto& [label, w] : emotion_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::kInvalidArgument, "bad weight for " + label);
    total += w;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::kInvalidArgument, "emotion weights sum to zero");
  for (double p : {advance_on_match, advance_otherwise}) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "advance probability outside [0, 1]");
  }
}

StagedEnv::StagedEnv(StagedEnvConfig config, StrategyCatalog catalog, std::shared_ptr<const Judge> judge)
    : config_(std::move(config)), catalog_(std::move(catalog)), judge_(std::move(judge)) {
  config_.validate();
  for (const auto& [label, w] : config_.emotion_weights) weights_.push_back(w);
  esconv_catalog_ = catalog_ == StrategyCatalog::esconv();
  if (config_.reward_source == RewardSource::Judge && !judge_) {
    judge_ = std::make_shared<SyntheticJudge>(catalog_, config_.seed, config_.horizon);
  }
}

std::string StagedEnv::description(std::size_t emotion) const {
  return "Lately I have been struggling with " + config_.emotion_weights.at(emotion).first +
         " because of problems at work and at home.";
}

std::string StagedEnv::query(Stage sigma, std::size_t t) {
  if (!is_staged(sigma)) throw Error(ErrorCode::kInvalidArgument, "expected stage must be staged");
  return kQueries[static_cast<std::size_t>(sigma) - 1][t % 3];
}

std::string template_response(const StrategyCatalog& catalog, StrategyId action) {
  const Strategy& s = catalog.at(action);
  if (catalog == StrategyCatalog::esconv()) return kEsconvResponses[static_cast<std::size_t>(action - 1)];
  return "Let me respond with " + to_lower(s.name) + ".";
}

std::string StagedEnv::response(StrategyId action) const {
  if (esconv_catalog_) return kEsconvResponses[static_cast<std::size_t>(catalog_.at(action).id - 1)];
  return template_response(catalog_, action);
}

DialogueState StagedEnv::reset(std::uint64_t seed) {
  rng_ = Rng(derive_seed(config_.seed, seed));
  latent_ = LatentState{0, Stage::I, rng_.categorical(weights_), std::nullopt};
  state_ = DialogueState{description(latent_.emotion), {config_.emotion_weights[latent_.emotion].first, std::nullopt},
                         {}, query(latent_.sigma, 0)};
  active_ = true;
  return state_;
}

double StagedEnv::reward(const LatentState& latent, const DialogueState& state, StrategyId action) const {
  if (config_.reward_source == RewardSource::Judge) {
    return static_cast<double>(judge_->score(state, action, response(action)));
  }
  const Stage s = catalog_.stage_of(action);
  if (s == latent.sigma) return 1.0;
  if (is_staged(s) && static_cast<int>(s) < static_cast<int>(latent.sigma)) return -1.0;
  return 0.0;
}

double StagedEnv::advance_probability(const LatentState& latent, StrategyId action) const {
  if (latent.sigma == Stage::III) return 0.0;
  return catalog_.stage_of(action) == latent.sigma ? config_.advance_on_match : config_.advance_otherwise;
}

StepResult StagedEnv::step(StrategyId action) {
  if (!active_) throw Error(ErrorCode::kEpisodeFinished, "call reset() before step()");
  if (!catalog_.contains(action)) throw Error(ErrorCode::kIndexOutOfRange, "action " + std::to_string(action));
  StepResult out;
  out.response = response(action);
  out.reward = reward(latent_, state_, action);
  // One draw per step keeps the random stream aligned across policies.
  const double u = rng_.uniform01();
  if (u < advance_probability(latent_, action)) latent_.sigma = next_stage(latent_.sigma);
  latent_.last = catalog_.stage_of(action);
  latent_.t += 1;
  state_.history.push_back(Turn::seeker(state_.query));
  state_.history.push_back(Turn::supporter(out.response, action));
  if (latent_.t >= config_.horizon) {
    out.terminal = true;
    active_ = false;
    return out;
  }
  state_.query = query(latent_.sigma, latent_.t);
  out.next_state = state_;
  return out;
}

LatentState StagedEnv::latent_of(const DialogueState& state) const {
  LatentState l;
  l.t = state.progress();
  bool found = false;
  for (std::size_t s = 0; s < 3 && !found; ++s) {
    if (kQueries[s][l.t % 3] == state.query) {
      l.sigma = static_cast<Stage>(s + 1);
      found = true;
    }
  }
  if (!found) throw Error(ErrorCode::kInvalidArgument, "state was not produced by this environment");
  bool emotion_found = false;
  for (std::size_t e = 0; e < config_.emotion_weights.size(); ++e) {
    if (config_.emotion_weights[e].first == state.emotion.label) {
      l.emotion = e;
      emotion_found = true;
      break;
    }
  }
  if (!emotion_found) throw Error(ErrorCode::kUnknownEmotion, state.emotion.label);
  l.last = stage_of_id(catalog_, state.last_strategy());
  return l;
}

DialogueState StagedEnv::representative_state(const LatentState& latent) const {
  DialogueState s;
  s.description = description(latent.emotion);
  s.emotion = {config_.emotion_weights.at(latent.emotion).first, std::nullopt};
  s.query = query(latent.sigma, latent.t);
  StrategyId last_id = 1;
  if (latent.last) {
    for (const auto& strategy : catalog_.strategies()) {
      if (strategy.stage == *latent.last) {
        last_id = strategy.id;
        break;
      }
    }
  }
  for (std::size_t i = 0; i < latent.t; ++i) {
    const StrategyId a = i + 1 == latent.t ? last_id : 1;
    s.history.push_back(Turn::seeker(query(Stage::I, i)));
    s.history.push_back(Turn::supporter(response(a), a));
  }
  return s;
}

std::optional<std::size_t> TabularMDP::index_of(const LatentState& latent) const {
  const auto it = std::find(states.begin(), states.end(), latent);
  if (it == states.end()) return std::nullopt;
  return static_cast<std::size_t>(it - states.begin());
}

std::string TabularMDP::to_json() const {
  using nlohmann::json;
  json j;
  j["num_actions"] = num_actions;
  json st = json::array();
  for (const auto& l : states) {
    st.push_back({{"t", l.t},
                  {"sigma", to_string(l.sigma)},
                  {"emotion", l.emotion},
                  {"last", l.last ? json(to_string(*l.last)) : json(nullptr)}});
  }
  j["states"] = st;
  json p = json::array();
  for (std::size_t s = 0; s < transitions.size(); ++s) {
    for (std::size_t a = 0; a < transitions[s].size(); ++a) {
      for (const auto& [next, prob] : transitions[s][a]) p.push_back({s, a + 1, next, prob});
    }
  }
  j["P"] = p;
  j["R"] = rewards;
  std::vector<std::size_t> term;
  for (std::size_t s = 0; s < terminal.size(); ++s) {
    if (terminal[s]) term.push_back(s);
  }
  j["terminals"] = term;
  return j.dump();
}

TabularMDP to_tabular(const StagedEnv& env) {
  const auto& cfg = env.config();
  const std::size_t E = cfg.emotion_weights.size();
  const int K = env.catalog().size();

  std::vector<std::optional<Stage>> lasts;
  for (const auto& s : env.catalog().strategies()) {
    if (std::find(lasts.begin(), lasts.end(), std::optional<Stage>(s.stage)) == lasts.end()) lasts.push_back(s.stage);
  }
  std::sort(lasts.begin(), lasts.end(), [](auto a, auto b) { return stage_order(*a) < stage_order(*b); });

  auto sigmas_at = [](std::size_t t) {
    std::vector<Stage> out{Stage::I};
    if (t >= 1) out.push_back(Stage::II);
    if (t >= 2) out.push_back(Stage::III);
    return out;
  };
  std::size_t count = E;
  for (std::size_t t = 1; t <= cfg.horizon; ++t) count += sigmas_at(t).size() * lasts.size() * E;
  if (count > cfg.max_states) {
    throw Error(ErrorCode::kStateSpaceTooLarge,
                std::to_string(count) + " states exceed the cap of " + std::to_string(cfg.max_states));
  }

  TabularMDP mdp;
  mdp.num_actions = K;
  for (std::size_t e = 0; e < E; ++e) mdp.states.push_back({0, Stage::I, e, std::nullopt});
  for (std::size_t t = 1; t <= cfg.horizon; ++t) {
    for (Stage sigma : sigmas_at(t)) {
      for (std::size_t e = 0; e < E; ++e) {
        for (const auto& last : lasts) mdp.states.push_back({t, sigma, e, last});
      }
    }
  }
  // Index lookup by construction order.
  auto index = [&](const LatentState& l) -> std::size_t {
    if (l.t == 0) return l.emotion;
    std::size_t base = E;
    for (std::size_t t = 1; t < l.t; ++t) base += sigmas_at(t).size() * lasts.size() * E;
    const std::size_t si = static_cast<std::size_t>(l.sigma) - 1;
    const std::size_t li = static_cast<std::size_t>(std::find(lasts.begin(), lasts.end(), l.last) - lasts.begin());
    return base + (si * E + l.emotion) * lasts.size() + li;
  };

  const std::size_t n = mdp.states.size();
  mdp.transitions.assign(n, {});
  mdp.rewards.assign(n, {});
  mdp.terminal.assign(n, false);
  for (std::size_t s = 0; s < n; ++s) {
    const LatentState& l = mdp.states[s];
    if (index(l) != s) throw Error(ErrorCode::kInvalidArgument, "state enumeration out of order");
    if (l.t == cfg.horizon) {
      mdp.terminal[s] = true;
      continue;
    }
    const DialogueState rep = env.representative_state(l);
    mdp.transitions[s].resize(static_cast<std::size_t>(K));
    mdp.rewards[s].resize(static_cast<std::size_t>(K));
    for (StrategyId a = 1; a <= K; ++a) {
      auto& row = mdp.transitions[s][static_cast<std::size_t>(a - 1)];
      mdp.rewards[s][static_cast<std::size_t>(a - 1)] = env.reward(l, rep, a);
      const double p = env.advance_probability(l, a);
      LatentState stay = l;
      stay.t += 1;
      stay.last = env.catalog().stage_of(a);
      LatentState up = stay;
      up.sigma = next_stage(l.sigma);
      if (p < 1.0) row.emplace_back(index(stay), 1.0 - p);
      if (p > 0.0) row.emplace_back(index(up), p);
    }
  }
  return mdp;
}

ValueIterationResult value_iteration(const TabularMDP& mdp, double gamma, double tol) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error(ErrorCode::kInvalidArgument, "gamma must be in [0, 1)");
  if (!(tol > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tol must be positive");
  const std::size_t n = mdp.size();
  const auto K = static_cast<std::size_t>(mdp.num_actions);
  ValueIterationResult r;
  r.q.assign(n, {});
  for (std::size_t s = 0; s < n; ++s) {
    if (!mdp.terminal[s]) r.q[s].assign(K, 0.0);
  }
  r.v.assign(n, 0.0);
  std::vector<double> v_next(n, 0.0);
  while (true) {
    ++r.iterations;
    double change = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      if (mdp.terminal[s]) continue;
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < K; ++a) {
        double q = mdp.rewards[s][a];
        for (const auto& [next, p] : mdp.transitions[s][a]) q += gamma * p * r.v[next];
        change = std::max(change, std::abs(q - r.q[s][a]));
        r.q[s][a] = q;
        best = std::max(best, q);
      }
      v_next[s] = best;
    }
    r.v.swap(v_next);
    // ||Q - Q*|| <= gamma / (1 - gamma) * change, so this also bounds the
    // distance to the fixed point by tol.
    if (change < tol && change * gamma < tol * (1.0 - gamma)) break;
  }
  r.policy.assign(n, 0);
  for (std::size_t s = 0; s < n; ++s) {
    if (mdp.terminal[s]) continue;
    r.v[s] = *std::max_element(r.q[s].begin(), r.q[s].end());
    r.policy[s] = static_cast<StrategyId>(std::max_element(r.q[s].begin(), r.q[s].end()) - r.q[s].begin()) + 1;
  }
  return r;
}

Policy uniform_policy(int num_actions) {
  if (num_actions < 1) throw Error(ErrorCode::kInvalidArgument, "no actions");
  return [num_actions](const DialogueState&, Rng& rng) {
    return static_cast<StrategyId>(rng.uniform_index(static_cast<std::size_t>(num_actions))) + 1;
  };
}

Policy tabular_policy(const StagedEnv& env, const TabularMDP& mdp, std::vector<StrategyId> policy) {
  if (policy.size() != mdp.size()) throw Error(ErrorCode::kLengthMismatch, "policy size");
  return [&env, &mdp, policy = std::move(policy)](const DialogueState& state, Rng&) {
    const auto s = mdp.index_of(env.latent_of(state));
    if (!s) throw Error(ErrorCode::kInvalidArgument, "state outside the tabular model");
    return policy[*s];
  };
}

Policy demonstrator_policy(const StagedEnv& env, double p_match, double p_other) {
  std::vector<StrategyId> staged;
  std::optional<StrategyId> other;
  for (const auto& s : env.catalog().strategies()) {
    if (is_staged(s.stage)) {
      staged.push_back(s.id);
    } else {
      other = s.id;
    }
  }
  return [&env, staged, other, p_match, p_other](const DialogueState& state, Rng& rng) {
    if (other && rng.uniform01() < p_other) return *other;
    if (rng.uniform01() < p_match) {
      const Stage sigma = env.latent_of(state).sigma;
      std::vector<StrategyId> matching;
      for (StrategyId id : staged) {
        if (env.catalog().stage_of(id) == sigma) matching.push_back(id);
      }
      if (!matching.empty()) return matching[rng.uniform_index(matching.size())];
    }
    return staged[rng.uniform_index(staged.size())];
  };
}

Rollout rollout(StagedEnv& env, const Policy& policy, std::uint64_t seed) {
  Rollout run;
  Rng rng(derive_seed(seed, 0x9a11));
  DialogueState state = env.reset(seed);
  while (true) {
    const LatentState latent = env.latent();
    const StrategyId a = policy(state, rng);
    StepResult r = env.step(a);
    Transition t;
    t.state = std::move(state);
    t.action = a;
    t.reward = r.reward;
    t.terminal = r.terminal;
    t.next_state = r.next_state;
    t.response = std::move(r.response);
    run.steps.push_back(std::move(t));
    run.latents.push_back(latent);
    if (r.terminal) break;
    state = std::move(*r.next_state);
  }
  return run;
}

std::vector<Rollout> rollouts(StagedEnv& env, const Policy& policy, std::size_t episodes, std::uint64_t seed) {
  std::vector<Rollout> out;
  out.reserve(episodes);
  for (std::size_t i = 0; i < episodes; ++i) out.push_back(rollout(env, policy, derive_seed(seed, i)));
  return out;
}

std::vector<Transition> flatten(const std::vector<Rollout>& runs) {
  std::vector<Transition> out;
  for (const auto& r : runs) out.insert(out.end(), r.steps.begin(), r.steps.end());
  return out;
}

Episode to_episode(const Rollout& run, const StagedEnv& env, std::string session_id) {
  if (run.steps.empty()) throw Error(ErrorCode::kEmptyEpisode, "empty rollout");
  Episode e;
  e.session_id = std::move(session_id);
  e.description = run.steps.front().state.description;
  e.emotion = run.steps.front().state.emotion;
  for (const auto& t : run.steps) {
    e.turns.push_back(Turn::seeker(t.state.query));
    e.turns.push_back(Turn::supporter(env.response(t.action), t.action));
  }
  return e;
}

}  // namespace escq
