#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "escq/rewards.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <future>
#include <iostream>
#include <thread>

#include "escq/encoder.hpp"
#include "escq/error.hpp"
#include "escq/util.hpp"
#include "httplib.h"
#include "json.hpp"

namespace escq {

SyntheticJudge::SyntheticJudge(StrategyCatalog catalog, std::uint64_t seed, std::size_t horizon,
                               JudgeScale scale, double noise)
    : catalog_(std::move(catalog)), seed_(seed), horizon_(horizon), scale_(scale), noise_(noise) {
  if (horizon_ == 0) throw Error(ErrorCode::kInvalidArgument, "judge horizon must be positive");
  if (scale_.min > scale_.max) throw Error(ErrorCode::kInvalidArgument, "empty judge scale");
  if (!(noise_ >= 0.0 && noise_ <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "noise must be in [0, 1]");
}

Stage SyntheticJudge::expected_stage(std::size_t progress, std::size_t horizon) {
  if (3 * progress < horizon) return Stage::I;
  if (3 * progress < 2 * horizon) return Stage::II;
  return Stage::III;
}

int SyntheticJudge::rank(std::optional<StrategyId> id) const {
  if (!id || !catalog_.contains(*id)) return 0;
  return static_cast<int>(catalog_.stage_of(*id));
}

int SyntheticJudge::base_score(std::size_t progress, std::optional<StrategyId> previous,
                               StrategyId action) const {
  if (!catalog_.contains(action)) throw Error(ErrorCode::kIndexOutOfRange, "action " + std::to_string(action));
  int s = 3;
  if (catalog_.stage_of(action) == expected_stage(progress, horizon_)) ++s;
  const int delta = rank(action) - rank(previous);
  if (delta == 0 || delta == 1) ++s;
  if (delta <= -2) --s;
  return s;
}

int SyntheticJudge::score(const DialogueState& state, StrategyId action, std::string_view response) const {
  int s = base_score(state.progress(), state.last_strategy(), action);
  std::string key = state.description;
  key += '\x1f';
  key += state.query;
  key += '\x1f';
  key += std::to_string(action);
  key += '\x1f';
  key += response;
  key += '\x1f';
  key += std::to_string(state.progress());
  const std::uint64_t u = mix64(derive_seed(seed_, fnv1a64(key)));
  const double draw = static_cast<double>(u >> 11) * 0x1.0p-53;
  if (draw < noise_) s += (u & 1) ? 1 : -1;
  return std::clamp(s, scale_.min, scale_.max);
}

double RewardMapping::apply(int score) const {
  if (kind == Kind::Identity) return static_cast<double>(score);
  return (static_cast<double>(score) - center) / half_width;
}

std::vector<Transition> imitation_rewards(std::span<const Transition> gold,
                                          const StrategyCatalog& catalog, std::uint64_t seed) {
  if (catalog.size() < 2) throw Error(ErrorCode::kCatalogTooSmall, "imitation needs at least two strategies");
  Rng rng(seed);
  std::vector<Transition> out;
  out.reserve(2 * gold.size());
  for (const Transition& t : gold) {
    t.validate(catalog);
    Transition pos = t;
    pos.reward = 1.0;
    // Draw from the K - 1 other ids by skipping over the gold one.
    StrategyId other = static_cast<StrategyId>(rng.uniform_index(static_cast<std::size_t>(catalog.size() - 1))) + 1;
    if (other >= t.action) ++other;
    Transition neg = t;
    neg.action = other;
    neg.reward = -1.0;
    out.push_back(std::move(pos));
    out.push_back(std::move(neg));
  }
  return out;
}

std::vector<Transition> distill_rewards(std::span<const Transition> transitions, const Judge& judge,
                                        RewardMapping mapping, std::size_t concurrency) {
  std::vector<int> scores(transitions.size());
  auto score_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Transition& t = transitions[i];
      scores[i] = judge.score(t.state, t.action, t.response);
      if (!judge.scale().contains(scores[i])) {
        throw Error(ErrorCode::kOutOfRange, "judge score " + std::to_string(scores[i]));
      }
    }
  };
  try {
    const std::size_t workers = std::max<std::size_t>(1, std::min(concurrency, transitions.size()));
    if (workers == 1) {
      score_range(0, transitions.size());
    } else {
      std::vector<std::future<void>> jobs;
      const std::size_t per = (transitions.size() + workers - 1) / workers;
      for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = std::min(transitions.size(), w * per);
        const std::size_t end = std::min(transitions.size(), begin + per);
        jobs.push_back(std::async(std::launch::async, score_range, begin, end));
      }
      for (auto& j : jobs) j.wait();
      for (auto& j : jobs) j.get();
    }
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kJudgeFailure, e.what());
  }
  std::vector<Transition> out(transitions.begin(), transitions.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i].reward = mapping.apply(scores[i]);
  return out;
}

std::string render_judge_prompt(const DialogueState& state, std::string_view response, JudgeScale scale) {
  std::string out;
  out += "You are a psychological consultant providing support to a seeker. The seeker's basic situation is as follows:\n";
  out += "Emotion: " + render_emotion(state.emotion) + "\n";
  out += "Description: " + state.description + "\n";
  out += "Below is the conversation history between the seeker and the supporter:\n";
  out += render_history(state.history) + "\n";
  out += "The seeker's current query is:\n";
  out += state.query + "\n";
  out += "Please evaluate whether the response is appropriate:\n";
  out += std::string(response) + "\n";
  out += "Based on the information above, evaluate whether the response is suitable. Please remember to respond with a single integer number from " +
         std::to_string(scale.min) + " to " + std::to_string(scale.max) + ", where " + std::to_string(scale.min) +
         " indicates \"not suitable\" and " + std::to_string(scale.max) +
         " indicates \"very suitable\". Please also provide a brief explanation of your decision.";
  return out;
}

int parse_judge_reply(std::string_view reply, JudgeScale scale) {
  std::size_t i = 0;
  while (i < reply.size() && !std::isdigit(static_cast<unsigned char>(reply[i]))) ++i;
  if (i == reply.size()) throw Error(ErrorCode::kMalformedReply, "no integer in reply");
  const bool negative = i > 0 && reply[i - 1] == '-';
  std::size_t j = i;
  while (j < reply.size() && std::isdigit(static_cast<unsigned char>(reply[j]))) ++j;
  const std::string_view digits = reply.substr(i, j - i);
  if (digits.size() > 6) throw Error(ErrorCode::kOutOfRange, "judge score " + std::string(digits));
  int value = std::stoi(std::string(digits));
  if (negative) value = -value;
  if (!scale.contains(value)) throw Error(ErrorCode::kOutOfRange, "judge score " + std::to_string(value));
  return value;
}

namespace {

// Transient failures are retried; anything else aborts immediately.
struct Retryable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::pair<std::string, std::string> split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorCode::kInvalidArgument, "endpoint needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

RemoteJudge::RemoteJudge(RemoteJudgeConfig config) : config_(std::move(config)) {
  split_endpoint(config_.endpoint);
  if (config_.max_attempts < 1) throw Error(ErrorCode::kInvalidArgument, "max_attempts must be >= 1");
  if (!config_.cache_dir.empty()) std::filesystem::create_directories(config_.cache_dir);
}

std::size_t RemoteJudge::requests_sent() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

std::string RemoteJudge::request_once(const std::string& prompt) const {
  const auto [base, path] = split_endpoint(config_.endpoint);
  httplib::Client client(base);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  nlohmann::json body{{"model", config_.model},
                      {"temperature", 0},
                      {"messages", {{{"role", "user"}, {"content", prompt}}}}};
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
  const std::string payload = body.dump();
  if (config_.log_bodies) std::clog << "judge request: " << payload << "\n";
  {
    std::lock_guard lock(mutex_);
    ++requests_;
  }
  auto res = client.Post(path, headers, payload, "application/json");
  if (!res) throw Retryable("transport error: " + httplib::to_string(res.error()));
  if (config_.log_bodies) std::clog << "judge reply " << res->status << ": " << res->body << "\n";
  if (res->status == 429 || res->status >= 500) throw Retryable("HTTP " + std::to_string(res->status));
  if (res->status != 200) throw Error(ErrorCode::kJudgeFailure, "HTTP " + std::to_string(res->status));
  try {
    const auto reply = nlohmann::json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformedReply, std::string("unexpected reply body: ") + e.what());
  }
}

std::string RemoteJudge::complete(const std::string& prompt) const {
  const std::string key = sha256_hex(config_.model + "\n" + prompt);
  const std::string file =
      config_.cache_dir.empty() ? "" : (std::filesystem::path(config_.cache_dir) / (key + ".txt")).string();
  {
    std::lock_guard lock(mutex_);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    if (!file.empty() && std::filesystem::exists(file)) {
      std::string text = read_file(file);
      memo_.emplace(key, text);
      return text;
    }
  }
  auto delay = config_.initial_backoff;
  std::string last;
  for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
    try {
      std::string reply = request_once(prompt);
      std::lock_guard lock(mutex_);
      if (!file.empty()) write_file(file, reply);
      memo_.emplace(key, reply);
      return reply;
    } catch (const Retryable& e) {
      last = e.what();
    }
    if (attempt + 1 < config_.max_attempts) {
      std::this_thread::sleep_for(delay);
      delay = std::chrono::milliseconds(
          static_cast<long long>(static_cast<double>(delay.count()) * config_.backoff_factor));
    }
  }
  throw Error(ErrorCode::kTimeout,
              "judge unavailable after " + std::to_string(config_.max_attempts) + " attempts (" + last + ")");
}

int RemoteJudge::score(const DialogueState& state, StrategyId, std::string_view response) const {
  return parse_judge_reply(complete(render_judge_prompt(state, response, config_.scale)), config_.scale);
}

}  // namespace escq
