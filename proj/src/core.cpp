#include "escq/core.hpp"

#include <algorithm>
#include <set>

#include "escq/error.hpp"
#include "escq/util.hpp"

namespace escq {

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::I: return "I";
    case Stage::II: return "II";
    case Stage::III: return "III";
    case Stage::None: return "-";
  }
  return "?";
}

int stage_order(Stage stage) {
  return stage == Stage::None ? 4 : static_cast<int>(stage);
}

StrategyCatalog::StrategyCatalog(std::vector<Strategy> strategies)
    : strategies_(std::move(strategies)) {
  if (strategies_.size() < 2) {
    throw Error(ErrorCode::kCatalogTooSmall, "catalog needs at least 2 strategies");
  }
  std::set<std::string> names;
  int unstaged = 0;
  for (std::size_t i = 0; i < strategies_.size(); ++i) {
    const auto& s = strategies_[i];
    if (s.id != static_cast<int>(i) + 1) {
      throw Error(ErrorCode::kInvalidArgument, "strategy ids must be contiguous from 1");
    }
    if (s.name.empty() || !names.insert(normalize_name(s.name)).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate or empty strategy name: " + s.name);
    }
    if (s.stage == Stage::None) ++unstaged;
  }
  if (unstaged > 1) {
    throw Error(ErrorCode::kInvalidArgument, "at most one strategy may be unstaged");
  }
}

StrategyCatalog StrategyCatalog::esconv() {
  return StrategyCatalog({
      {1, "Question", "Que.", Stage::I},
      {2, "Restatement or Paraphrasing", "Res.& Par.", Stage::I},
      {3, "Reflection of Feelings", "Ref.", Stage::II},
      {4, "Self-disclosure", "Self-Dis.", Stage::II},
      {5, "Affirmation and Reassurance", "Aff.& Rea.", Stage::III},
      {6, "Providing Suggestions", "Pro.", Stage::III},
      {7, "Information", "Inf.", Stage::III},
      {8, "Others", "Others", Stage::None},
  });
}

const Strategy& StrategyCatalog::at(StrategyId id) const {
  if (!contains(id)) {
    throw Error(ErrorCode::kIndexOutOfRange, "strategy id " + std::to_string(id));
  }
  return strategies_[static_cast<std::size_t>(id - 1)];
}

std::optional<StrategyId> StrategyCatalog::find(std::string_view name) const {
  const std::string key = normalize_name(name);
  for (const auto& s : strategies_) {
    if (normalize_name(s.name) == key) return s.id;
  }
  for (const auto& s : strategies_) {
    if (!s.abbreviation.empty() && normalize_name(s.abbreviation) == key) return s.id;
  }
  return std::nullopt;
}

StrategyId StrategyCatalog::resolve(std::string_view name) const {
  if (auto id = find(name)) return *id;
  throw Error(ErrorCode::kUnknownStrategy, "'" + std::string(name) + "'");
}

std::string StrategyCatalog::fingerprint() const {
  std::string blob;
  for (const auto& s : strategies_) {
    blob += std::to_string(s.id) + '\t' + s.name + '\t' + s.abbreviation + '\t' +
            std::string(to_string(s.stage)) + '\n';
  }
  return sha256_hex(blob);
}

EmotionVocabulary::EmotionVocabulary(std::vector<std::string> labels) {
  for (auto& l : labels) {
    std::string key = normalize_name(l);
    if (key.empty()) throw Error(ErrorCode::kInvalidArgument, "empty emotion label");
    if (std::find(labels_.begin(), labels_.end(), key) != labels_.end()) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate emotion label " + key);
    }
    labels_.push_back(std::move(key));
  }
  if (labels_.empty()) throw Error(ErrorCode::kInvalidArgument, "empty emotion vocabulary");
}

EmotionVocabulary EmotionVocabulary::esconv() {
  return EmotionVocabulary({"anger", "anxiety", "depression", "disgust", "fear",
                            "nervousness", "sadness", "shame"});
}

std::optional<std::size_t> EmotionVocabulary::index_of(std::string_view label) const {
  const std::string key = normalize_name(label);
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == key) return i;
  }
  return std::nullopt;
}

std::string_view to_string(Speaker speaker) {
  return speaker == Speaker::Seeker ? "seeker" : "supporter";
}

Turn Turn::seeker(std::string text, std::optional<Emotion> emotion) {
  return Turn{Speaker::Seeker, std::move(text), std::nullopt, std::move(emotion)};
}

Turn Turn::supporter(std::string text, std::optional<StrategyId> strategy) {
  return Turn{Speaker::Supporter, std::move(text), strategy, std::nullopt};
}

void Turn::validate() const {
  if (strategy && speaker != Speaker::Supporter) {
    throw Error(ErrorCode::kInvalidEpisode, "strategy annotated on a seeker turn");
  }
  if (emotion && speaker != Speaker::Seeker) {
    throw Error(ErrorCode::kInvalidEpisode, "emotion annotated on a supporter turn");
  }
}

std::size_t DialogueState::progress() const {
  return static_cast<std::size_t>(std::count_if(
      history.begin(), history.end(),
      [](const Turn& t) { return t.speaker == Speaker::Supporter; }));
}

std::optional<StrategyId> DialogueState::last_strategy() const {
  for (auto it = history.rbegin(); it != history.rend(); ++it) {
    if (it->speaker == Speaker::Supporter) return it->strategy;
  }
  return std::nullopt;
}

void Transition::validate(const StrategyCatalog& catalog) const {
  if (terminal == next_state.has_value()) {
    throw Error(ErrorCode::kInvalidArgument,
                "transition must be terminal exactly when next_state is absent");
  }
  if (!catalog.contains(action)) {
    throw Error(ErrorCode::kIndexOutOfRange, "action " + std::to_string(action));
  }
}

std::size_t Episode::supporter_turn_count() const {
  return static_cast<std::size_t>(std::count_if(
      turns.begin(), turns.end(),
      [](const Turn& t) { return t.speaker == Speaker::Supporter; }));
}

std::size_t Episode::annotated_turn_count() const {
  return static_cast<std::size_t>(std::count_if(turns.begin(), turns.end(), [](const Turn& t) {
    return t.speaker == Speaker::Supporter && t.strategy.has_value();
  }));
}

namespace {

std::size_t supporter_position(const Episode& episode, std::size_t supporter_index) {
  std::size_t seen = 0;
  for (std::size_t i = 0; i < episode.turns.size(); ++i) {
    if (episode.turns[i].speaker != Speaker::Supporter) continue;
    if (seen == supporter_index) return i;
    ++seen;
  }
  throw Error(ErrorCode::kIndexOutOfRange,
              "supporter turn " + std::to_string(supporter_index) + " of " +
                  std::to_string(seen));
}

}  // namespace

DialogueState build_state(const Episode& episode, std::size_t supporter_index) {
  const std::size_t pos = supporter_position(episode, supporter_index);
  if (pos == 0 || episode.turns[pos - 1].speaker != Speaker::Seeker) {
    throw Error(ErrorCode::kMissingQuery,
                "supporter turn " + std::to_string(supporter_index) +
                    " is not preceded by a seeker utterance");
  }
  const std::size_t query_pos = pos - 1;
  const Turn& query = episode.turns[query_pos];
  if (trim(query.text).empty()) {
    throw Error(ErrorCode::kMissingQuery, "empty seeker query");
  }

  DialogueState state;
  state.description = episode.description;
  state.emotion = episode.emotion;
  state.query = query.text;
  state.history.assign(episode.turns.begin(),
                       episode.turns.begin() + static_cast<std::ptrdiff_t>(query_pos));
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    const Turn& t = state.history[i];
    t.validate();
    if (i > 0 && t.speaker == state.history[i - 1].speaker) {
      throw Error(ErrorCode::kInvalidEpisode,
                  "history turns must alternate between seeker and supporter");
    }
  }
  if (!state.history.empty() && state.history.back().speaker == Speaker::Seeker) {
    throw Error(ErrorCode::kInvalidEpisode, "two consecutive seeker turns before query");
  }
  for (std::size_t i = query_pos + 1; i-- > 0;) {
    const Turn& t = episode.turns[i];
    if (t.speaker == Speaker::Seeker && t.emotion) {
      state.emotion = *t.emotion;
      break;
    }
  }
  return state;
}

std::vector<Transition> derive_transitions(const Episode& episode) {
  std::vector<std::size_t> annotated;  // supporter indices with a strategy
  std::vector<std::size_t> positions;
  std::size_t supporter_index = 0;
  for (std::size_t i = 0; i < episode.turns.size(); ++i) {
    const Turn& t = episode.turns[i];
    if (t.speaker != Speaker::Supporter) continue;
    if (t.strategy) {
      annotated.push_back(supporter_index);
      positions.push_back(i);
    }
    ++supporter_index;
  }
  if (annotated.empty()) {
    throw Error(ErrorCode::kEmptyEpisode,
                "episode '" + episode.session_id + "' has no annotated supporter turn");
  }

  std::vector<Transition> out;
  out.reserve(annotated.size());
  for (std::size_t k = 0; k < annotated.size(); ++k) {
    Transition tr;
    tr.state = build_state(episode, annotated[k]);
    tr.action = *episode.turns[positions[k]].strategy;
    tr.response = episode.turns[positions[k]].text;
    out.push_back(std::move(tr));
  }
  for (std::size_t k = 0; k + 1 < out.size(); ++k) {
    out[k].next_state = out[k + 1].state;
    out[k].terminal = false;
  }
  out.back().terminal = true;
  return out;
}

}  // namespace escq
