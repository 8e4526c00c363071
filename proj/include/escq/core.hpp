#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace escq {

// Support strategies are identified by their 1-based option index.
using StrategyId = int;

// ESC stages: Exploration (I), Comforting (II), Action (III). `None` marks
// strategies outside the stage progression ("Others").
enum class Stage { None = 0, I = 1, II = 2, III = 3 };

std::string_view to_string(Stage stage);
// I < II < III < None; the order used for stage-sorted matrices.
int stage_order(Stage stage);
inline bool is_staged(Stage stage) { return stage != Stage::None; }

struct Strategy {
  StrategyId id = 0;
  std::string name;
  std::string abbreviation;
  Stage stage = Stage::None;
  bool operator==(const Strategy&) const = default;
};

class StrategyCatalog {
 public:
  // Validates contiguous ids 1..K (K >= 2), unique names and at most one
  // unstaged entry.
  explicit StrategyCatalog(std::vector<Strategy> strategies);

  // The eight ESConv strategies with their stages.
  static StrategyCatalog esconv();

  int size() const { return static_cast<int>(strategies_.size()); }
  bool contains(StrategyId id) const { return id >= 1 && id <= size(); }
  const Strategy& at(StrategyId id) const;
  Stage stage_of(StrategyId id) const { return at(id).stage; }
  std::span<const Strategy> strategies() const { return strategies_; }

  // Case-insensitive, whitespace-normalized lookup by name or abbreviation.
  std::optional<StrategyId> find(std::string_view name) const;
  // As find(), throwing UnknownStrategy on a miss.
  StrategyId resolve(std::string_view name) const;

  // Content hash over names, abbreviations and stages.
  std::string fingerprint() const;

  bool operator==(const StrategyCatalog&) const = default;

 private:
  std::vector<Strategy> strategies_;
};

struct Emotion {
  std::string label;
  std::optional<int> intensity;  // 1..5 when annotated

  bool operator==(const Emotion&) const = default;
};

class EmotionVocabulary {
 public:
  explicit EmotionVocabulary(std::vector<std::string> labels);
  // anger, anxiety, depression, disgust, fear, nervousness, sadness, shame
  static EmotionVocabulary esconv();

  std::size_t size() const { return labels_.size(); }
  std::optional<std::size_t> index_of(std::string_view label) const;
  const std::string& label(std::size_t index) const { return labels_.at(index); }
  std::span<const std::string> labels() const { return labels_; }

 private:
  std::vector<std::string> labels_;
};

enum class Speaker { Seeker, Supporter };
std::string_view to_string(Speaker speaker);

struct Turn {
  Speaker speaker = Speaker::Seeker;
  std::string text;
  std::optional<StrategyId> strategy;  // supporter turns only
  std::optional<Emotion> emotion;      // seeker turns only

  static Turn seeker(std::string text, std::optional<Emotion> emotion = std::nullopt);
  static Turn supporter(std::string text, std::optional<StrategyId> strategy = std::nullopt);

  // Throws InvalidEpisode when annotations are attached to the wrong speaker.
  void validate() const;

  bool operator==(const Turn&) const = default;
};

struct DialogueState {
  std::string description;
  Emotion emotion;
  std::vector<Turn> history;
  std::string query;

  // Number of supporter turns in the history, i.e. completed exchanges.
  std::size_t progress() const;
  // Strategy of the most recent supporter turn, if it was annotated.
  std::optional<StrategyId> last_strategy() const;

  bool operator==(const DialogueState&) const = default;
};

struct Transition {
  DialogueState state;
  StrategyId action = 0;
  double reward = 0.0;
  std::optional<DialogueState> next_state;
  bool terminal = true;
  // Supporter utterance realized with `action`; judges score it.
  std::string response;

  // terminal <=> no next state, and the action is in the catalog.
  void validate(const StrategyCatalog& catalog) const;

  bool operator==(const Transition&) const = default;
};

struct Episode {
  std::string session_id;
  std::string description;
  // Session-level emotion; seeker turns may override it.
  Emotion emotion;
  std::vector<Turn> turns;

  std::size_t supporter_turn_count() const;
  std::size_t annotated_turn_count() const;

  bool operator==(const Episode&) const = default;
};

// State at the `supporter_index`-th supporter turn (0-based, counting every
// supporter turn). History holds all turns before the seeker query that
// precedes it.
DialogueState build_state(const Episode& episode, std::size_t supporter_index);

// One transition per annotated supporter turn, chained so that each
// next_state is the state of the following annotated turn. The last one is
// terminal. Rewards are left at zero.
std::vector<Transition> derive_transitions(const Episode& episode);

}  // namespace escq
