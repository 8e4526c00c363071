#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "escq/core.hpp"

namespace escq {

// Lower-cased speaker labels accepted in "speaker"/"role" fields.
//   seeker:    seeker, usr, user, speaker, help-seeker
//   supporter: supporter, sys, system, listener, helper
std::map<std::string, Speaker> default_speaker_aliases();

// Field aliases (first name is the one written by save_esconv):
//   situation | description, emotion_type | emotion, dialog | dialogue,
//   speaker | role, content | text, session_id | id.
struct IngestOptions {
  StrategyCatalog catalog = StrategyCatalog::esconv();
  // Session emotions must belong to this vocabulary; nullopt accepts any
  // label. Ignored by load_plain_dialogues.
  std::optional<EmotionVocabulary> emotions = EmotionVocabulary::esconv();
  std::map<std::string, Speaker> speaker_aliases = default_speaker_aliases();
};

struct IngestWarnings {
  std::size_t dropped_unannotated_sessions = 0;
  std::size_t dropped_leading_supporter_turns = 0;
  std::size_t dropped_empty_utterances = 0;
  std::size_t merged_utterances = 0;
  // Merged supporter utterances carrying different strategies; the first
  // annotated one is kept.
  std::size_t strategy_conflicts = 0;

  std::size_t total() const;
  std::string summary() const;
};

struct IngestResult {
  std::vector<Episode> episodes;
  IngestWarnings warnings;
};

// JSON array of sessions:
//   {"situation", "emotion_type", "dialog": [{"speaker", "content",
//    "annotation": {"strategy"}}]}
// Consecutive same-speaker utterances are joined with "\n"; supporter turns
// before the first seeker turn are dropped (they have no query); sessions
// without any annotated supporter turn are dropped.
IngestResult parse_esconv(std::string_view json_text, const IngestOptions& options = {});
IngestResult load_esconv(const std::string& path, const IngestOptions& options = {});

// Same schema; strategy annotations are ignored and no session is dropped for
// lacking them.
IngestResult parse_plain_dialogues(std::string_view json_text, const IngestOptions& options = {});
IngestResult load_plain_dialogues(const std::string& path, const IngestOptions& options = {});

// Writes the canonical schema; parse_esconv of the output reproduces the
// episodes.
std::string serialize_esconv(std::span<const Episode> episodes, const StrategyCatalog& catalog);
void save_esconv(const std::string& path, std::span<const Episode> episodes, const StrategyCatalog& catalog);

struct RoleStats {
  std::size_t utterances = 0;
  double avg_utterances = 0.0;  // per session
  double avg_length = 0.0;      // whitespace tokens
};

struct CorpusStats {
  std::size_t sessions = 0;
  std::size_t utterances = 0;
  double avg_utterances = 0.0;
  double avg_length = 0.0;
  RoleStats seeker;
  RoleStats supporter;
  std::map<std::string, std::size_t> emotions;
  std::vector<std::size_t> strategies;  // strategies[id - 1]

  std::string to_json(const StrategyCatalog& catalog) const;
};

CorpusStats corpus_stats(std::span<const Episode> episodes, const StrategyCatalog& catalog);

struct CorpusSplit {
  std::vector<Episode> train;
  std::vector<Episode> test;
};

// Seeded shuffle, then the first round(n * test_fraction) episodes go to test.
// Both halves keep their input order.
CorpusSplit split_corpus(std::span<const Episode> episodes, double test_fraction, std::uint64_t seed);

}  // namespace escq
