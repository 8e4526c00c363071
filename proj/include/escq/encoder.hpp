#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "escq/core.hpp"

namespace escq {

using TokenId = std::int32_t;

// Multiple-choice instruction for a state: role preamble, emotion,
// description, history, query, the numbered options and the selection
// request. Pure function of (state, catalog).
std::string render_mcq(const DialogueState& state, const StrategyCatalog& catalog);

// "seeker: ..." / "supporter: ..." lines joined with '\n'.
std::string render_history(std::span<const Turn> history);

std::string render_emotion(const Emotion& emotion);

// The appended answer for option k: " (k)".
std::string answer_text(StrategyId action);

// Word vocabulary with byte fallback.
//
// Ids: PAD=0, UNK=1, BOS=2, then the 256 byte tokens, then words. Text is cut
// into maximal whitespace and non-whitespace runs; a non-whitespace run that
// is a known word maps to one id, anything else (including all whitespace)
// maps to byte tokens. decode(tokenize(x)) == x for every string.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kBos = 2;
  static constexpr TokenId kFirstByte = 3;
  static constexpr std::size_t kSpecialCount = 3;
  static constexpr std::size_t kReservedCount = kSpecialCount + 256;

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> words);

  std::size_t size() const { return kReservedCount + words_.size(); }
  std::span<const std::string> words() const { return words_; }
  std::optional<TokenId> find_word(std::string_view word) const;

  std::vector<TokenId> tokenize(std::string_view text) const;
  void tokenize_into(std::string_view text, std::vector<TokenId>& out) const;
  std::string decode(std::span<const TokenId> ids) const;

  // Text form: one line per non-special token, id = line index + 3. The first
  // 256 lines are the byte tokens <0x00> .. <0xFF>.
  std::string serialize() const;
  static Vocabulary deserialize(std::string_view text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  std::string fingerprint() const;

  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

// Whitespace-delimited words ranked by frequency (ties lexicographic) until
// the table reaches max_size entries in total.
Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t max_size);

struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct EncodedPair {
  std::vector<TokenId> tokens;  // BOS + prompt + answer
  TokenSpan action_span;        // positions of the answer tokens
  std::size_t dropped_turns = 0;
};

inline constexpr std::size_t kDefaultWindow = 2048;

// Tokenizes render_mcq(state) + answer_text(action). When the sequence
// exceeds `window`, the oldest history turns are dropped until it fits.
EncodedPair encode_pair(const DialogueState& state, StrategyId action,
                        const StrategyCatalog& catalog, const Vocabulary& vocab,
                        std::size_t window = kDefaultWindow);

}  // namespace escq
