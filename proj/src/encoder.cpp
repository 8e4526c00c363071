#include "escq/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <sstream>

#include "escq/error.hpp"
#include "escq/util.hpp"

namespace escq {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string byte_token_text(unsigned b) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "<0x%02X>", b);
  return buf;
}

}  // namespace

std::string render_emotion(const Emotion& emotion) {
  std::string out = emotion.label;
  if (emotion.intensity) out += " (intensity: " + std::to_string(*emotion.intensity) + ")";
  return out;
}

std::string render_history(std::span<const Turn> history) {
  std::string out;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i > 0) out.push_back('\n');
    out += to_string(history[i].speaker);
    out += ": ";
    out += history[i].text;
  }
  return out;
}

std::string render_mcq(const DialogueState& state, const StrategyCatalog& catalog) {
  std::string out;
  out +=
      "You are a psychological consultant providing support to a seeker. "
      "The seeker's basic situation is as follows:\n";
  out += "Emotion: " + render_emotion(state.emotion) + "\n";
  out += "Description: " + state.description + "\n";
  out += "Below is the conversation history between the seeker and the supporter:\n";
  out += render_history(state.history) + "\n";
  out += "The seeker's current query is:\n";
  out += state.query + "\n";
  out +=
      "Based on the above context, please select the most appropriate response "
      "strategy from the following options:\n";
  for (const auto& s : catalog.strategies()) {
    out += "strategy #(" + std::to_string(s.id) + ") " + s.name + "\n";
  }
  out += "Please provide your selection in the format of (1) through (" +
         std::to_string(catalog.size()) + "). Your selection is:";
  return out;
}

std::string answer_text(StrategyId action) { return " (" + std::to_string(action) + ")"; }

Vocabulary::Vocabulary() = default;

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    const auto& w = words_[i];
    if (w.empty() || std::any_of(w.begin(), w.end(), is_space)) {
      throw Error(ErrorCode::kInvalidArgument, "vocabulary words must be nonempty, no whitespace");
    }
    const auto id = static_cast<TokenId>(kReservedCount + i);
    if (!index_.emplace(w, id).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate vocabulary word " + w);
    }
  }
}

std::optional<TokenId> Vocabulary::find_word(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void Vocabulary::tokenize_into(std::string_view text, std::vector<TokenId>& out) const {
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = i;
    const bool space = is_space(text[i]);
    while (j < text.size() && is_space(text[j]) == space) ++j;
    const std::string_view run = text.substr(i, j - i);
    std::optional<TokenId> word;
    if (!space) word = find_word(run);
    if (word) {
      out.push_back(*word);
    } else {
      for (unsigned char c : run) out.push_back(kFirstByte + static_cast<TokenId>(c));
    }
    i = j;
  }
}

std::vector<TokenId> Vocabulary::tokenize(std::string_view text) const {
  std::vector<TokenId> out;
  tokenize_into(text, out);
  return out;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= size()) {
      throw Error(ErrorCode::kIndexOutOfRange, "token id " + std::to_string(id));
    }
    if (id < kFirstByte) continue;
    if (static_cast<std::size_t>(id) < kReservedCount) {
      out.push_back(static_cast<char>(id - kFirstByte));
    } else {
      out += words_[static_cast<std::size_t>(id) - kReservedCount];
    }
  }
  return out;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (unsigned b = 0; b < 256; ++b) out += byte_token_text(b) + "\n";
  for (const auto& w : words_) out += w + "\n";
  return out;
}

Vocabulary Vocabulary::deserialize(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = text.find('\n', i);
    if (j == std::string_view::npos) j = text.size();
    lines.emplace_back(text.substr(i, j - i));
    i = j + 1;
  }
  if (lines.size() < 256) {
    throw Error(ErrorCode::kParseError, "vocabulary file is missing byte tokens");
  }
  for (unsigned b = 0; b < 256; ++b) {
    if (lines[b] != byte_token_text(b)) {
      throw Error(ErrorCode::kParseError, "unexpected byte token on line " + std::to_string(b + 1));
    }
  }
  return Vocabulary(std::vector<std::string>(lines.begin() + 256, lines.end()));
}

void Vocabulary::save(const std::string& path) const { write_file(path, serialize()); }

Vocabulary Vocabulary::load(const std::string& path) { return deserialize(read_file(path)); }

std::string Vocabulary::fingerprint() const { return sha256_hex(serialize()); }

Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t max_size) {
  if (corpus.empty()) throw Error(ErrorCode::kEmptyCorpus, "cannot build a vocabulary from nothing");
  if (max_size < Vocabulary::kReservedCount) {
    throw Error(ErrorCode::kInvalidArgument,
                "max_size must be at least " + std::to_string(Vocabulary::kReservedCount));
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& text : corpus) {
    for (auto& w : split_whitespace(text)) ++counts[std::move(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // std::map iteration is already lexicographic, so a stable sort on count
  // keeps ties in lexicographic order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_size - Vocabulary::kReservedCount);
  std::vector<std::string> words;
  words.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) words.push_back(ranked[i].first);
  return Vocabulary(std::move(words));
}

namespace {

void encode_prompt(const DialogueState& state, std::size_t drop, const StrategyCatalog& catalog,
                   const Vocabulary& vocab, std::vector<TokenId>& out) {
  out.clear();
  out.push_back(Vocabulary::kBos);
  if (drop == 0) {
    vocab.tokenize_into(render_mcq(state, catalog), out);
    return;
  }
  DialogueState trimmed;
  trimmed.description = state.description;
  trimmed.emotion = state.emotion;
  trimmed.query = state.query;
  trimmed.history.assign(state.history.begin() + static_cast<std::ptrdiff_t>(drop),
                         state.history.end());
  vocab.tokenize_into(render_mcq(trimmed, catalog), out);
}

}  // namespace

EncodedPair encode_pair(const DialogueState& state, StrategyId action,
                        const StrategyCatalog& catalog, const Vocabulary& vocab,
                        std::size_t window) {
  if (!catalog.contains(action)) {
    throw Error(ErrorCode::kIndexOutOfRange, "action " + std::to_string(action));
  }
  const std::vector<TokenId> answer = vocab.tokenize(answer_text(action));

  EncodedPair pair;
  encode_prompt(state, 0, catalog, vocab, pair.tokens);
  if (pair.tokens.size() + answer.size() > window) {
    // Length strictly decreases with every dropped turn, so the smallest
    // admissible drop count is found by bisection.
    const std::size_t turns = state.history.size();
    std::vector<TokenId> probe;
    encode_prompt(state, turns, catalog, vocab, probe);
    if (probe.size() + answer.size() > window) {
      throw Error(ErrorCode::kContextOverflow,
                  "prompt without history needs " + std::to_string(probe.size() + answer.size()) +
                      " tokens, window is " + std::to_string(window));
    }
    std::size_t lo = 0;      // does not fit
    std::size_t hi = turns;  // fits
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      encode_prompt(state, mid, catalog, vocab, probe);
      if (probe.size() + answer.size() <= window) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    encode_prompt(state, hi, catalog, vocab, pair.tokens);
    pair.dropped_turns = hi;
  }
  pair.action_span.begin = pair.tokens.size();
  pair.tokens.insert(pair.tokens.end(), answer.begin(), answer.end());
  pair.action_span.end = pair.tokens.size();
  return pair;
}

}  // namespace escq
