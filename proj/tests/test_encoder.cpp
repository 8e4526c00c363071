#include <gtest/gtest.h>

#include <filesystem>

#include "escq/encoder.hpp"
#include "escq/error.hpp"
#include "escq/util.hpp"

using namespace escq;

namespace {

DialogueState sample_state(int turns) {
  DialogueState s;
  s.description = "I lost my job last week and feel stuck.";
  s.emotion = {"anxiety", 4};
  for (int i = 0; i < turns; ++i) {
    s.history.push_back(Turn::seeker("seeker line number " + std::to_string(i) + " about work"));
    s.history.push_back(Turn::supporter("supporter reply " + std::to_string(i), 1));
  }
  s.query = "What should I do now?";
  return s;
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = text.find(needle); p != std::string::npos; p = text.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST(RenderMcq, OpeningLineAndOptions) {
  const auto catalog = StrategyCatalog::esconv();
  const std::string text = render_mcq(sample_state(2), catalog);
  EXPECT_EQ(text.rfind("You are a psychological consultant", 0), 0u);
  EXPECT_EQ(count(text, "strategy #("), 8u);
  EXPECT_NE(text.find("strategy #(3) Reflection of Feelings"), std::string::npos);
  EXPECT_NE(text.find("Emotion: anxiety (intensity: 4)"), std::string::npos);
  EXPECT_NE(text.find("seeker: seeker line number 0 about work\nsupporter: supporter reply 0"),
            std::string::npos);
  EXPECT_NE(text.find("(1) through (8)"), std::string::npos);
}

TEST(RenderMcq, EmptyHistoryKeepsOtherSections) {
  const auto catalog = StrategyCatalog::esconv();
  auto with = sample_state(1);
  auto without = with;
  without.history.clear();
  const std::string a = render_mcq(with, catalog);
  const std::string b = render_mcq(without, catalog);
  const std::string hist = render_history(with.history);
  const auto at = a.find(hist);
  ASSERT_NE(at, std::string::npos);
  EXPECT_EQ(a.substr(0, at) + a.substr(at + hist.size()), b);
  EXPECT_NE(b.find("conversation history between the seeker and the supporter:\n\n"), std::string::npos);
}

TEST(RenderMcq, Deterministic) {
  const auto catalog = StrategyCatalog::esconv();
  EXPECT_EQ(render_mcq(sample_state(3), catalog), render_mcq(sample_state(3), catalog));
}

TEST(AnswerText, Format) { EXPECT_EQ(answer_text(3), " (3)"); }

TEST(BuildVocab, FrequencyThenLexicographic) {
  const std::vector<std::string> corpus{"a a b"};
  const auto v = build_vocab(corpus, 1000);
  ASSERT_EQ(v.words().size(), 2u);
  EXPECT_EQ(v.words()[0], "a");
  EXPECT_EQ(v.words()[1], "b");
  const std::vector<std::string> ties{"d c b a c d"};
  const auto w = build_vocab(ties, 1000);
  EXPECT_EQ(std::vector<std::string>(w.words().begin(), w.words().end()),
            (std::vector<std::string>{"c", "d", "a", "b"}));
}

TEST(BuildVocab, SizeCapAndErrors) {
  const std::vector<std::string> corpus{"x y z x y x"};
  const auto v = build_vocab(corpus, Vocabulary::kReservedCount + 2);
  EXPECT_EQ(v.size(), Vocabulary::kReservedCount + 2);
  EXPECT_EQ(v.words()[1], "y");
  EXPECT_THROW(build_vocab(corpus, Vocabulary::kReservedCount - 1), Error);
  EXPECT_THROW(build_vocab(std::vector<std::string>{}, 1000), Error);
}

TEST(BuildVocab, Deterministic) {
  const std::vector<std::string> corpus{"the cat sat on the mat", "a dog sat"};
  EXPECT_EQ(build_vocab(corpus, 300), build_vocab(corpus, 300));
  EXPECT_EQ(build_vocab(corpus, 300).fingerprint(), build_vocab(corpus, 300).fingerprint());
}

TEST(Vocabulary, RoundTripArbitraryBytes) {
  const std::vector<std::string> corpus{"hello world hello", "caf\xc3\xa9 tab\tsep"};
  const auto v = build_vocab(corpus, 400);
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    const std::size_t len = rng.uniform_index(40);
    for (std::size_t i = 0; i < len; ++i) {
      if (rng.uniform01() < 0.3) {
        s += rng.uniform01() < 0.5 ? "hello" : " world ";
      } else {
        s.push_back(static_cast<char>(rng.uniform_index(256)));
      }
    }
    const auto ids = v.tokenize(s);
    for (TokenId id : ids) EXPECT_NE(id, Vocabulary::kUnk);
    EXPECT_EQ(v.decode(ids), s);
  }
}

TEST(Vocabulary, SerializeRoundTrip) {
  const std::vector<std::string> corpus{"one two two three three three"};
  const auto v = build_vocab(corpus, 300);
  const auto w = Vocabulary::deserialize(v.serialize());
  EXPECT_EQ(v, w);
  const auto path = (std::filesystem::temp_directory_path() / "escq_vocab_test.txt").string();
  v.save(path);
  EXPECT_EQ(Vocabulary::load(path), v);
  std::filesystem::remove(path);
  // Line index + specials = id.
  const auto lines = split_whitespace(v.serialize());
  EXPECT_EQ(lines[256], "three");
  EXPECT_EQ(v.find_word("three"), static_cast<TokenId>(Vocabulary::kReservedCount));
}

TEST(EncodePair, AnswerSpanAtTail) {
  const auto catalog = StrategyCatalog::esconv();
  const std::vector<std::string> corpus{render_mcq(sample_state(2), catalog)};
  const auto vocab = build_vocab(corpus, 2000);
  for (StrategyId a = 1; a <= 8; ++a) {
    const auto p = encode_pair(sample_state(2), a, catalog, vocab);
    EXPECT_GT(p.action_span.size(), 0u);
    EXPECT_EQ(p.action_span.end, p.tokens.size());
    EXPECT_EQ(p.tokens[0], Vocabulary::kBos);
    const std::span<const TokenId> ans(p.tokens.data() + p.action_span.begin, p.action_span.size());
    EXPECT_EQ(vocab.decode(ans), answer_text(a));
    EXPECT_EQ(p.dropped_turns, 0u);
  }
}

TEST(EncodePair, DefaultWindowNoTruncationForShortPrompt) {
  const auto catalog = StrategyCatalog::esconv();
  const Vocabulary vocab;
  const auto p = encode_pair(sample_state(1), 3, catalog, vocab);
  EXPECT_LT(p.tokens.size(), kDefaultWindow);
  EXPECT_EQ(p.dropped_turns, 0u);
  EXPECT_EQ(vocab.decode(p.tokens), render_mcq(sample_state(1), catalog) + " (3)");
}

TEST(EncodePair, TruncatesOldestHistoryFirst) {
  const auto catalog = StrategyCatalog::esconv();
  const std::vector<std::string> corpus{render_mcq(sample_state(25), catalog)};
  const auto vocab = build_vocab(corpus, 600);
  const auto state = sample_state(25);  // 50 history turns
  const std::size_t window = 400;
  const auto p = encode_pair(state, 5, catalog, vocab, window);
  ASSERT_GT(p.dropped_turns, 0u);
  EXPECT_LE(p.tokens.size(), window);

  // Oracle: re-render with the oldest turns removed and compare lengths.
  auto kept = state;
  kept.history.erase(kept.history.begin(),
                     kept.history.begin() + static_cast<std::ptrdiff_t>(p.dropped_turns));
  const auto expected = 1 + vocab.tokenize(render_mcq(kept, catalog) + answer_text(5)).size();
  EXPECT_EQ(p.tokens.size(), expected);
  EXPECT_NE(vocab.decode(p.tokens).find(state.query), std::string::npos);
  // Minimality: keeping one more turn would overflow.
  auto one_more = state;
  one_more.history.erase(one_more.history.begin(),
                         one_more.history.begin() + static_cast<std::ptrdiff_t>(p.dropped_turns - 1));
  EXPECT_GT(1 + vocab.tokenize(render_mcq(one_more, catalog) + answer_text(5)).size(), window);
}

TEST(EncodePair, LargerWindowNeverDropsMore) {
  const auto catalog = StrategyCatalog::esconv();
  const Vocabulary vocab;
  const auto state = sample_state(10);
  std::size_t prev = std::numeric_limits<std::size_t>::max();
  for (std::size_t window = 1200; window <= 2600; window += 100) {
    const auto p = encode_pair(state, 1, catalog, vocab, window);
    EXPECT_LE(p.dropped_turns, prev);
    prev = p.dropped_turns;
  }
}

TEST(EncodePair, ContextOverflow) {
  const auto catalog = StrategyCatalog::esconv();
  const Vocabulary vocab;
  try {
    encode_pair(sample_state(0), 1, catalog, vocab, 50);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kContextOverflow);
  }
}
