#include <gtest/gtest.h>

#include "escq/core.hpp"
#include "escq/error.hpp"

using namespace escq;

namespace {

Episode exchanges(int n, bool annotate = true) {
  Episode e;
  e.session_id = "s";
  e.description = "desc";
  e.emotion = {"sadness", 3};
  for (int i = 0; i < n; ++i) {
    e.turns.push_back(Turn::seeker("q" + std::to_string(i)));
    e.turns.push_back(Turn::supporter("r" + std::to_string(i),
                                      annotate ? std::optional<StrategyId>(1 + i % 8) : std::nullopt));
  }
  return e;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST(Catalog, EsconvStrategiesAndStages) {
  const auto c = StrategyCatalog::esconv();
  ASSERT_EQ(c.size(), 8);
  EXPECT_EQ(c.at(1).name, "Question");
  EXPECT_EQ(c.stage_of(1), Stage::I);
  EXPECT_EQ(c.stage_of(2), Stage::I);
  EXPECT_EQ(c.stage_of(3), Stage::II);
  EXPECT_EQ(c.stage_of(4), Stage::II);
  EXPECT_EQ(c.stage_of(5), Stage::III);
  EXPECT_EQ(c.stage_of(6), Stage::III);
  EXPECT_EQ(c.stage_of(7), Stage::III);
  EXPECT_EQ(c.stage_of(8), Stage::None);
  EXPECT_EQ(c.at(8).name, "Others");
}

TEST(Catalog, LookupIsCaseAndWhitespaceInsensitive) {
  const auto c = StrategyCatalog::esconv();
  EXPECT_EQ(c.find("reflection   of FEELINGS"), 3);
  EXPECT_EQ(c.find("  Self-disclosure "), 4);
  EXPECT_EQ(c.find("Pro."), 6);
  EXPECT_FALSE(c.find("hugging").has_value());
  EXPECT_EQ(code_of([&] { c.resolve("hugging"); }), ErrorCode::kUnknownStrategy);
}

TEST(Catalog, RejectsInvalidTables) {
  EXPECT_THROW(StrategyCatalog({{1, "a", "a", Stage::I}}), Error);
  EXPECT_THROW(StrategyCatalog({{1, "a", "a", Stage::I}, {3, "b", "b", Stage::I}}), Error);
  EXPECT_THROW(StrategyCatalog({{1, "a", "a", Stage::I}, {2, "A ", "x", Stage::I}}), Error);
  EXPECT_THROW(StrategyCatalog({{1, "a", "a", Stage::None}, {2, "b", "b", Stage::None}}), Error);
  EXPECT_NO_THROW(StrategyCatalog({{1, "a", "a", Stage::I}, {2, "b", "b", Stage::None}}));
}

TEST(Catalog, FingerprintTracksContent) {
  const auto a = StrategyCatalog::esconv();
  const auto b = StrategyCatalog({{1, "a", "a", Stage::I}, {2, "b", "b", Stage::None}});
  EXPECT_EQ(a.fingerprint(), StrategyCatalog::esconv().fingerprint());
  EXPECT_NE(a.fingerprint(), b.fingerprint());
}

TEST(Emotions, EsconvVocabulary) {
  const auto v = EmotionVocabulary::esconv();
  ASSERT_EQ(v.size(), 8u);
  EXPECT_EQ(v.index_of("Anxiety"), 1u);
  EXPECT_FALSE(v.index_of("joy").has_value());
}

TEST(Turn, AnnotationsMustMatchSpeaker) {
  Turn t = Turn::seeker("hi");
  t.strategy = 2;
  EXPECT_EQ(code_of([&] { t.validate(); }), ErrorCode::kInvalidEpisode);
  Turn s = Turn::supporter("hello", 2);
  s.emotion = Emotion{"fear", std::nullopt};
  EXPECT_THROW(s.validate(), Error);
  EXPECT_NO_THROW(Turn::supporter("ok", 1).validate());
}

TEST(BuildState, SingleExchangeHasEmptyHistory) {
  const auto e = exchanges(1);
  const auto s = build_state(e, 0);
  EXPECT_TRUE(s.history.empty());
  EXPECT_EQ(s.query, "q0");
  EXPECT_EQ(s.description, "desc");
  EXPECT_EQ(s.emotion, (Emotion{"sadness", 3}));
}

TEST(BuildState, HistoryHoldsPreviousExchangesOnly) {
  const auto e = exchanges(3);
  const auto s = build_state(e, 2);
  ASSERT_EQ(s.history.size(), 4u);
  EXPECT_EQ(s.history[0].text, "q0");
  EXPECT_EQ(s.history[3].text, "r1");
  EXPECT_EQ(s.query, "q2");
  EXPECT_EQ(s.progress(), 2u);
  EXPECT_EQ(s.last_strategy(), 2);
}

TEST(BuildState, NoFutureLeakage) {
  const auto e = exchanges(6);
  for (std::size_t t = 0; t < 6; ++t) {
    const auto s = build_state(e, t);
    EXPECT_EQ(s.history.size(), 2 * t);
    for (const auto& turn : s.history) {
      const int idx = std::stoi(turn.text.substr(1));
      EXPECT_LT(static_cast<std::size_t>(idx), t);
    }
  }
}

TEST(BuildState, TurnEmotionOverridesSession) {
  auto e = exchanges(3);
  e.turns[2].emotion = Emotion{"anger", 4};
  EXPECT_EQ(build_state(e, 0).emotion.label, "sadness");
  EXPECT_EQ(build_state(e, 1).emotion.label, "anger");
  EXPECT_EQ(build_state(e, 2).emotion.label, "anger");
}

TEST(BuildState, WorkedExampleSession) {
  Episode e;
  e.session_id = "example";
  e.description = "I hate my job but I am scared to quit and seek a new career.";
  e.emotion = {"anxiety", 5};
  e.turns.push_back(Turn::seeker("Seriously!\nWhat I'm scare of now is how to secure another job."));
  const auto catalog = StrategyCatalog::esconv();
  e.turns.push_back(Turn::supporter("I can feel your pain just by chatting with you.",
                                    catalog.resolve("Reflection of feelings")));
  const auto s = build_state(e, 0);
  EXPECT_NE(s.query.find("What I'm scare of now is how to secure another job."), std::string::npos);
  EXPECT_EQ(s.emotion, (Emotion{"anxiety", 5}));
  const auto tr = derive_transitions(e);
  ASSERT_EQ(tr.size(), 1u);
  EXPECT_EQ(catalog.at(tr[0].action).name, "Reflection of Feelings");
}

TEST(BuildState, Errors) {
  const auto e = exchanges(2);
  EXPECT_EQ(code_of([&] { build_state(e, 2); }), ErrorCode::kIndexOutOfRange);
  Episode bad;
  bad.turns.push_back(Turn::supporter("hello", 1));
  EXPECT_EQ(code_of([&] { build_state(bad, 0); }), ErrorCode::kMissingQuery);
}

TEST(DeriveTransitions, SingleTurnIsTerminal) {
  const auto tr = derive_transitions(exchanges(1));
  ASSERT_EQ(tr.size(), 1u);
  EXPECT_TRUE(tr[0].terminal);
  EXPECT_FALSE(tr[0].next_state.has_value());
}

TEST(DeriveTransitions, ChainAndSingleTerminal) {
  const auto tr = derive_transitions(exchanges(3));
  ASSERT_EQ(tr.size(), 3u);
  int terminals = 0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    terminals += tr[i].terminal;
    EXPECT_NO_THROW(tr[i].validate(StrategyCatalog::esconv()));
    if (i + 1 < tr.size()) {
      ASSERT_TRUE(tr[i].next_state.has_value());
      EXPECT_EQ(*tr[i].next_state, tr[i + 1].state);
    }
  }
  EXPECT_EQ(terminals, 1);
  EXPECT_TRUE(tr.back().terminal);
  EXPECT_EQ(tr[1].response, "r1");
}

TEST(DeriveTransitions, CountMatchesAnnotatedTurns) {
  auto e = exchanges(5);
  e.turns[3].strategy.reset();
  e.turns[7].strategy.reset();
  EXPECT_EQ(e.annotated_turn_count(), 3u);
  const auto tr = derive_transitions(e);
  ASSERT_EQ(tr.size(), 3u);
  EXPECT_EQ(tr[0].state.query, "q0");
  EXPECT_EQ(tr[1].state.query, "q2");
  EXPECT_EQ(tr[2].state.query, "q4");
  EXPECT_EQ(*tr[0].next_state, tr[1].state);
}

TEST(DeriveTransitions, UnannotatedEpisodeFails) {
  EXPECT_EQ(code_of([] { derive_transitions(exchanges(2, false)); }), ErrorCode::kEmptyEpisode);
}

TEST(Transition, TerminalIffNoNextState) {
  const auto catalog = StrategyCatalog::esconv();
  auto tr = derive_transitions(exchanges(2));
  tr[0].terminal = true;
  EXPECT_THROW(tr[0].validate(catalog), Error);
  tr[1].action = 9;
  EXPECT_THROW(tr[1].validate(catalog), Error);
}
