#include <gtest/gtest.h>

#include <filesystem>

#include "escq/env.hpp"
#include "escq/error.hpp"
#include "escq/ingest.hpp"

using namespace escq;

namespace {

const char* kExampleSession = R"([
  {
    "situation": "I hate my job but I am scared to quit and seek a new career.",
    "emotion_type": "anxiety",
    "emotion_intensity": 5,
    "dialog": [
      {"speaker": "supporter", "content": "Hello, how are you today?", "annotation": {"strategy": "Question"}},
      {"speaker": "seeker", "content": "Seriously!", "annotation": {}},
      {"speaker": "seeker", "content": "What I'm scare of now is how to secure another job.", "annotation": {}},
      {"speaker": "supporter", "content": "I can feel your pain just by chatting with you.",
       "annotation": {"strategy": "Reflection of feelings"}}
    ]
  }
])";

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("escq_ingest_" + name)).string();
}

}  // namespace

TEST(LoadEsconv, WorkedExample) {
  const auto r = parse_esconv(kExampleSession);
  ASSERT_EQ(r.episodes.size(), 1u);
  const Episode& e = r.episodes[0];
  EXPECT_EQ(e.emotion, (Emotion{"anxiety", 5}));
  EXPECT_EQ(e.description, "I hate my job but I am scared to quit and seek a new career.");
  ASSERT_EQ(e.turns.size(), 2u);
  EXPECT_EQ(e.turns[0].speaker, Speaker::Seeker);
  EXPECT_EQ(e.turns[0].text, "Seriously!\nWhat I'm scare of now is how to secure another job.");
  ASSERT_TRUE(e.turns[1].strategy.has_value());
  EXPECT_EQ(StrategyCatalog::esconv().at(*e.turns[1].strategy).name, "Reflection of Feelings");
  EXPECT_EQ(r.warnings.dropped_leading_supporter_turns, 1u);
  EXPECT_EQ(r.warnings.merged_utterances, 1u);
  EXPECT_EQ(derive_transitions(e).size(), 1u);
}

TEST(LoadEsconv, CaseInsensitiveStrategy) {
  const auto r = parse_esconv(R"([{"situation": "s", "emotion_type": "Sadness", "dialog": [
    {"speaker": "seeker", "content": "hi"},
    {"speaker": "supporter", "content": "I hear you.", "annotation": {"strategy": "reflection of feelings"}}]}])");
  ASSERT_EQ(r.episodes.size(), 1u);
  EXPECT_EQ(r.episodes[0].emotion.label, "sadness");
  EXPECT_EQ(StrategyCatalog::esconv().at(*r.episodes[0].turns[1].strategy).name, "Reflection of Feelings");
}

TEST(LoadEsconv, EmptyArray) {
  const auto r = parse_esconv("[]");
  EXPECT_TRUE(r.episodes.empty());
  EXPECT_EQ(r.warnings.total(), 0u);
}

TEST(LoadEsconv, AliasesAccepted) {
  const auto r = parse_esconv(R"([{"description": "d", "emotion": "fear", "dialogue": [
    {"role": "usr", "text": "hi"},
    {"role": "sys", "text": "What happened?", "annotation": {"strategy": "Que."}}]}])");
  ASSERT_EQ(r.episodes.size(), 1u);
  EXPECT_EQ(r.episodes[0].description, "d");
  EXPECT_EQ(r.episodes[0].turns[1].strategy, StrategyCatalog::esconv().resolve("Question"));
}

TEST(LoadEsconv, DropsUnannotatedSessions) {
  const auto r = parse_esconv(R"([
    {"situation": "a", "emotion_type": "anger", "dialog": [
      {"speaker": "seeker", "content": "hi"}, {"speaker": "supporter", "content": "hello"}]},
    {"situation": "b", "emotion_type": "anger", "dialog": [
      {"speaker": "seeker", "content": "hi"},
      {"speaker": "supporter", "content": "hello", "annotation": {"strategy": "Others"}}]}])");
  ASSERT_EQ(r.episodes.size(), 1u);
  EXPECT_EQ(r.episodes[0].description, "b");
  EXPECT_EQ(r.warnings.dropped_unannotated_sessions, 1u);
}

TEST(LoadEsconv, MergeKeepsFirstStrategy) {
  const auto r = parse_esconv(R"([{"situation": "a", "emotion_type": "shame", "dialog": [
    {"speaker": "seeker", "content": "hi"},
    {"speaker": "supporter", "content": "one", "annotation": {"strategy": "Question"}},
    {"speaker": "supporter", "content": "two", "annotation": {"strategy": "Self-disclosure"}}]}])");
  ASSERT_EQ(r.episodes[0].turns.size(), 2u);
  EXPECT_EQ(r.episodes[0].turns[1].text, "one\ntwo");
  EXPECT_EQ(r.episodes[0].turns[1].strategy, StrategyCatalog::esconv().resolve("Question"));
  EXPECT_EQ(r.warnings.strategy_conflicts, 1u);
}

TEST(LoadEsconv, Errors) {
  EXPECT_EQ(code_of([] { parse_esconv("[{"); }), ErrorCode::kParseError);
  EXPECT_EQ(code_of([] { parse_esconv("{}"); }), ErrorCode::kParseError);
  EXPECT_EQ(code_of([] {
              parse_esconv(R"([{"situation": "a", "emotion_type": "anger", "dialog": [
                {"speaker": "seeker", "content": "hi"},
                {"speaker": "supporter", "content": "x", "annotation": {"strategy": "Hypnosis"}}]}])");
            }),
            ErrorCode::kUnknownStrategy);
  EXPECT_EQ(code_of([] {
              parse_esconv(R"([{"situation": "a", "emotion_type": "boredom", "dialog": []}])");
            }),
            ErrorCode::kUnknownEmotion);
  EXPECT_EQ(code_of([] {
              parse_esconv(R"([{"situation": "a", "emotion_type": "anger", "dialog": [
                {"speaker": "narrator", "content": "hi"}]}])");
            }),
            ErrorCode::kParseError);
  try {
    parse_esconv(R"([{"situation": "a", "emotion_type": "anger", "dialog": []},
      {"situation": "a", "emotion_type": "anger", "dialog": [
        {"speaker": "seeker", "content": "hi"},
        {"speaker": "supporter", "content": "x", "annotation": {"strategy": "Hypnosis"}}]}])");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("session 1, utterance 1"), std::string::npos);
  }
}

TEST(LoadPlain, TwoTurnDialogue) {
  const char* text = R"([{"situation": "My dog died.", "emotion": "devastated", "dialog": [
    {"speaker": "speaker", "content": "My dog died yesterday."},
    {"speaker": "listener", "content": "I am so sorry to hear that."}]}])";
  const auto r = parse_plain_dialogues(text);
  ASSERT_EQ(r.episodes.size(), 1u);
  const Episode& e = r.episodes[0];
  ASSERT_EQ(e.turns.size(), 2u);
  EXPECT_EQ(e.turns[1].speaker, Speaker::Supporter);
  EXPECT_EQ(e.annotated_turn_count(), 0u);
  EXPECT_EQ(code_of([&] { derive_transitions(e); }), ErrorCode::kEmptyEpisode);
}

TEST(LoadPlain, IgnoresStrategies) {
  const auto r = parse_plain_dialogues(R"([{"dialog": [
    {"speaker": "seeker", "content": "hi"},
    {"speaker": "supporter", "content": "x", "annotation": {"strategy": "Hypnosis"}}]}])");
  EXPECT_FALSE(r.episodes[0].turns[1].strategy.has_value());
  EXPECT_EQ(code_of([] { parse_plain_dialogues("nope"); }), ErrorCode::kParseError);
}

TEST(SerializeEsconv, RoundTripIsFixedPoint) {
  StagedEnv env(StagedEnvConfig{});
  const auto runs = rollouts(env, demonstrator_policy(env), 30, 4);
  std::vector<Episode> eps;
  for (std::size_t i = 0; i < runs.size(); ++i) eps.push_back(to_episode(runs[i], env, "s" + std::to_string(i)));
  const auto catalog = StrategyCatalog::esconv();
  const std::string once = serialize_esconv(eps, catalog);
  const auto loaded = parse_esconv(once);
  EXPECT_EQ(loaded.warnings.total(), 0u);
  EXPECT_EQ(loaded.episodes, eps);
  EXPECT_EQ(serialize_esconv(loaded.episodes, catalog), once);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    EXPECT_EQ(derive_transitions(loaded.episodes[i]).size(), derive_transitions(eps[i]).size());
  }
  const std::string path = temp_path("roundtrip.json");
  save_esconv(path, eps, catalog);
  EXPECT_EQ(load_esconv(path).episodes, eps);
  std::filesystem::remove(path);
}

TEST(CorpusStats, SimpleSession) {
  Episode e;
  e.emotion = {"anger", std::nullopt};
  e.turns = {Turn::seeker("a b"), Turn::supporter("c d", 1), Turn::seeker("e f"), Turn::supporter("g h", 1)};
  const auto catalog = StrategyCatalog::esconv();
  const auto st = corpus_stats(std::vector<Episode>{e}, catalog);
  EXPECT_EQ(st.sessions, 1u);
  EXPECT_EQ(st.utterances, 4u);
  EXPECT_DOUBLE_EQ(st.avg_utterances, 4.0);
  EXPECT_DOUBLE_EQ(st.avg_length, 2.0);
  EXPECT_EQ(st.seeker.utterances, 2u);
  EXPECT_DOUBLE_EQ(st.supporter.avg_utterances, 2.0);
  EXPECT_EQ(st.strategies[0], 2u);
  EXPECT_EQ(st.emotions.at("anger"), 1u);
}

TEST(CorpusStats, EmptyInput) {
  const auto st = corpus_stats(std::vector<Episode>{}, StrategyCatalog::esconv());
  EXPECT_EQ(st.sessions, 0u);
  EXPECT_EQ(st.utterances, 0u);
  EXPECT_EQ(st.avg_utterances, 0.0);
  EXPECT_EQ(st.avg_length, 0.0);
  for (auto c : st.strategies) EXPECT_EQ(c, 0u);
}

TEST(CorpusStats, StrategyHistogramMatchesGeneratorTally) {
  StagedEnv env(StagedEnvConfig{});
  const auto runs = rollouts(env, demonstrator_policy(env), 200, 9);
  std::vector<std::size_t> tally(8, 0);
  std::map<std::string, std::size_t> emotions;
  std::vector<Episode> eps;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (const auto& t : runs[i].steps) ++tally[static_cast<std::size_t>(t.action - 1)];
    eps.push_back(to_episode(runs[i], env, std::to_string(i)));
    ++emotions[eps.back().emotion.label];
  }
  const auto catalog = StrategyCatalog::esconv();
  const auto loaded = parse_esconv(serialize_esconv(eps, catalog));
  const auto st = corpus_stats(loaded.episodes, catalog);
  EXPECT_EQ(st.strategies, tally);
  EXPECT_EQ(st.emotions, emotions);
  EXPECT_EQ(st.sessions, 200u);
  const std::string j = st.to_json(catalog);
  EXPECT_NE(j.find("\"Reflection of Feelings\""), std::string::npos);
}

TEST(SplitCorpus, SeededPartition) {
  std::vector<Episode> eps(50);
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i].session_id = std::to_string(i);
  const auto a = split_corpus(eps, 0.1, 3);
  const auto b = split_corpus(eps, 0.1, 3);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.test.size(), 5u);
  EXPECT_EQ(a.train.size(), 45u);
  std::set<std::string> ids;
  for (const auto& e : a.train) ids.insert(e.session_id);
  for (const auto& e : a.test) ids.insert(e.session_id);
  EXPECT_EQ(ids.size(), 50u);
  EXPECT_NE(split_corpus(eps, 0.1, 4).test, a.test);
  EXPECT_THROW(split_corpus(eps, 1.5, 0), Error);
}
