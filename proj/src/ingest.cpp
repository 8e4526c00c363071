#include "escq/ingest.hpp"

#include <cmath>
#include <numeric>

#include "escq/error.hpp"
#include "escq/util.hpp"
#include "json.hpp"

namespace escq {

using nlohmann::json;

std::map<std::string, Speaker> default_speaker_aliases() {
  return {{"seeker", Speaker::Seeker},       {"usr", Speaker::Seeker},           {"user", Speaker::Seeker},
          {"speaker", Speaker::Seeker},      {"help-seeker", Speaker::Seeker},   {"supporter", Speaker::Supporter},
          {"sys", Speaker::Supporter},       {"system", Speaker::Supporter},     {"listener", Speaker::Supporter},
          {"helper", Speaker::Supporter}};
}

std::size_t IngestWarnings::total() const {
  return dropped_unannotated_sessions + dropped_leading_supporter_turns + dropped_empty_utterances +
         merged_utterances + strategy_conflicts;
}

std::string IngestWarnings::summary() const {
  return "dropped_unannotated_sessions=" + std::to_string(dropped_unannotated_sessions) +
         " dropped_leading_supporter_turns=" + std::to_string(dropped_leading_supporter_turns) +
         " dropped_empty_utterances=" + std::to_string(dropped_empty_utterances) +
         " merged_utterances=" + std::to_string(merged_utterances) +
         " strategy_conflicts=" + std::to_string(strategy_conflicts);
}

namespace {

const json* field(const json& obj, std::initializer_list<const char*> names) {
  for (const char* n : names) {
    auto it = obj.find(n);
    if (it != obj.end() && !it->is_null()) return &*it;
  }
  return nullptr;
}

std::string where(std::size_t session, std::optional<std::size_t> utterance = std::nullopt) {
  std::string out = "session " + std::to_string(session);
  if (utterance) out += ", utterance " + std::to_string(*utterance);
  return out;
}

std::string text_field(const json& obj, std::initializer_list<const char*> names, const std::string& ctx,
                       bool required) {
  const json* v = field(obj, names);
  if (!v) {
    if (required) throw Error(ErrorCode::kParseError, ctx + ": missing field \"" + *names.begin() + "\"");
    return {};
  }
  if (!v->is_string()) throw Error(ErrorCode::kParseError, ctx + ": field \"" + *names.begin() + "\" is not a string");
  return v->get<std::string>();
}

std::optional<int> intensity_field(const json& session, const std::string& ctx) {
  const json* v = field(session, {"emotion_intensity"});
  if (!v) {
    auto s = session.find("survey_score");
    if (s != session.end() && s->is_object()) {
      auto seeker = s->find("seeker");
      if (seeker != s->end() && seeker->is_object()) v = field(*seeker, {"initial_emotion_intensity"});
    }
  }
  if (!v) return std::nullopt;
  int value = 0;
  if (v->is_number_integer()) {
    value = v->get<int>();
  } else if (v->is_string()) {
    try {
      value = std::stoi(v->get<std::string>());
    } catch (const std::exception&) {
      throw Error(ErrorCode::kParseError, ctx + ": emotion intensity is not an integer");
    }
  } else {
    throw Error(ErrorCode::kParseError, ctx + ": emotion intensity is not an integer");
  }
  if (value < 1 || value > 5) throw Error(ErrorCode::kParseError, ctx + ": emotion intensity outside 1..5");
  return value;
}

json parse_array(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
  if (!doc.is_array()) throw Error(ErrorCode::kParseError, "corpus must be a JSON array of sessions");
  return doc;
}

IngestResult parse_sessions(std::string_view text, const IngestOptions& options, bool annotated) {
  const json doc = parse_array(text);
  IngestResult result;
  IngestWarnings& warn = result.warnings;

  for (std::size_t si = 0; si < doc.size(); ++si) {
    const json& session = doc[si];
    const std::string ctx = where(si);
    if (!session.is_object()) throw Error(ErrorCode::kParseError, ctx + ": session is not an object");

    Episode ep;
    const json* id = field(session, {"session_id", "id"});
    if (id && id->is_string()) {
      ep.session_id = id->get<std::string>();
    } else if (id && id->is_number_integer()) {
      ep.session_id = std::to_string(id->get<long long>());
    } else {
      ep.session_id = "session-" + std::to_string(si);
    }
    ep.description = text_field(session, {"situation", "description"}, ctx, false);
    ep.emotion.label = to_lower(trim(text_field(session, {"emotion_type", "emotion"}, ctx, annotated)));
    ep.emotion.intensity = intensity_field(session, ctx);
    if (annotated && options.emotions && !options.emotions->index_of(ep.emotion.label)) {
      throw Error(ErrorCode::kUnknownEmotion, ctx + ": unknown emotion \"" + ep.emotion.label + "\"");
    }

    const json* dialog = field(session, {"dialog", "dialogue"});
    if (!dialog || !dialog->is_array()) throw Error(ErrorCode::kParseError, ctx + ": missing \"dialog\" array");

    for (std::size_t ui = 0; ui < dialog->size(); ++ui) {
      const json& utt = (*dialog)[ui];
      const std::string uctx = where(si, ui);
      if (!utt.is_object()) throw Error(ErrorCode::kParseError, uctx + ": utterance is not an object");
      const std::string role = to_lower(trim(text_field(utt, {"speaker", "role"}, uctx, true)));
      auto alias = options.speaker_aliases.find(role);
      if (alias == options.speaker_aliases.end()) {
        throw Error(ErrorCode::kParseError, uctx + ": unknown speaker \"" + role + "\"");
      }
      const Speaker speaker = alias->second;
      std::string content = trim(text_field(utt, {"content", "text"}, uctx, true));

      std::optional<StrategyId> strategy;
      std::optional<Emotion> emotion;
      auto ann = utt.find("annotation");
      if (ann != utt.end() && ann->is_object()) {
        if (speaker == Speaker::Supporter && annotated) {
          const json* s = field(*ann, {"strategy"});
          if (s) {
            if (!s->is_string()) throw Error(ErrorCode::kParseError, uctx + ": strategy is not a string");
            const auto found = options.catalog.find(s->get<std::string>());
            if (!found) {
              throw Error(ErrorCode::kUnknownStrategy,
                          uctx + ": unknown strategy \"" + s->get<std::string>() + "\"");
            }
            strategy = *found;
          }
        }
        if (speaker == Speaker::Seeker) {
          const json* e = field(*ann, {"emotion"});
          if (e && e->is_string()) {
            Emotion em{to_lower(trim(e->get<std::string>())), std::nullopt};
            if (annotated && options.emotions && !options.emotions->index_of(em.label)) {
              throw Error(ErrorCode::kUnknownEmotion, uctx + ": unknown emotion \"" + em.label + "\"");
            }
            emotion = em;
          }
        }
      }

      if (content.empty()) {
        ++warn.dropped_empty_utterances;
        continue;
      }
      if (ep.turns.empty() && speaker == Speaker::Supporter) {
        ++warn.dropped_leading_supporter_turns;
        continue;
      }
      if (!ep.turns.empty() && ep.turns.back().speaker == speaker) {
        Turn& prev = ep.turns.back();
        prev.text += "\n" + content;
        ++warn.merged_utterances;
        if (strategy) {
          if (!prev.strategy) {
            prev.strategy = strategy;
          } else if (*prev.strategy != *strategy) {
            ++warn.strategy_conflicts;
          }
        }
        if (emotion && !prev.emotion) prev.emotion = emotion;
        continue;
      }
      ep.turns.push_back(speaker == Speaker::Seeker ? Turn::seeker(std::move(content), emotion)
                                                    : Turn::supporter(std::move(content), strategy));
    }

    if (annotated && ep.annotated_turn_count() == 0) {
      ++warn.dropped_unannotated_sessions;
      continue;
    }
    result.episodes.push_back(std::move(ep));
  }
  return result;
}

}  // namespace

IngestResult parse_esconv(std::string_view json_text, const IngestOptions& options) {
  return parse_sessions(json_text, options, true);
}

IngestResult load_esconv(const std::string& path, const IngestOptions& options) {
  return parse_esconv(read_file(path), options);
}

IngestResult parse_plain_dialogues(std::string_view json_text, const IngestOptions& options) {
  return parse_sessions(json_text, options, false);
}

IngestResult load_plain_dialogues(const std::string& path, const IngestOptions& options) {
  return parse_plain_dialogues(read_file(path), options);
}

std::string serialize_esconv(std::span<const Episode> episodes, const StrategyCatalog& catalog) {
  json out = json::array();
  for (const auto& ep : episodes) {
    json s;
    s["session_id"] = ep.session_id;
    s["situation"] = ep.description;
    s["emotion_type"] = ep.emotion.label;
    if (ep.emotion.intensity) s["emotion_intensity"] = *ep.emotion.intensity;
    json dialog = json::array();
    for (const auto& t : ep.turns) {
      json u;
      u["speaker"] = t.speaker == Speaker::Seeker ? "seeker" : "supporter";
      u["content"] = t.text;
      json ann = json::object();
      if (t.strategy) ann["strategy"] = catalog.at(*t.strategy).name;
      if (t.emotion) ann["emotion"] = t.emotion->label;
      u["annotation"] = ann;
      dialog.push_back(std::move(u));
    }
    s["dialog"] = std::move(dialog);
    out.push_back(std::move(s));
  }
  return out.dump(2) + "\n";
}

void save_esconv(const std::string& path, std::span<const Episode> episodes, const StrategyCatalog& catalog) {
  write_file(path, serialize_esconv(episodes, catalog));
}

std::string CorpusStats::to_json(const StrategyCatalog& catalog) const {
  auto role = [](const RoleStats& r) {
    return json{{"utterances", r.utterances}, {"avg_utterances", r.avg_utterances}, {"avg_length", r.avg_length}};
  };
  json strat = json::object();
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    strat[catalog.at(static_cast<StrategyId>(i + 1)).name] = strategies[i];
  }
  json j{{"sessions", sessions},
         {"utterances", utterances},
         {"avg_utterances", avg_utterances},
         {"avg_length", avg_length},
         {"seeker", role(seeker)},
         {"supporter", role(supporter)},
         {"emotions", emotions},
         {"strategies", strat}};
  return j.dump(2) + "\n";
}

CorpusStats corpus_stats(std::span<const Episode> episodes, const StrategyCatalog& catalog) {
  CorpusStats st;
  st.strategies.assign(static_cast<std::size_t>(catalog.size()), 0);
  std::size_t tokens = 0, seeker_tokens = 0, supporter_tokens = 0;
  for (const auto& ep : episodes) {
    ++st.sessions;
    ++st.emotions[ep.emotion.label];
    for (const auto& t : ep.turns) {
      const std::size_t len = split_whitespace(t.text).size();
      ++st.utterances;
      tokens += len;
      if (t.speaker == Speaker::Seeker) {
        ++st.seeker.utterances;
        seeker_tokens += len;
      } else {
        ++st.supporter.utterances;
        supporter_tokens += len;
        if (t.strategy && catalog.contains(*t.strategy)) ++st.strategies[static_cast<std::size_t>(*t.strategy - 1)];
      }
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / b; };
  st.avg_utterances = ratio(st.utterances, st.sessions);
  st.avg_length = ratio(tokens, st.utterances);
  st.seeker.avg_utterances = ratio(st.seeker.utterances, st.sessions);
  st.seeker.avg_length = ratio(seeker_tokens, st.seeker.utterances);
  st.supporter.avg_utterances = ratio(st.supporter.utterances, st.sessions);
  st.supporter.avg_length = ratio(supporter_tokens, st.supporter.utterances);
  return st;
}

CorpusSplit split_corpus(std::span<const Episode> episodes, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "test fraction must be in [0, 1]");
  }
  const std::size_t n = episodes.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5b1));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  std::vector<bool> is_test(n, false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;
  CorpusSplit out;
  for (std::size_t i = 0; i < n; ++i) (is_test[i] ? out.test : out.train).push_back(episodes[i]);
  return out;
}

}  // namespace escq
