#include "escq/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <ostream>
#include <set>
#include <type_traits>

#include "escq/encoder.hpp"
#include "escq/ingest.hpp"
#include "escq/rewards.hpp"
#include "escq/util.hpp"
#include "json.hpp"

namespace escq::cli {

namespace fs = std::filesystem;

namespace {

// Independent random streams derived from the run seed.
enum Stream : std::uint64_t {
  kEnvStream = 1,
  kTrainRollouts = 2,
  kEvalRollouts = 3,
  kImitation = 4,
  kSplit = 5,
  kJudgeStream = 6,
  kGreedyRollouts = 7,
  kSimRollouts = 8,
};

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view why) {
  throw Error(ErrorCode::kInvalidArgument,
              "bad value '" + std::string(value) + "' for " + std::string(key) + ": " + std::string(why));
}

std::string show(const std::string& v) { return v; }
std::string show(bool v) { return v ? "true" : "false"; }
std::string show(double v) { return format_double(v); }
std::string show(std::size_t v) { return std::to_string(v); }
template <class T>
std::string show(const std::optional<T>& v) {
  return v ? show(*v) : std::string();
}

void parse_into(std::string_view key, std::string_view text, std::string& out) {
  (void)key;
  out = std::string(text);
}

void parse_into(std::string_view key, std::string_view text, bool& out) {
  const std::string v = to_lower(text);
  if (v == "1" || v == "true" || v == "yes" || v == "on") out = true;
  else if (v == "0" || v == "false" || v == "no" || v == "off") out = false;
  else bad_value(key, text, "expected a boolean");
}

void parse_into(std::string_view key, std::string_view text, double& out) {
  const std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) bad_value(key, text, "expected a number");
  out = v;
}

void parse_into(std::string_view key, std::string_view text, std::size_t& out) {
  const std::string s(text);
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    bad_value(key, text, "expected a nonnegative integer");
  }
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), nullptr, 10);
  if (errno == ERANGE) bad_value(key, text, "integer out of range");
  out = static_cast<std::size_t>(v);
}

template <class T>
void parse_into(std::string_view key, std::string_view text, std::optional<T>& out) {
  if (trim(text).empty()) {
    out.reset();
    return;
  }
  T v{};
  parse_into(key, text, v);
  out = v;
}

struct KeyImpl {
  ConfigKey meta;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <class T>
KeyImpl make_key(std::string name, std::string help, T RunConfig::*member, bool secret = false) {
  KeyImpl k;
  k.meta = ConfigKey{name, std::move(help), std::is_same_v<T, bool>, secret};
  k.get = [member](const RunConfig& c) { return show(c.*member); };
  k.set = [member, name](RunConfig& c, std::string_view v) { parse_into(name, v, c.*member); };
  return k;
}

const std::vector<KeyImpl>& key_table() {
  static const std::vector<KeyImpl> table = [] {
    using R = RunConfig;
    std::vector<KeyImpl> t;
    t.push_back(make_key("out", "output directory", &R::out));
    t.push_back(make_key("seed", "run seed", &R::seed));
    t.push_back(make_key("deterministic", "single-threaded everywhere", &R::deterministic));
    t.push_back(make_key("threads", "gradient threads", &R::threads));
    t.push_back(make_key("env", "'staged' for the synthetic environment", &R::env));
    t.push_back(make_key("data", "ESConv-style JSON dataset", &R::data));
    t.push_back(make_key("test_data", "held-out dataset (default: split of data)", &R::test_data));
    t.push_back(make_key("split_test", "test fraction when splitting data", &R::split_test));
    t.push_back(make_key("plain", "ingest-stats: dialogues without strategy labels", &R::plain));
    t.push_back(make_key("reward", "imit | distill | env", &R::reward));
    t.push_back(make_key("reward_mapping", "identity | affine", &R::reward_mapping));
    t.push_back(make_key("judge", "synthetic | remote", &R::judge));
    t.push_back(make_key("judge_endpoint", "chat-completion URL", &R::judge_endpoint));
    t.push_back(make_key("judge_model", "remote judge model name", &R::judge_model));
    t.push_back(make_key("judge_api_key", "remote judge API key", &R::judge_api_key, true));
    t.push_back(make_key("judge_cache_dir", "remote judge reply cache", &R::judge_cache_dir));
    t.push_back(make_key("judge_concurrency", "parallel judge calls", &R::judge_concurrency));
    t.push_back(make_key("judge_noise", "synthetic judge noise probability", &R::judge_noise));
    t.push_back(make_key("horizon", "staged episode length", &R::horizon));
    t.push_back(make_key("env_reward", "stage_match | judge", &R::env_reward));
    t.push_back(make_key("advance_on_match", "stage advance probability after a match", &R::advance_on_match));
    t.push_back(make_key("advance_otherwise", "stage advance probability otherwise", &R::advance_otherwise));
    t.push_back(make_key("episodes", "staged training episodes", &R::episodes));
    t.push_back(make_key("eval_episodes", "staged evaluation episodes", &R::eval_episodes));
    t.push_back(make_key("backend", "mlp | seq", &R::backend));
    t.push_back(make_key("precision", "f64 | f32", &R::precision));
    t.push_back(make_key("layers", "seq: transformer blocks", &R::layers));
    t.push_back(make_key("d_model", "seq: model width", &R::d_model));
    t.push_back(make_key("heads", "seq: attention heads", &R::heads));
    t.push_back(make_key("d_ff", "seq: feed-forward width", &R::d_ff));
    t.push_back(make_key("window", "seq: token window", &R::window));
    t.push_back(make_key("vocab_size", "seq: vocabulary size", &R::vocab_size));
    t.push_back(make_key("hidden", "mlp: comma-separated hidden widths", &R::hidden));
    t.push_back(make_key("hash_dim", "mlp: hashed query features", &R::hash_dim));
    t.push_back(make_key("history_buckets", "mlp: history length buckets", &R::history_buckets));
    t.push_back(make_key("gamma", "discount factor", &R::gamma));
    t.push_back(make_key("learning_rate", "Adam step size (default per backend)", &R::learning_rate));
    t.push_back(make_key("batch_size", "minibatch size", &R::batch_size));
    t.push_back(make_key("target_sync_every", "steps between target syncs", &R::target_sync_every));
    t.push_back(make_key("epochs", "passes over the transitions", &R::epochs));
    t.push_back(make_key("buffer_capacity", "replay buffer size", &R::buffer_capacity));
    t.push_back(make_key("clip_norm", "global gradient norm clip", &R::clip_norm));
    t.push_back(make_key("sampling", "uniform | in_order", &R::sampling));
    t.push_back(make_key("steps", "optimizer steps (default epochs * N / batch)", &R::steps));
    t.push_back(make_key("checkpoint_every", "periodic checkpoint interval, 0 disables", &R::checkpoint_every));
    t.push_back(make_key("checkpoint", "checkpoint path (default <out>/checkpoint.json)", &R::checkpoint));
    t.push_back(make_key("vocab", "vocabulary path (default next to the checkpoint)", &R::vocab));
    t.push_back(make_key("sim_episodes", "simulate: episodes per policy", &R::sim_episodes));
    t.push_back(make_key("gammas", "sweep: comma-separated discount factors", &R::gammas));
    return t;
  }();
  return table;
}

const KeyImpl& find_key(std::string_view key) {
  for (const auto& k : key_table()) {
    if (k.meta.name == key) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + std::string(key) + "'");
}

std::vector<std::size_t> parse_widths(std::string_view text) {
  std::vector<std::size_t> out;
  if (trim(text).empty()) return out;
  const std::string s(text);
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = std::min(s.find(',', start), s.size());
    std::size_t w = 0;
    parse_into("hidden", trim(s.substr(start, comma - start)), w);
    if (w == 0) bad_value("hidden", text, "widths must be positive");
    out.push_back(w);
    start = comma + 1;
  }
  return out;
}

void require_one_of(std::string_view key, std::string_view value, std::initializer_list<std::string_view> allowed) {
  for (auto a : allowed) {
    if (value == a) return;
  }
  std::string list;
  for (auto a : allowed) list += (list.empty() ? "" : " | ") + std::string(a);
  bad_value(key, value, "expected " + list);
}

void require_probability(std::string_view key, double v) {
  if (!(v >= 0.0 && v <= 1.0)) bad_value(key, format_double(v), "expected a value in [0, 1]");
}

RunConfig effective(const RunConfig& config) {
  config.validate();
  RunConfig c = config;
  if (c.deterministic) {
    c.threads = 1;
    c.judge_concurrency = 1;
  }
  return c;
}

void require_dataset(const RunConfig& c) {
  if (!c.env_mode() && c.data.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "no data source: set data or env=staged");
  }
}

fs::path out_dir(const RunConfig& c) {
  fs::path dir(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

fs::path checkpoint_path(const RunConfig& c) {
  return c.checkpoint.empty() ? fs::path(c.out) / "checkpoint.json" : fs::path(c.checkpoint);
}

fs::path vocab_path(const RunConfig& c) {
  return c.vocab.empty() ? checkpoint_path(c).parent_path() / "vocab.txt" : fs::path(c.vocab);
}

using Files = std::vector<std::pair<std::string, std::string>>;  // label, path

nlohmann::json hashed(const Files& files) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [label, path] : files) {
    j[label] = {{"path", path}, {"git_blob_sha1", git_blob_sha1(read_file(path))}};
  }
  return j;
}

// `outputs` are names under dir; `artifacts` are written files that may live
// elsewhere (checkpoint, vocabulary).
void write_manifest(const fs::path& dir, std::string_view command, const RunConfig& c, const Files& inputs,
                    const std::vector<std::string>& outputs, const Files& artifacts = {}) {
  nlohmann::json j;
  j["command"] = std::string(command);
  j["config"] = config_map(c);
  j["inputs"] = hashed(inputs);
  j["artifacts"] = hashed(artifacts);
  nlohmann::json out = nlohmann::json::object();
  for (const auto& name : outputs) out[name] = git_blob_sha1(read_file((dir / name).string()));
  j["outputs"] = out;
  write_file((dir / "manifest.json").string(), j.dump(2) + "\n");
}

std::vector<std::string> write_reports(const fs::path& dir, const Evaluation& e, const StrategyCatalog& catalog) {
  write_file((dir / "report.json").string(), e.report.to_json());
  write_file((dir / "confusion.csv").string(), matrix_csv(e.report.confusion, catalog));
  write_file((dir / "transition.csv").string(), matrix_csv(e.report.transition, catalog));
  write_file((dir / "per_strategy.csv").string(), per_strategy_csv(e.rows, catalog));
  return {"report.json", "confusion.csv", "transition.csv", "per_strategy.csv"};
}

struct Labeled {
  std::vector<StrategyId> pred, gold;
  std::vector<std::string> hyps, refs;
};

Evaluation assemble(const Labeled& l, const CountMatrix& transition, const RolloutEvaluation& rollouts,
                    const StrategyCatalog& catalog) {
  if (l.pred.empty()) throw Error(ErrorCode::kEmpty, "no evaluation samples");
  const int K = catalog.size();
  Evaluation e;
  MetricReport& r = e.report;
  r.accuracy = accuracy(l.pred, l.gold);
  r.proficiency = macro_f1(l.pred, l.gold, K);
  r.bias = bt_bias(l.pred, l.gold, K);
  r.bleu2 = bleu2(l.hyps, l.refs);
  r.rouge_l = rouge_l(l.hyps, l.refs);
  r.distinct2 = distinct2(l.hyps);
  r.cider = cider(l.hyps, l.refs);
  r.confusion = confusion_matrix(l.pred, l.gold, K);
  r.transition = transition;
  r.stage_upper_mass = stage_upper_mass(transition, catalog);
  r.avg_reward = rollouts.reward_value.avg_reward;
  r.avg_value = rollouts.reward_value.avg_value;
  r.mean_q = rollouts.mean_q;
  e.rows = per_strategy_rows(l.pred, l.gold, l.hyps, l.refs, K);
  return e;
}

std::vector<std::vector<Transition>> episodes_of(const std::vector<Rollout>& runs) {
  std::vector<std::vector<Transition>> out;
  for (const auto& r : runs) out.push_back(r.steps);
  return out;
}

std::vector<std::vector<StrategyId>> action_sequences(const std::vector<std::vector<Transition>>& episodes) {
  std::vector<std::vector<StrategyId>> out;
  for (const auto& ep : episodes) {
    std::vector<StrategyId> seq;
    for (const auto& t : ep) seq.push_back(t.action);
    out.push_back(std::move(seq));
  }
  return out;
}

IngestResult load_dataset(const std::string& path, std::ostream& log) {
  IngestResult r = load_esconv(path);
  if (r.warnings.total() > 0) log << path << ": " << r.warnings.summary() << "\n";
  return r;
}

// Train and test episodes for dataset mode; test is a seeded split of `data`
// unless test_data is given.
CorpusSplit dataset_split(const RunConfig& c, std::ostream& log) {
  std::vector<Episode> all = load_dataset(c.data, log).episodes;
  if (!c.test_data.empty()) return CorpusSplit{std::move(all), load_dataset(c.test_data, log).episodes};
  return split_corpus(all, c.split_test, derive_seed(c.seed, kSplit));
}

Files data_inputs(const RunConfig& c) {
  Files in;
  if (c.env_mode()) return in;
  in.emplace_back("data", c.data);
  if (!c.test_data.empty()) in.emplace_back("test_data", c.test_data);
  return in;
}

Vocabulary vocab_for(std::span<const Transition> transitions, const StrategyCatalog& catalog, std::size_t size) {
  std::set<std::string> prompts;
  for (const auto& t : transitions) {
    prompts.insert(render_mcq(t.state, catalog));
    if (t.next_state) prompts.insert(render_mcq(*t.next_state, catalog));
  }
  std::vector<std::string> corpus(prompts.begin(), prompts.end());
  for (StrategyId k = 1; k <= catalog.size(); ++k) corpus.push_back(answer_text(k));
  return build_vocab(corpus, size);
}

Predictor greedy(const QNet& net) {
  return [&net](const DialogueState& s) { return net.select(s); };
}

double final_loss(const TrainLog& log) {
  const auto losses = log.losses();
  if (losses.empty()) return 0.0;
  const std::size_t n = std::max<std::size_t>(1, losses.size() / 10);
  double sum = 0.0;
  for (std::size_t i = losses.size() - n; i < losses.size(); ++i) sum += losses[i];
  return sum / static_cast<double>(n);
}

QNet load_model(const RunConfig& c, Files& inputs) {
  auto context = std::make_shared<ScorerContext>();
  const fs::path ckpt = checkpoint_path(c);
  const fs::path vocab = vocab_path(c);
  inputs.emplace_back("checkpoint", ckpt.string());
  if (fs::exists(vocab)) {
    context->vocab = Vocabulary::load(vocab.string());
    inputs.emplace_back("vocab", vocab.string());
  }
  return load_checkpoint(ckpt.string(), context);
}

}  // namespace

int exit_code(ErrorCode code) {
  const std::string_view cat = error_category(code);
  if (cat == "config") return kExitConfig;
  if (cat == "data") return kExitData;
  return kExitFailure;
}

std::string_view error_category(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kBackendMismatch:
    case ErrorCode::kCheckpointMismatch:
      return "config";
    case ErrorCode::kParseError:
    case ErrorCode::kUnknownStrategy:
    case ErrorCode::kUnknownEmotion:
    case ErrorCode::kIo:
    case ErrorCode::kEmptyCorpus:
    case ErrorCode::kInsufficientData:
    case ErrorCode::kEmpty:
    case ErrorCode::kEmptyEpisode:
    case ErrorCode::kInvalidEpisode:
    case ErrorCode::kMissingQuery:
      return "data";
    default:
      return "failure";
  }
}

std::vector<double> RunConfig::gamma_list() const {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= gammas.size()) {
    const std::size_t comma = std::min(gammas.find(',', start), gammas.size());
    double g = 0.0;
    parse_into("gammas", trim(gammas.substr(start, comma - start)), g);
    out.push_back(g);
    start = comma + 1;
  }
  return out;
}

void RunConfig::validate() const {
  require_one_of("env", env, {"", "staged"});
  if (env_mode() && !data.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "set either data or env=staged, not both");
  }
  if (threads == 0) bad_value("threads", "0", "must be positive");
  if (!(split_test >= 0.0 && split_test < 1.0)) bad_value("split_test", show(split_test), "expected [0, 1)");
  require_one_of("reward", reward, {"imit", "distill", "env"});
  if (reward == "env" && !env_mode()) bad_value("reward", reward, "env rewards need env=staged");
  require_one_of("reward_mapping", reward_mapping, {"identity", "affine"});
  require_one_of("judge", judge, {"synthetic", "remote"});
  if (judge_concurrency == 0) bad_value("judge_concurrency", "0", "must be positive");
  require_probability("judge_noise", judge_noise);
  require_one_of("env_reward", env_reward, {"stage_match", "judge"});
  require_probability("advance_on_match", advance_on_match);
  require_probability("advance_otherwise", advance_otherwise);
  if (horizon < 2) bad_value("horizon", show(horizon), "must be at least 2");
  if (eval_episodes == 0) bad_value("eval_episodes", "0", "must be positive");
  require_one_of("sampling", sampling, {"uniform", "in_order"});
  parse_backend(backend);
  parse_precision(precision);
  parse_widths(hidden);
  if (vocab_size < Vocabulary::kReservedCount) {
    bad_value("vocab_size", show(vocab_size), "smaller than the byte alphabet");
  }
  for (double g : gamma_list()) {
    if (!(g >= 0.0 && g < 1.0)) bad_value("gammas", gammas, "each discount must lie in [0, 1)");
  }
  if (steps && *steps == 0) bad_value("steps", "0", "must be positive");
  trainer_config(*this).validate();
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& k : key_table()) out.push_back(k.meta);
    return out;
  }();
  return keys;
}

void set_value(RunConfig& config, std::string_view key, std::string_view value) {
  find_key(key).set(config, trim(value));
}

std::string get_value(const RunConfig& config, std::string_view key) { return find_key(key).get(config); }

std::map<std::string, std::string> config_map(const RunConfig& config, bool redact) {
  std::map<std::string, std::string> out;
  for (const auto& k : key_table()) {
    std::string v = k.get(config);
    if (redact && k.meta.secret && !v.empty()) v = "<redacted>";
    out[k.meta.name] = v;
  }
  return out;
}

void apply_config_text(RunConfig& config, std::string_view text) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::kInvalidArgument, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    try {
      set_value(config, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(e.code(), "config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const std::string& path) { apply_config_text(config, read_file(path)); }

std::string env_var_name(std::string_view key) {
  std::string out = "ESCQ_";
  for (char c : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

void apply_environment(RunConfig& config, const EnvLookup& lookup) {
  for (const auto& k : key_table()) {
    const std::string name = env_var_name(k.meta.name);
    if (const auto v = lookup(name)) {
      try {
        k.set(config, trim(*v));
      } catch (const Error& e) {
        throw Error(e.code(), name + ": " + e.what());
      }
    }
  }
}

void apply_process_environment(RunConfig& config) {
  apply_environment(config, [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  });
}

ScorerConfig scorer_config(const RunConfig& c) {
  ScorerConfig s;
  s.backend = parse_backend(c.backend);
  s.precision = parse_precision(c.precision);
  s.seq.layers = c.layers;
  s.seq.d_model = c.d_model;
  s.seq.heads = c.heads;
  s.seq.d_ff = c.d_ff;
  s.seq.window = c.window;
  s.mlp.hidden = parse_widths(c.hidden);
  s.mlp.features.hash_dim = c.hash_dim;
  s.mlp.features.history_buckets = c.history_buckets;
  s.seed = c.seed;
  return s;
}

TrainerConfig trainer_config(const RunConfig& c) {
  TrainerConfig t = TrainerConfig::defaults_for(parse_backend(c.backend));
  t.gamma = c.gamma;
  if (c.learning_rate) t.learning_rate = *c.learning_rate;
  t.batch_size = c.batch_size;
  t.target_sync_every = c.target_sync_every;
  t.epochs = c.epochs;
  t.window = c.window;
  t.buffer_capacity = c.buffer_capacity;
  t.clip_norm = c.clip_norm;
  t.sampling = c.sampling == "in_order" ? Sampling::InOrder : Sampling::Uniform;
  t.threads = c.deterministic ? 1 : c.threads;
  t.checkpoint_every = c.checkpoint_every;
  t.seed = c.seed;
  return t;
}

StagedEnvConfig env_config(const RunConfig& c) {
  StagedEnvConfig e;
  e.horizon = c.horizon;
  e.advance_on_match = c.advance_on_match;
  e.advance_otherwise = c.advance_otherwise;
  e.reward_source = parse_reward_source(c.env_reward);
  e.seed = derive_seed(c.seed, kEnvStream);
  return e;
}

std::shared_ptr<const Judge> make_judge(const RunConfig& c, const StrategyCatalog& catalog) {
  if (c.judge == "remote") {
    RemoteJudgeConfig r;
    r.endpoint = c.judge_endpoint;
    r.model = c.judge_model;
    r.api_key = c.judge_api_key;
    r.cache_dir = c.judge_cache_dir;
    return std::make_shared<RemoteJudge>(r);
  }
  return std::make_shared<SyntheticJudge>(catalog, derive_seed(c.seed, kJudgeStream), c.horizon, JudgeScale{},
                                          c.judge_noise);
}

Evaluation evaluate_env(const RunConfig& config, const Predictor& predict, const QNet& net) {
  const RunConfig c = effective(config);
  const StrategyCatalog& catalog = net.catalog();
  const auto judge = make_judge(c, catalog);
  StagedEnv env(env_config(c), catalog, judge);
  const TabularMDP mdp = to_tabular(env);
  const ValueIterationResult vi = value_iteration(mdp, c.gamma, 1e-10);

  // Any optimal action counts as gold; otherwise the smallest optimal id.
  Labeled l;
  const auto demo = rollouts(env, demonstrator_policy(env), c.eval_episodes, derive_seed(c.seed, kEvalRollouts));
  for (const auto& run : demo) {
    for (std::size_t i = 0; i < run.steps.size(); ++i) {
      const std::size_t s = mdp.index_of(run.latents[i]).value();
      const StrategyId pred = predict(run.steps[i].state);
      const auto& q = vi.q[s];
      const double best = *std::max_element(q.begin(), q.end());
      const bool optimal = catalog.contains(pred) && q[static_cast<std::size_t>(pred - 1)] >= best - 1e-9;
      const StrategyId gold = optimal ? pred : vi.policy[s];
      l.pred.push_back(pred);
      l.gold.push_back(gold);
      l.hyps.push_back(template_response(catalog, pred));
      l.refs.push_back(template_response(catalog, gold));
    }
  }

  const Policy policy = [&predict](const DialogueState& s, Rng&) { return predict(s); };
  const auto episodes =
      episodes_of(rollouts(env, policy, c.eval_episodes, derive_seed(c.seed, kGreedyRollouts)));
  const CountMatrix transition = transition_matrix(action_sequences(episodes), catalog.size());
  return assemble(l, transition, evaluate_rollouts(episodes, *judge, net, c.gamma), catalog);
}

Evaluation evaluate_dataset(const RunConfig& config, std::span<const Episode> test, const Predictor& predict,
                            const QNet& net) {
  const RunConfig c = effective(config);
  const StrategyCatalog& catalog = net.catalog();
  const auto judge = make_judge(c, catalog);
  Labeled l;
  std::vector<std::vector<Transition>> acted;
  for (const auto& ep : test) {
    auto steps = derive_transitions(ep);
    if (steps.empty()) continue;
    for (auto& t : steps) {
      const StrategyId pred = predict(t.state);
      l.pred.push_back(pred);
      l.gold.push_back(t.action);
      l.hyps.push_back(template_response(catalog, pred));
      l.refs.push_back(t.response);
      t.action = pred;
      t.response = l.hyps.back();
    }
    acted.push_back(std::move(steps));
  }
  if (acted.empty()) throw Error(ErrorCode::kEmpty, "test set has no annotated supporter turns");
  const CountMatrix transition = transition_matrix(action_sequences(acted), catalog.size());
  return assemble(l, transition, evaluate_rollouts(acted, *judge, net, c.gamma), catalog);
}

TrainOutcome cmd_train(const RunConfig& config, std::ostream& log) {
  const RunConfig c = effective(config);
  require_dataset(c);
  const fs::path dir = out_dir(c);
  const StrategyCatalog catalog = StrategyCatalog::esconv();
  const auto judge = make_judge(c, catalog);

  std::vector<Transition> gold, train;
  std::vector<Episode> test;
  if (c.env_mode()) {
    StagedEnv env(env_config(c), catalog, judge);
    const Policy behavior = c.reward == "env" ? uniform_policy(catalog.size()) : demonstrator_policy(env);
    gold = flatten(rollouts(env, behavior, c.episodes, derive_seed(c.seed, kTrainRollouts)));
  } else {
    CorpusSplit split = dataset_split(c, log);
    for (const auto& ep : split.train) {
      auto ts = derive_transitions(ep);
      gold.insert(gold.end(), ts.begin(), ts.end());
    }
    test = std::move(split.test);
    log << "dataset: " << split.train.size() << " train / " << test.size() << " test sessions, " << gold.size()
        << " annotated turns\n";
  }
  if (c.reward == "imit") {
    train = imitation_rewards(gold, catalog, derive_seed(c.seed, kImitation));
  } else if (c.reward == "distill") {
    const RewardMapping mapping = c.reward_mapping == "affine" ? RewardMapping::affine() : RewardMapping::identity();
    train = distill_rewards(gold, *judge, mapping, c.judge_concurrency);
  } else {
    train = std::move(gold);
  }

  auto context = std::make_shared<ScorerContext>();
  const ScorerConfig sc = scorer_config(c);
  if (sc.backend == Backend::Seq) context->vocab = vocab_for(train, catalog, c.vocab_size);

  std::vector<std::string> outputs;
  FitHooks hooks;
  hooks.steps = c.steps;
  if (c.checkpoint_every > 0) {
    fs::create_directories(dir / "checkpoints");
    hooks.on_checkpoint = [&](std::size_t step, const QNet& net) {
      char name[40];
      std::snprintf(name, sizeof name, "checkpoints/step_%08zu.json", step);
      save_checkpoint(net, (dir / name).string());
      outputs.emplace_back(name);
    };
  }
  log << "training " << to_string(sc.backend) << " on " << train.size() << " transitions\n";
  FitResult fit_result = fit(QNet(sc, context), train, trainer_config(c), hooks);
  log << "steps " << fit_result.log.entries.size() << ", final loss " << format_double(final_loss(fit_result.log))
      << "\n";

  const fs::path ckpt = checkpoint_path(c);
  save_checkpoint(fit_result.online, ckpt.string());
  write_file((dir / "loss.csv").string(), fit_result.log.to_csv());
  outputs.emplace_back("loss.csv");
  if (context->vocab) context->vocab->save(vocab_path(c).string());

  TrainOutcome outcome{fit_result.online, std::move(fit_result.log), {}};
  if (c.env_mode()) {
    outcome.evaluation = evaluate_env(c, greedy(outcome.net), outcome.net);
  } else if (!test.empty()) {
    outcome.evaluation = evaluate_dataset(c, test, greedy(outcome.net), outcome.net);
  } else {
    log << "no test sessions; skipping evaluation\n";
  }
  if (c.env_mode() || !test.empty()) {
    for (auto& name : write_reports(dir, outcome.evaluation, catalog)) outputs.push_back(std::move(name));
    log << "accuracy " << format_double(outcome.evaluation.report.accuracy) << ", proficiency "
        << format_double(outcome.evaluation.report.proficiency) << "\n";
  }

  Files artifacts{{"checkpoint", ckpt.string()}};
  if (context->vocab) artifacts.emplace_back("vocab", vocab_path(c).string());
  write_manifest(dir, "train", c, data_inputs(c), outputs, artifacts);
  return outcome;
}

Evaluation cmd_eval(const RunConfig& config, std::ostream& log) {
  const RunConfig c = effective(config);
  require_dataset(c);
  Files inputs;
  const QNet net = load_model(c, inputs);
  const fs::path dir = out_dir(c);
  Evaluation e;
  if (c.env_mode()) {
    e = evaluate_env(c, greedy(net), net);
  } else {
    const CorpusSplit split = dataset_split(c, log);
    e = evaluate_dataset(c, split.test, greedy(net), net);
  }
  for (const auto& in : data_inputs(c)) inputs.push_back(in);
  write_manifest(dir, "eval", c, inputs, write_reports(dir, e, net.catalog()));
  log << "accuracy " << format_double(e.report.accuracy) << ", proficiency " << format_double(e.report.proficiency)
      << ", bias " << format_double(e.report.bias) << "\n";
  return e;
}

void cmd_sweep(const RunConfig& config, std::ostream& log) {
  const RunConfig c = effective(config);
  require_dataset(c);
  const fs::path dir = out_dir(c);
  std::string table = "gamma,accuracy,proficiency,bias,bleu2,rouge_l,final_loss\n";
  std::vector<std::string> outputs;
  for (double g : c.gamma_list()) {
    RunConfig run = c;
    run.gamma = g;
    run.out = (dir / ("gamma_" + format_double(g))).string();
    run.checkpoint.clear();
    run.vocab.clear();
    log << "gamma " << format_double(g) << "\n";
    const TrainOutcome o = cmd_train(run, log);
    const MetricReport& r = o.evaluation.report;
    table += format_double(g);
    for (double v : {r.accuracy, r.proficiency, r.bias, r.bleu2, r.rouge_l, final_loss(o.log)}) {
      table += "," + format_double(v);
    }
    table += "\n";
    outputs.push_back("gamma_" + format_double(g) + "/report.json");
  }
  write_file((dir / "sweep.csv").string(), table);
  outputs.insert(outputs.begin(), "sweep.csv");
  write_manifest(dir, "sweep", c, data_inputs(c), outputs);
  log << table;
}

void cmd_simulate(const RunConfig& config, std::ostream& log) {
  const RunConfig c = effective(config);
  if (c.sim_episodes == 0) throw Error(ErrorCode::kEmpty, "sim_episodes is 0");
  Files inputs;
  const QNet net = load_model(c, inputs);
  const fs::path dir = out_dir(c);
  const StrategyCatalog& catalog = net.catalog();
  const auto judge = make_judge(c, catalog);
  StagedEnv env(env_config(c), catalog, judge);
  const TabularMDP mdp = to_tabular(env);
  const ValueIterationResult vi = value_iteration(mdp, c.gamma, 1e-10);

  const std::vector<std::pair<std::string, Policy>> policies{
      {"model", [&net](const DialogueState& s, Rng&) { return net.select(s); }},
      {"random", uniform_policy(catalog.size())},
      {"oracle", tabular_policy(env, mdp, vi.policy)},
  };
  std::string table = "policy,avg_reward,avg_value,stage_upper_mass,mean_q,turns\n";
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  CountMatrix model_transitions;
  for (const auto& [name, policy] : policies) {
    const auto episodes = episodes_of(rollouts(env, policy, c.sim_episodes, derive_seed(c.seed, kSimRollouts)));
    const CountMatrix tm = transition_matrix(action_sequences(episodes), catalog.size());
    const RolloutEvaluation ev = evaluate_rollouts(episodes, *judge, net, c.gamma);
    const double mass = stage_upper_mass(tm, catalog);
    table += name + "," + format_double(ev.reward_value.avg_reward) + "," + format_double(ev.reward_value.avg_value) +
             "," + format_double(mass) + "," + format_double(ev.mean_q) + "," +
             std::to_string(ev.reward_value.turns) + "\n";
    j[name] = {{"avg_reward", ev.reward_value.avg_reward}, {"avg_value", ev.reward_value.avg_value},
               {"stage_upper_mass", mass},                {"mean_q", ev.mean_q},
               {"turns", ev.reward_value.turns},          {"transition", tm}};
    if (name == "model") model_transitions = tm;
  }
  write_file((dir / "simulate.csv").string(), table);
  write_file((dir / "simulate.json").string(), j.dump(2) + "\n");
  write_file((dir / "transition.csv").string(), matrix_csv(model_transitions, catalog));
  write_manifest(dir, "simulate", c, inputs, {"simulate.csv", "simulate.json", "transition.csv"});
  log << table;
}

void cmd_ingest_stats(const RunConfig& config, std::ostream& out) {
  const RunConfig c = effective(config);
  if (c.data.empty()) throw Error(ErrorCode::kInvalidArgument, "ingest-stats needs data");
  const StrategyCatalog catalog = StrategyCatalog::esconv();
  const IngestResult r = c.plain ? load_plain_dialogues(c.data) : load_esconv(c.data);
  const std::string json = corpus_stats(r.episodes, catalog).to_json(catalog);
  const fs::path dir = out_dir(c);
  write_file((dir / "stats.json").string(), json);
  write_manifest(dir, "ingest-stats", c, data_inputs(c), {"stats.json"});
  out << json;
  if (r.warnings.total() > 0) out << r.warnings.summary() << "\n";
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"train", "eval", "sweep", "simulate", "ingest-stats"};
  return names;
}

int run(std::string_view command, const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    if (command == "train") cmd_train(config, out);
    else if (command == "eval") cmd_eval(config, out);
    else if (command == "sweep") cmd_sweep(config, out);
    else if (command == "simulate") cmd_simulate(config, out);
    else if (command == "ingest-stats") cmd_ingest_stats(config, out);
    else throw Error(ErrorCode::kInvalidArgument, "unknown command '" + std::string(command) + "'");
    return kExitOk;
  } catch (const Error& e) {
    err << error_category(e.code()) << " error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace escq::cli
