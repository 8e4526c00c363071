#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "escq/env.hpp"
#include "escq/error.hpp"
#include "escq/metrics.hpp"
#include "escq/qnet.hpp"
#include "escq/trainer.hpp"

namespace escq::cli {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitData = 3, kExitFailure = 4 };

int exit_code(ErrorCode code);
// "config", "data" or "failure".
std::string_view error_category(ErrorCode code);

// Every command reads one RunConfig. Values come from, in increasing
// priority: the defaults below, a key=value config file, ESCQ_<KEY>
// environment variables and command-line flags.
struct RunConfig {
  // General.
  std::string out = "out";
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::size_t threads = 1;

  // Data source: env = "staged" for the synthetic environment, otherwise
  // `data` names an ESConv-style JSON file.
  std::string env;
  std::string data;
  std::string test_data;  // empty: hold out split_test of `data`
  double split_test = 0.1;
  bool plain = false;  // ingest-stats only: unannotated dialogues

  // Rewards. "env" (staged only) keeps the environment's own rewards.
  std::string reward = "imit";
  std::string reward_mapping = "identity";
  std::string judge = "synthetic";
  std::string judge_endpoint = RemoteJudgeConfig{}.endpoint;
  std::string judge_model = RemoteJudgeConfig{}.model;
  std::string judge_api_key;
  std::string judge_cache_dir;
  std::size_t judge_concurrency = 1;
  double judge_noise = 0.1;

  // Staged environment.
  std::size_t horizon = 8;
  std::string env_reward = "stage_match";
  double advance_on_match = 0.8;
  double advance_otherwise = 0.2;
  std::size_t episodes = 2000;
  std::size_t eval_episodes = 200;

  // Scorer.
  std::string backend = "mlp";
  std::string precision = "f64";
  std::size_t layers = 2;
  std::size_t d_model = 64;
  std::size_t heads = 2;
  std::size_t d_ff = 128;
  std::size_t window = kDefaultWindow;
  std::size_t vocab_size = 4096;
  std::string hidden = "64,64";
  std::size_t hash_dim = 64;
  std::size_t history_buckets = 10;

  // Trainer; learning_rate and steps fall back to the backend default and
  // epochs * N / batch_size.
  double gamma = 0.85;
  std::optional<double> learning_rate;
  std::size_t batch_size = 64;
  std::size_t target_sync_every = 10;
  std::size_t epochs = 4;
  std::size_t buffer_capacity = 12000;
  double clip_norm = 1.0;
  std::string sampling = "uniform";
  std::optional<std::size_t> steps;
  std::size_t checkpoint_every = 0;

  // Command inputs. Empty checkpoint means <out>/checkpoint.json; empty vocab
  // means vocab.txt next to the checkpoint.
  std::string checkpoint;
  std::string vocab;
  std::size_t sim_episodes = 1000;
  std::string gammas = "0.75,0.8,0.85,0.9,0.95";

  // Throws InvalidArgument on the first bad value.
  void validate() const;
  bool env_mode() const { return env == "staged"; }
  // Parsed `gammas`.
  std::vector<double> gamma_list() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
  bool flag = false;    // boolean switch on the command line
  bool secret = false;  // redacted from manifests
};

const std::vector<ConfigKey>& config_keys();
// InvalidArgument for unknown keys and unparsable values.
void set_value(RunConfig& config, std::string_view key, std::string_view value);
std::string get_value(const RunConfig& config, std::string_view key);
// All keys; secrets become "<redacted>" when set.
std::map<std::string, std::string> config_map(const RunConfig& config, bool redact = true);

// key = value lines; '#' starts a comment; blank lines are ignored.
void apply_config_text(RunConfig& config, std::string_view text);
void apply_config_file(RunConfig& config, const std::string& path);

// ESCQ_<KEY> with the key upper-cased, e.g. ESCQ_LEARNING_RATE.
std::string env_var_name(std::string_view key);
using EnvLookup = std::function<std::optional<std::string>(const std::string& name)>;
void apply_environment(RunConfig& config, const EnvLookup& lookup);
void apply_process_environment(RunConfig& config);

ScorerConfig scorer_config(const RunConfig& config);
TrainerConfig trainer_config(const RunConfig& config);
StagedEnvConfig env_config(const RunConfig& config);
std::shared_ptr<const Judge> make_judge(const RunConfig& config, const StrategyCatalog& catalog);

struct Evaluation {
  MetricReport report;
  std::vector<StrategyRow> rows;
};

using Predictor = std::function<StrategyId(const DialogueState& state)>;

// Staged environment: gold actions are the value-iteration policy on
// demonstrator states; matrices and rewards come from greedy rollouts of
// `predict`. `net` supplies the mean-Q diagnostic.
Evaluation evaluate_env(const RunConfig& config, const Predictor& predict, const QNet& net);
// Dataset: gold actions and reference utterances from the test episodes;
// hypotheses are the template utterances of the predicted strategies.
Evaluation evaluate_dataset(const RunConfig& config, std::span<const Episode> test, const Predictor& predict,
                            const QNet& net);

struct TrainOutcome {
  QNet net;
  TrainLog log;
  Evaluation evaluation;
};

// The commands write their artifacts under config.out and log progress to
// `log`. They throw escq::Error; run() maps errors to exit codes.
TrainOutcome cmd_train(const RunConfig& config, std::ostream& log);
Evaluation cmd_eval(const RunConfig& config, std::ostream& log);
void cmd_sweep(const RunConfig& config, std::ostream& log);
void cmd_simulate(const RunConfig& config, std::ostream& log);
void cmd_ingest_stats(const RunConfig& config, std::ostream& out);

const std::vector<std::string>& command_names();
int run(std::string_view command, const RunConfig& config, std::ostream& out, std::ostream& err);

}  // namespace escq::cli
