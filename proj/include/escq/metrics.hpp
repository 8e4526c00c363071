#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "escq/core.hpp"

namespace escq {

class Judge;
class QNet;

// Strategy labels are ids in 1..K throughout.
double accuracy(std::span<const StrategyId> pred, std::span<const StrategyId> gold);

struct ClassScores {
  std::size_t support = 0;    // gold count
  std::size_t predicted = 0;  // pred count
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// scores[k - 1]; a class with no true positives has F1 = 0.
std::vector<ClassScores> per_class_scores(std::span<const StrategyId> pred, std::span<const StrategyId> gold, int K);
// Unweighted mean of per-class F1 over all K classes.
double macro_f1(std::span<const StrategyId> pred, std::span<const StrategyId> gold, int K);

using CountMatrix = std::vector<std::vector<std::size_t>>;

// W[i][j] = #{pred = i + 1, gold = j + 1, i != j}.
CountMatrix preference_wins(std::span<const StrategyId> pred, std::span<const StrategyId> gold, int K);

struct BradleyTerryFit {
  std::vector<double> strengths;  // sum to 1
  std::size_t iterations = 0;
};

// Minorization-maximization on wins + prior (added to every ordered pair)
// until the largest strength change is below tol.
BradleyTerryFit fit_bradley_terry(const CountMatrix& wins, double prior = 0.1, double tol = 1e-10,
                                  std::size_t max_iterations = 1000000);
// Population standard deviation of the log strengths.
double log_strength_sd(std::span<const double> strengths);
double bt_bias(std::span<const StrategyId> pred, std::span<const StrategyId> gold, int K);

// Text metrics tokenize with metric_tokens (lowercase, whitespace split).

// Corpus BLEU with weights (1/2, 1/2) over 1- and 2-grams, clipped counts,
// brevity penalty and zero precisions replaced by 1e-9.
double bleu2(std::span<const std::string> hyps, std::span<const std::string> refs);
// Mean LCS F-measure with beta = 1.2.
double rouge_l(std::span<const std::string> hyps, std::span<const std::string> refs);
// Unique bigrams / total bigrams over all hypotheses; 0 when there are none.
double distinct2(std::span<const std::string> hyps);
// tf-idf cosine over n = 1..4 with document frequencies from refs, Gaussian
// length penalty (sigma 6), averaged over n and pairs, times 10.
double cider(std::span<const std::string> hyps, std::span<const std::string> refs);

// confusion[pred - 1][gold - 1].
CountMatrix confusion_matrix(std::span<const StrategyId> pred, std::span<const StrategyId> gold, int K);
// Consecutive pairs within each sequence; nothing crosses sequences.
CountMatrix transition_matrix(std::span<const std::vector<StrategyId>> sequences, int K);
std::vector<std::vector<double>> row_normalized(const CountMatrix& m);
// Rows and columns labeled with strategy names.
std::string matrix_csv(const CountMatrix& m, const StrategyCatalog& catalog);

// Share of transition mass among staged strategies with stage(row) <=
// stage(col); 0 when no staged transitions exist.
double stage_upper_mass(const CountMatrix& transitions, const StrategyCatalog& catalog);

struct RewardValue {
  double avg_reward = 0.0;
  // Sum over turns of the discounted return from that turn to episode end.
  double avg_value = 0.0;
  std::size_t turns = 0;
};

RewardValue avg_reward_value(std::span<const std::vector<double>> episode_rewards, double gamma);

struct RolloutEvaluation {
  RewardValue reward_value;
  double mean_q = 0.0;  // model Q of the chosen actions, diagnostic only
  std::vector<std::vector<double>> rewards;
};

// Scores every turn with the judge and averages the model's Q of the chosen
// actions.
RolloutEvaluation evaluate_rollouts(std::span<const std::vector<Transition>> episodes, const Judge& judge,
                                    const QNet& net, double gamma);

struct MetricReport {
  double accuracy = 0.0;
  double proficiency = 0.0;
  double bias = 0.0;
  double bleu2 = 0.0;
  double rouge_l = 0.0;
  double distinct2 = 0.0;
  double cider = 0.0;
  CountMatrix confusion;
  CountMatrix transition;
  double stage_upper_mass = 0.0;
  double avg_reward = 0.0;
  double avg_value = 0.0;
  double mean_q = 0.0;

  bool finite() const;
  // Deterministic key order; matrices as nested arrays.
  std::string to_json() const;
  // Single header row plus one value row of the scalar metrics.
  std::string to_csv() const;
};

// One row per strategy k, computed over the samples whose gold label is k.
// Rows without support report zeros.
struct StrategyRow {
  std::size_t support = 0;
  std::size_t predicted = 0;
  double accuracy = 0.0;     // recall of k
  double proficiency = 0.0;  // F1 of k
  double bias = 0.0;         // ln(pi_k) minus the mean log strength
  double bleu2 = 0.0;
  double rouge_l = 0.0;
  double distinct2 = 0.0;
  double cider = 0.0;
};

std::vector<StrategyRow> per_strategy_rows(std::span<const StrategyId> pred, std::span<const StrategyId> gold,
                                           std::span<const std::string> hyps, std::span<const std::string> refs,
                                           int K);
// name,abbreviation,stage,support,predicted,accuracy,proficiency,bias,bleu2,rouge_l,distinct2,cider
std::string per_strategy_csv(std::span<const StrategyRow> rows, const StrategyCatalog& catalog);

}  // namespace escq
