#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "escq/core.hpp"
#include "escq/encoder.hpp"

namespace escq {

enum class Backend { Seq, Mlp };
enum class Precision { F64, F32 };

std::string_view to_string(Backend backend);
std::string_view to_string(Precision precision);
Backend parse_backend(std::string_view text);
Precision parse_precision(std::string_view text);

// Causal transformer scorer. Each block is
//   u = h + Wo * attn(Wq h, Wk h, Wv h),  h' = u + W2 tanh(W1 u + b1) + b2
// with sinusoidal positions added to the token embeddings and an untied
// output projection to vocabulary logits.
struct SeqConfig {
  std::size_t layers = 2;
  std::size_t d_model = 64;
  std::size_t heads = 2;
  std::size_t d_ff = 128;
  std::size_t window = kDefaultWindow;
};

// Feature blocks, in order: emotion one-hot (+1 unknown slot), action
// one-hot, stage of the last supporter strategy (I, II, III, unstaged, no
// previous), history-length bucket one-hot, hashed query bag of words.
struct FeatureConfig {
  std::size_t history_buckets = 10;
  std::size_t hash_dim = 64;
};

std::size_t feature_dimension(const FeatureConfig& config, std::size_t emotion_count,
                              int action_count);

std::vector<double> extract_features(const DialogueState& state, StrategyId action,
                                     const StrategyCatalog& catalog,
                                     const EmotionVocabulary& emotions,
                                     const FeatureConfig& config);

struct MlpConfig {
  std::vector<std::size_t> hidden{64, 64};
  FeatureConfig features;
};

struct ScorerConfig {
  Backend backend = Backend::Mlp;
  Precision precision = Precision::F64;
  SeqConfig seq;
  MlpConfig mlp;
  std::uint64_t seed = 0;
};

// Everything a scorer needs besides its weights. Shared, immutable.
struct ScorerContext {
  StrategyCatalog catalog = StrategyCatalog::esconv();
  EmotionVocabulary emotions = EmotionVocabulary::esconv();
  std::optional<Vocabulary> vocab;  // required by the Seq backend
};

// Flat weight vector in the configured precision. The layout is a pure
// function of (config, context sizes).
class ScorerParams {
 public:
  ScorerParams(ScorerConfig config, std::size_t count);

  const ScorerConfig& config() const { return config_; }
  Precision precision() const { return config_.precision; }
  std::size_t size() const;

  double get(std::size_t i) const;
  void set(std::size_t i, double value);
  std::vector<double> to_f64() const;
  void assign(std::span<const double> values);

  template <class F>
  decltype(auto) visit(F&& f) const { return std::visit(std::forward<F>(f), weights_); }
  template <class F>
  decltype(auto) visit(F&& f) { return std::visit(std::forward<F>(f), weights_); }

  bool operator==(const ScorerParams& other) const { return weights_ == other.weights_; }

 private:
  ScorerConfig config_;
  std::variant<std::vector<double>, std::vector<float>> weights_;
};

struct QVector {
  std::vector<double> values;  // values[k - 1] is Q(s, k)

  double at(StrategyId id) const { return values.at(static_cast<std::size_t>(id - 1)); }
  int size() const { return static_cast<int>(values.size()); }
  bool finite() const;
};

// Smallest id attaining the maximum.
StrategyId select_strategy(const QVector& q);

// Q-function over (state, strategy). Value semantics: copying a QNet deep
// copies the weights and shares the immutable context.
class QNet {
 public:
  // Seeded uniform initialization.
  QNet(ScorerConfig config, std::shared_ptr<const ScorerContext> context);
  QNet(ScorerParams params, std::shared_ptr<const ScorerContext> context);

  const ScorerConfig& config() const { return params_.config(); }
  Backend backend() const { return config().backend; }
  const ScorerContext& context() const { return *context_; }
  std::shared_ptr<const ScorerContext> shared_context() const { return context_; }
  const StrategyCatalog& catalog() const { return context_->catalog; }
  int num_actions() const { return context_->catalog.size(); }

  ScorerParams& params() { return params_; }
  const ScorerParams& params() const { return params_; }
  std::size_t num_params() const { return params_.size(); }

  // Seq only: log-softmax over the vocabulary at every position; row i is
  // the distribution of token i + 1 given tokens 0..i.
  std::vector<std::vector<double>> forward(std::span<const TokenId> tokens) const;

  // Mean log-probability of the answer tokens (Seq) or the network output
  // (Mlp).
  double q_value(const DialogueState& state, StrategyId action) const;
  QVector q_all(const DialogueState& state) const;
  StrategyId select(const DialogueState& state) const { return select_strategy(q_all(state)); }

  // grad += scale * dQ(state, action)/dweights; returns Q(state, action).
  double accumulate_grad(const DialogueState& state, StrategyId action, double scale,
                         std::span<double> grad) const;
  std::vector<double> grad_q(const DialogueState& state, StrategyId action) const;

  EncodedPair encode(const DialogueState& state, StrategyId action) const;

 private:
  ScorerParams params_;
  std::shared_ptr<const ScorerContext> context_;
};

// Number of weights implied by a configuration and context.
std::size_t parameter_count(const ScorerConfig& config, const ScorerContext& context);

// Seq checkpoints embed the vocabulary fingerprint; loading with a different
// vocabulary or catalog raises CheckpointMismatch.
std::string serialize_checkpoint(const QNet& net);
QNet deserialize_checkpoint(std::string_view text, std::shared_ptr<const ScorerContext> context);
void save_checkpoint(const QNet& net, const std::string& path);
QNet load_checkpoint(const std::string& path, std::shared_ptr<const ScorerContext> context);

}  // namespace escq
