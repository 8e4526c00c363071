#include "escq/qnet.hpp"

#include <cmath>
#include "json.hpp"

#include "escq/error.hpp"
#include "escq/util.hpp"
#include "layout.hpp"
#include "mlp_model.hpp"
#include "seq_model.hpp"

namespace escq {

using nlohmann::json;

std::string_view to_string(Backend backend) { return backend == Backend::Seq ? "seq" : "mlp"; }
std::string_view to_string(Precision precision) {
  return precision == Precision::F64 ? "f64" : "f32";
}

Backend parse_backend(std::string_view text) {
  const std::string key = to_lower(text);
  if (key == "seq") return Backend::Seq;
  if (key == "mlp") return Backend::Mlp;
  throw Error(ErrorCode::kInvalidArgument, "unknown backend '" + std::string(text) + "'");
}

Precision parse_precision(std::string_view text) {
  const std::string key = to_lower(text);
  if (key == "f64") return Precision::F64;
  if (key == "f32") return Precision::F32;
  throw Error(ErrorCode::kInvalidArgument, "unknown precision '" + std::string(text) + "'");
}

namespace detail {

SeqLayout seq_layout(const SeqConfig& config, std::size_t vocab) {
  if (config.d_model == 0 || config.heads == 0 || config.d_model % config.heads != 0) {
    throw Error(ErrorCode::kInvalidArgument, "d_model must be a positive multiple of heads");
  }
  if (config.layers == 0 || config.d_ff == 0) {
    throw Error(ErrorCode::kInvalidArgument, "layers and d_ff must be positive");
  }
  SeqLayout L;
  L.vocab = vocab;
  L.d = config.d_model;
  L.heads = config.heads;
  L.ff = config.d_ff;
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    const std::size_t off = at;
    at += n;
    return off;
  };
  L.embed = take(vocab * L.d);
  for (std::size_t l = 0; l < config.layers; ++l) {
    SeqBlockOffsets b{};
    b.wq = take(L.d * L.d);
    b.wk = take(L.d * L.d);
    b.wv = take(L.d * L.d);
    b.wo = take(L.d * L.d);
    b.w1 = take(L.ff * L.d);
    b.b1 = take(L.ff);
    b.w2 = take(L.d * L.ff);
    b.b2 = take(L.d);
    L.blocks.push_back(b);
  }
  L.out_w = take(vocab * L.d);
  L.out_b = take(vocab);
  L.total = at;
  return L;
}

MlpLayout mlp_layout(const MlpConfig& config, std::size_t input_dim) {
  MlpLayout L;
  L.input = input_dim;
  std::size_t at = 0;
  std::size_t in = input_dim;
  auto add = [&](std::size_t out) {
    MlpLayerOffsets layer{in, out, at, at + in * out};
    at += in * out + out;
    L.layers.push_back(layer);
    in = out;
  };
  for (std::size_t width : config.hidden) {
    if (width == 0) throw Error(ErrorCode::kInvalidArgument, "hidden width must be positive");
    add(width);
  }
  add(1);
  L.total = at;
  return L;
}

}  // namespace detail

std::size_t feature_dimension(const FeatureConfig& config, std::size_t emotion_count,
                              int action_count) {
  return (emotion_count + 1) + static_cast<std::size_t>(action_count) + 5 +
         config.history_buckets + config.hash_dim;
}

std::vector<double> extract_features(const DialogueState& state, StrategyId action,
                                     const StrategyCatalog& catalog,
                                     const EmotionVocabulary& emotions,
                                     const FeatureConfig& config) {
  if (!catalog.contains(action)) {
    throw Error(ErrorCode::kIndexOutOfRange, "action " + std::to_string(action));
  }
  if (config.history_buckets == 0 || config.hash_dim == 0) {
    throw Error(ErrorCode::kInvalidArgument, "feature blocks must be nonempty");
  }
  std::vector<double> x(feature_dimension(config, emotions.size(), catalog.size()), 0.0);
  std::size_t at = 0;

  const auto emotion = emotions.index_of(state.emotion.label);
  x[at + emotion.value_or(emotions.size())] = 1.0;
  at += emotions.size() + 1;

  x[at + static_cast<std::size_t>(action - 1)] = 1.0;
  at += static_cast<std::size_t>(catalog.size());

  std::size_t last = 4;  // no previous annotated strategy
  if (auto prev = state.last_strategy(); prev && catalog.contains(*prev)) {
    const Stage s = catalog.stage_of(*prev);
    last = s == Stage::None ? 3 : static_cast<std::size_t>(s) - 1;
  }
  x[at + last] = 1.0;
  at += 5;

  x[at + std::min(state.progress(), config.history_buckets - 1)] = 1.0;
  at += config.history_buckets;

  for (const auto& word : metric_tokens(state.query)) {
    x[at + fnv1a64(word) % config.hash_dim] = 1.0;
  }
  return x;
}

std::size_t parameter_count(const ScorerConfig& config, const ScorerContext& context) {
  if (config.backend == Backend::Seq) {
    if (!context.vocab) throw Error(ErrorCode::kInvalidArgument, "seq backend needs a vocabulary");
    return detail::seq_layout(config.seq, context.vocab->size()).total;
  }
  return detail::mlp_layout(config.mlp, feature_dimension(config.mlp.features,
                                                          context.emotions.size(),
                                                          context.catalog.size()))
      .total;
}

ScorerParams::ScorerParams(ScorerConfig config, std::size_t count) : config_(std::move(config)) {
  if (config_.precision == Precision::F64) {
    weights_ = std::vector<double>(count, 0.0);
  } else {
    weights_ = std::vector<float>(count, 0.0f);
  }
}

std::size_t ScorerParams::size() const {
  return visit([](const auto& w) { return w.size(); });
}

double ScorerParams::get(std::size_t i) const {
  return visit([i](const auto& w) { return static_cast<double>(w.at(i)); });
}

void ScorerParams::set(std::size_t i, double value) {
  visit([i, value](auto& w) {
    using Real = typename std::decay_t<decltype(w)>::value_type;
    w.at(i) = static_cast<Real>(value);
  });
}

std::vector<double> ScorerParams::to_f64() const {
  return visit([](const auto& w) { return std::vector<double>(w.begin(), w.end()); });
}

void ScorerParams::assign(std::span<const double> values) {
  if (values.size() != size()) throw Error(ErrorCode::kLengthMismatch, "parameter count");
  visit([values](auto& w) {
    using Real = typename std::decay_t<decltype(w)>::value_type;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<Real>(values[i]);
  });
}

bool QVector::finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

StrategyId select_strategy(const QVector& q) {
  if (q.values.empty()) throw Error(ErrorCode::kEmpty, "empty Q vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < q.values.size(); ++i) {
    if (q.values[i] > q.values[best]) best = i;
  }
  return static_cast<StrategyId>(best + 1);
}

QNet::QNet(ScorerConfig config, std::shared_ptr<const ScorerContext> context)
    : params_(config, parameter_count(config, *context)), context_(std::move(context)) {
  Rng rng(derive_seed(config.seed, 0x51));
  if (config.backend == Backend::Seq) {
    const auto L = detail::seq_layout(config.seq, context_->vocab->size());
    const double bound = 1.0 / std::sqrt(static_cast<double>(L.d));
    auto fill = [&](std::size_t off, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) params_.set(off + i, (2.0 * rng.uniform01() - 1.0) * bound);
    };
    fill(L.embed, L.vocab * L.d);
    for (const auto& b : L.blocks) {
      fill(b.wq, L.d * L.d);
      fill(b.wk, L.d * L.d);
      fill(b.wv, L.d * L.d);
      fill(b.wo, L.d * L.d);
      fill(b.w1, L.ff * L.d);
      fill(b.w2, L.d * L.ff);
    }
    fill(L.out_w, L.vocab * L.d);
  } else {
    const auto L = detail::mlp_layout(
        config.mlp,
        feature_dimension(config.mlp.features, context_->emotions.size(), context_->catalog.size()));
    for (const auto& layer : L.layers) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
      for (std::size_t i = 0; i < layer.in * layer.out; ++i) {
        params_.set(layer.w + i, (2.0 * rng.uniform01() - 1.0) * bound);
      }
    }
  }
}

QNet::QNet(ScorerParams params, std::shared_ptr<const ScorerContext> context)
    : params_(std::move(params)), context_(std::move(context)) {
  if (params_.size() != parameter_count(params_.config(), *context_)) {
    throw Error(ErrorCode::kCheckpointMismatch, "weight count does not match configuration");
  }
}

EncodedPair QNet::encode(const DialogueState& state, StrategyId action) const {
  if (backend() != Backend::Seq) throw Error(ErrorCode::kBackendMismatch, "encode needs seq backend");
  return encode_pair(state, action, context_->catalog, *context_->vocab, config().seq.window);
}

std::vector<std::vector<double>> QNet::forward(std::span<const TokenId> tokens) const {
  if (backend() != Backend::Seq) throw Error(ErrorCode::kBackendMismatch, "forward needs seq backend");
  const auto L = detail::seq_layout(config().seq, context_->vocab->size());
  return params_.visit([&](const auto& w) {
    using Real = typename std::decay_t<decltype(w)>::value_type;
    detail::SeqModel<Real> model(L, w);
    auto trace = model.start(false);
    model.extend(trace, tokens);
    std::vector<std::vector<double>> out;
    std::vector<Real> lp;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      model.log_probs(trace, i, lp);
      out.emplace_back(lp.begin(), lp.end());
    }
    return out;
  });
}

namespace {

std::span<const TokenId> prefix_of(const EncodedPair& pair) {
  return std::span<const TokenId>(pair.tokens).first(pair.action_span.begin);
}

std::span<const TokenId> answer_of(const EncodedPair& pair) {
  return std::span<const TokenId>(pair.tokens).subspan(pair.action_span.begin);
}

}  // namespace

double QNet::q_value(const DialogueState& state, StrategyId action) const {
  if (backend() == Backend::Mlp) {
    const auto x = extract_features(state, action, context_->catalog, context_->emotions,
                                    config().mlp.features);
    const auto L = detail::mlp_layout(config().mlp, x.size());
    return params_.visit([&](const auto& w) {
      using Real = typename std::decay_t<decltype(w)>::value_type;
      return static_cast<double>(detail::MlpModel<Real>(L, w).value(x));
    });
  }
  const EncodedPair pair = encode(state, action);
  const auto L = detail::seq_layout(config().seq, context_->vocab->size());
  return params_.visit([&](const auto& w) {
    using Real = typename std::decay_t<decltype(w)>::value_type;
    detail::SeqModel<Real> model(L, w);
    auto trace = model.start(false);
    model.extend(trace, prefix_of(pair));
    model.extend(trace, answer_of(pair));
    return static_cast<double>(model.span_mean(trace, pair.action_span));
  });
}

QVector QNet::q_all(const DialogueState& state) const {
  QVector q;
  q.values.resize(static_cast<std::size_t>(num_actions()));
  if (backend() == Backend::Mlp) {
    for (StrategyId a = 1; a <= num_actions(); ++a) q.values[static_cast<std::size_t>(a - 1)] = q_value(state, a);
    return q;
  }
  const auto L = detail::seq_layout(config().seq, context_->vocab->size());
  params_.visit([&](const auto& w) {
    using Real = typename std::decay_t<decltype(w)>::value_type;
    detail::SeqModel<Real> model(L, w);
    // Options share the prompt, so its activations are computed once and
    // reused whenever the truncated prefix is identical.
    std::vector<TokenId> cached_prefix;
    auto prefix_trace = model.start(false);
    for (StrategyId a = 1; a <= num_actions(); ++a) {
      const EncodedPair pair = encode(state, a);
      const auto prefix = prefix_of(pair);
      if (prefix_trace.size() == 0 || !std::equal(prefix.begin(), prefix.end(), cached_prefix.begin(),
                                                   cached_prefix.end())) {
        cached_prefix.assign(prefix.begin(), prefix.end());
        prefix_trace = model.start(false);
        model.extend(prefix_trace, prefix);
      }
      auto trace = prefix_trace;
      model.extend(trace, answer_of(pair));
      q.values[static_cast<std::size_t>(a - 1)] = static_cast<double>(model.span_mean(trace, pair.action_span));
    }
  });
  return q;
}

double QNet::accumulate_grad(const DialogueState& state, StrategyId action, double scale,
                             std::span<double> grad) const {
  if (grad.size() != num_params()) throw Error(ErrorCode::kLengthMismatch, "gradient buffer size");
  if (backend() == Backend::Mlp) {
    const auto x = extract_features(state, action, context_->catalog, context_->emotions,
                                    config().mlp.features);
    const auto L = detail::mlp_layout(config().mlp, x.size());
    return params_.visit([&](const auto& w) {
      using Real = typename std::decay_t<decltype(w)>::value_type;
      return static_cast<double>(detail::MlpModel<Real>(L, w).accumulate_grad(x, scale, grad));
    });
  }
  const EncodedPair pair = encode(state, action);
  const auto L = detail::seq_layout(config().seq, context_->vocab->size());
  return params_.visit([&](const auto& w) {
    using Real = typename std::decay_t<decltype(w)>::value_type;
    detail::SeqModel<Real> model(L, w);
    auto trace = model.start(true);
    model.extend(trace, prefix_of(pair));
    model.extend(trace, answer_of(pair));
    model.backward_span(trace, pair.action_span, scale, grad);
    return static_cast<double>(model.span_mean(trace, pair.action_span));
  });
}

std::vector<double> QNet::grad_q(const DialogueState& state, StrategyId action) const {
  std::vector<double> grad(num_params(), 0.0);
  accumulate_grad(state, action, 1.0, grad);
  return grad;
}

namespace {

constexpr int kCheckpointVersion = 1;

json config_to_json(const ScorerConfig& c) {
  return json{{"backend", to_string(c.backend)},
              {"precision", to_string(c.precision)},
              {"seed", c.seed},
              {"seq",
               {{"layers", c.seq.layers},
                {"d_model", c.seq.d_model},
                {"heads", c.seq.heads},
                {"d_ff", c.seq.d_ff},
                {"window", c.seq.window}}},
              {"mlp",
               {{"hidden", c.mlp.hidden},
                {"history_buckets", c.mlp.features.history_buckets},
                {"hash_dim", c.mlp.features.hash_dim}}}};
}

ScorerConfig config_from_json(const json& j) {
  ScorerConfig c;
  c.backend = parse_backend(j.at("backend").get<std::string>());
  c.precision = parse_precision(j.at("precision").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  const json& s = j.at("seq");
  c.seq.layers = s.at("layers").get<std::size_t>();
  c.seq.d_model = s.at("d_model").get<std::size_t>();
  c.seq.heads = s.at("heads").get<std::size_t>();
  c.seq.d_ff = s.at("d_ff").get<std::size_t>();
  c.seq.window = s.at("window").get<std::size_t>();
  const json& m = j.at("mlp");
  c.mlp.hidden = m.at("hidden").get<std::vector<std::size_t>>();
  c.mlp.features.history_buckets = m.at("history_buckets").get<std::size_t>();
  c.mlp.features.hash_dim = m.at("hash_dim").get<std::size_t>();
  return c;
}

}  // namespace

std::string serialize_checkpoint(const QNet& net) {
  json j;
  j["format"] = "escq-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config"] = config_to_json(net.config());
  j["catalog_sha256"] = net.catalog().fingerprint();
  j["emotions"] = std::vector<std::string>(net.context().emotions.labels().begin(),
                                           net.context().emotions.labels().end());
  if (net.context().vocab) {
    j["vocab_sha256"] = net.context().vocab->fingerprint();
    j["vocab_size"] = net.context().vocab->size();
  }
  net.params().visit([&j](const auto& w) { j["weights"] = w; });
  return j.dump() + "\n";
}

QNet deserialize_checkpoint(std::string_view text, std::shared_ptr<const ScorerContext> context) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("checkpoint: ") + e.what());
  }
  try {
    if (j.at("format") != "escq-checkpoint") throw Error(ErrorCode::kParseError, "not a checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorCode::kParseError, "unsupported checkpoint version");
    }
    const ScorerConfig config = config_from_json(j.at("config"));
    if (j.at("catalog_sha256").get<std::string>() != context->catalog.fingerprint()) {
      throw Error(ErrorCode::kCheckpointMismatch, "strategy catalog differs from training");
    }
    const auto emotions = j.at("emotions").get<std::vector<std::string>>();
    if (!std::equal(emotions.begin(), emotions.end(), context->emotions.labels().begin(),
                    context->emotions.labels().end())) {
      throw Error(ErrorCode::kCheckpointMismatch, "emotion vocabulary differs from training");
    }
    if (config.backend == Backend::Seq) {
      if (!context->vocab || j.at("vocab_sha256").get<std::string>() != context->vocab->fingerprint()) {
        throw Error(ErrorCode::kCheckpointMismatch, "vocabulary differs from training");
      }
    }
    ScorerParams params(config, 0);
    params.visit([&j](auto& w) {
      using Real = typename std::decay_t<decltype(w)>::value_type;
      w = j.at("weights").get<std::vector<Real>>();
    });
    return QNet(std::move(params), std::move(context));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const QNet& net, const std::string& path) {
  write_file(path, serialize_checkpoint(net));
}

QNet load_checkpoint(const std::string& path, std::shared_ptr<const ScorerContext> context) {
  return deserialize_checkpoint(read_file(path), std::move(context));
}

}  // namespace escq
