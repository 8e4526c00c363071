#include "escq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "escq/error.hpp"
#include "escq/qnet.hpp"
#include "escq/rewards.hpp"
#include "escq/util.hpp"
#include "json.hpp"

namespace escq {

namespace {

void check_pair(std::span<const StrategyId> pred, std::span<const StrategyId> gold) {
  if (pred.size() != gold.size()) {
    throw Error(ErrorCode::kLengthMismatch,
                std::to_string(pred.size()) + " predictions vs " + std::to_string(gold.size()) + " labels");
  }
}

void check_labels(std::span<const StrategyId> ids, int K) {
  for (StrategyId id : ids) {
    if (id < 1 || id > K) throw Error(ErrorCode::kInvalidArgument, "label " + std::to_string(id) + " outside 1..K");
  }
}

void check_texts(std::span<const std::string> hyps, std::span<const std::string> refs) {
  if (hyps.size() != refs.size()) {
    throw Error(ErrorCode::kLengthMismatch,
                std::to_string(hyps.size()) + " hypotheses vs " + std::to_string(refs.size()) + " references");
  }
  if (hyps.empty()) throw Error(ErrorCode::kEmpty, "no hypotheses");
}

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<Ngram, std::size_t> out;
  if (tokens.size() < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++out[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double accuracy(std::span<const StrategyId> pred, std::span<const StrategyId> gold) {
  check_pair(pred, gold);
  if (pred.empty()) throw Error(ErrorCode::kEmpty, "no predictions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == gold[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::vector<ClassScores> per_class_scores(std::span<const StrategyId> pred, std::span<const StrategyId> gold, int K) {
  check_pair(pred, gold);
  check_labels(pred, K);
  check_labels(gold, K);
  std::vector<ClassScores> out(static_cast<std::size_t>(K));
  std::vector<std::size_t> tp(static_cast<std::size_t>(K), 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ++out[static_cast<std::size_t>(pred[i] - 1)].predicted;
    ++out[static_cast<std::size_t>(gold[i] - 1)].support;
    if (pred[i] == gold[i]) ++tp[static_cast<std::size_t>(pred[i] - 1)];
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    ClassScores& c = out[k];
    if (tp[k] == 0) continue;
    c.precision = static_cast<double>(tp[k]) / static_cast<double>(c.predicted);
    c.recall = static_cast<double>(tp[k]) / static_cast<double>(c.support);
    c.f1 = 2.0 * c.precision * c.recall / (c.precision + c.recall);
  }
  return out;
}

double macro_f1(std::span<const StrategyId> pred, std::span<const StrategyId> gold, int K) {
  const auto scores = per_class_scores(pred, gold, K);
  double sum = 0.0;
  for (const auto& c : scores) sum += c.f1;
  return sum / static_cast<double>(K);
}

CountMatrix preference_wins(std::span<const StrategyId> pred, std::span<const StrategyId> gold, int K) {
  check_pair(pred, gold);
  check_labels(pred, K);
  check_labels(gold, K);
  CountMatrix w(static_cast<std::size_t>(K), std::vector<std::size_t>(static_cast<std::size_t>(K), 0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] != gold[i]) ++w[static_cast<std::size_t>(pred[i] - 1)][static_cast<std::size_t>(gold[i] - 1)];
  }
  return w;
}

BradleyTerryFit fit_bradley_terry(const CountMatrix& wins, double prior, double tol, std::size_t max_iterations) {
  const std::size_t K = wins.size();
  for (const auto& row : wins) {
    if (row.size() != K) throw Error(ErrorCode::kInvalidArgument, "win matrix must be square");
  }
  if (!(prior > 0.0)) throw Error(ErrorCode::kInvalidArgument, "prior must be positive");
  BradleyTerryFit fit;
  fit.strengths.assign(K, K == 0 ? 0.0 : 1.0 / static_cast<double>(K));
  if (K < 2) return fit;

  std::vector<std::vector<double>> w(K, std::vector<double>(K, 0.0));
  std::vector<double> total(K, 0.0);
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      if (i == j) continue;
      w[i][j] = static_cast<double>(wins[i][j]) + prior;
      total[i] += w[i][j];
    }
  }
  std::vector<double>& pi = fit.strengths;
  std::vector<double> next(K);
  while (fit.iterations < max_iterations) {
    ++fit.iterations;
    double sum = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      double denom = 0.0;
      for (std::size_t j = 0; j < K; ++j) {
        if (j != i) denom += (w[i][j] + w[j][i]) / (pi[i] + pi[j]);
      }
      next[i] = total[i] / denom;
      sum += next[i];
    }
    double change = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      next[i] /= sum;
      change = std::max(change, std::abs(next[i] - pi[i]));
    }
    // The current iterate already satisfies the tolerance; keep it.
    if (change < tol) break;
    pi.swap(next);
  }
  return fit;
}

double log_strength_sd(std::span<const double> strengths) {
  if (strengths.empty()) return 0.0;
  // Deviations from the first element so that equal inputs give exactly 0.
  const double ref = std::log(strengths[0]);
  std::vector<double> d(strengths.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(strengths[i] > 0.0)) throw Error(ErrorCode::kInvalidArgument, "strengths must be positive");
    d[i] = std::log(strengths[i]) - ref;
    mean += d[i];
  }
  mean /= static_cast<double>(d.size());
  double var = 0.0;
  for (double x : d) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(d.size()));
}

double bt_bias(std::span<const StrategyId> pred, std::span<const StrategyId> gold, int K) {
  return log_strength_sd(fit_bradley_terry(preference_wins(pred, gold, K)).strengths);
}

double bleu2(std::span<const std::string> hyps, std::span<const std::string> refs) {
  check_texts(hyps, refs);
  constexpr double kEps = 1e-9;
  std::size_t matches[2] = {0, 0}, totals[2] = {0, 0};
  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = metric_tokens(hyps[i]);
    const auto r = metric_tokens(refs[i]);
    hyp_len += h.size();
    ref_len += r.size();
    for (std::size_t n = 1; n <= 2; ++n) {
      const auto hc = ngram_counts(h, n);
      const auto rc = ngram_counts(r, n);
      for (const auto& [g, c] : hc) {
        auto it = rc.find(g);
        matches[n - 1] += std::min(c, it == rc.end() ? std::size_t{0} : it->second);
        totals[n - 1] += c;
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_p = 0.0;
  for (int n = 0; n < 2; ++n) {
    const double p = matches[n] == 0 ? kEps : static_cast<double>(matches[n]) / static_cast<double>(totals[n]);
    log_p += 0.5 * std::log(p);
  }
  const double bp =
      hyp_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)) : 1.0;
  return bp * std::exp(log_p);
}

double rouge_l(std::span<const std::string> hyps, std::span<const std::string> refs) {
  check_texts(hyps, refs);
  constexpr double kBeta2 = 1.2 * 1.2;
  double sum = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = metric_tokens(hyps[i]);
    const auto r = metric_tokens(refs[i]);
    const std::size_t lcs = lcs_length(h, r);
    if (lcs == 0) continue;
    const double p = static_cast<double>(lcs) / static_cast<double>(h.size());
    const double rec = static_cast<double>(lcs) / static_cast<double>(r.size());
    sum += (1.0 + kBeta2) * p * rec / (rec + kBeta2 * p);
  }
  return sum / static_cast<double>(hyps.size());
}

double distinct2(std::span<const std::string> hyps) {
  if (hyps.empty()) throw Error(ErrorCode::kEmpty, "no hypotheses");
  std::set<std::pair<std::string, std::string>> unique;
  std::size_t total = 0;
  for (const auto& text : hyps) {
    const auto t = metric_tokens(text);
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
      unique.emplace(t[i], t[i + 1]);
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(total);
}

double cider(std::span<const std::string> hyps, std::span<const std::string> refs) {
  check_texts(hyps, refs);
  constexpr std::size_t kMaxN = 4;
  constexpr double kSigma = 6.0;
  const std::size_t N = refs.size();
  const double log_n = std::log(static_cast<double>(N));

  std::vector<std::vector<std::string>> htok, rtok;
  for (const auto& h : hyps) htok.push_back(metric_tokens(h));
  for (const auto& r : refs) rtok.push_back(metric_tokens(r));

  std::vector<std::vector<std::map<Ngram, std::size_t>>> hc(N), rc(N);
  std::vector<std::map<Ngram, std::size_t>> df(kMaxN);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      hc[i].push_back(ngram_counts(htok[i], n));
      rc[i].push_back(ngram_counts(rtok[i], n));
      for (const auto& [g, c] : rc[i].back()) ++df[n - 1][g];
    }
  }
  auto idf = [&](std::size_t n, const Ngram& g) {
    auto it = df[n].find(g);
    const double d = it == df[n].end() ? 0.0 : static_cast<double>(it->second);
    return log_n - std::log(std::max(1.0, d));
  };

  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double delta = static_cast<double>(htok[i].size()) - static_cast<double>(rtok[i].size());
    const double penalty = std::exp(-(delta * delta) / (2.0 * kSigma * kSigma));
    double score = 0.0;
    for (std::size_t n = 0; n < kMaxN; ++n) {
      std::map<Ngram, double> hv, rv;
      for (const auto& [g, c] : hc[i][n]) hv[g] = static_cast<double>(c) * idf(n, g);
      for (const auto& [g, c] : rc[i][n]) rv[g] = static_cast<double>(c) * idf(n, g);
      double hn = 0.0, rn = 0.0, dot = 0.0;
      for (const auto& [g, v] : hv) {
        hn += v * v;
        auto it = rv.find(g);
        if (it != rv.end()) dot += v * it->second;
      }
      for (const auto& [g, v] : rv) rn += v * v;
      if (hn > 0.0 && rn > 0.0) score += dot / std::sqrt(hn * rn) * penalty;
    }
    total += score / static_cast<double>(kMaxN);
  }
  return 10.0 * total / static_cast<double>(N);
}

CountMatrix confusion_matrix(std::span<const StrategyId> pred, std::span<const StrategyId> gold, int K) {
  check_pair(pred, gold);
  check_labels(pred, K);
  check_labels(gold, K);
  CountMatrix m(static_cast<std::size_t>(K), std::vector<std::size_t>(static_cast<std::size_t>(K), 0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ++m[static_cast<std::size_t>(pred[i] - 1)][static_cast<std::size_t>(gold[i] - 1)];
  }
  return m;
}

CountMatrix transition_matrix(std::span<const std::vector<StrategyId>> sequences, int K) {
  CountMatrix m(static_cast<std::size_t>(K), std::vector<std::size_t>(static_cast<std::size_t>(K), 0));
  for (const auto& seq : sequences) {
    check_labels(seq, K);
    for (std::size_t i = 1; i < seq.size(); ++i) {
      ++m[static_cast<std::size_t>(seq[i - 1] - 1)][static_cast<std::size_t>(seq[i] - 1)];
    }
  }
  return m;
}

std::vector<std::vector<double>> row_normalized(const CountMatrix& m) {
  std::vector<std::vector<double>> out;
  for (const auto& row : m) {
    std::size_t sum = 0;
    for (auto c : row) sum += c;
    std::vector<double> r(row.size(), 0.0);
    if (sum > 0) {
      for (std::size_t j = 0; j < row.size(); ++j) r[j] = static_cast<double>(row[j]) / static_cast<double>(sum);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string matrix_csv(const CountMatrix& m, const StrategyCatalog& catalog) {
  if (m.size() != static_cast<std::size_t>(catalog.size())) {
    throw Error(ErrorCode::kLengthMismatch, "matrix size does not match the catalog");
  }
  auto quote = [](const std::string& s) {
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  std::string out = "\"\"";
  for (const auto& s : catalog.strategies()) out += "," + quote(s.name);
  out += "\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    out += quote(catalog.at(static_cast<StrategyId>(i + 1)).name);
    for (auto c : m[i]) out += "," + std::to_string(c);
    out += "\n";
  }
  return out;
}

double stage_upper_mass(const CountMatrix& transitions, const StrategyCatalog& catalog) {
  if (transitions.size() != static_cast<std::size_t>(catalog.size())) {
    throw Error(ErrorCode::kLengthMismatch, "matrix size does not match the catalog");
  }
  std::size_t upper = 0, total = 0;
  for (std::size_t i = 0; i < transitions.size(); ++i) {
    const Stage si = catalog.stage_of(static_cast<StrategyId>(i + 1));
    if (!is_staged(si)) continue;
    for (std::size_t j = 0; j < transitions[i].size(); ++j) {
      const Stage sj = catalog.stage_of(static_cast<StrategyId>(j + 1));
      if (!is_staged(sj)) continue;
      total += transitions[i][j];
      if (stage_order(si) <= stage_order(sj)) upper += transitions[i][j];
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(upper) / static_cast<double>(total);
}

RewardValue avg_reward_value(std::span<const std::vector<double>> episode_rewards, double gamma) {
  RewardValue out;
  double reward_sum = 0.0;
  for (const auto& ep : episode_rewards) {
    double ret = 0.0;
    for (std::size_t k = ep.size(); k-- > 0;) {
      ret = ep[k] + gamma * ret;
      out.avg_value += ret;
      reward_sum += ep[k];
    }
    out.turns += ep.size();
  }
  if (out.turns == 0) throw Error(ErrorCode::kEmpty, "no evaluated turns");
  out.avg_reward = reward_sum / static_cast<double>(out.turns);
  return out;
}

RolloutEvaluation evaluate_rollouts(std::span<const std::vector<Transition>> episodes, const Judge& judge,
                                    const QNet& net, double gamma) {
  RolloutEvaluation out;
  double q_sum = 0.0;
  std::size_t n = 0;
  for (const auto& ep : episodes) {
    std::vector<double> rewards;
    for (const auto& t : ep) {
      rewards.push_back(static_cast<double>(judge.score(t.state, t.action, t.response)));
      q_sum += net.q_value(t.state, t.action);
      ++n;
    }
    out.rewards.push_back(std::move(rewards));
  }
  out.reward_value = avg_reward_value(out.rewards, gamma);
  out.mean_q = q_sum / static_cast<double>(n);
  return out;
}

bool MetricReport::finite() const {
  for (double v : {accuracy, proficiency, bias, bleu2, rouge_l, distinct2, cider, stage_upper_mass, avg_reward,
                   avg_value, mean_q}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["accuracy"] = accuracy;
  j["proficiency"] = proficiency;
  j["bias"] = bias;
  j["bleu2"] = bleu2;
  j["rouge_l"] = rouge_l;
  j["distinct2"] = distinct2;
  j["cider"] = cider;
  j["stage_upper_mass"] = stage_upper_mass;
  j["avg_reward"] = avg_reward;
  j["avg_value"] = avg_value;
  j["mean_q"] = mean_q;
  j["confusion"] = confusion;
  j["transition"] = transition;
  return j.dump(2) + "\n";
}

std::string MetricReport::to_csv() const {
  std::string out =
      "accuracy,proficiency,bias,bleu2,rouge_l,distinct2,cider,stage_upper_mass,avg_reward,avg_value,mean_q\n";
  const double vals[] = {accuracy, proficiency,      bias,       bleu2,     rouge_l, distinct2,
                         cider,    stage_upper_mass, avg_reward, avg_value, mean_q};
  for (std::size_t i = 0; i < std::size(vals); ++i) {
    if (i) out += ",";
    out += format_double(vals[i]);
  }
  return out + "\n";
}

std::vector<StrategyRow> per_strategy_rows(std::span<const StrategyId> pred, std::span<const StrategyId> gold,
                                           std::span<const std::string> hyps, std::span<const std::string> refs,
                                           int K) {
  check_pair(pred, gold);
  check_labels(pred, K);
  check_labels(gold, K);
  if (hyps.size() != pred.size() || refs.size() != pred.size()) {
    throw Error(ErrorCode::kLengthMismatch, "texts do not match the label count");
  }
  const auto scores = per_class_scores(pred, gold, K);
  const auto fit = fit_bradley_terry(preference_wins(pred, gold, K));
  double mean_log = 0.0;
  for (double p : fit.strengths) mean_log += std::log(p);
  mean_log /= static_cast<double>(K);

  std::vector<StrategyRow> rows(static_cast<std::size_t>(K));
  for (int k = 1; k <= K; ++k) {
    StrategyRow& row = rows[static_cast<std::size_t>(k - 1)];
    const ClassScores& c = scores[static_cast<std::size_t>(k - 1)];
    row.support = c.support;
    row.predicted = c.predicted;
    row.accuracy = c.recall;
    row.proficiency = c.f1;
    row.bias = std::log(fit.strengths[static_cast<std::size_t>(k - 1)]) - mean_log;
    std::vector<std::string> h, r;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (gold[i] != k) continue;
      h.push_back(hyps[i]);
      r.push_back(refs[i]);
    }
    if (h.empty()) continue;
    row.bleu2 = bleu2(h, r);
    row.rouge_l = rouge_l(h, r);
    row.distinct2 = distinct2(h);
    row.cider = cider(h, r);
  }
  return rows;
}

std::string per_strategy_csv(std::span<const StrategyRow> rows, const StrategyCatalog& catalog) {
  if (rows.size() != static_cast<std::size_t>(catalog.size())) {
    throw Error(ErrorCode::kLengthMismatch, "row count does not match the catalog");
  }
  std::string out = "name,abbreviation,stage,support,predicted,accuracy,proficiency,bias,bleu2,rouge_l,distinct2,cider\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Strategy& s = catalog.at(static_cast<StrategyId>(k + 1));
    const StrategyRow& r = rows[k];
    out += "\"" + s.name + "\"," + s.abbreviation + "," + std::string(to_string(s.stage)) + "," +
           std::to_string(r.support) + "," + std::to_string(r.predicted);
    for (double v : {r.accuracy, r.proficiency, r.bias, r.bleu2, r.rouge_l, r.distinct2, r.cider}) {
      out += "," + format_double(v);
    }
    out += "\n";
  }
  return out;
}

}  // namespace escq
