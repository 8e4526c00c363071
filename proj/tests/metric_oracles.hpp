#pragma once

// Brute-force reference implementations of the metrics, written without the
// library's helpers: n-grams are space-joined strings counted by linear scans,
// LCS is found by enumerating subsequences, and Bradley-Terry is fitted by
// Newton's method on log-strengths.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace oracle {

inline std::vector<std::string> tokens(const std::string& text) {
  std::string lower = text;
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  std::istringstream in(lower);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

inline std::vector<std::string> grams(const std::vector<std::string>& t, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) {
    std::string g = t[i];
    for (std::size_t k = 1; k < n; ++k) g += " " + t[i + k];
    out.push_back(g);
  }
  return out;
}

inline std::size_t count_of(const std::vector<std::string>& v, const std::string& x) {
  return static_cast<std::size_t>(std::count(v.begin(), v.end(), x));
}

inline std::vector<std::string> distinct(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

inline double bleu2(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  double match[3] = {0, 0, 0}, total[3] = {0, 0, 0};
  double c = 0, r = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = tokens(hyps[i]);
    const auto f = tokens(refs[i]);
    c += static_cast<double>(h.size());
    r += static_cast<double>(f.size());
    for (std::size_t n = 1; n <= 2; ++n) {
      const auto hg = grams(h, n);
      const auto rg = grams(f, n);
      total[n] += static_cast<double>(hg.size());
      for (const auto& g : distinct(hg)) {
        match[n] += static_cast<double>(std::min(count_of(hg, g), count_of(rg, g)));
      }
    }
  }
  if (c == 0) return 0.0;
  const double p1 = match[1] > 0 ? match[1] / total[1] : 1e-9;
  const double p2 = match[2] > 0 ? match[2] / total[2] : 1e-9;
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::sqrt(p1 * p2);
}

// Longest common subsequence by trying every subsequence of the shorter text.
inline std::size_t lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const auto& s = a.size() <= b.size() ? a : b;
  const auto& t = a.size() <= b.size() ? b : a;
  std::size_t best = 0;
  for (unsigned long mask = 0; mask < (1ul << s.size()); ++mask) {
    std::size_t pos = 0, len = 0;
    bool ok = true;
    for (std::size_t i = 0; i < s.size() && ok; ++i) {
      if (!(mask & (1ul << i))) continue;
      while (pos < t.size() && t[pos] != s[i]) ++pos;
      if (pos == t.size()) ok = false;
      else {
        ++pos;
        ++len;
      }
    }
    if (ok) best = std::max(best, len);
  }
  return best;
}

inline double rouge_l(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  double sum = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = tokens(hyps[i]);
    const auto f = tokens(refs[i]);
    const double l = static_cast<double>(lcs(h, f));
    if (l == 0) continue;
    const double p = l / static_cast<double>(h.size());
    const double r = l / static_cast<double>(f.size());
    const double b2 = 1.44;
    sum += (1 + b2) * p * r / (r + b2 * p);
  }
  return sum / static_cast<double>(hyps.size());
}

inline double distinct2(const std::vector<std::string>& hyps) {
  std::vector<std::string> all;
  for (const auto& h : hyps) {
    const auto g = grams(tokens(h), 2);
    all.insert(all.end(), g.begin(), g.end());
  }
  if (all.empty()) return 0.0;
  return static_cast<double>(distinct(all).size()) / static_cast<double>(all.size());
}

inline double cider(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  const double N = static_cast<double>(refs.size());
  double total = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = tokens(hyps[i]);
    const auto f = tokens(refs[i]);
    const double delta = static_cast<double>(h.size()) - static_cast<double>(f.size());
    double s = 0;
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hg = grams(h, n);
      const auto rg = grams(f, n);
      auto weight = [&](const std::string& g) {
        double df = 0;
        for (const auto& ref : refs) {
          if (count_of(grams(tokens(ref), n), g) > 0) df += 1;
        }
        return std::log(N) - std::log(std::max(1.0, df));
      };
      double dot = 0, hh = 0, rr = 0;
      for (const auto& g : distinct(hg)) {
        const double a = static_cast<double>(count_of(hg, g)) * weight(g);
        const double b = static_cast<double>(count_of(rg, g)) * weight(g);
        dot += a * b;
        hh += a * a;
      }
      for (const auto& g : distinct(rg)) {
        const double b = static_cast<double>(count_of(rg, g)) * weight(g);
        rr += b * b;
      }
      if (hh > 0 && rr > 0) s += dot / std::sqrt(hh * rr) * std::exp(-delta * delta / 72.0);
    }
    total += s / 4;
  }
  return 10.0 * total / static_cast<double>(hyps.size());
}

inline double macro_f1(const std::vector<int>& pred, const std::vector<int>& gold, int K) {
  double sum = 0;
  for (int k = 1; k <= K; ++k) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == k && gold[i] == k) tp += 1;
      if (pred[i] == k && gold[i] != k) fp += 1;
      if (pred[i] != k && gold[i] == k) fn += 1;
    }
    if (tp > 0) sum += 2 * tp / (2 * tp + fp + fn);
  }
  return sum / K;
}

// Log-likelihood of log-strengths theta under wins + prior.
inline double bt_loglik(const std::vector<std::vector<double>>& w, const std::vector<double>& theta) {
  double ll = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (i != j) ll += w[i][j] * (theta[i] - std::log(std::exp(theta[i]) + std::exp(theta[j])));
    }
  }
  return ll;
}

inline std::vector<std::vector<double>> with_prior(const std::vector<std::vector<int>>& wins, double prior) {
  std::vector<std::vector<double>> w(wins.size(), std::vector<double>(wins.size(), 0.0));
  for (std::size_t i = 0; i < wins.size(); ++i) {
    for (std::size_t j = 0; j < wins.size(); ++j) {
      if (i != j) w[i][j] = wins[i][j] + prior;
    }
  }
  return w;
}

inline double sd(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

// Newton iterations on theta[1..K-1] with theta[0] = 0; returns sd(theta),
// which equals the sd of the normalized log-strengths.
inline double bt_bias(const std::vector<std::vector<int>>& wins, double prior = 0.1) {
  const auto w = with_prior(wins, prior);
  const std::size_t K = w.size();
  std::vector<double> theta(K, 0.0);
  for (int it = 0; it < 200; ++it) {
    const std::size_t m = K - 1;
    std::vector<double> g(m, 0.0);
    std::vector<std::vector<double>> H(m, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t j = i + 1; j < K; ++j) {
        const double n = w[i][j] + w[j][i];
        const double p = 1.0 / (1.0 + std::exp(theta[j] - theta[i]));
        const double gi = w[i][j] - n * p;
        const double h = n * p * (1 - p);
        if (i > 0) {
          g[i - 1] += gi;
          H[i - 1][i - 1] -= h;
        }
        if (j > 0) {
          g[j - 1] -= gi;
          H[j - 1][j - 1] -= h;
        }
        if (i > 0 && j > 0) {
          H[i - 1][j - 1] += h;
          H[j - 1][i - 1] += h;
        }
      }
    }
    // Solve H d = -g by Gaussian elimination.
    std::vector<std::vector<double>> A = H;
    std::vector<double> b(m);
    for (std::size_t i = 0; i < m; ++i) b[i] = -g[i];
    for (std::size_t c = 0; c < m; ++c) {
      std::size_t piv = c;
      for (std::size_t r = c + 1; r < m; ++r) {
        if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
      }
      std::swap(A[c], A[piv]);
      std::swap(b[c], b[piv]);
      for (std::size_t r = c + 1; r < m; ++r) {
        const double f = A[r][c] / A[c][c];
        for (std::size_t k = c; k < m; ++k) A[r][k] -= f * A[c][k];
        b[r] -= f * b[c];
      }
    }
    std::vector<double> d(m);
    for (std::size_t c = m; c-- > 0;) {
      double s = b[c];
      for (std::size_t k = c + 1; k < m; ++k) s -= A[c][k] * d[k];
      d[c] = s / A[c][c];
    }
    double step = 0;
    for (std::size_t i = 0; i < m; ++i) {
      theta[i + 1] += d[i];
      step = std::max(step, std::abs(d[i]));
    }
    if (step < 1e-15) break;
  }
  return sd(theta);
}

}  // namespace oracle
