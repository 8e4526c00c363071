#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "escq/encoder.hpp"
#include "escq/error.hpp"
#include "layout.hpp"

namespace escq::detail {

// Activations of a causal pass over a token prefix. Position i depends only
// on positions <= i, so a trace can be extended with more tokens and every
// earlier value stays bit-identical.
template <typename Real>
struct SeqTrace {
  std::vector<TokenId> tokens;
  std::vector<std::vector<Real>> h;  // layers + 1 entries, n * d
  std::vector<std::vector<Real>> q, k, v, o, u, g;
  // Attention weights, packed by row: row i holds heads * (i + 1) values
  // starting at heads * i * (i + 1) / 2.
  std::vector<std::vector<Real>> p;
  bool keep_probs = false;

  std::size_t size() const { return tokens.size(); }
};

inline std::size_t tri_offset(std::size_t i, std::size_t heads) { return heads * (i * (i + 1) / 2); }

template <typename Real>
class SeqModel {
 public:
  SeqModel(const SeqLayout& layout, std::span<const Real> weights)
      : L_(layout), w_(weights), dh_(layout.d / layout.heads),
        inv_sqrt_(static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh_)))) {}

  SeqTrace<Real> start(bool keep_probs) const {
    SeqTrace<Real> t;
    const std::size_t layers = L_.blocks.size();
    t.keep_probs = keep_probs;
    t.h.resize(layers + 1);
    t.q.resize(layers);
    t.k.resize(layers);
    t.v.resize(layers);
    t.o.resize(layers);
    t.u.resize(layers);
    t.g.resize(layers);
    t.p.resize(layers);
    return t;
  }

  void extend(SeqTrace<Real>& t, std::span<const TokenId> more) const {
    const std::size_t d = L_.d;
    const std::size_t ff = L_.ff;
    const std::size_t H = L_.heads;
    const std::size_t n0 = t.size();
    for (TokenId id : more) {
      if (id < 0 || static_cast<std::size_t>(id) >= L_.vocab) {
        throw Error(ErrorCode::kIndexOutOfRange, "token id " + std::to_string(id));
      }
      t.tokens.push_back(id);
    }
    const std::size_t n = t.size();
    if (n == n0) return;

    t.h[0].resize(n * d);
    for (std::size_t i = n0; i < n; ++i) {
      const Real* e = w_.data() + L_.embed + static_cast<std::size_t>(t.tokens[i]) * d;
      Real* h = t.h[0].data() + i * d;
      for (std::size_t c = 0; c < d; ++c) h[c] = e[c] + position_code(i, c);
    }

    std::vector<Real> scores;
    std::vector<Real> z(ff);
    for (std::size_t l = 0; l < L_.blocks.size(); ++l) {
      const SeqBlockOffsets& B = L_.blocks[l];
      for (auto* buf : {&t.q[l], &t.k[l], &t.v[l], &t.o[l], &t.u[l], &t.h[l + 1]}) buf->resize(n * d);
      t.g[l].resize(n * ff);
      if (t.keep_probs) t.p[l].resize(tri_offset(n, H));

      for (std::size_t i = n0; i < n; ++i) {
        const Real* h = t.h[l].data() + i * d;
        matvec(B.wq, d, d, h, t.q[l].data() + i * d);
        matvec(B.wk, d, d, h, t.k[l].data() + i * d);
        matvec(B.wv, d, d, h, t.v[l].data() + i * d);
      }
      for (std::size_t i = n0; i < n; ++i) {
        Real* o = t.o[l].data() + i * d;
        std::fill(o, o + d, Real(0));
        scores.resize(i + 1);
        for (std::size_t head = 0; head < H; ++head) {
          const std::size_t off = head * dh_;
          const Real* qi = t.q[l].data() + i * d + off;
          Real mx = -std::numeric_limits<Real>::infinity();
          for (std::size_t j = 0; j <= i; ++j) {
            const Real* kj = t.k[l].data() + j * d + off;
            Real s = 0;
            for (std::size_t c = 0; c < dh_; ++c) s += qi[c] * kj[c];
            s *= inv_sqrt_;
            scores[j] = s;
            mx = std::max(mx, s);
          }
          Real sum = 0;
          for (std::size_t j = 0; j <= i; ++j) {
            scores[j] = std::exp(scores[j] - mx);
            sum += scores[j];
          }
          for (std::size_t j = 0; j <= i; ++j) {
            const Real pj = scores[j] / sum;
            scores[j] = pj;
            const Real* vj = t.v[l].data() + j * d + off;
            for (std::size_t c = 0; c < dh_; ++c) o[off + c] += pj * vj[c];
          }
          if (t.keep_probs) {
            Real* prow = t.p[l].data() + tri_offset(i, H) + head * (i + 1);
            std::copy(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(i + 1), prow);
          }
        }
      }
      for (std::size_t i = n0; i < n; ++i) {
        const Real* h = t.h[l].data() + i * d;
        Real* u = t.u[l].data() + i * d;
        matvec(B.wo, d, d, t.o[l].data() + i * d, u);
        for (std::size_t c = 0; c < d; ++c) u[c] += h[c];
        matvec(B.w1, ff, d, u, z.data());
        Real* g = t.g[l].data() + i * ff;
        for (std::size_t r = 0; r < ff; ++r) g[r] = std::tanh(z[r] + w_[B.b1 + r]);
        Real* hn = t.h[l + 1].data() + i * d;
        matvec(B.w2, d, ff, g, hn);
        for (std::size_t c = 0; c < d; ++c) hn[c] += w_[B.b2 + c] + u[c];
      }
    }
  }

  // Log-softmax of the output logits at position `pos`.
  void log_probs(const SeqTrace<Real>& t, std::size_t pos, std::vector<Real>& out) const {
    const std::size_t d = L_.d;
    const std::size_t V = L_.vocab;
    out.resize(V);
    const Real* h = t.h.back().data() + pos * d;
    matvec(L_.out_w, V, d, h, out.data());
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t r = 0; r < V; ++r) {
      out[r] += w_[L_.out_b + r];
      mx = std::max(mx, out[r]);
    }
    Real sum = 0;
    for (std::size_t r = 0; r < V; ++r) sum += std::exp(out[r] - mx);
    const Real lse = mx + std::log(sum);
    for (std::size_t r = 0; r < V; ++r) out[r] -= lse;
  }

  // Mean log-probability of tokens[span) under the trace.
  Real span_mean(const SeqTrace<Real>& t, TokenSpan span) const {
    std::vector<Real> lp;
    Real total = 0;
    for (std::size_t pos = span.begin; pos < span.end; ++pos) {
      log_probs(t, pos - 1, lp);
      total += lp[static_cast<std::size_t>(t.tokens[pos])];
    }
    return total / static_cast<Real>(span.size());
  }

  // grad += scale * d(span_mean)/dweights. Requires a trace with probs.
  void backward_span(const SeqTrace<Real>& t, TokenSpan span, double scale,
                     std::span<double> grad) const {
    const std::size_t d = L_.d;
    const std::size_t ff = L_.ff;
    const std::size_t H = L_.heads;
    const std::size_t V = L_.vocab;
    const std::size_t n = span.end - 1;  // positions 0..n-1 carry gradient
    std::vector<double> dh(n * d, 0.0);

    std::vector<Real> lp;
    const double per_token = scale / static_cast<double>(span.size());
    for (std::size_t pos = span.begin; pos < span.end; ++pos) {
      const std::size_t i = pos - 1;
      log_probs(t, i, lp);
      const std::size_t target = static_cast<std::size_t>(t.tokens[pos]);
      const Real* h = t.h.back().data() + i * d;
      double* dhi = dh.data() + i * d;
      for (std::size_t r = 0; r < V; ++r) {
        const double dl = per_token * ((r == target ? 1.0 : 0.0) - std::exp(static_cast<double>(lp[r])));
        grad[L_.out_b + r] += dl;
        const Real* wr = w_.data() + L_.out_w + r * d;
        double* gr = grad.data() + L_.out_w + r * d;
        for (std::size_t c = 0; c < d; ++c) {
          gr[c] += dl * static_cast<double>(h[c]);
          dhi[c] += static_cast<double>(wr[c]) * dl;
        }
      }
    }

    std::vector<double> du(n * d), dout(n * d), dq(n * d), dk(n * d), dv(n * d);
    std::vector<double> dg(ff), dp;
    for (std::size_t l = L_.blocks.size(); l-- > 0;) {
      const SeqBlockOffsets& B = L_.blocks[l];
      du = dh;
      for (std::size_t i = 0; i < n; ++i) {
        const double* dm = dh.data() + i * d;
        const Real* g = t.g[l].data() + i * ff;
        const Real* u = t.u[l].data() + i * d;
        std::fill(dg.begin(), dg.end(), 0.0);
        for (std::size_t r = 0; r < d; ++r) {
          grad[B.b2 + r] += dm[r];
          const Real* wr = w_.data() + B.w2 + r * ff;
          double* gr = grad.data() + B.w2 + r * ff;
          for (std::size_t c = 0; c < ff; ++c) {
            gr[c] += dm[r] * static_cast<double>(g[c]);
            dg[c] += static_cast<double>(wr[c]) * dm[r];
          }
        }
        double* dui = du.data() + i * d;
        for (std::size_t r = 0; r < ff; ++r) {
          const double gv = static_cast<double>(g[r]);
          const double dz = dg[r] * (1.0 - gv * gv);
          grad[B.b1 + r] += dz;
          const Real* wr = w_.data() + B.w1 + r * d;
          double* gr = grad.data() + B.w1 + r * d;
          for (std::size_t c = 0; c < d; ++c) {
            gr[c] += dz * static_cast<double>(u[c]);
            dui[c] += static_cast<double>(wr[c]) * dz;
          }
        }
      }
      // u = h + Wo o: the residual carries du straight to h.
      dh = du;
      std::fill(dout.begin(), dout.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double* dui = du.data() + i * d;
        const Real* o = t.o[l].data() + i * d;
        double* doi = dout.data() + i * d;
        for (std::size_t r = 0; r < d; ++r) {
          const Real* wr = w_.data() + B.wo + r * d;
          double* gr = grad.data() + B.wo + r * d;
          for (std::size_t c = 0; c < d; ++c) {
            gr[c] += dui[r] * static_cast<double>(o[c]);
            doi[c] += static_cast<double>(wr[c]) * dui[r];
          }
        }
      }
      std::fill(dq.begin(), dq.end(), 0.0);
      std::fill(dk.begin(), dk.end(), 0.0);
      std::fill(dv.begin(), dv.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        dp.resize(i + 1);
        for (std::size_t head = 0; head < H; ++head) {
          const std::size_t off = head * dh_;
          const Real* prow = t.p[l].data() + tri_offset(i, H) + head * (i + 1);
          const double* doi = dout.data() + i * d + off;
          double weighted = 0.0;
          for (std::size_t j = 0; j <= i; ++j) {
            const Real* vj = t.v[l].data() + j * d + off;
            double s = 0.0;
            for (std::size_t c = 0; c < dh_; ++c) s += doi[c] * static_cast<double>(vj[c]);
            dp[j] = s;
            weighted += static_cast<double>(prow[j]) * s;
          }
          const Real* qi = t.q[l].data() + i * d + off;
          double* dqi = dq.data() + i * d + off;
          for (std::size_t j = 0; j <= i; ++j) {
            const double pj = static_cast<double>(prow[j]);
            const double ds = pj * (dp[j] - weighted) * static_cast<double>(inv_sqrt_);
            const Real* kj = t.k[l].data() + j * d + off;
            double* dkj = dk.data() + j * d + off;
            double* dvj = dv.data() + j * d + off;
            for (std::size_t c = 0; c < dh_; ++c) {
              dvj[c] += pj * doi[c];
              dqi[c] += ds * static_cast<double>(kj[c]);
              dkj[c] += ds * static_cast<double>(qi[c]);
            }
          }
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        const Real* h = t.h[l].data() + i * d;
        double* dhi = dh.data() + i * d;
        const std::pair<std::size_t, const double*> projections[] = {
            {B.wq, dq.data() + i * d}, {B.wk, dk.data() + i * d}, {B.wv, dv.data() + i * d}};
        for (const auto& [off, dy] : projections) {
          for (std::size_t r = 0; r < d; ++r) {
            const Real* wr = w_.data() + off + r * d;
            double* gr = grad.data() + off + r * d;
            for (std::size_t c = 0; c < d; ++c) {
              gr[c] += dy[r] * static_cast<double>(h[c]);
              dhi[c] += static_cast<double>(wr[c]) * dy[r];
            }
          }
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      double* ge = grad.data() + L_.embed + static_cast<std::size_t>(t.tokens[i]) * d;
      const double* dhi = dh.data() + i * d;
      for (std::size_t c = 0; c < d; ++c) ge[c] += dhi[c];
    }
  }

 private:
  Real position_code(std::size_t pos, std::size_t c) const {
    const std::size_t pair = c / 2;
    const double angle = static_cast<double>(pos) /
                         std::pow(10000.0, 2.0 * static_cast<double>(pair) / static_cast<double>(L_.d));
    return static_cast<Real>(c % 2 == 0 ? std::sin(angle) : std::cos(angle));
  }

  // y = W x with W rows x cols row-major at offset.
  void matvec(std::size_t offset, std::size_t rows, std::size_t cols, const Real* x, Real* y) const {
    const Real* W = w_.data() + offset;
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* wr = W + r * cols;
      Real s = 0;
      for (std::size_t c = 0; c < cols; ++c) s += wr[c] * x[c];
      y[r] = s;
    }
  }

  const SeqLayout& L_;
  std::span<const Real> w_;
  std::size_t dh_;
  Real inv_sqrt_;
};

}  // namespace escq::detail
