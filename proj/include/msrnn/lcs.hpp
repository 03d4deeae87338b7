#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "msrnn/model.hpp"

namespace msrnn {

// (m+1) x (n+1) dynamic-programming table with zero boundary.
struct DPTable {
  std::size_t m = 0, n = 0;
  std::vector<int> c;

  int at(std::size_t i, std::size_t j) const { return c[i * (n + 1) + j]; }
  int& at(std::size_t i, std::size_t j) { return c[i * (n + 1) + j]; }
  int lcs_length() const { return at(m, n); }
};

// c[i,j] = max(c[i,j-1], c[i-1,j], c[i-1,j-1] + [x_i == y_j])
inline DPTable lcs_table(const TokenSeq& x, const TokenSeq& y) {
  DPTable t;
  t.m = x.size();
  t.n = y.size();
  t.c.assign((t.m + 1) * (t.n + 1), 0);
  for (std::size_t i = 1; i <= t.m; ++i) {
    for (std::size_t j = 1; j <= t.n; ++j) {
      const int match = x.ids[i - 1] == y.ids[j - 1] ? 1 : 0;
      t.at(i, j) = std::max({t.at(i, j - 1), t.at(i - 1, j), t.at(i - 1, j - 1) + match});
    }
  }
  return t;
}

enum class Move { left, top, diagonal };

inline const char* to_string(Move m) {
  switch (m) {
    case Move::left: return "left";
    case Move::top: return "top";
    case Move::diagonal: return "diagonal";
  }
  return "?";
}

// Walk from (m,n) to the boundary. positions[k+1] results from taking
// moves[k] at positions[k]; both indices only ever decrease.
struct MatchPath {
  std::size_t m = 0, n = 0;
  std::vector<std::pair<std::size_t, std::size_t>> positions;
  std::vector<Move> moves;
};

// Provenance walk over the DP table: diagonal on a match, otherwise toward
// the larger predecessor with ties preferring top.
inline MatchPath dp_backtrace(const DPTable& t, const TokenSeq& x, const TokenSeq& y) {
  if (t.m != x.size() || t.n != y.size()) {
    throw InternalError("dp_backtrace: table does not match sequences");
  }
  MatchPath path;
  path.m = t.m;
  path.n = t.n;
  std::size_t i = t.m, j = t.n;
  path.positions.emplace_back(i, j);
  while (i > 0 && j > 0) {
    const bool match = x.ids[i - 1] == y.ids[j - 1];
    Move mv;
    if (match && t.at(i, j) == t.at(i - 1, j - 1) + 1) {
      mv = Move::diagonal;
    } else if (t.at(i - 1, j) >= t.at(i, j - 1)) {
      mv = Move::top;
    } else {
      mv = Move::left;
    }
    const int expected = std::max(
        {t.at(i, j - 1), t.at(i - 1, j), t.at(i - 1, j - 1) + (match ? 1 : 0)});
    if (t.at(i, j) != expected) {
      throw InternalError("dp_backtrace: table inconsistent at (" + std::to_string(i) +
                          "," + std::to_string(j) + ")");
    }
    switch (mv) {
      case Move::diagonal: --i; --j; break;
      case Move::top: --i; break;
      case Move::left: --j; break;
    }
    path.positions.emplace_back(i, j);
    path.moves.push_back(mv);
  }
  return path;
}

// Which gate dimension drives the walk: one chosen dimension, or the mean
// across all of them.
struct DimSelect {
  enum class Kind { single, mean };
  Kind kind = Kind::mean;
  std::size_t dim = 0;

  static DimSelect single(std::size_t d) { return {Kind::single, d}; }
  static DimSelect averaged() { return {Kind::mean, 0}; }
};

namespace detail {
inline double gate_value(const Vec& g, const DimSelect& sel) {
  if (sel.kind == DimSelect::Kind::single) return g[sel.dim];
  double acc = 0.0;
  for (double x : g) acc += x;
  return acc / static_cast<double>(g.size());
}
}  // namespace detail

// Walk from (m,n) toward the gate with the largest value among
// {z_l -> left, z_t -> top, z_d -> diagonal}; ties resolve diagonal, then
// top, then left. z_i is not a direction of its own: its candidate state
// consumes the diagonal predecessor, so it credits the diagonal branch.
inline MatchPath gate_backtrace(const LatticeState& st, const DimSelect& sel) {
  MatchPath path;
  path.m = st.m;
  path.n = st.n;
  std::size_t i = st.m, j = st.n;
  path.positions.emplace_back(i, j);
  while (i > 0 && j > 0) {
    const GateRecord& g = st.gate_at(i, j);
    const double zl = detail::gate_value(g.z_l, sel);
    const double zt = detail::gate_value(g.z_t, sel);
    const double zd = detail::gate_value(g.z_d, sel) + detail::gate_value(g.z_i, sel);
    Move mv;
    if (zd >= zt && zd >= zl) {
      mv = Move::diagonal;
    } else if (zt >= zl) {
      mv = Move::top;
    } else {
      mv = Move::left;
    }
    switch (mv) {
      case Move::diagonal: --i; --j; break;
      case Move::top: --i; break;
      case Move::left: --j; break;
    }
    path.positions.emplace_back(i, j);
    path.moves.push_back(mv);
  }
  return path;
}

// Jaccard overlap of the visited cell sets.
inline double path_agreement(const MatchPath& a, const MatchPath& b) {
  if (a.m != b.m || a.n != b.n) {
    throw InputError("path_agreement: paths live on different grids");
  }
  std::set<std::pair<std::size_t, std::size_t>> sa(a.positions.begin(), a.positions.end());
  std::set<std::pair<std::size_t, std::size_t>> sb(b.positions.begin(), b.positions.end());
  std::size_t inter = 0;
  for (const auto& pos : sa) inter += sb.count(pos);
  const std::size_t uni = sa.size() + sb.size() - inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Baseline for path-recovery comparisons: moves drawn uniformly from
// {left, top, diagonal} until a boundary.
inline MatchPath random_monotone_path(std::size_t m, std::size_t n, Rng& rng) {
  MatchPath path;
  path.m = m;
  path.n = n;
  std::size_t i = m, j = n;
  path.positions.emplace_back(i, j);
  while (i > 0 && j > 0) {
    const std::uint64_t pick = rng.below(3);
    Move mv = pick == 0 ? Move::left : pick == 1 ? Move::top : Move::diagonal;
    switch (mv) {
      case Move::diagonal: --i; --j; break;
      case Move::top: --i; break;
      case Move::left: --j; break;
    }
    path.positions.emplace_back(i, j);
    path.moves.push_back(mv);
  }
  return path;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct GenConfig {
  std::size_t len_min = 5;
  std::size_t len_max = 20;
  std::size_t alphabet = 10;
  std::size_t n_train = 10000;
  std::size_t n_test = 1000;
  std::uint64_t seed = 42;
};

struct SimPair {
  TokenSeq x, y;
  double label = 0.0;  // LCS length / max(m, n)
};

struct SimDataset {
  GenConfig config;
  std::vector<SimPair> train, test;
};

namespace detail {
inline TokenSeq random_seq(Rng& rng, std::size_t len_min, std::size_t len_max,
                           std::size_t alphabet) {
  const std::size_t len = len_min + static_cast<std::size_t>(rng.below(len_max - len_min + 1));
  TokenSeq s;
  s.ids.reserve(len);
  for (std::size_t k = 0; k < len; ++k) {
    s.ids.push_back(static_cast<std::int32_t>(rng.below(alphabet)));
  }
  return s;
}

inline SimPair random_pair(Rng& rng, const GenConfig& cfg) {
  SimPair p;
  p.x = random_seq(rng, cfg.len_min, cfg.len_max, cfg.alphabet);
  p.y = random_seq(rng, cfg.len_min, cfg.len_max, cfg.alphabet);
  const DPTable t = lcs_table(p.x, p.y);
  p.label = static_cast<double>(t.lcs_length()) /
            static_cast<double>(std::max(p.x.size(), p.y.size()));
  return p;
}
}  // namespace detail

// Random sequence pairs labeled with the normalized LCS length
// (c[m][n] / max(m, n), so labels stay in [0, 1]).
inline SimDataset gen_dataset(const GenConfig& cfg) {
  if (cfg.n_train == 0 && cfg.n_test == 0) throw InputError("gen_dataset: zero counts");
  if (cfg.len_min == 0 || cfg.len_min > cfg.len_max) {
    throw InputError("gen_dataset: bad length range");
  }
  SimDataset ds;
  ds.config = cfg;
  Rng rng(Rng::mix(cfg.seed, 0x4c4353ull));
  ds.train.reserve(cfg.n_train);
  for (std::size_t k = 0; k < cfg.n_train; ++k) ds.train.push_back(detail::random_pair(rng, cfg));
  ds.test.reserve(cfg.n_test);
  for (std::size_t k = 0; k < cfg.n_test; ++k) ds.test.push_back(detail::random_pair(rng, cfg));
  return ds;
}

}  // namespace msrnn
