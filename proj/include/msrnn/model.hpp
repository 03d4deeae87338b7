#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "msrnn/params.hpp"

namespace msrnn {

struct TokenSeq {
  std::vector<std::int32_t> ids;

  std::size_t size() const { return ids.size(); }
  bool operator==(const TokenSeq& o) const { return ids == o.ids; }
};

// m x n grid of word-pair interaction vectors, each of length c.
struct InteractionTensor {
  std::size_t m = 0, n = 0, c = 0;
  std::vector<Vec> values;  // row-major over cells, 0-based
  // Smallest |pre-activation| seen under the rectifier; the gradient checker
  // uses it to flag near-kink instances.
  double min_abs_preact = std::numeric_limits<double>::infinity();

  Vec& at(std::size_t i, std::size_t j) { return values[i * n + j]; }
  const Vec& at(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

// Per-cell gate activations, kept for backtracing and for the backward pass.
struct GateRecord {
  Vec z_i, z_l, z_t, z_d;  // update gates; convex per dimension
  Vec r_l, r_t, r_d;       // reset gates
};

struct CellCache {
  Vec q;       // [h_top; h_left; h_diag; s_ij]
  Vec h_cand;  // tanh candidate state
};

// (m+1) x (n+1) state lattice with a zero boundary row/column, plus the
// per-cell records the backward pass and the backtracer need.
struct LatticeState {
  std::size_t m = 0, n = 0, d = 0;
  std::vector<Vec> h;             // (m+1)*(n+1)
  std::vector<GateRecord> gates;  // m*n, cell (i,j) at (i-1)*n + (j-1)
  std::vector<CellCache> cache;   // m*n

  Vec& h_at(std::size_t i, std::size_t j) { return h[i * (n + 1) + j]; }
  const Vec& h_at(std::size_t i, std::size_t j) const { return h[i * (n + 1) + j]; }
  GateRecord& gate_at(std::size_t i, std::size_t j) { return gates[(i - 1) * n + (j - 1)]; }
  const GateRecord& gate_at(std::size_t i, std::size_t j) const {
    return gates[(i - 1) * n + (j - 1)];
  }
  CellCache& cache_at(std::size_t i, std::size_t j) { return cache[(i - 1) * n + (j - 1)]; }
  const CellCache& cache_at(std::size_t i, std::size_t j) const {
    return cache[(i - 1) * n + (j - 1)];
  }
  const Vec& final_state() const { return h_at(m, n); }
};

enum class ScanDirection { forward, backward };

inline std::vector<Vec> embed(const TokenSeq& seq, const ParamSet& p) {
  std::vector<Vec> out;
  out.reserve(seq.size());
  for (std::int32_t id : seq.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= p.embed.rows) {
      throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(p.embed.rows));
    }
    const double* row = p.embed.row(static_cast<std::size_t>(id));
    out.emplace_back(row, row + p.embed.cols);
  }
  return out;
}

// s_ij = relu( e1_i^T T^[1:c] e2_j + W [e1_i; e2_j] + b )
inline InteractionTensor interaction_tensor_from_embeddings(const std::vector<Vec>& e1,
                                                            const std::vector<Vec>& e2,
                                                            const ParamSet& p) {
  if (e1.empty() || e2.empty()) {
    throw InputError("interaction tensor requires two non-empty sequences");
  }
  InteractionTensor t;
  t.m = e1.size();
  t.n = e2.size();
  t.c = p.config.interact_dim;
  t.values.resize(t.m * t.n);
  for (std::size_t i = 0; i < t.m; ++i) {
    for (std::size_t j = 0; j < t.n; ++j) {
      Vec pre = bilinear(p.ntn_T, e1[i], e2[j]);
      // linear part on the concatenated pair
      for (std::size_t k = 0; k < t.c; ++k) {
        const double* row = p.ntn_W.row(k);
        double acc = p.ntn_b[k];
        for (std::size_t u = 0; u < e1[i].size(); ++u) acc += row[u] * e1[i][u];
        for (std::size_t v = 0; v < e2[j].size(); ++v) acc += row[e1[i].size() + v] * e2[j][v];
        pre[k] += acc;
        const double mag = std::abs(pre[k]);
        if (mag < t.min_abs_preact) t.min_abs_preact = mag;
      }
      t.at(i, j) = relu(pre);
    }
  }
  return t;
}

inline InteractionTensor interaction_tensor(const TokenSeq& s1, const TokenSeq& s2,
                                            const ParamSet& p) {
  return interaction_tensor_from_embeddings(embed(s1, p), embed(s2, p), p);
}

// Flip the grid along both axes; the backward scan runs the identical
// recurrence over the flipped grid.
inline InteractionTensor reverse_both(const InteractionTensor& s) {
  InteractionTensor out;
  out.m = s.m;
  out.n = s.n;
  out.c = s.c;
  out.min_abs_preact = s.min_abs_preact;
  out.values.resize(s.values.size());
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      out.at(i, j) = s.at(s.m - 1 - i, s.n - 1 - j);
    }
  }
  return out;
}

// One cell of the recurrence. Neighbor order in q is (top, left, diag, s);
// the candidate's recurrent input uses the order (left, top, diag) — both as
// the gate equations are written.
inline void spatial_gru_cell(const GruParams& g, const Vec& h_top, const Vec& h_left,
                             const Vec& h_diag, const Vec& s_ij, GateRecord& gate,
                             CellCache& cache, Vec& h_out) {
  const std::size_t d = h_top.size();
  Vec q = concat(h_top, h_left, h_diag, s_ij);

  gate.r_l = sigmoid(add(matvec(g.Wr_l, q), g.br_l));
  gate.r_t = sigmoid(add(matvec(g.Wr_t, q), g.br_t));
  gate.r_d = sigmoid(add(matvec(g.Wr_d, q), g.br_d));

  Vec zi = add(matvec(g.Wz_i, q), g.bz_i);
  Vec zl = add(matvec(g.Wz_l, q), g.bz_l);
  Vec zt = add(matvec(g.Wz_t, q), g.bz_t);
  Vec zd = add(matvec(g.Wz_d, q), g.bz_d);
  auto z = softmax_by_row(zi, zl, zt, zd);
  gate.z_i = std::move(z[0]);
  gate.z_l = std::move(z[1]);
  gate.z_t = std::move(z[2]);
  gate.z_d = std::move(z[3]);

  Vec gated = concat(hadamard(gate.r_l, h_left), hadamard(gate.r_t, h_top),
                     hadamard(gate.r_d, h_diag));
  Vec act = add(matvec(g.W, s_ij), g.b);
  add_inplace(act, matvec(g.U, gated));
  cache.h_cand = tanh(act);

  h_out.assign(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    h_out[k] = gate.z_l[k] * h_left[k] + gate.z_t[k] * h_top[k] +
               gate.z_d[k] * h_diag[k] + gate.z_i[k] * cache.h_cand[k];
  }
  cache.q = std::move(q);
}

// Scan the lattice in topological order. direction == backward flips the
// interaction grid along both axes first; the returned lattice is then in
// flipped coordinates and its final state sits at the flipped corner.
inline LatticeState spatial_gru_forward(const InteractionTensor& s_in, const GruParams& g,
                                        const ModelConfig& cfg, ScanDirection dir) {
  const InteractionTensor s =
      dir == ScanDirection::forward ? s_in : reverse_both(s_in);
  LatticeState st;
  st.m = s.m;
  st.n = s.n;
  st.d = cfg.hidden_dim;
  st.h.assign((st.m + 1) * (st.n + 1), Vec(st.d, 0.0));
  st.gates.resize(st.m * st.n);
  st.cache.resize(st.m * st.n);
  for (std::size_t i = 1; i <= st.m; ++i) {
    for (std::size_t j = 1; j <= st.n; ++j) {
      spatial_gru_cell(g, st.h_at(i - 1, j), st.h_at(i, j - 1), st.h_at(i - 1, j - 1),
                       s.at(i - 1, j - 1), st.gate_at(i, j), st.cache_at(i, j),
                       st.h_at(i, j));
      if (!all_finite(st.h_at(i, j))) {
        throw NumericError("non-finite lattice state at cell (" + std::to_string(i) + "," +
                           std::to_string(j) + ")");
      }
    }
  }
  return st;
}

inline Vec score_final(const Vec& final_state, const ParamSet& p) {
  return add(matvec(p.score_W, final_state), p.score_b);
}

inline Vec score(const LatticeState& st, const ParamSet& p) {
  return score_final(st.final_state(), p);
}

// Everything the backward pass needs from one evaluation.
struct ForwardTrace {
  std::vector<Vec> e1, e2;
  InteractionTensor s;
  LatticeState fwd;
  LatticeState bwd;  // populated only for bidirectional models
  Vec out;
};

inline ForwardTrace forward_full(const TokenSeq& s1, const TokenSeq& s2, const ParamSet& p) {
  ForwardTrace tr;
  tr.e1 = embed(s1, p);
  tr.e2 = embed(s2, p);
  tr.s = interaction_tensor_from_embeddings(tr.e1, tr.e2, p);
  tr.fwd = spatial_gru_forward(tr.s, p.gru, p.config, ScanDirection::forward);
  if (p.config.bidirectional) {
    tr.bwd = spatial_gru_forward(tr.s, p.gru_rev, p.config, ScanDirection::backward);
    Vec cat;
    cat.reserve(2 * p.config.hidden_dim);
    cat.insert(cat.end(), tr.fwd.final_state().begin(), tr.fwd.final_state().end());
    cat.insert(cat.end(), tr.bwd.final_state().begin(), tr.bwd.final_state().end());
    tr.out = score_final(cat, p);
  } else {
    tr.out = score_final(tr.fwd.final_state(), p);
  }
  return tr;
}

inline Vec match_score(const TokenSeq& s1, const TokenSeq& s2, const ParamSet& p) {
  return forward_full(s1, s2, p).out;
}

// Degenerate exact-match mode: the interaction collapses to an equality
// indicator, reset gates are dropped, the candidate becomes h_diag + s and
// the soft gate mixture becomes a hard max over the three predecessors. The
// winning branch is recorded one-hot (diagonal wins credit z_d and z_i
// jointly), so the gate backtracer can walk the same records the trained
// model produces.
inline LatticeState exact_lcs_mode(const TokenSeq& x, const TokenSeq& y) {
  LatticeState st;
  st.m = x.size();
  st.n = y.size();
  st.d = 1;
  st.h.assign((st.m + 1) * (st.n + 1), Vec(1, 0.0));
  st.gates.resize(st.m * st.n);
  st.cache.resize(st.m * st.n);
  for (std::size_t i = 1; i <= st.m; ++i) {
    for (std::size_t j = 1; j <= st.n; ++j) {
      const double s_ij = x.ids[i - 1] == y.ids[j - 1] ? 1.0 : 0.0;
      const double h_left = st.h_at(i, j - 1)[0];
      const double h_top = st.h_at(i - 1, j)[0];
      const double h_diag = st.h_at(i - 1, j - 1)[0];
      const double cand = h_diag + s_ij;

      GateRecord& g = st.gate_at(i, j);
      g.z_i = g.z_l = g.z_t = g.z_d = Vec(1, 0.0);
      g.r_l = g.r_t = g.r_d = Vec(1, 1.0);  // reset disabled

      double best;
      if (s_ij > 0.0) {
        // a match always attains the max through the diagonal branch
        best = cand;
        g.z_d[0] = 0.5;
        g.z_i[0] = 0.5;
      } else if (h_top >= h_left) {
        best = h_top;
        g.z_t[0] = 1.0;
      } else {
        best = h_left;
        g.z_l[0] = 1.0;
      }
      st.h_at(i, j)[0] = best;
      st.cache_at(i, j).h_cand = Vec(1, cand);
    }
  }
  return st;
}

}  // namespace msrnn
