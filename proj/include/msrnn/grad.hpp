#pragma once

#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "msrnn/model.hpp"

namespace msrnn {

namespace detail {

// Reverse scan over one lattice. `s` must be oriented the same way the
// lattice was scanned (i.e. already flipped for the backward direction).
// Parameter gradients accumulate into `gg`; interaction adjoints accumulate
// into `gs` (same orientation as `s`).
inline void lattice_backward(const LatticeState& st, const InteractionTensor& s,
                             const GruParams& g, GruParams& gg, const Vec& g_final,
                             std::vector<Vec>& gs) {
  const std::size_t m = st.m, n = st.n, d = st.d;
  std::vector<Vec> gh((m + 1) * (n + 1), Vec(d, 0.0));
  auto gh_at = [&](std::size_t i, std::size_t j) -> Vec& { return gh[i * (n + 1) + j]; };
  gh_at(m, n) = g_final;

  Vec gq(3 * d + s.c);
  for (std::size_t i = m; i >= 1; --i) {
    for (std::size_t j = n; j >= 1; --j) {
      const Vec& gh_ij = gh_at(i, j);
      if (!all_finite(gh_ij)) {
        throw NumericError("non-finite adjoint at cell (" + std::to_string(i) + "," +
                           std::to_string(j) + ")");
      }
      const GateRecord& gate = st.gate_at(i, j);
      const CellCache& cc = st.cache_at(i, j);
      const Vec& h_left = st.h_at(i, j - 1);
      const Vec& h_top = st.h_at(i - 1, j);
      const Vec& h_diag = st.h_at(i - 1, j - 1);
      Vec& gh_left = gh_at(i, j - 1);
      Vec& gh_top = gh_at(i - 1, j);
      Vec& gh_diag = gh_at(i - 1, j - 1);

      // h = z_l.h_left + z_t.h_top + z_d.h_diag + z_i.h_cand
      Vec gz_i(d), gz_l(d), gz_t(d), gz_d(d), g_cand(d);
      for (std::size_t k = 0; k < d; ++k) {
        const double gk = gh_ij[k];
        gz_l[k] = gk * h_left[k];
        gz_t[k] = gk * h_top[k];
        gz_d[k] = gk * h_diag[k];
        gz_i[k] = gk * cc.h_cand[k];
        gh_left[k] += gk * gate.z_l[k];
        gh_top[k] += gk * gate.z_t[k];
        gh_diag[k] += gk * gate.z_d[k];
        g_cand[k] = gk * gate.z_i[k];
      }

      // through the per-dimension softmax coupling the four gates
      Vec gzp_i(d), gzp_l(d), gzp_t(d), gzp_d(d);
      for (std::size_t k = 0; k < d; ++k) {
        const double s_k = gz_i[k] * gate.z_i[k] + gz_l[k] * gate.z_l[k] +
                           gz_t[k] * gate.z_t[k] + gz_d[k] * gate.z_d[k];
        gzp_i[k] = gate.z_i[k] * (gz_i[k] - s_k);
        gzp_l[k] = gate.z_l[k] * (gz_l[k] - s_k);
        gzp_t[k] = gate.z_t[k] * (gz_t[k] - s_k);
        gzp_d[k] = gate.z_d[k] * (gz_d[k] - s_k);
      }
      std::fill(gq.begin(), gq.end(), 0.0);
      add_outer(gg.Wz_i, gzp_i, cc.q); add_inplace(gg.bz_i, gzp_i); matvec_t_add(g.Wz_i, gzp_i, gq);
      add_outer(gg.Wz_l, gzp_l, cc.q); add_inplace(gg.bz_l, gzp_l); matvec_t_add(g.Wz_l, gzp_l, gq);
      add_outer(gg.Wz_t, gzp_t, cc.q); add_inplace(gg.bz_t, gzp_t); matvec_t_add(g.Wz_t, gzp_t, gq);
      add_outer(gg.Wz_d, gzp_d, cc.q); add_inplace(gg.bz_d, gzp_d); matvec_t_add(g.Wz_d, gzp_d, gq);

      // candidate: h_cand = tanh(W s_ij + U (r . [h_left; h_top; h_diag]) + b)
      Vec ga(d);
      for (std::size_t k = 0; k < d; ++k) {
        ga[k] = g_cand[k] * (1.0 - cc.h_cand[k] * cc.h_cand[k]);
      }
      const Vec& s_ij = s.at(i - 1, j - 1);
      add_outer(gg.W, ga, s_ij);
      add_inplace(gg.b, ga);
      Vec gs_ij(s.c, 0.0);
      matvec_t_add(g.W, ga, gs_ij);

      Vec gated = concat(hadamard(gate.r_l, h_left), hadamard(gate.r_t, h_top),
                         hadamard(gate.r_d, h_diag));
      add_outer(gg.U, ga, gated);
      Vec g_gated(3 * d, 0.0);
      matvec_t_add(g.U, ga, g_gated);

      Vec g_rl(d), g_rt(d), g_rd(d);
      for (std::size_t k = 0; k < d; ++k) {
        g_rl[k] = g_gated[k] * h_left[k];
        g_rt[k] = g_gated[d + k] * h_top[k];
        g_rd[k] = g_gated[2 * d + k] * h_diag[k];
        gh_left[k] += g_gated[k] * gate.r_l[k];
        gh_top[k] += g_gated[d + k] * gate.r_t[k];
        gh_diag[k] += g_gated[2 * d + k] * gate.r_d[k];
      }
      auto reset_back = [&](const Vec& gr, const Vec& r, const Mat& Wr, Mat& gWr, Vec& gbr) {
        Vec gar(d);
        for (std::size_t k = 0; k < d; ++k) gar[k] = gr[k] * r[k] * (1.0 - r[k]);
        add_outer(gWr, gar, cc.q);
        add_inplace(gbr, gar);
        matvec_t_add(Wr, gar, gq);
      };
      reset_back(g_rl, gate.r_l, g.Wr_l, gg.Wr_l, gg.br_l);
      reset_back(g_rt, gate.r_t, g.Wr_t, gg.Wr_t, gg.br_t);
      reset_back(g_rd, gate.r_d, g.Wr_d, gg.Wr_d, gg.br_d);

      // q = [h_top; h_left; h_diag; s_ij]
      for (std::size_t k = 0; k < d; ++k) {
        gh_top[k] += gq[k];
        gh_left[k] += gq[d + k];
        gh_diag[k] += gq[2 * d + k];
      }
      for (std::size_t k = 0; k < s.c; ++k) gs_ij[k] += gq[3 * d + k];
      add_inplace(gs[(i - 1) * n + (j - 1)], gs_ij);
    }
  }
}

// From interaction adjoints down through the rectified tensor interaction
// into the tensor/linear parameters and the embedding rows.
inline void ntn_embed_backward(const std::vector<Vec>& e1, const std::vector<Vec>& e2,
                               const TokenSeq& s1, const TokenSeq& s2,
                               const InteractionTensor& s, const std::vector<Vec>& gs,
                               const ParamSet& p, GradSet& gr) {
  const std::size_t de = p.config.embed_dim, c = p.config.interact_dim;
  std::vector<Vec> ge1(e1.size(), Vec(de, 0.0));
  std::vector<Vec> ge2(e2.size(), Vec(de, 0.0));
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      const Vec& out = s.at(i, j);
      const Vec& g_out = gs[i * s.n + j];
      const Vec& u = e1[i];
      const Vec& v = e2[j];
      for (std::size_t k = 0; k < c; ++k) {
        // relu subgradient at 0 is 0; out > 0 iff pre-activation > 0
        if (out[k] <= 0.0) continue;
        const double gpre = g_out[k];
        if (gpre == 0.0) continue;
        gr.ntn_b[k] += gpre;
        double* gW_row = gr.ntn_W.row(k);
        const double* W_row = p.ntn_W.row(k);
        for (std::size_t a = 0; a < de; ++a) {
          gW_row[a] += gpre * u[a];
          gW_row[de + a] += gpre * v[a];
          ge1[i][a] += gpre * W_row[a];
          ge2[j][a] += gpre * W_row[de + a];
        }
        double* gT = gr.ntn_T.slice(k);
        const double* T = p.ntn_T.slice(k);
        for (std::size_t a = 0; a < de; ++a) {
          const double ua = u[a];
          const double g_ua = gpre * ua;
          const double* T_row = T + a * de;
          double* gT_row = gT + a * de;
          double acc = 0.0;
          for (std::size_t b = 0; b < de; ++b) {
            gT_row[b] += g_ua * v[b];
            acc += T_row[b] * v[b];
            ge2[j][b] += gpre * ua * T_row[b];
          }
          ge1[i][a] += gpre * acc;
        }
      }
    }
  }
  for (std::size_t i = 0; i < s1.size(); ++i) {
    double* row = gr.embed.row(static_cast<std::size_t>(s1.ids[i]));
    for (std::size_t a = 0; a < de; ++a) row[a] += ge1[i][a];
  }
  for (std::size_t j = 0; j < s2.size(); ++j) {
    double* row = gr.embed.row(static_cast<std::size_t>(s2.ids[j]));
    for (std::size_t a = 0; a < de; ++a) row[a] += ge2[j][a];
  }
}

}  // namespace detail

// Exact reverse-mode gradients of upstream^T . match_score(s1, s2) with
// respect to every parameter, given the trace of the forward evaluation
// being differentiated.
inline GradSet backward(const TokenSeq& s1, const TokenSeq& s2, const ParamSet& p,
                        const ForwardTrace& tr, const Vec& upstream) {
  if (upstream.size() != p.config.out_dim()) {
    throw ShapeError("backward: upstream length " + std::to_string(upstream.size()) +
                     " vs output dim " + std::to_string(p.config.out_dim()));
  }
  GradSet gr = p.zeros_like();
  const std::size_t d = p.config.hidden_dim;

  Vec final_cat = tr.fwd.final_state();
  if (p.config.bidirectional) {
    final_cat.insert(final_cat.end(), tr.bwd.final_state().begin(),
                     tr.bwd.final_state().end());
  }
  add_outer(gr.score_W, upstream, final_cat);
  add_inplace(gr.score_b, upstream);
  Vec g_final(final_cat.size(), 0.0);
  matvec_t_add(p.score_W, upstream, g_final);

  std::vector<Vec> gs(tr.s.m * tr.s.n, Vec(tr.s.c, 0.0));
  Vec g_fwd(g_final.begin(), g_final.begin() + d);
  detail::lattice_backward(tr.fwd, tr.s, p.gru, gr.gru, g_fwd, gs);
  if (p.config.bidirectional) {
    Vec g_bwd(g_final.begin() + d, g_final.end());
    InteractionTensor s_rev = reverse_both(tr.s);
    std::vector<Vec> gs_rev(tr.s.m * tr.s.n, Vec(tr.s.c, 0.0));
    detail::lattice_backward(tr.bwd, s_rev, p.gru_rev, gr.gru_rev, g_bwd, gs_rev);
    for (std::size_t i = 0; i < tr.s.m; ++i) {
      for (std::size_t j = 0; j < tr.s.n; ++j) {
        add_inplace(gs[i * tr.s.n + j],
                    gs_rev[(tr.s.m - 1 - i) * tr.s.n + (tr.s.n - 1 - j)]);
      }
    }
  }
  detail::ntn_embed_backward(tr.e1, tr.e2, s1, s2, tr.s, gs, p, gr);
  return gr;
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct FdArrayReport {
  std::string name;
  std::size_t entries_checked = 0;
  double max_rel_err = 0.0;
};

struct FdReport {
  double eps = 0.0;
  std::vector<FdArrayReport> arrays;
  // smallest |rectifier pre-activation| seen on the unperturbed forward pass;
  // below eps the centered difference may straddle the kink
  double relu_kink_margin = std::numeric_limits<double>::infinity();

  bool kink_flagged() const { return relu_kink_margin < eps; }

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& a : arrays) m = std::max(m, a.max_rel_err);
    return m;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "array                     entries   max_rel_err\n";
    for (const auto& a : arrays) {
      os << a.name;
      for (std::size_t k = a.name.size(); k < 26; ++k) os << ' ';
      std::string cnt = std::to_string(a.entries_checked);
      for (std::size_t k = cnt.size(); k < 7; ++k) os << ' ';
      os << cnt << "   ";
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3e", a.max_rel_err);
      os << buf << "\n";
    }
    if (kink_flagged()) {
      os << "flagged: rectifier pre-activation within eps of 0 (margin "
         << relu_kink_margin << ")\n";
    }
    return os.str();
  }
};

// A centered difference resolves gradients only down to about
// ulp(loss) / (2 eps) ~ 1e-11 for unit-scale losses at eps = 1e-5, so the
// relative-error denominator is clamped at 1e-5: below that the comparison
// would measure floating-point noise, not gradient correctness (structurally
// zero gradients, e.g. the score bias under hinge loss, read as ~1e-11).
inline constexpr double kFdDenominatorFloor = 1e-5;

// Central finite differences against the analytic gradients, per named array.
// Arrays larger than max_entries are strided deterministically.
inline FdReport fd_check(const ParamSet& params,
                         const std::function<double(const ParamSet&)>& loss_fn,
                         const GradSet& analytic, double eps,
                         std::size_t max_entries = 256) {
  if (eps <= 0.0) throw InputError("fd_check: eps must be positive");
  FdReport report;
  report.eps = eps;
  ParamSet work = params;
  auto work_arrays = named_arrays(work);
  GradSet analytic_copy = analytic;  // named_arrays needs mutable access
  auto grad_arrays = named_arrays(analytic_copy);
  if (work_arrays.size() != grad_arrays.size()) {
    throw InternalError("fd_check: parameter/gradient array count mismatch");
  }
  for (std::size_t ai = 0; ai < work_arrays.size(); ++ai) {
    auto& arr = *work_arrays[ai].data;
    const auto& grad = *grad_arrays[ai].data;
    FdArrayReport ar;
    ar.name = work_arrays[ai].name;
    const std::size_t size = arr.size();
    const std::size_t count = std::min(size, max_entries);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t idx = size <= max_entries ? k : k * size / count;
      const double saved = arr[idx];
      arr[idx] = saved + eps;
      const double lp = loss_fn(work);
      arr[idx] = saved - eps;
      const double lm = loss_fn(work);
      arr[idx] = saved;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = grad[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), kFdDenominatorFloor});
      ar.max_rel_err = std::max(ar.max_rel_err, std::abs(a - numeric) / denom);
      ++ar.entries_checked;
    }
    report.arrays.push_back(std::move(ar));
  }
  return report;
}

}  // namespace msrnn
