#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msrnn/linalg.hpp"

namespace msrnn {

enum class LossKind { square, hinge, xent };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::square: return "square";
    case LossKind::hinge: return "hinge";
    case LossKind::xent: return "xent";
  }
  return "?";
}

inline LossKind parse_loss(const std::string& s) {
  if (s == "square") return LossKind::square;
  if (s == "hinge") return LossKind::hinge;
  if (s == "xent") return LossKind::xent;
  throw InputError("unknown loss kind '" + s + "' (expected square|hinge|xent)");
}

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 50;     // word vector width
  std::size_t interact_dim = 10;  // word-pair interaction vector width
  std::size_t hidden_dim = 10;    // lattice state width
  bool bidirectional = false;
  LossKind loss = LossKind::square;

  // two-way softmax head for classification, scalar score otherwise
  std::size_t out_dim() const { return loss == LossKind::xent ? 2 : 1; }
  // length of the per-cell gate input [h_top; h_left; h_diag; s_ij]
  std::size_t gate_input_dim() const { return 3 * hidden_dim + interact_dim; }
  std::size_t score_input_dim() const {
    return bidirectional ? 2 * hidden_dim : hidden_dim;
  }
};

// One scan direction's worth of lattice-cell parameters.
struct GruParams {
  Mat Wr_l, Wr_t, Wr_d;  // reset gates,  d x (3d+c)
  Vec br_l, br_t, br_d;
  Mat Wz_i, Wz_l, Wz_t, Wz_d;  // update gate pre-activations, d x (3d+c)
  Vec bz_i, bz_l, bz_t, bz_d;
  Mat W;  // candidate input map,     d x c
  Mat U;  // candidate recurrent map, d x 3d
  Vec b;  // candidate bias,          d
};

// Every trainable array, addressable by stable name (see named_arrays).
struct ParamSet {
  ModelConfig config;

  Mat embed;     // vocab x d_e
  Tensor3 ntn_T; // c x d_e x d_e
  Mat ntn_W;     // c x 2*d_e
  Vec ntn_b;     // c

  GruParams gru;      // left-top to right-bottom scan
  GruParams gru_rev;  // right-bottom to left-top scan (bidirectional only)

  Mat score_W;  // n_out x d (n_out x 2d when bidirectional)
  Vec score_b;  // n_out

  static ParamSet zeros(const ModelConfig& cfg) {
    ParamSet p;
    p.config = cfg;
    const std::size_t de = cfg.embed_dim, c = cfg.interact_dim, d = cfg.hidden_dim;
    const std::size_t q = cfg.gate_input_dim();
    p.embed = Mat(cfg.vocab_size, de);
    p.ntn_T = Tensor3(c, de, de);
    p.ntn_W = Mat(c, 2 * de);
    p.ntn_b = Vec(c, 0.0);
    auto make_gru = [&](GruParams& g) {
      g.Wr_l = Mat(d, q); g.Wr_t = Mat(d, q); g.Wr_d = Mat(d, q);
      g.br_l = Vec(d, 0.0); g.br_t = Vec(d, 0.0); g.br_d = Vec(d, 0.0);
      g.Wz_i = Mat(d, q); g.Wz_l = Mat(d, q); g.Wz_t = Mat(d, q); g.Wz_d = Mat(d, q);
      g.bz_i = Vec(d, 0.0); g.bz_l = Vec(d, 0.0); g.bz_t = Vec(d, 0.0); g.bz_d = Vec(d, 0.0);
      g.W = Mat(d, c);
      g.U = Mat(d, 3 * d);
      g.b = Vec(d, 0.0);
    };
    make_gru(p.gru);
    if (cfg.bidirectional) make_gru(p.gru_rev);
    p.score_W = Mat(cfg.out_dim(), cfg.score_input_dim());
    p.score_b = Vec(cfg.out_dim(), 0.0);
    return p;
  }

  ParamSet zeros_like() const { return zeros(config); }
};

// Gradients (and optimizer accumulators) are shape-congruent with ParamSet.
using GradSet = ParamSet;

// Flat view of one named array, used by the optimizer, the checkpoint format
// and the finite-difference checker.
struct ArrayRef {
  std::string name;
  std::vector<double>* data = nullptr;
  std::vector<std::size_t> dims;
};

namespace detail {
inline void push_gru_arrays(const std::string& prefix, GruParams& g,
                            std::vector<ArrayRef>& out) {
  auto mat = [&](const char* name, Mat& m) {
    out.push_back({prefix + name, &m.a, {m.rows, m.cols}});
  };
  auto vec = [&](const char* name, Vec& v) {
    out.push_back({prefix + name, &v, {v.size()}});
  };
  mat("Wr_l", g.Wr_l); vec("br_l", g.br_l);
  mat("Wr_t", g.Wr_t); vec("br_t", g.br_t);
  mat("Wr_d", g.Wr_d); vec("br_d", g.br_d);
  mat("Wz_i", g.Wz_i); vec("bz_i", g.bz_i);
  mat("Wz_l", g.Wz_l); vec("bz_l", g.bz_l);
  mat("Wz_t", g.Wz_t); vec("bz_t", g.bz_t);
  mat("Wz_d", g.Wz_d); vec("bz_d", g.bz_d);
  mat("W", g.W);
  mat("U", g.U);
  vec("b", g.b);
}
}  // namespace detail

// Stable enumeration order: it defines the checkpoint layout and the
// gradcheck report layout.
inline std::vector<ArrayRef> named_arrays(ParamSet& p) {
  std::vector<ArrayRef> out;
  out.push_back({"embed", &p.embed.a, {p.embed.rows, p.embed.cols}});
  out.push_back({"ntn_T", &p.ntn_T.a, {p.ntn_T.slices, p.ntn_T.rows, p.ntn_T.cols}});
  out.push_back({"ntn_W", &p.ntn_W.a, {p.ntn_W.rows, p.ntn_W.cols}});
  out.push_back({"ntn_b", &p.ntn_b, {p.ntn_b.size()}});
  detail::push_gru_arrays("gru.", p.gru, out);
  if (p.config.bidirectional) detail::push_gru_arrays("gru_rev.", p.gru_rev, out);
  out.push_back({"score_W", &p.score_W.a, {p.score_W.rows, p.score_W.cols}});
  out.push_back({"score_b", &p.score_b, {p.score_b.size()}});
  return out;
}

struct ConstArrayRef {
  std::string name;
  const std::vector<double>* data = nullptr;
  std::vector<std::size_t> dims;
};

inline std::vector<ConstArrayRef> named_arrays(const ParamSet& p) {
  auto refs = named_arrays(const_cast<ParamSet&>(p));
  std::vector<ConstArrayRef> out;
  out.reserve(refs.size());
  for (auto& r : refs) out.push_back({std::move(r.name), r.data, std::move(r.dims)});
  return out;
}

}  // namespace msrnn
