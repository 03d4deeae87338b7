#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "msrnn/commands.hpp"
#include "msrnn/grad.hpp"
#include "msrnn/train.hpp"
#include "test_util.hpp"

using namespace msrnn;
using test_util::seq;

namespace {

ModelConfig tiny_config(LossKind loss = LossKind::square, bool bidir = false) {
  ModelConfig cfg;
  cfg.vocab_size = 6;
  cfg.embed_dim = 3;
  cfg.interact_dim = 2;
  cfg.hidden_dim = 3;
  cfg.bidirectional = bidir;
  cfg.loss = loss;
  return cfg;
}

bool all_zero(const ParamSet& g) {
  for (const auto& arr : named_arrays(g)) {
    for (double x : *arr.data) {
      if (x != 0.0) return false;
    }
  }
  return true;
}

// Straight-line scalar evaluation of one lattice cell (d = 1, c = 1),
// independent of the library's cell code.
double scalar_cell(const GruParams& g, double h_top, double h_left, double h_diag, double s) {
  auto dot4 = [&](const Mat& w, double b) {
    return w.at(0, 0) * h_top + w.at(0, 1) * h_left + w.at(0, 2) * h_diag + w.at(0, 3) * s + b;
  };
  const double rl = 1.0 / (1.0 + std::exp(-dot4(g.Wr_l, g.br_l[0])));
  const double rt = 1.0 / (1.0 + std::exp(-dot4(g.Wr_t, g.br_t[0])));
  const double rd = 1.0 / (1.0 + std::exp(-dot4(g.Wr_d, g.br_d[0])));
  const double zi = std::exp(dot4(g.Wz_i, g.bz_i[0]));
  const double zl = std::exp(dot4(g.Wz_l, g.bz_l[0]));
  const double zt = std::exp(dot4(g.Wz_t, g.bz_t[0]));
  const double zd = std::exp(dot4(g.Wz_d, g.bz_d[0]));
  const double denom = zi + zl + zt + zd;
  const double hc = std::tanh(g.W.at(0, 0) * s +
                              g.U.at(0, 0) * (rl * h_left) + g.U.at(0, 1) * (rt * h_top) +
                              g.U.at(0, 2) * (rd * h_diag) + g.b[0]);
  return (zl * h_left + zt * h_top + zd * h_diag + zi * hc) / denom;
}

// Hand-unrolled 2x2 lattice ending in h_22.
double unrolled_2x2(const GruParams& g, double s11, double s12, double s21, double s22) {
  const double h11 = scalar_cell(g, 0.0, 0.0, 0.0, s11);
  const double h12 = scalar_cell(g, 0.0, h11, 0.0, s12);
  const double h21 = scalar_cell(g, h11, 0.0, 0.0, s21);
  return scalar_cell(g, h12, h21, h11, s22);
}

}  // namespace

TEST_CASE("zero upstream gives zero gradients", "[grad]") {
  ParamSet p = init_params(tiny_config(), 0.1, 3);
  const ForwardTrace tr = forward_full(seq("AB"), seq("CDE"), p);
  const GradSet g = backward(seq("AB"), seq("CDE"), p, tr, Vec{0.0});
  REQUIRE(all_zero(g));
}

TEST_CASE("score bias gradient equals the upstream", "[grad]") {
  ParamSet p = init_params(tiny_config(), 0.1, 5);
  const ForwardTrace tr = forward_full(seq("ABC"), seq("DA"), p);
  const GradSet g = backward(seq("ABC"), seq("DA"), p, tr, Vec{-1.75});
  REQUIRE(g.score_b[0] == -1.75);
}

TEST_CASE("backward neither mutates parameters nor depends on run order", "[grad]") {
  ParamSet p = init_params(tiny_config(LossKind::square, true), 0.1, 9);
  const ParamSet snapshot = p;
  const ForwardTrace tr = forward_full(seq("ABCD"), seq("BAC"), p);
  const GradSet g1 = backward(seq("ABCD"), seq("BAC"), p, tr, Vec{0.8});
  const GradSet g2 = backward(seq("ABCD"), seq("BAC"), p, tr, Vec{0.8});
  auto snap_arrays = named_arrays(static_cast<const ParamSet&>(snapshot));
  auto now_arrays = named_arrays(static_cast<const ParamSet&>(p));
  for (std::size_t i = 0; i < snap_arrays.size(); ++i) {
    REQUIRE(*snap_arrays[i].data == *now_arrays[i].data);
  }
  auto a1 = named_arrays(static_cast<const ParamSet&>(g1));
  auto a2 = named_arrays(static_cast<const ParamSet&>(g2));
  for (std::size_t i = 0; i < a1.size(); ++i) {
    REQUIRE(*a1[i].data == *a2[i].data);
  }
}

TEST_CASE("lattice backward agrees with a hand-unrolled 2x2 graph", "[grad]") {
  ModelConfig cfg;
  cfg.vocab_size = 2;
  cfg.embed_dim = 1;
  cfg.interact_dim = 1;
  cfg.hidden_dim = 1;
  ParamSet p = init_params(cfg, 0.4, 13);
  const double s11 = 0.9, s12 = 0.1, s21 = -0.4, s22 = 0.6;

  InteractionTensor s;
  s.m = 2; s.n = 2; s.c = 1;
  s.values = {Vec{s11}, Vec{s12}, Vec{s21}, Vec{s22}};

  // forward agreement first
  const LatticeState st = spatial_gru_forward(s, p.gru, cfg, ScanDirection::forward);
  REQUIRE(st.h_at(2, 2)[0] ==
          Catch::Approx(unrolled_2x2(p.gru, s11, s12, s21, s22)).margin(1e-12));

  // adjoint of h_22 is 1: gradients of h_22 w.r.t. every cell parameter
  GradSet gr = p.zeros_like();
  std::vector<Vec> gs(4, Vec(1, 0.0));
  detail::lattice_backward(st, s, p.gru, gr.gru, Vec{1.0}, gs);

  const double eps = 1e-6;
  auto arrays = named_arrays(p);
  auto grads = named_arrays(gr);
  for (std::size_t ai = 0; ai < arrays.size(); ++ai) {
    if (arrays[ai].name.rfind("gru.", 0) != 0) continue;
    auto& data = *arrays[ai].data;
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double saved = data[k];
      data[k] = saved + eps;
      const double up = unrolled_2x2(p.gru, s11, s12, s21, s22);
      data[k] = saved - eps;
      const double dn = unrolled_2x2(p.gru, s11, s12, s21, s22);
      data[k] = saved;
      const double numeric = (up - dn) / (2.0 * eps);
      const double analytic = (*grads[ai].data)[k];
      REQUIRE(analytic == Catch::Approx(numeric).margin(1e-7));
    }
  }
  // interaction adjoints too
  const Vec s_vals{s11, s12, s21, s22};
  for (std::size_t cell = 0; cell < 4; ++cell) {
    InteractionTensor pert = s;
    pert.values[cell][0] = s_vals[cell] + eps;
    const double up = spatial_gru_forward(pert, p.gru, cfg, ScanDirection::forward)
                          .h_at(2, 2)[0];
    pert.values[cell][0] = s_vals[cell] - eps;
    const double dn = spatial_gru_forward(pert, p.gru, cfg, ScanDirection::forward)
                          .h_at(2, 2)[0];
    REQUIRE(gs[cell][0] == Catch::Approx((up - dn) / (2.0 * eps)).margin(1e-7));
  }
}

TEST_CASE("fd_check is near-exact on a quadratic", "[grad]") {
  ModelConfig cfg = tiny_config();
  ParamSet p = init_params(cfg, 0.5, 21);
  // L(theta) = sum (theta_i - 1)^2 over the scorer arrays; every other array
  // has a structurally zero gradient
  auto loss_fn = [](const ParamSet& q) {
    double acc = 0.0;
    for (double x : q.score_W.a) acc += (x - 1.0) * (x - 1.0);
    for (double x : q.score_b) acc += (x - 1.0) * (x - 1.0);
    return acc;
  };
  GradSet analytic = p.zeros_like();
  for (std::size_t k = 0; k < p.score_W.a.size(); ++k) {
    analytic.score_W.a[k] = 2.0 * (p.score_W.a[k] - 1.0);
  }
  for (std::size_t k = 0; k < p.score_b.size(); ++k) {
    analytic.score_b[k] = 2.0 * (p.score_b[k] - 1.0);
  }
  const FdReport report = fd_check(p, loss_fn, analytic, 1e-5);
  REQUIRE(report.max_rel_err() <= 1e-9);
  REQUIRE_FALSE(report.kink_flagged());
}

TEST_CASE("full-model gradients match finite differences", "[grad]") {
  Rng rng(55);
  const LossKind losses[] = {LossKind::square, LossKind::hinge, LossKind::xent};
  for (int trial = 0; trial < 4; ++trial) {
    ModelConfig cfg = tiny_config(losses[trial % 3], trial == 3);
    ParamSet p = init_params(cfg, 0.1, rng.next_u64());
    TrainInstance inst;
    inst.kind = instance_kind_for(cfg.loss);
    inst.s1 = test_util::random_seq(rng, 3, cfg.vocab_size);
    inst.s2 = test_util::random_seq(rng, 4, cfg.vocab_size);
    inst.s2_neg = test_util::random_seq(rng, 3, cfg.vocab_size);
    inst.y = 0.4;
    inst.label = 1;

    GradSet analytic = p.zeros_like();
    instance_loss_grad(inst, p, analytic);
    auto loss_fn = [&](const ParamSet& q) { return instance_loss(inst, q); };
    FdReport report = fd_check(p, loss_fn, analytic, 1e-5, 64);
    report.relu_kink_margin = detail::instance_relu_margin(inst, p);
    INFO(report.to_text());
    if (!report.kink_flagged()) {
      REQUIRE(report.max_rel_err() <= 1e-5);
    }
  }
}

TEST_CASE("gradcheck command and its negative control", "[grad]") {
  std::ostringstream log;
  GradcheckConfig cfg;
  cfg.instances = 6;
  cfg.max_entries_per_array = 24;
  const GradcheckResult ok = run_gradcheck(cfg, log);
  REQUIRE(ok.passed);
  // every named parameter array appears exactly once in the report
  std::set<std::string> seen;
  for (const auto& arr : ok.aggregated) {
    REQUIRE(seen.insert(arr.name).second);
  }
  ModelConfig bidir;
  bidir.bidirectional = true;
  ParamSet probe = ParamSet::zeros([&] {
    ModelConfig c = bidir;
    c.vocab_size = 1;
    c.embed_dim = 1;
    c.interact_dim = 1;
    c.hidden_dim = 1;
    return c;
  }());
  for (const auto& arr : named_arrays(probe)) {
    REQUIRE(seen.count(arr.name) == 1);
  }

  cfg.corrupt_analytic = true;
  const GradcheckResult bad = run_gradcheck(cfg, log);
  REQUIRE_FALSE(bad.passed);
}
