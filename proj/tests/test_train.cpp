#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "msrnn/train.hpp"
#include "test_util.hpp"

using namespace msrnn;
using test_util::seq;

namespace {

ModelConfig tiny_config(LossKind loss = LossKind::square) {
  ModelConfig cfg;
  cfg.vocab_size = 8;
  cfg.embed_dim = 3;
  cfg.interact_dim = 2;
  cfg.hidden_dim = 3;
  cfg.loss = loss;
  return cfg;
}

bool same_params(const ParamSet& a, const ParamSet& b) {
  auto aa = named_arrays(static_cast<const ParamSet&>(a));
  auto bb = named_arrays(static_cast<const ParamSet&>(b));
  for (std::size_t i = 0; i < aa.size(); ++i) {
    if (*aa[i].data != *bb[i].data) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("square loss", "[train]") {
  REQUIRE(square_loss(0.7, 0.7) == std::pair<double, double>{0.0, 0.0});
  REQUIRE(square_loss(0.0, 1.0) == std::pair<double, double>{1.0, -2.0});
  // symmetric in its arguments
  REQUIRE(square_loss(0.3, 0.9).first == square_loss(0.9, 0.3).first);
}

TEST_CASE("hinge loss", "[train]") {
  SECTION("margin satisfied") {
    const HingeResult r = hinge_loss(2.0, 0.0);
    REQUIRE(r.loss == 0.0);
    REQUIRE(r.dpos == 0.0);
    REQUIRE(r.dneg == 0.0);
  }
  SECTION("tied scores") {
    const HingeResult r = hinge_loss(0.0, 0.0);
    REQUIRE(r.loss == 1.0);
    REQUIRE(r.dpos == -1.0);
    REQUIRE(r.dneg == 1.0);
  }
  SECTION("partial margin") {
    const HingeResult r = hinge_loss(0.5, 0.2);
    REQUIRE(r.loss == Catch::Approx(0.7).margin(1e-15));
    REQUIRE(r.dpos == -1.0);
    REQUIRE(r.dneg == 1.0);
  }
  SECTION("exact boundary is inactive") {
    const HingeResult r = hinge_loss(1.0, 0.0);
    REQUIRE(r.loss == 0.0);
    REQUIRE(r.dpos == 0.0);
  }
}

TEST_CASE("two-way cross entropy", "[train]") {
  SECTION("symmetric logits") {
    const XentResult r = cross_entropy_2({0.0, 0.0}, 0);
    REQUIRE(r.loss == Catch::Approx(std::log(2.0)).margin(1e-15));
    REQUIRE(r.dlogits[0] == Catch::Approx(-0.5).margin(1e-15));
    REQUIRE(r.dlogits[1] == Catch::Approx(0.5).margin(1e-15));
  }
  SECTION("saturated logits") {
    const XentResult r = cross_entropy_2({30.0, -30.0}, 0);
    REQUIRE(r.loss == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(std::abs(r.dlogits[0]) < 1e-12);
    REQUIRE(std::abs(r.dlogits[1]) < 1e-12);
  }
  SECTION("gradient matches finite differences") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
      const Vec logits{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
      const int label = rng.below(2) == 0 ? 0 : 1;
      const XentResult r = cross_entropy_2(logits, label);
      const double eps = 1e-6;
      for (int k = 0; k < 2; ++k) {
        Vec lp = logits, lm = logits;
        lp[k] += eps;
        lm[k] -= eps;
        const double numeric =
            (cross_entropy_2(lp, label).loss - cross_entropy_2(lm, label).loss) / (2 * eps);
        REQUIRE(r.dlogits[k] == Catch::Approx(numeric).margin(1e-9));
      }
    }
  }
}

TEST_CASE("parameter initialization", "[train]") {
  const ModelConfig cfg = tiny_config();
  const ParamSet a = init_params(cfg, 0.1, 42);
  const ParamSet b = init_params(cfg, 0.1, 42);
  const ParamSet c = init_params(cfg, 0.1, 43);
  REQUIRE(same_params(a, b));
  REQUIRE_FALSE(same_params(a, c));
  for (const auto& arr : named_arrays(static_cast<const ParamSet&>(a))) {
    for (double x : *arr.data) {
      REQUIRE(x >= -0.1);
      REQUIRE(x <= 0.1);
    }
  }
}

TEST_CASE("adagrad steps", "[train]") {
  ModelConfig cfg;
  cfg.vocab_size = 1;
  cfg.embed_dim = 1;
  cfg.interact_dim = 1;
  cfg.hidden_dim = 1;
  ParamSet p = ParamSet::zeros(cfg);
  AdaGradState st = AdaGradState::init(p, 0.1, 0.0);

  SECTION("zero gradient leaves everything untouched") {
    const ParamSet before = p;
    GradSet g = p.zeros_like();
    adagrad_step(p, g, st);
    REQUIRE(same_params(before, p));
    for (const auto& arr : named_arrays(st.accum)) {
      for (double x : *arr.data) REQUIRE(x == 0.0);
    }
  }
  SECTION("unit gradient twice") {
    GradSet g = p.zeros_like();
    g.score_b[0] = 1.0;
    adagrad_step(p, g, st);
    REQUIRE(p.score_b[0] == Catch::Approx(-0.1).margin(1e-15));
    adagrad_step(p, g, st);
    REQUIRE(p.score_b[0] == Catch::Approx(-0.1 - 0.1 / std::sqrt(2.0)).margin(1e-15));
    REQUIRE(st.accum.score_b[0] == 2.0);
  }
  SECTION("accumulators never decrease") {
    Rng rng(17);
    double prev = 0.0;
    GradSet g = p.zeros_like();
    for (int step = 0; step < 100; ++step) {
      g.score_b[0] = rng.uniform(-1.0, 1.0);
      adagrad_step(p, g, st);
      REQUIRE(st.accum.score_b[0] >= prev);
      prev = st.accum.score_b[0];
    }
  }
}

TEST_CASE("batch gradient is the mean of per-instance gradients", "[train]") {
  const ModelConfig cfg = tiny_config();
  const ParamSet p = init_params(cfg, 0.1, 77);
  std::vector<TrainInstance> data;
  Rng rng(78);
  for (int k = 0; k < 3; ++k) {
    TrainInstance inst;
    inst.kind = TrainInstance::Kind::regression;
    inst.s1 = test_util::random_seq(rng, 3, cfg.vocab_size);
    inst.s2 = test_util::random_seq(rng, 4, cfg.vocab_size);
    inst.y = rng.uniform(0.0, 1.0);
    data.push_back(inst);
  }
  double mean_loss = 0.0;
  const GradSet batch = batch_gradient(data, {0, 1, 2}, p, 1, mean_loss);

  GradSet expect = p.zeros_like();
  double total = 0.0;
  for (const auto& inst : data) total += instance_loss_grad(inst, p, expect);
  scale_inplace(expect, 1.0 / 3.0);

  auto ba = named_arrays(static_cast<const ParamSet&>(batch));
  auto ea = named_arrays(static_cast<const ParamSet&>(expect));
  for (std::size_t i = 0; i < ba.size(); ++i) {
    for (std::size_t k = 0; k < ba[i].data->size(); ++k) {
      REQUIRE((*ba[i].data)[k] == Catch::Approx((*ea[i].data)[k]).margin(1e-14));
    }
  }
  REQUIRE(mean_loss == Catch::Approx(total / 3.0).margin(1e-14));

  SECTION("threaded computation reduces in the same order") {
    double mean_loss2 = 0.0;
    const GradSet threaded = batch_gradient(data, {0, 1, 2}, p, 2, mean_loss2);
    auto ta = named_arrays(static_cast<const ParamSet&>(threaded));
    for (std::size_t i = 0; i < ba.size(); ++i) {
      REQUIRE(*ba[i].data == *ta[i].data);
    }
    REQUIRE(mean_loss == mean_loss2);
  }
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged", "[train]") {
  TrainConfig tc;
  tc.model = tiny_config();
  tc.lr = 0.0;
  tc.batch_size = 2;
  tc.max_epochs = 3;
  tc.seed = 5;
  std::vector<TrainInstance> data;
  Rng rng(6);
  for (int k = 0; k < 4; ++k) {
    TrainInstance inst;
    inst.s1 = test_util::random_seq(rng, 3, tc.model.vocab_size);
    inst.s2 = test_util::random_seq(rng, 3, tc.model.vocab_size);
    inst.y = 0.5;
    data.push_back(inst);
  }
  const ParamSet reference = init_params(tc.model, tc.init_scale, tc.seed);
  const TrainResult r = train_loop(data, {}, tc);
  REQUIRE(same_params(r.final_state.params, reference));
}

TEST_CASE("a single instance is memorized", "[train]") {
  TrainConfig tc;
  tc.model = tiny_config();
  tc.batch_size = 1;
  tc.lr = 0.3;
  tc.max_epochs = 400;
  tc.patience = 400;
  tc.seed = 11;
  TrainInstance inst;
  inst.s1 = seq("ABC");
  inst.s2 = seq("CBAD");
  inst.y = 0.62;
  const TrainResult r = train_loop({inst}, {}, tc);
  REQUIRE(r.history.back().train_loss < 1e-3);
}

TEST_CASE("training history is deterministic under the seed", "[train]") {
  TrainConfig tc;
  tc.model = tiny_config();
  tc.batch_size = 2;
  tc.lr = 0.1;
  tc.max_epochs = 4;
  tc.seed = 19;
  std::vector<TrainInstance> data;
  Rng rng(20);
  for (int k = 0; k < 6; ++k) {
    TrainInstance inst;
    inst.s1 = test_util::random_seq(rng, 3, tc.model.vocab_size);
    inst.s2 = test_util::random_seq(rng, 4, tc.model.vocab_size);
    inst.y = rng.uniform(0.0, 1.0);
    data.push_back(inst);
  }
  const TrainResult a = train_loop(data, {}, tc);
  const TrainResult b = train_loop(data, {}, tc);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t k = 0; k < a.history.size(); ++k) {
    REQUIRE(a.history[k].train_loss == b.history[k].train_loss);
    REQUIRE(a.history[k].val_metric == b.history[k].val_metric);
  }
  REQUIRE(same_params(a.best, b.best));
}

TEST_CASE("hinge training separates disjoint-token triples", "[train]") {
  TrainConfig tc;
  tc.model = tiny_config(LossKind::hinge);
  tc.batch_size = 4;
  tc.lr = 0.3;
  tc.max_epochs = 120;
  tc.patience = 120;
  tc.seed = 23;
  // queries and positives share the low half of the vocabulary, negatives
  // live entirely in the high half
  std::vector<TrainInstance> data;
  Rng rng(24);
  for (int k = 0; k < 8; ++k) {
    TrainInstance inst;
    inst.kind = TrainInstance::Kind::ranking;
    inst.s1 = test_util::random_seq(rng, 4, 4);
    inst.s2 = inst.s1;
    inst.s2.ids.push_back(static_cast<std::int32_t>(rng.below(4)));
    inst.s2_neg = test_util::random_seq(rng, 4, 4);
    for (auto& id : inst.s2_neg.ids) id += 4;
    data.push_back(inst);
  }
  const TrainResult r = train_loop(data, {}, tc);
  double final_loss = 0.0;
  for (const auto& inst : data) final_loss += instance_loss(inst, r.final_state.params);
  REQUIRE(final_loss == Catch::Approx(0.0).margin(1e-9));
}
