#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

#include "msrnn/eval.hpp"
#include "msrnn/grad.hpp"

namespace msrnn {

// One labeled example. Regression carries y, classification carries label,
// ranking carries the (s1, s2 positive, s2 negative) triple in (s1, s2,
// s2_neg).
struct TrainInstance {
  enum class Kind { regression, classification, ranking };
  Kind kind = Kind::regression;
  TokenSeq s1, s2, s2_neg;
  double y = 0.0;
  int label = 0;
};

inline TrainInstance::Kind instance_kind_for(LossKind loss) {
  switch (loss) {
    case LossKind::square: return TrainInstance::Kind::regression;
    case LossKind::hinge: return TrainInstance::Kind::ranking;
    case LossKind::xent: return TrainInstance::Kind::classification;
  }
  return TrainInstance::Kind::regression;
}

// L = (y - pred)^2
inline std::pair<double, double> square_loss(double pred, double y) {
  const double diff = y - pred;
  return {diff * diff, -2.0 * diff};
}

struct HingeResult {
  double loss = 0.0;
  double dpos = 0.0;
  double dneg = 0.0;
};

// L = max(0, 1 - pos + neg); the exact-margin boundary takes the inactive
// side (zero subgradient).
inline HingeResult hinge_loss(double pred_pos, double pred_neg) {
  const double margin = 1.0 - pred_pos + pred_neg;
  if (margin <= 0.0) return {0.0, 0.0, 0.0};
  return {margin, -1.0, 1.0};
}

struct XentResult {
  double loss = 0.0;
  Vec dlogits;
};

// Two-way softmax cross entropy, stabilized with log-sum-exp.
inline XentResult cross_entropy_2(const Vec& logits, int label) {
  if (logits.size() != 2) throw ShapeError("cross_entropy_2 expects 2 logits");
  if (label != 0 && label != 1) throw InputError("binary label must be 0 or 1");
  const double mx = std::max(logits[0], logits[1]);
  const double e0 = std::exp(logits[0] - mx);
  const double e1 = std::exp(logits[1] - mx);
  const double lse = mx + std::log(e0 + e1);
  XentResult r;
  r.loss = lse - logits[static_cast<std::size_t>(label)];
  const double p0 = e0 / (e0 + e1);
  r.dlogits = {p0 - (label == 0 ? 1.0 : 0.0), (1.0 - p0) - (label == 1 ? 1.0 : 0.0)};
  return r;
}

// out += scale * g, array by array.
inline void accumulate(GradSet& out, const GradSet& g, double scale) {
  auto dst = named_arrays(out);
  auto src = named_arrays(static_cast<const ParamSet&>(g));
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto& d = *dst[i].data;
    const auto& s = *src[i].data;
    for (std::size_t k = 0; k < d.size(); ++k) d[k] += scale * s[k];
  }
}

inline void scale_inplace(GradSet& g, double scale) {
  for (auto& arr : named_arrays(g)) {
    for (double& x : *arr.data) x *= scale;
  }
}

inline double instance_loss(const TrainInstance& inst, const ParamSet& p) {
  switch (inst.kind) {
    case TrainInstance::Kind::regression:
      return square_loss(match_score(inst.s1, inst.s2, p)[0], inst.y).first;
    case TrainInstance::Kind::ranking: {
      const double pos = match_score(inst.s1, inst.s2, p)[0];
      const double neg = match_score(inst.s1, inst.s2_neg, p)[0];
      return hinge_loss(pos, neg).loss;
    }
    case TrainInstance::Kind::classification:
      return cross_entropy_2(match_score(inst.s1, inst.s2, p), inst.label).loss;
  }
  throw InternalError("unreachable instance kind");
}

// Loss and full gradient for one instance; gradients accumulate into `out`.
inline double instance_loss_grad(const TrainInstance& inst, const ParamSet& p,
                                 GradSet& out) {
  switch (inst.kind) {
    case TrainInstance::Kind::regression: {
      ForwardTrace tr = forward_full(inst.s1, inst.s2, p);
      auto [loss, dpred] = square_loss(tr.out[0], inst.y);
      if (dpred != 0.0) {
        accumulate(out, backward(inst.s1, inst.s2, p, tr, Vec{dpred}), 1.0);
      }
      return loss;
    }
    case TrainInstance::Kind::ranking: {
      ForwardTrace tp = forward_full(inst.s1, inst.s2, p);
      ForwardTrace tn = forward_full(inst.s1, inst.s2_neg, p);
      HingeResult h = hinge_loss(tp.out[0], tn.out[0]);
      if (h.dpos != 0.0) {
        accumulate(out, backward(inst.s1, inst.s2, p, tp, Vec{h.dpos}), 1.0);
        accumulate(out, backward(inst.s1, inst.s2_neg, p, tn, Vec{h.dneg}), 1.0);
      }
      return h.loss;
    }
    case TrainInstance::Kind::classification: {
      ForwardTrace tr = forward_full(inst.s1, inst.s2, p);
      XentResult x = cross_entropy_2(tr.out, inst.label);
      accumulate(out, backward(inst.s1, inst.s2, p, tr, x.dlogits), 1.0);
      return x.loss;
    }
  }
  throw InternalError("unreachable instance kind");
}

// ---------------------------------------------------------------------------
// Initialization

// Every parameter drawn Uniform(-init_scale, +init_scale); deterministic
// under the seed. Pass preloaded embeddings to keep loaded word vectors.
inline ParamSet init_params(const ModelConfig& cfg, double init_scale, std::uint64_t seed,
                            const Mat* preloaded_embed = nullptr) {
  ParamSet p = ParamSet::zeros(cfg);
  Rng rng(Rng::mix(seed, 0x494e4954ull));
  for (auto& arr : named_arrays(p)) {
    for (double& x : *arr.data) x = rng.uniform(-init_scale, init_scale);
  }
  if (preloaded_embed != nullptr) {
    if (preloaded_embed->rows != cfg.vocab_size || preloaded_embed->cols != cfg.embed_dim) {
      throw ShapeError("preloaded embeddings are " + std::to_string(preloaded_embed->rows) +
                       "x" + std::to_string(preloaded_embed->cols) + ", expected " +
                       std::to_string(cfg.vocab_size) + "x" + std::to_string(cfg.embed_dim));
    }
    p.embed = *preloaded_embed;
  }
  return p;
}

// ---------------------------------------------------------------------------
// AdaGrad

struct AdaGradState {
  GradSet accum;  // per-coordinate sum of squared gradients
  double lr = 0.05;
  double eps = 1e-8;

  static AdaGradState init(const ParamSet& p, double lr, double eps) {
    AdaGradState s;
    s.accum = p.zeros_like();
    s.lr = lr;
    s.eps = eps;
    return s;
  }
};

// accum += g^2; theta -= lr * g / (sqrt(accum) + eps)
inline void adagrad_step(ParamSet& params, const GradSet& grads, AdaGradState& state) {
  auto pa = named_arrays(params);
  auto ga = named_arrays(static_cast<const ParamSet&>(grads));
  auto aa = named_arrays(state.accum);
  if (pa.size() != ga.size() || pa.size() != aa.size()) {
    throw ShapeError("adagrad_step: array set mismatch");
  }
  for (std::size_t i = 0; i < pa.size(); ++i) {
    auto& theta = *pa[i].data;
    const auto& g = *ga[i].data;
    auto& acc = *aa[i].data;
    if (theta.size() != g.size() || theta.size() != acc.size()) {
      throw ShapeError("adagrad_step: shape mismatch on " + pa[i].name);
    }
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = g[k];
      if (gk == 0.0) continue;
      acc[k] += gk * gk;
      theta[k] -= state.lr * gk / (std::sqrt(acc[k]) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  ModelConfig model;
  std::size_t batch_size = 128;
  double lr = 0.05;
  double adagrad_eps = 1e-8;
  double init_scale = 0.1;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;
  std::uint64_t seed = 42;
  bool freeze_embeddings = false;
  std::size_t threads = 1;
};

struct EpochRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double wall_seconds = 0.0;
};

// Everything needed to continue training exactly where it stopped.
struct TrainState {
  ParamSet params;
  AdaGradState opt;
  std::size_t next_epoch = 0;
  ParamSet best;
  double best_val = 0.0;
  std::size_t best_epoch = 0;
  std::size_t stale_epochs = 0;
  bool has_best = false;
};

struct TrainResult {
  ParamSet best;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  std::vector<EpochRow> history;
  TrainState final_state;
};

// Mean gradient over a batch. Per-instance gradients may be computed on
// worker threads; the reduction always runs in instance order, so the result
// does not depend on the thread count.
inline GradSet batch_gradient(const std::vector<TrainInstance>& data,
                              const std::vector<std::size_t>& batch, const ParamSet& p,
                              std::size_t threads, double& mean_loss) {
  std::vector<GradSet> per(batch.size());
  std::vector<double> losses(batch.size(), 0.0);
  auto compute = [&](std::size_t from, std::size_t to) {
    for (std::size_t k = from; k < to; ++k) {
      per[k] = p.zeros_like();
      losses[k] = instance_loss_grad(data[batch[k]], p, per[k]);
    }
  };
  if (threads <= 1 || batch.size() < 2) {
    compute(0, batch.size());
  } else {
    const std::size_t nt = std::min(threads, batch.size());
    std::vector<std::thread> pool;
    pool.reserve(nt);
    for (std::size_t t = 0; t < nt; ++t) {
      const std::size_t from = t * batch.size() / nt;
      const std::size_t to = (t + 1) * batch.size() / nt;
      pool.emplace_back(compute, from, to);
    }
    for (auto& th : pool) th.join();
  }
  GradSet sum = p.zeros_like();
  double total = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    accumulate(sum, per[k], 1.0);
    total += losses[k];
  }
  scale_inplace(sum, 1.0 / static_cast<double>(batch.size()));
  mean_loss = total / static_cast<double>(batch.size());
  return sum;
}

// Validation score: MSE for regression (lower is better), P@1 for ranking and
// accuracy for classification (higher is better).
inline double validation_metric(const std::vector<TrainInstance>& val, const ParamSet& p) {
  if (val.empty()) throw InputError("validation_metric: empty set");
  switch (val.front().kind) {
    case TrainInstance::Kind::regression: {
      std::vector<double> pred, truth;
      pred.reserve(val.size());
      truth.reserve(val.size());
      for (const auto& inst : val) {
        pred.push_back(match_score(inst.s1, inst.s2, p)[0]);
        truth.push_back(inst.y);
      }
      return mean_squared_error(pred, truth);
    }
    case TrainInstance::Kind::ranking: {
      // Triples sharing s1 form one list: the shared positive plus every
      // negative in the group.
      std::vector<ScoredInstance> scored;
      std::vector<TokenSeq> queries;
      std::size_t next_id = 0;
      for (const auto& inst : val) {
        std::size_t qid = queries.size();
        for (std::size_t q = 0; q < queries.size(); ++q) {
          if (queries[q] == inst.s1) {
            qid = q;
            break;
          }
        }
        bool fresh = qid == queries.size();
        if (fresh) queries.push_back(inst.s1);
        if (fresh) {
          scored.push_back({qid, next_id++, match_score(inst.s1, inst.s2, p)[0], 1});
        }
        scored.push_back({qid, next_id++, match_score(inst.s1, inst.s2_neg, p)[0], 0});
      }
      return p_at_1(build_ranklists(scored));
    }
    case TrainInstance::Kind::classification: {
      std::vector<int> preds, labels;
      preds.reserve(val.size());
      labels.reserve(val.size());
      for (const auto& inst : val) {
        const Vec logits = match_score(inst.s1, inst.s2, p);
        preds.push_back(logits[1] > logits[0] ? 1 : 0);
        labels.push_back(inst.label);
      }
      return accuracy(preds, labels);
    }
  }
  throw InternalError("unreachable instance kind");
}

inline bool metric_improved(TrainInstance::Kind kind, double candidate, double best) {
  return kind == TrainInstance::Kind::regression ? candidate < best : candidate > best;
}

struct TrainHooks {
  std::function<void(const EpochRow&)> on_epoch;
  std::function<void(const TrainState&)> on_state;
};

// Shuffled mini-batch training with AdaGrad and validation-based selection.
// Each epoch's shuffle is derived from (seed, epoch), so a resumed run
// replays the interrupted trajectory exactly.
inline TrainResult train_loop(const std::vector<TrainInstance>& train,
                              const std::vector<TrainInstance>& val, const TrainConfig& cfg,
                              std::optional<TrainState> resume = std::nullopt,
                              const TrainHooks& hooks = {}) {
  if (train.empty()) throw InputError("train_loop: empty training set");

  TrainState st;
  if (resume.has_value()) {
    st = std::move(*resume);
  } else {
    st.params = init_params(cfg.model, cfg.init_scale, cfg.seed);
    st.opt = AdaGradState::init(st.params, cfg.lr, cfg.adagrad_eps);
  }

  TrainResult result;
  std::vector<std::size_t> order(train.size());

  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = st.next_epoch; epoch < cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(cfg.seed, Rng::mix(0x45504f43ull, epoch)));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> batch(order.begin() + start, order.begin() + end);
      double mean_loss = 0.0;
      GradSet g = [&] {
        try {
          return batch_gradient(train, batch, st.params, cfg.threads, mean_loss);
        } catch (const NumericError& e) {
          throw NumericError("epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(steps) + ": " + e.what());
        }
      }();
      if (!std::isfinite(mean_loss)) {
        throw NumericError("epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(steps) + ": non-finite batch loss");
      }
      if (cfg.freeze_embeddings) {
        std::fill(g.embed.a.begin(), g.embed.a.end(), 0.0);
      }
      adagrad_step(st.params, g, st.opt);
      epoch_loss += mean_loss * static_cast<double>(batch.size());
      ++steps;
    }
    epoch_loss /= static_cast<double>(train.size());

    const auto& val_set = val.empty() ? train : val;
    const double metric = validation_metric(val_set, st.params);
    if (!st.has_best || metric_improved(val_set.front().kind, metric, st.best_val)) {
      st.best = st.params;
      st.best_val = metric;
      st.best_epoch = epoch;
      st.stale_epochs = 0;
      st.has_best = true;
    } else {
      ++st.stale_epochs;
    }
    st.next_epoch = epoch + 1;

    EpochRow row;
    row.epoch = epoch;
    row.train_loss = epoch_loss;
    row.val_metric = metric;
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row);
    if (hooks.on_state) hooks.on_state(st);

    if (st.stale_epochs >= cfg.patience) break;
  }

  result.best = st.has_best ? st.best : st.params;
  result.best_epoch = st.best_epoch;
  result.best_val = st.best_val;
  result.final_state = std::move(st);
  return result;
}

}  // namespace msrnn
