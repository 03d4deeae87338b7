#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "msrnn/io.hpp"

namespace msrnn {

// ---------------------------------------------------------------------------
// Run manifest: resolved configuration of every run, written before the heavy
// work starts and finalized with the wall time afterwards. started_at and
// wall_seconds are the only fields exempt from bitwise reproducibility.

struct RunManifest {
  std::string command;
  std::string version = kVersionString;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string started_at;
  double wall_seconds = -1.0;

  void write(const std::string& path) const {
    json j = {{"command", command},   {"version", version},
              {"seed", seed},         {"config", config},
              {"inputs", inputs},     {"outputs", outputs},
              {"started_at", started_at}, {"wall_seconds", wall_seconds}};
    write_text_file(path, j.dump(2) + "\n");
  }
};

namespace detail {

inline std::string now_iso8601() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

// Tracks wall time and rewrites the manifest on completion.
class ManifestScope {
 public:
  ManifestScope(RunManifest manifest, std::string path)
      : manifest_(std::move(manifest)), path_(std::move(path)),
        t0_(std::chrono::steady_clock::now()) {
    manifest_.started_at = now_iso8601();
    if (!path_.empty()) manifest_.write(path_);
  }
  void add_output(const std::string& out) { manifest_.outputs.push_back(out); }
  void finish() {
    manifest_.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    if (!path_.empty()) manifest_.write(path_);
  }

 private:
  RunManifest manifest_;
  std::string path_;
  std::chrono::steady_clock::time_point t0_;
};

inline void ensure_dir(const std::string& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FileError("cannot create output directory '" + dir + "': " + ec.message());
}

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace detail

// Letters map A..Z onto ids 0..25; plain integers pass through.
inline TokenSeq parse_tokens(const std::string& text, std::size_t vocab_size) {
  TokenSeq seq;
  std::vector<std::string> bad;
  std::string tok;
  auto flush = [&] {
    if (tok.empty()) return;
    std::int32_t id = -1;
    if (tok.size() == 1 && tok[0] >= 'A' && tok[0] <= 'Z') {
      id = tok[0] - 'A';
    } else {
      char* endp = nullptr;
      const long v = std::strtol(tok.c_str(), &endp, 10);
      if (endp != tok.c_str() && *endp == '\0' && v >= 0) id = static_cast<std::int32_t>(v);
    }
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      bad.push_back(tok);
    } else {
      seq.ids.push_back(id);
    }
    tok.clear();
  };
  for (char ch : text) {
    if (ch == ',' || ch == ' ' || ch == '\t') {
      flush();
    } else {
      tok.push_back(ch);
    }
  }
  flush();
  if (!bad.empty()) {
    std::string msg = "tokens outside the vocabulary (size " + std::to_string(vocab_size) + "):";
    for (const auto& b : bad) msg += " '" + b + "'";
    throw InputError(msg);
  }
  if (seq.ids.empty()) throw InputError("empty token sequence '" + text + "'");
  return seq;
}

inline TokenSeq letters_to_seq(const std::string& letters) {
  TokenSeq s;
  for (char ch : letters) s.ids.push_back(ch - 'A');
  return s;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckConfig {
  std::size_t instances = 21;
  double eps = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t seed = 7;
  std::size_t max_entries_per_array = 256;
  bool corrupt_analytic = false;  // negative-control hook for tests
  std::string out_dir;            // optional report/manifest location
};

struct GradcheckResult {
  bool passed = false;
  std::size_t flagged_instances = 0;
  // name -> max relative error over all unflagged instances where present
  std::vector<FdArrayReport> aggregated;
  std::string report_text;
};

namespace detail {

inline TrainInstance random_instance(Rng& rng, const ModelConfig& cfg, std::size_t len_min,
                                     std::size_t len_max) {
  auto seq = [&] {
    return random_seq(rng, len_min, len_max, cfg.vocab_size);
  };
  TrainInstance inst;
  inst.kind = instance_kind_for(cfg.loss);
  inst.s1 = seq();
  inst.s2 = seq();
  switch (inst.kind) {
    case TrainInstance::Kind::regression: inst.y = rng.uniform(0.0, 1.0); break;
    case TrainInstance::Kind::ranking: inst.s2_neg = seq(); break;
    case TrainInstance::Kind::classification:
      inst.label = rng.below(2) == 0 ? 0 : 1;
      break;
  }
  return inst;
}

inline double instance_relu_margin(const TrainInstance& inst, const ParamSet& p) {
  double margin = forward_full(inst.s1, inst.s2, p).s.min_abs_preact;
  if (inst.kind == TrainInstance::Kind::ranking) {
    margin = std::min(margin, forward_full(inst.s1, inst.s2_neg, p).s.min_abs_preact);
  }
  return margin;
}

}  // namespace detail

// Finite-difference verification of the analytic gradients over a batch of
// seeded random instances covering all three losses and both scan layouts.
inline GradcheckResult run_gradcheck(const GradcheckConfig& cfg, std::ostream& log) {
  detail::ensure_dir(cfg.out_dir);
  RunManifest manifest;
  manifest.command = "gradcheck";
  manifest.seed = cfg.seed;
  manifest.config = {{"instances", std::to_string(cfg.instances)},
                     {"eps", format_double(cfg.eps)},
                     {"tolerance", format_double(cfg.tolerance)},
                     {"max_entries_per_array", std::to_string(cfg.max_entries_per_array)}};
  detail::ManifestScope scope(manifest,
                              cfg.out_dir.empty()
                                  ? std::string()
                                  : detail::join_path(cfg.out_dir, "manifest.json"));

  GradcheckResult result;
  std::vector<std::string> order;  // aggregation order = first appearance
  std::map<std::string, FdArrayReport> agg;

  const LossKind losses[3] = {LossKind::square, LossKind::hinge, LossKind::xent};
  for (std::size_t k = 0; k < cfg.instances; ++k) {
    Rng rng(Rng::mix(cfg.seed, Rng::mix(0x4743ull, k)));
    ModelConfig mc;
    mc.vocab_size = 8;
    mc.embed_dim = 2 + rng.below(3);     // 2..4
    mc.interact_dim = 2 + rng.below(3);  // 2..4
    mc.hidden_dim = 2 + rng.below(3);    // 2..4
    mc.bidirectional = k % 2 == 1;
    mc.loss = losses[k % 3];

    ParamSet params = init_params(mc, 0.1, Rng::mix(cfg.seed, k));
    TrainInstance inst = detail::random_instance(rng, mc, 2, 6);

    GradSet analytic = params.zeros_like();
    instance_loss_grad(inst, params, analytic);
    if (cfg.corrupt_analytic) analytic.score_b[0] += 1.0;

    auto loss_fn = [&inst](const ParamSet& q) { return instance_loss(inst, q); };
    FdReport report = fd_check(params, loss_fn, analytic, cfg.eps, cfg.max_entries_per_array);
    report.relu_kink_margin = detail::instance_relu_margin(inst, params);

    if (report.kink_flagged()) {
      ++result.flagged_instances;
      log << "instance " << k << " (" << to_string(mc.loss)
          << "): flagged near rectifier kink, margin " << report.relu_kink_margin << "\n";
      continue;
    }
    for (const auto& arr : report.arrays) {
      auto it = agg.find(arr.name);
      if (it == agg.end()) {
        order.push_back(arr.name);
        agg[arr.name] = arr;
      } else {
        it->second.entries_checked += arr.entries_checked;
        it->second.max_rel_err = std::max(it->second.max_rel_err, arr.max_rel_err);
      }
    }
  }

  result.passed = true;
  std::ostringstream os;
  os << "gradcheck over " << cfg.instances << " instances (eps " << format_double(cfg.eps)
     << ", tolerance " << format_double(cfg.tolerance) << ", " << result.flagged_instances
     << " flagged)\n";
  os << "array                     entries   max_rel_err\n";
  for (const auto& name : order) {
    const auto& arr = agg[name];
    result.aggregated.push_back(arr);
    if (arr.max_rel_err > cfg.tolerance) result.passed = false;
    os << name;
    for (std::size_t i = name.size(); i < 26; ++i) os << ' ';
    std::string cnt = std::to_string(arr.entries_checked);
    for (std::size_t i = cnt.size(); i < 7; ++i) os << ' ';
    os << cnt << "   ";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3e", arr.max_rel_err);
    os << buf << (arr.max_rel_err > cfg.tolerance ? "  FAIL" : "") << "\n";
  }
  os << (result.passed ? "gradcheck: PASS\n" : "gradcheck: FAIL\n");
  result.report_text = os.str();
  log << result.report_text;
  if (!cfg.out_dir.empty()) {
    write_text_file(detail::join_path(cfg.out_dir, "gradcheck_report.txt"),
                    result.report_text);
    scope.add_output("gradcheck_report.txt");
  }
  scope.finish();
  return result;
}

// ---------------------------------------------------------------------------
// simulate-lcs

// Defaults are the calibrated simulation protocol: AdaGrad needs the small
// batch and ~40+ epochs before the interaction tensor locks onto symbol
// equality; the loss then drops two further orders of magnitude.
struct SimulateConfig {
  GenConfig gen;
  std::size_t embed_dim = 10;
  std::size_t interact_dim = 10;
  std::size_t hidden_dim = 10;
  bool bidirectional = false;
  std::size_t batch_size = 32;
  double lr = 0.2;
  double init_scale = 0.2;
  std::size_t max_epochs = 60;
  std::size_t patience = 10;
  std::size_t n_val = 1000;  // carved from the head of the generated train set
  std::size_t threads = 1;
  bool exact_mode = false;
  std::size_t path_pairs = 200;
  std::string out_dir;
};

struct SimulateResult {
  double test_mse = 0.0;
  double test_mae = 0.0;
  double test_pearson = 0.0;
  // example pair (ABCDE vs FACGD)
  double example_pred = 0.0;
  int example_rounded = -1;
  double example_agreement = 0.0;
  // path recovery over the first path_pairs test pairs; the primary number
  // walks gates averaged across hidden dimensions
  double mean_gate_agreement = 0.0;
  double mean_gate_agreement_viz_dim = 0.0;
  double mean_random_agreement = 0.0;
  // exact mode
  std::size_t exact_grid_mismatches = 0;
  std::size_t exact_path_disagreements = 0;
};

namespace detail {

inline std::vector<TrainInstance> to_regression_instances(const std::vector<SimPair>& pairs) {
  std::vector<TrainInstance> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    TrainInstance inst;
    inst.kind = TrainInstance::Kind::regression;
    inst.s1 = p.x;
    inst.s2 = p.y;
    inst.y = p.label;
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace detail

inline SimulateResult run_simulate_lcs(const SimulateConfig& cfg, std::ostream& log) {
  detail::ensure_dir(cfg.out_dir);
  RunManifest manifest;
  manifest.command = "simulate-lcs";
  manifest.seed = cfg.gen.seed;
  manifest.config = {{"n_train", std::to_string(cfg.gen.n_train)},
                     {"n_test", std::to_string(cfg.gen.n_test)},
                     {"n_val", std::to_string(cfg.n_val)},
                     {"len_min", std::to_string(cfg.gen.len_min)},
                     {"len_max", std::to_string(cfg.gen.len_max)},
                     {"alphabet", std::to_string(cfg.gen.alphabet)},
                     {"normalization", "lcs / max(m, n)"},
                     {"embed_dim", std::to_string(cfg.embed_dim)},
                     {"interact_dim", std::to_string(cfg.interact_dim)},
                     {"hidden_dim", std::to_string(cfg.hidden_dim)},
                     {"bidirectional", cfg.bidirectional ? "true" : "false"},
                     {"loss", "square"},
                     {"batch_size", std::to_string(cfg.batch_size)},
                     {"lr", format_double(cfg.lr)},
                     {"init_scale", format_double(cfg.init_scale)},
                     {"max_epochs", std::to_string(cfg.max_epochs)},
                     {"patience", std::to_string(cfg.patience)},
                     {"threads", std::to_string(cfg.threads)},
                     {"exact_mode", cfg.exact_mode ? "true" : "false"},
                     {"path_pairs", std::to_string(cfg.path_pairs)}};
  const std::string manifest_path =
      cfg.out_dir.empty() ? std::string() : detail::join_path(cfg.out_dir, "manifest.json");
  detail::ManifestScope scope(manifest, manifest_path);

  log << "generating " << cfg.gen.n_train << "/" << cfg.gen.n_test << " sequence pairs\n";
  SimDataset ds = gen_dataset(cfg.gen);

  const TokenSeq example_x = letters_to_seq("ABCDE");
  const TokenSeq example_y = letters_to_seq("FACGD");
  const DPTable example_table = lcs_table(example_x, example_y);
  const MatchPath example_dp = dp_backtrace(example_table, example_x, example_y);

  SimulateResult result;

  auto emit = [&](const std::string& name, auto&& writer) {
    if (cfg.out_dir.empty()) return;
    writer(detail::join_path(cfg.out_dir, name));
    scope.add_output(name);
  };

  if (cfg.exact_mode) {
    // Degenerate equivalence run: no training, the hard-gated lattice must
    // reproduce the DP table and its backtrace on every pair.
    std::vector<double> preds, labels;
    double agreement_sum = 0.0;
    for (const auto& pair : ds.test) {
      const LatticeState st = exact_lcs_mode(pair.x, pair.y);
      const DPTable table = lcs_table(pair.x, pair.y);
      for (std::size_t i = 0; i <= st.m; ++i) {
        for (std::size_t j = 0; j <= st.n; ++j) {
          if (st.h_at(i, j)[0] != static_cast<double>(table.at(i, j))) {
            ++result.exact_grid_mismatches;
          }
        }
      }
      const MatchPath gate_path = gate_backtrace(st, DimSelect::single(0));
      const MatchPath dp_path = dp_backtrace(table, pair.x, pair.y);
      const double agreement = path_agreement(gate_path, dp_path);
      agreement_sum += agreement;
      if (agreement < 1.0) ++result.exact_path_disagreements;
      preds.push_back(st.final_state()[0] /
                      static_cast<double>(std::max(pair.x.size(), pair.y.size())));
      labels.push_back(pair.label);
    }
    result.test_mse = mean_squared_error(preds, labels);
    result.test_mae = mean_absolute_error(preds, labels);
    result.test_pearson = pearson(preds, labels);
    result.example_agreement = agreement_sum / static_cast<double>(ds.test.size());

    const LatticeState st = exact_lcs_mode(example_x, example_y);
    result.example_pred = st.final_state()[0];
    result.example_rounded = static_cast<int>(std::lround(st.final_state()[0]));
    const MatchPath gate_path = gate_backtrace(st, DimSelect::single(0));
    emit("lattice.csv", [&](const std::string& p) { write_heatmap_csv(p, lattice_grid(st, 0)); });
    emit("lattice.pgm", [&](const std::string& p) { write_heatmap_pgm(p, lattice_grid(st, 0)); });
    emit("gates.csv",
         [&](const std::string& p) { write_gates_csv(p, st, DimSelect::single(0)); });
    emit("gate_path.csv", [&](const std::string& p) { write_path_csv(p, gate_path); });
    emit("dp_path.csv", [&](const std::string& p) { write_path_csv(p, example_dp); });
    log << "exact mode: " << result.exact_grid_mismatches << " grid mismatches, "
        << result.exact_path_disagreements << " path disagreements over " << ds.test.size()
        << " pairs\n";
  } else {
    TrainConfig tc;
    tc.model.vocab_size = cfg.gen.alphabet;
    tc.model.embed_dim = cfg.embed_dim;
    tc.model.interact_dim = cfg.interact_dim;
    tc.model.hidden_dim = cfg.hidden_dim;
    tc.model.bidirectional = cfg.bidirectional;
    tc.model.loss = LossKind::square;
    tc.batch_size = cfg.batch_size;
    tc.lr = cfg.lr;
    tc.init_scale = cfg.init_scale;
    tc.max_epochs = cfg.max_epochs;
    tc.patience = cfg.patience;
    tc.seed = cfg.gen.seed;
    tc.threads = cfg.threads;

    std::vector<TrainInstance> all = detail::to_regression_instances(ds.train);
    const std::size_t n_val = std::min(cfg.n_val, all.size() / 5);
    std::vector<TrainInstance> val(all.begin(), all.begin() + n_val);
    std::vector<TrainInstance> train(all.begin() + n_val, all.end());

    TrainHooks hooks;
    hooks.on_epoch = [&log](const EpochRow& row) {
      log << "epoch " << row.epoch << ": train_loss " << row.train_loss << ", val_mse "
          << row.val_metric << "\n";
    };
    TrainResult tr = train_loop(train, val, tc, std::nullopt, hooks);
    const ParamSet& best = tr.best;

    std::vector<double> preds, labels;
    preds.reserve(ds.test.size());
    for (const auto& pair : ds.test) {
      preds.push_back(match_score(pair.x, pair.y, best)[0]);
      labels.push_back(pair.label);
    }
    result.test_mse = mean_squared_error(preds, labels);
    result.test_mae = mean_absolute_error(preds, labels);
    result.test_pearson = pearson(preds, labels);

    // path recovery vs. the DP oracle, with a random monotone baseline
    const std::size_t viz_dim = select_viz_dimension(best);
    const std::size_t n_paths = std::min(cfg.path_pairs, ds.test.size());
    Rng baseline_rng(Rng::mix(cfg.gen.seed, 0x504154ull));
    double gate_sum = 0.0, gate_viz_sum = 0.0, random_sum = 0.0;
    for (std::size_t k = 0; k < n_paths; ++k) {
      const auto& pair = ds.test[k];
      const ForwardTrace trace = forward_full(pair.x, pair.y, best);
      const DPTable table = lcs_table(pair.x, pair.y);
      const MatchPath dp_path = dp_backtrace(table, pair.x, pair.y);
      gate_sum += path_agreement(gate_backtrace(trace.fwd, DimSelect::averaged()), dp_path);
      gate_viz_sum +=
          path_agreement(gate_backtrace(trace.fwd, DimSelect::single(viz_dim)), dp_path);
      random_sum += path_agreement(
          random_monotone_path(pair.x.size(), pair.y.size(), baseline_rng), dp_path);
    }
    result.mean_gate_agreement = gate_sum / static_cast<double>(n_paths);
    result.mean_gate_agreement_viz_dim = gate_viz_sum / static_cast<double>(n_paths);
    result.mean_random_agreement = random_sum / static_cast<double>(n_paths);

    // the worked example pair
    const ForwardTrace example = forward_full(example_x, example_y, best);
    result.example_pred = example.out[0];
    result.example_rounded = static_cast<int>(std::lround(
        example.out[0] * static_cast<double>(std::max(example_x.size(), example_y.size()))));
    const MatchPath example_gate = gate_backtrace(example.fwd, DimSelect::averaged());
    result.example_agreement = path_agreement(example_gate, example_dp);

    emit("history.csv",
         [&](const std::string& p) { write_history_csv(p, tr.history); });
    emit("checkpoint_best.msrnn",
         [&](const std::string& p) { save_checkpoint(p, best); });
    emit("lattice.csv", [&](const std::string& p) {
      write_heatmap_csv(p, lattice_grid(example.fwd, viz_dim));
    });
    emit("lattice.pgm", [&](const std::string& p) {
      write_heatmap_pgm(p, lattice_grid(example.fwd, viz_dim));
    });
    emit("gates.csv", [&](const std::string& p) {
      write_gates_csv(p, example.fwd, DimSelect::single(viz_dim));
    });
    emit("gate_path.csv", [&](const std::string& p) { write_path_csv(p, example_gate); });
    emit("dp_path.csv", [&](const std::string& p) { write_path_csv(p, example_dp); });
    emit("predictions.csv", [&](const std::string& p) {
      std::ostringstream os;
      os << "m,n,label,prediction\n";
      for (std::size_t k = 0; k < ds.test.size(); ++k) {
        os << ds.test[k].x.size() << ',' << ds.test[k].y.size() << ','
           << format_double(labels[k]) << ',' << format_double(preds[k]) << '\n';
      }
      write_text_file(p, os.str());
    });
  }

  std::ostringstream metrics;
  metrics << "metric,value\n";
  metrics << "test_mse," << format_double(result.test_mse) << '\n';
  metrics << "test_mae," << format_double(result.test_mae) << '\n';
  metrics << "test_pearson," << format_double(result.test_pearson) << '\n';
  metrics << "example_pred," << format_double(result.example_pred) << '\n';
  metrics << "example_rounded," << result.example_rounded << '\n';
  metrics << "example_path_agreement," << format_double(result.example_agreement) << '\n';
  if (!cfg.exact_mode) {
    metrics << "mean_gate_agreement," << format_double(result.mean_gate_agreement) << '\n';
    metrics << "mean_gate_agreement_viz_dim,"
            << format_double(result.mean_gate_agreement_viz_dim) << '\n';
    metrics << "mean_random_agreement," << format_double(result.mean_random_agreement) << '\n';
  } else {
    metrics << "exact_grid_mismatches," << result.exact_grid_mismatches << '\n';
    metrics << "exact_path_disagreements," << result.exact_path_disagreements << '\n';
  }
  emit("metrics.csv", [&](const std::string& p) { write_text_file(p, metrics.str()); });
  log << metrics.str();
  scope.finish();
  return result;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataConfig {
  std::string task = "lcs-regression";  // lcs-regression | ranking | classification
  GenConfig gen;                        // lengths, alphabet, counts, seed
  std::size_t n_val = 0;                // carved from train (default: 10%)
  std::size_t negatives_per_query = 4;  // ranking lists
  std::string out_dir;
};

namespace detail {

// Positives embed a planted subsequence of the query (both drawn from the
// lower half of a doubled alphabet); negatives use the upper half only.
inline void gen_ranking_lists(Rng& rng, const GenConfig& g, std::size_t negatives,
                              std::size_t count, std::vector<TrainInstance>& out,
                              std::set<std::vector<std::int32_t>>& seen_queries) {
  const std::size_t half = g.alphabet;
  for (std::size_t q = 0; q < count; ++q) {
    TokenSeq query = random_seq(rng, g.len_min, g.len_max, half);
    // evaluation groups triples by query, so queries must be distinct
    while (!seen_queries.insert(query.ids).second) {
      query = random_seq(rng, g.len_min, g.len_max, half);
    }
    // keep ~70% of the query as a subsequence, pad with lower-half noise
    TokenSeq pos;
    for (std::int32_t id : query.ids) {
      if (rng.next_unit() < 0.7) pos.ids.push_back(id);
      if (rng.next_unit() < 0.3) {
        pos.ids.push_back(static_cast<std::int32_t>(rng.below(half)));
      }
    }
    if (pos.ids.empty()) pos.ids.push_back(query.ids[0]);
    for (std::size_t k = 0; k < negatives; ++k) {
      TokenSeq neg = random_seq(rng, g.len_min, g.len_max, half);
      for (auto& id : neg.ids) id += static_cast<std::int32_t>(half);
      TrainInstance inst;
      inst.kind = TrainInstance::Kind::ranking;
      inst.s1 = query;
      inst.s2 = pos;
      inst.s2_neg = std::move(neg);
      out.push_back(std::move(inst));
    }
  }
}

inline void gen_classification_pairs(Rng& rng, const GenConfig& g, std::size_t count,
                                     std::vector<TrainInstance>& out) {
  const std::size_t half = g.alphabet;
  for (std::size_t k = 0; k < count; ++k) {
    const TokenSeq s1 = random_seq(rng, g.len_min, g.len_max, half);
    TrainInstance inst;
    inst.kind = TrainInstance::Kind::classification;
    inst.s1 = s1;
    inst.label = k % 2 == 0 ? 1 : 0;
    if (inst.label == 1) {
      for (std::int32_t id : s1.ids) {
        if (rng.next_unit() < 0.7) inst.s2.ids.push_back(id);
        if (rng.next_unit() < 0.3) {
          inst.s2.ids.push_back(static_cast<std::int32_t>(rng.below(half)));
        }
      }
      if (inst.s2.ids.empty()) inst.s2.ids.push_back(s1.ids[0]);
    } else {
      inst.s2 = random_seq(rng, g.len_min, g.len_max, half);
      for (auto& id : inst.s2.ids) id += static_cast<std::int32_t>(half);
    }
    out.push_back(std::move(inst));
  }
}

}  // namespace detail

struct GenDataResult {
  std::size_t vocab_size = 0;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  std::string train_path, val_path, test_path;
};

inline GenDataResult run_gen_data(const GenDataConfig& cfg, std::ostream& log) {
  if (cfg.out_dir.empty()) throw InputError("gen-data requires an output directory");
  detail::ensure_dir(cfg.out_dir);

  GenDataResult result;
  std::vector<TrainInstance> train, val, test;
  std::string normalization = "none";

  if (cfg.task == "lcs-regression") {
    SimDataset ds = gen_dataset(cfg.gen);
    auto all = detail::to_regression_instances(ds.train);
    const std::size_t n_val = cfg.n_val > 0 ? std::min(cfg.n_val, all.size() / 2)
                                            : all.size() / 10;
    val.assign(all.begin(), all.begin() + n_val);
    train.assign(all.begin() + n_val, all.end());
    test = detail::to_regression_instances(ds.test);
    result.vocab_size = cfg.gen.alphabet;
    normalization = "lcs / max(m, n)";
  } else if (cfg.task == "ranking" || cfg.task == "classification") {
    result.vocab_size = 2 * cfg.gen.alphabet;
    Rng rng(Rng::mix(cfg.gen.seed, 0x47454eull));
    const std::size_t n_val = cfg.n_val > 0 ? cfg.n_val : cfg.gen.n_train / 10;
    if (cfg.task == "ranking") {
      std::set<std::vector<std::int32_t>> seen;
      detail::gen_ranking_lists(rng, cfg.gen, cfg.negatives_per_query, cfg.gen.n_train, train,
                                seen);
      detail::gen_ranking_lists(rng, cfg.gen, cfg.negatives_per_query, n_val, val, seen);
      detail::gen_ranking_lists(rng, cfg.gen, cfg.negatives_per_query, cfg.gen.n_test, test,
                                seen);
    } else {
      detail::gen_classification_pairs(rng, cfg.gen, cfg.gen.n_train, train);
      detail::gen_classification_pairs(rng, cfg.gen, n_val, val);
      detail::gen_classification_pairs(rng, cfg.gen, cfg.gen.n_test, test);
    }
  } else {
    throw InputError("unknown gen-data task '" + cfg.task +
                     "' (expected lcs-regression|ranking|classification)");
  }

  RunManifest manifest;
  manifest.command = "gen-data";
  manifest.seed = cfg.gen.seed;
  manifest.config = {{"task", cfg.task},
                     {"len_min", std::to_string(cfg.gen.len_min)},
                     {"len_max", std::to_string(cfg.gen.len_max)},
                     {"alphabet", std::to_string(cfg.gen.alphabet)},
                     {"vocab_size", std::to_string(result.vocab_size)},
                     {"n_train", std::to_string(cfg.gen.n_train)},
                     {"n_test", std::to_string(cfg.gen.n_test)},
                     {"negatives_per_query", std::to_string(cfg.negatives_per_query)},
                     {"normalization", normalization}};
  detail::ManifestScope scope(manifest, detail::join_path(cfg.out_dir, "manifest.json"));

  const std::string task_tag = cfg.task == "lcs-regression" ? "regression" : cfg.task;
  auto dump = [&](const char* name, std::vector<TrainInstance>& instances,
                  std::string& path_out) {
    Dataset ds;
    ds.header.vocab_size = result.vocab_size;
    ds.header.normalization = normalization;
    ds.header.seed = cfg.gen.seed;
    ds.header.task = task_tag;
    ds.instances = std::move(instances);
    path_out = detail::join_path(cfg.out_dir, name);
    save_dataset(path_out, ds);
    scope.add_output(name);
    return ds.instances.size();
  };
  result.n_train = train.size();
  result.n_val = val.size();
  result.n_test = test.size();
  dump("train.jsonl", train, result.train_path);
  dump("valid.jsonl", val, result.val_path);
  dump("test.jsonl", test, result.test_path);
  log << "gen-data (" << cfg.task << "): " << result.n_train << " train, " << result.n_val
      << " valid, " << result.n_test << " test records, vocabulary " << result.vocab_size
      << "\n";
  scope.finish();
  return result;
}

// ---------------------------------------------------------------------------
// train

struct TrainCmdConfig {
  std::string train_path;
  std::string val_path;      // optional
  std::string resume_path;   // optional checkpoint_last to continue from
  std::string embeddings_path;  // optional word2vec text file
  std::string vocab_path;       // required with embeddings_path
  TrainConfig train;
  std::string out_dir;
};

struct TrainCmdResult {
  double best_val = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::string best_checkpoint, last_checkpoint;
  std::vector<EpochRow> history;
};

inline TrainCmdResult run_train(const TrainCmdConfig& cfg, std::ostream& log) {
  if (cfg.out_dir.empty()) throw InputError("train requires an output directory");
  detail::ensure_dir(cfg.out_dir);

  Dataset train_ds = load_dataset(cfg.train_path);
  Dataset val_ds;
  if (!cfg.val_path.empty()) {
    val_ds = load_dataset(cfg.val_path, train_ds.header.vocab_size);
  }
  if (train_ds.instances.empty()) throw InputError("training dataset is empty");

  TrainConfig tc = cfg.train;
  tc.model.vocab_size = train_ds.header.vocab_size;
  const auto expected_kind = instance_kind_for(tc.model.loss);
  for (const auto& inst : train_ds.instances) {
    if (inst.kind != expected_kind) {
      throw InputError(std::string("dataset record kind does not match loss '") +
                       to_string(tc.model.loss) +
                       "'; regression datasets pair with square, ranking with hinge, "
                       "classification with xent");
    }
  }

  std::optional<TrainState> resume;
  if (!cfg.resume_path.empty()) {
    Checkpoint ck = load_checkpoint(cfg.resume_path);
    if (!ck.has_train_state) {
      throw InputError("checkpoint '" + cfg.resume_path + "' carries no optimizer state");
    }
    if (ck.params.config.vocab_size != tc.model.vocab_size) {
      throw InputError("resume checkpoint vocabulary does not match the dataset");
    }
    tc.model = ck.params.config;
    resume = std::move(ck.state);
  } else if (!cfg.embeddings_path.empty()) {
    if (cfg.vocab_path.empty()) {
      throw InputError("--embeddings requires --vocab");
    }
    auto vocab = load_vocab(cfg.vocab_path);
    if (vocab.size() != tc.model.vocab_size) {
      throw InputError("vocabulary file has " + std::to_string(vocab.size()) +
                       " tokens, dataset expects " + std::to_string(tc.model.vocab_size));
    }
    auto loaded = load_embeddings(cfg.embeddings_path, vocab, tc.init_scale,
                                  Rng::mix(tc.seed, 0x454d42ull));
    if (loaded.embed.cols != tc.model.embed_dim) {
      throw InputError("embeddings file dimension " + std::to_string(loaded.embed.cols) +
                       " does not match configured embed_dim " +
                       std::to_string(tc.model.embed_dim));
    }
    log << "embeddings: " << loaded.missing << " vocabulary tokens missing, "
        << loaded.duplicates << " duplicates\n";
    ParamSet p = init_params(tc.model, tc.init_scale, tc.seed, &loaded.embed);
    TrainState st;
    st.params = std::move(p);
    st.opt = AdaGradState::init(st.params, tc.lr, tc.adagrad_eps);
    resume = std::move(st);
  }

  RunManifest manifest;
  manifest.command = "train";
  manifest.seed = tc.seed;
  manifest.inputs = {cfg.train_path};
  if (!cfg.val_path.empty()) manifest.inputs.push_back(cfg.val_path);
  if (!cfg.resume_path.empty()) manifest.inputs.push_back(cfg.resume_path);
  manifest.config = {{"loss", to_string(tc.model.loss)},
                     {"vocab_size", std::to_string(tc.model.vocab_size)},
                     {"embed_dim", std::to_string(tc.model.embed_dim)},
                     {"interact_dim", std::to_string(tc.model.interact_dim)},
                     {"hidden_dim", std::to_string(tc.model.hidden_dim)},
                     {"bidirectional", tc.model.bidirectional ? "true" : "false"},
                     {"batch_size", std::to_string(tc.batch_size)},
                     {"lr", format_double(tc.lr)},
                     {"adagrad_eps", format_double(tc.adagrad_eps)},
                     {"init_scale", format_double(tc.init_scale)},
                     {"max_epochs", std::to_string(tc.max_epochs)},
                     {"patience", std::to_string(tc.patience)},
                     {"freeze_embeddings", tc.freeze_embeddings ? "true" : "false"},
                     {"threads", std::to_string(tc.threads)}};
  detail::ManifestScope scope(manifest, detail::join_path(cfg.out_dir, "manifest.json"));

  TrainCmdResult result;
  result.best_checkpoint = detail::join_path(cfg.out_dir, "checkpoint_best.msrnn");
  result.last_checkpoint = detail::join_path(cfg.out_dir, "checkpoint_last.msrnn");
  const std::string history_path = detail::join_path(cfg.out_dir, "history.csv");
  const bool append_history =
      !cfg.resume_path.empty() && std::filesystem::exists(history_path);

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRow& row) {
    log << "epoch " << row.epoch << ": train_loss " << row.train_loss << ", val "
        << row.val_metric << "\n";
  };
  hooks.on_state = [&](const TrainState& st) {
    save_checkpoint(result.last_checkpoint, st.params, &st);
    if (st.has_best) save_checkpoint(result.best_checkpoint, st.best);
  };

  TrainResult tr =
      train_loop(train_ds.instances, val_ds.instances, tc, std::move(resume), hooks);
  write_history_csv(history_path, tr.history, append_history);
  scope.add_output("history.csv");
  scope.add_output("checkpoint_best.msrnn");
  scope.add_output("checkpoint_last.msrnn");
  if (tr.history.empty()) {
    // no epochs ran; still persist the state so the outputs exist
    save_checkpoint(result.last_checkpoint, tr.final_state.params, &tr.final_state);
    save_checkpoint(result.best_checkpoint, tr.best);
  }

  result.best_val = tr.best_val;
  result.best_epoch = tr.best_epoch;
  result.epochs_run = tr.history.size();
  result.history = tr.history;
  log << "best validation " << tr.best_val << " at epoch " << tr.best_epoch << "\n";
  scope.finish();
  return result;
}

// ---------------------------------------------------------------------------
// eval

struct EvalCmdConfig {
  std::string checkpoint_path;
  std::string data_path;
  std::string task;  // optional; defaults to the dataset's record kind
  std::string out_dir;
};

struct EvalCmdResult {
  std::string task;
  std::map<std::string, double> metrics;
  std::size_t n = 0;
  std::string report_text;
};

inline EvalCmdResult run_eval(const EvalCmdConfig& cfg, std::ostream& log) {
  Checkpoint ck = load_checkpoint(cfg.checkpoint_path);
  Dataset ds = load_dataset(cfg.data_path, ck.params.config.vocab_size);
  if (ds.instances.empty()) throw InputError("evaluation dataset is empty");

  std::string task = cfg.task;
  if (task.empty()) {
    switch (ds.instances.front().kind) {
      case TrainInstance::Kind::regression: task = "regression"; break;
      case TrainInstance::Kind::ranking: task = "ranking"; break;
      case TrainInstance::Kind::classification: task = "classification"; break;
    }
  }

  EvalCmdResult result;
  result.task = task;
  const ParamSet& p = ck.params;

  if (task == "regression") {
    if (p.config.out_dim() != 1) throw InputError("checkpoint head is not a scalar scorer");
    std::vector<double> preds, truth;
    for (const auto& inst : ds.instances) {
      if (inst.kind != TrainInstance::Kind::regression) {
        throw InputError("dataset record is not a regression pair");
      }
      preds.push_back(match_score(inst.s1, inst.s2, p)[0]);
      truth.push_back(inst.y);
    }
    result.n = preds.size();
    result.metrics["mse"] = mean_squared_error(preds, truth);
    result.metrics["mae"] = mean_absolute_error(preds, truth);
    result.metrics["pearson"] = pearson(preds, truth);
  } else if (task == "ranking") {
    if (p.config.out_dim() != 1) throw InputError("checkpoint head is not a scalar scorer");
    std::vector<TrainInstance> ranked;
    for (const auto& inst : ds.instances) {
      if (inst.kind != TrainInstance::Kind::ranking) {
        throw InputError("dataset record is not a ranking triple");
      }
      ranked.push_back(inst);
    }
    // group by query, score the shared positive once plus every negative
    std::vector<ScoredInstance> scored;
    std::vector<TokenSeq> queries;
    std::size_t next_id = 0;
    for (const auto& inst : ranked) {
      std::size_t qid = queries.size();
      for (std::size_t q = 0; q < queries.size(); ++q) {
        if (queries[q] == inst.s1) {
          qid = q;
          break;
        }
      }
      if (qid == queries.size()) {
        queries.push_back(inst.s1);
        scored.push_back({qid, next_id++, match_score(inst.s1, inst.s2, p)[0], 1});
      }
      scored.push_back({qid, next_id++, match_score(inst.s1, inst.s2_neg, p)[0], 0});
    }
    auto lists = build_ranklists(scored);
    result.n = lists.size();
    result.metrics["p_at_1"] = p_at_1(lists);
    result.metrics["mrr"] = mrr(lists);
  } else if (task == "classification") {
    if (p.config.out_dim() != 2) throw InputError("checkpoint head is not a 2-way classifier");
    std::vector<int> preds, labels;
    for (const auto& inst : ds.instances) {
      if (inst.kind != TrainInstance::Kind::classification) {
        throw InputError("dataset record is not a classification pair");
      }
      const Vec logits = match_score(inst.s1, inst.s2, p);
      preds.push_back(logits[1] > logits[0] ? 1 : 0);
      labels.push_back(inst.label);
    }
    result.n = preds.size();
    result.metrics["accuracy"] = accuracy(preds, labels);
  } else {
    throw InputError("unknown eval task '" + task + "'");
  }

  std::ostringstream os;
  os << "metric,value,n\n";
  for (const auto& [name, value] : result.metrics) {
    os << name << ',' << format_double(value) << ',' << result.n << '\n';
  }
  result.report_text = os.str();
  log << result.report_text;

  if (!cfg.out_dir.empty()) {
    detail::ensure_dir(cfg.out_dir);
    RunManifest manifest;
    manifest.command = "eval";
    manifest.inputs = {cfg.checkpoint_path, cfg.data_path};
    manifest.config = {{"task", task}};
    detail::ManifestScope scope(manifest, detail::join_path(cfg.out_dir, "manifest.json"));
    write_text_file(detail::join_path(cfg.out_dir, "metrics.csv"), result.report_text);
    scope.add_output("metrics.csv");
    scope.finish();
  }
  return result;
}

// ---------------------------------------------------------------------------
// visualize

struct VizCmdConfig {
  std::string checkpoint_path;  // unused in exact mode
  std::string s1, s2;           // token text, e.g. "A B C D E" or "0,1,2"
  bool exact_mode = false;
  std::string out_dir;
};

struct VizCmdResult {
  std::size_t viz_dim = 0;
  MatchPath path;
};

inline VizCmdResult run_visualize(const VizCmdConfig& cfg, std::ostream& log) {
  if (cfg.out_dir.empty()) throw InputError("visualize requires an output directory");
  detail::ensure_dir(cfg.out_dir);

  VizCmdResult result;
  RunManifest manifest;
  manifest.command = "visualize";
  manifest.config = {{"s1", cfg.s1},
                     {"s2", cfg.s2},
                     {"exact_mode", cfg.exact_mode ? "true" : "false"}};
  if (!cfg.checkpoint_path.empty()) manifest.inputs.push_back(cfg.checkpoint_path);
  detail::ManifestScope scope(manifest, detail::join_path(cfg.out_dir, "manifest.json"));

  auto emit = [&](const std::string& name, auto&& writer) {
    writer(detail::join_path(cfg.out_dir, name));
    scope.add_output(name);
  };

  if (cfg.exact_mode) {
    const TokenSeq s1 = parse_tokens(cfg.s1, 26);
    const TokenSeq s2 = parse_tokens(cfg.s2, 26);
    const LatticeState st = exact_lcs_mode(s1, s2);
    result.viz_dim = 0;
    result.path = gate_backtrace(st, DimSelect::single(0));
    emit("lattice.csv", [&](const std::string& p) { write_heatmap_csv(p, lattice_grid(st, 0)); });
    emit("lattice.pgm", [&](const std::string& p) { write_heatmap_pgm(p, lattice_grid(st, 0)); });
    emit("gates.csv",
         [&](const std::string& p) { write_gates_csv(p, st, DimSelect::single(0)); });
    emit("path.csv", [&](const std::string& p) { write_path_csv(p, result.path); });
    log << "exact-mode lattice " << st.m << "x" << st.n << ", final value "
        << st.final_state()[0] << "\n";
  } else {
    if (cfg.checkpoint_path.empty()) throw InputError("visualize requires a checkpoint");
    Checkpoint ck = load_checkpoint(cfg.checkpoint_path);
    const ParamSet& p = ck.params;
    const TokenSeq s1 = parse_tokens(cfg.s1, p.config.vocab_size);
    const TokenSeq s2 = parse_tokens(cfg.s2, p.config.vocab_size);
    const ForwardTrace tr = forward_full(s1, s2, p);
    result.viz_dim = select_viz_dimension(p);
    result.path = gate_backtrace(tr.fwd, DimSelect::averaged());
    emit("lattice.csv", [&](const std::string& path) {
      write_heatmap_csv(path, lattice_grid(tr.fwd, result.viz_dim));
    });
    emit("lattice.pgm", [&](const std::string& path) {
      write_heatmap_pgm(path, lattice_grid(tr.fwd, result.viz_dim));
    });
    emit("gates.csv", [&](const std::string& path) {
      write_gates_csv(path, tr.fwd, DimSelect::single(result.viz_dim));
    });
    emit("path.csv", [&](const std::string& path) { write_path_csv(path, result.path); });
    log << "lattice " << tr.fwd.m << "x" << tr.fwd.n << " at dimension " << result.viz_dim
        << ", score " << tr.out[0] << "\n";
  }
  scope.finish();
  return result;
}

}  // namespace msrnn
