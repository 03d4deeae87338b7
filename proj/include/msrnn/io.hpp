#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msrnn/lcs.hpp"
#include "msrnn/train.hpp"

namespace msrnn {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Small file helpers

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw FileError("write failed on '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open '" + path + "' for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// Vocabulary and pre-trained embeddings

// One token per line; id = line index.
inline std::vector<std::string> load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open vocabulary file '" + path + "'");
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) vocab.push_back(line);
  }
  return vocab;
}

struct EmbeddingLoadResult {
  Mat embed;
  std::size_t missing = 0;     // vocab tokens absent from the file
  std::size_t duplicates = 0;  // tokens seen more than once (last wins)
};

// word2vec text format: optional "count dim" first line, then
// "token v1 ... vd" per line. Rows align to vocab ids; absent tokens are
// drawn Uniform(-init_scale, init_scale).
inline EmbeddingLoadResult load_embeddings(const std::string& path,
                                           const std::vector<std::string>& vocab,
                                           double init_scale, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open embeddings file '" + path + "'");

  std::size_t dim = 0;
  std::vector<std::pair<std::string, Vec>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<double> values;
    double v;
    while (ls >> v) values.push_back(v);
    if (lineno == 1 && values.size() == 1) {
      // "count dim" header; token parsed as the count
      char* endp = nullptr;
      const double cnt = std::strtod(token.c_str(), &endp);
      if (endp != token.c_str() && *endp == '\0' && cnt >= 0) {
        dim = static_cast<std::size_t>(values[0]);
        continue;
      }
    }
    if (values.empty()) {
      throw ParseError("embeddings file '" + path + "': no values on line " +
                       std::to_string(lineno));
    }
    if (dim == 0) dim = values.size();
    if (values.size() != dim) {
      throw InputError("embeddings file '" + path + "': line " + std::to_string(lineno) +
                       " has " + std::to_string(values.size()) + " values, expected " +
                       std::to_string(dim));
    }
    rows.emplace_back(std::move(token), std::move(values));
  }
  if (dim == 0) throw ParseError("embeddings file '" + path + "' contains no vectors");

  EmbeddingLoadResult res;
  res.embed = Mat(vocab.size(), dim);
  std::vector<bool> filled(vocab.size(), false);
  for (const auto& [token, values] : rows) {
    for (std::size_t id = 0; id < vocab.size(); ++id) {
      if (vocab[id] != token) continue;
      if (filled[id]) ++res.duplicates;
      filled[id] = true;
      for (std::size_t k = 0; k < dim; ++k) res.embed.at(id, k) = values[k];
    }
  }
  Rng rng(Rng::mix(seed, 0x454d4244ull));
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    if (filled[id]) continue;
    ++res.missing;
    for (std::size_t k = 0; k < dim; ++k) {
      res.embed.at(id, k) = rng.uniform(-init_scale, init_scale);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints: a little-endian binary container of named float64 arrays.
// Layout: magic "MSRNNCKP", u32 version, config block, u8 train-state flag,
// one array table for the parameters and (optionally) the optimizer state.

namespace detail {

constexpr char kCheckpointMagic[8] = {'M', 'S', 'R', 'N', 'N', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in, const char* what) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

inline void put_arrays(std::ostream& out, const ParamSet& p) {
  auto arrays = named_arrays(p);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& arr : arrays) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(arr.name.size()));
    out.write(arr.name.data(), static_cast<std::streamsize>(arr.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(arr.dims.size()));
    std::size_t expect = 1;
    for (std::size_t d : arr.dims) {
      put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
      expect *= d;
    }
    out.write(reinterpret_cast<const char*>(arr.data->data()),
              static_cast<std::streamsize>(expect * sizeof(double)));
  }
}

inline void take_arrays(std::istream& in, ParamSet& p, const char* what) {
  auto arrays = named_arrays(p);
  const auto count = take<std::uint32_t>(in, what);
  if (count != arrays.size()) {
    throw ParseError(std::string("checkpoint ") + what + ": expected " +
                     std::to_string(arrays.size()) + " arrays, found " +
                     std::to_string(count));
  }
  for (auto& arr : arrays) {
    const auto name_len = take<std::uint16_t>(in, what);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw ParseError(std::string("checkpoint truncated in ") + what);
    if (name != arr.name) {
      throw ParseError(std::string("checkpoint ") + what + ": array '" + name +
                       "' where '" + arr.name + "' was expected");
    }
    const auto ndim = take<std::uint8_t>(in, what);
    if (ndim != arr.dims.size()) {
      throw ParseError("checkpoint array '" + name + "': rank mismatch");
    }
    std::size_t expect = 1;
    for (std::size_t k = 0; k < ndim; ++k) {
      const auto d = take<std::uint64_t>(in, what);
      if (d != arr.dims[k]) {
        throw ParseError("checkpoint array '" + name + "': dimension mismatch");
      }
      expect *= d;
    }
    in.read(reinterpret_cast<char*>(arr.data->data()),
            static_cast<std::streamsize>(expect * sizeof(double)));
    if (!in) throw ParseError("checkpoint truncated in array '" + name + "'");
  }
}

}  // namespace detail

struct Checkpoint {
  ParamSet params;
  bool has_train_state = false;
  TrainState state;  // meaningful only when has_train_state
};

inline void save_checkpoint(const std::string& path, const ParamSet& params,
                            const TrainState* train_state = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot open checkpoint '" + path + "' for writing");
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::put<std::uint32_t>(out, detail::kCheckpointVersion);
  const ModelConfig& cfg = params.config;
  detail::put<std::uint64_t>(out, cfg.vocab_size);
  detail::put<std::uint64_t>(out, cfg.embed_dim);
  detail::put<std::uint64_t>(out, cfg.interact_dim);
  detail::put<std::uint64_t>(out, cfg.hidden_dim);
  detail::put<std::uint8_t>(out, cfg.bidirectional ? 1 : 0);
  detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(cfg.loss));
  detail::put<std::uint8_t>(out, train_state != nullptr ? 1 : 0);
  detail::put_arrays(out, params);
  if (train_state != nullptr) {
    detail::put<double>(out, train_state->opt.lr);
    detail::put<double>(out, train_state->opt.eps);
    detail::put<std::uint64_t>(out, train_state->next_epoch);
    detail::put<std::uint64_t>(out, train_state->best_epoch);
    detail::put<std::uint64_t>(out, train_state->stale_epochs);
    detail::put<double>(out, train_state->best_val);
    detail::put<std::uint8_t>(out, train_state->has_best ? 1 : 0);
    detail::put_arrays(out, train_state->opt.accum);
    if (train_state->has_best) detail::put_arrays(out, train_state->best);
  }
  if (!out) throw FileError("write failed on checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0) {
    throw ParseError("'" + path + "' is not a checkpoint (bad magic)");
  }
  const auto version = detail::take<std::uint32_t>(in, "version");
  if (version != detail::kCheckpointVersion) {
    throw VersionError("checkpoint '" + path + "' has unsupported version " +
                       std::to_string(version));
  }
  ModelConfig cfg;
  cfg.vocab_size = detail::take<std::uint64_t>(in, "vocab_size");
  cfg.embed_dim = detail::take<std::uint64_t>(in, "embed_dim");
  cfg.interact_dim = detail::take<std::uint64_t>(in, "interact_dim");
  cfg.hidden_dim = detail::take<std::uint64_t>(in, "hidden_dim");
  cfg.bidirectional = detail::take<std::uint8_t>(in, "bidirectional") != 0;
  const auto loss_tag = detail::take<std::uint8_t>(in, "loss");
  if (loss_tag > 2) throw ParseError("checkpoint '" + path + "': bad loss tag");
  cfg.loss = static_cast<LossKind>(loss_tag);
  const bool has_state = detail::take<std::uint8_t>(in, "state flag") != 0;

  Checkpoint ck;
  ck.params = ParamSet::zeros(cfg);
  detail::take_arrays(in, ck.params, "parameters");
  ck.has_train_state = has_state;
  if (has_state) {
    ck.state.params = ck.params;
    ck.state.opt.lr = detail::take<double>(in, "lr");
    ck.state.opt.eps = detail::take<double>(in, "eps");
    ck.state.next_epoch = detail::take<std::uint64_t>(in, "next_epoch");
    ck.state.best_epoch = detail::take<std::uint64_t>(in, "best_epoch");
    ck.state.stale_epochs = detail::take<std::uint64_t>(in, "stale_epochs");
    ck.state.best_val = detail::take<double>(in, "best_val");
    ck.state.has_best = detail::take<std::uint8_t>(in, "has_best") != 0;
    ck.state.opt.accum = ParamSet::zeros(cfg);
    detail::take_arrays(in, ck.state.opt.accum, "optimizer state");
    if (ck.state.has_best) {
      ck.state.best = ParamSet::zeros(cfg);
      detail::take_arrays(in, ck.state.best, "best parameters");
    }
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Heatmaps

inline void write_heatmap_csv(const std::string& path, const Mat& grid) {
  std::ostringstream os;
  for (std::size_t i = 0; i < grid.rows; ++i) {
    for (std::size_t j = 0; j < grid.cols; ++j) {
      if (j > 0) os << ',';
      os << format_double(grid.at(i, j));
    }
    os << '\n';
  }
  write_text_file(path, os.str());
}

inline Mat read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      char* endp = nullptr;
      const double v = std::strtod(cell.c_str(), &endp);
      if (endp == cell.c_str()) {
        throw ParseError("'" + path + "': bad number on line " + std::to_string(lineno));
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError("'" + path + "': ragged row on line " + std::to_string(lineno));
    }
    rows.push_back(std::move(row));
  }
  Mat m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) m.at(i, j) = rows[i][j];
  }
  return m;
}

// Plain (P2) grayscale, min-max normalized to 0..255; a constant grid maps to
// mid-gray 128.
inline void write_heatmap_pgm(const std::string& path, const Mat& grid) {
  if (!all_finite(grid.a)) throw InputError("heatmap grid has non-finite values");
  double lo = grid.a.empty() ? 0.0 : grid.a[0];
  double hi = lo;
  for (double v : grid.a) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::ostringstream os;
  os << "P2\n" << grid.cols << ' ' << grid.rows << "\n255\n";
  for (std::size_t i = 0; i < grid.rows; ++i) {
    for (std::size_t j = 0; j < grid.cols; ++j) {
      int pixel = 128;
      if (hi > lo) {
        pixel = static_cast<int>(std::lround((grid.at(i, j) - lo) / (hi - lo) * 255.0));
      }
      os << pixel << (j + 1 == grid.cols ? "" : " ");
    }
    os << '\n';
  }
  write_text_file(path, os.str());
}

enum class HeatmapFormat { csv, pgm };

inline void emit_heatmap(const Mat& grid, const std::string& path, HeatmapFormat fmt) {
  if (fmt == HeatmapFormat::csv) {
    write_heatmap_csv(path, grid);
  } else {
    write_heatmap_pgm(path, grid);
  }
}

// The hidden dimension with the largest |weight| in the scoring row (first
// output row for classification heads); ties take the lowest index. For
// bidirectional models only the forward block is considered, since that is
// the lattice being visualized.
inline std::size_t select_viz_dimension(const ParamSet& p) {
  const std::size_t d = p.config.hidden_dim;
  std::size_t best = 0;
  double best_mag = -1.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double mag = std::abs(p.score_W.at(0, k));
    if (mag > best_mag) {
      best_mag = mag;
      best = k;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Datasets: line-delimited JSON with a self-describing header record.

struct DatasetHeader {
  std::size_t vocab_size = 0;
  std::string normalization = "none";
  std::uint64_t seed = 0;
  std::string task;  // regression | ranking | classification
};

struct Dataset {
  DatasetHeader header;
  std::vector<TrainInstance> instances;
};

namespace detail {

inline json ids_to_json(const TokenSeq& s) {
  json a = json::array();
  for (auto id : s.ids) a.push_back(id);
  return a;
}

inline TokenSeq ids_from_json(const json& a, std::size_t vocab_size, std::size_t lineno) {
  if (!a.is_array() || a.empty()) {
    throw ParseError("dataset line " + std::to_string(lineno) +
                     ": token sequence must be a non-empty array");
  }
  TokenSeq s;
  s.ids.reserve(a.size());
  for (const auto& v : a) {
    if (!v.is_number_integer()) {
      throw ParseError("dataset line " + std::to_string(lineno) + ": non-integer token id");
    }
    const auto id = v.get<std::int64_t>();
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw InputError("dataset line " + std::to_string(lineno) + ": token id " +
                       std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(vocab_size));
    }
    s.ids.push_back(static_cast<std::int32_t>(id));
  }
  return s;
}

}  // namespace detail

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ostringstream os;
  json header = {{"kind", "header"},
                 {"vocab_size", ds.header.vocab_size},
                 {"normalization", ds.header.normalization},
                 {"seed", ds.header.seed},
                 {"task", ds.header.task}};
  os << header.dump() << '\n';
  for (const auto& inst : ds.instances) {
    json rec;
    switch (inst.kind) {
      case TrainInstance::Kind::regression:
        rec = {{"kind", "regression"},
               {"s1", detail::ids_to_json(inst.s1)},
               {"s2", detail::ids_to_json(inst.s2)},
               {"y", inst.y}};
        break;
      case TrainInstance::Kind::ranking:
        rec = {{"kind", "ranking"},
               {"s1", detail::ids_to_json(inst.s1)},
               {"s2", detail::ids_to_json(inst.s2)},
               {"s2_neg", detail::ids_to_json(inst.s2_neg)}};
        break;
      case TrainInstance::Kind::classification:
        rec = {{"kind", "classification"},
               {"s1", detail::ids_to_json(inst.s1)},
               {"s2", detail::ids_to_json(inst.s2)},
               {"label", inst.label}};
        break;
    }
    os << rec.dump() << '\n';
  }
  write_text_file(path, os.str());
}

inline Dataset load_dataset(const std::string& path,
                            std::optional<std::size_t> expected_vocab = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open dataset '" + path + "'");
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("dataset '" + path + "' line " + std::to_string(lineno) + ": " +
                       e.what());
    }
    const std::string kind = rec.value("kind", "");
    if (!have_header) {
      if (kind != "header") {
        throw ParseError("dataset '" + path + "': first record must be the header");
      }
      ds.header.vocab_size = rec.at("vocab_size").get<std::size_t>();
      ds.header.normalization = rec.value("normalization", "none");
      ds.header.seed = rec.value("seed", std::uint64_t{0});
      ds.header.task = rec.value("task", "");
      if (expected_vocab.has_value() && *expected_vocab != ds.header.vocab_size) {
        throw InputError("dataset '" + path + "' was written for vocabulary size " +
                         std::to_string(ds.header.vocab_size) + ", expected " +
                         std::to_string(*expected_vocab));
      }
      have_header = true;
      continue;
    }
    TrainInstance inst;
    if (kind == "regression") {
      inst.kind = TrainInstance::Kind::regression;
      inst.s1 = detail::ids_from_json(rec.at("s1"), ds.header.vocab_size, lineno);
      inst.s2 = detail::ids_from_json(rec.at("s2"), ds.header.vocab_size, lineno);
      inst.y = rec.at("y").get<double>();
      if (!std::isfinite(inst.y)) {
        throw InputError("dataset line " + std::to_string(lineno) + ": non-finite label");
      }
    } else if (kind == "ranking") {
      inst.kind = TrainInstance::Kind::ranking;
      inst.s1 = detail::ids_from_json(rec.at("s1"), ds.header.vocab_size, lineno);
      inst.s2 = detail::ids_from_json(rec.at("s2"), ds.header.vocab_size, lineno);
      inst.s2_neg = detail::ids_from_json(rec.at("s2_neg"), ds.header.vocab_size, lineno);
    } else if (kind == "classification") {
      inst.kind = TrainInstance::Kind::classification;
      inst.s1 = detail::ids_from_json(rec.at("s1"), ds.header.vocab_size, lineno);
      inst.s2 = detail::ids_from_json(rec.at("s2"), ds.header.vocab_size, lineno);
      inst.label = rec.at("label").get<int>();
      if (inst.label != 0 && inst.label != 1) {
        throw InputError("dataset line " + std::to_string(lineno) + ": label must be 0 or 1");
      }
    } else {
      throw ParseError("dataset '" + path + "' line " + std::to_string(lineno) +
                       ": unknown record kind '" + kind + "'");
    }
    ds.instances.push_back(std::move(inst));
  }
  if (!have_header) throw ParseError("dataset '" + path + "' is empty or has no header");
  return ds;
}

// ---------------------------------------------------------------------------
// Training history and paths as CSV

inline void write_history_csv(const std::string& path, const std::vector<EpochRow>& rows,
                              bool append = false) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw FileError("cannot open history file '" + path + "'");
  if (!append) out << "epoch,train_loss,val_metric,wall_seconds\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_metric)
        << ',' << format_double(r.wall_seconds) << '\n';
  }
}

// Position list from (m,n) down to the boundary; `move` is the step taken
// from that position (empty on the terminal row).
inline void write_path_csv(const std::string& path, const MatchPath& p) {
  std::ostringstream os;
  os << "i,j,move\n";
  for (std::size_t k = 0; k < p.positions.size(); ++k) {
    os << p.positions[k].first << ',' << p.positions[k].second << ','
       << (k < p.moves.size() ? to_string(p.moves[k]) : "") << '\n';
  }
  write_text_file(path, os.str());
}

// Per-cell update gates at one dimension (or averaged across dimensions).
inline void write_gates_csv(const std::string& path, const LatticeState& st,
                            const DimSelect& sel) {
  std::ostringstream os;
  os << "i,j,z_i,z_l,z_t,z_d\n";
  for (std::size_t i = 1; i <= st.m; ++i) {
    for (std::size_t j = 1; j <= st.n; ++j) {
      const GateRecord& g = st.gate_at(i, j);
      os << i << ',' << j << ',' << format_double(detail::gate_value(g.z_i, sel)) << ','
         << format_double(detail::gate_value(g.z_l, sel)) << ','
         << format_double(detail::gate_value(g.z_t, sel)) << ','
         << format_double(detail::gate_value(g.z_d, sel)) << '\n';
    }
  }
  write_text_file(path, os.str());
}

// Lattice values at one dimension as a full (m+1) x (n+1) grid including the
// zero boundary.
inline Mat lattice_grid(const LatticeState& st, std::size_t dim) {
  Mat grid(st.m + 1, st.n + 1);
  for (std::size_t i = 0; i <= st.m; ++i) {
    for (std::size_t j = 0; j <= st.n; ++j) grid.at(i, j) = st.h_at(i, j)[dim];
  }
  return grid;
}

}  // namespace msrnn
