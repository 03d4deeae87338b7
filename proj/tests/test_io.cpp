#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "msrnn/io.hpp"
#include "test_util.hpp"

using namespace msrnn;
namespace fs = std::filesystem;

namespace {

// fresh scratch directory per test case
struct TempDir {
  fs::path dir;
  TempDir() {
    static int counter = 0;
    dir = fs::temp_directory_path() / ("msrnn_test_" + std::to_string(::getpid()) + "_" +
                                       std::to_string(counter++));
    fs::create_directories(dir);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

ModelConfig small_config(bool bidir = false) {
  ModelConfig cfg;
  cfg.vocab_size = 5;
  cfg.embed_dim = 3;
  cfg.interact_dim = 2;
  cfg.hidden_dim = 2;
  cfg.bidirectional = bidir;
  return cfg;
}

bool same_params(const ParamSet& a, const ParamSet& b) {
  auto aa = named_arrays(static_cast<const ParamSet&>(a));
  auto bb = named_arrays(static_cast<const ParamSet&>(b));
  if (aa.size() != bb.size()) return false;
  for (std::size_t i = 0; i < aa.size(); ++i) {
    if (aa[i].name != bb[i].name || *aa[i].data != *bb[i].data) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("embedding loader", "[io]") {
  TempDir tmp;
  const std::vector<std::string> vocab{"cat", "dog", "fish"};

  SECTION("all tokens present") {
    write_text_file(tmp.path("emb.txt"),
                    "3 3\ncat 1 2 3\ndog 4 5 6\nfish 7 8 9\n");
    const auto res = load_embeddings(tmp.path("emb.txt"), vocab, 0.1, 1);
    REQUIRE(res.missing == 0);
    REQUIRE(res.embed.rows == 3);
    REQUIRE(res.embed.cols == 3);
    REQUIRE(res.embed.at(1, 0) == 4.0);
    REQUIRE(res.embed.at(2, 2) == 9.0);
  }
  SECTION("empty overlap falls back to random rows") {
    write_text_file(tmp.path("emb.txt"), "bird 1 2\nsnake 3 4\n");
    const auto res = load_embeddings(tmp.path("emb.txt"), vocab, 0.1, 1);
    REQUIRE(res.missing == vocab.size());
    for (std::size_t r = 0; r < res.embed.rows; ++r) {
      for (std::size_t c = 0; c < res.embed.cols; ++c) {
        REQUIRE(std::abs(res.embed.at(r, c)) <= 0.1);
      }
    }
  }
  SECTION("duplicate token: last occurrence wins") {
    write_text_file(tmp.path("emb.txt"), "cat 1 1\ncat 2 2\ndog 3 3\nfish 4 4\n");
    const auto res = load_embeddings(tmp.path("emb.txt"), vocab, 0.1, 1);
    REQUIRE(res.duplicates == 1);
    REQUIRE(res.embed.at(0, 0) == 2.0);
  }
  SECTION("inconsistent dimension is refused") {
    write_text_file(tmp.path("emb.txt"), "cat 1 2 3\ndog 4 5\n");
    REQUIRE_THROWS_AS(load_embeddings(tmp.path("emb.txt"), vocab, 0.1, 1), InputError);
  }
  SECTION("malformed line carries the line number") {
    write_text_file(tmp.path("emb.txt"), "cat 1 2\njunk\n");
    try {
      load_embeddings(tmp.path("emb.txt"), vocab, 0.1, 1);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
}

TEST_CASE("checkpoint round trip", "[io]") {
  TempDir tmp;
  const ModelConfig cfg = small_config(true);
  const ParamSet p = init_params(cfg, 0.2, 123);

  SECTION("parameters only, bitwise") {
    save_checkpoint(tmp.path("ck.msrnn"), p);
    const Checkpoint ck = load_checkpoint(tmp.path("ck.msrnn"));
    REQUIRE(same_params(p, ck.params));
    REQUIRE(ck.params.config.bidirectional);
    REQUIRE_FALSE(ck.has_train_state);
  }

  SECTION("with optimizer state") {
    TrainState st;
    st.params = p;
    st.opt = AdaGradState::init(p, 0.07, 1e-9);
    st.opt.accum.score_b[0] = 4.25;
    st.next_epoch = 3;
    st.best_epoch = 2;
    st.best_val = 0.125;
    st.stale_epochs = 1;
    st.has_best = true;
    st.best = init_params(cfg, 0.2, 456);
    save_checkpoint(tmp.path("ck.msrnn"), p, &st);
    const Checkpoint ck = load_checkpoint(tmp.path("ck.msrnn"));
    REQUIRE(ck.has_train_state);
    REQUIRE(ck.state.opt.lr == 0.07);
    REQUIRE(ck.state.opt.eps == 1e-9);
    REQUIRE(ck.state.opt.accum.score_b[0] == 4.25);
    REQUIRE(ck.state.next_epoch == 3);
    REQUIRE(ck.state.best_val == 0.125);
    REQUIRE(same_params(ck.state.best, st.best));
  }

  SECTION("corrupt magic") {
    save_checkpoint(tmp.path("ck.msrnn"), p);
    auto bytes = read_text_file(tmp.path("ck.msrnn"));
    bytes[0] = 'X';
    write_text_file(tmp.path("ck.msrnn"), bytes);
    REQUIRE_THROWS_AS(load_checkpoint(tmp.path("ck.msrnn")), ParseError);
  }

  SECTION("unsupported version") {
    save_checkpoint(tmp.path("ck.msrnn"), p);
    auto bytes = read_text_file(tmp.path("ck.msrnn"));
    bytes[8] = 99;  // version field follows the 8-byte magic
    write_text_file(tmp.path("ck.msrnn"), bytes);
    REQUIRE_THROWS_AS(load_checkpoint(tmp.path("ck.msrnn")), VersionError);
  }

  SECTION("truncated file") {
    save_checkpoint(tmp.path("ck.msrnn"), p);
    auto bytes = read_text_file(tmp.path("ck.msrnn"));
    bytes.resize(bytes.size() / 2);
    write_text_file(tmp.path("ck.msrnn"), bytes);
    REQUIRE_THROWS_AS(load_checkpoint(tmp.path("ck.msrnn")), ParseError);
  }
}

TEST_CASE("resume from checkpoint continues the exact trajectory", "[io]") {
  TempDir tmp;
  TrainConfig tc;
  tc.model = small_config();
  tc.model.vocab_size = 6;
  tc.batch_size = 2;
  tc.lr = 0.2;
  tc.max_epochs = 5;
  tc.seed = 91;

  std::vector<TrainInstance> data;
  Rng rng(92);
  for (int k = 0; k < 6; ++k) {
    TrainInstance inst;
    inst.s1 = test_util::random_seq(rng, 3, tc.model.vocab_size);
    inst.s2 = test_util::random_seq(rng, 3, tc.model.vocab_size);
    inst.y = rng.uniform(0.0, 1.0);
    data.push_back(inst);
  }

  // uninterrupted run
  const TrainResult full = train_loop(data, {}, tc);

  // stop after two epochs, persist, reload, continue
  TrainConfig tc_head = tc;
  tc_head.max_epochs = 2;
  TrainResult head = train_loop(data, {}, tc_head);
  save_checkpoint(tmp.path("last.msrnn"), head.final_state.params, &head.final_state);
  Checkpoint ck = load_checkpoint(tmp.path("last.msrnn"));
  REQUIRE(ck.has_train_state);
  const TrainResult tail = train_loop(data, {}, tc, std::move(ck.state));

  REQUIRE(same_params(full.final_state.params, tail.final_state.params));
  REQUIRE(full.best_epoch == tail.best_epoch);
  REQUIRE(head.history.size() + tail.history.size() == full.history.size());
  for (std::size_t k = 0; k < tail.history.size(); ++k) {
    const auto& a = full.history[head.history.size() + k];
    const auto& b = tail.history[k];
    REQUIRE(a.epoch == b.epoch);
    REQUIRE(a.train_loss == b.train_loss);
    REQUIRE(a.val_metric == b.val_metric);
  }
}

TEST_CASE("heatmap emission", "[io]") {
  TempDir tmp;
  SECTION("min-max extremes") {
    Mat grid(2, 2);
    grid.at(0, 0) = 0.0; grid.at(0, 1) = 1.0;
    grid.at(1, 0) = 1.0; grid.at(1, 1) = 0.0;
    emit_heatmap(grid, tmp.path("g.pgm"), HeatmapFormat::pgm);
    const std::string pgm = read_text_file(tmp.path("g.pgm"));
    REQUIRE(pgm == "P2\n2 2\n255\n0 255\n255 0\n");
  }
  SECTION("constant grid maps to mid-gray") {
    Mat grid(1, 3);
    grid.at(0, 0) = grid.at(0, 1) = grid.at(0, 2) = 7.5;
    emit_heatmap(grid, tmp.path("g.pgm"), HeatmapFormat::pgm);
    REQUIRE(read_text_file(tmp.path("g.pgm")) == "P2\n3 1\n255\n128 128 128\n");
  }
  SECTION("csv round trip") {
    Rng rng(5);
    Mat grid(3, 4);
    for (double& x : grid.a) x = rng.uniform(-2.0, 2.0);
    emit_heatmap(grid, tmp.path("g.csv"), HeatmapFormat::csv);
    const Mat back = read_matrix_csv(tmp.path("g.csv"));
    REQUIRE(back.rows == grid.rows);
    REQUIRE(back.cols == grid.cols);
    for (std::size_t k = 0; k < grid.a.size(); ++k) {
      REQUIRE(back.a[k] == Catch::Approx(grid.a[k]).margin(1e-12));
    }
  }
}

TEST_CASE("viz dimension selection", "[io]") {
  ModelConfig cfg = small_config();
  cfg.hidden_dim = 3;
  ParamSet p = ParamSet::zeros(cfg);

  p.score_W.at(0, 0) = 0.1;
  p.score_W.at(0, 1) = -0.9;
  p.score_W.at(0, 2) = 0.3;
  REQUIRE(select_viz_dimension(p) == 1);

  std::fill(p.score_W.a.begin(), p.score_W.a.end(), 0.25);
  REQUIRE(select_viz_dimension(p) == 0);  // tie takes the lowest index

  std::fill(p.score_W.a.begin(), p.score_W.a.end(), 0.0);
  p.score_W.at(0, 2) = 1.0;
  REQUIRE(select_viz_dimension(p) == 2);
}

TEST_CASE("dataset files", "[io]") {
  TempDir tmp;
  Dataset ds;
  ds.header.vocab_size = 10;
  ds.header.normalization = "lcs / max(m, n)";
  ds.header.seed = 7;
  ds.header.task = "regression";
  Rng rng(8);
  for (int k = 0; k < 5; ++k) {
    TrainInstance inst;
    inst.kind = TrainInstance::Kind::regression;
    inst.s1 = test_util::random_seq(rng, 4, 10);
    inst.s2 = test_util::random_seq(rng, 6, 10);
    inst.y = rng.next_unit();
    ds.instances.push_back(inst);
  }
  {
    TrainInstance inst;
    inst.kind = TrainInstance::Kind::ranking;
    inst.s1 = test_util::random_seq(rng, 4, 10);
    inst.s2 = test_util::random_seq(rng, 5, 10);
    inst.s2_neg = test_util::random_seq(rng, 5, 10);
    ds.instances.push_back(inst);
  }

  SECTION("round trip") {
    save_dataset(tmp.path("d.jsonl"), ds);
    const Dataset back = load_dataset(tmp.path("d.jsonl"));
    REQUIRE(back.header.vocab_size == ds.header.vocab_size);
    REQUIRE(back.header.normalization == ds.header.normalization);
    REQUIRE(back.instances.size() == ds.instances.size());
    for (std::size_t k = 0; k < ds.instances.size(); ++k) {
      REQUIRE(back.instances[k].kind == ds.instances[k].kind);
      REQUIRE(back.instances[k].s1.ids == ds.instances[k].s1.ids);
      REQUIRE(back.instances[k].s2.ids == ds.instances[k].s2.ids);
      REQUIRE(back.instances[k].y == ds.instances[k].y);
    }
  }
  SECTION("vocabulary mismatch fails loudly") {
    save_dataset(tmp.path("d.jsonl"), ds);
    REQUIRE_THROWS_AS(load_dataset(tmp.path("d.jsonl"), 26), InputError);
  }
  SECTION("id outside the declared vocabulary fails loudly") {
    write_text_file(tmp.path("d.jsonl"),
                    "{\"kind\":\"header\",\"vocab_size\":3}\n"
                    "{\"kind\":\"regression\",\"s1\":[0,7],\"s2\":[1],\"y\":0.5}\n");
    REQUIRE_THROWS_AS(load_dataset(tmp.path("d.jsonl")), InputError);
  }
  SECTION("missing header is refused") {
    write_text_file(tmp.path("d.jsonl"),
                    "{\"kind\":\"regression\",\"s1\":[0],\"s2\":[1],\"y\":0.5}\n");
    REQUIRE_THROWS_AS(load_dataset(tmp.path("d.jsonl")), ParseError);
  }
}

TEST_CASE("path csv", "[io]") {
  TempDir tmp;
  MatchPath p;
  p.m = 2; p.n = 2;
  p.positions = {{2, 2}, {1, 1}, {0, 1}};
  p.moves = {Move::diagonal, Move::top};
  write_path_csv(tmp.path("p.csv"), p);
  REQUIRE(read_text_file(tmp.path("p.csv")) ==
          "i,j,move\n2,2,diagonal\n1,1,top\n0,1,\n");
}
