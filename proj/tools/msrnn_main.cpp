// Command-line driver: every experiment is a subcommand with a flat
// key=value config file and flag overrides.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "msrnn/commands.hpp"

namespace {

void add_config(CLI::App* sub) {
  sub->add_option("--config", "flat key=value config file; flags take precedence");
}

// Flat key=value lines; keys are the long option names without the leading
// dashes. Values apply only where no command-line flag was given.
void apply_config_file(CLI::App* sub) {
  auto* copt = sub->get_option_no_throw("--config");
  if (copt == nullptr || copt->count() == 0) return;
  const std::string path = copt->as<std::string>();
  std::ifstream in(path);
  if (!in) throw msrnn::FileError("cannot open config file '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw msrnn::ParseError("config file '" + path + "' line " + std::to_string(lineno) +
                              ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr) {
      throw msrnn::InputError("config file '" + path + "' line " + std::to_string(lineno) +
                              ": unknown key '" + key + "'");
    }
    if (opt->count() > 0) continue;  // explicit flag wins
    opt->add_result(value);
    opt->run_callback();
  }
}

void require_set(const std::string& value, const char* what) {
  if (value.empty()) {
    throw msrnn::InputError(std::string("missing required option ") + what);
  }
}

// --dims d_e,c,d
void apply_dims(const std::vector<std::size_t>& dims, msrnn::ModelConfig& mc) {
  if (dims.empty()) return;
  if (dims.size() != 3) {
    throw msrnn::InputError("--dims expects three comma-separated values: d_e,c,d");
  }
  mc.embed_dim = dims[0];
  mc.interact_dim = dims[1];
  mc.hidden_dim = dims[2];
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatial-recurrence semantic matcher"};
  app.require_subcommand(1);

  // gradcheck ---------------------------------------------------------------
  msrnn::GradcheckConfig gc;
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "verify analytic gradients against central finite differences");
  add_config(gradcheck);
  gradcheck->add_option("--instances", gc.instances, "random instances to check");
  gradcheck->add_option("--eps", gc.eps, "finite-difference step");
  gradcheck->add_option("--tolerance", gc.tolerance, "max relative error accepted");
  gradcheck->add_option("--seed", gc.seed, "seed");
  gradcheck->add_option("--out-dir", gc.out_dir, "report/manifest directory (optional)");
  gradcheck->add_flag("--corrupt", gc.corrupt_analytic,
                      "deliberately corrupt one analytic gradient (negative control)");

  // simulate-lcs ------------------------------------------------------------
  msrnn::SimulateConfig sim;
  std::vector<std::size_t> sim_dims;
  auto* simulate = app.add_subcommand(
      "simulate-lcs", "train on synthetic pairs labeled with normalized LCS length");
  add_config(simulate);
  simulate->add_option("--seed", sim.gen.seed, "seed");
  simulate->add_option("--n-train", sim.gen.n_train, "training pairs");
  simulate->add_option("--n-test", sim.gen.n_test, "test pairs");
  simulate->add_option("--n-val", sim.n_val, "validation pairs carved from train");
  simulate->add_option("--len-min", sim.gen.len_min, "min sequence length");
  simulate->add_option("--len-max", sim.gen.len_max, "max sequence length");
  simulate->add_option("--alphabet", sim.gen.alphabet, "alphabet size");
  simulate->add_option("--dims", sim_dims, "d_e,c,d")->delimiter(',');
  simulate->add_flag("--bidirectional", sim.bidirectional, "two-direction scan");
  simulate->add_option("--batch-size", sim.batch_size, "mini-batch size");
  simulate->add_option("--lr", sim.lr, "AdaGrad initial learning rate");
  simulate->add_option("--init-scale", sim.init_scale, "uniform init scale");
  simulate->add_option("--max-epochs", sim.max_epochs, "epoch cap");
  simulate->add_option("--patience", sim.patience, "epochs without improvement before stop");
  simulate->add_option("--threads", sim.threads, "batch-gradient worker threads");
  simulate->add_option("--path-pairs", sim.path_pairs, "test pairs for path statistics");
  simulate->add_flag("--exact-mode", sim.exact_mode,
                     "hard-gated indicator mode; no training, oracle equivalence only");
  simulate->add_option("--out-dir", sim.out_dir, "artifact directory");

  // gen-data ----------------------------------------------------------------
  msrnn::GenDataConfig gd;
  auto* gendata = app.add_subcommand("gen-data", "write synthetic datasets as JSONL");
  add_config(gendata);
  gendata->add_option("--task", gd.task, "lcs-regression | ranking | classification");
  gendata->add_option("--seed", gd.gen.seed, "seed");
  gendata->add_option("--n-train", gd.gen.n_train, "train records (queries for ranking)");
  gendata->add_option("--n-val", gd.n_val, "validation records");
  gendata->add_option("--n-test", gd.gen.n_test, "test records");
  gendata->add_option("--len-min", gd.gen.len_min, "min sequence length");
  gendata->add_option("--len-max", gd.gen.len_max, "max sequence length");
  gendata->add_option("--alphabet", gd.gen.alphabet, "alphabet size (doubled for planted tasks)");
  gendata->add_option("--negatives", gd.negatives_per_query, "negatives per ranking query");
  gendata->add_option("--out-dir", gd.out_dir, "dataset directory");

  // train ---------------------------------------------------------------
  msrnn::TrainCmdConfig tcmd;
  std::vector<std::size_t> train_dims;
  std::string train_loss = "square";
  auto* train = app.add_subcommand("train", "train a model on a JSONL dataset");
  add_config(train);
  train->add_option("--data", tcmd.train_path, "training dataset (train.jsonl)");
  train->add_option("--val-data", tcmd.val_path, "validation dataset (valid.jsonl)");
  train->add_option("--resume", tcmd.resume_path, "checkpoint_last.msrnn to continue from");
  train->add_option("--embeddings", tcmd.embeddings_path, "word2vec text embeddings");
  train->add_option("--vocab", tcmd.vocab_path, "vocabulary file, one token per line");
  train->add_option("--dims", train_dims, "d_e,c,d")->delimiter(',');
  train->add_option("--loss", train_loss, "square | hinge | xent");
  train->add_flag("--bidirectional", tcmd.train.model.bidirectional, "two-direction scan");
  train->add_option("--seed", tcmd.train.seed, "seed");
  train->add_option("--batch-size", tcmd.train.batch_size, "mini-batch size");
  train->add_option("--lr", tcmd.train.lr, "AdaGrad initial learning rate");
  train->add_option("--init-scale", tcmd.train.init_scale, "uniform init scale");
  train->add_option("--max-epochs", tcmd.train.max_epochs, "epoch cap");
  train->add_option("--patience", tcmd.train.patience, "early-stopping patience");
  train->add_option("--threads", tcmd.train.threads, "batch-gradient worker threads");
  train->add_flag("--freeze-embeddings", tcmd.train.freeze_embeddings,
                  "do not update embedding rows");
  train->add_option("--out-dir", tcmd.out_dir, "artifact directory");

  // eval ----------------------------------------------------------------
  msrnn::EvalCmdConfig ecmd;
  auto* eval = app.add_subcommand("eval", "score a dataset with a checkpoint");
  add_config(eval);
  eval->add_option("--checkpoint", ecmd.checkpoint_path, "model checkpoint");
  eval->add_option("--data", ecmd.data_path, "JSONL dataset");
  eval->add_option("--task", ecmd.task, "regression | ranking | classification");
  eval->add_option("--out-dir", ecmd.out_dir, "metrics directory (optional)");

  // visualize -------------------------------------------------------------
  msrnn::VizCmdConfig vcmd;
  auto* viz = app.add_subcommand("visualize", "emit lattice heatmap and backtraced path");
  add_config(viz);
  viz->add_option("--checkpoint", vcmd.checkpoint_path, "model checkpoint");
  viz->add_option("--s1", vcmd.s1, "first sequence, letters or ids (e.g. \"A B C D E\")");
  viz->add_option("--s2", vcmd.s2, "second sequence");
  viz->add_flag("--exact-mode", vcmd.exact_mode, "hard-gated indicator lattice");
  viz->add_option("--out-dir", vcmd.out_dir, "artifact directory");

  CLI11_PARSE(app, argc, argv);

  try {
    for (CLI::App* sub : {gradcheck, simulate, gendata, train, eval, viz}) {
      if (sub->parsed()) apply_config_file(sub);
    }
    if (gradcheck->parsed()) {
      auto res = msrnn::run_gradcheck(gc, std::cout);
      return res.passed ? 0 : 2;
    }
    if (simulate->parsed()) {
      require_set(sim.out_dir, "--out-dir");
      if (!sim_dims.empty()) {
        if (sim_dims.size() != 3) {
          throw msrnn::InputError("--dims expects three comma-separated values: d_e,c,d");
        }
        sim.embed_dim = sim_dims[0];
        sim.interact_dim = sim_dims[1];
        sim.hidden_dim = sim_dims[2];
      }
      auto res = msrnn::run_simulate_lcs(sim, std::cout);
      if (sim.exact_mode && (res.exact_grid_mismatches > 0 || res.exact_path_disagreements > 0)) {
        return 2;
      }
      return 0;
    }
    if (gendata->parsed()) {
      require_set(gd.out_dir, "--out-dir");
      msrnn::run_gen_data(gd, std::cout);
      return 0;
    }
    if (train->parsed()) {
      require_set(tcmd.train_path, "--data");
      require_set(tcmd.out_dir, "--out-dir");
      apply_dims(train_dims, tcmd.train.model);
      tcmd.train.model.loss = msrnn::parse_loss(train_loss);
      msrnn::run_train(tcmd, std::cout);
      return 0;
    }
    if (eval->parsed()) {
      require_set(ecmd.checkpoint_path, "--checkpoint");
      require_set(ecmd.data_path, "--data");
      msrnn::run_eval(ecmd, std::cout);
      return 0;
    }
    if (viz->parsed()) {
      require_set(vcmd.s1, "--s1");
      require_set(vcmd.s2, "--s2");
      require_set(vcmd.out_dir, "--out-dir");
      msrnn::run_visualize(vcmd, std::cout);
      return 0;
    }
  } catch (const msrnn::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const msrnn::VersionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const msrnn::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const msrnn::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const msrnn::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const msrnn::FileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
