// Command-line entry point: data generation, training, evaluation,
// prediction, simulation, attribution, and grid search over architectures.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hhp/attribution.hpp"
#include "hhp/checkpoint.hpp"
#include "hhp/jsonl.hpp"
#include "hhp/lhp.hpp"
#include "hhp/predict.hpp"
#include "hhp/synthgen.hpp"
#include "hhp/train.hpp"

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Config file support: a flat JSON object whose keys are long option names.
// Values are applied before flag parsing, so flags always win. Unknown keys
// are rejected.
struct ConfigBinder {
  std::map<std::string, std::function<void(const json&)>> setters;

  template <typename T>
  void bind(const std::string& key, T& target) {
    setters[key] = [&target](const json& v) { target = v.get<T>(); };
  }

  void apply(const std::string& path) const {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    json doc;
    try {
      in >> doc;
    } catch (const std::exception& e) {
      throw UsageError(std::string("config parse error: ") + e.what());
    }
    if (!doc.is_object()) throw UsageError("config must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
      const auto it = setters.find(key);
      if (it == setters.end()) throw UsageError("unknown config key: " + key);
      try {
        it->second(value);
      } catch (const std::exception& e) {
        throw UsageError("config key '" + key + "': " + e.what());
      }
    }
  }
};

// Finds --config <path> / --config=<path> for a two-phase parse.
std::string scan_config_flag(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return {};
}

struct TrainFlags {
  std::string data;
  std::string checkpoint = "model.json";
  int d = 32, h = 8, l = 1, r = 2;
  std::string ablation = "full";
  hhp::TrainConfig cfg;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, ConfigBinder& binder, bool with_dims) {
  cmd->set_help_flag("--help", "print help and exit");
  cmd->add_option("--data", f.data, "training dataset (JSONL)")->required();
  if (with_dims) {
    cmd->add_option("--checkpoint", f.checkpoint, "output checkpoint path");
    cmd->add_option("--d", f.d, "latent dimension (even)");
    cmd->add_option("--h", f.h, "GRU hidden width");
    cmd->add_option("--l", f.l, "GRU layers");
    cmd->add_option("--r", f.r, "rotation blocks in V");
    binder.bind("checkpoint", f.checkpoint);
    binder.bind("d", f.d);
    binder.bind("h", f.h);
    binder.bind("l", f.l);
    binder.bind("r", f.r);
  }
  cmd->add_option("--ablation", f.ablation, "full|not-stateful|not-hyper|not-latent")
      ->check(CLI::IsMember({"full", "not-stateful", "not-hyper", "not-latent"}));
  cmd->add_option("--mc-samples", f.cfg.mc_per_interval, "MC samples per interval");
  cmd->add_option("--lr", f.cfg.lr, "Adam learning rate");
  cmd->add_option("--batch", f.cfg.batch_size, "mini-batch size");
  cmd->add_option("--epochs", f.cfg.max_epochs, "max epochs");
  cmd->add_option("--patience", f.cfg.patience, "early-stop patience (epochs)");
  cmd->add_option("--seed", f.cfg.seed, "random seed");
  binder.bind("data", f.data);
  binder.bind("ablation", f.ablation);
  binder.bind("mc-samples", f.cfg.mc_per_interval);
  binder.bind("lr", f.cfg.lr);
  binder.bind("batch", f.cfg.batch_size);
  binder.bind("epochs", f.cfg.max_epochs);
  binder.bind("patience", f.cfg.patience);
  binder.bind("seed", f.cfg.seed);
}

double empirical_per_mark_rate(const hhp::Dataset& ds) {
  size_t events = 0;
  double total_time = 0.0;
  for (const auto& s : ds.sequences) {
    events += s.events.size();
    total_time += s.t_end;
  }
  if (total_time <= 0.0) return 1e-3;
  return std::max(1e-6, static_cast<double>(events) /
                            (total_time * static_cast<double>(ds.num_marks)));
}

void write_history_csv(const std::string& path, const hhp::TrainResult& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write history: " + path);
  out.precision(17);
  out << "epoch,train_ll,val_ll,wallclock_s\n";
  for (const auto& e : r.history) {
    out << e.epoch << "," << e.train_ll << "," << e.val_ll << "," << e.wallclock_s << "\n";
  }
}

ordered_json metrics_json(const hhp::MetricsReport& m) {
  ordered_json doc;
  doc["ll_total"] = m.ll_total;
  doc["ll_time"] = m.ll_time;
  doc["ll_mark"] = m.ll_mark;
  doc["rmse"] = m.rmse;
  doc["accuracy"] = m.accuracy;
  doc["pce"] = m.pce;
  doc["ece"] = m.ece;
  doc["n_events"] = m.n_events;
  return doc;
}

int run(int argc, char** argv) {
  CLI::App app{"hyper Hawkes process toolkit"};
  app.require_subcommand(1);
  // --h is the GRU width flag, so help has no short alias.
  app.set_help_flag("--help", "print help and exit");

  // ---- gen ----
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  struct {
    std::string scenario = "trigger-memory";
    int n = 100;
    uint64_t seed = 0;
    std::string out = "data.jsonl";
    std::string config;
  } g;
  ConfigBinder gen_binder;
  gen->add_option("--scenario", g.scenario, "trigger-memory|call-response")
      ->check(CLI::IsMember({"trigger-memory", "call-response"}));
  gen->add_option("--n", g.n, "number of sequences")->required();
  gen->add_option("--seed", g.seed, "random seed");
  gen->add_option("--out", g.out, "output JSONL path")->required();
  gen->add_option("--config", g.config, "JSON config file");
  gen_binder.bind("scenario", g.scenario);
  gen_binder.bind("n", g.n);
  gen_binder.bind("seed", g.seed);
  gen_binder.bind("out", g.out);
  gen->callback([&] {
    hhp::Dataset ds;
    if (g.scenario == "trigger-memory") {
      hhp::TriggerMemoryConfig cfg;
      cfg.n_sequences = g.n;
      cfg.seed = g.seed;
      ds = hhp::gen_trigger_memory(cfg);
    } else {
      hhp::CallResponseConfig cfg;
      cfg.n_sequences = g.n;
      cfg.seed = g.seed;
      ds = hhp::gen_call_response(cfg);
    }
    hhp::save_dataset(g.out, ds);
    std::cout << "wrote " << ds.sequences.size() << " sequences to " << g.out << "\n";
  });

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "fit an HHP model (70/15/15 split by seed)");
  TrainFlags tf;
  std::string train_config;
  ConfigBinder train_binder;
  add_train_flags(train_cmd, tf, train_binder, /*with_dims=*/true);
  train_cmd->add_option("--config", train_config, "JSON config file");
  train_cmd->callback([&] {
    const hhp::Dataset ds = hhp::load_dataset(tf.data);
    const auto splits = hhp::split_dataset(ds, {0.7, 0.15, 0.15}, tf.cfg.seed);
    hhp::HhpDims dims{tf.d, tf.h, tf.l, tf.r, ds.num_marks};
    if (tf.ablation == "not-latent") dims.d = ds.num_marks;
    hhp::HhpModel model =
        hhp::HhpModel::create(dims, hhp::ablation_from_string(tf.ablation), tf.cfg.seed);
    model.init_mu_for_rate(empirical_per_mark_rate(splits[0]));
    hhp::TrainResult result = hhp::train(model, splits[0], splits[1], tf.cfg);
    double test_ll = std::numeric_limits<double>::quiet_NaN();
    if (!splits[2].sequences.empty()) {
      test_ll =
          hhp::mean_log_likelihood(model, splits[2], tf.cfg.mc_per_interval, tf.cfg.seed + 1);
    }
    hhp::save_checkpoint(tf.checkpoint, model);
    write_history_csv(tf.checkpoint + ".history.csv", result);
    std::cout << "checkpoint: " << tf.checkpoint << "\n"
              << "parameters: " << model.params().scalar_count() << "\n"
              << "best epoch: " << result.best_epoch << " (val_ll " << result.best_val_ll << ")\n"
              << "test_ll: " << test_ll << "\n";
  });

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  struct {
    std::string data, checkpoint, out, config;
    hhp::EvalConfig cfg;
  } ev;
  ConfigBinder eval_binder;
  eval_cmd->add_option("--data", ev.data, "dataset (JSONL)")->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--mc-samples", ev.cfg.mc_per_interval, "MC samples per interval");
  eval_cmd->add_option("--seed", ev.cfg.seed, "random seed");
  eval_cmd->add_option("--out", ev.out, "write metrics JSON here");
  eval_cmd->add_option("--config", ev.config, "JSON config file");
  eval_binder.bind("data", ev.data);
  eval_binder.bind("checkpoint", ev.checkpoint);
  eval_binder.bind("mc-samples", ev.cfg.mc_per_interval);
  eval_binder.bind("seed", ev.cfg.seed);
  eval_binder.bind("out", ev.out);
  eval_cmd->callback([&] {
    const hhp::Dataset ds = hhp::load_dataset(ev.data);
    const hhp::HhpModel model = hhp::load_checkpoint(ev.checkpoint);
    const hhp::MetricsReport m = hhp::evaluate(model, ds, ev.cfg);
    const ordered_json doc = metrics_json(m);
    std::cout << doc.dump(2) << "\n";
    if (!ev.out.empty()) {
      std::ofstream out(ev.out);
      if (!out) throw std::runtime_error("cannot write metrics: " + ev.out);
      out << doc.dump(2) << "\n";
    }
  });

  // ---- predict ----
  auto* pred_cmd = app.add_subcommand("predict", "next event time/mark per event");
  struct {
    std::string data, checkpoint, out = "predictions.csv", config;
  } pr;
  ConfigBinder pred_binder;
  pred_cmd->add_option("--data", pr.data, "dataset (JSONL)")->required();
  pred_cmd->add_option("--checkpoint", pr.checkpoint, "model checkpoint")->required();
  pred_cmd->add_option("--out", pr.out, "output CSV path");
  pred_cmd->add_option("--config", pr.config, "JSON config file");
  pred_binder.bind("data", pr.data);
  pred_binder.bind("checkpoint", pr.checkpoint);
  pred_binder.bind("out", pr.out);
  pred_cmd->callback([&] {
    const hhp::Dataset ds = hhp::load_dataset(pr.data);
    const hhp::HhpModel model = hhp::load_checkpoint(pr.checkpoint);
    std::ofstream out(pr.out);
    if (!out) throw std::runtime_error("cannot write predictions: " + pr.out);
    out.precision(17);
    out << "sequence,event,actual_dt,predicted_dt,truncated,actual_mark,predicted_mark\n";
    for (size_t si = 0; si < ds.sequences.size(); ++si) {
      const hhp::Sequence& seq = ds.sequences[si];
      const hhp::SequenceTrace trace = hhp::trace_sequence(model, seq);
      double t_prev = 0.0;
      for (size_t i = 0; i < seq.events.size(); ++i) {
        const hhp::TimePrediction tp = hhp::predict_next_time(model, trace, seq, i);
        const int mark = hhp::predict_next_mark(model, trace, seq, i, seq.events[i].t);
        out << si << "," << i << "," << (seq.events[i].t - t_prev) << "," << tp.dt << ","
            << (tp.truncated ? 1 : 0) << "," << seq.events[i].mark << "," << mark << "\n";
        t_prev = seq.events[i].t;
      }
    }
    std::cout << "wrote " << pr.out << "\n";
  });

  // ---- simulate ----
  auto* sim_cmd = app.add_subcommand("simulate", "thinning simulation to JSONL");
  struct {
    std::string checkpoint, out = "simulated.jsonl", config;
    int n = 1;
    uint64_t seed = 0;
    double t_end = 100.0;
  } sm;
  ConfigBinder sim_binder;
  sim_cmd->add_option("--checkpoint", sm.checkpoint, "model checkpoint (hhp or lhp)")->required();
  sim_cmd->add_option("--n", sm.n, "number of sequences");
  sim_cmd->add_option("--seed", sm.seed, "random seed");
  sim_cmd->add_option("--t-end", sm.t_end, "simulation horizon");
  sim_cmd->add_option("--out", sm.out, "output JSONL path");
  sim_cmd->add_option("--config", sm.config, "JSON config file");
  sim_binder.bind("checkpoint", sm.checkpoint);
  sim_binder.bind("n", sm.n);
  sim_binder.bind("seed", sm.seed);
  sim_binder.bind("t-end", sm.t_end);
  sim_binder.bind("out", sm.out);
  sim_cmd->callback([&] {
    hhp::Dataset ds;
    if (hhp::checkpoint_kind(sm.checkpoint) == "lhp") {
      const hhp::LhpParams p = hhp::load_lhp(sm.checkpoint);
      ds.num_marks = p.num_marks;
      for (int i = 0; i < sm.n; ++i) {
        hhp::Rng rng(sm.seed, {uint64_t{0x51}, static_cast<uint64_t>(i)});
        ds.sequences.push_back(hhp::lhp_simulate(p, sm.t_end, rng));
      }
    } else {
      const hhp::HhpModel model = hhp::load_checkpoint(sm.checkpoint);
      ds.num_marks = model.dims().num_marks;
      for (int i = 0; i < sm.n; ++i) {
        hhp::Rng rng(sm.seed, {uint64_t{0x51}, static_cast<uint64_t>(i)});
        ds.sequences.push_back(hhp::simulate(model, sm.t_end, rng));
      }
    }
    hhp::save_dataset(sm.out, ds);
    std::cout << "wrote " << ds.sequences.size() << " sequences to " << sm.out << "\n";
  });

  // ---- attribute ----
  auto* attr_cmd = app.add_subcommand("attribute", "per-event attribution report (CSV)");
  struct {
    std::string checkpoint, data, out = "attribution", config;
    int sequence = 0;
    int grid = 50;
  } at;
  ConfigBinder attr_binder;
  attr_cmd->add_option("--checkpoint", at.checkpoint, "model checkpoint")->required();
  attr_cmd->add_option("--data", at.data, "dataset (JSONL)")->required();
  attr_cmd->add_option("--sequence", at.sequence, "sequence index to attribute");
  attr_cmd->add_option("--grid", at.grid, "integration grid points per interval");
  attr_cmd->add_option("--out", at.out, "output directory");
  attr_cmd->add_option("--config", at.config, "JSON config file");
  attr_binder.bind("checkpoint", at.checkpoint);
  attr_binder.bind("data", at.data);
  attr_binder.bind("sequence", at.sequence);
  attr_binder.bind("grid", at.grid);
  attr_binder.bind("out", at.out);
  attr_cmd->callback([&] {
    const hhp::Dataset ds = hhp::load_dataset(at.data);
    if (at.sequence < 0 || static_cast<size_t>(at.sequence) >= ds.sequences.size()) {
      throw std::runtime_error("sequence index out of range");
    }
    const hhp::HhpModel model = hhp::load_checkpoint(at.checkpoint);
    const hhp::Sequence& seq = ds.sequences[at.sequence];
    const hhp::SequenceTrace trace = hhp::trace_sequence(model, seq);
    const hhp::AttributionReport report = hhp::make_attribution_report(model, trace, seq, at.grid);

    namespace fs = std::filesystem;
    fs::create_directories(at.out);
    const auto write = [&](const std::string& name, auto&& writer) {
      std::ofstream os(fs::path(at.out) / name);
      if (!os) throw std::runtime_error("cannot write " + name);
      writer(os);
    };
    write("dflambda.csv",
          [&](std::ostream& os) { hhp::write_dflambda_csv(os, report, ds.num_marks); });
    write("lifetime.csv", [&](std::ostream& os) { hhp::write_lifetime_csv(os, report, seq); });
    write("coupling.csv", [&](std::ostream& os) { hhp::write_coupling_csv(os, report); });
    write("retrospective.csv",
          [&](std::ostream& os) { hhp::write_retrospective_csv(os, report); });
    ordered_json manifest;
    manifest["checkpoint"] = at.checkpoint;
    manifest["checkpoint_hash"] = hhp::file_fnv1a64(at.checkpoint);
    manifest["data"] = at.data;
    manifest["sequence"] = at.sequence;
    manifest["grid_per_interval"] = at.grid;
    manifest["num_events"] = seq.events.size();
    manifest["num_marks"] = ds.num_marks;
    manifest["rectifier"] = "softplus";
    write("manifest.json", [&](std::ostream& os) { os << manifest.dump(2) << "\n"; });
    std::cout << "wrote attribution report to " << at.out << "\n";
  });

  // ---- gridsearch ----
  auto* grid_cmd = app.add_subcommand("gridsearch", "validation LL over an architecture grid");
  TrainFlags gf;
  std::string grid_config;
  struct {
    std::vector<int> d{8, 16, 32, 64, 128, 256};
    std::vector<int> h{16, 32, 64, 128, 256};
    std::vector<int> l{1, 2};
    std::vector<int> r{2, 4, 8};
    std::string out = "gridsearch.csv";
  } gr;
  ConfigBinder grid_binder;
  add_train_flags(grid_cmd, gf, grid_binder, /*with_dims=*/false);
  grid_cmd->add_option("--d", gr.d, "latent dims to sweep")->expected(-1);
  grid_cmd->add_option("--h", gr.h, "GRU widths to sweep")->expected(-1);
  grid_cmd->add_option("--l", gr.l, "GRU layer counts to sweep")->expected(-1);
  grid_cmd->add_option("--r", gr.r, "rotation block counts to sweep")->expected(-1);
  grid_cmd->add_option("--out", gr.out, "results CSV (appended; finished cells are skipped)");
  grid_cmd->add_option("--config", grid_config, "JSON config file");
  grid_binder.bind("d", gr.d);
  grid_binder.bind("h", gr.h);
  grid_binder.bind("l", gr.l);
  grid_binder.bind("r", gr.r);
  grid_binder.bind("out", gr.out);
  grid_cmd->callback([&] {
    const hhp::Dataset ds = hhp::load_dataset(gf.data);
    const auto splits = hhp::split_dataset(ds, {0.7, 0.15, 0.15}, gf.cfg.seed);

    std::set<std::string> done;
    {
      std::ifstream in(gr.out);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || !std::isdigit(static_cast<unsigned char>(line[0]))) continue;
        size_t pos = 0;
        int commas = 0;
        while (commas < 4 && pos != std::string::npos) {
          pos = line.find(',', pos + 1);
          ++commas;
        }
        if (pos != std::string::npos) done.insert(line.substr(0, pos));
      }
    }
    std::ofstream out(gr.out, std::ios::app);
    if (!out) throw std::runtime_error("cannot open " + gr.out);
    out.precision(17);
    if (done.empty()) out << "d,h,l,r,val_ll,best_epoch,param_count\n";

    for (int d : gr.d) {
      for (int h : gr.h) {
        for (int l : gr.l) {
          for (int r : gr.r) {
            const std::string key = std::to_string(d) + "," + std::to_string(h) + "," +
                                    std::to_string(l) + "," + std::to_string(r);
            if (done.count(key)) {
              std::cout << "skip " << key << " (already done)\n";
              continue;
            }
            hhp::HhpDims dims{d, h, l, r, ds.num_marks};
            hhp::HhpModel model = hhp::HhpModel::create(
                dims, hhp::ablation_from_string(gf.ablation), gf.cfg.seed);
            model.init_mu_for_rate(empirical_per_mark_rate(splits[0]));
            hhp::TrainResult res = hhp::train(model, splits[0], splits[1], gf.cfg);
            out << key << "," << res.best_val_ll << "," << res.best_epoch << ","
                << model.params().scalar_count() << "\n";
            out.flush();
            std::cout << key << " -> val_ll " << res.best_val_ll << "\n";
          }
        }
      }
    }
  });

  // Two-phase parse: apply the config file first so flags override it.
  const std::string config_path = scan_config_flag(argc, argv);
  if (!config_path.empty()) {
    const std::map<std::string, const ConfigBinder*> binders{
        {"gen", &gen_binder},      {"train", &train_binder},  {"eval", &eval_binder},
        {"predict", &pred_binder}, {"simulate", &sim_binder}, {"attribute", &attr_binder},
        {"gridsearch", &grid_binder},
    };
    for (int i = 1; i < argc; ++i) {
      const auto it = binders.find(argv[i]);
      if (it != binders.end()) {
        it->second->apply(config_path);
        break;
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    for (auto* sub : app.get_subcommands()) std::cerr << "\n" << sub->help();
    if (app.get_subcommands().empty()) std::cerr << app.help();
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
