#include "rcf/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "rcf/gradcheck_suite.hpp"
#include "rcf/train.hpp"

namespace fs = std::filesystem;

namespace rcf {
namespace {

// Keys shared by config files and mirrored flags. Precedence:
// built-in defaults < --config file < explicit flags.
const char* const kTrainKeys[] = {
    "mode",        "height",       "width",          "patch_size", "token_dim",
    "num_layers",  "num_heads",    "mlp_ratio",      "tap_layers", "scale_ratios",
    "dhat",        "radar_channels", "output_scale", "pad_mode",   "lr0",
    "lr_power",    "momentum",     "weight_decay",   "batch_size", "epochs",
    "checkpoint_every", "seed",    "w1",             "w2"};

struct KeyedFlags {
  std::vector<std::string> values = std::vector<std::string>(std::size(kTrainKeys));
  std::vector<CLI::Option*> opts = std::vector<CLI::Option*>(std::size(kTrainKeys));

  void attach(CLI::App* app) {
    for (size_t i = 0; i < std::size(kTrainKeys); ++i) {
      std::string flag = "--";
      for (const char* p = kTrainKeys[i]; *p; ++p) flag += *p == '_' ? '-' : *p;
      opts[i] = app->add_option(flag, values[i], std::string("config key ") + kTrainKeys[i]);
    }
  }

  // Overlay file values then explicitly set flags onto defaults.
  KvPairs merge(const std::string& config_path) const {
    KvPairs kv;
    if (!config_path.empty()) kv = read_kv_file(config_path);
    for (size_t i = 0; i < std::size(kTrainKeys); ++i) {
      if (!opts[i] || opts[i]->count() == 0) continue;
      bool found = false;
      for (auto& [k, v] : kv)
        if (k == kTrainKeys[i]) {
          v = values[i];
          found = true;
          break;
        }
      if (!found) kv.emplace_back(kTrainKeys[i], values[i]);
    }
    return kv;
  }
};

void echo_config(const TrainConfig& cfg, std::ostream& os) {
  for (const auto& [k, v] : train_config_to_kv(cfg))
    if (k != "format" && k != "init_seed") os << k << " = " << v << "\n";
}

// Dataset dims win wherever the user did not speak.
TrainConfig resolve_train_config(const KvPairs& kv, const Dataset& ds) {
  TrainConfig cfg = train_config_from_kv(kv);
  if (!kv_find(kv, "height")) cfg.model.height = ds.height;
  if (!kv_find(kv, "width")) cfg.model.width = ds.width;
  if (!kv_find(kv, "radar_channels")) cfg.model.radar_channels = ds.radar_channels;
  return cfg;
}

std::vector<size_t> all_indices(size_t n) {
  std::vector<size_t> v(n);
  for (size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

int cmd_gen_data(size_t n, size_t size, uint64_t seed, const std::string& out,
                 size_t radar_channels) {
  generate_dataset(out, n, size, size, seed, radar_channels);
  std::cout << "wrote " << n << " scenes of " << size << "x" << size << " (seed " << seed
            << ", " << radar_channels << " radar channels) to " << out << "\n";
  return 0;
}

int cmd_train(const KeyedFlags& flags, const std::string& config_path, const std::string& data,
              const std::string& out, bool echo_only) {
  const KvPairs kv = flags.merge(config_path);
  if (echo_only) {
    // No dataset needed: echo the merged config against built-in defaults.
    echo_config(train_config_from_kv(kv), std::cout);
    return 0;
  }
  if (data.empty() || out.empty()) throw value_error("train: --data and --out are required");
  const Dataset ds = open_dataset(data);
  const TrainConfig cfg = resolve_train_config(kv, ds);
  fs::create_directories(out);
  {
    std::ofstream os(fs::path(out) / "config.txt", std::ios::trunc);
    echo_config(cfg, os);
  }
  echo_config(cfg, std::cout);
  TrainResult r = train_model(cfg, ds, all_indices(ds.count), out);
  std::cout << "first-epoch loss " << kv_double(r.epoch_loss.front()) << ", final-epoch loss "
            << kv_double(r.epoch_loss.back()) << "\n"
            << "checkpoint: " << (fs::path(out) / "final").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& out,
             const std::string& absrel_denom, bool with_dense, bool viz) {
  const AbsrelDenom denom = absrel_denom_from_string(absrel_denom);
  DepthModel<float> model = load_checkpoint(ckpt);
  const Dataset ds = open_dataset(data);
  const auto idx = all_indices(ds.count);
  const std::string mode = to_string(model.config().mode);
  const uint64_t seed = model.config().init_seed;

  std::string csv = metrics_csv_header() + "\n";
  csv += metrics_csv_row(mode, seed, evaluate_model(model, ds, idx, denom, false)) + "\n";
  if (with_dense)
    csv += metrics_csv_row(mode + "+dense", seed, evaluate_model(model, ds, idx, denom, true)) +
           "\n";
  std::cout << csv;
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream os(fs::path(out) / "metrics.csv", std::ios::trunc);
    if (!os) throw io_error("cannot write metrics.csv in " + out);
    os << csv;
    if (viz) {
      const fs::path vd = fs::path(out) / "viz";
      fs::create_directories(vd);
      char name[32];
      for (size_t i : idx) {
        const SceneSample s = ds.load(i);
        Tensor<float> pred = model.forward(s.image, s.radar);
        std::snprintf(name, sizeof(name), "pred_%06zu.pgm", i);
        write_pgm16((vd / name).string(),
                    reshape(pred, {s.lidar_gt.dim(0), s.lidar_gt.dim(1)}),
                    model.config().output_scale);
      }
    }
  }
  return 0;
}

int cmd_compare(const KeyedFlags& flags, const std::string& config_path,
                const std::string& seeds_csv, const std::string& data, const std::string& out) {
  std::vector<uint64_t> seeds;
  for (size_t s : parse_size_list(seeds_csv)) seeds.push_back(s);
  const Dataset ds = open_dataset(data);
  const TrainConfig base = resolve_train_config(flags.merge(config_path), ds);
  if (!out.empty()) fs::create_directories(out);
  CompareResult res = run_compare(base, ds, seeds, out);
  std::cout << res.table_csv;
  return 0;
}

int cmd_gradcheck() {
  const GradCheckReport r = run_gradcheck_suite();
  std::cout << gradcheck_report_text(r);
  return r.pass ? 0 : 1;
}

}  // namespace

void write_pgm16(const std::string& path, const Tensor<float>& depth, double cap) {
  if (depth.rank() != 2) throw shape_error("write_pgm16: want [H x W], got " +
                                           shape_str(depth.shape()));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot open for writing: " + path);
  os << "P5\n" << depth.dim(1) << " " << depth.dim(0) << "\n65535\n";
  for (size_t i = 0; i < depth.numel(); ++i) {
    const double v = std::clamp(double(depth[i]) / cap, 0.0, 1.0);
    const auto u = uint16_t(std::lround(v * 65535.0));
    os.put(char(u >> 8));  // big-endian per the format
    os.put(char(u & 0xff));
  }
  if (!os) throw io_error("write failed: " + path);
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"radar-camera fusion depth transformer"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic scene dataset");
  size_t gn = 0, gsize = 48, gcr = 3;
  uint64_t gseed = 1;
  std::string gout;
  gen->add_option("--n", gn, "number of scenes")->required();
  gen->add_option("--size", gsize, "square scene side in pixels (multiple of 16)");
  gen->add_option("--seed", gseed, "generator seed");
  gen->add_option("--radar-channels", gcr, "radar channels");
  gen->add_option("--out", gout, "output dataset directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train one fusion mode");
  KeyedFlags tr_flags;
  tr_flags.attach(tr);
  std::string tr_config, tr_data, tr_out;
  bool tr_echo = false;
  tr->add_option("--config", tr_config, "key = value config file");
  tr->add_option("--data", tr_data, "dataset directory");
  tr->add_option("--out", tr_out, "output directory");
  tr->add_flag("--echo-config", tr_echo, "print the effective config and exit");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_out, ev_denom = "target";
  bool ev_dense = false, ev_viz = false;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint directory")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--out", ev_out, "output directory for metrics.csv");
  ev->add_option("--absrel-denominator", ev_denom, "absrel denominator: target|prediction");
  ev->add_flag("--dense", ev_dense, "also evaluate against dense ground truth");
  ev->add_flag("--viz", ev_viz, "write 16-bit PGM depth maps");

  // compare
  auto* cp = app.add_subcommand("compare", "four-way fusion ablation");
  KeyedFlags cp_flags;
  cp_flags.attach(cp);
  std::string cp_config, cp_seeds = "1,2,3", cp_data, cp_out;
  cp->add_option("--config", cp_config, "key = value config file");
  cp->add_option("--seeds", cp_seeds, "comma-separated seeds");
  cp->add_option("--data", cp_data, "dataset directory")->required();
  cp->add_option("--out", cp_out, "output directory");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");

  std::vector<const char*> argv;
  argv.push_back("rcdpt");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gn, gsize, gseed, gout, gcr);
    if (tr->parsed()) return cmd_train(tr_flags, tr_config, tr_data, tr_out, tr_echo);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_out, ev_denom, ev_dense, ev_viz);
    if (cp->parsed()) return cmd_compare(cp_flags, cp_config, cp_seeds, cp_data, cp_out);
    if (gc->parsed()) return cmd_gradcheck();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 1;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace rcf
