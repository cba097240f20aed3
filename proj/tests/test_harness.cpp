#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "rcf/cli.hpp"
#include "rcf/kv.hpp"
#include "rcf/model.hpp"
#include "rcf/optim.hpp"
#include "rcf/rten.hpp"
#include "rcf/synth.hpp"
#include "rcf/train.hpp"
#include "test_helpers.hpp"

using namespace rcf;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Runs the CLI with stdout captured and returns (exit code, output).
std::pair<int, std::string> run_captured(const std::vector<std::string>& args) {
  std::ostringstream cap;
  auto* old = std::cout.rdbuf(cap.rdbuf());
  int rc = -1;
  try {
    rc = run_cli(args);
  } catch (...) {
    std::cout.rdbuf(old);
    throw;
  }
  std::cout.rdbuf(old);
  return {rc, cap.str()};
}

std::map<std::string, std::string> parse_echo(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.patch_size = 8;
  cfg.token_dim = 16;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 2;
  cfg.tap_layers = {1, 2};
  cfg.scale_ratios = {4, 8};
  cfg.dhat = 8;
  cfg.radar_channels = 2;
  cfg.init_seed = 77;
  return cfg;
}

}  // namespace

TEST_CASE("lr_schedule follows polynomial decay") {
  CHECK(lr_schedule(0, 480, 1e-4, 0.9) == 1e-4);
  CHECK(lr_schedule(480, 480, 1e-4, 0.9) == 0.0);
  CHECK(lr_schedule(240, 480, 1e-4, 0.9) ==
        doctest::Approx(1e-4 * std::pow(0.5, 0.9)).epsilon(1e-12));
  for (size_t s = 1; s <= 480; ++s)
    CHECK(lr_schedule(s, 480, 1e-4, 0.9) < lr_schedule(s - 1, 480, 1e-4, 0.9));
  CHECK_THROWS_AS(lr_schedule(1, 0, 1e-4, 0.9), value_error);
  CHECK_THROWS_AS(lr_schedule(481, 480, 1e-4, 0.9), value_error);
}

TEST_CASE("sgd_step hand case with momentum and weight decay") {
  auto p = Tensor<double>::from({1}, {1.0}).set_requires_grad();
  std::vector<Tensor<double>> params{p};
  SgdOptimizer<double> opt(0.5, 0.1);

  // v1 = 0.5*0 + 1 + 0.1*1 = 1.1; p1 = 1 - 0.1*1.1 = 0.89
  p.ensure_grad().assign(1, 1.0);
  opt.sgd_step(params, 0.1);
  CHECK(p[0] == doctest::Approx(0.89).epsilon(1e-15));
  CHECK_FALSE(p.has_grad());  // consumed by the step

  // v2 = 0.5*1.1 + 1 + 0.1*0.89 = 1.639; p2 = 0.89 - 0.1639 = 0.7261
  p.ensure_grad().assign(1, 1.0);
  opt.sgd_step(params, 0.1);
  CHECK(p[0] == doctest::Approx(0.7261).epsilon(1e-15));

  // A parameter without a gradient is an error, not a silent skip.
  CHECK_THROWS_AS(opt.sgd_step(params, 0.1), value_error);
}

TEST_CASE("split_indices holds out every fifth sample") {
  std::vector<size_t> train, eval;
  split_indices(10, train, eval);
  CHECK(train == std::vector<size_t>{0, 1, 2, 3, 5, 6, 7, 8});
  CHECK(eval == std::vector<size_t>{4, 9});

  split_indices(80, train, eval);
  CHECK(train.size() == 64);
  CHECK(eval.size() == 16);
}

TEST_CASE("train config round-trips through kv pairs") {
  TrainConfig cfg;
  cfg.model = micro_config();
  cfg.model.mode = FusionMode::Late;
  cfg.model.pad_mode = PadMode::Circular;
  cfg.lr0 = 2e-4;
  cfg.lr_power = 0.8;
  cfg.momentum = 0.85;
  cfg.weight_decay = 1e-3;
  cfg.batch_size = 2;
  cfg.epochs = 7;
  cfg.checkpoint_every = 3;
  cfg.seed = 99;
  cfg.w1 = 0.5;
  cfg.w2 = 0.25;

  const TrainConfig back = train_config_from_kv(train_config_to_kv(cfg));
  CHECK(back.model.mode == FusionMode::Late);
  CHECK(back.model.height == 16);
  CHECK(back.model.width == 16);
  CHECK(back.model.patch_size == 8);
  CHECK(back.model.token_dim == 16);
  CHECK(back.model.num_layers == 2);
  CHECK(back.model.num_heads == 2);
  CHECK(back.model.mlp_ratio == 2);
  CHECK(back.model.tap_layers == std::vector<size_t>{1, 2});
  CHECK(back.model.scale_ratios == std::vector<size_t>{4, 8});
  CHECK(back.model.dhat == 8);
  CHECK(back.model.radar_channels == 2);
  CHECK(back.model.pad_mode == PadMode::Circular);
  CHECK(back.lr0 == 2e-4);
  CHECK(back.lr_power == 0.8);
  CHECK(back.momentum == 0.85);
  CHECK(back.weight_decay == 1e-3);
  CHECK(back.batch_size == 2);
  CHECK(back.epochs == 7);
  CHECK(back.checkpoint_every == 3);
  CHECK(back.seed == 99);
  CHECK(back.w1 == 0.5);
  CHECK(back.w2 == 0.25);

  // Empty kv means pure defaults.
  const TrainConfig def = train_config_from_kv({});
  CHECK(def.lr0 == 1e-4);
  CHECK(def.lr_power == 0.9);
  CHECK(def.momentum == 0.9);
  CHECK(def.weight_decay == 5e-4);
  CHECK(def.epochs == 30);
  CHECK(def.w1 == 1.0);
  CHECK(def.w2 == 0.1);

  CHECK_THROWS_AS(train_config_from_kv({{"pad_mode", "diagonal"}}), format_error);
  CHECK_THROWS_AS(train_config_from_kv({{"mode", "telepathy"}}), value_error);
}

TEST_CASE("cli echo-config reports the paper hyperparameters as defaults") {
  const auto [rc, text] = run_captured({"train", "--echo-config"});
  REQUIRE(rc == 0);
  const auto kv = parse_echo(text);
  CHECK(kv.at("lr0") == "0.0001");
  CHECK(kv.at("lr_power") == "0.9");
  CHECK(kv.at("momentum") == "0.9");
  CHECK(kv.at("weight_decay") == "0.0005");
  CHECK(kv.at("w1") == "1");
  CHECK(kv.at("w2") == "0.1");
  CHECK(kv.at("batch_size") == "4");
  CHECK(kv.at("epochs") == "30");
  CHECK(kv.at("mode") == "rcdpt");
  CHECK(kv.count("init_seed") == 0);  // internal key, not part of the echo
  CHECK(kv.count("format") == 0);
}

TEST_CASE("cli precedence: defaults, then config file, then flags") {
  const fs::path dir = fs::temp_directory_path() / "rcf_cli_cfg";
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "cfg.txt", std::ios::trunc);
    os << "lr0 = 5e-05\nepochs = 3\n";
  }
  const auto [rc, text] = run_captured(
      {"train", "--echo-config", "--config", (dir / "cfg.txt").string(), "--epochs", "7"});
  REQUIRE(rc == 0);
  const auto kv = parse_echo(text);
  CHECK(kv.at("lr0") == "5e-05");      // file overrides default
  CHECK(kv.at("epochs") == "7");       // flag overrides file
  CHECK(kv.at("momentum") == "0.9");   // untouched default
  fs::remove_all(dir);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  const fs::path dir = fs::temp_directory_path() / "rcf_ckpt_rt";
  fs::remove_all(dir);
  DepthModel<float> model(micro_config());
  save_checkpoint(model, dir.string());

  DepthModel<float> loaded = load_checkpoint(dir.string());
  CHECK(loaded.config().mode == model.config().mode);
  CHECK(loaded.config().height == 16);
  CHECK(loaded.config().output_scale == model.config().output_scale);
  for (const auto& [name, t] : model.params().items()) {
    const auto& u = loaded.params().get(name);
    REQUIRE(u.shape() == t.shape());
    CHECK(u.vals() == t.vals());
  }

  // Same forward pass bit-for-bit.
  Rng rng(mix_seed(0xc4, 1));
  const auto image = rcft::random_tensor<float>({16, 16, 3}, rng, 0.0, 1.0);
  const auto radar = rcft::random_tensor<float>({16, 16, 2}, rng, 0.0, 40.0);
  CHECK(model.forward(image, radar).vals() == loaded.forward(image, radar).vals());

  CHECK_THROWS_AS(load_checkpoint((dir / "missing").string()), io_error);
  write_rten((dir / "head.c3.b.rten").string(), Tensor<float>({2, 2}));
  CHECK_THROWS_AS(load_checkpoint(dir.string()), format_error);
  fs::remove_all(dir);
}

TEST_CASE("train_model runs, logs, checkpoints, and repeats bit-identically") {
  const fs::path data_dir = fs::temp_directory_path() / "rcf_train_ds";
  const fs::path out1 = fs::temp_directory_path() / "rcf_train_out1";
  const fs::path out2 = fs::temp_directory_path() / "rcf_train_out2";
  fs::remove_all(data_dir);
  fs::remove_all(out1);
  fs::remove_all(out2);
  generate_dataset(data_dir.string(), 6, 32, 32, 3, 2);
  const Dataset ds = open_dataset(data_dir.string());

  TrainConfig cfg;
  cfg.model = micro_config();
  cfg.model.height = cfg.model.width = 32;
  cfg.model.mode = FusionMode::Early;
  cfg.batch_size = 2;
  cfg.epochs = 2;
  cfg.seed = 5;
  const std::vector<size_t> idx{0, 1, 2, 3, 4, 5};

  TrainResult r1 = train_model(cfg, ds, idx, out1.string());
  REQUIRE(r1.epoch_loss.size() == 2);
  for (double l : r1.epoch_loss) {
    CHECK(std::isfinite(l));
    CHECK(l > 0);
  }
  REQUIRE(r1.model != nullptr);

  const std::string log1 = slurp(out1 / "train_log.csv");
  CHECK(log1.rfind("step,lr,loss\n", 0) == 0);
  CHECK(std::count(log1.begin(), log1.end(), '\n') == 7);  // header + 3 steps x 2 epochs

  // The final checkpoint loads and evaluates.
  DepthModel<float> final_model = load_checkpoint((out1 / "final").string());
  const MetricsReport rep = evaluate_model(final_model, ds, idx, AbsrelDenom::Target);
  CHECK(rep.n_pixels > 0);
  CHECK(std::isfinite(rep.rmse));
  const MetricsReport dense = evaluate_model(final_model, ds, idx, AbsrelDenom::Target, true);
  CHECK(dense.n_pixels > rep.n_pixels);  // dense truth covers every pixel

  // Identical config and data => identical artifacts, byte for byte.
  TrainResult r2 = train_model(cfg, ds, idx, out2.string());
  CHECK(r1.epoch_loss == r2.epoch_loss);
  CHECK(slurp(out2 / "train_log.csv") == log1);
  CHECK(slurp(out2 / "final" / "manifest.txt") == slurp(out1 / "final" / "manifest.txt"));
  CHECK(slurp(out2 / "final" / "head.c3.b.rten") == slurp(out1 / "final" / "head.c3.b.rten"));

  fs::remove_all(data_dir);
  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST_CASE("write_pgm16 emits the documented big-endian format") {
  const fs::path dir = fs::temp_directory_path() / "rcf_pgm";
  fs::create_directories(dir);
  const fs::path pgm = dir / "depth.pgm";

  auto depth = Tensor<float>::from({1, 3}, {0.0f, 40.0f, 80.0f});
  write_pgm16(pgm.string(), depth, 80.0);
  const std::string bytes = slurp(pgm);
  const std::string header = "P5\n3 1\n65535\n";
  REQUIRE(bytes.size() == header.size() + 6);
  CHECK(bytes.rfind(header, 0) == 0);
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + header.size());
  CHECK(px[0] == 0x00);  // 0 m
  CHECK(px[1] == 0x00);
  CHECK(px[2] == 0x80);  // 40 m = half scale, rounds up to 32768
  CHECK(px[3] == 0x00);
  CHECK(px[4] == 0xff);  // 80 m = full scale
  CHECK(px[5] == 0xff);

  // Out-of-range depths clamp to the ends rather than wrapping.
  auto wild = Tensor<float>::from({1, 2}, {-5.0f, 200.0f});
  write_pgm16(pgm.string(), wild, 80.0);
  const std::string b2 = slurp(pgm);
  const auto* p2 = reinterpret_cast<const unsigned char*>(b2.data() + b2.size() - 4);
  CHECK(p2[0] == 0x00);
  CHECK(p2[1] == 0x00);
  CHECK(p2[2] == 0xff);
  CHECK(p2[3] == 0xff);

  CHECK_THROWS_AS(write_pgm16(pgm.string(), Tensor<float>({4}), 80.0), shape_error);
  fs::remove_all(dir);
}
