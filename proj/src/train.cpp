#include "rcf/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "rcf/loss.hpp"
#include "rcf/optim.hpp"

namespace fs = std::filesystem;

namespace rcf {

void TrainConfig::validate() const {
  model.validate();
  if (lr0 <= 0 || lr_power <= 0 || momentum < 0 || weight_decay < 0)
    throw value_error("train config: rates must be positive");
  if (batch_size == 0) throw value_error("train config: batch_size must be >= 1");
  if (epochs == 0) throw value_error("train config: epochs must be >= 1");
  if (w1 < 0 || w2 < 0) throw value_error("train config: loss weights must be non-negative");
}

KvPairs train_config_to_kv(const TrainConfig& c) {
  KvPairs kv = model_config_to_kv(c.model);
  kv.emplace_back("lr0", kv_double(c.lr0));
  kv.emplace_back("lr_power", kv_double(c.lr_power));
  kv.emplace_back("momentum", kv_double(c.momentum));
  kv.emplace_back("weight_decay", kv_double(c.weight_decay));
  kv.emplace_back("batch_size", std::to_string(c.batch_size));
  kv.emplace_back("epochs", std::to_string(c.epochs));
  kv.emplace_back("checkpoint_every", std::to_string(c.checkpoint_every));
  kv.emplace_back("seed", std::to_string(c.seed));
  kv.emplace_back("w1", kv_double(c.w1));
  kv.emplace_back("w2", kv_double(c.w2));
  return kv;
}

TrainConfig train_config_from_kv(const KvPairs& kv) {
  TrainConfig c;
  const auto num = [&](const char* key, double& dst) {
    if (const auto* v = kv_find(kv, key)) dst = std::stod(*v);
  };
  const auto sz = [&](const char* key, size_t& dst) {
    if (const auto* v = kv_find(kv, key)) dst = std::stoull(*v);
  };
  if (const auto* v = kv_find(kv, "mode")) c.model.mode = fusion_mode_from_string(*v);
  sz("height", c.model.height);
  sz("width", c.model.width);
  sz("patch_size", c.model.patch_size);
  sz("token_dim", c.model.token_dim);
  sz("num_layers", c.model.num_layers);
  sz("num_heads", c.model.num_heads);
  sz("mlp_ratio", c.model.mlp_ratio);
  if (const auto* v = kv_find(kv, "tap_layers")) c.model.tap_layers = parse_size_list(*v);
  if (const auto* v = kv_find(kv, "scale_ratios")) c.model.scale_ratios = parse_size_list(*v);
  sz("dhat", c.model.dhat);
  sz("radar_channels", c.model.radar_channels);
  num("output_scale", c.model.output_scale);
  if (const auto* v = kv_find(kv, "pad_mode")) {
    if (*v != "zero" && *v != "circular") throw format_error("bad pad_mode '" + *v + "'");
    c.model.pad_mode = *v == "circular" ? PadMode::Circular : PadMode::Zero;
  }
  num("lr0", c.lr0);
  num("lr_power", c.lr_power);
  num("momentum", c.momentum);
  num("weight_decay", c.weight_decay);
  sz("batch_size", c.batch_size);
  sz("epochs", c.epochs);
  sz("checkpoint_every", c.checkpoint_every);
  if (const auto* v = kv_find(kv, "seed")) c.seed = std::stoull(*v);
  num("w1", c.w1);
  num("w2", c.w2);
  return c;
}

void split_indices(size_t n, std::vector<size_t>& train_out, std::vector<size_t>& eval_out) {
  train_out.clear();
  eval_out.clear();
  for (size_t i = 0; i < n; ++i) (i % 5 == 4 ? eval_out : train_out).push_back(i);
}

namespace {

void check_dataset(const ModelConfig& m, const Dataset& data) {
  if (data.count == 0) throw value_error("dataset " + data.root + " is empty");
  if (data.height != m.height || data.width != m.width ||
      data.radar_channels != m.radar_channels)
    throw value_error("dataset " + data.root + " is " + std::to_string(data.height) + "x" +
                      std::to_string(data.width) + " with " +
                      std::to_string(data.radar_channels) + " radar channels; model wants " +
                      std::to_string(m.height) + "x" + std::to_string(m.width) + " with " +
                      std::to_string(m.radar_channels));
}

// Fisher-Yates with our deterministic Rng.
void shuffle_indices(std::vector<size_t>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

}  // namespace

TrainResult train_model(const TrainConfig& cfg, const Dataset& data,
                        const std::vector<size_t>& indices, const std::string& out_dir) {
  cfg.validate();
  check_dataset(cfg.model, data);
  if (indices.empty()) throw value_error("train: no training samples selected");

  ModelConfig mc = cfg.model;
  mc.init_seed = cfg.seed;
  auto model = std::make_unique<DepthModel<float>>(mc);
  auto params = model->params().tensors();
  SgdOptimizer<float> opt(float(cfg.momentum), float(cfg.weight_decay));

  std::vector<SceneSample> samples;
  samples.reserve(indices.size());
  for (size_t i : indices) samples.push_back(data.load(i));

  const size_t steps_per_epoch = (indices.size() + cfg.batch_size - 1) / cfg.batch_size;
  const size_t max_steps = cfg.epochs * steps_per_epoch;

  std::string log;
  log += "step,lr,loss\n";
  TrainResult result;
  size_t step = 0;
  std::vector<size_t> order(indices.size());
  std::iota(order.begin(), order.end(), 0);

  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng perm_rng(mix_seed(cfg.seed, 0xe90cULL, epoch));
    shuffle_indices(order, perm_rng);
    double epoch_sum = 0;
    for (size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const size_t bn = std::min(cfg.batch_size, order.size() - b);
      Tape<float> tape;
      Tape<float>::Scope scope(tape);
      Tensor<float> batch_loss;
      for (size_t j = 0; j < bn; ++j) {
        const size_t local = order[b + j];
        // Augmentation stream depends on (seed, dataset index, epoch) only,
        // so every mode sees identical draws.
        Rng aug_rng(mix_seed(cfg.seed, indices[local], epoch));
        SceneSample s = augment_sample(samples[local], aug_rng);
        Tensor<float> pred = model->forward(s.image, s.radar);
        Tensor<float> y = reshape(pred, {s.lidar_gt.dim(0), s.lidar_gt.dim(1)});
        Tensor<float> loss = total_loss(y, s.lidar_gt, s.image, valid_mask(s.lidar_gt),
                                        float(cfg.w1), float(cfg.w2));
        batch_loss = j == 0 ? loss : add(batch_loss, loss);
      }
      Tensor<float> loss = scale(batch_loss, 1.0f / float(bn));
      const double loss_val = loss.item();
      if (!std::isfinite(loss_val))
        throw value_error("train: non-finite loss at step " + std::to_string(step) + " (epoch " +
                          std::to_string(epoch + 1) + ")");
      tape.backward(loss);
      const double lr = lr_schedule(step, max_steps, cfg.lr0, cfg.lr_power);
      opt.sgd_step(params, float(lr));
      char row[96];
      std::snprintf(row, sizeof(row), "%zu,%.9g,%.9g\n", step, lr, loss_val);
      log += row;
      epoch_sum += loss_val;
      ++step;
    }
    result.epoch_loss.push_back(epoch_sum / double(steps_per_epoch));
    if (!out_dir.empty() && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 != cfg.epochs) {
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt_epoch_%03zu", epoch + 1);
      save_checkpoint(*model, (fs::path(out_dir) / name).string());
    }
  }

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream os(fs::path(out_dir) / "train_log.csv", std::ios::trunc);
    if (!os) throw io_error("cannot write train log in " + out_dir);
    os << log;
    os.close();
    save_checkpoint(*model, (fs::path(out_dir) / "final").string());
  }
  result.model = std::move(model);
  return result;
}

MetricsReport evaluate_model(const DepthModel<float>& model, const Dataset& data,
                             const std::vector<size_t>& indices, AbsrelDenom denom,
                             bool against_dense) {
  check_dataset(model.config(), data);
  MetricsAccumulator acc;
  acc.denom = denom;
  for (size_t i : indices) {
    const SceneSample s = data.load(i);
    Tensor<float> pred = model.forward(s.image, s.radar);
    Tensor<float> y = reshape(pred, {s.lidar_gt.dim(0), s.lidar_gt.dim(1)});
    acc.add(y, against_dense ? s.dense_depth : s.lidar_gt);
  }
  return acc.report();
}

namespace {

struct MeanStd {
  double mean = 0, sd = 0;
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  for (double x : v) m.mean += x;
  m.mean /= double(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.sd = std::sqrt(ss / double(v.size() - 1));
  }
  return m;
}

}  // namespace

CompareResult run_compare(const TrainConfig& base, const Dataset& data,
                          const std::vector<uint64_t>& seeds, const std::string& out_dir) {
  if (seeds.empty()) throw value_error("compare: need at least one seed");
  const FusionMode modes[] = {FusionMode::ImageOnly, FusionMode::Early, FusionMode::Late,
                              FusionMode::RcdptReassemble};
  std::vector<size_t> train_idx, eval_idx;
  split_indices(data.count, train_idx, eval_idx);
  if (eval_idx.empty()) throw value_error("compare: dataset too small for a holdout split");

  CompareResult res;
  res.runs_csv = metrics_csv_header() + "\n";
  for (uint64_t seed : seeds)
    for (FusionMode mode : modes) {
      TrainConfig cfg = base;
      cfg.model.mode = mode;
      cfg.seed = seed;
      std::string run_dir;
      if (!out_dir.empty())
        run_dir = (fs::path(out_dir) / (to_string(mode) + "_seed" + std::to_string(seed))).string();
      TrainResult tr = train_model(cfg, data, train_idx, run_dir);
      CompareRun run;
      run.mode = mode;
      run.seed = seed;
      run.epoch_loss = tr.epoch_loss;
      run.metrics = evaluate_model(*tr.model, data, eval_idx, AbsrelDenom::Target);
      res.runs_csv += metrics_csv_row(to_string(mode), seed, run.metrics) + "\n";
      res.runs.push_back(std::move(run));
    }

  res.table_csv = "mode,delta1,delta2,delta3,rmse,absrel\n";
  for (FusionMode mode : modes) {
    std::vector<double> d1, d2, d3, rm, ar;
    for (const CompareRun& r : res.runs)
      if (r.mode == mode) {
        d1.push_back(r.metrics.delta1);
        d2.push_back(r.metrics.delta2);
        d3.push_back(r.metrics.delta3);
        rm.push_back(r.metrics.rmse);
        ar.push_back(r.metrics.absrel);
      }
    char row[256];
    const MeanStd m1 = mean_std(d1), m2 = mean_std(d2), m3 = mean_std(d3), mr = mean_std(rm),
                  ma = mean_std(ar);
    std::snprintf(row, sizeof(row),
                  "%s,%.6f±%.6f,%.6f±%.6f,%.6f±%.6f,%.6f±%.6f,%.6f±%.6f\n",
                  to_string(mode).c_str(), m1.mean, m1.sd, m2.mean, m2.sd, m3.mean, m3.sd, mr.mean,
                  mr.sd, ma.mean, ma.sd);
    res.table_csv += row;
  }

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream ru(fs::path(out_dir) / "compare_runs.csv", std::ios::trunc);
    ru << res.runs_csv;
    std::ofstream ta(fs::path(out_dir) / "compare_table.csv", std::ios::trunc);
    ta << res.table_csv;
    if (!ru || !ta) throw io_error("cannot write compare outputs in " + out_dir);
  }
  return res;
}

}  // namespace rcf
