// Training loop with the paper-derived schedule (SGD momentum 0.9, weight
// decay 5e-4, polynomial lr decay from 1e-4 with power 0.9), plus pooled
// evaluation and the four-way fusion comparison.
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rcf/kv.hpp"
#include "rcf/metrics.hpp"
#include "rcf/model.hpp"
#include "rcf/synth.hpp"

namespace rcf {

struct TrainConfig {
  ModelConfig model;
  double lr0 = 1e-4;
  double lr_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  size_t batch_size = 4;
  size_t epochs = 30;
  size_t checkpoint_every = 10;  // epochs
  uint64_t seed = 1;
  double w1 = 1.0;   // L1 weight
  double w2 = 0.1;   // smoothness weight

  void validate() const;
};

KvPairs train_config_to_kv(const TrainConfig& c);
TrainConfig train_config_from_kv(const KvPairs& kv);  // defaults + overrides

struct TrainResult {
  std::vector<double> epoch_loss;  // mean step loss per epoch
  std::unique_ptr<DepthModel<float>> model;
};

// Deterministic 80/20 holdout: every 5th index (i % 5 == 4) is evaluation.
void split_indices(size_t n, std::vector<size_t>& train_out, std::vector<size_t>& eval_out);

// Trains on data[indices]. If out_dir is non-empty, writes train_log.csv
// (step,lr,loss), checkpoints every checkpoint_every epochs and a final one.
TrainResult train_model(const TrainConfig& cfg, const Dataset& data,
                        const std::vector<size_t>& indices, const std::string& out_dir);

// Pooled pixel-weighted metrics over data[indices]; ground truth is sparse
// lidar, or dense depth when against_dense is set.
MetricsReport evaluate_model(const DepthModel<float>& model, const Dataset& data,
                             const std::vector<size_t>& indices, AbsrelDenom denom,
                             bool against_dense = false);

struct CompareRun {
  FusionMode mode;
  uint64_t seed = 0;
  MetricsReport metrics;
  std::vector<double> epoch_loss;
};

struct CompareResult {
  std::vector<CompareRun> runs;
  std::string runs_csv;   // one pooled-metrics row per (mode, seed)
  std::string table_csv;  // rows = modes, cells = mean±std over seeds
};

// Trains every mode per seed on the train split of `data`, evaluates on the
// holdout, and writes compare_runs.csv / compare_table.csv under out_dir
// (when non-empty). Mode order: image-only, early, late, rcdpt.
CompareResult run_compare(const TrainConfig& base, const Dataset& data,
                          const std::vector<uint64_t>& seeds, const std::string& out_dir);

}  // namespace rcf
