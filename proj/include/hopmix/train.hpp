#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "hopmix/checkpoint.hpp"
#include "hopmix/config.hpp"
#include "hopmix/data.hpp"
#include "hopmix/mixer.hpp"

namespace hopmix {

struct MetricsRow {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  bool has_val = false;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;  // wall clock; excluded from the determinism contract
};

struct KappaRow {
  int epoch = 0;
  int layer = 0;
  double kappa = 0.0;
};

struct TrainResult {
  std::vector<MetricsRow> history;
  std::vector<KappaRow> kappa_log;
  int best_epoch = -1;
  double best_val_acc = -1.0;
  std::string checkpoint_path;  // best-val weights, "<out_dir>/best.hmx"
  std::string metrics_path;     // "<out_dir>/metrics.csv"
  std::string kappa_path;       // "<out_dir>/kappa.csv", iMLP models only
};

// Full deterministic training run. Seeded shuffling per epoch, cross-entropy
// with label smoothing, AdamW, per-epoch metrics, best-val checkpoint.
// Aborts with Diverged (loss went NaN) including the last lr and gradient
// norm in the message. `log` may be null.
TrainResult train(const MixerConfig& model_cfg, const TrainSettings& settings,
                  const Dataset& train_set, const Dataset& val_set, const std::string& out_dir,
                  std::ostream* log);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> per_class;  // accuracy per label
};

// Frozen-inference evaluation (top-1 accuracy) of a model on a dataset.
EvalResult evaluate(MixerModel& model, const NormStats& stats, const Dataset& ds);

// "epoch,train_loss,train_acc,val_loss,val_acc,seconds" with one row per
// epoch; val columns empty on epochs without evaluation.
std::string metrics_csv(const std::vector<MetricsRow>& history);
std::string kappa_csv(const std::vector<KappaRow>& rows);

// Measured contraction ratio of each iMLP layer on a probe batch: the ratio
// of successive iterate differences, maximised over samples and steps.
std::vector<double> measure_kappa(MixerModel& model, const Dataset& ds, const NormStats& stats,
                                  int samples, int n_iters = 4);

}  // namespace hopmix
