#include "hopmix/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "hopmix/nn.hpp"
#include "hopmix/rng.hpp"

namespace hopmix {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// Logits for a batch of dataset indices; tape-recorded when f.tape is set.
Tensor batch_logits(MixerModel& model, const Dataset& ds, const NormStats& stats,
                    std::span<const std::size_t> indices, Fwd& f) {
  std::vector<Tensor> rows;
  rows.reserve(indices.size());
  for (std::size_t idx : indices) {
    const std::vector<double> img = normalize_image(ds, idx, stats);
    rows.push_back(model.forward(f, img));
  }
  return stack_rows(rows);
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t k = logits.cols();
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (logits.at(row, j) > logits.at(row, best)) best = j;
  return best;
}

}  // namespace

EvalResult evaluate(MixerModel& model, const NormStats& stats, const Dataset& ds) {
  if (ds.count() == 0) throw Error("evaluate: empty dataset");
  if (ds.image_size() != static_cast<std::size_t>(model.config().channels_in) *
                             model.config().image_size * model.config().image_size)
    throw ShapeError("evaluate: dataset dimensions do not match the model config");
  if (ds.num_classes != model.config().num_classes)
    throw ShapeError("evaluate: class count does not match the model config");

  EvalResult res;
  res.per_class.assign(ds.num_classes, 0.0);
  std::vector<std::size_t> per_class_total(ds.num_classes, 0);
  Fwd f;  // value mode, frozen inference
  double loss_sum = 0.0;
  std::size_t correct = 0;
  constexpr std::size_t kBatch = 64;
  for (std::size_t start = 0; start < ds.count(); start += kBatch) {
    const std::size_t stop = std::min(ds.count(), start + kBatch);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor logits = batch_logits(model, ds, stats, idx, f);
    std::vector<int> labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = ds.labels[idx[i]];
    loss_sum += cross_entropy(logits, labels).item() * static_cast<double>(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::size_t pred = argmax_row(logits, i);
      per_class_total[labels[i]]++;
      if (pred == static_cast<std::size_t>(labels[i])) {
        ++correct;
        res.per_class[labels[i]] += 1.0;
      }
    }
  }
  for (std::size_t k = 0; k < res.per_class.size(); ++k)
    if (per_class_total[k] > 0) res.per_class[k] /= static_cast<double>(per_class_total[k]);
  res.loss = loss_sum / static_cast<double>(ds.count());
  res.accuracy = static_cast<double>(correct) / static_cast<double>(ds.count());
  return res;
}

std::vector<double> measure_kappa(MixerModel& model, const Dataset& ds, const NormStats& stats,
                                  int samples, int n_iters) {
  std::vector<double> kappas;
  if (model.config().token_mixer != TokenMixerKind::IMlp) return kappas;
  const std::size_t n = std::min<std::size_t>(ds.count(), static_cast<std::size_t>(samples));
  const std::size_t layers = model.blocks().size();
  kappas.assign(layers, 0.0);
  FiniteCheckGuard guard(false);  // diverging iterates are data here, not an error
  Fwd f;
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> img = normalize_image(ds, i, stats);
    std::vector<FpaTrace> traces;
    try {
      model.forward(f, img, &traces, n_iters);
    } catch (const Diverged&) {
      for (double& k : kappas) k = std::numeric_limits<double>::infinity();
      return kappas;
    }
    for (std::size_t l = 0; l < traces.size() && l < layers; ++l) {
      const auto& norms = traces[l].norms;
      for (std::size_t a = 0; a + 1 < norms.size(); ++a) {
        if (norms[a] > 0.0) {
          const double ratio = norms[a + 1] / norms[a];
          kappas[l] = std::max(kappas[l], ratio);
        }
      }
    }
  }
  return kappas;
}

std::string metrics_csv(const std::vector<MetricsRow>& history) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc,seconds\n";
  for (const MetricsRow& r : history) {
    out += std::to_string(r.epoch);
    out += ',' + fmt(r.train_loss) + ',' + fmt(r.train_acc) + ',';
    if (r.has_val) out += fmt(r.val_loss);
    out += ',';
    if (r.has_val) out += fmt(r.val_acc);
    out += ',' + fmt(r.seconds) + '\n';
  }
  return out;
}

std::string kappa_csv(const std::vector<KappaRow>& rows) {
  std::string out = "epoch,layer,kappa\n";
  for (const KappaRow& r : rows)
    out += std::to_string(r.epoch) + ',' + std::to_string(r.layer) + ',' + fmt(r.kappa) + '\n';
  return out;
}

TrainResult train(const MixerConfig& model_cfg, const TrainSettings& settings,
                  const Dataset& train_set, const Dataset& val_set, const std::string& out_dir,
                  std::ostream* log) {
  train_set.validate();
  val_set.validate();
  if (train_set.image_size() != static_cast<std::size_t>(model_cfg.channels_in) *
                                    model_cfg.image_size * model_cfg.image_size)
    throw ShapeError("train: dataset dimensions do not match the model config");
  if (train_set.num_classes != model_cfg.num_classes)
    throw ShapeError("train: dataset class count does not match the model config");

  std::filesystem::create_directories(out_dir);
  MixerModel model(model_cfg);
  const NormStats stats = compute_norm_stats(train_set);
  AdamW opt(settings.opt.lr, settings.opt.beta1, settings.opt.beta2, settings.opt.eps,
            settings.opt.weight_decay);
  RandomStream shuffle_rs = RandomStream::for_label(model_cfg.seed, "shuffle");
  RandomStream dropout_rs = RandomStream::for_label(model_cfg.seed, "dropout");
  Tape tape;

  TrainResult result;
  result.metrics_path = out_dir + "/metrics.csv";
  result.checkpoint_path = out_dir + "/best.hmx";
  const bool track_kappa = model_cfg.token_mixer == TokenMixerKind::IMlp;
  if (track_kappa) result.kappa_path = out_dir + "/kappa.csv";

  std::vector<std::size_t> order(train_set.count());
  std::iota(order.begin(), order.end(), 0);

  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= settings.epochs; ++epoch) {
    shuffle_rs.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(settings.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(settings.batch_size));
      const std::span<const std::size_t> batch(order.data() + start, stop - start);

      Fwd f{&tape, true, &dropout_rs};
      Tensor logits = batch_logits(model, train_set, stats, batch, f);
      std::vector<int> labels(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = train_set.labels[batch[i]];
      Tensor loss = cross_entropy(logits, labels, settings.label_smoothing);

      if (!std::isfinite(loss.item())) {
        double gnorm = 0.0;
        for (Parameter* p : model.parameters())
          for (double g : p->grad.data()) gnorm += g * g;
        throw Diverged("train: loss is not finite at epoch " + std::to_string(epoch) +
                       " (lr " + fmt(opt.lr()) + ", last grad norm " + fmt(std::sqrt(gnorm)) +
                       ")");
      }

      loss_sum += loss.item() * static_cast<double>(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i)
        if (argmax_row(logits, i) == static_cast<std::size_t>(labels[i])) ++correct;

      tape.backward(loss);
      model.zero_grads();
      for (Parameter* p : model.parameters()) p->accumulate_from(tape);
      opt.step(model.parameters());
      tape.clear();
    }

    MetricsRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(order.size());
    row.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    if (epoch % settings.eval_every == 0 || epoch == settings.epochs) {
      const EvalResult ev = evaluate(model, stats, val_set);
      row.has_val = true;
      row.val_loss = ev.loss;
      row.val_acc = ev.accuracy;
      if (ev.accuracy > result.best_val_acc) {
        result.best_val_acc = ev.accuracy;
        result.best_epoch = epoch;
        save_checkpoint(result.checkpoint_path, model, stats);
      }
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(row);

    if (track_kappa) {
      const std::vector<double> kappas = measure_kappa(model, train_set, stats, 8);
      for (std::size_t l = 0; l < kappas.size(); ++l)
        result.kappa_log.push_back({epoch, static_cast<int>(l), kappas[l]});
    }

    if (log) {
      (*log) << "epoch " << epoch << " train_loss " << fmt(row.train_loss) << " train_acc "
             << fmt(row.train_acc);
      if (row.has_val)
        (*log) << " val_loss " << fmt(row.val_loss) << " val_acc " << fmt(row.val_acc);
      (*log) << "\n";
    }

    const bool train_ok = settings.stop_train_acc <= 0.0 || row.train_acc >= settings.stop_train_acc;
    const bool val_ok = settings.stop_val_acc <= 0.0 ||
                        (row.has_val && row.val_acc >= settings.stop_val_acc);
    const bool stopping_enabled = settings.stop_train_acc > 0.0 || settings.stop_val_acc > 0.0;
    if (stopping_enabled && train_ok && val_ok) break;
  }

  if (result.best_epoch < 0) {
    // eval cadence never fired: checkpoint the final state
    result.best_epoch = static_cast<int>(result.history.size());
    save_checkpoint(result.checkpoint_path, model, stats);
  }

  std::ofstream mf(result.metrics_path, std::ios::trunc);
  mf << metrics_csv(result.history);
  if (track_kappa) {
    std::ofstream kf(result.kappa_path, std::ios::trunc);
    kf << kappa_csv(result.kappa_log);
  }
  return result;
}

}  // namespace hopmix
