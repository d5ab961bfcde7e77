#include "hopmix/cli.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hopmix/checkpoint.hpp"
#include "hopmix/config.hpp"
#include "hopmix/hopfield.hpp"
#include "hopmix/nn.hpp"
#include "hopmix/train.hpp"

namespace hopmix {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

Config load_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  Config cfg;
  if (!config_path.empty()) cfg = Config::from_file(config_path);
  for (const std::string& o : overrides) cfg.set(o);
  cfg.validate_keys();
  return cfg;
}

int cmd_gen_data(const Config& cfg, const std::string& out, const std::string& out_val) {
  const int classes = static_cast<int>(cfg.get_int("data.classes", 10));
  const int per_class = static_cast<int>(cfg.get_int("data.per_class", 200));
  const int val_per_class = static_cast<int>(cfg.get_int("data.val_per_class", 0));
  const int channels = static_cast<int>(cfg.get_int("data.channels", 1));
  const int height = static_cast<int>(cfg.get_int("data.height", 16));
  const int width = static_cast<int>(cfg.get_int("data.width", 16));
  const double noise = cfg.get_double("data.noise", 0.15);
  const std::uint64_t seed = cfg.get_u64("seed", 42);

  Dataset all = gen_synthetic(classes, per_class + val_per_class, channels, height, width, noise,
                              seed);
  if (val_per_class > 0) {
    auto [train_part, val_part] = split_per_class(all, per_class);
    save_imgb(out, train_part);
    if (out_val.empty()) throw ConfigError("gen-data: data.val_per_class set but no --out-val");
    save_imgb(out_val, val_part);
    std::cout << "wrote " << train_part.count() << " train samples to " << out << " and "
              << val_part.count() << " val samples to " << out_val << "\n";
  } else {
    save_imgb(out, all);
    std::cout << "wrote " << all.count() << " samples to " << out << "\n";
  }
  return 0;
}

int cmd_train(const Config& cfg, const std::string& data_path, const std::string& val_path,
              const std::string& out_dir) {
  const MixerConfig mc = mixer_config_from(cfg);
  const TrainSettings ts = train_settings_from(cfg);
  const Dataset train_set = load_imgb(data_path);
  const Dataset val_set = val_path.empty() ? train_set : load_imgb(val_path);
  const TrainResult res = train(mc, ts, train_set, val_set, out_dir, &std::cout);
  std::cout << "best epoch " << res.best_epoch << " val_acc " << fmt(res.best_val_acc)
            << "\ncheckpoint " << res.checkpoint_path << "\nmetrics " << res.metrics_path << "\n";
  if (!res.kappa_path.empty()) std::cout << "kappa log " << res.kappa_path << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
  const Dataset ds = load_imgb(data_path);
  const EvalResult res = evaluate(*loaded.model, loaded.stats, ds);
  std::cout << "loss " << fmt(res.loss) << "\naccuracy " << fmt(res.accuracy) << "\n";
  for (std::size_t k = 0; k < res.per_class.size(); ++k)
    std::cout << "class " << k << " accuracy " << fmt(res.per_class[k]) << "\n";
  return 0;
}

void dump_iterate(const std::string& dir, int layer, int sample, int a, const Tensor& t) {
  // Binary header: "HMXT" | u32 version=1 | u32 layer | u32 sample | u32 a |
  // u32 rank | u64 dims... | f64 data (little-endian).
  std::string out;
  out += "HMXT";
  auto put_u32 = [&out](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put_u32(1);
  put_u32(static_cast<std::uint32_t>(layer));
  put_u32(static_cast<std::uint32_t>(sample));
  put_u32(static_cast<std::uint32_t>(a));
  put_u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    const auto v = static_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  const std::size_t off = out.size();
  out.resize(off + t.numel() * sizeof(double));
  std::memcpy(out.data() + off, t.data().data(), t.numel() * sizeof(double));
  const std::string path = dir + "/iter_layer" + std::to_string(layer) + "_sample" +
                           std::to_string(sample) + "_a" + std::to_string(a) + ".bin";
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("write failed: " + path);
}

int cmd_probe(const Config& cfg, const std::string& checkpoint_path, const std::string& data_path,
              const std::string& out_csv, const std::string& dump_dir) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
  if (loaded.cfg.token_mixer != TokenMixerKind::IMlp)
    throw Error("probe: checkpoint does not use the iMLP token mixer");
  const Dataset ds = load_imgb(data_path);
  const int n_iter = static_cast<int>(cfg.get_int("probe.n_iter", 8));
  const int samples =
      static_cast<int>(cfg.get_int("probe.samples", std::min<std::int64_t>(16, ds.count())));
  if (!dump_dir.empty()) std::filesystem::create_directories(dump_dir);

  std::string csv = "layer_index,sample_index,a,norm_a,cos_a\n";
  Fwd f;
  for (int s = 0; s < samples && s < static_cast<int>(ds.count()); ++s) {
    const std::vector<double> img = normalize_image(ds, static_cast<std::size_t>(s), loaded.stats);
    std::vector<FpaTrace> traces;
    loaded.model->forward(f, img, &traces, n_iter);
    for (std::size_t l = 0; l < traces.size(); ++l) {
      const FpaTrace& tr = traces[l];
      for (std::size_t a = 0; a < tr.norms.size(); ++a) {
        csv += std::to_string(l) + ',' + std::to_string(s) + ',' + std::to_string(a) + ',' +
               fmt(tr.norms[a]) + ',' + fmt(tr.cosines[a]) + '\n';
      }
      if (!dump_dir.empty())
        for (std::size_t a = 0; a < tr.iterates.size(); ++a)
          dump_iterate(dump_dir, static_cast<int>(l), s, static_cast<int>(a), tr.iterates[a]);
    }
  }
  std::ofstream out(out_csv, std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + out_csv);
  out << csv;
  std::cout << "probe written to " << out_csv << "\n";
  return 0;
}

int cmd_hopfield_sim(const Config& cfg, const std::string& out_csv) {
  std::vector<double> size_list = cfg.get_double_list("hopfield.sizes");
  if (size_list.empty()) size_list = {16, 8};
  std::vector<std::size_t> sizes;
  for (double s : size_list) sizes.push_back(static_cast<std::size_t>(s));

  std::vector<double> tau = cfg.get_double_list("hopfield.tau");
  if (tau.empty()) {
    tau.resize(sizes.size());
    double t = 1.0;
    for (std::size_t i = 0; i < tau.size(); ++i, t *= 0.5) tau[i] = t;
  }
  if (tau.size() != sizes.size())
    throw ConfigError("hopfield.tau must list one value per layer");

  std::vector<std::string> lagr_names = cfg.get_string_list("hopfield.lagrangians");
  std::vector<LagrangianSpec> lagr;
  if (lagr_names.empty()) {
    lagr.push_back(LagrangianSpec::norm_lv());
    for (std::size_t i = 1; i < sizes.size(); ++i) lagr.push_back(LagrangianSpec::sum_phi_gelu());
  } else {
    if (lagr_names.size() != sizes.size())
      throw ConfigError("hopfield.lagrangians must list one value per layer");
    for (const std::string& n : lagr_names) {
      if (n == "norm")
        lagr.push_back(LagrangianSpec::norm_lv());
      else if (n == "gelu")
        lagr.push_back(LagrangianSpec::sum_phi_gelu());
      else
        throw ConfigError("hopfield.lagrangians entries must be 'norm' or 'gelu', got '" + n +
                          "'");
    }
  }

  const double alpha = cfg.get_double("hopfield.alpha", 1.0);
  const double weight_scale = cfg.get_double("hopfield.weight_scale", 0.5);
  const std::uint64_t seed = cfg.get_u64("seed", 42);
  const double tau_min = *std::min_element(tau.begin(), tau.end());
  const double dt = cfg.get_double("hopfield.dt", tau_min / 100.0);
  const auto steps = static_cast<std::size_t>(cfg.get_int("hopfield.steps", 1000));
  const auto record_every = static_cast<std::size_t>(cfg.get_int("hopfield.record_every", 1));

  RandomStream rs = RandomStream::for_label(seed, "hopfield-sim");
  std::vector<Tensor> up;
  for (std::size_t a = 0; a + 1 < sizes.size(); ++a) {
    Tensor w({sizes[a + 1], sizes[a]});
    const double scale = weight_scale / std::sqrt(static_cast<double>(sizes[a]));
    for (double& v : w.data()) v = scale * rs.gaussian();
    up.push_back(std::move(w));
  }
  const HopfieldSystem sys =
      HopfieldSystem::symmetric_system(sizes, std::move(up), tau, lagr, alpha);

  State s0;
  for (std::size_t a = 0; a < sizes.size(); ++a) {
    Tensor x({sizes[a]});
    for (double& v : x.data()) v = rs.gaussian();
    s0.x.push_back(std::move(x));
  }
  const Trajectory traj = integrate(sys, s0, dt, steps, record_every);

  std::string csv = "t";
  for (std::size_t a = 0; a < sizes.size(); ++a) csv += ",norm_l" + std::to_string(a + 1);
  const bool has_energy = !traj.energies.empty();
  if (has_energy) csv += ",energy";
  csv += '\n';
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    csv += fmt(traj.times[i]);
    for (const Tensor& x : traj.states[i].x) {
      double norm = 0.0;
      for (double v : x.data()) norm += v * v;
      csv += ',' + fmt(std::sqrt(norm));
    }
    if (has_energy) csv += ',' + fmt(traj.energies[i]);
    csv += '\n';
  }
  std::ofstream out(out_csv, std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + out_csv);
  out << csv;
  std::cout << "trajectory written to " << out_csv << " (" << traj.states.size() << " rows)\n";
  return 0;
}

int cmd_gradcheck(const Config& cfg) {
  MixerConfig mc = mixer_config_from(cfg);
  const double step = cfg.get_double("gradcheck.step", 1e-5);
  const auto samples = static_cast<std::size_t>(cfg.get_int("gradcheck.samples", 6));
  const int batch = static_cast<int>(cfg.get_int("gradcheck.batch", 2));

  MixerModel model(mc);
  model.converge_norms(20);
  model.set_freeze_norm(true);

  const Dataset probe = gen_synthetic(mc.num_classes, std::max(1, batch / mc.num_classes + 1),
                                      mc.channels_in, mc.image_size, mc.image_size, 0.2,
                                      mc.seed + 1);
  const NormStats stats = compute_norm_stats(probe);
  std::vector<std::vector<double>> images;
  std::vector<int> labels;
  RandomStream rs = RandomStream::for_label(mc.seed, "gradcheck");
  for (int b = 0; b < batch; ++b) {
    const auto idx = static_cast<std::size_t>(rs.bounded(probe.count()));
    images.push_back(normalize_image(probe, idx, stats));
    labels.push_back(static_cast<int>(probe.labels[idx]));
  }

  auto loss_fn = [&](Fwd& f) {
    std::vector<Tensor> rows;
    for (const auto& img : images) rows.push_back(model.forward(f, img));
    return cross_entropy(stack_rows(rows), labels, 0.1);
  };
  const GradCheckResult res = grad_check(loss_fn, model.parameters(), step, samples);
  std::cout << "max relative error " << fmt(res.max_rel_error) << " (" << res.worst << ")\n";
  return res.max_rel_error <= 1e-5 ? 0 : 2;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Hopfield/Mixer numerical laboratory"};
  app.require_subcommand(1);

  std::string config_path, out, out_val, data_path, val_path, checkpoint_path, dump_dir;
  std::vector<std::string> overrides;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key = value config file");
    sub->add_option("--set", overrides, "override, key=value (repeatable)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic IMGB dataset");
  add_common(gen);
  gen->add_option("--out", out, "output IMGB path")->required();
  gen->add_option("--out-val", out_val, "validation IMGB path (with data.val_per_class)");

  CLI::App* tr = app.add_subcommand("train", "train a model");
  add_common(tr);
  tr->add_option("--data", data_path, "training IMGB file")->required();
  tr->add_option("--val", val_path, "validation IMGB file (defaults to --data)");
  tr->add_option("--out", out, "output directory")->required();

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  ev->add_option("--data", data_path, "IMGB file")->required();

  CLI::App* pr = app.add_subcommand("probe", "fixed-point convergence diagnostics");
  add_common(pr);
  pr->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  pr->add_option("--data", data_path, "IMGB file")->required();
  pr->add_option("--out", out, "output CSV path")->required();
  pr->add_option("--dump-iterates", dump_dir, "directory for raw iterate tensors");

  CLI::App* hs = app.add_subcommand("hopfield-sim", "integrate a Hopfield system");
  add_common(hs);
  hs->add_option("--out", out, "output CSV path")->required();

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  }

  try {
    const Config cfg = load_config(config_path, overrides);
    if (gen->parsed()) return cmd_gen_data(cfg, out, out_val);
    if (tr->parsed()) return cmd_train(cfg, data_path, val_path, out);
    if (ev->parsed()) return cmd_eval(checkpoint_path, data_path);
    if (pr->parsed()) return cmd_probe(cfg, checkpoint_path, data_path, out, dump_dir);
    if (hs->parsed()) return cmd_hopfield_sim(cfg, out);
    if (gc->parsed()) return cmd_gradcheck(cfg);
    std::cerr << app.help();
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace hopmix
