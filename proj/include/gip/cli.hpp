#pragma once

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gip/ascent.hpp"
#include "gip/container.hpp"
#include "gip/image.hpp"
#include "gip/pathspace.hpp"
#include "gip/pullback.hpp"
#include "gip/render.hpp"
#include "gip/stability.hpp"
#include "gip/verify.hpp"

namespace gip {
namespace cli {

struct GateFlags {
  std::string gate = "sigmoid";
  double temp = 0.3;
  std::string pool_gate = "softmax";
  double pool_temp = 0.3;

  GatingSpec spec() const {
    GatingSpec s = gate == "hard" ? GatingSpec::hard() : GatingSpec::sigmoid(temp);
    s.pool_mode = pool_gate == "hard" ? PoolMode::HardPool : PoolMode::SoftmaxPool;
    s.pool_temperature = pool_temp;
    return s;
  }
};

inline void add_gate_flags(CLI::App* cmd, GateFlags& flags) {
  cmd->add_option("--gate", flags.gate, "Backward gating: hard|sigmoid")
      ->check(CLI::IsMember({"hard", "sigmoid"}))
      ->capture_default_str();
  cmd->add_option("--temp", flags.temp, "Sigmoid gate temperature")->capture_default_str();
  cmd->add_option("--pool-gate", flags.pool_gate, "Pool backward: hard|softmax")
      ->check(CLI::IsMember({"hard", "softmax"}))
      ->capture_default_str();
  cmd->add_option("--pool-temp", flags.pool_temp, "Softmax pool temperature")->capture_default_str();
}

inline std::string strip_extension(const std::string& path) {
  const auto dot = path.rfind('.');
  const auto slash = path.rfind('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return path;
  return path.substr(0, dot);
}

inline int edit_distance(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::string nearest_flag(const std::string& token, const std::vector<std::string>& known) {
  std::string best;
  int best_d = 4;  // only suggest close matches
  for (const std::string& k : known) {
    const int d = edit_distance(token, k);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

inline void collect_flags(const CLI::App* app, std::vector<std::string>& out) {
  for (const CLI::Option* opt : app->get_options()) {
    for (const std::string& n : opt->get_lnames()) out.push_back("--" + n);
  }
  for (const CLI::App* sub : app->get_subcommands({})) collect_flags(sub, out);
}

// Model-space pullback mapped to pixel scale (chain rule of the input
// standardization), reshaped as one grid cell.
inline Vec pullback_cell(const Network& net, const PullbackVector& pb) {
  return detail::direction_to_pixel_space(net, pb.vector);
}

struct CellGeometry {
  int channels = 1, h = 1, w = 1;
};

inline CellGeometry cell_geometry(const Shape& shape) {
  CellGeometry g;
  if (shape.dims.size() == 3) {
    g.channels = shape.dims[0];
    g.h = shape.dims[1];
    g.w = shape.dims[2];
  } else {
    g.h = 1;
    g.w = shape.numel();
  }
  if (g.channels != 1 && g.channels != 3) {
    // Render multi-channel features as a single row of channels.
    g.w *= g.channels;
    g.channels = 1;
  }
  return g;
}

inline void write_grid_artifacts(const ImageGrid& grid, const std::string& out_path,
                                 const std::vector<int>& cells_shape) {
  const RenderResult res = render_grid(grid);
  write_file(out_path, res.png);
  const std::string base = strip_extension(out_path);
  std::vector<int> canvas_shape = {res.channels, res.height, res.width};
  write_npy(base + ".raw.npy", res.canvas, canvas_shape);
  Vec cells_flat;
  for (const Vec& c : grid.cells) cells_flat.insert(cells_flat.end(), c.begin(), c.end());
  write_npy(base + ".cells.npy", cells_flat, cells_shape);
  std::cout << "wrote " << out_path << ", " << base << ".raw.npy, " << base << ".cells.npy\n";
}

// ---------------------------------------------------------------------------
// Subcommand drivers

struct PullbackArgs {
  std::string model;
  std::vector<std::string> images;
  std::vector<int> classes;
  GateFlags gates;
  std::string out = "pullback_grid.png";
  bool no_scale_each = false;
};

inline int run_pullback(const PullbackArgs& a) {
  const Network net = load_model(a.model);
  std::vector<int> classes = a.classes;
  if (classes.empty()) {
    for (int c = 0; c < static_cast<int>(net.heads.size()); ++c) classes.push_back(c);
  }
  const GatingSpec spec = a.gates.spec();
  const CellGeometry geo = cell_geometry(net.input_shape);

  ImageGrid grid;
  grid.rows = static_cast<int>(a.images.size());
  grid.cols = static_cast<int>(classes.size());
  grid.channels = geo.channels;
  grid.cell_h = geo.h;
  grid.cell_w = geo.w;
  grid.scale_each = !a.no_scale_each;

  for (const std::string& img_path : a.images) {
    const Image img = load_image(img_path);
    if (img.data.size() != static_cast<std::size_t>(net.input_shape.numel())) {
      throw ShapeError("image " + img_path + " has " + std::to_string(img.data.size()) +
                       " values, model expects " + net.input_shape.str());
    }
    const ForwardTrace trace = forward(net, detail::normalize_input(net, img.data));
    for (int c : classes) {
      grid.cells.push_back(pullback_cell(net, pullback_head(net, trace, spec, c)));
    }
  }
  write_grid_artifacts(grid, a.out, {grid.rows, grid.cols, geo.channels, geo.h, geo.w});
  return 0;
}

struct AscentArgs {
  std::string model;
  std::string image;
  int target_class = 0;
  AscentConfig cfg;
  GateFlags gates;
  int snapshot_at = -1;
  std::string out = "ascent_grid.png";
};

inline int run_ascent(const AscentArgs& a) {
  const Network net = load_model(a.model);
  const Image img = load_image(a.image);
  AscentConfig cfg = a.cfg;
  cfg.target_class = a.target_class;
  cfg.gating = a.gates.spec();
  const AscentTrajectory traj = pga_run(net, img.data, cfg);

  const CellGeometry geo = cell_geometry(net.input_shape);
  auto emit = [&](const std::string& path, const Vec& final_img) {
    ImageGrid grid;
    grid.rows = 1;
    grid.cols = 3;
    grid.channels = geo.channels;
    grid.cell_h = geo.h;
    grid.cell_w = geo.w;
    grid.cells = {traj.inputs.front(), final_img, [&] {
                    Vec d(final_img.size());
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] = final_img[i] - traj.inputs.front()[i];
                    return d;
                  }()};
    write_grid_artifacts(grid, path, {1, 3, geo.channels, geo.h, geo.w});
  };
  emit(a.out, traj.inputs.back());
  if (a.snapshot_at >= 0 && a.snapshot_at < static_cast<int>(traj.inputs.size())) {
    emit(strip_extension(a.out) + "_step" + std::to_string(a.snapshot_at) + ".png", traj.inputs[a.snapshot_at]);
  }
  write_npy(strip_extension(a.out) + ".logits.npy", traj.target_logits,
            {static_cast<int>(traj.target_logits.size())});
  std::cout << "target logits:";
  for (double v : traj.target_logits) std::printf(" %.6g", v);
  std::cout << "\n";
  return 0;
}

struct KernelArgs {
  std::string model;
  std::string image_a;
  std::string image_b;
  GateFlags gates;
};

inline int run_kernel(const KernelArgs& a) {
  const Network net = load_model(a.model);
  const Image ia = load_image(a.image_a);
  const Image ib = load_image(a.image_b);
  const double k = path_kernel(net, detail::normalize_input(net, ia.data), detail::normalize_input(net, ib.data),
                               a.gates.spec());
  std::printf("%.17g\n", k);
  return 0;
}

struct VerifyArgs {
  int nets = 100;
  int inputs = 10;
  std::uint64_t seed = 314;
  double tol = 1e-9;
};

inline int run_verify(const VerifyArgs& a) {
  VerifyOptions opt;
  opt.nets = a.nets;
  opt.inputs_per_net = a.inputs;
  opt.seed = a.seed;
  opt.tolerance = a.tol;
  const VerifyReport report = run_verification(opt);
  std::printf("%-42s %12s %10s  %s\n", "identity", "max dev", "tol", "status");
  for (const VerifyRow& r : report.rows) {
    std::printf("%-42s %12.3e %10.0e  %s\n", r.identity.c_str(), r.max_deviation, r.tolerance,
                r.pass ? "ok" : "FAIL");
  }
  if (!report.all_pass()) throw Error("verification failed");
  return 0;
}

struct TrainStabilityArgs {
  std::vector<int> widths = {2, 8, 8, 2};
  int epochs = 50;
  double lr = 0.05;
  int batch = 32;
  std::vector<int> snapshots = {0, 1, 2, 5, 10, 20, 50};
  double temp = 0.3;
  std::uint64_t seed = 314;
  int train_per_class = 256;
  int eval_size = 512;
  double separation = 4.0;
  std::string out = "stability_report.json";
};

inline int run_train_stability(const TrainStabilityArgs& a) {
  TrainConfig cfg;
  cfg.dataset.points_per_class = a.train_per_class;
  cfg.dataset.separation = a.separation;
  cfg.epochs = a.epochs;
  cfg.learning_rate = a.lr;
  cfg.batch_size = a.batch;
  cfg.snapshot_epochs = a.snapshots;
  cfg.seed = a.seed;

  Rng init_rng(a.seed);
  Network net = make_classifier_net(a.widths, init_rng);
  TrainLog log;
  const std::vector<Snapshot> snaps = train_sgd(std::move(net), cfg, &log);

  DatasetSpec eval_spec = cfg.dataset;
  eval_spec.points_per_class = a.eval_size / 2;
  const Dataset eval = make_two_gaussians(eval_spec, a.seed + 1);

  StabilityReport rep = stability_report(snaps, eval.inputs, GatingSpec::sigmoid(a.temp));
  rep.train_loss = log.epoch_loss;
  rep.train_accuracy = log.epoch_accuracy;
  rep.final_train_accuracy = log.epoch_accuracy.empty() ? 0.0 : log.epoch_accuracy.back();

  nlohmann::json j;
  j["config"] = {{"widths", a.widths},       {"epochs", a.epochs},           {"learning_rate", a.lr},
                 {"batch_size", a.batch},    {"snapshot_epochs", a.snapshots}, {"seed", a.seed},
                 {"train_per_class", a.train_per_class}, {"eval_size", a.eval_size}, {"separation", a.separation}};
  j["snapshot_epochs"] = rep.snapshot_epochs;
  j["rho"] = rep.rho;
  j["flip_rate"] = rep.flip_rate;
  j["train_loss"] = rep.train_loss;
  j["train_accuracy"] = rep.train_accuracy;
  j["final_train_accuracy"] = rep.final_train_accuracy;
  j["rho_threshold"] = rep.rho_threshold;
  if (rep.rho_crossing_epoch >= 0) {
    j["rho_crossing_epoch"] = rep.rho_crossing_epoch;
  } else {
    j["rho_crossing_epoch"] = nullptr;
  }
  j["gate_temperature"] = rep.gate_temperature;

  std::ofstream f(a.out);
  if (!f) throw Error("cannot open " + a.out + " for writing");
  f << j.dump(2) << "\n";
  std::printf("final train accuracy %.4f, rho crossing epoch %s, report written to %s\n",
              rep.final_train_accuracy,
              rep.rho_crossing_epoch >= 0 ? std::to_string(rep.rho_crossing_epoch).c_str() : "none", a.out.c_str());
  return 0;
}

}  // namespace cli

// Entry point shared by the binary and the tests. args excludes the program
// name. Exit codes: 0 success, 1 usage error, 2 runtime error.
inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"ReLU-network attribution toolkit: gating-induced pullbacks, a path-space oracle, "
               "projected gradient ascent and gate-stability measurements",
               "gip"};
  app.require_subcommand(1);

  cli::PullbackArgs pb;
  CLI::App* cmd_pb = app.add_subcommand("pullback", "Render a grid of head pullbacks (rows: images, cols: classes)");
  cmd_pb->add_option("--model", pb.model, "Weight container")->required();
  cmd_pb->add_option("--image", pb.images, "Input image (.ppm/.pgm/.npy); repeatable")->required();
  cmd_pb->add_option("--classes", pb.classes, "Target classes (default: every head)")->delimiter(',');
  cli::add_gate_flags(cmd_pb, pb.gates);
  cmd_pb->add_option("--out", pb.out, "Output PNG path")->capture_default_str();
  cmd_pb->add_flag("--no-scale-each", pb.no_scale_each, "Normalize the grid globally instead of per cell");

  cli::AscentArgs asc;
  CLI::App* cmd_asc = app.add_subcommand("ascent", "Projected gradient ascent along the pullback direction");
  cmd_asc->add_option("--model", asc.model, "Weight container")->required();
  cmd_asc->add_option("--image", asc.image, "Starting image (.ppm/.pgm/.npy)")->required();
  cmd_asc->add_option("--class", asc.target_class, "Target class")->required();
  cmd_asc->add_option("--steps", asc.cfg.steps, "Ascent iterations")->capture_default_str();
  cmd_asc->add_option("--step-norm", asc.cfg.step_norm, "L2 length of each step")->capture_default_str();
  cmd_asc->add_option("--radius", asc.cfg.radius, "L2 projection radius around the start")->capture_default_str();
  cli::add_gate_flags(cmd_asc, asc.gates);
  cmd_asc->add_option("--snapshot-at", asc.snapshot_at, "Also emit the grid after this step");
  cmd_asc->add_option("--out", asc.out, "Output PNG path")->capture_default_str();

  cli::KernelArgs ker;
  CLI::App* cmd_ker = app.add_subcommand("kernel", "Product kernel between two inputs");
  cmd_ker->add_option("--model", ker.model, "Weight container")->required();
  cmd_ker->add_option("--image", ker.image_a, "First input")->required();
  cmd_ker->add_option("--image2", ker.image_b, "Second input")->required();
  cli::add_gate_flags(cmd_ker, ker.gates);

  cli::VerifyArgs ver;
  CLI::App* cmd_ver = app.add_subcommand("verify", "Path-space oracle suite on random dense networks");
  cmd_ver->add_option("--nets", ver.nets, "Number of sampled networks")->capture_default_str();
  cmd_ver->add_option("--inputs", ver.inputs, "Inputs per network")->capture_default_str();
  cmd_ver->add_option("--seed", ver.seed, "Sampling seed")->capture_default_str();
  cmd_ver->add_option("--tol", ver.tol, "Relative tolerance for the identities")->capture_default_str();

  cli::TrainStabilityArgs ts;
  CLI::App* cmd_ts = app.add_subcommand("train-stability", "Train a toy dense net and measure gate stability");
  cmd_ts->add_option("--widths", ts.widths, "Layer widths, e.g. 2,8,8,2")->delimiter(',')->capture_default_str();
  cmd_ts->add_option("--epochs", ts.epochs, "Training epochs")->capture_default_str();
  cmd_ts->add_option("--lr", ts.lr, "Learning rate")->capture_default_str();
  cmd_ts->add_option("--batch", ts.batch, "Batch size")->capture_default_str();
  cmd_ts->add_option("--snapshots", ts.snapshots, "Snapshot epochs")->delimiter(',')->capture_default_str();
  cmd_ts->add_option("--temp", ts.temp, "Excitation gate temperature")->capture_default_str();
  cmd_ts->add_option("--seed", ts.seed, "Data/init seed")->capture_default_str();
  cmd_ts->add_option("--train-size", ts.train_per_class, "Training points per class")->capture_default_str();
  cmd_ts->add_option("--eval-size", ts.eval_size, "Held-out evaluation points")->capture_default_str();
  cmd_ts->add_option("--separation", ts.separation, "Distance between class means per axis")->capture_default_str();
  cmd_ts->add_option("--out", ts.out, "Report path (JSON)")->capture_default_str();

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::vector<std::string> known;
    cli::collect_flags(&app, known);
    const std::string what = e.what();
    std::size_t at = what.find("--");
    if (at != std::string::npos) {
      std::size_t end = at;
      while (end < what.size() && !std::isspace(static_cast<unsigned char>(what[end]))) ++end;
      const std::string suggestion = cli::nearest_flag(what.substr(at, end - at), known);
      if (!suggestion.empty()) std::cerr << "did you mean " << suggestion << "?\n";
    }
    return 1;
  }

  try {
    if (cmd_pb->parsed()) return cli::run_pullback(pb);
    if (cmd_asc->parsed()) return cli::run_ascent(asc);
    if (cmd_ker->parsed()) return cli::run_kernel(ker);
    if (cmd_ver->parsed()) return cli::run_verify(ver);
    if (cmd_ts->parsed()) return cli::run_train_stability(ts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace gip
