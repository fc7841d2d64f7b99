#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "gip/network.hpp"

namespace gip {

// ---------------------------------------------------------------------------
// Synthetic data

struct DatasetSpec {
  int points_per_class = 256;
  double separation = 4.0;  // distance between class means along each axis
  double stddev = 1.0;
};

struct Dataset {
  std::vector<Vec> inputs;
  std::vector<int> labels;
};

// Two 2-D Gaussians at (-s/2, -s/2) and (s/2, s/2); interleaved so batches
// stay balanced even without shuffling.
inline Dataset make_two_gaussians(const DatasetSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  const double half = spec.separation / 2.0;
  for (int i = 0; i < spec.points_per_class; ++i) {
    for (int c = 0; c < 2; ++c) {
      const double cx = c == 0 ? -half : half;
      ds.inputs.push_back({cx + spec.stddev * rng.normal(), cx + spec.stddev * rng.normal()});
      ds.labels.push_back(c);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Toy classifier and SGD

// Dense backbone with gated hidden layers and a linear output stage; heads
// are the identity basis, so logits coincide with the last affine's output.
// widths = {d0, h1, ..., hk, classes}.
inline Network make_classifier_net(const std::vector<int>& widths, Rng& rng) {
  if (widths.size() < 2) throw StructureError("classifier needs at least input and output widths");
  Network net;
  net.input_shape = Shape{{widths.front()}};
  for (std::size_t l = 1; l < widths.size(); ++l) {
    Affine a;
    a.in = widths[l - 1];
    a.out = widths[l];
    const double scale = std::sqrt(2.0 / a.in);
    a.weight.resize(static_cast<std::size_t>(a.in) * a.out);
    for (double& v : a.weight) v = scale * rng.normal();
    a.bias.assign(a.out, 0.0);
    if (l + 1 < widths.size()) {
      net.stages.push_back(std::move(a));
      net.stages.push_back(GatePoint{static_cast<int>(l)});
    } else {
      a.linear_output = true;
      net.stages.push_back(std::move(a));
    }
  }
  const int classes = widths.back();
  net.heads.assign(classes, Vec(classes, 0.0));
  for (int c = 0; c < classes; ++c) net.heads[c][c] = 1.0;
  return net;
}

struct TrainConfig {
  DatasetSpec dataset;
  int epochs = 50;
  double learning_rate = 0.05;
  int batch_size = 32;
  std::vector<int> snapshot_epochs = {0, 1, 2, 5, 10, 20, 50};
  std::uint64_t seed = 314;
};

struct Snapshot {
  int epoch;
  Network net;
};

struct TrainLog {
  Vec epoch_loss;      // mean cross-entropy per epoch
  Vec epoch_accuracy;  // train accuracy per epoch
};

namespace detail {

struct DenseLayerRef {
  Affine* affine;
  bool gated;
};

inline std::vector<DenseLayerRef> trainable_layers(Network& net) {
  std::vector<DenseLayerRef> layers;
  for (std::size_t i = 0; i < net.stages.size(); ++i) {
    if (auto* a = std::get_if<Affine>(&net.stages[i])) {
      const bool gated = i + 1 < net.stages.size() && std::holds_alternative<GatePoint>(net.stages[i + 1]);
      layers.push_back({a, gated});
    } else if (!std::holds_alternative<GatePoint>(net.stages[i])) {
      throw StructureError("trainer supports dense affine/gate networks only");
    }
  }
  return layers;
}

inline void softmax_inplace(Vec& v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

}  // namespace detail

// Plain mini-batch SGD on softmax cross-entropy with standard hard-gate
// gradients (excitation gates are evaluation-only). Snapshot epoch 0 is the
// initialization. Deterministic given cfg.seed.
inline std::vector<Snapshot> train_sgd(Network net, const TrainConfig& cfg, TrainLog* log = nullptr) {
  const Dataset ds = make_two_gaussians(cfg.dataset, cfg.seed);
  auto layers = detail::trainable_layers(net);
  const int classes = static_cast<int>(net.heads.size());
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  auto want_snapshot = [&cfg](int epoch) {
    return std::find(cfg.snapshot_epochs.begin(), cfg.snapshot_epochs.end(), epoch) != cfg.snapshot_epochs.end();
  };

  std::vector<Snapshot> snaps;
  if (want_snapshot(0)) snaps.push_back({0, net});

  std::vector<std::size_t> order(ds.inputs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  // Per-layer gradient accumulators.
  std::vector<Vec> grad_w(layers.size()), grad_b(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    grad_w[l].assign(layers[l].affine->weight.size(), 0.0);
    grad_b[l].assign(layers[l].affine->bias.size(), 0.0);
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double loss_sum = 0.0;
    int correct = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t l = 0; l < layers.size(); ++l) {
        std::fill(grad_w[l].begin(), grad_w[l].end(), 0.0);
        std::fill(grad_b[l].begin(), grad_b[l].end(), 0.0);
      }

      for (std::size_t bi = start; bi < end; ++bi) {
        const Vec& x = ds.inputs[order[bi]];
        const int label = ds.labels[order[bi]];

        // Forward, keeping each affine's input and the gate masks.
        std::vector<Vec> layer_inputs(layers.size());
        std::vector<Vec> gate_masks(layers.size());
        Vec cur = x;
        for (std::size_t l = 0; l < layers.size(); ++l) {
          layer_inputs[l] = cur;
          cur = detail::affine_apply(*layers[l].affine, cur);
          if (layers[l].gated) {
            gate_masks[l] = hard_gate(cur);
            for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = gate_masks[l][i] * cur[i];
          }
        }
        Vec logits(classes);
        for (int c = 0; c < classes; ++c) {
          double acc = 0.0;
          for (std::size_t i = 0; i < cur.size(); ++i) acc += net.heads[c][i] * cur[i];
          logits[c] = acc;
        }

        Vec probs = logits;
        detail::softmax_inplace(probs);
        const double loss = -std::log(std::max(probs[label], 1e-300));
        if (!std::isfinite(loss)) {
          throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch));
        }
        loss_sum += loss;
        const int pred = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        correct += pred == label ? 1 : 0;

        // Backward: dlogits -> head -> stages in reverse.
        Vec dlogits = probs;
        dlogits[label] -= 1.0;
        Vec u(cur.size(), 0.0);
        for (int c = 0; c < classes; ++c) {
          for (std::size_t i = 0; i < u.size(); ++i) u[i] += dlogits[c] * net.heads[c][i];
        }
        for (int l = static_cast<int>(layers.size()) - 1; l >= 0; --l) {
          const Affine& a = *layers[l].affine;
          if (layers[l].gated) {
            for (std::size_t i = 0; i < u.size(); ++i) u[i] *= gate_masks[l][i];
          }
          const Vec& in = layer_inputs[l];
          for (int r = 0; r < a.out; ++r) {
            const double ur = u[r];
            if (ur == 0.0) continue;
            grad_b[l][r] += ur;
            double* grow = grad_w[l].data() + static_cast<std::size_t>(r) * a.in;
            for (int c2 = 0; c2 < a.in; ++c2) grow[c2] += ur * in[c2];
          }
          if (l > 0) {
            Vec next(a.in, 0.0);
            for (int r = 0; r < a.out; ++r) {
              const double ur = u[r];
              if (ur == 0.0) continue;
              for (int c2 = 0; c2 < a.in; ++c2) next[c2] += ur * a.w(r, c2);
            }
            u = std::move(next);
          }
        }
      }

      const double scale = cfg.learning_rate / static_cast<double>(end - start);
      for (std::size_t l = 0; l < layers.size(); ++l) {
        Affine& a = *layers[l].affine;
        for (std::size_t i = 0; i < a.weight.size(); ++i) a.weight[i] -= scale * grad_w[l][i];
        for (std::size_t i = 0; i < a.bias.size(); ++i) a.bias[i] -= scale * grad_b[l][i];
      }
    }

    if (log) {
      log->epoch_loss.push_back(loss_sum / static_cast<double>(ds.inputs.size()));
      log->epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(ds.inputs.size()));
    }
    if (want_snapshot(epoch)) snaps.push_back({epoch, net});
  }
  return snaps;
}

// ---------------------------------------------------------------------------
// Stability measurements

// Fraction of (input, gate position) pairs whose hard gate differs between
// the two snapshots. A Hamming mean, hence a pseudometric over snapshots.
inline double gate_flip_rate(const Network& a, const Network& b, const std::vector<Vec>& X) {
  if (a.gate_widths() != b.gate_widths()) throw StructureError("gate flip rate needs matching architectures");
  if (X.empty()) throw DomainError("gate flip rate needs a non-empty evaluation set");
  std::uint64_t flips = 0, total = 0;
  for (const Vec& x : X) {
    const ForwardTrace ta = forward(a, x);
    const ForwardTrace tb = forward(b, x);
    for (std::size_t l = 0; l < ta.hard_gates.size(); ++l) {
      for (std::size_t i = 0; i < ta.hard_gates[l].size(); ++i) {
        flips += ta.hard_gates[l][i] != tb.hard_gates[l][i] ? 1 : 0;
        ++total;
      }
    }
  }
  return static_cast<double>(flips) / static_cast<double>(total);
}

// Product-moment correlation.
inline double pearson(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ShapeError("pearson needs equal-length vectors");
  const std::size_t n = a.size();
  if (n < 2) throw UndefinedCorrelationError("pearson needs at least two points");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw UndefinedCorrelationError("pearson is undefined for constant data");
  return sab / std::sqrt(saa * sbb);
}

struct StabilityReport {
  std::vector<int> snapshot_epochs;
  std::vector<Vec> rho;  // [snapshot][head]: pearson(f, f_Gamma) over X
  Vec flip_rate;         // consecutive snapshot pairs
  Vec train_loss;        // per epoch
  Vec train_accuracy;    // per epoch
  double final_train_accuracy = 0.0;
  double rho_threshold = 0.9;
  int rho_crossing_epoch = -1;  // earliest epoch after which min-head rho stays above threshold; -1 if never
  double gate_temperature = 0.3;
};

// For each snapshot: pearson between hard logits f(X) and soft logits
// f_Gamma(X) per head, where the gates come from the hard forward's
// pre-activations; plus gate churn between consecutive snapshots. The rho
// trajectory is recorded, not thresholded.
inline StabilityReport stability_report(const std::vector<Snapshot>& snapshots, const std::vector<Vec>& X,
                                        const GatingSpec& spec) {
  if (snapshots.empty()) throw DomainError("stability report needs at least one snapshot");
  StabilityReport rep;
  if (spec.kind == GateKind::GlobalSigmoid) rep.gate_temperature = spec.temperature;

  const std::size_t heads = snapshots.front().net.heads.size();
  for (const Snapshot& snap : snapshots) {
    rep.snapshot_epochs.push_back(snap.epoch);
    std::vector<Vec> hard_vals(heads, Vec{}), soft_vals(heads, Vec{});
    for (const Vec& x : X) {
      const ForwardTrace trace = forward(snap.net, x);
      const InducedResult soft = forward_induced(snap.net, x, gate_values(spec, trace));
      for (std::size_t c = 0; c < heads; ++c) {
        hard_vals[c].push_back(trace.logits[c]);
        soft_vals[c].push_back(soft.logits[c]);
      }
    }
    Vec rho_row(heads);
    for (std::size_t c = 0; c < heads; ++c) rho_row[c] = pearson(hard_vals[c], soft_vals[c]);
    rep.rho.push_back(std::move(rho_row));
  }
  for (std::size_t s = 1; s < snapshots.size(); ++s) {
    rep.flip_rate.push_back(gate_flip_rate(snapshots[s - 1].net, snapshots[s].net, X));
  }
  // Earliest snapshot epoch from which min-head rho stays above threshold.
  int crossing = -1;
  for (int s = static_cast<int>(snapshots.size()) - 1; s >= 0; --s) {
    const double min_rho = *std::min_element(rep.rho[s].begin(), rep.rho[s].end());
    if (min_rho > rep.rho_threshold) {
      crossing = rep.snapshot_epochs[s];
    } else {
      break;
    }
  }
  rep.rho_crossing_epoch = crossing;
  return rep;
}

}  // namespace gip
