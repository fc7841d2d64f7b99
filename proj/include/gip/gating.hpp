#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "gip/error.hpp"

namespace gip {

using Vec = std::vector<double>;

enum class GateKind {
  Hard,             // g = 1 iff z > 0
  GlobalSigmoid,    // logistic(z / temperature), one temperature
  PerLayerSigmoid,  // one temperature per gate point
  PerNeuronSigmoid  // one temperature per neuron
};

enum class PoolMode {
  HardPool,   // backward routes through the argmax
  SoftmaxPool  // backward distributes by softmax weights; forward stays hard
};

// Declarative choice of the gating regime for backward passes. The bias
// coordinate of any augmented vector always gets gate exactly 1, regardless
// of the spec.
struct GatingSpec {
  GateKind kind = GateKind::Hard;
  double temperature = 0.3;                   // GlobalSigmoid
  std::vector<double> layer_temperatures;     // PerLayerSigmoid, per gate point
  std::vector<Vec> neuron_temperatures;       // PerNeuronSigmoid, per gate point
  PoolMode pool_mode = PoolMode::HardPool;
  double pool_temperature = 0.3;

  static GatingSpec hard() { return {}; }

  static GatingSpec sigmoid(double temperature) {
    GatingSpec s;
    s.kind = GateKind::GlobalSigmoid;
    s.temperature = temperature;
    return s;
  }

  bool is_sigmoid() const { return kind != GateKind::Hard; }
};

// Numerically stable logistic; exact 0/1 saturation for large |t| is fine.
inline double logistic(double t) {
  if (t >= 0.0) {
    return 1.0 / (1.0 + std::exp(-t));
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// Hard gate: out[i] = 1 iff z[i] > 0 (z = 0 gates to 0).
inline Vec hard_gate(const Vec& z) {
  Vec g(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) g[i] = z[i] > 0.0 ? 1.0 : 0.0;
  return g;
}

namespace detail {

inline void check_temperature(double temp) {
  if (!(temp > 0.0)) {
    throw DomainError("temperature must be > 0, got " + std::to_string(temp));
  }
}

}  // namespace detail

// Soft gate values logistic(z[i] / temp_i) for one gate point. gate_index
// selects the per-layer/per-neuron temperatures when the spec carries them.
inline Vec excitation_gate(const Vec& z, const GatingSpec& spec, int gate_index = 0) {
  if (spec.kind == GateKind::Hard) {
    throw DomainError("excitation_gate requires a sigmoid gating spec");
  }
  for (double v : z) {
    if (!std::isfinite(v)) throw DomainError("non-finite pre-activation");
  }
  Vec out(z.size());
  switch (spec.kind) {
    case GateKind::GlobalSigmoid: {
      detail::check_temperature(spec.temperature);
      for (std::size_t i = 0; i < z.size(); ++i) out[i] = logistic(z[i] / spec.temperature);
      break;
    }
    case GateKind::PerLayerSigmoid: {
      if (gate_index < 0 || static_cast<std::size_t>(gate_index) >= spec.layer_temperatures.size()) {
        throw ShapeError("per-layer temperatures do not cover gate point " + std::to_string(gate_index));
      }
      const double temp = spec.layer_temperatures[gate_index];
      detail::check_temperature(temp);
      for (std::size_t i = 0; i < z.size(); ++i) out[i] = logistic(z[i] / temp);
      break;
    }
    case GateKind::PerNeuronSigmoid: {
      if (gate_index < 0 || static_cast<std::size_t>(gate_index) >= spec.neuron_temperatures.size()) {
        throw ShapeError("per-neuron temperatures do not cover gate point " + std::to_string(gate_index));
      }
      const Vec& temps = spec.neuron_temperatures[gate_index];
      if (temps.size() != z.size()) {
        throw ShapeError("per-neuron temperature width " + std::to_string(temps.size()) +
                         " != layer width " + std::to_string(z.size()));
      }
      for (std::size_t i = 0; i < z.size(); ++i) {
        detail::check_temperature(temps[i]);
        out[i] = logistic(z[i] / temps[i]);
      }
      break;
    }
    case GateKind::Hard:
      break;  // unreachable
  }
  return out;
}

// Softmax weights over one pooling patch. Used in the backward pass only;
// the forward pool value stays the hard max. Shift-invariant by max
// subtraction.
inline Vec pool_softmax_weights(const Vec& patch, double temperature) {
  if (patch.empty()) throw DomainError("empty pooling patch");
  detail::check_temperature(temperature);
  double m = patch[0];
  for (double v : patch) m = std::max(m, v);
  Vec w(patch.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < patch.size(); ++i) {
    w[i] = std::exp((patch[i] - m) / temperature);
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

}  // namespace gip
