#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gip/network.hpp"

namespace gip {

// Augmented input-space covector [vector; offset]: <vector, x> + offset
// represents the induced function value at x under the gating it was built
// with. The offset keeps bias mass out of attributions over the true input
// space.
struct PullbackVector {
  Vec vector;          // R^{d0}
  double offset = 0.0;
  int class_index = -1;
  GatingSpec gating;

  Vec augmented() const {
    Vec v = vector;
    v.push_back(offset);
    return v;
  }
};

namespace detail {

inline void check_trace(const Network& net, const ForwardTrace& trace) {
  const auto widths = net.gate_widths();
  if (trace.preactivations.size() != widths.size() || trace.hard_gates.size() != widths.size()) {
    throw StructureError("trace gate-point count does not match the network");
  }
  for (std::size_t l = 0; l < widths.size(); ++l) {
    if (trace.preactivations[l].size() != static_cast<std::size_t>(widths[l])) {
      throw StructureError("trace layer " + std::to_string(l + 1) + " width does not match the network");
    }
  }
  if (trace.pool_argmax.size() != static_cast<std::size_t>(net.pool_count()) ||
      trace.pool_inputs.size() != trace.pool_argmax.size()) {
    throw StructureError("trace pool records do not match the network");
  }
}

struct AugCovector {
  Vec u;        // covector over the current stage's output
  double s = 0.0;  // accumulated bias/offset coordinate
};

inline void backward_affine(const Affine& a, AugCovector& cov) {
  Vec next(a.in, 0.0);
  double s_add = 0.0;
  for (int r = 0; r < a.out; ++r) {
    const double ur = cov.u[r];
    if (ur == 0.0) continue;
    const double* row = a.weight.data() + static_cast<std::size_t>(r) * a.in;
    for (int c = 0; c < a.in; ++c) next[c] += ur * row[c];
    s_add += ur * a.bias[r];
  }
  cov.u = std::move(next);
  cov.s += s_add;
}

inline void backward_conv(const Conv2d& cv, const Shape& in, AugCovector& cov) {
  const int h = in.dims[1], w = in.dims[2];
  const int oh = pooled_extent(h, cv.ph, cv.kh, cv.sh);
  const int ow = pooled_extent(w, cv.pw, cv.kw, cv.sw);
  Vec next(static_cast<std::size_t>(cv.in_channels) * h * w, 0.0);
  double s_add = 0.0;
  for (int co = 0; co < cv.out_channels; ++co) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double ur = cov.u[(static_cast<std::size_t>(co) * oh + oy) * ow + ox];
        if (ur == 0.0) continue;
        s_add += ur * cv.bias[co];
        for (int ci = 0; ci < cv.in_channels; ++ci) {
          for (int ky = 0; ky < cv.kh; ++ky) {
            const int iy = oy * cv.sh - cv.ph + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < cv.kw; ++kx) {
              const int ix = ox * cv.sw - cv.pw + kx;
              if (ix < 0 || ix >= w) continue;
              next[(static_cast<std::size_t>(ci) * h + iy) * w + ix] += ur * cv.w(co, ci, ky, kx);
            }
          }
        }
      }
    }
  }
  cov.u = std::move(next);
  cov.s += s_add;
}

inline void backward_pool(const MaxPool2d& p, const Shape& in, const std::vector<int>& argmax, const Vec& pre,
                          const GatingSpec& spec, AugCovector& cov) {
  const int ch = in.dims[0], h = in.dims[1], w = in.dims[2];
  const int oh = pooled_extent(h, p.ph, p.kh, p.sh);
  const int ow = pooled_extent(w, p.pw, p.kw, p.sw);
  Vec next(static_cast<std::size_t>(ch) * h * w, 0.0);
  for (int c = 0; c < ch; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const int o = (c * oh + oy) * ow + ox;
        const double ur = cov.u[o];
        if (ur == 0.0) continue;
        if (spec.pool_mode == PoolMode::HardPool) {
          next[argmax[o]] += ur;
          continue;
        }
        // SoftmaxPool: distribute by softmax weights over the patch.
        std::vector<int> cells;
        Vec patch;
        for (int ky = 0; ky < p.kh; ++ky) {
          const int iy = oy * p.sh - p.ph + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < p.kw; ++kx) {
            const int ix = ox * p.sw - p.pw + kx;
            if (ix < 0 || ix >= w) continue;
            cells.push_back((c * h + iy) * w + ix);
            patch.push_back(pre[(c * h + iy) * w + ix]);
          }
        }
        const Vec weights = pool_softmax_weights(patch, spec.pool_temperature);
        for (std::size_t k = 0; k < cells.size(); ++k) next[cells[k]] += ur * weights[k];
      }
    }
  }
  cov.u = std::move(next);
}

// Pulls [u; s] back through stages [0, end_stage) of the network. Gate
// values are constants of the backward pass; the offset coordinate is never
// gated (the augmented bias row passes through unchanged).
inline AugCovector backward_through(const Network& net, const ForwardTrace& trace, const std::vector<Vec>& gates,
                                    const GatingSpec& spec, int end_stage, AugCovector cov) {
  auto shapes = net.stage_output_shapes();
  // Ordinal of each pool/gate stage among its kind.
  int gate_ord = 0, pool_ord = 0;
  std::vector<int> ordinal(net.stages.size(), -1);
  for (std::size_t i = 0; i < net.stages.size(); ++i) {
    if (std::holds_alternative<GatePoint>(net.stages[i])) ordinal[i] = gate_ord++;
    if (std::holds_alternative<MaxPool2d>(net.stages[i])) ordinal[i] = pool_ord++;
  }
  for (int i = end_stage - 1; i >= 0; --i) {
    const Shape& in = i == 0 ? net.input_shape : shapes[i - 1];
    const Stage& s = net.stages[i];
    if (const auto* a = std::get_if<Affine>(&s)) {
      backward_affine(*a, cov);
    } else if (const auto* cv = std::get_if<Conv2d>(&s)) {
      backward_conv(*cv, in, cov);
    } else if (const auto* p = std::get_if<MaxPool2d>(&s)) {
      backward_pool(*p, in, trace.pool_argmax[ordinal[i]], trace.pool_inputs[ordinal[i]], spec, cov);
    } else {
      const Vec& lambda = gates[ordinal[i]];
      for (std::size_t k = 0; k < cov.u.size(); ++k) cov.u[k] *= lambda[k];
    }
  }
  return cov;
}

}  // namespace detail

// Pullback of head c through the induced network: y_c^T Lambda_L W_L ...
// Lambda_1 W_1, with gate values computed by the spec from the trace's
// pre-activations. The forward gates stay hard; only the backward pass is
// modified. With a Hard spec this is the network gradient wherever no
// pre-activation is exactly zero.
inline PullbackVector pullback_head(const Network& net, const ForwardTrace& trace, const GatingSpec& spec,
                                    int class_index) {
  detail::check_trace(net, trace);
  if (class_index < 0 || class_index >= static_cast<int>(net.heads.size())) {
    throw StructureError("head index " + std::to_string(class_index) + " out of range");
  }
  const std::vector<Vec> gates = gate_values(spec, trace);
  detail::AugCovector cov{net.heads[class_index], 0.0};
  cov = detail::backward_through(net, trace, gates, spec, static_cast<int>(net.stages.size()), std::move(cov));
  PullbackVector out;
  out.vector = std::move(cov.u);
  out.offset = cov.s;
  out.class_index = class_index;
  out.gating = spec;
  return out;
}

// Pullback of the pre-activation z_l[unit] through the sub-network below it.
// The gate at (l, unit) itself is not applied.
inline PullbackVector pullback_neuron(const Network& net, const ForwardTrace& trace, const GatingSpec& spec, int layer,
                                      int unit) {
  detail::check_trace(net, trace);
  int gate_stage = -1;
  for (std::size_t i = 0; i < net.stages.size(); ++i) {
    if (const auto* g = std::get_if<GatePoint>(&net.stages[i])) {
      if (g->layer == layer) {
        gate_stage = static_cast<int>(i);
        break;
      }
    }
  }
  if (gate_stage < 0) throw StructureError("no gate point with layer index " + std::to_string(layer));
  const int width = static_cast<int>(trace.preactivations[std::get<GatePoint>(net.stages[gate_stage]).layer - 1].size());
  if (unit < 0 || unit >= width) {
    throw ShapeError("unit " + std::to_string(unit) + " out of range for layer of width " + std::to_string(width));
  }
  const std::vector<Vec> gates = gate_values(spec, trace);
  detail::AugCovector cov;
  cov.u.assign(width, 0.0);
  cov.u[unit] = 1.0;
  // Start just below the gate point, at the producing stage's output.
  cov = detail::backward_through(net, trace, gates, spec, gate_stage, std::move(cov));
  PullbackVector out;
  out.vector = std::move(cov.u);
  out.offset = cov.s;
  out.class_index = -1;
  out.gating = spec;
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

struct BoundaryWarning {
  int layer;   // 1-based gate index
  int unit;
  double preactivation;
  double threshold;
};

struct GradientEstimate {
  Vec gradient;
  std::vector<BoundaryWarning> warnings;  // empty iff x looked generic
};

namespace detail {

// L2 norm of the weights feeding one output unit of the stage producing gate
// point l; used to scale the genericity threshold.
inline double producer_row_norm(const Network& net, int gate_stage, int unit, const Shape& in_shape) {
  const Stage& s = net.stages[gate_stage - 1];
  if (const auto* a = std::get_if<Affine>(&s)) {
    double acc = 0.0;
    for (int c = 0; c < a->in; ++c) acc += a->w(unit, c) * a->w(unit, c);
    return std::sqrt(acc);
  }
  if (const auto* cv = std::get_if<Conv2d>(&s)) {
    const Shape out = stage_output_shape(s, in_shape);
    const int plane = out.dims[1] * out.dims[2];
    const int co = unit / plane;
    double acc = 0.0;
    for (int ci = 0; ci < cv->in_channels; ++ci) {
      for (int ky = 0; ky < cv->kh; ++ky) {
        for (int kx = 0; kx < cv->kw; ++kx) {
          acc += cv->w(co, ci, ky, kx) * cv->w(co, ci, ky, kx);
        }
      }
    }
    return std::sqrt(acc);
  }
  return 0.0;
}

}  // namespace detail

// Central-difference estimate of grad f_c(x), coordinate by coordinate.
// Warns about gate units with |z| < 10 h * ||row|| (the step may cross a
// gating boundary there).
inline GradientEstimate finite_diff_gradient(const Network& net, const Vec& x, int class_index, double h = 1e-6) {
  if (!(h > 0.0)) throw DomainError("finite-difference step must be > 0");
  GradientEstimate est;

  const ForwardTrace center = forward(net, x);
  auto shapes = net.stage_output_shapes();
  int gate = 0;
  for (std::size_t i = 1; i < net.stages.size(); ++i) {
    if (!std::holds_alternative<GatePoint>(net.stages[i])) continue;
    const Shape& in_shape = i >= 2 ? shapes[i - 2] : net.input_shape;
    for (std::size_t u = 0; u < center.preactivations[gate].size(); ++u) {
      const double norm = detail::producer_row_norm(net, static_cast<int>(i), static_cast<int>(u), in_shape);
      const double threshold = 10.0 * h * norm;
      if (std::fabs(center.preactivations[gate][u]) < threshold) {
        est.warnings.push_back({gate + 1, static_cast<int>(u), center.preactivations[gate][u], threshold});
      }
    }
    ++gate;
  }

  est.gradient.resize(x.size());
  Vec probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double hi = detail::eval_network(net, probe, nullptr, nullptr).logits[class_index];
    probe[i] = orig - h;
    const double lo = detail::eval_network(net, probe, nullptr, nullptr).logits[class_index];
    probe[i] = orig;
    est.gradient[i] = (hi - lo) / (2.0 * h);
  }
  return est;
}

}  // namespace gip
