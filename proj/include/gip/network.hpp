#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "gip/error.hpp"
#include "gip/gating.hpp"
#include "gip/rng.hpp"

namespace gip {

// Tensor extent: {d} for dense data, {c, h, w} for images.
struct Shape {
  std::vector<int> dims;

  Shape() = default;
  Shape(std::initializer_list<int> d) : dims(d) {}
  explicit Shape(std::vector<int> d) : dims(std::move(d)) {}

  int numel() const {
    int n = 1;
    for (int d : dims) n *= d;
    return n;
  }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims[i]);
    }
    return s + ")";
  }
};

// weight is row-major, out x in. A stage flagged linear_output is exempt
// from the gate-follows-affine rule (heads may act on its raw output).
// output_dims, when set, declares a non-flat output shape (numel must equal
// out); materialized convolutions use it so downstream pools keep their
// geometry.
struct Affine {
  int in = 0, out = 0;
  Vec weight;
  Vec bias;
  bool linear_output = false;
  std::vector<int> output_dims;

  double w(int r, int c) const { return weight[static_cast<std::size_t>(r) * in + c]; }
};

// weight layout [out_c][in_c][kh][kw]; floor-mode output sizing.
struct Conv2d {
  int in_channels = 0, out_channels = 0;
  int kh = 0, kw = 0;
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;
  Vec weight;
  Vec bias;
  bool linear_output = false;

  double w(int co, int ci, int ky, int kx) const {
    return weight[((static_cast<std::size_t>(co) * in_channels + ci) * kh + ky) * kw + kx];
  }
};

struct MaxPool2d {
  int kh = 0, kw = 0;
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;
};

// Marks the ReLU position after an affine/conv stage; layer is the 1-based
// gate index.
struct GatePoint {
  int layer = 0;
};

using Stage = std::variant<Affine, Conv2d, MaxPool2d, GatePoint>;

// Per-channel standardization carried as metadata. forward() expects inputs
// already normalized; ascent and the CLI apply it at the pixel boundary.
struct Normalization {
  Vec mean, std;

  bool empty() const { return mean.empty() && std.empty(); }
};

struct Network {
  std::vector<Stage> stages;
  std::vector<Vec> heads;  // one vector y_c per class, acting on the final output
  Shape input_shape;
  Normalization normalization;

  int gate_count() const {
    int n = 0;
    for (const Stage& s : stages) n += std::holds_alternative<GatePoint>(s) ? 1 : 0;
    return n;
  }

  int pool_count() const {
    int n = 0;
    for (const Stage& s : stages) n += std::holds_alternative<MaxPool2d>(s) ? 1 : 0;
    return n;
  }

  // Output shape per stage; throws ShapeError where stages do not compose.
  std::vector<Shape> stage_output_shapes() const;

  Shape output_shape() const {
    auto shapes = stage_output_shapes();
    return shapes.empty() ? input_shape : shapes.back();
  }

  int output_dim() const { return output_shape().numel(); }

  std::vector<int> gate_widths() const {
    std::vector<int> widths;
    auto shapes = stage_output_shapes();
    for (std::size_t i = 0; i < stages.size(); ++i) {
      if (std::holds_alternative<GatePoint>(stages[i])) widths.push_back(shapes[i].numel());
    }
    return widths;
  }
};

namespace detail {

inline int pooled_extent(int in, int pad, int kernel, int stride) {
  return (in + 2 * pad - kernel) / stride + 1;
}

inline Shape stage_output_shape(const Stage& stage, const Shape& in) {
  if (const auto* a = std::get_if<Affine>(&stage)) {
    if (in.numel() != a->in) {
      throw ShapeError("affine expects " + std::to_string(a->in) + " inputs, stage input is " + in.str());
    }
    if (!a->output_dims.empty()) {
      const Shape declared{a->output_dims};
      if (declared.numel() != a->out) {
        throw ShapeError("affine declares output shape " + declared.str() + " but has " + std::to_string(a->out) +
                         " outputs");
      }
      return declared;
    }
    return Shape{{a->out}};
  }
  if (const auto* c = std::get_if<Conv2d>(&stage)) {
    if (in.dims.size() != 3 || in.dims[0] != c->in_channels) {
      throw ShapeError("conv expects (" + std::to_string(c->in_channels) + ",h,w), stage input is " + in.str());
    }
    const int oh = pooled_extent(in.dims[1], c->ph, c->kh, c->sh);
    const int ow = pooled_extent(in.dims[2], c->pw, c->kw, c->sw);
    if (oh < 1 || ow < 1) throw ShapeError("conv output collapses on input " + in.str());
    return Shape{{c->out_channels, oh, ow}};
  }
  if (const auto* p = std::get_if<MaxPool2d>(&stage)) {
    if (in.dims.size() != 3) throw ShapeError("maxpool expects (c,h,w), stage input is " + in.str());
    const int oh = pooled_extent(in.dims[1], p->ph, p->kh, p->sh);
    const int ow = pooled_extent(in.dims[2], p->pw, p->kw, p->sw);
    if (oh < 1 || ow < 1) throw ShapeError("pool output collapses on input " + in.str());
    return Shape{{in.dims[0], oh, ow}};
  }
  return in;  // GatePoint
}

}  // namespace detail

inline std::vector<Shape> Network::stage_output_shapes() const {
  std::vector<Shape> shapes;
  shapes.reserve(stages.size());
  Shape cur = input_shape;
  for (const Stage& s : stages) {
    cur = detail::stage_output_shape(s, cur);
    shapes.push_back(cur);
  }
  return shapes;
}

// ---------------------------------------------------------------------------
// Structural validation

struct Violation {
  int stage_index;  // -1 for network-level problems
  std::string rule;
  std::string detail;
};

// Diagnostic only: empty result iff all structural invariants hold.
inline std::vector<Violation> validate(const Network& net) {
  std::vector<Violation> out;
  for (int d : net.input_shape.dims) {
    if (d < 1) out.push_back({-1, "input-shape", "non-positive input dimension in " + net.input_shape.str()});
  }

  Shape cur = net.input_shape;
  int next_gate = 1;
  bool shapes_ok = true;
  for (int i = 0; i < static_cast<int>(net.stages.size()); ++i) {
    const Stage& s = net.stages[i];

    if (const auto* a = std::get_if<Affine>(&s)) {
      if (a->weight.size() != static_cast<std::size_t>(a->in) * a->out || a->bias.size() != static_cast<std::size_t>(a->out)) {
        out.push_back({i, "param-shape", "affine parameter arrays do not match declared " +
                                             std::to_string(a->out) + "x" + std::to_string(a->in)});
      }
    } else if (const auto* c = std::get_if<Conv2d>(&s)) {
      const std::size_t wn = static_cast<std::size_t>(c->out_channels) * c->in_channels * c->kh * c->kw;
      if (c->weight.size() != wn || c->bias.size() != static_cast<std::size_t>(c->out_channels)) {
        out.push_back({i, "param-shape", "conv parameter arrays do not match declared kernel"});
      }
      if (c->sh < 1 || c->sw < 1 || c->kh < 1 || c->kw < 1) {
        out.push_back({i, "param-shape", "conv kernel/stride must be positive"});
      }
    } else if (const auto* p = std::get_if<MaxPool2d>(&s)) {
      if (p->sh < 1 || p->sw < 1 || p->kh < 1 || p->kw < 1) {
        out.push_back({i, "param-shape", "pool kernel/stride must be positive"});
      }
      if (p->ph >= p->kh || p->pw >= p->kw) {
        out.push_back({i, "param-shape", "pool padding must be smaller than the kernel"});
      }
    }

    const bool is_gate = std::holds_alternative<GatePoint>(s);
    const bool prev_gateable =
        i > 0 && ((std::holds_alternative<Affine>(net.stages[i - 1]) && !std::get<Affine>(net.stages[i - 1]).linear_output) ||
                  (std::holds_alternative<Conv2d>(net.stages[i - 1]) && !std::get<Conv2d>(net.stages[i - 1]).linear_output));
    if (is_gate) {
      if (!prev_gateable) {
        out.push_back({i, "duplicate-gate", "gate point must directly follow an ungated affine/conv stage"});
      }
      const int layer = std::get<GatePoint>(s).layer;
      if (layer != next_gate) {
        out.push_back({i, "gate-index", "expected gate layer " + std::to_string(next_gate) + ", found " + std::to_string(layer)});
      }
      ++next_gate;
    } else if (prev_gateable) {
      out.push_back({i, "missing-gate", "ungated affine/conv stage " + std::to_string(i - 1) +
                                            " is not followed by a gate point (flag it linear_output?)"});
    }

    if (shapes_ok) {
      try {
        cur = detail::stage_output_shape(s, cur);
      } catch (const ShapeError& e) {
        out.push_back({i, "shape-mismatch", e.what()});
        shapes_ok = false;
      }
    }
  }

  if (shapes_ok && !net.stages.empty()) {
    const bool last_gateable =
        (std::holds_alternative<Affine>(net.stages.back()) && !std::get<Affine>(net.stages.back()).linear_output) ||
        (std::holds_alternative<Conv2d>(net.stages.back()) && !std::get<Conv2d>(net.stages.back()).linear_output);
    if (last_gateable) {
      out.push_back({static_cast<int>(net.stages.size()) - 1, "missing-gate",
                     "final affine/conv stage is not followed by a gate point (flag it linear_output?)"});
    }
  }

  if (shapes_ok) {
    for (std::size_t c = 0; c < net.heads.size(); ++c) {
      if (net.heads[c].size() != static_cast<std::size_t>(cur.numel())) {
        out.push_back({-1, "head-shape", "head " + std::to_string(c) + " has " + std::to_string(net.heads[c].size()) +
                                             " weights, network output is " + cur.str()});
      }
    }
  }
  if (!net.normalization.empty()) {
    const std::size_t channels = net.input_shape.dims.size() == 3 ? net.input_shape.dims[0] : net.input_shape.numel();
    if (net.normalization.mean.size() != channels || net.normalization.std.size() != channels) {
      out.push_back({-1, "normalization-shape", "normalization mean/std must have one entry per channel"});
    }
  }
  return out;
}

inline void require_valid(const Network& net) {
  auto v = validate(net);
  if (!v.empty()) {
    throw StructureError("invalid network: stage " + std::to_string(v[0].stage_index) + ": [" + v[0].rule + "] " + v[0].detail);
  }
}

// ---------------------------------------------------------------------------
// Forward passes

struct ForwardTrace {
  std::vector<Vec> preactivations;          // z_l per gate point
  std::vector<Vec> activations;             // x_l = g_l (.) z_l per gate point
  std::vector<Vec> hard_gates;              // g_l, entries in {0,1}
  std::vector<std::vector<int>> pool_argmax;  // per pool stage: winning input flat index per output position
  std::vector<Vec> pool_inputs;             // per pool stage: the pre-pool tensor (surrogate backward reads it)
  Vec output;                               // x_L
  Vec logits;                               // <y_c, x_L> per head
};

struct InducedResult {
  Vec output;
  Vec logits;
};

namespace detail {

inline Vec affine_apply(const Affine& a, const Vec& x) {
  Vec out(a.out);
  for (int r = 0; r < a.out; ++r) {
    double acc = a.bias[r];
    const double* row = a.weight.data() + static_cast<std::size_t>(r) * a.in;
    for (int c = 0; c < a.in; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
  return out;
}

inline Vec conv_apply(const Conv2d& cv, const Vec& x, const Shape& in) {
  const int h = in.dims[1], w = in.dims[2];
  const int oh = pooled_extent(h, cv.ph, cv.kh, cv.sh);
  const int ow = pooled_extent(w, cv.pw, cv.kw, cv.sw);
  Vec out(static_cast<std::size_t>(cv.out_channels) * oh * ow);
  for (int co = 0; co < cv.out_channels; ++co) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = cv.bias[co];
        for (int ci = 0; ci < cv.in_channels; ++ci) {
          for (int ky = 0; ky < cv.kh; ++ky) {
            const int iy = oy * cv.sh - cv.ph + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < cv.kw; ++kx) {
              const int ix = ox * cv.sw - cv.pw + kx;
              if (ix < 0 || ix >= w) continue;
              acc += cv.w(co, ci, ky, kx) * x[(static_cast<std::size_t>(ci) * h + iy) * w + ix];
            }
          }
        }
        out[(static_cast<std::size_t>(co) * oh + oy) * ow + ox] = acc;
      }
    }
  }
  return out;
}

// Hard max; ties go to the lowest input flat index (windows are scanned in
// ascending flat order and only a strictly greater value wins).
inline Vec pool_apply(const MaxPool2d& p, const Vec& x, const Shape& in, std::vector<int>* argmax) {
  const int ch = in.dims[0], h = in.dims[1], w = in.dims[2];
  const int oh = pooled_extent(h, p.ph, p.kh, p.sh);
  const int ow = pooled_extent(w, p.pw, p.kw, p.sw);
  Vec out(static_cast<std::size_t>(ch) * oh * ow);
  if (argmax) argmax->assign(out.size(), -1);
  for (int c = 0; c < ch; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = -1;
        for (int ky = 0; ky < p.kh; ++ky) {
          const int iy = oy * p.sh - p.ph + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < p.kw; ++kx) {
            const int ix = ox * p.sw - p.pw + kx;
            if (ix < 0 || ix >= w) continue;
            const int idx = (c * h + iy) * w + ix;
            if (x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
        }
        if (best_idx < 0) throw StructureError("pooling window contains no valid input cell");
        const int o = (c * oh + oy) * ow + ox;
        out[o] = best;
        if (argmax) (*argmax)[o] = best_idx;
      }
    }
  }
  return out;
}

// Shared evaluator. gates == nullptr: hard gating computed on the fly.
// Activations are always formed as lambda * z so the hard forward and the
// induced forward with hard gates are the same computation bit for bit.
inline InducedResult eval_network(const Network& net, const Vec& x, const std::vector<Vec>* gates, ForwardTrace* trace) {
  if (x.size() != static_cast<std::size_t>(net.input_shape.numel())) {
    throw ShapeError("input has " + std::to_string(x.size()) + " values, network expects " + net.input_shape.str());
  }
  Vec cur = x;
  Shape shape = net.input_shape;
  int gate_index = 0;
  for (const Stage& s : net.stages) {
    if (const auto* a = std::get_if<Affine>(&s)) {
      if (cur.size() != static_cast<std::size_t>(a->in)) {
        throw ShapeError("affine stage expects " + std::to_string(a->in) + " inputs, got " + std::to_string(cur.size()));
      }
      cur = affine_apply(*a, cur);
      shape = stage_output_shape(s, shape);
    } else if (const auto* cv = std::get_if<Conv2d>(&s)) {
      cur = conv_apply(*cv, cur, shape);
      shape = stage_output_shape(s, shape);
    } else if (const auto* p = std::get_if<MaxPool2d>(&s)) {
      std::vector<int> argmax;
      Vec pre = cur;
      cur = pool_apply(*p, cur, shape, trace ? &argmax : nullptr);
      shape = stage_output_shape(s, shape);
      if (trace) {
        trace->pool_argmax.push_back(std::move(argmax));
        trace->pool_inputs.push_back(std::move(pre));
      }
    } else {
      // GatePoint
      Vec lambda;
      if (gates) {
        if (gate_index >= static_cast<int>(gates->size())) {
          throw ShapeError("gate values cover " + std::to_string(gates->size()) + " gate points, network has more");
        }
        lambda = (*gates)[gate_index];
        if (lambda.size() != cur.size()) {
          throw ShapeError("gate vector " + std::to_string(gate_index) + " has width " + std::to_string(lambda.size()) +
                           ", layer width is " + std::to_string(cur.size()));
        }
        for (double v : lambda) {
          if (!(v >= 0.0 && v <= 1.0)) throw DomainError("gate value " + std::to_string(v) + " outside [0,1]");
        }
      } else {
        lambda = hard_gate(cur);
      }
      if (trace) {
        trace->preactivations.push_back(cur);
        trace->hard_gates.push_back(hard_gate(cur));
      }
      for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = lambda[i] * cur[i];
      if (trace) trace->activations.push_back(cur);
      ++gate_index;
    }
  }
  if (gates && gate_index != static_cast<int>(gates->size())) {
    throw ShapeError("gate values cover " + std::to_string(gates->size()) + " gate points, network has " +
                     std::to_string(gate_index));
  }
  InducedResult res;
  res.logits.resize(net.heads.size());
  for (std::size_t c = 0; c < net.heads.size(); ++c) {
    if (net.heads[c].size() != cur.size()) {
      throw ShapeError("head " + std::to_string(c) + " does not match network output width");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < cur.size(); ++i) acc += net.heads[c][i] * cur[i];
    res.logits[c] = acc;
  }
  res.output = std::move(cur);
  return res;
}

}  // namespace detail

// Hard-gated forward pass with a full trace.
inline ForwardTrace forward(const Network& net, const Vec& x) {
  ForwardTrace trace;
  InducedResult res = detail::eval_network(net, x, nullptr, &trace);
  trace.output = std::move(res.output);
  trace.logits = std::move(res.logits);
  return trace;
}

// Forward pass of the induced network: each ReLU is replaced by
// multiplication with the supplied gate values (one vector per gate point,
// entries in [0,1]). Pool stages stay hard.
inline InducedResult forward_induced(const Network& net, const Vec& x, const std::vector<Vec>& gates) {
  return detail::eval_network(net, x, &gates, nullptr);
}

// ---------------------------------------------------------------------------
// Gate values from a recorded trace

// Gate values for every gate point under the given spec, computed from the
// trace's (hard-forward) pre-activations.
inline std::vector<Vec> gate_values(const GatingSpec& spec, const ForwardTrace& trace) {
  std::vector<Vec> gates;
  gates.reserve(trace.preactivations.size());
  for (std::size_t l = 0; l < trace.preactivations.size(); ++l) {
    if (spec.kind == GateKind::Hard) {
      gates.push_back(trace.hard_gates[l]);
    } else {
      gates.push_back(excitation_gate(trace.preactivations[l], spec, static_cast<int>(l)));
    }
  }
  return gates;
}

// ---------------------------------------------------------------------------
// Construction helpers

// Dense backbone [Affine, Gate] x (widths.size()-1) with heads acting on the
// last gated layer. widths = {d0, d1, ..., dL}.
inline Network make_dense_net(const std::vector<int>& widths, std::vector<Vec> heads) {
  Network net;
  net.input_shape = Shape{{widths.front()}};
  for (std::size_t l = 1; l < widths.size(); ++l) {
    Affine a;
    a.in = widths[l - 1];
    a.out = widths[l];
    a.weight.assign(static_cast<std::size_t>(a.in) * a.out, 0.0);
    a.bias.assign(a.out, 0.0);
    net.stages.push_back(std::move(a));
    net.stages.push_back(GatePoint{static_cast<int>(l)});
  }
  net.heads = std::move(heads);
  return net;
}

inline Network random_dense_net(const std::vector<int>& widths, int head_count, Rng& rng, double scale = 1.0) {
  std::vector<Vec> heads(head_count, Vec(widths.back()));
  Network net = make_dense_net(widths, std::move(heads));
  for (Stage& s : net.stages) {
    if (auto* a = std::get_if<Affine>(&s)) {
      for (double& v : a->weight) v = rng.uniform(-scale, scale);
      for (double& v : a->bias) v = rng.uniform(-scale, scale);
    }
  }
  for (Vec& h : net.heads) {
    for (double& v : h) v = rng.uniform(-scale, scale);
  }
  return net;
}

// Replaces every conv stage by the equivalent dense affine matrix over the
// flattened input. Pools and gates are kept. Test oracle for conv stages.
inline Network materialize_convolutions(const Network& net) {
  Network out = net;
  Shape cur = net.input_shape;
  auto shapes = net.stage_output_shapes();
  for (std::size_t i = 0; i < net.stages.size(); ++i) {
    if (const auto* cv = std::get_if<Conv2d>(&net.stages[i])) {
      const int in_n = cur.numel();
      const int out_n = shapes[i].numel();
      Affine a;
      a.in = in_n;
      a.out = out_n;
      a.linear_output = cv->linear_output;
      a.output_dims = shapes[i].dims;  // keep the conv geometry for downstream pools
      a.weight.assign(static_cast<std::size_t>(in_n) * out_n, 0.0);
      a.bias.assign(out_n, 0.0);
      const int h = cur.dims[1], w = cur.dims[2];
      const int oh = shapes[i].dims[1], ow = shapes[i].dims[2];
      for (int co = 0; co < cv->out_channels; ++co) {
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const int r = (co * oh + oy) * ow + ox;
            a.bias[r] = cv->bias[co];
            for (int ci = 0; ci < cv->in_channels; ++ci) {
              for (int ky = 0; ky < cv->kh; ++ky) {
                const int iy = oy * cv->sh - cv->ph + ky;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < cv->kw; ++kx) {
                  const int ix = ox * cv->sw - cv->pw + kx;
                  if (ix < 0 || ix >= w) continue;
                  a.weight[static_cast<std::size_t>(r) * in_n + (ci * h + iy) * w + ix] = cv->w(co, ci, ky, kx);
                }
              }
            }
          }
        }
      }
      out.stages[i] = std::move(a);
    }
    cur = shapes[i];
  }
  return out;
}

// FNV-1a over widths and raw parameter bytes; binds path tables to the
// network they were built from.
inline std::uint64_t fingerprint(const Network& net) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  auto mix_vec = [&](const Vec& v) {
    mix(v.size());
    for (double d : v) mix(std::bit_cast<std::uint64_t>(d));
  };
  for (int d : net.input_shape.dims) mix(static_cast<std::uint64_t>(d));
  for (const Stage& s : net.stages) {
    mix(static_cast<std::uint64_t>(s.index()));
    if (const auto* a = std::get_if<Affine>(&s)) {
      mix(a->in);
      mix(a->out);
      mix(a->linear_output);
      mix(a->output_dims.size());
      for (int d : a->output_dims) mix(static_cast<std::uint64_t>(d));
      mix_vec(a->weight);
      mix_vec(a->bias);
    } else if (const auto* c = std::get_if<Conv2d>(&s)) {
      mix(c->in_channels);
      mix(c->out_channels);
      mix(c->kh);
      mix(c->kw);
      mix(c->sh);
      mix(c->sw);
      mix(c->ph);
      mix(c->pw);
      mix_vec(c->weight);
      mix_vec(c->bias);
    } else if (const auto* p = std::get_if<MaxPool2d>(&s)) {
      mix(p->kh);
      mix(p->kw);
      mix(p->sh);
      mix(p->sw);
      mix(p->ph);
      mix(p->pw);
    } else {
      mix(std::get<GatePoint>(s).layer);
    }
  }
  mix(net.heads.size());
  for (const Vec& y : net.heads) mix_vec(y);
  return h;
}

}  // namespace gip
