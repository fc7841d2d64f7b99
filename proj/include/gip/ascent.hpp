#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gip/pullback.hpp"

namespace gip {

// Hyperparameters of the perturbation protocol: normalized steps along the
// pullback direction, projection onto the L2 ball of the given radius around
// the starting image, clamping to the pixel value range.
struct AscentConfig {
  int steps = 10;
  double step_norm = 20.0;
  double radius = 100.0;
  double value_min = -1.0;
  double value_max = 1.0;
  int target_class = 0;
  GatingSpec gating = GatingSpec::sigmoid(0.3);

  void check() const {
    if (steps < 1) throw DomainError("ascent needs at least one step");
    if (!(step_norm > 0.0)) throw DomainError("step norm must be > 0");
    if (!(radius > 0.0)) throw DomainError("radius must be > 0");
    if (!(value_min < value_max)) throw DomainError("empty value range");
  }
};

struct AscentTrajectory {
  std::vector<Vec> inputs;        // pixel space; steps+1 entries, inputs[0] = x0
  Vec target_logits;              // f_c at each recorded input
  Vec pre_projection_step_norms;  // measured ||x' - x_t|| before projection; 0 on zero-direction steps
  std::vector<bool> zero_direction;
  Vec difference;                 // inputs.back() - inputs.front()
};

namespace detail {

// Pixel -> model space. Channel granularity follows the normalization
// vectors; empty normalization is the identity.
inline Vec normalize_input(const Network& net, const Vec& x) {
  if (net.normalization.empty()) return x;
  const Vec& mean = net.normalization.mean;
  const Vec& std_ = net.normalization.std;
  Vec out(x.size());
  const std::size_t plane = x.size() / mean.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = i / plane;
    out[i] = (x[i] - mean[c]) / std_[c];
  }
  return out;
}

// Chain rule of the standardization: a model-space covector maps to pixel
// space by dividing by std per channel.
inline Vec direction_to_pixel_space(const Network& net, const Vec& v) {
  if (net.normalization.empty()) return v;
  const Vec& std_ = net.normalization.std;
  Vec out(v.size());
  const std::size_t plane = v.size() / std_.size();
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / std_[i / plane];
  return out;
}

inline double l2_norm(const Vec& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace detail

struct StepInfo {
  double pre_projection_norm = 0.0;
  bool zero_direction = false;
  double target_logit_at_start = 0.0;
};

// One ascent iteration: normalized pullback step, then projection onto the
// epsilon-ball around x0, then clamping to the value range. Projection comes
// first; clamping toward in-range x0 cannot re-leave the ball.
inline Vec pga_step(const Network& net, const Vec& x_t, const Vec& x0, const AscentConfig& cfg,
                    StepInfo* info = nullptr) {
  cfg.check();
  const ForwardTrace trace = forward(net, detail::normalize_input(net, x_t));
  if (info) info->target_logit_at_start = trace.logits[cfg.target_class];
  const PullbackVector pb = pullback_head(net, trace, cfg.gating, cfg.target_class);
  const Vec d = detail::direction_to_pixel_space(net, pb.vector);
  const double n = detail::l2_norm(d);
  if (n == 0.0) {
    if (info) {
      info->zero_direction = true;
      info->pre_projection_norm = 0.0;
    }
    return x_t;
  }
  Vec x = x_t;
  const double scale = cfg.step_norm / n;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += scale * d[i];
  if (info) {
    info->zero_direction = false;
    Vec delta(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) delta[i] = x[i] - x_t[i];
    info->pre_projection_norm = detail::l2_norm(delta);
  }
  // Project onto the L2 ball of radius eps around x0.
  Vec offs(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) offs[i] = x[i] - x0[i];
  const double r = detail::l2_norm(offs);
  if (r > cfg.radius) {
    const double shrink = cfg.radius / r;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = x0[i] + shrink * offs[i];
  }
  for (double& v : x) v = std::min(std::max(v, cfg.value_min), cfg.value_max);
  return x;
}

// Full protocol: cfg.steps iterations from x0, recording inputs and target
// logits. Deterministic given (net, x0, cfg).
inline AscentTrajectory pga_run(const Network& net, const Vec& x0, const AscentConfig& cfg) {
  cfg.check();
  AscentTrajectory traj;
  traj.inputs.push_back(x0);
  Vec x = x0;
  for (int t = 0; t < cfg.steps; ++t) {
    StepInfo info;
    x = pga_step(net, x, x0, cfg, &info);
    traj.inputs.push_back(x);
    traj.target_logits.push_back(info.target_logit_at_start);
    traj.pre_projection_step_norms.push_back(info.pre_projection_norm);
    traj.zero_direction.push_back(info.zero_direction);
  }
  const ForwardTrace last = forward(net, detail::normalize_input(net, x));
  traj.target_logits.push_back(last.logits[cfg.target_class]);
  traj.difference.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) traj.difference[i] = x[i] - x0[i];
  return traj;
}

}  // namespace gip
