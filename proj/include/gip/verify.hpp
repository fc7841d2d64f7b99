#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gip/pathspace.hpp"

namespace gip {

// Relative deviation with an absolute floor of 1, so near-zero quantities
// are compared absolutely.
inline double rel_dev(double a, double b) {
  return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

inline double rel_dev(const Vec& a, const Vec& b) {
  double scale = 1.0, diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max({scale, std::fabs(a[i]), std::fabs(b[i])});
    diff = std::max(diff, std::fabs(a[i] - b[i]));
  }
  return diff / scale;
}

struct VerifyOptions {
  int nets = 100;
  int inputs_per_net = 10;
  std::uint64_t seed = 314;
  double tolerance = 1e-9;      // relative, oracle identities
  double fd_tolerance = 1e-5;   // absolute, gradient identity
  std::vector<int> max_widths = {4, 5, 4, 3};  // sampled nets stay elementwise below this
};

struct VerifyRow {
  std::string identity;
  double max_deviation;
  double tolerance;
  bool pass;
};

struct VerifyReport {
  std::vector<VerifyRow> rows;

  bool all_pass() const {
    for (const auto& r : rows) {
      if (!r.pass) return false;
    }
    return true;
  }
};

namespace detail {

inline Network sample_oracle_net(Rng& rng, const std::vector<int>& max_widths) {
  const int max_depth = static_cast<int>(max_widths.size()) - 1;
  const int depth = rng.uniform_int(1, max_depth);
  std::vector<int> widths;
  for (int l = 0; l <= depth; ++l) widths.push_back(rng.uniform_int(2, max_widths[l]));
  return random_dense_net(widths, 2, rng);
}

inline Vec sample_input(Rng& rng, int d) {
  Vec x(d);
  for (double& v : x) v = rng.uniform(-1.0, 1.0);
  return x;
}

// Resamples until the trace is far enough from every gating boundary for
// central differences with step h.
inline Vec sample_generic_input(const Network& net, Rng& rng, double h, int max_tries = 200) {
  for (int t = 0; t < max_tries; ++t) {
    Vec x = sample_input(rng, net.input_shape.numel());
    if (finite_diff_gradient(net, x, 0, h).warnings.empty()) return x;
  }
  throw DomainError("could not sample a generic input away from gating boundaries");
}

// Resamples until every pre-activation has magnitude >= floor.
inline Vec sample_strongly_generic_input(const Network& net, Rng& rng, double floor, int max_tries = 2000) {
  for (int t = 0; t < max_tries; ++t) {
    Vec x = sample_input(rng, net.input_shape.numel());
    const ForwardTrace trace = forward(net, x);
    double min_abs = std::numeric_limits<double>::infinity();
    for (const Vec& z : trace.preactivations) {
      for (double v : z) min_abs = std::min(min_abs, std::fabs(v));
    }
    if (min_abs >= floor) return x;
  }
  throw DomainError("could not sample an input with all |z| >= " + std::to_string(floor));
}

}  // namespace detail

// Runs the path-space oracle suite on freshly sampled dense networks:
//   1. forward logit vs the path-space dot product <phi_G(x), omega>
//   2. hard pullback vs the sum of hard-gated atoms
//   3. excitation pullback (temp 0.3) vs the sum of soft-gated atoms
//   4. product kernel vs the explicit feature inner product (hard + sigmoid)
//   5. representation identity <v, x~> = induced forward (hard and temps
//      0.15 / 0.3 / 0.5)
//   6. hard pullback vs central finite differences at generic points
//   7. zero-temperature limit of the excitation pullback, with
//      monotonicity across temp in {0.1, 0.03, 0.01, 0.003}
inline VerifyReport run_verification(const VerifyOptions& opt = {}) {
  Rng rng(opt.seed);
  double dev_logit = 0.0, dev_hard_pb = 0.0, dev_exc_pb = 0.0, dev_kernel = 0.0;
  double dev_repr = 0.0, dev_grad = 0.0, dev_zero_temp = 0.0, worst_monotone = -1.0;

  const GatingSpec hard = GatingSpec::hard();
  const GatingSpec exc = GatingSpec::sigmoid(0.3);
  const std::vector<double> repr_temps = {0.15, 0.3, 0.5};
  const std::vector<double> limit_temps = {0.1, 0.03, 0.01, 0.003};

  for (int n = 0; n < opt.nets; ++n) {
    const Network net = detail::sample_oracle_net(rng, opt.max_widths);
    const PathTable table = enumerate_paths(net);
    const Vec omega0 = omega_vector(net, 0, table);

    for (int k = 0; k < opt.inputs_per_net; ++k) {
      const Vec x = detail::sample_input(rng, net.input_shape.numel());
      const ForwardTrace trace = forward(net, x);

      const auto hard_aug = augment_gates(gate_values(hard, trace));
      const auto exc_aug = augment_gates(gate_values(exc, trace));
      const Vec g_tensor = rank1_tensor(hard_aug, table);
      const Vec e_tensor = rank1_tensor(exc_aug, table);

      // 1. logit vs <phi, omega>
      const Vec phi = feature_map(x, g_tensor, table);
      double dot = 0.0;
      for (std::uint64_t i = 0; i < table.path_count0; ++i) dot += omega0[i] * phi[i];
      dev_logit = std::max(dev_logit, rel_dev(trace.logits[0], dot));

      // 2./3. pullbacks vs atom sums
      const PullbackVector pb_hard = pullback_head(net, trace, hard, 0);
      const PullbackVector pb_exc = pullback_head(net, trace, exc, 0);
      dev_hard_pb = std::max(dev_hard_pb, rel_dev(pb_hard.augmented(), path_pullback(net, 0, g_tensor, table).augmented()));
      dev_exc_pb = std::max(dev_exc_pb, rel_dev(pb_exc.augmented(), path_pullback(net, 0, e_tensor, table).augmented()));

      // 4. kernel vs feature inner product
      const Vec x2 = detail::sample_input(rng, net.input_shape.numel());
      const ForwardTrace trace2 = forward(net, x2);
      for (const GatingSpec& spec : {hard, exc}) {
        const Vec ta = rank1_tensor(augment_gates(gate_values(spec, trace)), table);
        const Vec tb = rank1_tensor(augment_gates(gate_values(spec, trace2)), table);
        const Vec fa = feature_map(x, ta, table);
        const Vec fb = feature_map(x2, tb, table);
        double explicit_dot = 0.0;
        for (std::uint64_t i = 0; i < table.path_count0; ++i) explicit_dot += fa[i] * fb[i];
        dev_kernel = std::max(dev_kernel, rel_dev(path_kernel(net, x, x2, spec), explicit_dot));
      }

      // 5. representation identity, hard and the working temperature range
      {
        const auto gates = gate_values(hard, trace);
        const double lhs = pb_hard.offset + [&] {
          double acc = 0.0;
          for (std::size_t i = 0; i < x.size(); ++i) acc += pb_hard.vector[i] * x[i];
          return acc;
        }();
        dev_repr = std::max(dev_repr, rel_dev(lhs, forward_induced(net, x, gates).logits[0]));
      }
      for (double temp : repr_temps) {
        const GatingSpec spec = GatingSpec::sigmoid(temp);
        const PullbackVector v = pullback_head(net, trace, spec, 0);
        double lhs = v.offset;
        for (std::size_t i = 0; i < x.size(); ++i) lhs += v.vector[i] * x[i];
        const auto gates = gate_values(spec, trace);
        dev_repr = std::max(dev_repr, rel_dev(lhs, forward_induced(net, x, gates).logits[0]));
      }
    }

    // 6. gradient identity at generic points
    for (int k = 0; k < opt.inputs_per_net; ++k) {
      const Vec x = detail::sample_generic_input(net, rng, 1e-6);
      const ForwardTrace trace = forward(net, x);
      const PullbackVector v = pullback_head(net, trace, hard, 0);
      const GradientEstimate fd = finite_diff_gradient(net, x, 0, 1e-6);
      for (std::size_t i = 0; i < x.size(); ++i) {
        dev_grad = std::max(dev_grad, std::fabs(v.vector[i] - fd.gradient[i]));
      }
    }

    // 7. zero-temperature limit on a strongly generic input
    {
      const Vec x = detail::sample_strongly_generic_input(net, rng, 0.1);
      const ForwardTrace trace = forward(net, x);
      const PullbackVector vg = pullback_head(net, trace, hard, 0);
      auto inf_dist = [&](double temp) {
        const PullbackVector vt = pullback_head(net, trace, GatingSpec::sigmoid(temp), 0);
        double d = 0.0;
        const Vec a = vt.augmented(), b = vg.augmented();
        for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::fabs(a[i] - b[i]));
        return d;
      };
      dev_zero_temp = std::max(dev_zero_temp, inf_dist(1e-4));
      double prev = inf_dist(limit_temps[0]);
      for (std::size_t i = 1; i < limit_temps.size(); ++i) {
        const double cur = inf_dist(limit_temps[i]);
        worst_monotone = std::max(worst_monotone, cur - prev);
        prev = cur;
      }
    }
  }

  VerifyReport report;
  const double tol = opt.tolerance;
  report.rows.push_back({"logit vs path-space dot product", dev_logit, tol, dev_logit <= tol});
  report.rows.push_back({"hard pullback vs atom sum", dev_hard_pb, tol, dev_hard_pb <= tol});
  report.rows.push_back({"excitation pullback vs atom sum", dev_exc_pb, tol, dev_exc_pb <= tol});
  report.rows.push_back({"product kernel vs feature dot product", dev_kernel, tol, dev_kernel <= tol});
  report.rows.push_back({"representation identity", dev_repr, tol, dev_repr <= tol});
  report.rows.push_back({"hard pullback vs finite differences", dev_grad, opt.fd_tolerance, dev_grad <= opt.fd_tolerance});
  report.rows.push_back({"zero-temperature limit (temp 1e-4)", dev_zero_temp, 1e-6, dev_zero_temp <= 1e-6});
  report.rows.push_back({"temperature monotonicity (max increase)", worst_monotone, 0.0, worst_monotone <= 0.0});
  return report;
}

}  // namespace gip
