#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gip/pullback.hpp"

namespace gip {

// One unit index per layer, p = (p0, p1, ..., pL). Layers 0..L-1 carry an
// extra bias coordinate (index d_l); the head layer L does not. A path with
// nonzero weight keeps its bias coordinates as a prefix: the augmented
// matrix's last row [0...0 1] zeroes every signal-to-bias transition.
struct PathIndex {
  std::vector<int> indices;
};

// Enumeration of P0 for a small dense network. Lexicographic row-major
// order, last index fastest. omega is filled per head by omega_vector.
struct PathTable {
  std::vector<int> widths;      // d0..dL
  std::vector<int> aug_widths;  // D_l = d_l + 1 for l < L, D_L = d_L
  std::uint64_t path_count0 = 0;
  std::uint64_t path_count1 = 0;
  Vec omega;
  int omega_class = -1;
  std::uint64_t net_fingerprint = 0;

  int depth() const { return static_cast<int>(widths.size()) - 1; }

  PathIndex path_at(std::uint64_t idx) const {
    PathIndex p;
    p.indices.resize(aug_widths.size());
    for (int l = static_cast<int>(aug_widths.size()) - 1; l >= 0; --l) {
      p.indices[l] = static_cast<int>(idx % aug_widths[l]);
      idx /= aug_widths[l];
    }
    return p;
  }

  std::uint64_t index_of(const PathIndex& p) const {
    std::uint64_t idx = 0;
    for (std::size_t l = 0; l < aug_widths.size(); ++l) idx = idx * aug_widths[l] + p.indices[l];
    return idx;
  }

  // Index of the sub-path p|1 in the P1 enumeration.
  std::uint64_t p1_index_of(const PathIndex& p) const {
    std::uint64_t idx = 0;
    for (std::size_t l = 1; l < aug_widths.size(); ++l) idx = idx * aug_widths[l] + p.indices[l];
    return idx;
  }
};

constexpr std::uint64_t kDefaultPathCap = 10'000'000;

namespace detail {

// The oracle covers exactly the alternating [Affine, Gate] backbone with
// heads on the last gated layer.
inline std::vector<const Affine*> dense_layers(const Network& net) {
  std::vector<const Affine*> layers;
  if (net.stages.empty() || net.stages.size() % 2 != 0) {
    throw OracleUnsupportedError("path oracle requires an alternating affine/gate network");
  }
  for (std::size_t i = 0; i < net.stages.size(); i += 2) {
    const auto* a = std::get_if<Affine>(&net.stages[i]);
    const auto* g = std::get_if<GatePoint>(&net.stages[i + 1]);
    if (!a || !g) {
      throw OracleUnsupportedError("path oracle supports dense gated networks only; stage " + std::to_string(i) +
                                   " is not an affine/gate pair");
    }
    layers.push_back(a);
  }
  return layers;
}

// Entry of the augmented weight matrix of layer l (1-based). The last layer
// has no bias row: its output indices range over d_L only.
inline double aug_entry(const Affine& a, int i, int j, bool last_layer) {
  if (i < a.out) {
    return j < a.in ? a.w(i, j) : a.bias[i];
  }
  // bias row, absent at the last layer
  if (last_layer) return 0.0;
  return j == a.in ? 1.0 : 0.0;
}

inline bool is_valid_path(const PathIndex& p, const std::vector<int>& widths) {
  // Bias coordinates must form a prefix: p_l on bias requires p_{l-1} on bias.
  for (std::size_t l = 1; l + 1 < p.indices.size(); ++l) {
    if (p.indices[l] == widths[l] && p.indices[l - 1] != widths[l - 1]) return false;
  }
  return true;
}

}  // namespace detail

// Sizes, order and fingerprint only; omega is filled separately.
inline PathTable enumerate_paths(const Network& net, std::uint64_t cap = kDefaultPathCap) {
  const auto layers = detail::dense_layers(net);
  PathTable t;
  t.widths.push_back(layers.front()->in);
  for (const Affine* a : layers) t.widths.push_back(a->out);
  const int L = t.depth();
  for (int l = 0; l <= L; ++l) t.aug_widths.push_back(l < L ? t.widths[l] + 1 : t.widths[l]);

  std::uint64_t c0 = 1, c1 = 1;
  for (int l = 0; l <= L; ++l) {
    c0 *= static_cast<std::uint64_t>(t.aug_widths[l]);
    if (l >= 1) c1 *= static_cast<std::uint64_t>(t.aug_widths[l]);
    if (c0 > (std::uint64_t{1} << 62)) {
      throw OracleTooLargeError("path count overflows the enumeration", c0);
    }
  }
  t.path_count0 = c0;
  t.path_count1 = c1;
  if (c0 > cap) {
    throw OracleTooLargeError("path count " + std::to_string(c0) + " exceeds the cap of " + std::to_string(cap), c0);
  }
  t.net_fingerprint = fingerprint(net);
  return t;
}

// omega_p = y_c[p_L] * prod_l W~_l[p_l, p_{l-1}]. Transitions forbidden by
// the bias-prefix rule hit a structural zero; strict mode flags them
// instead.
inline double omega(const Network& net, int class_index, const PathIndex& p, bool strict = false) {
  const auto layers = detail::dense_layers(net);
  const int L = static_cast<int>(layers.size());
  if (class_index < 0 || class_index >= static_cast<int>(net.heads.size())) {
    throw StructureError("head index " + std::to_string(class_index) + " out of range");
  }
  if (static_cast<int>(p.indices.size()) != L + 1) {
    throw ShapeError("path has " + std::to_string(p.indices.size()) + " indices, network depth needs " +
                     std::to_string(L + 1));
  }
  if (strict) {
    std::vector<int> widths;
    widths.push_back(layers.front()->in);
    for (const Affine* a : layers) widths.push_back(a->out);
    if (!detail::is_valid_path(p, widths)) {
      throw DomainError("path violates the bias-prefix rule (signal-to-bias transition)");
    }
  }
  double prod = 1.0;
  for (int l = 1; l <= L; ++l) {
    prod *= detail::aug_entry(*layers[l - 1], p.indices[l], p.indices[l - 1], l == L);
  }
  return prod * net.heads[class_index][p.indices[L]];
}

// All omega_p in enumeration order, via the same per-path product so a
// recomputation is bit-identical.
inline Vec omega_vector(const Network& net, int class_index, const PathTable& t) {
  Vec out(t.path_count0);
  for (std::uint64_t i = 0; i < t.path_count0; ++i) {
    out[i] = omega(net, class_index, t.path_at(i));
  }
  return out;
}

// Appends the always-on bias gate to every layer except the head layer.
inline std::vector<Vec> augment_gates(const std::vector<Vec>& gates) {
  std::vector<Vec> out = gates;
  for (std::size_t l = 0; l + 1 < out.size(); ++l) out[l].push_back(1.0);
  return out;
}

// Path activity: product of the gate values along p (layers 1..L). Gate
// vectors must already carry the bias coordinate.
inline double path_activity(const std::vector<Vec>& aug_gates, const PathIndex& p) {
  double prod = 1.0;
  for (std::size_t l = 1; l < p.indices.size(); ++l) {
    prod *= aug_gates[l - 1][p.indices[l]];
  }
  return prod;
}

// Rank-1 tensor over P1 from per-layer gate values: tau_p = prod_l
// lambda_l[p_l].
inline Vec rank1_tensor(const std::vector<Vec>& aug_gates, const PathTable& t) {
  Vec tau(t.path_count1);
  PathIndex p;
  p.indices.assign(t.aug_widths.size(), 0);
  for (std::uint64_t q = 0; q < t.path_count1; ++q) {
    std::uint64_t idx = q;
    for (int l = t.depth(); l >= 1; --l) {
      p.indices[l] = static_cast<int>(idx % t.aug_widths[l]);
      idx /= t.aug_widths[l];
    }
    tau[q] = path_activity(aug_gates, p);
  }
  return tau;
}

// Feature vector phi_tau(x) over P0: phi_p = tau_{p|1} * x~[p_0].
inline Vec feature_map(const Vec& x, const Vec& tau, const PathTable& t) {
  if (x.size() + 1 != static_cast<std::size_t>(t.aug_widths[0])) {
    throw ShapeError("input width does not match the path table");
  }
  if (tau.size() != t.path_count1) throw ShapeError("tensor size does not match |P1|");
  Vec phi(t.path_count0);
  for (int p0 = 0; p0 < t.aug_widths[0]; ++p0) {
    const double xv = p0 < static_cast<int>(x.size()) ? x[p0] : 1.0;
    double* dst = phi.data() + static_cast<std::uint64_t>(p0) * t.path_count1;
    for (std::uint64_t q = 0; q < t.path_count1; ++q) dst[q] = tau[q] * xv;
  }
  return phi;
}

// tau-pullback: sum over P1 of tau_p times the path's constant atom. The
// result lives in the augmented input space (vector + offset).
inline PullbackVector path_pullback(const Network& net, int class_index, const Vec& tau, const PathTable& t) {
  const auto layers = detail::dense_layers(net);
  const int L = t.depth();
  if (class_index < 0 || class_index >= static_cast<int>(net.heads.size())) {
    throw StructureError("head index " + std::to_string(class_index) + " out of range");
  }
  if (tau.size() != t.path_count1) throw ShapeError("tensor size does not match |P1|");
  Vec aug(t.aug_widths[0], 0.0);
  PathIndex p;
  p.indices.assign(t.aug_widths.size(), 0);
  for (std::uint64_t q = 0; q < t.path_count1; ++q) {
    if (tau[q] == 0.0) continue;
    std::uint64_t idx = q;
    for (int l = L; l >= 1; --l) {
      p.indices[l] = static_cast<int>(idx % t.aug_widths[l]);
      idx /= t.aug_widths[l];
    }
    // Weight of the path above layer 1 times the head coefficient.
    double coef = net.heads[class_index][p.indices[L]];
    for (int l = 2; l <= L; ++l) {
      coef *= detail::aug_entry(*layers[l - 1], p.indices[l], p.indices[l - 1], l == L);
    }
    if (coef == 0.0) continue;
    const double scale = tau[q] * coef;
    // Atom: row p_1 of the augmented first-layer matrix.
    const Affine& first = *layers[0];
    for (int j = 0; j < t.aug_widths[0]; ++j) {
      aug[j] += scale * detail::aug_entry(first, p.indices[1], j, L == 1);
    }
  }
  PullbackVector out;
  out.offset = aug.back();
  aug.pop_back();
  out.vector = std::move(aug);
  out.class_index = class_index;
  return out;
}

// f_tau(x) = <v_tau, x~> = <phi_tau(x), omega>.
inline double path_function(const Network& net, int class_index, const Vec& x, const Vec& tau, const PathTable& t) {
  const PullbackVector v = path_pullback(net, class_index, tau, t);
  double acc = v.offset;
  for (std::size_t i = 0; i < x.size(); ++i) acc += v.vector[i] * x[i];
  return acc;
}

// Product kernel K_Lambda(x, x') = <x~, x~'> prod_l <lambda_l(x),
// lambda_l(x')>, with gate vectors augmented below the head layer. Equals
// the path-space feature inner product on oracle-sized nets; computable for
// any network via its forward traces.
inline double path_kernel(const Network& net, const Vec& x, const Vec& x2, const GatingSpec& spec) {
  const ForwardTrace ta = forward(net, x);
  const ForwardTrace tb = forward(net, x2);
  const std::vector<Vec> ga = gate_values(spec, ta);
  const std::vector<Vec> gb = gate_values(spec, tb);
  double k = 1.0;  // <x~, x~'> includes the bias coordinate product 1*1
  for (std::size_t i = 0; i < x.size(); ++i) k += x[i] * x2[i];
  for (std::size_t l = 0; l < ga.size(); ++l) {
    double dot = l + 1 < ga.size() ? 1.0 : 0.0;  // bias gate contributes below the head layer
    for (std::size_t i = 0; i < ga[l].size(); ++i) dot += ga[l][i] * gb[l][i];
    k *= dot;
  }
  return k;
}

}  // namespace gip
