#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "gip/pathspace.hpp"
#include "gip/verify.hpp"

using namespace gip;

namespace {

Network one_neuron_net() {
  Network net = make_dense_net({1, 1}, {{3.0}});
  std::get<Affine>(net.stages[0]).weight = {2.0};
  std::get<Affine>(net.stages[0]).bias = {-1.0};
  return net;
}

double feature_dot(const Vec& a, const Vec& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

TEST_CASE("path counts follow the closed form") {
  Rng rng(3);

  SECTION("widths (2,3,2): 3*4*2 = 24 paths") {
    const Network net = random_dense_net({2, 3, 2}, 1, rng);
    const PathTable t = enumerate_paths(net);
    CHECK(t.path_count0 == 24);
    CHECK(t.path_count1 == 8);
    CHECK(t.aug_widths == std::vector<int>{3, 4, 2});
  }
  SECTION("single 1-1 layer: signal path plus bias path") {
    const PathTable t = enumerate_paths(one_neuron_net());
    CHECK(t.path_count0 == 2);
    CHECK(t.path_count1 == 1);
  }
  SECTION("conv networks are unsupported") {
    Network net;
    net.input_shape = Shape{{1, 2, 2}};
    Conv2d conv;
    conv.in_channels = 1;
    conv.out_channels = 1;
    conv.kh = conv.kw = 1;
    conv.weight = {1.0};
    conv.bias = {0.0};
    net.stages.push_back(std::move(conv));
    net.stages.push_back(GatePoint{1});
    net.heads = {Vec(4, 1.0)};
    CHECK_THROWS_AS(enumerate_paths(net), OracleUnsupportedError);
  }
  SECTION("the cap is enforced and names the count") {
    const Network net = random_dense_net({2, 3, 2}, 1, rng);
    try {
      enumerate_paths(net, 10);
      FAIL("expected OracleTooLargeError");
    } catch (const OracleTooLargeError& e) {
      CHECK(e.path_count() == 24);
      CHECK(std::string(e.what()).find("24") != std::string::npos);
    }
  }
}

TEST_CASE("path table order round-trips") {
  Rng rng(71);
  const Network net = random_dense_net({2, 3, 2}, 1, rng);
  const PathTable t = enumerate_paths(net);
  for (std::uint64_t i = 0; i < t.path_count0; ++i) {
    const PathIndex p = t.path_at(i);
    CHECK(t.index_of(p) == i);
    CHECK(t.index_of(p) == static_cast<std::uint64_t>(p.indices[0]) * t.path_count1 + t.p1_index_of(p));
  }
}

TEST_CASE("omega on the one-neuron net") {
  const Network net = one_neuron_net();
  CHECK(omega(net, 0, PathIndex{{0, 0}}) == 6.0);   // signal path: 3 * 2
  CHECK(omega(net, 0, PathIndex{{1, 0}}) == -3.0);  // bias path: 3 * (-1)
}

TEST_CASE("omega is zero through zero weights and invalid transitions") {
  Rng rng(73);
  Network net = random_dense_net({1, 1, 1}, 1, rng);
  std::get<Affine>(net.stages[0]).weight = {0.0};
  CHECK(omega(net, 0, PathIndex{{0, 0, 0}}) == 0.0);

  // p = (0, 1, 0): enters the bias coordinate at layer 1 from a signal
  // coordinate; structurally zero, flagged in strict mode.
  CHECK(omega(net, 0, PathIndex{{0, 1, 0}}) == 0.0);
  CHECK_THROWS_AS(omega(net, 0, PathIndex{{0, 1, 0}}, true), DomainError);
  CHECK_NOTHROW(omega(net, 0, PathIndex{{1, 1, 0}}, true));
}

TEST_CASE("omega vector recomputes bit for bit") {
  Rng rng(79);
  const Network net = random_dense_net({3, 4, 2}, 2, rng);
  const PathTable t = enumerate_paths(net);
  const Vec a = omega_vector(net, 1, t);
  const Vec b = omega_vector(net, 1, t);
  REQUIRE(a.size() == t.path_count0);
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  for (std::uint64_t i = 0; i < t.path_count0; i += 5) {
    CHECK(a[i] == omega(net, 1, t.path_at(i)));
  }
}

TEST_CASE("path activity is the product of on-path gates") {
  const std::vector<Vec> ones = {{1.0, 1.0, 1.0, 1.0}, {1.0, 1.0}};
  CHECK(path_activity(ones, PathIndex{{0, 2, 1}}) == 1.0);

  const std::vector<Vec> with_zero = {{1.0, 0.0, 1.0, 1.0}, {1.0, 1.0}};
  CHECK(path_activity(with_zero, PathIndex{{0, 1, 0}}) == 0.0);

  Rng rng(83);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<Vec> gates = {{0.0, 0.0, 0.0, 1.0}, {0.0, 0.0}};
    for (Vec& g : gates) {
      for (double& v : g) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    }
    gates[0][3] = 1.0;  // bias coordinate stays on
    const PathIndex p{{0, rng.uniform_int(0, 3), rng.uniform_int(0, 1)}};
    const double expected = gates[0][p.indices[1]] * gates[1][p.indices[2]];
    CHECK(path_activity(gates, p) == expected);
  }
}

TEST_CASE("rank-1 tensors factorize into path activities") {
  Rng rng(89);
  const Network net = random_dense_net({2, 3, 2}, 1, rng);
  const PathTable t = enumerate_paths(net);
  const Vec x = {0.3, -0.7};
  const ForwardTrace trace = forward(net, x);
  const auto aug = augment_gates(gate_values(GatingSpec::sigmoid(0.3), trace));
  const Vec tau = rank1_tensor(aug, t);
  for (std::uint64_t i = 0; i < t.path_count0; ++i) {
    const PathIndex p = t.path_at(i);
    CHECK(tau[t.p1_index_of(p)] == path_activity(aug, p));
  }
}

TEST_CASE("feature map structure") {
  Rng rng(97);
  const Network net = random_dense_net({2, 3, 2}, 1, rng);
  const PathTable t = enumerate_paths(net);

  SECTION("x = 0 leaves only bias-coordinate entries") {
    Vec tau(t.path_count1, 0.5);
    const Vec phi = feature_map({0.0, 0.0}, tau, t);
    for (std::uint64_t i = 0; i < t.path_count0; ++i) {
      const PathIndex p = t.path_at(i);
      if (p.indices[0] == 2) {
        CHECK(phi[i] == 0.5);  // bias coordinate of the input
      } else {
        CHECK(phi[i] == 0.0);
      }
    }
  }
  SECTION("zero tensor gives the zero feature") {
    const Vec phi = feature_map({0.4, 0.2}, Vec(t.path_count1, 0.0), t);
    for (double v : phi) CHECK(v == 0.0);
  }
}

TEST_CASE("path-space identities on random nets") {
  Rng rng(101);
  for (int rep = 0; rep < 10; ++rep) {
    const Network net = random_dense_net({2, 3, 2}, 2, rng);
    const PathTable t = enumerate_paths(net);
    const Vec om = omega_vector(net, 0, t);
    Vec x(2);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    const ForwardTrace trace = forward(net, x);
    const auto hard_aug = augment_gates(gate_values(GatingSpec::hard(), trace));
    const auto soft_aug = augment_gates(gate_values(GatingSpec::sigmoid(0.3), trace));
    const Vec g_tensor = rank1_tensor(hard_aug, t);
    const Vec e_tensor = rank1_tensor(soft_aug, t);

    // f(x) = <phi_G(x), omega>
    CHECK(rel_dev(trace.logits[0], feature_dot(feature_map(x, g_tensor, t), om)) <= 1e-9);

    // path_pullback against the backward pass, hard and soft
    CHECK(rel_dev(path_pullback(net, 0, g_tensor, t).augmented(),
                  pullback_head(net, trace, GatingSpec::hard(), 0).augmented()) <= 1e-9);
    CHECK(rel_dev(path_pullback(net, 0, e_tensor, t).augmented(),
                  pullback_head(net, trace, GatingSpec::sigmoid(0.3), 0).augmented()) <= 1e-9);

    // path_function routes
    CHECK(rel_dev(path_function(net, 0, x, g_tensor, t), trace.logits[0]) <= 1e-9);
    CHECK(path_function(net, 0, x, Vec(t.path_count1, 0.0), t) == 0.0);
    CHECK(rel_dev(path_function(net, 0, x, e_tensor, t),
                  forward_induced(net, x, gate_values(GatingSpec::sigmoid(0.3), trace)).logits[0]) <= 1e-9);
  }
}

TEST_CASE("single-path tensor recovers one atom") {
  Rng rng(103);
  const Network net = random_dense_net({2, 3, 2}, 1, rng);
  const PathTable t = enumerate_paths(net);
  const Affine& w1 = std::get<Affine>(net.stages[0]);
  const Affine& w2 = std::get<Affine>(net.stages[2]);

  // Path p = (*, 1, 0): atom = y[0] * W2[0,1] * (row 1 of augmented W1).
  Vec tau(t.path_count1, 0.0);
  PathIndex p{{0, 1, 0}};
  tau[t.p1_index_of(p)] = 1.0;
  const PullbackVector v = path_pullback(net, 0, tau, t);
  const double coef = net.heads[0][0] * w2.w(0, 1);
  CHECK(v.vector[0] == Catch::Approx(coef * w1.w(1, 0)).epsilon(1e-14));
  CHECK(v.vector[1] == Catch::Approx(coef * w1.w(1, 1)).epsilon(1e-14));
  CHECK(v.offset == Catch::Approx(coef * w1.bias[1]).epsilon(1e-14));
}

TEST_CASE("product kernel") {
  Rng rng(107);

  SECTION("self-kernel with hard gates counts active units") {
    const Network net = random_dense_net({2, 3, 2}, 1, rng);
    Vec x(2);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    const ForwardTrace trace = forward(net, x);
    int active1 = 0, active2 = 0;
    for (double g : trace.hard_gates[0]) active1 += g > 0.0 ? 1 : 0;
    for (double g : trace.hard_gates[1]) active2 += g > 0.0 ? 1 : 0;
    const double x_norm2 = 1.0 + x[0] * x[0] + x[1] * x[1];  // augmented
    const double expected = x_norm2 * (active1 + 1) * active2;  // bias gate below the head layer only
    CHECK(path_kernel(net, x, x, GatingSpec::hard()) == Catch::Approx(expected).epsilon(1e-12));
  }

  SECTION("disjoint hard supports reduce a layer factor to the bias gate") {
    Network net = make_dense_net({1, 2, 1}, {{1.0}});
    std::get<Affine>(net.stages[0]).weight = {1.0, -1.0};
    std::get<Affine>(net.stages[0]).bias = {0.0, 0.0};
    std::get<Affine>(net.stages[2]).weight = {1.0, 1.0};
    std::get<Affine>(net.stages[2]).bias = {1.0};
    const Vec xa = {1.0}, xb = {-0.5};  // gates [1,0] vs [0,1] at layer 1
    const ForwardTrace ta = forward(net, xa), tb = forward(net, xb);
    REQUIRE(ta.hard_gates[0] == Vec{1.0, 0.0});
    REQUIRE(tb.hard_gates[0] == Vec{0.0, 1.0});
    const double last = ta.hard_gates[1][0] * tb.hard_gates[1][0];
    const double expected = (1.0 + xa[0] * xb[0]) * (0.0 + 1.0) * last;  // layer-1 factor is the bias gate alone
    REQUIRE(expected != 0.0);
    CHECK(path_kernel(net, xa, xb, GatingSpec::hard()) == Catch::Approx(expected).margin(1e-12));
  }

  SECTION("kernel equals the explicit feature inner product") {
    for (int rep = 0; rep < 10; ++rep) {
      const Network net = random_dense_net({2, 3, 2}, 1, rng);
      const PathTable t = enumerate_paths(net);
      Vec x(2), x2(2);
      for (double& v : x) v = rng.uniform(-1.0, 1.0);
      for (double& v : x2) v = rng.uniform(-1.0, 1.0);
      const GatingSpec spec = GatingSpec::sigmoid(0.3);
      const Vec ta = rank1_tensor(augment_gates(gate_values(spec, forward(net, x))), t);
      const Vec tb = rank1_tensor(augment_gates(gate_values(spec, forward(net, x2))), t);
      const double explicit_dot = feature_dot(feature_map(x, ta, t), feature_map(x2, tb, t));
      CHECK(rel_dev(path_kernel(net, x, x2, spec), explicit_dot) <= 1e-9);
    }
  }
}

TEST_CASE("path space dwarfs the parameter count") {
  Rng rng(109);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<int> widths;
    const int depth = rng.uniform_int(2, 3);
    for (int l = 0; l <= depth; ++l) widths.push_back(rng.uniform_int(2, 5));
    const Network net = random_dense_net(widths, 1, rng);
    const PathTable t = enumerate_paths(net);
    std::uint64_t params = 0;
    for (const Stage& s : net.stages) {
      if (const auto* a = std::get_if<Affine>(&s)) params += a->weight.size() + a->bias.size();
    }
    params += net.heads[0].size();
    CHECK(t.path_count0 > params);
  }
}

TEST_CASE("path table fingerprint binds to the network") {
  Rng rng(113);
  Network net = random_dense_net({2, 3, 2}, 1, rng);
  const PathTable t = enumerate_paths(net);
  CHECK(t.net_fingerprint == fingerprint(net));
  std::get<Affine>(net.stages[0]).weight[0] += 1.0;
  CHECK(t.net_fingerprint != fingerprint(net));
}
