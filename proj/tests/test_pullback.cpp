#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "gip/pullback.hpp"
#include "gip/verify.hpp"

using namespace gip;

namespace {

Network one_neuron_net() {
  Network net = make_dense_net({1, 1}, {{3.0}});
  std::get<Affine>(net.stages[0]).weight = {2.0};
  std::get<Affine>(net.stages[0]).bias = {-1.0};
  return net;
}

double dot_plus_offset(const PullbackVector& v, const Vec& x) {
  double acc = v.offset;
  for (std::size_t i = 0; i < x.size(); ++i) acc += v.vector[i] * x[i];
  return acc;
}

}  // namespace

TEST_CASE("one-neuron pullbacks by hand") {
  const Network net = one_neuron_net();
  const ForwardTrace trace = forward(net, {1.0});

  SECTION("hard gating reproduces the gradient and the logit") {
    const PullbackVector v = pullback_head(net, trace, GatingSpec::hard(), 0);
    CHECK(v.vector == Vec{6.0});
    CHECK(v.offset == -3.0);
    CHECK(dot_plus_offset(v, {1.0}) == 3.0);
  }
  SECTION("sigmoid gating scales by the excitation") {
    const PullbackVector v = pullback_head(net, trace, GatingSpec::sigmoid(0.3), 0);
    const double gate = 1.0 / (1.0 + std::exp(-1.0 / 0.3));  // logistic(10/3)
    CHECK(v.vector[0] == Catch::Approx(6.0 * gate).epsilon(1e-15));
    CHECK(v.offset == Catch::Approx(-3.0 * gate).epsilon(1e-15));
    CHECK(v.vector[0] == Catch::Approx(5.7933).margin(1e-4));
    CHECK(v.offset == Catch::Approx(-2.8967).margin(1e-4));
  }
}

TEST_CASE("hard pullback matches finite differences at generic points") {
  Rng rng(41);
  for (int rep = 0; rep < 10; ++rep) {
    const Network net = random_dense_net({2, 3, 2}, 2, rng);
    const Vec x = detail::sample_generic_input(net, rng, 1e-6);
    const ForwardTrace trace = forward(net, x);
    const PullbackVector v = pullback_head(net, trace, GatingSpec::hard(), 0);
    const GradientEstimate fd = finite_diff_gradient(net, x, 0, 1e-6);
    REQUIRE(fd.warnings.empty());
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(std::fabs(v.vector[i] - fd.gradient[i]) <= 1e-5);
    }
  }
}

TEST_CASE("finite differences on an always-on net reproduce the linear map") {
  // Positive weights and a large bias keep every unit active near x.
  Network net = make_dense_net({2, 2}, {{1.0, 2.0}});
  std::get<Affine>(net.stages[0]).weight = {0.5, 1.5, 2.0, 0.25};
  std::get<Affine>(net.stages[0]).bias = {10.0, 10.0};
  const Vec x = {0.3, -0.2};
  const GradientEstimate fd = finite_diff_gradient(net, x, 0);
  CHECK(fd.warnings.empty());
  // grad = y^T W = [1*0.5 + 2*2.0, 1*1.5 + 2*0.25]
  CHECK(fd.gradient[0] == Catch::Approx(4.5).margin(1e-9));
  CHECK(fd.gradient[1] == Catch::Approx(2.0).margin(1e-9));
}

TEST_CASE("finite differences warn near gating boundaries") {
  const Network net = one_neuron_net();
  const GradientEstimate fd = finite_diff_gradient(net, {0.5}, 0, 1e-6);  // z = 0 exactly
  REQUIRE_FALSE(fd.warnings.empty());
  CHECK(fd.warnings[0].layer == 1);
  CHECK(fd.warnings[0].unit == 0);
  CHECK(fd.warnings[0].threshold == Catch::Approx(10.0 * 1e-6 * 2.0));
}

TEST_CASE("first-layer neuron pullback is the weight row") {
  Rng rng(43);
  const Network net = random_dense_net({3, 4, 2}, 1, rng);
  const Vec x = {0.2, -0.4, 0.9};
  const ForwardTrace trace = forward(net, x);
  const Affine& first = std::get<Affine>(net.stages[0]);
  for (const GatingSpec& spec : {GatingSpec::hard(), GatingSpec::sigmoid(0.3)}) {
    for (int i = 0; i < 4; ++i) {
      const PullbackVector v = pullback_neuron(net, trace, spec, 1, i);
      for (int j = 0; j < 3; ++j) CHECK(v.vector[j] == first.w(i, j));
      CHECK(v.offset == first.bias[i]);
    }
  }
}

TEST_CASE("head pullback decomposes over last-layer neurons") {
  Rng rng(47);
  for (const GatingSpec& spec : {GatingSpec::hard(), GatingSpec::sigmoid(0.3)}) {
    const Network net = random_dense_net({2, 4, 3}, 2, rng);
    Vec x(2);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    const ForwardTrace trace = forward(net, x);
    const auto gates = gate_values(spec, trace);

    const PullbackVector whole = pullback_head(net, trace, spec, 0);
    Vec combined(3, 0.0);  // augmented accumulator: 2 coords + offset
    for (int i = 0; i < 3; ++i) {
      const PullbackVector vi = pullback_neuron(net, trace, spec, 2, i);
      const double w = net.heads[0][i] * gates[1][i];
      combined[0] += w * vi.vector[0];
      combined[1] += w * vi.vector[1];
      combined[2] += w * vi.offset;
    }
    CHECK(rel_dev(whole.augmented(), combined) <= 1e-9);
  }
}

TEST_CASE("dead sub-network leaves only the bias path") {
  // Layer 1 is forced off, so the pullback of z_2[0] is its bare bias.
  Network net = make_dense_net({1, 1, 1}, {{1.0}});
  std::get<Affine>(net.stages[0]).weight = {1.0};
  std::get<Affine>(net.stages[0]).bias = {-5.0};
  std::get<Affine>(net.stages[2]).weight = {2.0};
  std::get<Affine>(net.stages[2]).bias = {7.0};
  const ForwardTrace trace = forward(net, {1.0});  // z_1 = -4 < 0
  const PullbackVector v = pullback_neuron(net, trace, GatingSpec::hard(), 2, 0);
  CHECK(v.vector == Vec{0.0});
  CHECK(v.offset == 7.0);
}

TEST_CASE("pullback is linear in the head") {
  // Integer weights keep the arithmetic exact, so distributivity is bitwise.
  Rng rng(53);
  Network net = make_dense_net({2, 3, 2}, {Vec{1.0, -2.0}, Vec{3.0, 1.0}, Vec{0.0, 0.0}});
  for (Stage& s : net.stages) {
    if (auto* a = std::get_if<Affine>(&s)) {
      for (double& v : a->weight) v = static_cast<double>(rng.uniform_int(-2, 2));
      for (double& v : a->bias) v = static_cast<double>(rng.uniform_int(-2, 2));
    }
  }
  const double alpha = 2.0, beta = -3.0;
  for (int i = 0; i < 2; ++i) net.heads[2][i] = alpha * net.heads[0][i] + beta * net.heads[1][i];

  const Vec x = {1.0, -2.0};
  const ForwardTrace trace = forward(net, x);
  for (const GatingSpec& spec : {GatingSpec::hard(), GatingSpec::sigmoid(0.5)}) {
    const PullbackVector va = pullback_head(net, trace, spec, 0);
    const PullbackVector vb = pullback_head(net, trace, spec, 1);
    const PullbackVector vc = pullback_head(net, trace, spec, 2);
    for (int j = 0; j < 2; ++j) {
      CHECK(vc.vector[j] == Catch::Approx(alpha * va.vector[j] + beta * vb.vector[j]).margin(1e-12));
    }
    CHECK(vc.offset == Catch::Approx(alpha * va.offset + beta * vb.offset).margin(1e-12));
  }
  // Bitwise equality for the hard case with integer gates and weights.
  const PullbackVector va = pullback_head(net, trace, GatingSpec::hard(), 0);
  const PullbackVector vb = pullback_head(net, trace, GatingSpec::hard(), 1);
  const PullbackVector vc = pullback_head(net, trace, GatingSpec::hard(), 2);
  for (int j = 0; j < 2; ++j) {
    const double expected = alpha * va.vector[j] + beta * vb.vector[j];
    CHECK(vc.vector[j] == expected);
  }
}

TEST_CASE("representation identity holds for dense and pool-free conv nets") {
  Rng rng(59);

  SECTION("dense") {
    for (int rep = 0; rep < 30; ++rep) {
      const Network net = random_dense_net({3, 4, 3}, 2, rng);
      Vec x(3);
      for (double& v : x) v = rng.uniform(-1.0, 1.0);
      const ForwardTrace trace = forward(net, x);
      for (const GatingSpec& spec : {GatingSpec::hard(), GatingSpec::sigmoid(0.15), GatingSpec::sigmoid(0.5)}) {
        const PullbackVector v = pullback_head(net, trace, spec, 1);
        const double f = forward_induced(net, x, gate_values(spec, trace)).logits[1];
        CHECK(rel_dev(dot_plus_offset(v, x), f) <= 1e-9);
      }
    }
  }

  SECTION("conv without pooling") {
    Network net;
    net.input_shape = Shape{{1, 4, 4}};
    Conv2d conv;
    conv.in_channels = 1;
    conv.out_channels = 2;
    conv.kh = conv.kw = 3;
    conv.sh = conv.sw = 1;
    conv.ph = conv.pw = 0;
    conv.weight.resize(18);
    conv.bias.resize(2);
    for (double& v : conv.weight) v = rng.uniform(-1.0, 1.0);
    for (double& v : conv.bias) v = rng.uniform(-1.0, 1.0);
    net.stages.push_back(std::move(conv));
    net.stages.push_back(GatePoint{1});
    Affine fc;
    fc.in = 8;
    fc.out = 3;
    fc.weight.resize(24);
    fc.bias.resize(3);
    for (double& v : fc.weight) v = rng.uniform(-1.0, 1.0);
    for (double& v : fc.bias) v = rng.uniform(-1.0, 1.0);
    net.stages.push_back(std::move(fc));
    net.stages.push_back(GatePoint{2});
    net.heads = {Vec(3, 0.5)};
    REQUIRE(validate(net).empty());

    for (int rep = 0; rep < 10; ++rep) {
      Vec x(16);
      for (double& v : x) v = rng.uniform(-1.0, 1.0);
      const ForwardTrace trace = forward(net, x);
      for (const GatingSpec& spec : {GatingSpec::hard(), GatingSpec::sigmoid(0.3)}) {
        const PullbackVector v = pullback_head(net, trace, spec, 0);
        const double f = forward_induced(net, x, gate_values(spec, trace)).logits[0];
        CHECK(rel_dev(dot_plus_offset(v, x), f) <= 1e-9);
      }
    }
  }
}

TEST_CASE("excitation pullback converges to the hard pullback as temp drops") {
  Rng rng(61);
  const Network net = random_dense_net({3, 4, 2}, 1, rng);
  const Vec x = detail::sample_strongly_generic_input(net, rng, 0.1);
  const ForwardTrace trace = forward(net, x);
  const PullbackVector hard = pullback_head(net, trace, GatingSpec::hard(), 0);

  double prev = 1e300;
  for (double temp : {0.1, 0.03, 0.01, 0.003}) {
    const PullbackVector soft = pullback_head(net, trace, GatingSpec::sigmoid(temp), 0);
    double dist = 0.0;
    const Vec a = soft.augmented(), b = hard.augmented();
    for (std::size_t i = 0; i < a.size(); ++i) dist = std::max(dist, std::fabs(a[i] - b[i]));
    CHECK(dist <= prev);
    prev = dist;
  }
}

TEST_CASE("pullback rejects mismatched traces and bad indices") {
  Rng rng(67);
  const Network a = random_dense_net({2, 3, 2}, 1, rng);
  const Network b = random_dense_net({2, 4, 2}, 1, rng);
  const ForwardTrace trace_b = forward(b, {0.1, 0.2});
  CHECK_THROWS_AS(pullback_head(a, trace_b, GatingSpec::hard(), 0), StructureError);

  const ForwardTrace trace_a = forward(a, {0.1, 0.2});
  CHECK_THROWS_AS(pullback_head(a, trace_a, GatingSpec::hard(), 5), StructureError);
  CHECK_THROWS_AS(pullback_neuron(a, trace_a, GatingSpec::hard(), 7, 0), StructureError);
  CHECK_THROWS_AS(pullback_neuron(a, trace_a, GatingSpec::hard(), 1, 9), ShapeError);
}
