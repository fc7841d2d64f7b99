#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "gip/ascent.hpp"
#include "gip/stability.hpp"

using namespace gip;

namespace {

double dist(const Vec& a, const Vec& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

Network random_image_net(Rng& rng) {
  Network net;
  net.input_shape = Shape{{1, 4, 4}};
  Conv2d conv;
  conv.in_channels = 1;
  conv.out_channels = 2;
  conv.kh = conv.kw = 3;
  conv.sh = conv.sw = 1;
  conv.ph = conv.pw = 1;
  conv.weight.resize(18);
  conv.bias.resize(2);
  for (double& v : conv.weight) v = rng.uniform(-1.0, 1.0);
  for (double& v : conv.bias) v = rng.uniform(-1.0, 1.0);
  net.stages.push_back(std::move(conv));
  net.stages.push_back(GatePoint{1});
  net.stages.push_back(MaxPool2d{2, 2, 2, 2, 0, 0});
  Affine fc;
  fc.in = 8;
  fc.out = 3;
  fc.weight.resize(24);
  fc.bias.resize(3);
  for (double& v : fc.weight) v = rng.uniform(-1.0, 1.0);
  for (double& v : fc.bias) v = rng.uniform(-1.0, 1.0);
  net.stages.push_back(std::move(fc));
  net.stages.push_back(GatePoint{2});
  net.heads = {Vec(3), Vec(3)};
  for (Vec& h : net.heads) {
    for (double& v : h) v = rng.uniform(-1.0, 1.0);
  }
  net.normalization.mean = {0.1};
  net.normalization.std = {0.8};
  return net;
}

}  // namespace

TEST_CASE("zero direction leaves the input unchanged") {
  Network net = make_dense_net({2, 2}, {Vec(2, 1.0)});  // all-zero weights
  AscentConfig cfg;
  cfg.gating = GatingSpec::hard();
  StepInfo info;
  const Vec x0 = {0.3, -0.2};
  const Vec x1 = pga_step(net, x0, x0, cfg, &info);
  CHECK(x1 == x0);
  CHECK(info.zero_direction);
  CHECK(info.pre_projection_norm == 0.0);
}

TEST_CASE("first step has exactly the configured norm before projection") {
  Rng rng(201);
  const Network net = random_image_net(rng);
  Vec x0(16);
  for (double& v : x0) v = rng.uniform(-1.0, 1.0);
  AscentConfig cfg;
  cfg.steps = 1;
  StepInfo info;
  pga_step(net, x0, x0, cfg, &info);
  REQUIRE_FALSE(info.zero_direction);
  CHECK(std::fabs(info.pre_projection_norm - cfg.step_norm) <= 1e-9 * cfg.step_norm);
}

TEST_CASE("trajectories respect the ball and the value range") {
  Rng rng(203);
  const Network net = random_image_net(rng);
  Vec x0(16);
  for (double& v : x0) v = rng.uniform(-1.0, 1.0);

  for (const GatingSpec& spec : {GatingSpec::hard(), GatingSpec::sigmoid(0.3)}) {
    AscentConfig cfg;
    cfg.gating = spec;
    cfg.radius = 2.0;  // small enough that projection actually engages
    cfg.step_norm = 1.0;
    const AscentTrajectory traj = pga_run(net, x0, cfg);
    REQUIRE(traj.inputs.size() == 11);
    for (const Vec& x : traj.inputs) {
      CHECK(dist(x, x0) <= cfg.radius + 1e-9);
      for (double v : x) {
        CHECK(v >= cfg.value_min - 1e-15);
        CHECK(v <= cfg.value_max + 1e-15);
      }
    }
    for (std::size_t t = 0; t < traj.pre_projection_step_norms.size(); ++t) {
      if (!traj.zero_direction[t]) {
        CHECK(std::fabs(traj.pre_projection_step_norms[t] - cfg.step_norm) <= 1e-9);
      }
    }
  }
}

TEST_CASE("trajectory bookkeeping") {
  Rng rng(207);
  const Network net = random_image_net(rng);
  Vec x0(16, 0.1);

  AscentConfig cfg;
  cfg.steps = 1;
  const AscentTrajectory traj = pga_run(net, x0, cfg);
  CHECK(traj.inputs.size() == 2);
  CHECK(traj.target_logits.size() == 2);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    CHECK(traj.difference[i] == traj.inputs.back()[i] - x0[i]);
  }

  cfg.steps = 0;
  CHECK_THROWS_AS(pga_run(net, x0, cfg), DomainError);
}

TEST_CASE("runs are bit-reproducible") {
  Rng rng(211);
  const Network net = random_image_net(rng);
  Vec x0(16);
  for (double& v : x0) v = rng.uniform(-1.0, 1.0);
  AscentConfig cfg;
  const AscentTrajectory a = pga_run(net, x0, cfg);
  const AscentTrajectory b = pga_run(net, x0, cfg);
  REQUIRE(a.inputs.size() == b.inputs.size());
  for (std::size_t t = 0; t < a.inputs.size(); ++t) {
    CHECK(std::memcmp(a.inputs[t].data(), b.inputs[t].data(), a.inputs[t].size() * sizeof(double)) == 0);
  }
  CHECK(std::memcmp(a.target_logits.data(), b.target_logits.data(), a.target_logits.size() * sizeof(double)) == 0);
}

TEST_CASE("the normalization chain rule reweights the direction") {
  // v_model = [1, 1]; std = [1, 100] squeezes the second pixel coordinate.
  Network net = make_dense_net({2, 1}, {{1.0}});
  std::get<Affine>(net.stages[0]).weight = {1.0, 1.0};
  std::get<Affine>(net.stages[0]).bias = {10.0};  // always on
  net.normalization.mean = {0.0, 0.0};
  net.normalization.std = {1.0, 100.0};

  AscentConfig cfg;
  cfg.steps = 1;
  cfg.step_norm = 1.0;
  cfg.value_min = -50.0;
  cfg.value_max = 50.0;
  cfg.gating = GatingSpec::hard();
  const Vec x0 = {0.0, 0.0};
  const Vec x1 = pga_step(net, x0, x0, cfg);
  REQUIRE(x1 != x0);
  CHECK((x1[0] - x0[0]) / (x1[1] - x0[1]) == Catch::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("excitation ascent on the toy classifier raises the target logit") {
  Rng rng(314);
  Network init = make_classifier_net({2, 8, 8, 2}, rng);
  TrainConfig tcfg;
  tcfg.epochs = 15;
  tcfg.dataset.points_per_class = 128;
  tcfg.snapshot_epochs = {15};
  const auto snaps = train_sgd(std::move(init), tcfg);
  const Network& net = snaps.back().net;

  const Dataset probe = make_two_gaussians({.points_per_class = 1}, 99);
  AscentConfig cfg;
  cfg.steps = 10;
  cfg.step_norm = 0.5;
  cfg.radius = 3.0;
  cfg.value_min = -6.0;
  cfg.value_max = 6.0;
  cfg.target_class = probe.labels[0];
  cfg.gating = GatingSpec::sigmoid(0.3);
  const AscentTrajectory traj = pga_run(net, probe.inputs[0], cfg);
  CHECK(traj.target_logits.back() > traj.target_logits.front());
}
