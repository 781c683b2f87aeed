#include "kinofe/trainer.hpp"

#include "synthetic.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

using namespace kinofe;
using namespace kinofe::testing;

namespace {

BasisSet make_basis(int k, std::uint64_t seed, int hidden = 8, int depth = 2) {
  std::mt19937_64 rng(seed);
  return BasisSet(k, rng, Rk4Config{}, hidden, depth);
}

std::vector<RolloutWindow> windows_from(const Dataset& d, int horizon) {
  std::vector<RolloutWindow> out;
  for (const auto& env : d.envs) {
    for (const auto& t : env.trajectories) out.push_back(make_window(t, 1, horizon));
  }
  return out;
}

}  // namespace

TEST_CASE("multistep_loss examples") {
  const std::vector<PoseState> a{PoseState{1, 2, 3, 0.1, 0.2, 0.3}, PoseState{}};
  CHECK(multistep_loss(a, a).total == 0.0);

  std::vector<PoseState> b = a;
  b[1].x += 0.1;
  const auto r = multistep_loss(a, b);
  CHECK(r.total == doctest::Approx(0.01));
  CHECK(r.per_step[0] == 0.0);
  CHECK(r.per_dim[0] == doctest::Approx(0.01));

  const std::vector<PoseState> p{PoseState{0, 0, 0, 0, 0, kPi - 0.05}};
  const std::vector<PoseState> q{PoseState{0, 0, 0, 0, 0, -kPi + 0.05}};
  CHECK(multistep_loss(p, q).total == doctest::Approx(0.01));

  CHECK_THROWS_AS(multistep_loss(a, p), InvalidArgument);
}

TEST_CASE("rollout examples") {
  const BasisSet b = make_basis(2, 1);
  const Dataset d = plant_dataset(b, {VecX::Ones(2)}, 1, 12, 2);
  const auto& traj = d.envs[0].trajectories[0];

  const RolloutWindow one = make_window(traj, 3, 1);
  CoefficientVector cv;
  cv.alpha = VecX::Ones(2);
  const Vec22 in = assemble_input(one.initial, one.e_elev[0], one.e_sem[0]);
  const PoseState expect =
      from_body_frame(one.initial, predict(b, cv, in, Vec2(one.controls[0].steer, one.controls[0].speed)));
  const auto got = rollout(b, cv.alpha, one);
  REQUIRE(got.size() == 1);
  CHECK(multistep_loss(got, std::vector<PoseState>{expect}).total < 1e-24);

  const RolloutWindow w = make_window(traj, 2, 6);
  for (const auto& p : rollout(b, VecX::Zero(2), w)) CHECK(multistep_loss({&p, 1}, {&w.initial, 1}).total == 0.0);

  // The plant's own coefficients reproduce its trajectory.
  CHECK(multistep_loss(rollout(b, VecX::Ones(2), w), w.truth).total < 1e-20);
}

TEST_CASE("rollout gradient matches central differences") {
  // Identity activations keep the check away from ReLU kinks; the pose
  // composition and roll/pitch feedback are still nonlinear.
  std::mt19937_64 rng(3);
  std::vector<Net> nets;
  for (int i = 0; i < 2; ++i) nets.push_back(Net::he_uniform(basis_layer_sizes(6, 2), rng, Activation::Identity));
  BasisSet b(nets, Rk4Config{});
  const BasisSet plant = make_basis(2, 4, 6, 2);
  const Dataset d = plant_dataset(plant, {VecX::Ones(2)}, 3, 10, 5);
  const auto windows = windows_from(d, 5);
  MatX alphas(2, 3);
  alphas << 0.7, -1.1, 0.4, 1.3, 0.2, -0.8;
  std::vector<VecX> grads;
  rollout_loss_and_grad(b, windows, alphas, &grads);
  const double h = 1e-6;
  double worst = 0.0;
  for (int i = 0; i < b.k(); ++i) {
    VecX& p = b.net(i).params();
    for (Eigen::Index j = 0; j < p.size(); ++j) {
      const double keep = p[j];
      p[j] = keep + h;
      const double up = rollout_loss_and_grad(b, windows, alphas, nullptr).total;
      p[j] = keep - h;
      const double down = rollout_loss_and_grad(b, windows, alphas, nullptr).total;
      p[j] = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - grads[i][j]) / std::max(1e-6, std::abs(fd) + std::abs(grads[i][j])));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("rollout loss ignores window order") {
  const BasisSet b = make_basis(2, 6);
  const Dataset d = plant_dataset(make_basis(2, 7), {VecX::Ones(2)}, 4, 10, 8);
  auto windows = windows_from(d, 4);
  MatX alphas = MatX::Random(2, 4);
  std::vector<VecX> g1, g2;
  const double l1 = rollout_loss_and_grad(b, windows, alphas, &g1).total;
  std::reverse(windows.begin(), windows.end());
  alphas = alphas.rowwise().reverse().eval();
  const double l2 = rollout_loss_and_grad(b, windows, alphas, &g2).total;
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
  for (int i = 0; i < 2; ++i) CHECK((g1[i] - g2[i]).cwiseAbs().maxCoeff() <= 1e-10 * (1 + g1[i].cwiseAbs().maxCoeff()));
}

TEST_CASE("sampling refuses datasets that cannot fill a batch") {
  const BasisSet plant = make_basis(3, 9, 16);
  TrainConfig cfg = tiny_train_config();
  const Dataset few = plant_dataset(plant, {VecX::Ones(3), VecX::Ones(3)}, 3, 10, 1);
  std::mt19937_64 rng(1);
  try {
    sample_batch(few, cfg, rng);
    FAIL("expected InvalidArgument");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).rfind("insufficient data", 0) == 0);
  }
  const Dataset one_env = plant_dataset(plant, {VecX::Ones(3)}, 6, 10, 1);
  CHECK_THROWS_AS(sample_batch(one_env, cfg, rng), InvalidArgument);

  const Dataset ok = plant_dataset(plant, {VecX::Ones(3), VecX::Ones(3)}, 4, 10, 1);
  const auto batch = sample_batch(ok, cfg, rng);
  REQUIRE(batch.size() == 2);
  for (const auto& e : batch) {
    CHECK(e.examples.size() == 2);
    CHECK(e.queries.size() == 2);
    CHECK(e.windows.size() == 4);
    std::vector<std::size_t> all = e.examples;
    all.insert(all.end(), e.queries.begin(), e.queries.end());
    std::sort(all.begin(), all.end());
    CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
    for (const auto& [t, s] : e.windows) {
      CHECK(std::find(e.queries.begin(), e.queries.end(), t) != e.queries.end());
      CHECK(s + cfg.horizon < e.env->trajectories[t].size());
    }
  }
}

TEST_CASE("config validation") {
  TrainConfig c = tiny_train_config();
  c.example_trajs = 3;  // N_ex + N_q != N
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = tiny_train_config();
  c.horizon = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  CHECK(TrainConfig{}.hidden_width() == 313);
}

TEST_CASE("training is deterministic and resumes bit-identically") {
  const BasisSet plant = make_basis(3, 10, 16);
  const Dataset d = plant_dataset(plant, {VecX::Ones(3), 0.5 * VecX::Ones(3), -VecX::Ones(3)}, 5, 12, 2);
  const TrainConfig cfg = tiny_train_config();

  Trainer a(cfg), b(cfg);
  for (int i = 0; i < 4; ++i) {
    const auto ra = a.step(d), rb = b.step(d);
    CHECK(ra.total == rb.total);
  }
  CHECK(a.basis() == b.basis());

  Trainer c(cfg);
  c.step(d);
  c.step(d);
  std::stringstream ss;
  c.save(ss);
  Trainer resumed = Trainer::load(ss, cfg);
  CHECK(resumed.steps_done() == 2);
  resumed.step(d);
  resumed.step(d);
  CHECK(resumed.basis() == a.basis());

  std::stringstream bad("KFETRAIN garbage");
  CHECK_THROWS_AS(Trainer::load(bad, cfg), FormatError);
}

TEST_CASE("training reduces the rollout loss on realizable data") {
  const BasisSet plant = make_basis(3, 11, 16);
  std::vector<VecX> alphas;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.3, 1.5);
  for (int i = 0; i < 4; ++i) alphas.push_back((VecX(3) << u(rng), u(rng), u(rng)).finished());
  const Dataset d = plant_dataset(plant, alphas, 6, 16, 4);
  TrainConfig cfg = tiny_train_config();
  cfg.schedule = {3e-3, 1e-4, 150};
  Trainer t(cfg);
  std::vector<double> losses;
  for (int i = 0; i < 150; ++i) losses.push_back(t.step(d).total);
  const double head = std::accumulate(losses.begin(), losses.begin() + 10, 0.0) / 10;
  const double tail = std::accumulate(losses.end() - 10, losses.end(), 0.0) / 10;
  MESSAGE("mean loss first 10: " << head << ", last 10: " << tail);
  CHECK(tail < 0.5 * head);
}

TEST_CASE("metrics line") {
  RolloutLossReport r;
  r.step = 3;
  r.lr = 1e-3;
  r.total = 2.0;
  r.per_dim << 1, 0, 0, 0, 0, 1;
  const std::string line = metrics_line(r, "va");
  CHECK(line.rfind("va,3,", 0) == 0);
  CHECK(std::count(line.begin(), line.end(), ',') == std::count(kMetricsHeader, kMetricsHeader + std::strlen(kMetricsHeader), ','));
}
