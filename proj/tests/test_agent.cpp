#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <sstream>
#include <vector>

#include "anchorsched/agent.hpp"
#include "anchorsched/rng.hpp"

using namespace anchorsched;

namespace {

using DAgent = Agent<double>;

AgentConfig<double> tiny_config() {
  AgentConfig<double> cfg;
  cfg.num_users = 3;
  cfg.feature_width = 6;
  cfg.hidden_widths = {8};
  cfg.batch_size = 4;
  cfg.replay_capacity = 64;
  cfg.exploration = {1.0, 100};
  return cfg;
}

std::vector<double> random_state(RandomStream& rng, int width) {
  std::vector<double> s(static_cast<std::size_t>(width));
  for (auto& x : s) x = rng.uniform01();
  return s;
}

std::vector<double> random_simplex(RandomStream& rng, int width) {
  std::vector<double> a(static_cast<std::size_t>(width));
  double sum = 0.0;
  for (auto& x : a) {
    x = rng.uniform01();
    sum += x;
  }
  for (auto& x : a) x /= sum;
  return a;
}

void fill_memory(DAgent& agent, RandomStream& rng, int n, double reward) {
  for (int i = 0; i < n; ++i)
    agent.record(random_state(rng, agent.config().feature_width),
                 random_simplex(rng, agent.config().num_users), reward);
}

bool params_equal(const DAgent& a, const DAgent& b) {
  return std::memcmp(a.actor().params().data(), b.actor().params().data(),
                     a.actor().param_count() * sizeof(double)) == 0 &&
         std::memcmp(a.critic().params().data(), b.critic().params().data(),
                     a.critic().param_count() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("blend mixes towards the noise point as epsilon grows") {
  std::vector<double> mu{1.0, 0.0, 0.0, 0.0, 0.0};
  std::vector<double> noise{0.2, 0.2, 0.2, 0.2, 0.2};

  auto half = DAgent::blend(mu, noise, 0.5);
  REQUIRE(half[0] == Catch::Approx(0.6).margin(1e-12));
  for (int i = 1; i < 5; ++i)
    REQUIRE(half[i] == Catch::Approx(0.1).margin(1e-12));

  auto none = DAgent::blend(mu, noise, 0.0);
  REQUIRE(none[0] == Catch::Approx(1.0).margin(1e-15));
  auto full = DAgent::blend(mu, noise, 1.0);
  for (double v : full) REQUIRE(v == Catch::Approx(0.2).margin(1e-15));

  double sum = 0.0;
  for (double v : half) sum += v;
  REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("exploration schedule decays linearly and clamps at zero") {
  ExplorationSchedule sched{1.0, 100};
  REQUIRE(sched.epsilon_at(0) == 1.0);
  REQUIRE(sched.epsilon_at(50) == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(sched.epsilon_at(99) == Catch::Approx(0.01).margin(1e-15));
  REQUIRE(sched.epsilon_at(100) == 0.0);
  REQUIRE(sched.epsilon_at(100000) == 0.0);

  ExplorationSchedule off{1.0, 0};
  REQUIRE(off.epsilon_at(0) == 0.0);

  ExplorationSchedule half{0.5, 10};
  REQUIRE(half.epsilon_at(0) == 0.5);
  REQUIRE(half.epsilon_at(5) == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("zero-initialized actor explores exactly along the noise draw") {
  auto cfg = tiny_config();
  cfg.exploration = {1.0, 1000};
  DAgent agent(cfg);  // zero params -> uniform softmax

  RandomStream rng(7), replay(7);
  auto state = std::vector<double>(6, 0.5);
  auto a = agent.act_explore(state, rng);

  // with eps = 1 the policy term vanishes; expect the normalized draw
  std::vector<double> expect(3);
  double sum = 0.0;
  for (auto& x : expect) {
    x = replay.uniform01();
    sum += x;
  }
  for (auto& x : expect) x /= sum;
  for (int i = 0; i < 3; ++i)
    REQUIRE(a[static_cast<std::size_t>(i)] ==
            Catch::Approx(expect[static_cast<std::size_t>(i)]).margin(1e-12));
}

TEST_CASE("frozen action consumes no randomness and matches the actor") {
  auto cfg = tiny_config();
  cfg.exploration = {1.0, 0};  // schedule already expired
  DAgent agent(cfg);
  RandomStream init(3);
  agent.init_params(init);

  RandomStream rng(11), witness(11);
  auto state = random_state(rng, 6);

  auto greedy = agent.act_greedy(state);
  auto explored = agent.act_explore(state, rng);
  for (int i = 0; i < 3; ++i)
    REQUIRE(greedy[static_cast<std::size_t>(i)] ==
            explored[static_cast<std::size_t>(i)]);

  // the witness stream did everything rng did except act_explore
  random_state(witness, 6);
  REQUIRE(rng.uniform01() == witness.uniform01());

  double sum = 0.0;
  for (double v : greedy) {
    REQUIRE(v >= 0.0);
    sum += v;
  }
  REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("replay memory is a FIFO ring") {
  ReplayMemory mem(3);
  REQUIRE(mem.capacity() == 3);
  for (int i = 0; i < 5; ++i)
    mem.push(Experience{{}, {}, static_cast<double>(i)});
  REQUIRE(mem.size() == 3);

  std::vector<double> rewards;
  for (std::size_t i = 0; i < mem.size(); ++i)
    rewards.push_back(mem.at(i).reward);
  std::sort(rewards.begin(), rewards.end());
  REQUIRE(rewards == std::vector<double>{2.0, 3.0, 4.0});

  mem.clear();
  REQUIRE(mem.size() == 0);
  RandomStream rng(1);
  REQUIRE_THROWS_AS(mem.sample_indices(rng, 2), NotReadyError);
}

TEST_CASE("replay sampling stays in range and is seed-deterministic") {
  ReplayMemory mem(10);
  for (int i = 0; i < 10; ++i)
    mem.push(Experience{{}, {}, static_cast<double>(i)});
  RandomStream r1(5), r2(5);
  auto a = mem.sample_indices(r1, 100);
  auto b = mem.sample_indices(r2, 100);
  REQUIRE(a == b);
  for (auto i : a) REQUIRE(i < 10);
}

TEST_CASE("learn step is a no-op until one batch is buffered") {
  DAgent agent(tiny_config());
  RandomStream init(1);
  agent.init_params(init);
  std::vector<double> before(agent.actor().params().begin(),
                             agent.actor().params().end());

  RandomStream data(2), learn(3), witness(3);
  fill_memory(agent, data, 3, 1.0);  // batch size is 4
  auto report = agent.learn_step(learn);
  REQUIRE_FALSE(report.updated);
  REQUIRE(learn.uniform01() == witness.uniform01());  // nothing consumed
  for (std::size_t i = 0; i < before.size(); ++i)
    REQUIRE(agent.actor().params()[i] == before[i]);
}

TEST_CASE("critic loss starts at the squared reward for a zero critic") {
  SECTION("unit reward") {
    DAgent agent(tiny_config());  // zero-initialized nets
    RandomStream data(5), learn(6);
    fill_memory(agent, data, 8, 1.0);
    auto report = agent.learn_step(learn);
    REQUIRE(report.updated);
    REQUIRE(report.critic_loss == Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("reward of five") {
    DAgent agent(tiny_config());
    RandomStream data(5), learn(6);
    fill_memory(agent, data, 8, 5.0);
    auto report = agent.learn_step(learn);
    REQUIRE(report.critic_loss == Catch::Approx(25.0).margin(1e-12));
  }
}

TEST_CASE("critic regresses a constant reward") {
  auto cfg = tiny_config();
  cfg.batch_size = 16;
  cfg.critic_adam.step_size = 1e-2;  // adam moves <= step_size per parameter
  DAgent agent(cfg);
  RandomStream init(9);
  agent.init_params(init);

  RandomStream data(10), learn(11);
  fill_memory(agent, data, 32, 2.0);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 1000; ++i) {
    auto r = agent.learn_step(learn);
    if (i == 0) first = r.critic_loss;
    last = r.critic_loss;
  }
  REQUIRE(last < 0.05 * first);
}

TEST_CASE("anchor penalty matches the weighted quadratic form") {
  AgentConfig<double> cfg;
  cfg.num_users = 1;
  cfg.feature_width = 1;
  cfg.hidden_widths = {};
  cfg.batch_size = 1;
  cfg.replay_capacity = 4;
  DAgent agent(cfg);  // actor has exactly 2 parameters: one weight, one bias

  REQUIRE(agent.actor().param_count() == 2);
  agent.actor().params()[0] = 0.5;
  agent.actor().params()[1] = -1.0;

  AnchorSet<double> anchor;
  anchor.theta_star = {-0.5, -2.0};  // delta = (1, 1)
  anchor.fisher = {1.0, 2.0};
  anchor.weight = 10.0;
  agent.set_anchor(anchor);
  REQUIRE(agent.anchor_penalty() == Catch::Approx(30.0).margin(1e-12));

  // penalty scales exactly with the weight
  anchor.weight = 20.0;
  agent.set_anchor(anchor);
  REQUIRE(agent.anchor_penalty() == Catch::Approx(60.0).margin(1e-12));

  // zero at the anchor point
  anchor.theta_star = {0.5, -1.0};
  agent.set_anchor(anchor);
  REQUIRE(agent.anchor_penalty() == 0.0);

  agent.clear_anchor();
  REQUIRE(agent.anchor_penalty() == 0.0);
}

TEST_CASE("anchor gradient matches finite differences of the penalty") {
  AgentConfig<double> cfg;
  cfg.num_users = 2;
  cfg.feature_width = 2;
  cfg.hidden_widths = {3};
  cfg.batch_size = 1;
  cfg.replay_capacity = 4;
  DAgent agent(cfg);
  RandomStream init(17);
  agent.init_params(init);

  RandomStream ref(18);
  AnchorSet<double> anchor;
  anchor.weight = 3.5;
  for (std::size_t i = 0; i < agent.actor().param_count(); ++i) {
    anchor.theta_star.push_back(ref.uniform(-1.0, 1.0));
    anchor.fisher.push_back(ref.uniform01());
  }
  agent.set_anchor(anchor);

  const double h = 1e-6;
  auto params = agent.actor().params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    const double analytic =
        2.0 * anchor.weight * anchor.fisher[i] * (saved - anchor.theta_star[i]);
    params[i] = saved + h;
    const double up = agent.anchor_penalty();
    params[i] = saved - h;
    const double down = agent.anchor_penalty();
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    REQUIRE(std::abs(analytic - numeric) / denom <= 1e-4);
  }
}

TEST_CASE("anchored updates pull the actor towards the reference") {
  // zero critic + zero rewards keep the critic silent, so the anchor is the
  // only force acting on the actor
  auto cfg = tiny_config();
  DAgent agent(cfg);
  RandomStream init(23);
  agent.actor().init_params(init);  // critic stays zero

  RandomStream ref(24);
  AnchorSet<double> anchor;
  anchor.weight = 1.0;
  for (std::size_t i = 0; i < agent.actor().param_count(); ++i) {
    anchor.theta_star.push_back(ref.uniform(-0.5, 0.5));
    anchor.fisher.push_back(0.5 + ref.uniform01());  // strictly positive
  }
  agent.set_anchor(anchor);

  RandomStream data(25), learn(26);
  fill_memory(agent, data, 8, 0.0);

  double prev = agent.anchor_penalty();
  REQUIRE(prev > 0.0);
  for (int i = 0; i < 50; ++i) {
    auto r = agent.learn_step(learn);
    REQUIRE(r.updated);
    REQUIRE(r.critic_loss == 0.0);
    const double now = agent.anchor_penalty();
    REQUIRE(now < prev);
    prev = now;
  }

  // critic untouched throughout: zero gradients leave zero parameters
  for (double p : agent.critic().params()) REQUIRE(p == 0.0);
}

TEST_CASE("learn report carries the pre-update anchor penalty") {
  auto cfg = tiny_config();
  DAgent agent(cfg);
  RandomStream init(31);
  agent.init_params(init);
  RandomStream data(32), learn(33);
  fill_memory(agent, data, 8, 1.0);

  // snapshot requires at least one optimizer step
  REQUIRE_THROWS_AS(agent.snapshot_anchor(1.0), NotReadyError);

  agent.learn_step(learn);
  AnchorSet<double> anchor = agent.snapshot_anchor(1000.0);
  REQUIRE(anchor.theta_star.size() == agent.actor().param_count());
  REQUIRE(anchor.fisher.size() == agent.actor().param_count());
  agent.set_anchor(anchor);

  const double before = agent.anchor_penalty();
  REQUIRE(before == 0.0);  // anchored at the current parameters
  auto report = agent.learn_step(learn);
  REQUIRE(report.anchor_penalty == before);  // evaluated before the update
  REQUIRE(agent.anchor_penalty() > 0.0);     // the update moved the actor
}

TEST_CASE("snapshot uses the optimizer's curvature estimate") {
  auto cfg = tiny_config();
  DAgent agent(cfg);
  RandomStream init(41);
  agent.init_params(init);
  RandomStream data(42), learn(43);
  fill_memory(agent, data, 8, 1.0);
  agent.learn_step(learn);

  auto anchor = agent.snapshot_anchor(2.0);
  auto fisher = agent.actor_optimizer().fisher_estimate();
  REQUIRE(anchor.fisher == fisher);
  REQUIRE(anchor.weight == 2.0);
  for (std::size_t i = 0; i < anchor.theta_star.size(); ++i)
    REQUIRE(anchor.theta_star[i] == agent.actor().params()[i]);
}

TEST_CASE("anchor shape and weight are validated") {
  DAgent agent(tiny_config());
  AnchorSet<double> bad;
  bad.theta_star.assign(3, 0.0);
  bad.fisher.assign(3, 0.0);
  bad.weight = 1.0;
  REQUIRE_THROWS_AS(agent.set_anchor(bad), ShapeError);

  AnchorSet<double> negative;
  negative.theta_star.assign(agent.actor().param_count(), 0.0);
  negative.fisher.assign(agent.actor().param_count(), 0.0);
  negative.weight = -1.0;
  REQUIRE_THROWS_AS(agent.set_anchor(negative), ConfigError);
}

TEST_CASE("learning is bit-deterministic under identical seeds") {
  auto make = [] {
    DAgent agent(tiny_config());
    RandomStream init(51);
    agent.init_params(init);
    return agent;
  };
  DAgent a = make(), b = make();
  REQUIRE(params_equal(a, b));

  RandomStream da(52), db(52), la(53), lb(53);
  fill_memory(a, da, 16, 1.5);
  fill_memory(b, db, 16, 1.5);
  for (int i = 0; i < 20; ++i) {
    a.learn_step(la);
    b.learn_step(lb);
  }
  REQUIRE(params_equal(a, b));
}

TEST_CASE("agent checkpoints restore bit-identical behavior") {
  auto cfg = tiny_config();
  DAgent agent(cfg);
  RandomStream init(61);
  agent.init_params(init);
  RandomStream data(62), learn(63);
  fill_memory(agent, data, 16, 1.0);
  for (int i = 0; i < 5; ++i) agent.learn_step(learn);
  agent.set_anchor(agent.snapshot_anchor(123.0));
  RandomStream acts(64);
  agent.act_explore(std::vector<double>(6, 0.25), acts);  // advance the counter

  std::string blob = [&] {
    std::stringstream ss;
    io::save_agent(ss, agent);
    return ss.str();
  }();
  std::stringstream sa(blob), sb(blob);
  DAgent restored_a = io::load_agent<double>(sa, cfg);
  DAgent restored_b = io::load_agent<double>(sb, cfg);

  REQUIRE(params_equal(agent, restored_a));
  REQUIRE(restored_a.act_steps() == agent.act_steps());
  REQUIRE(restored_a.anchor().has_value());
  REQUIRE(restored_a.anchor()->weight == 123.0);
  REQUIRE(restored_a.anchor()->theta_star == agent.anchor()->theta_star);
  REQUIRE(restored_a.anchor()->fisher == agent.anchor()->fisher);
  REQUIRE(restored_a.memory().size() == 0);  // replay is not persisted

  // two restored copies evolve identically under identical seeds
  RandomStream ra(65), rb(65), la(66), lb(66);
  fill_memory(restored_a, ra, 16, 0.5);
  fill_memory(restored_b, rb, 16, 0.5);
  for (int i = 0; i < 5; ++i) {
    restored_a.learn_step(la);
    restored_b.learn_step(lb);
  }
  REQUIRE(params_equal(restored_a, restored_b));

  auto g1 = restored_a.act_greedy(std::vector<double>(6, 0.1));
  auto g2 = restored_b.act_greedy(std::vector<double>(6, 0.1));
  REQUIRE(g1 == g2);

  // and the restored copy tracks the original under the same future
  RandomStream ro(65), lo(66);
  agent.memory().clear();
  fill_memory(agent, ro, 16, 0.5);
  for (int i = 0; i < 5; ++i) agent.learn_step(lo);
  REQUIRE(params_equal(agent, restored_a));
}

TEST_CASE("start_stage resets optimizers, memory, and exploration") {
  auto cfg = tiny_config();
  DAgent agent(cfg);
  RandomStream init(71);
  agent.init_params(init);
  RandomStream data(72), learn(73);
  fill_memory(agent, data, 16, 1.0);
  for (int i = 0; i < 3; ++i) agent.learn_step(learn);
  RandomStream acts(74);
  agent.act_explore(std::vector<double>(6, 0.5), acts);

  REQUIRE(agent.actor_optimizer().step_count() == 3);
  REQUIRE(agent.act_steps() == 1);
  REQUIRE(agent.memory().size() == 16);

  std::vector<double> params_before(agent.actor().params().begin(),
                                    agent.actor().params().end());
  agent.start_stage({0.5, 42});
  REQUIRE(agent.actor_optimizer().step_count() == 0);
  REQUIRE(agent.critic_optimizer().step_count() == 0);
  REQUIRE(agent.act_steps() == 0);
  REQUIRE(agent.memory().size() == 0);
  REQUIRE(agent.config().exploration.eps_init == 0.5);
  REQUIRE(agent.config().exploration.decay_steps == 42);
  // network weights carry over untouched
  for (std::size_t i = 0; i < params_before.size(); ++i)
    REQUIRE(agent.actor().params()[i] == params_before[i]);
}

TEST_CASE("agent configuration is validated") {
  auto bad_users = tiny_config();
  bad_users.num_users = 0;
  REQUIRE_THROWS_AS(DAgent(bad_users), ConfigError);

  auto bad_capacity = tiny_config();
  bad_capacity.replay_capacity = 2;  // below batch_size
  REQUIRE_THROWS_AS(DAgent(bad_capacity), ConfigError);

  auto bad_eps = tiny_config();
  bad_eps.exploration.eps_init = 1.5;
  REQUIRE_THROWS_AS(DAgent(bad_eps), ConfigError);

  auto bad_batch = tiny_config();
  bad_batch.batch_size = 0;
  REQUIRE_THROWS_AS(DAgent(bad_batch), ConfigError);
}

TEST_CASE("record validates widths") {
  DAgent agent(tiny_config());
  REQUIRE_THROWS_AS(agent.record({1.0}, {0.5, 0.25, 0.25}, 0.0), ShapeError);
  REQUIRE_THROWS_AS(
      agent.record(std::vector<double>(6, 0.0), {0.5, 0.5}, 0.0), ShapeError);
}
