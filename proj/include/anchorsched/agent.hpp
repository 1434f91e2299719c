#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "anchorsched/checkpoint.hpp"
#include "anchorsched/errors.hpp"
#include "anchorsched/net.hpp"
#include "anchorsched/optimizer.hpp"
#include "anchorsched/rng.hpp"

namespace anchorsched {

// One transition. Learning is single-step (the critic regresses the immediate
// reward), so no successor state is kept.
struct Experience {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
};

// Fixed-capacity FIFO ring. Once full, new entries overwrite the oldest.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("replay capacity must be >= 1");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }

  void push(Experience e) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(e));
    } else {
      items_[head_] = std::move(e);
      head_ = (head_ + 1) % capacity_;
    }
  }

  const Experience& at(std::size_t i) const { return items_[i]; }

  // Uniform with replacement.
  std::vector<std::size_t> sample_indices(RandomStream& rng, std::size_t n) const {
    if (items_.empty()) throw NotReadyError("replay memory is empty");
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i)
      out[i] = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(items_.size()) - 1));
    return out;
  }

  void clear() {
    items_.clear();
    head_ = 0;
  }

 private:
  std::size_t capacity_;
  std::vector<Experience> items_;
  std::size_t head_ = 0;  // oldest element once the ring is full
};

// Linear decay to zero across the first `decay_steps` action steps, flat zero
// afterwards. A stage covering E episodes of T steps uses decay_steps = E*T/2.
struct ExplorationSchedule {
  double eps_init = 1.0;
  std::int64_t decay_steps = 0;

  double epsilon_at(std::int64_t step) const {
    if (step < 0) throw ContractError("exploration step must be >= 0");
    if (decay_steps <= 0 || step >= decay_steps) return 0.0;
    return eps_init *
           (1.0 - static_cast<double>(step) / static_cast<double>(decay_steps));
  }
};

// Quadratic pull towards a reference parameter vector, weighted per parameter
// by a curvature estimate: penalty(theta) = w * sum_i f_i * (theta_i - ref_i)^2.
template <typename Scalar>
struct AnchorSet {
  std::vector<Scalar> theta_star;
  std::vector<Scalar> fisher;
  double weight = 0.0;
};

struct LearnReport {
  bool updated = false;
  double critic_loss = 0.0;       // mean squared error before the update
  double actor_objective = 0.0;   // mean critic value of on-policy actions
  double anchor_penalty = 0.0;    // anchor term before the update
};

template <typename Scalar>
struct AgentConfig {
  int num_users = 5;
  int feature_width = 20;
  std::vector<int> hidden_widths{128, 128, 128};
  int batch_size = 256;
  std::size_t replay_capacity = 100000;
  AdamConfig actor_adam;
  AdamConfig critic_adam;
  ExplorationSchedule exploration;
};

// Actor-critic pair over a resource-share simplex. The actor maps features to
// a softmax allocation; the critic scores feature/action pairs. Both learn
// from the same uniformly sampled batch: the critic regresses observed
// rewards, the actor ascends the critic, optionally pulled by an anchor.
template <typename Scalar>
class Agent {
 public:
  using Net = DenseNet<Scalar>;
  using Matrix = typename Net::Matrix;

  explicit Agent(AgentConfig<Scalar> cfg)
      : cfg_(validate(std::move(cfg))),
        actor_(cfg_.feature_width, cfg_.hidden_widths, cfg_.num_users,
               Activation::softmax),
        critic_(cfg_.feature_width + cfg_.num_users, cfg_.hidden_widths, 1,
                Activation::identity),
        actor_opt_(actor_.param_count(), cfg_.actor_adam),
        critic_opt_(critic_.param_count(), cfg_.critic_adam),
        memory_(cfg_.replay_capacity) {}

  const AgentConfig<Scalar>& config() const { return cfg_; }
  Net& actor() { return actor_; }
  const Net& actor() const { return actor_; }
  Net& critic() { return critic_; }
  const Net& critic() const { return critic_; }
  AdamOptimizer<Scalar>& actor_optimizer() { return actor_opt_; }
  const AdamOptimizer<Scalar>& actor_optimizer() const { return actor_opt_; }
  AdamOptimizer<Scalar>& critic_optimizer() { return critic_opt_; }
  const AdamOptimizer<Scalar>& critic_optimizer() const { return critic_opt_; }
  ReplayMemory& memory() { return memory_; }
  const ReplayMemory& memory() const { return memory_; }
  std::int64_t act_steps() const { return act_steps_; }

  void init_params(RandomStream& rng) {
    actor_.init_params(rng);
    critic_.init_params(rng);
  }

  // Greedy policy: actor output, converted to double and renormalized.
  std::vector<double> act_greedy(std::span<const double> state) const {
    return to_simplex(policy(state));
  }

  // Training policy: epsilon-blend of the actor output with a random simplex
  // point, epsilon following the schedule at the internal step counter.
  // Random draws happen only while epsilon > 0, so frozen evaluation consumes
  // no stream values.
  std::vector<double> act_explore(std::span<const double> state,
                                  RandomStream& rng) {
    const double eps = cfg_.exploration.epsilon_at(act_steps_);
    ++act_steps_;
    std::vector<Scalar> mu = policy(state);
    if (eps <= 0.0) return to_simplex(mu);

    const int u = cfg_.num_users;
    std::vector<double> noise(static_cast<std::size_t>(u));
    double sum = 0.0;
    for (auto& x : noise) {
      x = rng.uniform01();
      sum += x;
    }
    if (sum <= 0.0) {  // all-zero draw; fall back to the uniform point
      std::fill(noise.begin(), noise.end(), 1.0 / u);
      sum = 1.0;
    }
    for (auto& x : noise) x /= sum;
    std::vector<double> mu_d(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i)
      mu_d[i] = static_cast<double>(mu[i]);
    return blend(mu_d, noise, eps);
  }

  // a = eps * noise + (1 - eps) * mu, renormalized onto the simplex. Both
  // inputs are expected to already lie on it.
  static std::vector<double> blend(const std::vector<double>& mu,
                                   const std::vector<double>& noise,
                                   double eps) {
    if (mu.size() != noise.size()) throw ShapeError("blend: width mismatch");
    std::vector<double> out(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i)
      out[i] = eps * noise[i] + (1.0 - eps) * mu[i];
    renormalize(out);
    return out;
  }

  void record(std::vector<double> state, std::vector<double> action,
              double reward) {
    if (state.size() != static_cast<std::size_t>(cfg_.feature_width))
      throw ShapeError("record: state width mismatch");
    if (action.size() != static_cast<std::size_t>(cfg_.num_users))
      throw ShapeError("record: action width mismatch");
    memory_.push(Experience{std::move(state), std::move(action), reward});
  }

  // One gradient step for critic then actor on a single shared batch. Returns
  // updated=false (and consumes no randomness) while the memory holds fewer
  // than batch_size transitions.
  LearnReport learn_step(RandomStream& rng) {
    LearnReport report;
    if (memory_.size() < static_cast<std::size_t>(cfg_.batch_size)) return report;

    const int b = cfg_.batch_size;
    const int f = cfg_.feature_width;
    const int u = cfg_.num_users;
    const auto idx = memory_.sample_indices(rng, static_cast<std::size_t>(b));

    states_.resize(b, f);
    state_actions_.resize(b, f + u);
    rewards_.resize(b, 1);
    for (int r = 0; r < b; ++r) {
      const Experience& e = memory_.at(idx[static_cast<std::size_t>(r)]);
      for (int c = 0; c < f; ++c) {
        const Scalar s = static_cast<Scalar>(e.state[static_cast<std::size_t>(c)]);
        states_(r, c) = s;
        state_actions_(r, c) = s;
      }
      for (int c = 0; c < u; ++c)
        state_actions_(r, f + c) =
            static_cast<Scalar>(e.action[static_cast<std::size_t>(c)]);
      rewards_(r, 0) = static_cast<Scalar>(e.reward);
    }

    // critic: minimize mean (Q(s,a) - r)^2
    const Matrix& q = critic_.forward_batch(state_actions_, critic_tape_);
    Matrix residual = q - rewards_;
    report.critic_loss =
        static_cast<double>(residual.squaredNorm()) / static_cast<double>(b);
    Matrix dq = residual * static_cast<Scalar>(2.0 / b);
    critic_grad_.assign(critic_.param_count(), Scalar(0));
    critic_.backward(critic_tape_, dq, critic_grad_);
    critic_opt_.update(critic_.params(), critic_grad_);

    // actor: maximize mean Q(s, mu(s)) through the freshly updated critic
    const Matrix& mu = actor_.forward_batch(states_, actor_tape_);
    state_actions_.rightCols(u) = mu;
    const Matrix& q_mu = critic_.forward_batch(state_actions_, critic_tape_);
    report.actor_objective =
        static_cast<double>(q_mu.sum()) / static_cast<double>(b);
    Matrix dq_mu(b, 1);
    dq_mu.setConstant(static_cast<Scalar>(-1.0 / b));
    Matrix d_input;
    critic_.backward(critic_tape_, dq_mu, {}, &d_input);
    Matrix d_mu = d_input.rightCols(u);
    actor_grad_.assign(actor_.param_count(), Scalar(0));
    actor_.backward(actor_tape_, d_mu, actor_grad_);
    if (anchor_) report.anchor_penalty = apply_anchor_gradient();
    actor_opt_.update(actor_.params(), actor_grad_);

    report.updated = true;
    return report;
  }

  // Captures the current actor as an anchor reference: theta* is a parameter
  // copy, the curvature is the optimizer's bias-corrected second moment.
  AnchorSet<Scalar> snapshot_anchor(double weight) const {
    AnchorSet<Scalar> a;
    a.theta_star.assign(actor_.params().begin(), actor_.params().end());
    a.fisher = actor_opt_.fisher_estimate();
    a.weight = weight;
    return a;
  }

  void set_anchor(AnchorSet<Scalar> a) {
    if (a.theta_star.size() != actor_.param_count() ||
        a.fisher.size() != actor_.param_count())
      throw ShapeError("anchor size does not match the actor");
    if (!(a.weight >= 0.0)) throw ConfigError("anchor weight must be >= 0");
    anchor_ = std::move(a);
  }

  void clear_anchor() { anchor_.reset(); }
  const std::optional<AnchorSet<Scalar>>& anchor() const { return anchor_; }

  // Current anchor penalty value at the live actor parameters.
  double anchor_penalty() const {
    if (!anchor_) return 0.0;
    const auto p = actor_.params();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = static_cast<double>(p[i]) -
                       static_cast<double>(anchor_->theta_star[i]);
      acc += static_cast<double>(anchor_->fisher[i]) * d * d;
    }
    return anchor_->weight * acc;
  }

  // Stage transitions: fresh optimizers, empty memory, restarted exploration.
  void start_stage(ExplorationSchedule schedule) {
    cfg_.exploration = schedule;
    act_steps_ = 0;
    actor_opt_ = AdamOptimizer<Scalar>(actor_.param_count(), cfg_.actor_adam);
    critic_opt_ = AdamOptimizer<Scalar>(critic_.param_count(), cfg_.critic_adam);
    memory_.clear();
  }

  void set_act_steps(std::int64_t n) {
    if (n < 0) throw ContractError("act step counter must be >= 0");
    act_steps_ = n;
  }

 private:
  static AgentConfig<Scalar> validate(AgentConfig<Scalar> cfg) {
    if (cfg.num_users < 1) throw ConfigError("agent: num_users must be >= 1");
    if (cfg.feature_width < 1)
      throw ConfigError("agent: feature_width must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("agent: batch_size must be >= 1");
    if (cfg.replay_capacity < static_cast<std::size_t>(cfg.batch_size))
      throw ConfigError("agent: replay capacity must hold at least one batch");
    if (!(cfg.exploration.eps_init >= 0.0 && cfg.exploration.eps_init <= 1.0))
      throw ConfigError("agent: eps_init must be in [0, 1]");
    if (cfg.exploration.decay_steps < 0)
      throw ConfigError("agent: decay_steps must be >= 0");
    return cfg;
  }

  std::vector<Scalar> policy(std::span<const double> state) const {
    if (state.size() != static_cast<std::size_t>(cfg_.feature_width))
      throw ShapeError("act: state width mismatch");
    std::vector<Scalar> in(state.size());
    for (std::size_t i = 0; i < state.size(); ++i)
      in[i] = static_cast<Scalar>(state[i]);
    return actor_.forward(in);
  }

  static std::vector<double> to_simplex(const std::vector<Scalar>& v) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]);
    renormalize(out);
    return out;
  }

  static void renormalize(std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    if (sum <= 0.0) {
      std::fill(v.begin(), v.end(), 1.0 / static_cast<double>(v.size()));
      return;
    }
    for (double& x : v) x /= sum;
  }

  // Adds 2*w*f_i*(theta_i - theta*_i) to the actor gradient; returns the
  // penalty value at the pre-update parameters.
  double apply_anchor_gradient() {
    const auto p = actor_.params();
    const AnchorSet<Scalar>& a = *anchor_;
    const Scalar two_w = static_cast<Scalar>(2.0 * a.weight);
    double penalty = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Scalar d = p[i] - a.theta_star[i];
      actor_grad_[i] += two_w * a.fisher[i] * d;
      penalty += static_cast<double>(a.fisher[i]) * static_cast<double>(d) *
                 static_cast<double>(d);
    }
    return a.weight * penalty;
  }

  AgentConfig<Scalar> cfg_;
  Net actor_;
  Net critic_;
  AdamOptimizer<Scalar> actor_opt_;
  AdamOptimizer<Scalar> critic_opt_;
  ReplayMemory memory_;
  std::optional<AnchorSet<Scalar>> anchor_;
  std::int64_t act_steps_ = 0;

  // learn-step scratch, kept to avoid per-call reallocation
  Matrix states_, state_actions_, rewards_;
  typename Net::Tape actor_tape_, critic_tape_;
  AlignedVector<Scalar> actor_grad_, critic_grad_;
};

namespace io {

inline constexpr std::uint32_t kAgentMagic = 0x54474141u;  // "AAGT"

template <typename Scalar>
void save_agent(std::ostream& os, const Agent<Scalar>& agent) {
  write_u32(os, kAgentMagic);
  write_u32(os, 1);  // version
  save_net(os, agent.actor());
  save_net(os, agent.critic());
  save_adam(os, agent.actor_optimizer());
  save_adam(os, agent.critic_optimizer());
  write_i64(os, agent.act_steps());
  const auto& anchor = agent.anchor();
  write_u8(os, anchor.has_value() ? 1 : 0);
  if (anchor) {
    write_f64(os, anchor->weight);
    write_u64(os, anchor->theta_star.size());
    for (Scalar x : anchor->theta_star) write_f64(os, static_cast<double>(x));
    for (Scalar x : anchor->fisher) write_f64(os, static_cast<double>(x));
  }
}

// Rebuilds an agent from a checkpoint. Replay contents are not part of the
// format: checkpoints are taken at stage boundaries where memory starts empty.
template <typename Scalar>
Agent<Scalar> load_agent(std::istream& is, AgentConfig<Scalar> cfg) {
  if (read_u32(is) != kAgentMagic) throw IoError("checkpoint: bad agent magic");
  const std::uint32_t version = read_u32(is);
  if (version != 1)
    throw IoError("checkpoint: unsupported agent version " +
                  std::to_string(version));
  Agent<Scalar> agent(std::move(cfg));
  DenseNet<Scalar> actor = load_net<Scalar>(is);
  DenseNet<Scalar> critic = load_net<Scalar>(is);
  if (actor.arch() != agent.actor().arch() ||
      critic.arch() != agent.critic().arch())
    throw IoError("checkpoint: network shape does not match the configuration");
  agent.actor() = std::move(actor);
  agent.critic() = std::move(critic);
  agent.actor_optimizer() = load_adam<Scalar>(is);
  agent.critic_optimizer() = load_adam<Scalar>(is);
  if (agent.actor_optimizer().param_count() != agent.actor().param_count() ||
      agent.critic_optimizer().param_count() != agent.critic().param_count())
    throw IoError("checkpoint: optimizer size does not match the networks");
  agent.set_act_steps(read_i64(is));
  const std::uint8_t has_anchor = read_u8(is);
  if (has_anchor > 1) throw IoError("checkpoint: bad anchor flag");
  if (has_anchor == 1) {
    AnchorSet<Scalar> a;
    a.weight = read_f64(is);
    const std::uint64_t n = read_u64(is);
    if (n != agent.actor().param_count())
      throw IoError("checkpoint: anchor size mismatch");
    a.theta_star.resize(n);
    a.fisher.resize(n);
    for (auto& x : a.theta_star) x = static_cast<Scalar>(read_f64(is));
    for (auto& x : a.fisher) x = static_cast<Scalar>(read_f64(is));
    agent.set_anchor(std::move(a));
  }
  return agent;
}

}  // namespace io
}  // namespace anchorsched
