#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "anchorsched/errors.hpp"
#include "anchorsched/rng.hpp"

namespace anchorsched {

// One pending transmission request. A job leaves the queue the moment its
// remaining block count reaches zero.
struct Job {
  int owner_user = 0;
  int requested_blocks = 0;
  int delay = 0;
  bool is_priority = false;
  std::int64_t creation_seq = 0;  // tie-break key, monotone over a trajectory

  bool operator==(const Job&) const = default;
};

struct RewardWeights {
  // Stored as positive magnitudes; the timeout terms enter the reward with
  // explicit minus signs.
  double capacity = 1.0;
  double timeout_normal = 1.0;
  double timeout_prio = 5.0;

  bool operator==(const RewardWeights&) const = default;
};

struct EnvConfig {
  int num_users = 5;        // U
  int total_blocks = 10;    // N, blocks distributed per step
  int max_init_blocks = 7;  // largest possible job size
  int max_delay = 5;        // steps a job may wait before timing out
  double p_job = 0.5;       // per-user arrival probability per step
  double p_prio = 1e-4;     // per-step priority designation probability
  double snr_linear = 10.0; // S/N as a plain ratio
  double rayleigh_scale = 0.3;
  RewardWeights reward_weights;

  bool operator==(const EnvConfig&) const = default;
};

inline void validate(const EnvConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError("env config: " + m); };
  if (c.num_users < 1) fail("num_users must be >= 1");
  if (c.total_blocks < 1) fail("total_blocks must be >= 1");
  if (c.max_init_blocks < 1) fail("max_init_blocks must be >= 1");
  if (c.max_delay < 0) fail("max_delay must be >= 0");
  if (!(c.p_job >= 0.0 && c.p_job <= 1.0)) fail("p_job must be in [0, 1]");
  if (!(c.p_prio >= 0.0 && c.p_prio <= 1.0)) fail("p_prio must be in [0, 1]");
  if (!(c.snr_linear >= 0.0)) fail("snr_linear must be >= 0");
  if (!(c.rayleigh_scale > 0.0)) fail("rayleigh_scale must be > 0");
  if (!(c.reward_weights.capacity == c.reward_weights.capacity))
    fail("reward weights must be finite");
}

struct EnvState {
  std::vector<Job> queue;                 // insertion order
  std::vector<double> fading_amplitude;   // |h_u|, one per user
  std::int64_t step_index = 0;
  std::int64_t next_creation_seq = 0;

  bool operator==(const EnvState&) const = default;
};

// Everything measured during one step.
struct StepOutcome {
  double reward = 0.0;
  double capacity = 0.0;
  int timeouts_normal = 0;
  int timeouts_prio = 0;
  int prio_events = 0;  // priority designations that actually happened
  std::vector<int> blocks_consumed;  // per user, blocks applied to jobs

  bool operator==(const StepOutcome&) const = default;
};

// Four features per user: (load, prio_load, power_fading, max_delay_norm),
// concatenated in user order.
using FeatureVector = std::vector<double>;

// Rounds a simplex allocation ratio onto integer block counts that sum to
// exactly n_blocks: floor(a_u * N) first, then the leftover blocks go to the
// largest fractional remainders, ties broken by lowest user index.
inline std::vector<int> discretize_allocation(std::span<const double> action,
                                              int n_blocks) {
  const int n_users = static_cast<int>(action.size());
  double sum = 0.0;
  for (double a : action) {
    if (!(a >= 0.0))
      throw AllocationError("allocation entries must be >= 0 and finite");
    sum += a;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw AllocationError("allocation must sum to 1 (got " +
                          std::to_string(sum) + ")");

  std::vector<int> blocks(n_users);
  std::vector<std::pair<double, int>> remainders(n_users);
  int assigned = 0;
  for (int u = 0; u < n_users; ++u) {
    const double exact = action[u] * n_blocks;
    blocks[u] = static_cast<int>(std::floor(exact));
    remainders[u] = {exact - blocks[u], u};
    assigned += blocks[u];
  }
  int leftover = n_blocks - assigned;
  std::sort(remainders.begin(), remainders.end(),
            [](const auto& a, const auto& b) {
              if (a.first != b.first) return a.first > b.first;
              return a.second < b.second;
            });
  for (int i = 0; i < leftover; ++i) blocks[remainders[i % n_users].second] += 1;
  // Tolerance-edge inputs can overshoot by one floor; strip from the smallest
  // remainder so the total stays exactly n_blocks.
  for (int i = n_users - 1; leftover < 0 && i >= 0; --i) {
    if (blocks[remainders[i].second] > 0) {
      blocks[remainders[i].second] -= 1;
      ++leftover;
    }
  }
  return blocks;
}

// Sum capacity under Gaussian code books: sum_u b_u * ln(1 + |h_u|^2 * S/N).
// `fading` carries amplitudes |h_u|; they are squared here.
inline double sum_capacity(std::span<const int> blocks_consumed,
                           std::span<const double> fading,
                           double snr_linear) {
  double total = 0.0;
  for (std::size_t u = 0; u < blocks_consumed.size(); ++u) {
    total += blocks_consumed[u] *
             std::log(1.0 + fading[u] * fading[u] * snr_linear);
  }
  return total;
}

inline double assemble_reward(double capacity, int timeouts_normal,
                              int timeouts_prio, const RewardWeights& w) {
  return w.capacity * capacity - w.timeout_normal * timeouts_normal -
         w.timeout_prio * timeouts_prio;
}

inline FeatureVector featurize(const EnvState& state, const EnvConfig& cfg) {
  const int n_users = cfg.num_users;
  FeatureVector f(4 * static_cast<std::size_t>(n_users), 0.0);
  for (const Job& job : state.queue) {
    const std::size_t base = 4 * static_cast<std::size_t>(job.owner_user);
    f[base + 0] += static_cast<double>(job.requested_blocks) / cfg.total_blocks;
    if (job.is_priority)
      f[base + 1] += static_cast<double>(job.requested_blocks) / cfg.total_blocks;
    const double delay_norm =
        cfg.max_delay > 0 ? static_cast<double>(job.delay) / cfg.max_delay : 0.0;
    f[base + 3] = std::max(f[base + 3], delay_norm);
  }
  for (int u = 0; u < n_users; ++u) {
    const double h = state.fading_amplitude[static_cast<std::size_t>(u)];
    f[4 * static_cast<std::size_t>(u) + 2] = h * h;
  }
  return f;
}

// Discrete resource-block scheduling simulator.
//
// A step runs these phases in a fixed total order:
//   (1) per-user job generation            (2) priority designation draw
//   (3) allocation discretized and applied (4) capacity from consumed blocks
//   (5) delay increment                    (6) over-delay purge
//   (7) unserved-priority purge            (8) reward assembly
//   (9) fading redraw for the next step
//
// Phases 1-2 are the arrival phase. observe() runs it lazily and returns the
// features the current step's allocation should be chosen from; step() runs
// whatever part of the pipeline is still pending. Calling step() without
// observe() therefore executes all nine phases, and interleaving observe()
// never changes the trajectory.
//
// RNG draw order (the determinism contract): phase 1 draws one uniform coin
// per user in user order, plus one uniform_int(1, max_init_blocks) per
// generated job; phase 2 draws one coin, plus one uniform_int over the
// non-priority queue positions iff the coin fires and candidates exist;
// phase 9 draws one Rayleigh amplitude per user in user order. reset() draws
// the initial fading like phase 9.
class Environment {
 public:
  explicit Environment(EnvConfig cfg) : cfg_(cfg), rng_(0) {
    validate(cfg_);
    reset(0);
  }

  const EnvConfig& config() const { return cfg_; }
  const EnvState& state() const { return state_; }

  // Replaces the simulator state (fading vector must match num_users).
  void set_state(EnvState s) {
    if (s.fading_amplitude.size() != static_cast<std::size_t>(cfg_.num_users))
      throw ShapeError("state fading width does not match num_users");
    state_ = std::move(s);
    arrivals_done_ = false;
  }

  void reset(std::uint64_t seed) {
    rng_ = RandomStream(seed);
    state_ = EnvState{};
    state_.fading_amplitude.assign(static_cast<std::size_t>(cfg_.num_users), 0.0);
    draw_fading();
    arrivals_done_ = false;
  }

  // Runs the arrival phase if still pending and returns the features for the
  // current step's decision.
  FeatureVector observe() {
    run_arrivals();
    return featurize(state_, cfg_);
  }

  StepOutcome step(std::span<const double> action) {
    if (action.size() != static_cast<std::size_t>(cfg_.num_users))
      throw AllocationError("action width does not match num_users");
    run_arrivals();

    StepOutcome out;
    out.prio_events = pending_prio_events_;
    pending_prio_events_ = 0;

    // (3) allocate blocks to each user's jobs, oldest first.
    const std::vector<int> granted = discretize_allocation(action, cfg_.total_blocks);
    out.blocks_consumed.assign(static_cast<std::size_t>(cfg_.num_users), 0);
    for (int u = 0; u < cfg_.num_users; ++u) {
      int budget = granted[static_cast<std::size_t>(u)];
      if (budget == 0) continue;
      std::vector<std::size_t> order;
      for (std::size_t i = 0; i < state_.queue.size(); ++i)
        if (state_.queue[i].owner_user == u) order.push_back(i);
      std::sort(order.begin(), order.end(), [this](std::size_t a, std::size_t b) {
        const Job& ja = state_.queue[a];
        const Job& jb = state_.queue[b];
        if (ja.delay != jb.delay) return ja.delay > jb.delay;
        return ja.creation_seq < jb.creation_seq;
      });
      for (std::size_t i : order) {
        if (budget == 0) break;
        Job& job = state_.queue[i];
        const int take = std::min(budget, job.requested_blocks);
        job.requested_blocks -= take;
        budget -= take;
        out.blocks_consumed[static_cast<std::size_t>(u)] += take;
      }
      // leftover budget beyond this user's demand is wasted
    }
    std::erase_if(state_.queue, [](const Job& j) { return j.requested_blocks == 0; });

    // (4) capacity from blocks actually consumed, at this step's fading.
    out.capacity = sum_capacity(out.blocks_consumed, state_.fading_amplitude,
                                cfg_.snr_linear);

    // (5) delay increment for every job still holding a request.
    for (Job& job : state_.queue) job.delay += 1;

    // (6) over-delay purge; a priority job counts under the priority bucket.
    std::erase_if(state_.queue, [&](const Job& j) {
      if (j.delay <= cfg_.max_delay) return false;
      if (j.is_priority)
        out.timeouts_prio += 1;
      else
        out.timeouts_normal += 1;
      return true;
    });

    // (7) any priority job not fully served this step is purged.
    std::erase_if(state_.queue, [&](const Job& j) {
      if (!j.is_priority) return false;
      out.timeouts_prio += 1;
      return true;
    });

    // (8)
    out.reward = assemble_reward(out.capacity, out.timeouts_normal,
                                 out.timeouts_prio, cfg_.reward_weights);

    // (9)
    draw_fading();
    state_.step_index += 1;
    arrivals_done_ = false;
    return out;
  }

 private:
  void run_arrivals() {
    if (arrivals_done_) return;
    arrivals_done_ = true;

    // (1) job generation
    for (int u = 0; u < cfg_.num_users; ++u) {
      if (rng_.uniform01() < cfg_.p_job) {
        Job job;
        job.owner_user = u;
        job.requested_blocks =
            static_cast<int>(rng_.uniform_int(1, cfg_.max_init_blocks));
        job.delay = 0;
        job.creation_seq = state_.next_creation_seq++;
        state_.queue.push_back(job);
      }
    }

    // (2) priority designation. The coin is always drawn so the stream stays
    // aligned; the position draw is skipped when there is no candidate.
    if (rng_.uniform01() < cfg_.p_prio) {
      std::vector<std::size_t> candidates;
      for (std::size_t i = 0; i < state_.queue.size(); ++i)
        if (!state_.queue[i].is_priority) candidates.push_back(i);
      if (!candidates.empty()) {
        const auto pick = static_cast<std::size_t>(rng_.uniform_int(
            0, static_cast<std::int64_t>(candidates.size()) - 1));
        state_.queue[candidates[pick]].is_priority = true;
        pending_prio_events_ += 1;
      }
    }
  }

  void draw_fading() {
    for (int u = 0; u < cfg_.num_users; ++u)
      state_.fading_amplitude[static_cast<std::size_t>(u)] =
          rng_.rayleigh(cfg_.rayleigh_scale);
  }

  EnvConfig cfg_;
  EnvState state_;
  RandomStream rng_;
  bool arrivals_done_ = false;
  int pending_prio_events_ = 0;
};

}  // namespace anchorsched
