#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "anchorsched/aligned.hpp"
#include "anchorsched/errors.hpp"

namespace anchorsched {

struct AdamConfig {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Beyond parameter updates it exposes the
// bias-corrected second moment v / (1 - beta2^t), which doubles as a
// per-parameter curvature (empirical Fisher) estimate for anchoring.
template <typename Scalar>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::size_t param_count, AdamConfig cfg = {})
      : cfg_(cfg),
        m_(param_count, Scalar(0)),
        v_(param_count, Scalar(0)) {
    if (!(cfg_.step_size > 0.0)) throw ConfigError("adam: step_size must be > 0");
    if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0))
      throw ConfigError("adam: beta1 must be in [0, 1)");
    if (!(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0))
      throw ConfigError("adam: beta2 must be in [0, 1)");
    if (!(cfg_.epsilon > 0.0)) throw ConfigError("adam: epsilon must be > 0");
  }

  const AdamConfig& config() const { return cfg_; }
  std::size_t param_count() const { return m_.size(); }
  std::int64_t step_count() const { return t_; }

  // Applies one update in place. A non-finite gradient component rejects the
  // whole update (parameters and moments untouched) with an error.
  void update(std::span<Scalar> params, std::span<const Scalar> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
      throw ShapeError("adam: parameter/gradient size mismatch (expected " +
                       std::to_string(m_.size()) + ")");
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
    using ConstMap = Eigen::Map<const Array>;
    using Map = Eigen::Map<Array>;
    const auto n = static_cast<Eigen::Index>(m_.size());
    ConstMap g(grad.data(), n);
    if (!g.allFinite())
      throw ContractError("adam: non-finite gradient, update rejected");

    Map m(m_.data(), n);
    Map v(v_.data(), n);
    Map p(params.data(), n);
    ++t_;
    const Scalar b1 = static_cast<Scalar>(cfg_.beta1);
    const Scalar b2 = static_cast<Scalar>(cfg_.beta2);
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    // corrections in double: beta^t underflows gracefully for large t
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const Scalar inv_c1 = static_cast<Scalar>(1.0 / c1);
    const Scalar inv_c2 = static_cast<Scalar>(1.0 / c2);
    const Scalar alpha = static_cast<Scalar>(cfg_.step_size);
    const Scalar eps = static_cast<Scalar>(cfg_.epsilon);
    p -= alpha * (m * inv_c1) / ((v * inv_c2).sqrt() + eps);
  }

  // Bias-corrected second raw moment of seen gradients. Requires at least
  // one completed update.
  std::vector<Scalar> fisher_estimate() const {
    if (t_ == 0)
      throw NotReadyError("adam: fisher estimate requires at least one update");
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const Scalar inv_c2 = static_cast<Scalar>(1.0 / c2);
    std::vector<Scalar> out(v_.size());
    for (std::size_t i = 0; i < v_.size(); ++i) out[i] = v_[i] * inv_c2;
    return out;
  }

  std::span<const Scalar> first_moment() const { return m_; }
  std::span<const Scalar> second_moment() const { return v_; }

  // For checkpoint restore.
  void restore(std::span<const Scalar> m, std::span<const Scalar> v,
               std::int64_t step_count) {
    if (m.size() != m_.size() || v.size() != v_.size())
      throw ShapeError("adam: restore size mismatch");
    if (step_count < 0) throw ContractError("adam: negative step count");
    std::copy(m.begin(), m.end(), m_.begin());
    std::copy(v.begin(), v.end(), v_.begin());
    t_ = step_count;
  }

 private:
  AdamConfig cfg_;
  AlignedVector<Scalar> m_;
  AlignedVector<Scalar> v_;
  std::int64_t t_ = 0;
};

}  // namespace anchorsched
