#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "anchorsched/aligned.hpp"
#include "anchorsched/errors.hpp"
#include "anchorsched/rng.hpp"

namespace anchorsched {

enum class Activation : std::uint8_t { identity = 0, relu = 1, softmax = 2 };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

struct NetArch {
  int input_width = 0;
  std::vector<int> hidden_widths;
  int output_width = 0;
  Activation output_activation = Activation::identity;

  bool operator==(const NetArch&) const = default;
};

// Fully connected feed-forward network with rectified-linear hidden layers.
//
// All parameters live in one flat vector. The flat-view ordering is the
// serialization and optimizer contract: for each layer in input-to-output
// order, the weight matrix in row-major [out][in] form (output neuron o's
// incoming weights are contiguous), followed by the bias vector [out].
// Flat index of weight (o, i) in layer k: layer_offset_k + o*in_k + i.
template <typename Scalar>
class DenseNet {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using WeightMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic,
                                             Eigen::RowMajor>>;
  using ConstWeightMap =
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>;
  using BiasMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
  using ConstBiasMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

  explicit DenseNet(NetArch arch) : arch_(std::move(arch)) {
    if (arch_.input_width < 1 || arch_.output_width < 1)
      throw ShapeError("net widths must be >= 1");
    int in = arch_.input_width;
    for (int h : arch_.hidden_widths) {
      if (h < 1) throw ShapeError("hidden widths must be >= 1");
      layers_.push_back(Layer{in, h, Activation::relu, param_count_});
      param_count_ += static_cast<std::size_t>(in) * h + h;
      in = h;
    }
    layers_.push_back(Layer{in, arch_.output_width, arch_.output_activation,
                            param_count_});
    param_count_ += static_cast<std::size_t>(in) * arch_.output_width +
                    arch_.output_width;
    params_.assign(param_count_, Scalar(0));
  }

  DenseNet(int input_width, std::vector<int> hidden_widths, int output_width,
           Activation output_activation)
      : DenseNet(NetArch{input_width, std::move(hidden_widths), output_width,
                         output_activation}) {}

  const NetArch& arch() const { return arch_; }
  int input_width() const { return arch_.input_width; }
  int output_width() const { return arch_.output_width; }
  std::size_t param_count() const { return param_count_; }
  int layer_count() const { return static_cast<int>(layers_.size()); }

  std::span<Scalar> params() { return params_; }
  std::span<const Scalar> params() const { return params_; }

  // Per-layer views into the flat parameter vector.
  WeightMap weights(int k) {
    const Layer& l = layers_[static_cast<std::size_t>(k)];
    return WeightMap(params_.data() + l.offset, l.out, l.in);
  }
  ConstWeightMap weights(int k) const {
    const Layer& l = layers_[static_cast<std::size_t>(k)];
    return ConstWeightMap(params_.data() + l.offset, l.out, l.in);
  }
  BiasMap bias(int k) {
    const Layer& l = layers_[static_cast<std::size_t>(k)];
    return BiasMap(params_.data() + l.offset +
                       static_cast<std::size_t>(l.in) * l.out,
                   l.out);
  }
  ConstBiasMap bias(int k) const {
    const Layer& l = layers_[static_cast<std::size_t>(k)];
    return ConstBiasMap(params_.data() + l.offset +
                            static_cast<std::size_t>(l.in) * l.out,
                        l.out);
  }

  // Uniform fan-in initialization (bound 1/sqrt(fan_in)), biases zero.
  // Weights are drawn in flat-view order.
  void init_params(RandomStream& rng) {
    for (int k = 0; k < layer_count(); ++k) {
      const Layer& l = layers_[static_cast<std::size_t>(k)];
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
      Scalar* w = params_.data() + l.offset;
      for (std::size_t i = 0; i < static_cast<std::size_t>(l.in) * l.out; ++i)
        w[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
      bias(k).setZero();
    }
  }

  std::vector<Scalar> forward(std::span<const Scalar> input) const {
    if (input.size() != static_cast<std::size_t>(arch_.input_width))
      throw ShapeError("forward: input width " + std::to_string(input.size()) +
                       " != " + std::to_string(arch_.input_width));
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> a =
        Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(
            input.data(), static_cast<Eigen::Index>(input.size()));
    for (int k = 0; k < layer_count(); ++k) {
      const Layer& l = layers_[static_cast<std::size_t>(k)];
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> z = weights(k) * a + bias(k);
      apply_activation(l.act, z);
      a = std::move(z);
    }
    return std::vector<Scalar>(a.data(), a.data() + a.size());
  }

  // Batched forward. Rows are samples. The tape keeps every layer's
  // post-activation output (input included) for the backward pass.
  struct Tape {
    std::vector<Matrix> acts;  // acts[0] = input, acts[k+1] = layer k output
  };

  const Matrix& forward_batch(const Matrix& input, Tape& tape) const {
    if (input.cols() != arch_.input_width)
      throw ShapeError("forward_batch: input width mismatch");
    tape.acts.resize(static_cast<std::size_t>(layer_count()) + 1);
    tape.acts[0] = input;
    for (int k = 0; k < layer_count(); ++k) {
      const Layer& l = layers_[static_cast<std::size_t>(k)];
      Matrix& z = tape.acts[static_cast<std::size_t>(k) + 1];
      z.resize(input.rows(), l.out);
      z.noalias() = tape.acts[static_cast<std::size_t>(k)] * weights(k).transpose();
      z.rowwise() += bias(k).transpose();
      apply_activation_batch(l.act, z);
    }
    return tape.acts.back();
  }

  // Reverse-mode gradients. `output_grad` is dLoss/dOutput for the batch the
  // tape was recorded on; contributions are summed into `param_grad` (flat
  // view order) when it is non-empty, and dLoss/dInput is written to
  // `input_grad` when provided. Scale output_grad by 1/batch for batch means.
  void backward(const Tape& tape, const Matrix& output_grad,
                std::span<Scalar> param_grad, Matrix* input_grad = nullptr) const {
    if (!param_grad.empty() && param_grad.size() != param_count_)
      throw ShapeError("backward: gradient buffer size mismatch");
    if (output_grad.rows() != tape.acts[0].rows() ||
        output_grad.cols() != layers_.back().out)
      throw ShapeError("backward: output gradient shape mismatch");

    Matrix delta;  // dLoss/dZ of the current layer
    Matrix next;
    for (int k = layer_count() - 1; k >= 0; --k) {
      const Layer& l = layers_[static_cast<std::size_t>(k)];
      const Matrix& act = tape.acts[static_cast<std::size_t>(k) + 1];
      const Matrix& prev = tape.acts[static_cast<std::size_t>(k)];
      const Matrix& upstream = (k == layer_count() - 1) ? output_grad : delta;

      switch (l.act) {
        case Activation::identity:
          break;  // dLoss/dZ == upstream; dz selection below avoids a copy
        case Activation::relu:
          // elementwise with matching shapes, safe when upstream aliases delta
          delta = (upstream.array() *
                   (act.array() > Scalar(0)).template cast<Scalar>())
                      .matrix();
          break;
        case Activation::softmax: {
          // dz = s .* (dy - rowwise_dot(dy, s))
          Eigen::Array<Scalar, Eigen::Dynamic, 1> dots =
              (upstream.array() * act.array()).rowwise().sum();
          delta = (act.array() * (upstream.array().colwise() - dots)).matrix();
          break;
        }
      }
      const Matrix& dz = (l.act == Activation::identity && k == layer_count() - 1)
                             ? output_grad
                             : delta;

      if (!param_grad.empty()) {
        const Layer& lay = l;
        // weight grad accumulates as (in x out) col-major, which shares
        // memory layout with the row-major [out][in] flat view
        Eigen::Map<Matrix> wgrad(param_grad.data() + lay.offset, lay.in, lay.out);
        wgrad.noalias() += prev.transpose() * dz;
        Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> bgrad(
            param_grad.data() + lay.offset +
                static_cast<std::size_t>(lay.in) * lay.out,
            lay.out);
        bgrad.noalias() += dz.colwise().sum().transpose();
      }

      if (k > 0) {
        next.resize(dz.rows(), l.in);
        next.noalias() = dz * weights(k);
        delta.swap(next);
      } else if (input_grad != nullptr) {
        input_grad->resize(dz.rows(), l.in);
        input_grad->noalias() = dz * weights(k);
      }
    }
  }

 private:
  struct Layer {
    int in;
    int out;
    Activation act;
    std::size_t offset;  // into the flat parameter vector
  };

  static void apply_activation(Activation act,
                               Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& z) {
    switch (act) {
      case Activation::identity: break;
      case Activation::relu:
        z = z.cwiseMax(Scalar(0));
        break;
      case Activation::softmax: {
        const Scalar m = z.maxCoeff();  // shift for overflow safety
        z.array() = (z.array() - m).exp();
        z /= z.sum();
        break;
      }
    }
  }

  static void apply_activation_batch(Activation act, Matrix& z) {
    switch (act) {
      case Activation::identity: break;
      case Activation::relu:
        z = z.cwiseMax(Scalar(0));
        break;
      case Activation::softmax: {
        Eigen::Array<Scalar, Eigen::Dynamic, 1> m = z.array().rowwise().maxCoeff();
        z.array().colwise() -= m;
        z.array() = z.array().exp();
        Eigen::Array<Scalar, Eigen::Dynamic, 1> sums = z.array().rowwise().sum();
        z.array().colwise() /= sums;
        break;
      }
    }
  }

  NetArch arch_;
  std::vector<Layer> layers_;
  std::size_t param_count_ = 0;
  AlignedVector<Scalar> params_;  // fixed alignment keeps kernels bit-stable
};

}  // namespace anchorsched
