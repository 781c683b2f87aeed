#pragma once

#include "kinofe/types.hpp"

#include <iosfwd>
#include <random>
#include <vector>

namespace kinofe {

enum class Activation : std::uint8_t { ReLU = 0, Identity = 1 };

/// Hidden width used for a basis of `k` functions: floor(64 * sqrt(k)).
int hidden_width_for(int k);

/// Dense feedforward network with a linear output layer.
///
/// Parameters live in one flat vector, layer by layer: W_l (out x in, column-major)
/// followed by b_l. Batches are column-major, one sample per column.
template <typename Scalar>
class FeedforwardNet {
 public:
  using Vector = VecXT<Scalar>;
  using Matrix = MatXT<Scalar>;

  /// Per-layer values saved by the caching forward pass.
  struct Cache {
    std::vector<Matrix> inputs;  // input to layer l (post-activation of l-1)
    std::vector<Matrix> pre;     // pre-activation of layer l
  };

  FeedforwardNet() = default;
  /// Zero-initialized network.
  explicit FeedforwardNet(std::vector<int> layer_sizes, Activation hidden = Activation::ReLU);

  /// He-uniform fan-in weights, zero biases.
  static FeedforwardNet he_uniform(std::vector<int> layer_sizes, std::mt19937_64& rng,
                                   Activation hidden = Activation::ReLU);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  Activation hidden_activation() const { return hidden_; }
  Eigen::Index param_count() const { return params_.size(); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  Eigen::Index weight_offset(int layer) const { return offsets_[layer]; }
  Eigen::Index layer_param_count(int layer) const;

  Eigen::Map<Matrix> weight(int layer);
  Eigen::Map<const Matrix> weight(int layer) const;
  Eigen::Map<Vector> bias(int layer);
  Eigen::Map<const Vector> bias(int layer) const;

  Matrix forward(const Eigen::Ref<const Matrix>& x) const;
  Matrix forward(const Eigen::Ref<const Matrix>& x, Cache& cache) const;

  /// Reverse pass for sum(upstream .* forward(x)). Parameter gradients are
  /// added into `param_grad`; the input gradient is returned.
  Matrix backward(const Cache& cache, const Eigen::Ref<const Matrix>& upstream,
                  Eigen::Ref<Vector> param_grad) const;

  template <typename Other>
  FeedforwardNet<Other> cast() const {
    FeedforwardNet<Other> out(sizes_, hidden_);
    out.params() = params_.template cast<Other>();
    return out;
  }

  bool operator==(const FeedforwardNet& o) const {
    return sizes_ == o.sizes_ && hidden_ == o.hidden_ && params_.size() == o.params_.size() &&
           (params_.array() == o.params_.array()).all();
  }

 private:
  void check_input(Eigen::Index rows) const;

  std::vector<int> sizes_;
  Activation hidden_ = Activation::ReLU;
  std::vector<Eigen::Index> offsets_;
  Vector params_;
};

template <typename Scalar>
struct AdamState {
  VecXT<Scalar> m;
  VecXT<Scalar> v;
  std::int64_t step = 0;
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);

  AdamState() = default;
  explicit AdamState(Eigen::Index n) : m(VecXT<Scalar>::Zero(n)), v(VecXT<Scalar>::Zero(n)) {}
};

/// One bias-corrected Adam update. Throws NumericalError naming the first
/// non-finite gradient entry; parameters are untouched in that case.
template <typename Scalar>
void adam_step(Eigen::Ref<VecXT<Scalar>> params, const Eigen::Ref<const VecXT<Scalar>>& grads,
               AdamState<Scalar>& state, Scalar lr);

struct CosineSchedule {
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  std::int64_t total_steps = 1000;
};

/// Cosine-annealed learning rate; steps outside [0, total_steps] clamp.
double lr_at(const CosineSchedule& schedule, std::int64_t step);

template <typename Scalar>
void write_checkpoint(std::ostream& os, const FeedforwardNet<Scalar>& net);
template <typename Scalar>
FeedforwardNet<Scalar> read_checkpoint(std::istream& is);

extern template class FeedforwardNet<double>;
extern template class FeedforwardNet<float>;

using Net = FeedforwardNet<double>;

}  // namespace kinofe
