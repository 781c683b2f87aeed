#include "kinofe/net.hpp"

#include "kinofe/detail/binio.hpp"

#include <cmath>
#include <sstream>

namespace kinofe {

int hidden_width_for(int k) {
  if (k < 1) throw InvalidArgument("hidden_width_for: k must be positive");
  return static_cast<int>(std::floor(64.0 * std::sqrt(static_cast<double>(k))));
}

template <typename Scalar>
FeedforwardNet<Scalar>::FeedforwardNet(std::vector<int> layer_sizes, Activation hidden)
    : sizes_(std::move(layer_sizes)), hidden_(hidden) {
  if (sizes_.size() < 2) throw InvalidArgument("FeedforwardNet: need at least two layer sizes");
  for (int s : sizes_) {
    if (s <= 0) throw InvalidArgument("FeedforwardNet: layer sizes must be positive");
  }
  Eigen::Index off = 0;
  for (int l = 0; l < num_layers(); ++l) {
    offsets_.push_back(off);
    off += static_cast<Eigen::Index>(sizes_[l + 1]) * (sizes_[l] + 1);
  }
  offsets_.push_back(off);
  params_ = Vector::Zero(off);
}

template <typename Scalar>
FeedforwardNet<Scalar> FeedforwardNet<Scalar>::he_uniform(std::vector<int> layer_sizes,
                                                          std::mt19937_64& rng,
                                                          Activation hidden) {
  FeedforwardNet net(std::move(layer_sizes), hidden);
  for (int l = 0; l < net.num_layers(); ++l) {
    const double limit = std::sqrt(6.0 / net.sizes_[l]);
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto w = net.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(dist(rng));
  }
  return net;
}

template <typename Scalar>
Eigen::Index FeedforwardNet<Scalar>::layer_param_count(int layer) const {
  return offsets_[layer + 1] - offsets_[layer];
}

template <typename Scalar>
Eigen::Map<typename FeedforwardNet<Scalar>::Matrix> FeedforwardNet<Scalar>::weight(int l) {
  return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}
template <typename Scalar>
Eigen::Map<const typename FeedforwardNet<Scalar>::Matrix> FeedforwardNet<Scalar>::weight(
    int l) const {
  return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}
template <typename Scalar>
Eigen::Map<typename FeedforwardNet<Scalar>::Vector> FeedforwardNet<Scalar>::bias(int l) {
  return {params_.data() + offsets_[l] + static_cast<Eigen::Index>(sizes_[l + 1]) * sizes_[l],
          sizes_[l + 1]};
}
template <typename Scalar>
Eigen::Map<const typename FeedforwardNet<Scalar>::Vector> FeedforwardNet<Scalar>::bias(
    int l) const {
  return {params_.data() + offsets_[l] + static_cast<Eigen::Index>(sizes_[l + 1]) * sizes_[l],
          sizes_[l + 1]};
}

template <typename Scalar>
void FeedforwardNet<Scalar>::check_input(Eigen::Index rows) const {
  if (sizes_.empty()) throw InvalidArgument("FeedforwardNet: empty network");
  if (rows != sizes_.front()) {
    std::ostringstream msg;
    msg << "FeedforwardNet: input width " << rows << " != " << sizes_.front();
    throw InvalidArgument(msg.str());
  }
}

template <typename Scalar>
typename FeedforwardNet<Scalar>::Matrix FeedforwardNet<Scalar>::forward(
    const Eigen::Ref<const Matrix>& x) const {
  check_input(x.rows());
  Matrix a = x;
  for (int l = 0; l < num_layers(); ++l) {
    Matrix z = weight(l) * a;
    z.colwise() += bias(l);
    if (l + 1 < num_layers() && hidden_ == Activation::ReLU) z = z.cwiseMax(Scalar(0));
    a = std::move(z);
  }
  return a;
}

template <typename Scalar>
typename FeedforwardNet<Scalar>::Matrix FeedforwardNet<Scalar>::forward(
    const Eigen::Ref<const Matrix>& x, Cache& cache) const {
  check_input(x.rows());
  cache.inputs.resize(num_layers());
  cache.pre.resize(num_layers());
  cache.inputs[0] = x;
  for (int l = 0; l < num_layers(); ++l) {
    cache.pre[l].noalias() = weight(l) * cache.inputs[l];
    cache.pre[l].colwise() += bias(l);
    if (l + 1 < num_layers()) {
      cache.inputs[l + 1] =
          hidden_ == Activation::ReLU ? Matrix(cache.pre[l].cwiseMax(Scalar(0))) : cache.pre[l];
    }
  }
  return cache.pre.back();
}

template <typename Scalar>
typename FeedforwardNet<Scalar>::Matrix FeedforwardNet<Scalar>::backward(
    const Cache& cache, const Eigen::Ref<const Matrix>& upstream,
    Eigen::Ref<Vector> param_grad) const {
  if (static_cast<int>(cache.pre.size()) != num_layers()) {
    throw InvalidArgument("FeedforwardNet::backward: cache does not match network");
  }
  const Matrix& out = cache.pre.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols()) {
    throw InvalidArgument("FeedforwardNet::backward: upstream gradient shape mismatch");
  }
  if (param_grad.size() != params_.size()) {
    throw InvalidArgument("FeedforwardNet::backward: gradient buffer size mismatch");
  }
  Matrix delta = upstream;
  for (int l = num_layers() - 1; l >= 0; --l) {
    if (l + 1 < num_layers() && hidden_ == Activation::ReLU) {
      // subgradient of ReLU at exactly zero is 0
      delta = (cache.pre[l].array() > Scalar(0)).select(delta, Scalar(0));
    }
    const Eigen::Index rows = sizes_[l + 1];
    const Eigen::Index cols = sizes_[l];
    Eigen::Map<Matrix> gw(param_grad.data() + offsets_[l], rows, cols);
    Eigen::Map<Vector> gb(param_grad.data() + offsets_[l] + rows * cols, rows);
    gw.noalias() += delta * cache.inputs[l].transpose();
    gb += delta.rowwise().sum();
    Matrix next = weight(l).transpose() * delta;
    delta = std::move(next);
  }
  return delta;
}

template <typename Scalar>
void adam_step(Eigen::Ref<VecXT<Scalar>> params, const Eigen::Ref<const VecXT<Scalar>>& grads,
               AdamState<Scalar>& state, Scalar lr) {
  if (grads.size() != params.size()) throw InvalidArgument("adam_step: gradient size mismatch");
  if (state.m.size() != params.size()) {
    if (state.step != 0 || state.m.size() != 0) {
      throw InvalidArgument("adam_step: optimizer state does not match parameters");
    }
    state.m = VecXT<Scalar>::Zero(params.size());
    state.v = VecXT<Scalar>::Zero(params.size());
  }
  for (Eigen::Index i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(static_cast<double>(grads[i]))) {
      std::ostringstream msg;
      msg << "adam_step: non-finite gradient at index " << i << " (step " << state.step + 1
          << ")";
      throw NumericalError(msg.str());
    }
  }
  state.step += 1;
  state.m = state.beta1 * state.m + (Scalar(1) - state.beta1) * grads;
  state.v = state.beta2 * state.v + (Scalar(1) - state.beta2) * grads.cwiseProduct(grads);
  const Scalar bc1 = Scalar(1) - std::pow(state.beta1, static_cast<Scalar>(state.step));
  const Scalar bc2 = Scalar(1) - std::pow(state.beta2, static_cast<Scalar>(state.step));
  if (lr == Scalar(0)) return;
  params.array() -=
      lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + state.eps);
}

double lr_at(const CosineSchedule& s, std::int64_t step) {
  if (s.total_steps <= 0) throw InvalidArgument("lr_at: total_steps must be positive");
  if (step <= 0) return s.lr_start;
  if (step >= s.total_steps) return s.lr_end;
  const double frac = static_cast<double>(step) / static_cast<double>(s.total_steps);
  return s.lr_end + 0.5 * (s.lr_start - s.lr_end) * (1.0 + std::cos(kPi * frac));
}

namespace {
constexpr std::string_view kNetMagic{"KFENET\x00\x01", 8};
constexpr std::uint32_t kNetVersion = 1;
}  // namespace

template <typename Scalar>
void write_checkpoint(std::ostream& os, const FeedforwardNet<Scalar>& net) {
  using detail::write_pod;
  os.write(kNetMagic.data(), static_cast<std::streamsize>(kNetMagic.size()));
  write_pod<std::uint32_t>(os, kNetVersion);
  write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(sizeof(Scalar)));
  write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(net.hidden_activation()));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(net.layer_sizes().size()));
  for (int s : net.layer_sizes()) write_pod<std::int32_t>(os, s);
  write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(net.param_count()));
  detail::write_bytes(os, net.params().data(), sizeof(Scalar) * net.param_count());
}

template <typename Scalar>
FeedforwardNet<Scalar> read_checkpoint(std::istream& is) {
  using detail::read_pod;
  detail::expect_magic(is, kNetMagic);
  const auto version = read_pod<std::uint32_t>(is, "net version");
  if (version != kNetVersion) {
    throw FormatError("net checkpoint: unsupported version " + std::to_string(version));
  }
  const auto width = read_pod<std::uint8_t>(is, "scalar width");
  if (width != sizeof(Scalar)) {
    throw FormatError("net checkpoint: scalar width " + std::to_string(width) +
                      " does not match requested type");
  }
  const auto act = read_pod<std::uint8_t>(is, "activation");
  if (act > 1) throw FormatError("net checkpoint: unknown activation tag");
  const auto n = read_pod<std::uint32_t>(is, "layer count");
  if (n < 2 || n > 64) throw FormatError("net checkpoint: implausible layer count");
  std::vector<int> sizes(n);
  for (auto& s : sizes) s = read_pod<std::int32_t>(is, "layer size");
  FeedforwardNet<Scalar> net(sizes, static_cast<Activation>(act));
  const auto count = read_pod<std::uint64_t>(is, "parameter count");
  if (count != static_cast<std::uint64_t>(net.param_count())) {
    throw FormatError("net checkpoint: parameter count does not match layer sizes");
  }
  detail::read_bytes(is, net.params().data(), sizeof(Scalar) * count, "net parameters");
  return net;
}

template class FeedforwardNet<double>;
template class FeedforwardNet<float>;
template void adam_step<double>(Eigen::Ref<VecXT<double>>, const Eigen::Ref<const VecXT<double>>&,
                                AdamState<double>&, double);
template void adam_step<float>(Eigen::Ref<VecXT<float>>, const Eigen::Ref<const VecXT<float>>&,
                               AdamState<float>&, float);
template void write_checkpoint<double>(std::ostream&, const FeedforwardNet<double>&);
template void write_checkpoint<float>(std::ostream&, const FeedforwardNet<float>&);
template FeedforwardNet<double> read_checkpoint<double>(std::istream&);
template FeedforwardNet<float> read_checkpoint<float>(std::istream&);

}  // namespace kinofe
