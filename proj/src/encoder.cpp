#include "kinofe/encoder.hpp"

#include "kinofe/detail/binio.hpp"

#include <chrono>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace kinofe {

std::vector<int> basis_layer_sizes(int hidden, int depth) {
  if (hidden < 1 || depth < 1) throw InvalidArgument("basis_layer_sizes: hidden and depth >= 1");
  std::vector<int> sizes{kNetInputDim};
  for (int d = 0; d < depth; ++d) sizes.push_back(hidden);
  sizes.push_back(kStateDim);
  return sizes;
}

BasisSet::BasisSet(int k, std::mt19937_64& rng, Rk4Config rk4, int hidden, int depth)
    : rk4_(rk4) {
  if (k < 1) throw InvalidArgument("BasisSet: k must be >= 1");
  rk4_.validate();
  const int h = hidden > 0 ? hidden : hidden_width_for(k);
  const auto sizes = basis_layer_sizes(h, depth);
  nets_.reserve(k);
  for (int i = 0; i < k; ++i) nets_.push_back(Net::he_uniform(sizes, rng));
}

BasisSet::BasisSet(std::vector<Net> nets, Rk4Config rk4) : nets_(std::move(nets)), rk4_(rk4) {
  if (nets_.empty()) throw InvalidArgument("BasisSet: k must be >= 1");
  rk4_.validate();
  for (const auto& n : nets_) {
    if (n.layer_sizes() != nets_.front().layer_sizes() ||
        n.hidden_activation() != nets_.front().hidden_activation()) {
      throw InvalidArgument("BasisSet: all basis networks must share one architecture");
    }
  }
  if (nets_.front().input_dim() != kNetInputDim || nets_.front().output_dim() != kStateDim) {
    throw InvalidArgument("BasisSet: basis networks must map 24 -> 6");
  }
}

Eigen::Index BasisSet::param_count() const {
  Eigen::Index n = 0;
  for (const auto& net : nets_) n += net.param_count();
  return n;
}

namespace {
constexpr std::string_view kBasisMagic{"KFEBASIS", 8};
constexpr std::uint32_t kBasisVersion = 1;
}  // namespace

void write_basis(std::ostream& os, const BasisSet& basis) {
  os.write(kBasisMagic.data(), static_cast<std::streamsize>(kBasisMagic.size()));
  detail::write_pod<std::uint32_t>(os, kBasisVersion);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(basis.k()));
  detail::write_pod<double>(os, basis.rk4().dt);
  detail::write_pod<std::int32_t>(os, basis.rk4().substeps);
  for (const auto& n : basis.nets()) write_checkpoint(os, n);
}

BasisSet read_basis(std::istream& is) {
  detail::expect_magic(is, kBasisMagic);
  const auto version = detail::read_pod<std::uint32_t>(is, "basis version");
  if (version != kBasisVersion) {
    throw FormatError("basis checkpoint: unsupported version " + std::to_string(version));
  }
  const auto k = detail::read_pod<std::uint32_t>(is, "basis size");
  if (k == 0 || k > 4096) throw FormatError("basis checkpoint: implausible k");
  Rk4Config rk4;
  rk4.dt = detail::read_pod<double>(is, "rk4 dt");
  rk4.substeps = detail::read_pod<std::int32_t>(is, "rk4 substeps");
  std::vector<Net> nets;
  nets.reserve(k);
  for (std::uint32_t i = 0; i < k; ++i) nets.push_back(read_checkpoint<double>(is));
  return BasisSet(std::move(nets), rk4);
}

BasisOutputs evaluate_basis(const BasisSet& basis, const Eigen::Ref<const MatX>& inputs,
                            const Eigen::Ref<const MatX>& controls) {
  BasisOutputs out;
  out.values.resize(kStateDim * inputs.cols(), basis.k());
  for (int i = 0; i < basis.k(); ++i) {
    const MatX g = rk4_net<double>(basis.net(i), inputs, controls, basis.rk4());
    out.values.col(i) = Eigen::Map<const VecX>(g.data(), g.size());
  }
  return out;
}

namespace {

void pack(std::span<const ConditionedSample> samples, MatX& inputs, MatX& controls,
          MatX* targets) {
  const auto n = static_cast<Eigen::Index>(samples.size());
  inputs.resize(kInputDim, n);
  controls.resize(kControlDim, n);
  if (targets) targets->resize(kStateDim, n);
  for (Eigen::Index l = 0; l < n; ++l) {
    inputs.col(l) = samples[l].input;
    controls.col(l) = samples[l].control;
    if (targets) targets->col(l) = samples[l].target;
  }
}

}  // namespace

SampleMatrices pack_samples(std::span<const ConditionedSample> samples) {
  SampleMatrices m;
  pack(samples, m.inputs, m.controls, &m.targets);
  return m;
}

BasisOutputs evaluate_basis(const BasisSet& basis, std::span<const ConditionedSample> samples) {
  MatX inputs, controls;
  pack(samples, inputs, controls, nullptr);
  return evaluate_basis(basis, inputs, controls);
}

CoefficientVector solve_coefficients(const GramSystem<double>& system) {
  CoefficientVector c;
  c.alpha = solve_normalized<double>(system, &c.lambda);
  c.sample_count = system.count;
  return c;
}

MatX combine(const BasisOutputs& outputs, const VecX& alpha) {
  if (alpha.size() != outputs.k()) throw InvalidArgument("combine: alpha length != k");
  const VecX flat = outputs.values * alpha;
  return Eigen::Map<const MatX>(flat.data(), kStateDim, outputs.batch());
}

MatX predict(const BasisSet& basis, const VecX& alpha, const Eigen::Ref<const MatX>& inputs,
             const Eigen::Ref<const MatX>& controls) {
  if (alpha.size() != basis.k()) throw InvalidArgument("predict: alpha length != k");
  MatX out = MatX::Zero(kStateDim, inputs.cols());
  for (int i = 0; i < basis.k(); ++i) {
    out += alpha[i] * rk4_net<double>(basis.net(i), inputs, controls, basis.rk4());
  }
  return out;
}

Vec6 predict(const BasisSet& basis, const CoefficientVector& alpha, const Vec22& input,
             const Vec2& control) {
  return predict(basis, alpha.alpha, input, control).col(0);
}

AdaptResult adapt(const BasisSet& basis, std::span<const ConditionedSample> buffer,
                  double lambda, int batch_size) {
  if (buffer.empty()) throw InvalidArgument("adapt: empty buffer");
  if (batch_size < 1) throw InvalidArgument("adapt: batch_size must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  GramSystem<double> sys(basis.k(), lambda);
  MatX inputs, controls, targets;
  for (std::size_t off = 0; off < buffer.size(); off += batch_size) {
    const auto n = std::min<std::size_t>(batch_size, buffer.size() - off);
    pack(buffer.subspan(off, n), inputs, controls, &targets);
    accumulate_gram(evaluate_basis(basis, inputs, controls), targets, sys);
  }
  AdaptResult result;
  result.coefficients = solve_coefficients(sys);
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string to_record(const CoefficientVector& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "k=" << c.k() << " alpha=";
  for (int i = 0; i < c.k(); ++i) os << (i ? "," : "") << c.alpha[i];
  os << " env=" << (c.source_env.empty() ? "-" : c.source_env) << " M=" << c.sample_count
     << " lambda=" << c.lambda << " t=" << c.timestamp;
  return os.str();
}

CoefficientVector parse_record(const std::string& line) {
  CoefficientVector c;
  std::istringstream is(line);
  std::string tok;
  int k = -1;
  bool have_alpha = false;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw FormatError("coefficient record: malformed token '" + tok + "'");
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    try {
      if (key == "k") {
        k = std::stoi(val);
      } else if (key == "alpha") {
        std::vector<double> vals;
        std::istringstream vs(val);
        std::string item;
        while (std::getline(vs, item, ',')) vals.push_back(std::stod(item));
        c.alpha = Eigen::Map<const VecX>(vals.data(), static_cast<Eigen::Index>(vals.size()));
        have_alpha = true;
      } else if (key == "env") {
        c.source_env = val == "-" ? "" : val;
      } else if (key == "M") {
        c.sample_count = std::stoll(val);
      } else if (key == "lambda") {
        c.lambda = std::stod(val);
      } else if (key == "t") {
        c.timestamp = std::stod(val);
      } else {
        throw FormatError("coefficient record: unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw FormatError("coefficient record: bad value for '" + key + "'");
    }
  }
  if (!have_alpha || k != c.k()) throw FormatError("coefficient record: k and alpha disagree");
  return c;
}

}  // namespace kinofe
