#pragma once

#include "kinofe/integrator.hpp"
#include "kinofe/net.hpp"
#include "kinofe/se3.hpp"

#include <Eigen/Cholesky>

#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace kinofe {

/// Layer sizes of one derivative network: 24 -> h x depth -> 6.
std::vector<int> basis_layer_sizes(int hidden, int depth = 4);

/// k derivative networks g_i sharing one architecture; G_i is the RK4 integral of g_i.
class BasisSet {
 public:
  BasisSet() = default;
  /// He-initialized basis. `hidden` <= 0 selects floor(64 sqrt(k)).
  BasisSet(int k, std::mt19937_64& rng, Rk4Config rk4 = {}, int hidden = 0, int depth = 4);
  BasisSet(std::vector<Net> nets, Rk4Config rk4);

  int k() const { return static_cast<int>(nets_.size()); }
  const Net& net(int i) const { return nets_.at(i); }
  Net& net(int i) { return nets_.at(i); }
  const std::vector<Net>& nets() const { return nets_; }
  const Rk4Config& rk4() const { return rk4_; }
  int hidden() const { return nets_.empty() ? 0 : nets_.front().layer_sizes()[1]; }

  /// Total parameter count across all nets.
  Eigen::Index param_count() const;

  bool operator==(const BasisSet& o) const {
    return nets_ == o.nets_ && rk4_.dt == o.rk4_.dt && rk4_.substeps == o.rk4_.substeps;
  }

 private:
  std::vector<Net> nets_;
  Rk4Config rk4_;
};

void write_basis(std::ostream& os, const BasisSet& basis);
BasisSet read_basis(std::istream& is);

/// Integrated basis outputs for a batch. Column i holds G_i flattened
/// sample-major (6 entries per sample); shape (6*B) x k.
struct BasisOutputs {
  MatX values;

  Eigen::Index batch() const { return values.rows() / kStateDim; }
  int k() const { return static_cast<int>(values.cols()); }
  /// G_i over the batch as 6 x B.
  Eigen::Map<const MatX> basis(int i) const {
    return {values.col(i).data(), kStateDim, batch()};
  }
  Vec6 at(Eigen::Index sample, int i) const { return basis(i).col(sample); }
};

/// Column-stacked samples: inputs 22xB, controls 2xB, targets 6xB.
struct SampleMatrices {
  MatX inputs;
  MatX controls;
  MatX targets;

  Eigen::Index size() const { return inputs.cols(); }
};

SampleMatrices pack_samples(std::span<const ConditionedSample> samples);

BasisOutputs evaluate_basis(const BasisSet& basis, const Eigen::Ref<const MatX>& inputs,
                            const Eigen::Ref<const MatX>& controls);
BasisOutputs evaluate_basis(const BasisSet& basis, std::span<const ConditionedSample> samples);

/// Running normal equations of the coefficient least-squares problem.
template <typename Scalar = double>
struct GramSystem {
  MatXT<Scalar> gram;
  VecXT<Scalar> rhs;
  Scalar lambda = Scalar(1e-3);
  Eigen::Index count = 0;

  GramSystem() = default;
  GramSystem(int k, Scalar lambda_)
      : gram(MatXT<Scalar>::Zero(k, k)), rhs(VecXT<Scalar>::Zero(k)), lambda(lambda_) {}

  int k() const { return static_cast<int>(rhs.size()); }
};

/// Adds one batch: gram += sum_l sum_d G_i G_j, rhs += sum_l sum_d y G_i.
template <typename Scalar>
void accumulate_gram(const Eigen::Ref<const MatXT<Scalar>>& flat_outputs,
                     const Eigen::Ref<const MatXT<Scalar>>& targets, GramSystem<Scalar>& sys) {
  const Eigen::Index rows = flat_outputs.rows();
  if (flat_outputs.cols() != sys.k()) throw InvalidArgument("accumulate_gram: k mismatch");
  if (targets.rows() != kStateDim || targets.cols() * kStateDim != rows) {
    throw InvalidArgument("accumulate_gram: targets must be 6 x B matching the basis batch");
  }
  if (rows == 0) return;
  const Eigen::Map<const VecXT<Scalar>> y(targets.data(), rows);
  MatXT<Scalar> lower = MatXT<Scalar>::Zero(sys.k(), sys.k());
  lower.template selfadjointView<Eigen::Lower>().rankUpdate(flat_outputs.transpose());
  const MatXT<Scalar> full = lower.template selfadjointView<Eigen::Lower>();
  sys.gram += full;
  sys.rhs.noalias() += flat_outputs.transpose() * y;
  sys.count += targets.cols();
}

inline void accumulate_gram(const BasisOutputs& outputs, const Eigen::Ref<const MatX>& targets,
                            GramSystem<double>& sys) {
  accumulate_gram<double>(outputs.values, targets, sys);
}

/// A point in the learned span.
struct CoefficientVector {
  VecX alpha;
  std::string source_env;
  Eigen::Index sample_count = 0;
  double lambda = 0.0;
  double timestamp = 0.0;

  int k() const { return static_cast<int>(alpha.size()); }
};

/// The regularized system could not be factored even after raising lambda.
class CoefficientSolveError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// alpha = (G/M + lambda I)^-1 (r/M) by Cholesky. On factorization failure
/// lambda is raised 10x once before giving up with CoefficientSolveError.
template <typename Scalar>
VecXT<Scalar> solve_normalized(const GramSystem<Scalar>& sys, Scalar* lambda_used = nullptr) {
  if (sys.count < 1) throw InvalidArgument("solve_coefficients: system has no samples");
  const Scalar inv_m = Scalar(1) / static_cast<Scalar>(sys.count);
  const MatXT<Scalar> g = sys.gram * inv_m;
  const VecXT<Scalar> r = sys.rhs * inv_m;
  Scalar lambda = sys.lambda;
  for (int attempt = 0; attempt < 2; ++attempt) {
    MatXT<Scalar> a = g;
    a.diagonal().array() += lambda;
    Eigen::LLT<MatXT<Scalar>> llt(a);
    if (llt.info() == Eigen::Success) {
      VecXT<Scalar> alpha = llt.solve(r);
      if (alpha.allFinite()) {
        if (lambda_used) *lambda_used = lambda;
        return alpha;
      }
    }
    lambda = lambda > Scalar(0) ? lambda * Scalar(10) : Scalar(1e-8);
  }
  throw CoefficientSolveError("solve_coefficients: Gram matrix not positive definite (k=" +
                              std::to_string(sys.k()) + ", M=" + std::to_string(sys.count) + ")");
}

CoefficientVector solve_coefficients(const GramSystem<double>& system);

/// Sum_i alpha_i G_i for one sample.
Vec6 predict(const BasisSet& basis, const CoefficientVector& alpha, const Vec22& input,
             const Vec2& control);
/// Batched prediction, 6 x B.
MatX predict(const BasisSet& basis, const VecX& alpha, const Eigen::Ref<const MatX>& inputs,
             const Eigen::Ref<const MatX>& controls);
/// Linear combination of precomputed outputs, 6 x B.
MatX combine(const BasisOutputs& outputs, const VecX& alpha);

struct AdaptResult {
  CoefficientVector coefficients;
  double seconds = 0.0;
};

/// evaluate_basis -> accumulate_gram in mini-batches -> solve_coefficients, timed.
AdaptResult adapt(const BasisSet& basis, std::span<const ConditionedSample> buffer,
                  double lambda = 1e-3, int batch_size = 256);

/// One-line text record: k, alpha, env, M, lambda, timestamp.
std::string to_record(const CoefficientVector& c);
CoefficientVector parse_record(const std::string& line);

}  // namespace kinofe
