#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "epigvi/autodiff.hpp"

namespace epigvi {

struct FlowConfig {
  int dim = 3;
  int transforms = 3;
  int hidden_layers = 3;
  int hidden_units = 128;
  int bins = 8;             ///< rational-quadratic bins per spline
  double tail_bound = 5.0;  ///< splines act on [-B, B], identity outside
  double beta_max = 2.0;    ///< squash scale; support is (0, beta_max)^3
  double min_bin_fraction = 1e-3;
  double min_derivative = 1e-3;

  void validate() const;
  /// Per-coordinate conditioner output width: bins widths + bins heights
  /// + (bins - 1) interior derivatives.
  int params_per_coordinate() const { return 3 * bins - 1; }
  std::string arch_string() const;
  std::uint64_t arch_hash() const;
};

/// Independent uniform prior on (0, beta_max)^3 over constrained beta.
struct UniformPrior {
  double beta_max = 2.0;

  bool contains(const Eigen::Array3d& beta) const {
    return (beta > 0.0).all() && (beta < beta_max).all();
  }
  double log_density(const Eigen::Array3d& beta) const {
    return contains(beta)
               ? -3.0 * std::log(beta_max)
               : -std::numeric_limits<double>::infinity();
  }
};

/// Neural spline flow over the 3-d unconstrained parameter space with a
/// fixed sigmoid squash onto (0, beta_max)^3. Each transform is a masked
/// autoregressive rational-quadratic spline whose conditioner is a fully
/// connected network (hidden_layers x hidden_units); the coordinate order
/// rotates between transforms. Conditioner heads start at zero, so a fresh
/// model is the identity and samples are squashed standard normals.
class FlowModel {
 public:
  explicit FlowModel(FlowConfig cfg = {}, std::uint64_t init_seed = 0);

  const FlowConfig& config() const { return cfg_; }
  const std::vector<ad::ArrayXXd>& parameters() const { return params_; }
  std::vector<ad::ArrayXXd>& parameters() { return params_; }
  /// Binary mask per parameter tensor (all-ones for biases).
  const std::vector<ad::ArrayXXd>& masks() const { return masks_; }
  std::size_t parameter_count() const;

  /// Tensors per transform (weights and biases interleaved).
  int tensors_per_transform() const { return 2 * (cfg_.hidden_layers + 1); }
  /// Coordinate processed at `position` within transform `t`.
  int coordinate_at(int t, int position) const {
    return (t + position) % cfg_.dim;
  }

 private:
  FlowConfig cfg_;
  std::vector<ad::ArrayXXd> params_;
  std::vector<ad::ArrayXXd> masks_;
};

/// Flow parameters registered as leaves on a tape, in parameters() order.
struct FlowVars {
  std::vector<ad::Var> params;
};
FlowVars bind(const FlowModel& model, ad::Tape& tape);

struct FlowSample {
  Eigen::ArrayXXd beta;           ///< (n, 3) constrained samples
  Eigen::ArrayXXd unconstrained;  ///< (n, 3) pre-squash values
  Eigen::ArrayXd log_q;           ///< sampling-time log density per sample
  ad::Var beta_var;               ///< (n, 3)
  ad::Var log_q_var;              ///< (n, 1)
};

/// Reparameterized sampling: noise is a constant, so gradients of any
/// statistic of the samples flow into the bound parameters. Pass
/// vars == nullptr for a value-only pass (no tape growth).
FlowSample sample(const FlowModel& model, int n, std::uint64_t seed,
                  const FlowVars* vars = nullptr);

/// Exact log density via the inverse pass. Values must lie strictly inside
/// (0, beta_max)^3.
double log_prob(const FlowModel& model, const Eigen::Array3d& beta);
Eigen::ArrayXd log_prob_batch(const FlowModel& model,
                              const Eigen::ArrayXXd& beta);

/// Standalone rational-quadratic spline evaluation (one coordinate).
/// `conditioner_outputs` carries one row of 3*bins-1 raw parameters per
/// input. Forward maps x -> y; inverse recovers x from y. log_derivative
/// holds log dy/dx at the evaluated points (zero on the identity tails);
/// log|det J| of the batch is its sum.
struct SplineEval {
  Eigen::ArrayXd outputs;
  Eigen::ArrayXd log_derivative;
};
SplineEval rq_spline(const Eigen::ArrayXd& inputs,
                     const Eigen::ArrayXXd& conditioner_outputs,
                     const FlowConfig& cfg, bool inverse);

// Internal building blocks shared by sampling, density evaluation and the
// trainer; exposed for tests.
namespace flow_detail {

/// Column slice [c0, c1) via a flat row-major gather.
ad::Var slice_cols(const ad::Var& x, ad::Index c0, ad::Index c1);

/// Masked conditioner pass for transform t on inputs x (N, dim); returns the
/// (N, dim * params_per_coordinate) raw spline parameters.
ad::Var conditioner_forward(const FlowModel& model, int t, const ad::Var& x,
                            const FlowVars* vars);

struct SplineVar {
  ad::Var outputs;        // (N, 1)
  ad::Var log_derivative; // (N, 1)
};
SplineVar rq_spline_var(const ad::Var& x, const ad::Var& raw,
                        const FlowConfig& cfg);

std::pair<ad::Var, ad::Var> transform_forward(const FlowModel& model, int t,
                                              const ad::Var& x,
                                              const FlowVars* vars);

}  // namespace flow_detail

}  // namespace epigvi
