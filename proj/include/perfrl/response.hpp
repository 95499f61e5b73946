#pragma once

#include "perfrl/mdp.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>

namespace perfrl {

/// How the environment reacts to a deployed policy: maps (d, P, r) to the
/// next round's (P', r'). Implementations may carry hidden state, which
/// `reset()` restores to its initial value.
class EnvResponse {
 public:
  virtual ~EnvResponse() = default;

  virtual Environment step(const OccupancyMeasure& d, const Environment& current) = 0;
  virtual void reset() {}
  virtual std::unique_ptr<EnvResponse> clone() const = 0;
  virtual std::string name() const = 0;
};

/// Ignores its inputs and always returns the same environment.
class ConstantResponse final : public EnvResponse {
 public:
  explicit ConstantResponse(Environment target) : target_(std::move(target)) {}

  Environment step(const OccupancyMeasure&, const Environment&) override { return target_; }
  std::unique_ptr<EnvResponse> clone() const override {
    return std::make_unique<ConstantResponse>(*this);
  }
  std::string name() const override { return "constant"; }

 private:
  Environment target_;
};

/// Environment a population would settle on if a policy were deployed forever.
using TargetMap = std::function<Environment(const Policy&)>;

/// P' = w P + (1 - w) P*(pi_d) and r' = w r + (1 - w) r*(pi_d).
class ConvexCombinationResponse final : public EnvResponse {
 public:
  /// Throws std::invalid_argument unless 0 < w <= 1 (w = 1 is the identity).
  ConvexCombinationResponse(double w, TargetMap target);

  Environment step(const OccupancyMeasure& d, const Environment& current) override;
  std::unique_ptr<EnvResponse> clone() const override {
    return std::make_unique<ConvexCombinationResponse>(*this);
  }
  std::string name() const override { return "convex_combination"; }

  double weight() const { return w_; }
  const TargetMap& target() const { return target_; }

 private:
  double w_;
  TargetMap target_;
};

/// Synthetic target for the convex-combination model. Each state mixes |A|
/// random kernels K_b and reward tables R_b with weights
/// (1 - kappa) / |A| + kappa * pi(b|s), so the target moves smoothly with the
/// policy and kappa scales its sensitivity. Rewards lie in [0, 1]; with
/// `fixed_rewards` every R_b is that table, so only transitions respond.
TargetMap make_policy_mixture_target(int n_states, int n_actions, double kappa,
                                     std::uint64_t seed, const Matrix* fixed_rewards = nullptr);

/// Assumption constants of the response: sensitivities to the deployed
/// occupancy (iota) and to the previous environment (eps). Estimated values
/// are empirical lower bounds, never certificates.
struct SensitivityParams {
  double iota_p = 0.0;
  double iota_r = 0.0;
  double eps_pp = 0.0;  // P' w.r.t. P
  double eps_pr = 0.0;  // P' w.r.t. r
  double eps_rp = 0.0;  // r' w.r.t. P
  double eps_rr = 0.0;  // r' w.r.t. r
  bool empirical = false;

  double iota() const { return iota_p + iota_r; }
  double eps_p() const { return eps_pp + eps_rp; }
  double eps_r() const { return eps_pr + eps_rr; }
  double eps() const { return eps_p() > eps_r() ? eps_p() : eps_r(); }
  bool valid() const { return iota() < 1.0 && eps_p() < 1.0 && eps_r() < 1.0; }
};

struct Probe {
  OccupancyMeasure d;
  Environment env;
};

/// Fixed point of (P, r) -> step(d, P, r), iterated on a copy of `resp`.
/// Throws SolverError if successive iterates are still more than `tol` apart
/// after `max_iters` steps.
Environment limiting_environment(const EnvResponse& resp, const OccupancyMeasure& d,
                                 const Environment& start, double tol = 1e-10,
                                 int max_iters = 10000);

/// Max observed Lipschitz ratios over all probe pairs, changing one argument
/// of the response at a time. Pairs with a zero denominator are skipped;
/// throws std::invalid_argument if fewer than two probes are given or every
/// ratio was skipped.
SensitivityParams estimate_sensitivity(const EnvResponse& resp,
                                       std::span<const Probe> probes);

/// Largest one-step drift env_distance((P, r), step(d, P, r)) over the probes.
double estimate_dpr(const EnvResponse& resp, std::span<const Probe> probes);

}  // namespace perfrl
