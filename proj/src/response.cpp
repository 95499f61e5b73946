#include "perfrl/response.hpp"

#include "perfrl/errors.hpp"
#include "perfrl/rng.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace perfrl {

ConvexCombinationResponse::ConvexCombinationResponse(double w, TargetMap target)
    : w_(w), target_(std::move(target)) {
  if (!(w > 0.0 && w <= 1.0)) {
    throw std::invalid_argument("convex-combination weight must lie in (0, 1]");
  }
  if (!target_) throw std::invalid_argument("convex-combination target is empty");
}

Environment ConvexCombinationResponse::step(const OccupancyMeasure& d,
                                            const Environment& current) {
  if (w_ == 1.0) return current;
  const Environment target = target_(policy_from_occupancy(d));
  return Environment{w_ * current.transitions + (1.0 - w_) * target.transitions,
                     w_ * current.rewards + (1.0 - w_) * target.rewards};
}

TargetMap make_policy_mixture_target(int n_states, int n_actions, double kappa,
                                     std::uint64_t seed, const Matrix* fixed_rewards) {
  if (n_states <= 0 || n_actions <= 0) throw std::invalid_argument("empty target dimensions");
  if (fixed_rewards && (fixed_rewards->rows() != n_states || fixed_rewards->cols() != n_actions)) {
    throw std::invalid_argument("fixed reward table has the wrong shape");
  }
  if (!(kappa >= 0.0 && kappa <= 1.0)) throw std::invalid_argument("kappa must lie in [0, 1]");
  Rng rng(seed);
  struct Components {
    std::vector<Matrix> kernels;
    std::vector<Matrix> rewards;
  };
  auto parts = std::make_shared<Components>();
  for (int b = 0; b < n_actions; ++b) {
    Matrix k(n_states * n_actions, n_states);
    for (Eigen::Index row = 0; row < k.rows(); ++row) {
      for (int next = 0; next < n_states; ++next) k(row, next) = 0.05 + rng.uniform();
      k.row(row) /= k.row(row).sum();
    }
    Matrix r(n_states, n_actions);
    for (int s = 0; s < n_states; ++s)
      for (int a = 0; a < n_actions; ++a) r(s, a) = rng.uniform();
    if (fixed_rewards) r = *fixed_rewards;
    parts->kernels.push_back(std::move(k));
    parts->rewards.push_back(std::move(r));
  }
  return [parts = std::shared_ptr<const Components>(parts), n_states, n_actions,
          kappa](const Policy& policy) {
    Environment env{Matrix::Zero(n_states * n_actions, n_states),
                    Matrix::Zero(n_states, n_actions)};
    for (int s = 0; s < n_states; ++s) {
      for (int b = 0; b < n_actions; ++b) {
        const double weight = (1.0 - kappa) / n_actions + kappa * policy.probs(s, b);
        env.transitions.middleRows(s * n_actions, n_actions) +=
            weight * parts->kernels[b].middleRows(s * n_actions, n_actions);
        env.rewards.row(s) += weight * parts->rewards[b].row(s);
      }
    }
    return env;
  };
}

Environment limiting_environment(const EnvResponse& resp, const OccupancyMeasure& d,
                                 const Environment& start, double tol, int max_iters) {
  if (!(tol > 0.0)) throw std::invalid_argument("tolerance must be positive");
  auto local = resp.clone();
  Environment current = start;
  double gap = 0.0;
  for (int iter = 0; iter < max_iters; ++iter) {
    Environment next = local->step(d, current);
    gap = env_distance(current, next);
    current = std::move(next);
    if (gap <= tol) return current;
  }
  throw SolverError("limiting_environment: response did not settle (not a contraction?)",
                    gap);
}

namespace {

Environment respond_once(const EnvResponse& resp, const OccupancyMeasure& d,
                         const Environment& env) {
  return resp.clone()->step(d, env);
}

struct RatioTracker {
  double value = 0.0;
  bool seen = false;
  void update(double numerator, double denominator) {
    if (denominator <= 1e-14) return;
    value = std::max(value, numerator / denominator);
    seen = true;
  }
};

}  // namespace

SensitivityParams estimate_sensitivity(const EnvResponse& resp,
                                       std::span<const Probe> probes) {
  if (probes.size() < 2) throw std::invalid_argument("need at least two probes");
  RatioTracker iota_p, iota_r, eps_pp, eps_pr, eps_rp, eps_rr;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const Probe& base = probes[i];
    const Environment at_base = respond_once(resp, base.d, base.env);
    for (std::size_t j = 0; j < probes.size(); ++j) {
      if (i == j) continue;
      const Probe& other = probes[j];

      const double d_gap = occupancy_distance(base.d, other.d);
      if (d_gap > 1e-14) {
        const Environment out = respond_once(resp, other.d, base.env);
        iota_p.update((out.transitions - at_base.transitions).norm(), d_gap);
        iota_r.update((out.rewards - at_base.rewards).norm(), d_gap);
      }

      const double p_gap = (base.env.transitions - other.env.transitions).norm();
      if (p_gap > 1e-14) {
        Environment varied{other.env.transitions, base.env.rewards};
        const Environment out = respond_once(resp, base.d, varied);
        eps_pp.update((out.transitions - at_base.transitions).norm(), p_gap);
        eps_rp.update((out.rewards - at_base.rewards).norm(), p_gap);
      }

      const double r_gap = (base.env.rewards - other.env.rewards).norm();
      if (r_gap > 1e-14) {
        Environment varied{base.env.transitions, other.env.rewards};
        const Environment out = respond_once(resp, base.d, varied);
        eps_pr.update((out.transitions - at_base.transitions).norm(), r_gap);
        eps_rr.update((out.rewards - at_base.rewards).norm(), r_gap);
      }
    }
  }
  if (!(iota_p.seen || eps_pp.seen || eps_pr.seen)) {
    throw std::invalid_argument("all probe pairs were degenerate");
  }
  SensitivityParams params;
  params.iota_p = iota_p.value;
  params.iota_r = iota_r.value;
  params.eps_pp = eps_pp.value;
  params.eps_pr = eps_pr.value;
  params.eps_rp = eps_rp.value;
  params.eps_rr = eps_rr.value;
  params.empirical = true;
  return params;
}

double estimate_dpr(const EnvResponse& resp, std::span<const Probe> probes) {
  if (probes.empty()) throw std::invalid_argument("need at least one probe");
  double worst = 0.0;
  for (const Probe& probe : probes) {
    worst = std::max(worst, env_distance(probe.env, respond_once(resp, probe.d, probe.env)));
  }
  return worst;
}

}  // namespace perfrl
