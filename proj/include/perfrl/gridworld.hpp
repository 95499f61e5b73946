#pragma once

#include "perfrl/mdp.hpp"
#include "perfrl/response.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace perfrl {

enum class Cell : char { Start = 'S', Blank = '.', Fragile = 'F', Hole = 'H' };

struct CellRewards {
  double start = -0.01;
  double blank = -0.01;
  double fragile = -0.02;
  double hole = -0.5;

  double of(Cell cell) const;
};

/// A1 moves: left, right, up, down.
inline constexpr int kGridMoves = 4;
/// A2 actions: no intervention, then the four moves.
inline constexpr int kA2Actions = 5;

class GridWorld {
 public:
  GridWorld() = default;
  /// Throws ConfigError on an empty or ragged layout, unknown characters or
  /// a layout without Start cells.
  GridWorld(std::vector<std::string> rows, CellRewards rewards = {},
            double intervention_cost = -0.05, double discount = 0.9);

  /// One row per line of `S . F H`; blank lines at the end are ignored.
  static GridWorld parse(std::istream& in, CellRewards rewards = {},
                         double intervention_cost = -0.05, double discount = 0.9);
  static GridWorld load(const std::string& path, CellRewards rewards = {},
                        double intervention_cost = -0.05, double discount = 0.9);

  int height() const { return static_cast<int>(rows_.size()); }
  int width() const { return rows_.empty() ? 0 : static_cast<int>(rows_.front().size()); }
  int n_states() const { return height() * width(); }
  Cell cell(int state) const;
  const std::vector<std::string>& rows() const { return rows_; }
  const CellRewards& rewards() const { return rewards_; }
  double intervention_cost() const { return intervention_cost_; }
  double discount() const { return discount_; }

  /// Deterministic move; leaving the grid keeps the actor in place.
  int move(int state, int direction) const;
  /// Reward for entering `state`.
  double reward(int state) const { return rewards_.of(cell(state)); }
  /// Uniform over Start cells.
  Vector start_distribution() const;
  std::string to_string() const;

 private:
  std::vector<std::string> rows_;
  CellRewards rewards_;
  double intervention_cost_ = -0.05;
  double discount_ = 0.9;
};

/// The shipped 8x8 map.
GridWorld default_gridworld();

/// Copy of `base` whose non-Start cells are each kept with probability 0.7
/// and otherwise redrawn uniformly from {Blank, Fragile, Hole}.
GridWorld perturb_grid(const GridWorld& base, std::uint64_t seed);

/// A1's move after A2's action: a2 = 0 keeps a1, otherwise a2 - 1.
inline int effective_move(int a1, int a2) { return a2 == 0 ? a1 : a2 - 1; }

/// Raw single-agent MDP of the grid (no intervention).
TabularMdp grid_mdp(const GridWorld& grid);

/// A1's MDP when A2 plays `a2_policy` (|S| x 5): transitions and rewards are
/// mixtures over A2's actions, rewards come from A1's grid.
TabularMdp effective_mdp(const GridWorld& a1_grid, const Matrix& a2_policy);

/// Optimal Q (|S| x 5) of A2's induced MDP given A1's policy, by value
/// iteration until the sup-norm update is at most `tol`.
Matrix a2_optimal_q(const Policy& a1_policy, const GridWorld& a2_grid, double tol = 1e-8);

/// w * softmax(q) + (1 - w) * previous, row-wise.
Matrix a2_respond(const Matrix& q, const Matrix& previous, double w);

Matrix never_intervene_policy(int n_states);

/// Two-agent response: each step A2 recomputes its Q against A1's deployed
/// policy and moves its policy towards the softmax; the output is A1's
/// effective environment. Stateful: owns A2's policy.
class TwoAgentResponse final : public EnvResponse {
 public:
  /// Throws std::invalid_argument unless 0 < w <= 1 and the grids agree in
  /// shape. `w = 0` is accepted when `allow_frozen` is set.
  TwoAgentResponse(GridWorld a1_grid, GridWorld a2_grid, double w, double q_tol = 1e-8,
                   bool allow_frozen = false);

  Environment step(const OccupancyMeasure& d, const Environment& current) override;
  void reset() override;
  std::unique_ptr<EnvResponse> clone() const override {
    return std::make_unique<TwoAgentResponse>(*this);
  }
  std::string name() const override { return "gridworld"; }

  const GridWorld& a1_grid() const { return a1_grid_; }
  const GridWorld& a2_grid() const { return a2_grid_; }
  double weight() const { return w_; }
  const Matrix& a2_policy() const { return a2_policy_; }
  void set_a2_policy(Matrix policy);
  /// A1's MDP under the current A2 policy.
  TabularMdp current_mdp() const { return effective_mdp(a1_grid_, a2_policy_); }

 private:
  GridWorld a1_grid_;
  GridWorld a2_grid_;
  double w_;
  double q_tol_;
  Matrix a2_policy_;
};

}  // namespace perfrl
