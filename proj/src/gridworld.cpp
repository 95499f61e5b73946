#include "perfrl/gridworld.hpp"

#include "perfrl/errors.hpp"
#include "perfrl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>
#include <stdexcept>

#ifndef PERFRL_DATA_DIR
#define PERFRL_DATA_DIR "data"
#endif

namespace perfrl {

double CellRewards::of(Cell cell) const {
  switch (cell) {
    case Cell::Start: return start;
    case Cell::Blank: return blank;
    case Cell::Fragile: return fragile;
    case Cell::Hole: return hole;
  }
  return blank;
}

namespace {

bool is_cell(char c) { return c == 'S' || c == '.' || c == 'F' || c == 'H'; }

// Row and column offsets of L, R, U, D.
constexpr int kDr[kGridMoves] = {0, 0, -1, 1};
constexpr int kDc[kGridMoves] = {-1, 1, 0, 0};

}  // namespace

GridWorld::GridWorld(std::vector<std::string> rows, CellRewards rewards,
                     double intervention_cost, double discount)
    : rows_(std::move(rows)),
      rewards_(rewards),
      intervention_cost_(intervention_cost),
      discount_(discount) {
  if (rows_.empty() || rows_.front().empty()) throw ConfigError("grid map is empty");
  bool has_start = false;
  for (const std::string& row : rows_) {
    if (row.size() != rows_.front().size()) throw ConfigError("grid map is ragged");
    for (char c : row) {
      if (!is_cell(c)) throw ConfigError(std::string("grid map has unknown cell '") + c + "'");
      has_start = has_start || c == 'S';
    }
  }
  if (!has_start) throw ConfigError("grid map has no Start cell");
  for (double r : {rewards_.start, rewards_.blank, rewards_.fragile, rewards_.hole,
                   intervention_cost_}) {
    if (!std::isfinite(r)) throw ConfigError("grid rewards must be finite");
  }
  if (!(discount_ > 0.0 && discount_ < 1.0)) throw ConfigError("grid discount must lie in (0, 1)");
}

GridWorld GridWorld::parse(std::istream& in, CellRewards rewards, double intervention_cost,
                           double discount) {
  std::vector<std::string> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    rows.push_back(line);
  }
  while (!rows.empty() && rows.back().empty()) rows.pop_back();
  return GridWorld(std::move(rows), rewards, intervention_cost, discount);
}

GridWorld GridWorld::load(const std::string& path, CellRewards rewards,
                          double intervention_cost, double discount) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grid map '" + path + "'");
  return parse(in, rewards, intervention_cost, discount);
}

Cell GridWorld::cell(int state) const {
  return static_cast<Cell>(rows_[static_cast<std::size_t>(state / width())]
                                [static_cast<std::size_t>(state % width())]);
}

int GridWorld::move(int state, int direction) const {
  const int row = state / width() + kDr[direction];
  const int col = state % width() + kDc[direction];
  if (row < 0 || row >= height() || col < 0 || col >= width()) return state;
  return row * width() + col;
}

Vector GridWorld::start_distribution() const {
  Vector rho = Vector::Zero(n_states());
  for (int s = 0; s < n_states(); ++s) {
    if (cell(s) == Cell::Start) rho(s) = 1.0;
  }
  return rho / rho.sum();
}

std::string GridWorld::to_string() const {
  std::string out;
  for (const std::string& row : rows_) out += row + '\n';
  return out;
}

GridWorld default_gridworld() {
  return GridWorld::load(std::string(PERFRL_DATA_DIR) + "/maps/default_8x8.txt");
}

GridWorld perturb_grid(const GridWorld& base, std::uint64_t seed) {
  static constexpr char kChoices[3] = {'.', 'F', 'H'};
  Rng rng(seed);
  std::vector<std::string> rows = base.rows();
  for (std::string& row : rows) {
    for (char& c : row) {
      if (c == 'S') continue;
      if (rng.uniform() < 0.7) continue;
      c = kChoices[std::min(2, static_cast<int>(rng.uniform() * 3.0))];
    }
  }
  return GridWorld(std::move(rows), base.rewards(), base.intervention_cost(), base.discount());
}

TabularMdp grid_mdp(const GridWorld& grid) {
  return effective_mdp(grid, never_intervene_policy(grid.n_states()));
}

TabularMdp effective_mdp(const GridWorld& a1_grid, const Matrix& a2_policy) {
  const int n = a1_grid.n_states();
  if (a2_policy.rows() != n || a2_policy.cols() != kA2Actions) {
    throw std::invalid_argument("A2 policy has the wrong shape");
  }
  Environment env{Matrix::Zero(n * kGridMoves, n), Matrix::Zero(n, kGridMoves)};
  for (int s = 0; s < n; ++s) {
    for (int a1 = 0; a1 < kGridMoves; ++a1) {
      for (int a2 = 0; a2 < kA2Actions; ++a2) {
        const double p = a2_policy(s, a2);
        if (p == 0.0) continue;
        const int next = a1_grid.move(s, effective_move(a1, a2));
        env.transitions(s * kGridMoves + a1, next) += p;
        env.rewards(s, a1) += p * a1_grid.reward(next);
      }
    }
  }
  return TabularMdp{std::move(env), a1_grid.discount(), a1_grid.start_distribution()};
}

Matrix a2_optimal_q(const Policy& a1_policy, const GridWorld& a2_grid, double tol) {
  const int n = a2_grid.n_states();
  if (a1_policy.probs.rows() != n || a1_policy.probs.cols() != kGridMoves) {
    throw std::invalid_argument("A1 policy has the wrong shape");
  }
  Environment env{Matrix::Zero(n * kA2Actions, n), Matrix::Zero(n, kA2Actions)};
  for (int s = 0; s < n; ++s) {
    for (int a1 = 0; a1 < kGridMoves; ++a1) {
      const int next = a2_grid.move(s, a1);
      env.transitions(s * kA2Actions, next) += a1_policy.probs(s, a1);
      env.rewards(s, 0) += a1_policy.probs(s, a1) * a2_grid.reward(next);
    }
    for (int dir = 0; dir < kGridMoves; ++dir) {
      const int next = a2_grid.move(s, dir);
      env.transitions(s * kA2Actions + dir + 1, next) = 1.0;
      env.rewards(s, dir + 1) = a2_grid.reward(next) + a2_grid.intervention_cost();
    }
  }
  const TabularMdp induced{std::move(env), a2_grid.discount(), a2_grid.start_distribution()};
  return optimal_q_values(induced, tol);
}

Matrix a2_respond(const Matrix& q, const Matrix& previous, double w) {
  if (q.rows() != previous.rows() || q.cols() != previous.cols()) {
    throw std::invalid_argument("a2_respond: shape mismatch");
  }
  Matrix next(q.rows(), q.cols());
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    const Eigen::RowVectorXd shifted = (q.row(s).array() - q.row(s).maxCoeff()).exp().matrix();
    next.row(s) = w * shifted / shifted.sum() + (1.0 - w) * previous.row(s);
  }
  return next;
}

Matrix never_intervene_policy(int n_states) {
  Matrix policy = Matrix::Zero(n_states, kA2Actions);
  policy.col(0).setOnes();
  return policy;
}

TwoAgentResponse::TwoAgentResponse(GridWorld a1_grid, GridWorld a2_grid, double w,
                                   double q_tol, bool allow_frozen)
    : a1_grid_(std::move(a1_grid)),
      a2_grid_(std::move(a2_grid)),
      w_(w),
      q_tol_(q_tol),
      a2_policy_(never_intervene_policy(a1_grid_.n_states())) {
  const bool w_ok = allow_frozen ? (w >= 0.0 && w <= 1.0) : (w > 0.0 && w <= 1.0);
  if (!w_ok) throw std::invalid_argument("A2 responsiveness w must lie in (0, 1]");
  if (a1_grid_.height() != a2_grid_.height() || a1_grid_.width() != a2_grid_.width()) {
    throw std::invalid_argument("A1 and A2 grids differ in shape");
  }
  if (!(q_tol > 0.0)) throw std::invalid_argument("Q tolerance must be positive");
}

Environment TwoAgentResponse::step(const OccupancyMeasure& d, const Environment&) {
  const Matrix q = a2_optimal_q(policy_from_occupancy(d), a2_grid_, q_tol_);
  a2_policy_ = a2_respond(q, a2_policy_, w_);
  return current_mdp().env;
}

void TwoAgentResponse::reset() { a2_policy_ = never_intervene_policy(a1_grid_.n_states()); }

void TwoAgentResponse::set_a2_policy(Matrix policy) {
  if (policy.rows() != a1_grid_.n_states() || policy.cols() != kA2Actions) {
    throw std::invalid_argument("A2 policy has the wrong shape");
  }
  a2_policy_ = std::move(policy);
}

}  // namespace perfrl
