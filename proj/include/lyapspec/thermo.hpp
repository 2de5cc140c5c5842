#pragma once

// Tilted transfer operators for the truncated potential: pressure, Perron
// eigendata and the Gibbs-Markov equilibrium measures.

#include "lyapspec/construction.hpp"
#include "lyapspec/symbolic.hpp"

#include <vector>

namespace lyap {

struct Tilt {
  double p = 0.0;
  double q = 0.0;
};

inline double dot(Tilt t, Vec2 w) { return t.p * w.x + t.q * w.y; }

enum class Backend {
  DeBruijn, // power iteration on the 3^N-state de Bruijn operator
  Lumped,   // equitable quotient on (first-2 index, all-ones flag) states
};

struct PowerIterationOptions {
  double rel_tol = 1e-13;      // Collatz-Wielandt bracket width, relative
  int max_iterations = 200000;
};

struct EquilibriumData {
  Backend backend = Backend::DeBruijn;
  double log_rho = 0.0;
  double rho = 0.0;              // exp(log_rho), may overflow for huge tilts
  std::vector<double> right_vec; // per vertex (or per lumped state)
  std::vector<double> left_vec;  // normalized so left . right = 1
  std::vector<double> vertex_measure; // stationary marginal, sums to 1
  std::vector<double> edge_measure;   // de Bruijn only: index 3*v + s
  Vec2 rv;
  double entropy = 0.0; // Markov entropy, computed from transition probabilities
  int iterations = 0;
};

/// Tilted operator on the depth-N de Bruijn graph. Weights attach to the
/// source vertex: M[v][v'] = exp(p phi1(v) + q phi2(v)) for each edge v -> v'.
class TransferOperator {
public:
  TransferOperator(const ConstructionParams& params, int depth,
                   int max_depth = DeBruijnGraph::kDefaultMaxDepth);

  const TruncatedPotential& potential() const noexcept { return potential_; }
  const DeBruijnGraph& graph() const noexcept { return graph_; }
  int depth() const noexcept { return graph_.depth(); }
  const std::vector<Vec2>& vertex_values() const noexcept { return values_; }

  double pressure(Tilt t, Backend backend = Backend::DeBruijn) const;
  EquilibriumData equilibrium(Tilt t, Backend backend = Backend::DeBruijn) const;
  Vec2 pressure_gradient(Tilt t, Backend backend = Backend::DeBruijn) const;

  PowerIterationOptions& options() noexcept { return options_; }

  // Lumped automaton, exposed for the equivalence tests.
  std::size_t lumped_state_count() const noexcept { return lumped_values_.size(); }
  /// Lumped state of each de Bruijn vertex.
  const std::vector<int>& lumped_state_of_vertex() const noexcept { return vertex_state_; }

private:
  EquilibriumData solve_debruijn(Tilt t) const;
  EquilibriumData solve_lumped(Tilt t) const;
  int lumped_prepend(int state, int symbol) const;

  TruncatedPotential potential_;
  DeBruijnGraph graph_;
  std::vector<Vec2> values_;
  std::vector<Vec2> lumped_values_;
  std::vector<int> vertex_state_;
  PowerIterationOptions options_;
};

double pressure(double p, double q, const ConstructionParams& params, int N,
                Backend backend = Backend::DeBruijn);
EquilibriumData equilibrium(double p, double q, const ConstructionParams& params, int N,
                            Backend backend = Backend::DeBruijn);
Vec2 pressure_gradient(double p, double q, const ConstructionParams& params, int N,
                       Backend backend = Backend::DeBruijn);

} // namespace lyap
