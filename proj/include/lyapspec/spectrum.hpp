#pragma once

// Localized entropy spectrum H_N(w): a Legendre dual over tilts, a primal
// maximum-entropy program over Markov edge measures, rotation polygons from
// periodic orbits and the probe of the jump at w_inf.

#include "lyapspec/construction.hpp"
#include "lyapspec/thermo.hpp"

#include <limits>
#include <string>
#include <vector>

namespace lyap {

// ---------------------------------------------------------------- geometry

struct RotationPolygon {
  std::vector<Vec2> vertices; // counterclockwise, strictly convex
  int source_period = 0;      // n_max of the orbits used, 0 if not from orbits
};

/// Monotone-chain hull; points within `tol` of collinear are not vertices.
/// Starts from the lexicographically smallest point.
std::vector<Vec2> convex_hull(std::vector<Vec2> points, double tol = 1e-13);

/// Signed distance from p to the polygon: negative inside, positive outside.
/// Degenerate polygons (segments, points) give the plain distance.
double signed_distance(const std::vector<Vec2>& polygon, Vec2 p);

bool contains(const std::vector<Vec2>& polygon, Vec2 p, double tol = 0.0);

/// Hull of the depth-N value set of the truncated potential.
std::vector<Vec2> value_hull(const ConstructionParams& params, int N);

/// Rotation set of the depth-N Markov shift: the hull of all cycle means,
/// traced with a maximum-mean-cycle support oracle.
RotationPolygon depth_rotation_set(const ConstructionParams& params, int N);

/// Inner approximation of the rotation set from primitive orbits of period <= n_max.
RotationPolygon rotation_set_hull(int n_max, const ConstructionParams& params);

// ---------------------------------------------------------------- dual

enum class SpectrumStatus { InteriorAttained, BoundaryLimit, Infeasible };

std::string to_string(SpectrumStatus s);

struct SpectrumQuery {
  Vec2 w;
  int N = 8;
  double dual_radius = 200.0;
  double tol = 1e-8;

  void validate() const;
};

struct SpectrumResult {
  double value = std::numeric_limits<double>::quiet_NaN();
  Tilt dual_point;
  SpectrumStatus status = SpectrumStatus::Infeasible;
  double gap_estimate = std::numeric_limits<double>::quiet_NaN(); // dual - primal
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
};

/// Minimizes P(t) - <t, w> over the disc |t| <= dual_radius.
SpectrumResult entropy_spectrum_dual(const SpectrumQuery& query, const TransferOperator& op);
SpectrumResult entropy_spectrum_dual(const SpectrumQuery& query, const ConstructionParams& params);

// ---------------------------------------------------------------- primal

struct PrimalOptions {
  std::size_t max_edges = 20000; // cap on the program after presolve
  int max_iterations = 200;
  double residual_tol = 1e-11;
};

struct PrimalResult {
  bool feasible = false;
  double value = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> edge_measure;   // full de Bruijn edge indexing 3*v + s
  std::vector<double> vertex_measure;
  double max_residual = std::numeric_limits<double>::quiet_NaN(); // original constraints
  double mass_outside_all_s = std::numeric_limits<double>::quiet_NaN();
  std::size_t active_edges = 0; // edges kept by presolve
  int iterations = 0;
};

/// Maximum Markov entropy over stationary edge measures with rotation vector w.
/// Infeasible queries return feasible == false rather than throwing.
PrimalResult entropy_spectrum_primal(const SpectrumQuery& query, const ConstructionParams& params,
                                     const PrimalOptions& options = {});

/// Dual and primal together; fills gap_estimate.
SpectrumResult entropy_spectrum_checked(const SpectrumQuery& query,
                                        const ConstructionParams& params);

// ---------------------------------------------------------------- probe

struct ProbeEntry {
  int ell = 0;
  Vec2 w;
  double distance_to_w_inf = 0.0;
  SpectrumResult upper;
};

struct ProbeReport {
  int L = 0;
  int N = 0;
  double dual_radius = 0.0;
  Vec2 w_inf;
  double h_w_inf = 0.0; // primal
  double h_w_inf_residual = 0.0;
  std::vector<ProbeEntry> entries;
  double max_upper = 0.0;
  double gap = 0.0;
};

ProbeReport discontinuity_probe(int L, int N, const ConstructionParams& params,
                                double dual_radius = 200.0);

// ---------------------------------------------------------------- grids

struct GridSpec {
  double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;
  int nx = 16, ny = 16;
};

/// Grid over the bounding box of the depth-N value hull.
GridSpec default_grid(const ConstructionParams& params, int N, int nx, int ny);

struct GridRow {
  Vec2 w;
  SpectrumResult result;
  std::string error; // non-empty when the solver threw at this point
};

/// Row-major sweep; rows come back in grid order regardless of `threads`.
std::vector<GridRow> spectrum_grid(const ConstructionParams& params, int N, const GridSpec& grid,
                                   double dual_radius = 200.0, unsigned threads = 0);

} // namespace lyap
