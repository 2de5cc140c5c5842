#include "lyapspec/thermo.hpp"

#include "lyapspec/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace lyap {

namespace {

constexpr double kMinExponent = -700.0;

// Shifted exponents <tilt, value> - max so the largest weight is exactly 1.
std::vector<double> shifted_weights(const std::vector<Vec2>& values, Tilt t, double& shift) {
  shift = -std::numeric_limits<double>::infinity();
  for (const Vec2& v : values) shift = std::max(shift, dot(t, v));
  std::vector<double> w(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    w[i] = std::exp(std::max(dot(t, values[i]) - shift, kMinExponent));
  }
  return w;
}

double xlogx_sum(double acc, double p) { return p > 0.0 ? acc - p * std::log(p) : acc; }

} // namespace

TransferOperator::TransferOperator(const ConstructionParams& params, int depth, int max_depth)
    : potential_(params, depth), graph_(depth, max_depth) {
  const std::size_t n = graph_.vertex_count();
  values_.resize(n);
  vertex_state_.resize(n);
  const int N = depth;
  const int alpha = params.alpha;

  // Lumped states: 0 -> window starts with 2; 2j-1 / 2j -> first 2 at index j
  // with / without all-ones prefix (1 <= j <= N-1); 2N-1 -> no 2.
  lumped_values_.resize(static_cast<std::size_t>(2 * N));
  const Potential& pot = potential_.potential();
  lumped_values_[0] = pot.w0();
  for (int j = 1; j < N; ++j) {
    const bool x0 = j <= alpha;
    lumped_values_[static_cast<std::size_t>(2 * j - 1)] = x0 ? pot.w0() : pot.v(j - alpha);
    lumped_values_[static_cast<std::size_t>(2 * j)] = x0 ? pot.w0() : pot.u(j - alpha);
  }
  lumped_values_[static_cast<std::size_t>(2 * N - 1)] = pot.w_inf();

  for (std::size_t v = 0; v < n; ++v) {
    const Word w = graph_.word(v);
    values_[v] = potential_.value(w);
    int state = 2 * N - 1;
    bool ones = true;
    for (int j = 0; j < N; ++j) {
      const int s = w[static_cast<std::size_t>(j)].value();
      if (s == 2) {
        state = j == 0 ? 0 : (ones ? 2 * j - 1 : 2 * j);
        break;
      }
      ones = ones && s == 1;
    }
    vertex_state_[v] = state;
  }
}

int TransferOperator::lumped_prepend(int state, int symbol) const {
  const int N = depth();
  const int none = 2 * N - 1;
  if (symbol == 2) return 0;
  if (state == none) return none;
  int j = 0;
  bool ones = true;
  if (state != 0) {
    j = (state + 1) / 2;
    ones = state % 2 == 1;
  }
  if (j + 1 >= N) return none;
  const bool next_ones = ones && symbol == 1;
  return next_ones ? 2 * (j + 1) - 1 : 2 * (j + 1);
}

EquilibriumData TransferOperator::solve_debruijn(Tilt t) const {
  const std::size_t n = graph_.vertex_count();
  double shift = 0.0;
  const std::vector<double> wt = shifted_weights(values_, t, shift);

  auto apply_right = [&](const std::vector<double>& x, std::vector<double>& y) {
    for (std::size_t v = 0; v < n; ++v) {
      y[v] = wt[v] * (x[graph_.successor(v, 0)] + x[graph_.successor(v, 1)] +
                      x[graph_.successor(v, 2)]);
    }
  };
  auto apply_left = [&](const std::vector<double>& x, std::vector<double>& y) {
    for (std::size_t v = 0; v < n; ++v) {
      double acc = 0.0;
      for (int s = 0; s < 3; ++s) {
        const std::size_t u = graph_.predecessor(v, s);
        acc += x[u] * wt[u];
      }
      y[v] = acc;
    }
  };

  // Power iteration from the all-ones vector, stopped on the Collatz-Wielandt
  // bracket min(Mx/x) <= rho <= max(Mx/x).
  auto iterate = [&](auto&& apply, std::vector<double>& x, int& iters) {
    std::vector<double> y(n);
    x.assign(n, 1.0);
    double lo = 0.0, hi = 0.0;
    for (iters = 1; iters <= options_.max_iterations; ++iters) {
      apply(x, y);
      lo = std::numeric_limits<double>::infinity();
      hi = 0.0;
      double ymax = 0.0;
      for (std::size_t v = 0; v < n; ++v) {
        const double r = y[v] / x[v];
        lo = std::min(lo, r);
        hi = std::max(hi, r);
        ymax = std::max(ymax, y[v]);
      }
      for (std::size_t v = 0; v < n; ++v) x[v] = y[v] / ymax;
      if (hi - lo <= options_.rel_tol * hi) return 0.5 * (lo + hi);
    }
    std::ostringstream msg;
    msg << "power iteration did not converge: tilt=(" << t.p << "," << t.q << ") N=" << depth()
        << " bracket=[" << lo << "," << hi << "] after " << options_.max_iterations
        << " iterations";
    throw NumericalFailure(msg.str());
  };

  EquilibriumData eq;
  eq.backend = Backend::DeBruijn;
  int it_r = 0, it_l = 0;
  const double rho = iterate(apply_right, eq.right_vec, it_r);
  iterate(apply_left, eq.left_vec, it_l);
  eq.iterations = std::max(it_r, it_l);
  eq.log_rho = std::log(rho) + shift;
  eq.rho = std::exp(eq.log_rho);

  double lr = 0.0;
  for (std::size_t v = 0; v < n; ++v) lr += eq.left_vec[v] * eq.right_vec[v];
  for (double& l : eq.left_vec) l /= lr;

  eq.vertex_measure.resize(n);
  eq.edge_measure.resize(3 * n);
  double entropy = 0.0;
  Vec2 rv;
  for (std::size_t v = 0; v < n; ++v) {
    const double pi = eq.left_vec[v] * eq.right_vec[v];
    eq.vertex_measure[v] = pi;
    rv += pi * values_[v];
    for (int s = 0; s < 3; ++s) {
      const std::size_t w = graph_.successor(v, s);
      const double prob = wt[v] * eq.right_vec[w] / (rho * eq.right_vec[v]);
      eq.edge_measure[3 * v + static_cast<std::size_t>(s)] = pi * prob;
      if (prob > 0.0) entropy -= pi * prob * std::log(prob);
    }
  }
  eq.rv = rv;
  eq.entropy = entropy;
  return eq;
}

EquilibriumData TransferOperator::solve_lumped(Tilt t) const {
  const int m = static_cast<int>(lumped_values_.size());
  double shift = 0.0;
  const std::vector<double> wt = shifted_weights(lumped_values_, t, shift);

  // Reversed-time quotient: Q(s', s) sums the weight of predecessor class s
  // over the symbols c that prepend onto class s'.
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(m, m);
  for (int s = 0; s < m; ++s) {
    for (int c = 0; c < 3; ++c) {
      const int prev = lumped_prepend(s, c);
      Q(s, prev) += wt[static_cast<std::size_t>(prev)];
    }
  }

  Eigen::EigenSolver<Eigen::MatrixXd> es(Q, false);
  double rho0 = 0.0;
  for (int i = 0; i < m; ++i) rho0 = std::max(rho0, es.eigenvalues()[i].real());
  if (!(rho0 > 0.0)) throw NumericalFailure("lumped operator has no positive Perron root");

  // Inverse iteration just above the Perron root for both eigenvectors.
  const double sigma = rho0 * (1.0 + 1e-11);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m, m);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(Q - sigma * I);
  Eigen::PartialPivLU<Eigen::MatrixXd> lut((Q - sigma * I).transpose());
  Eigen::VectorXd y = Eigen::VectorXd::Ones(m);
  Eigen::VectorXd z = Eigen::VectorXd::Ones(m);
  for (int k = 0; k < 4; ++k) {
    y = lu.solve(y);
    y /= y.cwiseAbs().maxCoeff();
    z = lut.solve(z);
    z /= z.cwiseAbs().maxCoeff();
  }
  if (y.sum() < 0) y = -y;
  if (z.sum() < 0) z = -z;
  y = y.cwiseMax(0.0);
  z = z.cwiseMax(0.0);

  // Polish by power steps on Q + c I with c near the root: the shift leaves
  // the Perron vector alone but breaks the near-periodicity that huge tilts
  // produce, where the spectrum crowds onto the circle of radius rho and the
  // eigensolver's root loses relative accuracy.
  const double c = rho0;
  auto step = [&](const Eigen::MatrixXd& M, const Eigen::VectorXd& v) -> Eigen::VectorXd { return M * v + c * v; };
  const Eigen::MatrixXd Qt = Q.transpose();
  y = y.cwiseMax(1e-300);
  z = z.cwiseMax(1e-300);
  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 5000; ++k) {
    const Eigen::VectorXd qy = step(Q, y);
    lo = std::numeric_limits<double>::infinity();
    hi = 0.0;
    for (int i = 0; i < m; ++i) {
      lo = std::min(lo, qy[i] / y[i]);
      hi = std::max(hi, qy[i] / y[i]);
    }
    y = (qy / qy.maxCoeff()).cwiseMax(1e-300);
    const Eigen::VectorXd zq = step(Qt, z);
    z = (zq / zq.maxCoeff()).cwiseMax(1e-300);
    if (hi - lo <= 0.25 * options_.rel_tol * hi) break;
  }
  const double rho = 0.5 * (lo + hi) - c;

  EquilibriumData eq;
  eq.backend = Backend::Lumped;
  eq.log_rho = std::log(rho) + shift;
  eq.rho = std::exp(eq.log_rho);
  eq.iterations = 1;
  const double norm_yz = y.dot(z);
  eq.right_vec.assign(y.data(), y.data() + m);
  eq.left_vec.resize(static_cast<std::size_t>(m));
  eq.vertex_measure.resize(static_cast<std::size_t>(m));
  Vec2 rv;
  double entropy = 0.0;
  for (int s = 0; s < m; ++s) {
    const auto us = static_cast<std::size_t>(s);
    eq.left_vec[us] = z[s] / norm_yz;
    const double pi = y[s] * z[s] / norm_yz;
    eq.vertex_measure[us] = pi;
    rv += pi * lumped_values_[us];
    if (y[s] <= 0.0) continue;
    double h = 0.0;
    for (int c = 0; c < 3; ++c) {
      const int prev = lumped_prepend(s, c);
      const double prob = wt[static_cast<std::size_t>(prev)] * y[prev] / (rho * y[s]);
      h = xlogx_sum(h, prob);
    }
    entropy += pi * h;
  }
  eq.rv = rv;
  eq.entropy = entropy;
  return eq;
}

EquilibriumData TransferOperator::equilibrium(Tilt t, Backend backend) const {
  if (!std::isfinite(t.p) || !std::isfinite(t.q)) throw InvalidArgument("tilt must be finite");
  return backend == Backend::DeBruijn ? solve_debruijn(t) : solve_lumped(t);
}

double TransferOperator::pressure(Tilt t, Backend backend) const {
  return equilibrium(t, backend).log_rho;
}

Vec2 TransferOperator::pressure_gradient(Tilt t, Backend backend) const {
  return equilibrium(t, backend).rv;
}

double pressure(double p, double q, const ConstructionParams& params, int N, Backend backend) {
  return TransferOperator(params, N).pressure({p, q}, backend);
}

EquilibriumData equilibrium(double p, double q, const ConstructionParams& params, int N,
                            Backend backend) {
  return TransferOperator(params, N).equilibrium({p, q}, backend);
}

Vec2 pressure_gradient(double p, double q, const ConstructionParams& params, int N,
                       Backend backend) {
  return TransferOperator(params, N).pressure_gradient({p, q}, backend);
}

} // namespace lyap
