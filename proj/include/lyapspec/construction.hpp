#pragma once

// Free constants of the construction, the concave profile h, the vertex
// family and the piecewise-constant vector potential built from them.

#include "lyapspec/symbolic.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace lyap {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend Vec2 operator/(Vec2 a, double s) { return {a.x / s, a.y / s}; }
  friend bool operator==(Vec2, Vec2) = default;
  Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
};

inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }

struct ConstructionParams {
  double lambda_inf = 4.0;
  double delta_inf = 0.2;
  double delta_0 = 0.5;
  int alpha = 1;
  double theta = 0.5;
  double C = 0.0; // <= 0 means derive (b-a)*x_scale*(1+h_beta)
  double h_beta = 0.5;
  double x_scale = 0.5;
  int N_default = 8;
  int K_default = 2;
  double eps_0 = 1e-2;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  double a() const { return -std::log(delta_inf); }
  double b() const { return -std::log(delta_0 * delta_inf); }
  double decay_constant() const;
};

ConstructionParams default_params();

/// h(x) = log(lambda_inf) + h_beta * log(1 + (x - a)) on [a, b].
double h_eval(double x, const ConstructionParams& params);

struct VertexFamily {
  Vec2 w0;
  Vec2 w_inf;
  std::vector<double> x; // x[l-1] = x_l
  std::vector<Vec2> u;   // u[l-1] = u_l
  std::vector<Vec2> v;
  std::vector<Vec2> w;   // w[l-1] = w_l

  std::size_t size() const noexcept { return x.size(); }
};

/// Vertex family for l = 1..L. Throws ConfigError if some v_l violates the
/// decay bound |v_l - w_inf| < C theta^l.
VertexFamily make_vertices(const ConstructionParams& params, int L);

struct Rates {
  double delta = 1.0;
  double lambda = 1.0;
};

/// Surgery rates realizing x_k. Throws ConfigError when the pair violates
/// |(-log delta_k, log lambda_k)| < C theta^k for the given level.
Rates rates_from_x(double x_k, int k, const ConstructionParams& params);

/// Values of the untruncated potential on every class, for any level k.
class Potential {
public:
  explicit Potential(ConstructionParams params);

  const ConstructionParams& params() const noexcept { return params_; }
  int alpha() const noexcept { return params_.alpha; }

  double offset(int k) const; // x_k - a
  double x(int k) const { return a_ + offset(k); }
  Vec2 u(int k) const;
  Vec2 v(int k) const;
  Vec2 w0() const { return w0_; }
  Vec2 w_inf() const { return w_inf_; }
  Rates rates(int k) const;

  Vec2 value(const PrefixClass& c) const;

private:
  ConstructionParams params_;
  double a_;
  double h_a_;
  Vec2 w0_;
  Vec2 w_inf_;
};

/// Depth-N locally constant surrogate: classes whose first 2 lies at or beyond
/// index N collapse onto w_inf.
class TruncatedPotential {
public:
  TruncatedPotential(const ConstructionParams& params, int depth);

  int depth() const noexcept { return depth_; }
  int alpha() const noexcept { return potential_.alpha(); }
  const Potential& potential() const noexcept { return potential_; }
  double error_bound() const noexcept { return error_bound_; }

  Vec2 value(std::span<const Symbol> window) const;
  Vec2 value_of_class(const PrefixClass& c) const { return potential_.value(c); }
  /// All distinct values taken at this depth.
  std::vector<Vec2> value_set() const;

private:
  Potential potential_;
  int depth_;
  double error_bound_;
};

/// Truncated potential of a window; requires window.size() >= N.
Vec2 phi_eval(std::span<const Symbol> window, const ConstructionParams& params, int N);

/// Exact rotation vector of the periodic-orbit measure.
Vec2 phi_periodic_rv(const PeriodicItinerary& orbit, const Potential& potential);
Vec2 phi_periodic_rv(const PeriodicItinerary& orbit, const ConstructionParams& params);

/// Same, with classes deeper than `max_level` replaced by w_inf.
Vec2 phi_periodic_rv_truncated(const PeriodicItinerary& orbit, const Potential& potential,
                               int max_level);

/// Sup-norm distance between the potential and its depth-N truncation.
double truncation_error(const ConstructionParams& params, int N);

/// Lipschitz constant of the potential for the theta-metric, from C and theta.
double lipschitz_bound(const ConstructionParams& params);

} // namespace lyap
