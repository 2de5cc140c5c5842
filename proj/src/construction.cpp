#include "lyapspec/construction.hpp"

#include "lyapspec/errors.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <string>

namespace lyap {

void ConstructionParams::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid parameters: " + what); };
  if (!(lambda_inf > 3.0)) fail("lambda_inf must exceed 3");
  if (!(delta_inf > 0.0 && delta_inf < 1.0 / 3.0)) fail("delta_inf must lie in (0, 1/3)");
  if (!(delta_0 > 0.0 && delta_0 < 1.0)) fail("delta_0 must lie in (0, 1)");
  if (alpha < 0) fail("alpha must be non-negative");
  if (!(theta > 0.0 && theta < 1.0)) fail("theta must lie in (0, 1)");
  if (!(h_beta > 0.0)) fail("h_beta must be positive");
  if (!(x_scale > 0.0 && x_scale < 1.0)) fail("x_scale must lie in (0, 1)");
  if (!(C >= 0.0) || !std::isfinite(C)) fail("C must be finite (0 selects the derived constant)");
  if (!(eps_0 > 0.0)) fail("eps_0 must be positive");
  if (N_default < 1) fail("N_default must be >= 1");
  if (K_default < 0) fail("K_default must be >= 0");
  if (!(a() < b())) fail("a = -log delta_inf must be below b = -log(delta_0 delta_inf)");
  if (!(std::log(lambda_inf) > std::log(3.0))) fail("h(a) = log lambda_inf must exceed log 3");
  if (!(a() > std::log(3.0))) fail("a must exceed log 3");
}

double ConstructionParams::decay_constant() const {
  if (C > 0.0) return C;
  return (b() - a()) * x_scale * (1.0 + h_beta);
}

ConstructionParams default_params() { return ConstructionParams{}; }

double h_eval(double x, const ConstructionParams& params) {
  const double a = params.a();
  const double b = params.b();
  if (!(x >= a && x <= b)) {
    throw DomainError("h_eval: x=" + std::to_string(x) + " outside [a, b]");
  }
  return std::log(params.lambda_inf) + params.h_beta * std::log1p(x - a);
}

VertexFamily make_vertices(const ConstructionParams& params, int L) {
  params.validate();
  if (L < 1) throw InvalidArgument("make_vertices: L must be >= 1");
  const Potential pot(params);
  const double C = params.decay_constant();

  VertexFamily fam;
  fam.w0 = pot.w0();
  fam.w_inf = pot.w_inf();
  const double n0 = static_cast<double>(params.alpha + 1);
  Vec2 sum = n0 * fam.w0;
  for (int l = 1; l <= L; ++l) {
    const Vec2 vl = pot.v(l);
    const double dist = norm(vl - fam.w_inf);
    if (!(dist < C * std::pow(params.theta, l))) {
      throw ConfigError("decay bound |v_l - w_inf| < C theta^l fails at l=" + std::to_string(l));
    }
    fam.x.push_back(pot.x(l));
    fam.u.push_back(pot.u(l));
    fam.v.push_back(vl);
    sum += vl;
    fam.w.push_back(sum / static_cast<double>(l + params.alpha + 1));
  }
  return fam;
}

Rates rates_from_x(double x_k, int k, const ConstructionParams& params) {
  const double a = params.a();
  if (!(x_k > a && x_k < params.b())) throw DomainError("rates_from_x: x_k outside (a, b)");
  Rates r;
  r.delta = std::exp(-(x_k - a));
  r.lambda = std::exp(h_eval(x_k, params) - std::log(params.lambda_inf));
  const double size = std::hypot(-std::log(r.delta), std::log(r.lambda));
  if (!(size < params.decay_constant() * std::pow(params.theta, k))) {
    throw ConfigError("rate condition fails at level " + std::to_string(k));
  }
  return r;
}

Potential::Potential(ConstructionParams params) : params_(params) {
  params_.validate();
  a_ = params_.a();
  h_a_ = std::log(params_.lambda_inf);
  w0_ = {params_.b(), h_a_};
  w_inf_ = {a_, h_a_};
}

double Potential::offset(int k) const {
  return (params_.b() - a_) * params_.x_scale * std::pow(params_.theta, k);
}

Vec2 Potential::u(int k) const { return {x(k), h_a_}; }

Vec2 Potential::v(int k) const {
  const double xk = x(k);
  return {xk, h_eval(xk, params_)};
}

Rates Potential::rates(int k) const {
  const double t = offset(k);
  return {std::exp(-t), std::exp(params_.h_beta * std::log1p(t))};
}

Vec2 Potential::value(const PrefixClass& c) const {
  switch (c.tag) {
  case PrefixTag::X0Alpha: return w0_;
  case PrefixTag::U: return u(c.k);
  case PrefixTag::V: return v(c.k);
  case PrefixTag::XInfinity: return w_inf_;
  }
  return w_inf_;
}

TruncatedPotential::TruncatedPotential(const ConstructionParams& params, int depth)
    : potential_(params), depth_(depth) {
  if (depth < 1) throw InvalidArgument("truncation depth must be >= 1");
  // Windows without a 2 hide classes of level >= N - alpha; the farthest of
  // those from w_inf is v_{N-alpha}, or w0 itself when N <= alpha.
  const int first_hidden = depth - params.alpha;
  error_bound_ = first_hidden >= 1 ? norm(potential_.v(first_hidden) - potential_.w_inf())
                                   : norm(potential_.w0() - potential_.w_inf());
}

Vec2 TruncatedPotential::value(std::span<const Symbol> window) const {
  if (window.size() < static_cast<std::size_t>(depth_)) {
    throw InvalidArgument("window shorter than truncation depth");
  }
  return potential_.value(classify_prefix(window.first(static_cast<std::size_t>(depth_)), alpha()));
}

std::vector<Vec2> TruncatedPotential::value_set() const {
  std::vector<Vec2> out{potential_.w0(), potential_.w_inf()};
  for (int k = 1; k + alpha() <= depth_ - 1; ++k) {
    out.push_back(potential_.u(k));
    out.push_back(potential_.v(k));
  }
  return out;
}

Vec2 phi_eval(std::span<const Symbol> window, const ConstructionParams& params, int N) {
  return TruncatedPotential(params, N).value(window);
}

namespace {

Vec2 orbit_average(const std::vector<PrefixClass>& classes, const Potential& pot, int max_level) {
  std::map<PrefixClass, int> counts;
  for (const auto& c : classes) {
    const bool hidden = (c.tag == PrefixTag::U || c.tag == PrefixTag::V) && c.k > max_level;
    ++counts[hidden ? PrefixClass::infinity() : c];
  }
  // Fixed summation order: X0 first, then levels ascending, then Xinf. This
  // mirrors the accumulation used for the w_l vertices.
  Vec2 sum;
  for (const auto& [c, n] : counts) sum += static_cast<double>(n) * pot.value(c);
  return sum / static_cast<double>(classes.size());
}

} // namespace

Vec2 phi_periodic_rv(const PeriodicItinerary& orbit, const Potential& potential) {
  return phi_periodic_rv_truncated(orbit, potential, std::numeric_limits<int>::max());
}

Vec2 phi_periodic_rv(const PeriodicItinerary& orbit, const ConstructionParams& params) {
  return phi_periodic_rv(orbit, Potential(params));
}

Vec2 phi_periodic_rv_truncated(const PeriodicItinerary& orbit, const Potential& potential,
                               int max_level) {
  return orbit_average(classify_periodic(orbit, potential.alpha()), potential, max_level);
}

double truncation_error(const ConstructionParams& params, int N) {
  if (N <= params.alpha + 1) throw InvalidArgument("truncation_error: N must exceed alpha + 1");
  return TruncatedPotential(params, N).error_bound();
}

double lipschitz_bound(const ConstructionParams& params) {
  // Two windows agreeing on m symbols from S^m carry values within
  // C theta^(m-alpha) of w_inf; for m <= alpha the diameter of the value set
  // is at most (b - a) + C theta.
  const double C = params.decay_constant();
  const double th = params.theta;
  const double scale = std::pow(th, -params.alpha);
  return std::max(2.0 * C, (params.b() - params.a()) + C * th) * scale;
}

} // namespace lyap
