#include "oracles.hpp"

#include "lyapspec/symbolic.hpp"
#include "lyapspec/thermo.hpp"

#include <doctest.h>

#include <random>

using namespace lyap;
using doctest::Approx;

namespace {

const oracle::Defaults D;
const ConstructionParams P = default_params();

// Oracle-side value of a depth-N window, from the literal class definition.
oracle::P2 window_value(const std::string& w) {
  const int j = oracle::first_two(w);
  if (j < 0) return oracle::w_inf(D);
  if (j <= D.alpha) return oracle::w0(D);
  const int k = j - D.alpha;
  return oracle::in_ones_cylinder(w, j) ? oracle::v(D, k) : oracle::u(D, k);
}

// Dense tilted transfer matrix over words of length N.
std::vector<std::vector<long double>> dense_operator(int N, double p, double q) {
  const auto words = oracle::all_words(N);
  const std::size_t n = words.size();
  std::vector<std::vector<long double>> A(n, std::vector<long double>(n, 0.0L));
  for (std::size_t i = 0; i < n; ++i) {
    const auto val = window_value(words[i]);
    const long double wt = std::exp(p * val.x + q * val.y);
    for (std::size_t j = 0; j < n; ++j) {
      if (words[i].substr(1) == words[j].substr(0, words[j].size() - 1)) A[i][j] = wt;
    }
  }
  return A;
}

std::vector<Tilt> random_tilts(int count, double radius, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-radius, radius);
  std::vector<Tilt> out;
  for (int i = 0; i < count; ++i) out.push_back({u(rng), u(rng)});
  return out;
}

} // namespace

TEST_CASE("pressure at zero tilt is log 3") {
  for (int N = 1; N <= 8; ++N) {
    CHECK(std::abs(pressure(0.0, 0.0, P, N) - std::log(3.0)) < 1e-12);
    CHECK(std::abs(pressure(0.0, 0.0, P, N, Backend::Lumped) - std::log(3.0)) < 1e-12);
  }
}

TEST_CASE("spectral radius matches the M-matrix bisection oracle") {
  for (int N = 1; N <= 3; ++N) {
    for (Tilt t : {Tilt{0.0, 0.0}, Tilt{1.0, -2.0}, Tilt{-3.0, 0.5}, Tilt{2.5, 2.5}, Tilt{-6.0, 4.0}}) {
      const long double rho = oracle::perron_root(dense_operator(N, t.p, t.q));
      CHECK(pressure(t.p, t.q, P, N) == Approx(static_cast<double>(std::log(rho))).epsilon(1e-10));
    }
  }
}

TEST_CASE("uniform Bernoulli equilibrium") {
  for (int N = 2; N <= 8; ++N) {
    const EquilibriumData e = equilibrium(0.0, 0.0, P, N);
    const auto rv = oracle::bernoulli_rv(D, N);
    CHECK(e.entropy == Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(std::abs(e.rv.x - static_cast<double>(rv.x)) < 1e-12);
    CHECK(std::abs(e.rv.y - static_cast<double>(rv.y)) < 1e-12);
    const Vec2 g = pressure_gradient(0.0, 0.0, P, N);
    CHECK(std::abs(g.x - static_cast<double>(rv.x)) < 1e-12);
    CHECK(std::abs(g.y - static_cast<double>(rv.y)) < 1e-12);
  }
}

TEST_CASE("gradient matches central differences") {
  const int N = 6;
  const TransferOperator op(P, N);
  auto f = [&](double p, double q) { return op.pressure({p, q}); };
  for (Tilt t : random_tilts(10, 5.0, 11u)) {
    const auto [gx, gy] = oracle::central_gradient(f, t.p, t.q, 1e-5);
    const Vec2 g = op.pressure_gradient(t);
    CHECK(std::abs(g.x - gx) <= 1e-5 * std::abs(gx));
    CHECK(std::abs(g.y - gy) <= 1e-5 * std::abs(gy));
  }
}

TEST_CASE("Gibbs identity, entropy bounds and eigendata normalization") {
  const int N = 6;
  const TransferOperator op(P, N);
  const DeBruijnGraph& g = op.graph();
  for (Tilt t : random_tilts(25, 20.0, 5u)) {
    const EquilibriumData e = op.equilibrium(t);
    CHECK(std::abs(e.entropy + dot(t, e.rv) - e.log_rho) < 1e-10);
    CHECK(e.entropy >= -1e-12);
    CHECK(e.entropy <= std::log(3.0) + 1e-12);

    double mass = 0.0, lr = 0.0;
    for (std::size_t v = 0; v < g.vertex_count(); ++v) {
      REQUIRE(e.right_vec[v] > 0.0);
      REQUIRE(e.left_vec[v] > 0.0);
      mass += e.vertex_measure[v];
      lr += e.left_vec[v] * e.right_vec[v];
    }
    CHECK(mass == Approx(1.0).epsilon(1e-12));
    CHECK(lr == Approx(1.0).epsilon(1e-12));

    // Flow balance: outflow of v equals inflow of v equals its marginal.
    double worst = 0.0;
    for (std::size_t v = 0; v < g.vertex_count(); ++v) {
      double out = 0.0, in = 0.0;
      for (int s = 0; s < 3; ++s) {
        out += e.edge_measure[3 * v + static_cast<std::size_t>(s)];
        const std::size_t u = g.predecessor(v, s);
        const int last = static_cast<int>(v % 3);
        in += e.edge_measure[3 * u + static_cast<std::size_t>(last)];
      }
      worst = std::max({worst, std::abs(out - e.vertex_measure[v]), std::abs(in - e.vertex_measure[v])});
    }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("pressure is convex") {
  const TransferOperator op(P, 5);
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int i = 0; i < 100; ++i) {
    const Tilt a{u(rng), u(rng)}, b{u(rng), u(rng)};
    const Tilt m{0.5 * (a.p + b.p), 0.5 * (a.q + b.q)};
    CHECK(op.pressure(m) <= 0.5 * (op.pressure(a) + op.pressure(b)) + 1e-10);
  }
}

TEST_CASE("Fenchel-Young against periodic-orbit rotation vectors") {
  const int N = 5;
  const TransferOperator op(P, N);
  const TruncatedPotential tp(P, N);
  std::vector<Vec2> rvs;
  for (const auto& orbit : enumerate_periodic(7)) {
    Vec2 sum;
    for (std::size_t i = 0; i < orbit.period(); ++i) sum += tp.value(orbit.window(i, N));
    rvs.push_back(sum / static_cast<double>(orbit.period()));
  }
  for (Tilt t : random_tilts(20, 10.0, 17u)) {
    const double P_t = op.pressure(t);
    for (Vec2 w : rvs) REQUIRE(P_t >= dot(t, w) - 1e-10);
  }
}

TEST_CASE("tilting along q raises the second coordinate") {
  const TransferOperator op(P, 6);
  double prev = -1e300;
  for (double q : {0.0, 1.0, 2.0, 4.0, 8.0}) {
    const double y = op.pressure_gradient({0.0, q}).y;
    CHECK(y > prev);
    prev = y;
  }
}

TEST_CASE("lumped backend agrees with the de Bruijn operator") {
  for (int N : {3, 5, 7}) {
    const TransferOperator op(P, N);
    CHECK(op.lumped_state_count() == static_cast<std::size_t>(2 * N));
    for (Tilt t : random_tilts(10, 50.0, 23u + static_cast<unsigned>(N))) {
      const EquilibriumData a = op.equilibrium(t, Backend::DeBruijn);
      const EquilibriumData b = op.equilibrium(t, Backend::Lumped);
      CHECK(std::abs(a.log_rho - b.log_rho) <= 1e-10 * std::max(1.0, std::abs(a.log_rho)));
      CHECK(std::abs(a.rv.x - b.rv.x) < 1e-8);
      CHECK(std::abs(a.rv.y - b.rv.y) < 1e-8);
    }
  }
}

TEST_CASE("truncation depth stability") {
  for (int N = 3; N <= 7; ++N) {
    const double err = truncation_error(P, N);
    for (Tilt t : random_tilts(10, 10.0, 41u)) {
      const double d = std::abs(pressure(t.p, t.q, P, N) - pressure(t.p, t.q, P, N + 1));
      CHECK(d <= (std::abs(t.p) + std::abs(t.q)) * err + 1e-12);
    }
  }
}

TEST_CASE("huge tilts stay finite") {
  for (Tilt t : {Tilt{-200.0, 0.0}, Tilt{0.0, 200.0}, Tilt{150.0, -150.0}}) {
    const EquilibriumData e = equilibrium(t.p, t.q, P, 6);
    CHECK(std::isfinite(e.log_rho));
    CHECK(std::isfinite(e.rv.x));
    CHECK(e.entropy >= -1e-9);
  }
}
