#include "oracles.hpp"

#include "lyapspec/construction.hpp"
#include "lyapspec/errors.hpp"

#include <doctest.h>

using namespace lyap;
using doctest::Approx;

namespace {

const oracle::Defaults D;

void check_close(Vec2 got, oracle::P2 want, double tol) {
  CHECK(std::abs(got.x - static_cast<double>(want.x)) <= tol);
  CHECK(std::abs(got.y - static_cast<double>(want.y)) <= tol);
}

double ulp_tol(double scale) { return 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, scale); }

} // namespace

TEST_CASE("parameter validation") {
  const ConstructionParams p = default_params();
  CHECK_NOTHROW(p.validate());
  auto bad = [&](auto mutate) {
    ConstructionParams q = p;
    mutate(q);
    CHECK_THROWS_AS(q.validate(), ConfigError);
  };
  bad([](ConstructionParams& q) { q.lambda_inf = 3.0; });
  bad([](ConstructionParams& q) { q.delta_inf = 1.0 / 3.0; });
  bad([](ConstructionParams& q) { q.delta_0 = 1.0; });
  bad([](ConstructionParams& q) { q.theta = 1.0; });
  bad([](ConstructionParams& q) { q.x_scale = 0.0; });
  bad([](ConstructionParams& q) { q.h_beta = -1.0; });
  bad([](ConstructionParams& q) { q.alpha = -1; });
  bad([](ConstructionParams& q) { q.eps_0 = 0.0; });
}

TEST_CASE("profile h") {
  const ConstructionParams p = default_params();
  CHECK(h_eval(p.a(), p) == std::log(4.0));
  CHECK(h_eval(p.b(), p) == Approx(static_cast<double>(D.h(D.b()))).epsilon(1e-15));
  CHECK(h_eval(p.b(), p) == Approx(1.6495888781894129).epsilon(1e-14)); // 30-digit evaluation
  CHECK(h_eval(0.5 * (p.a() + p.b()), p) > 0.5 * (h_eval(p.a(), p) + h_eval(p.b(), p)));
  CHECK_THROWS_AS(h_eval(p.a() - 1e-9, p), DomainError);
  CHECK_THROWS_AS(h_eval(p.b() + 1e-9, p), DomainError);

  const int n = 1000;
  const double step = (p.b() - p.a()) / (n - 1);
  for (int i = 1; i + 1 < n; ++i) {
    const double x = p.a() + i * step;
    const double y0 = h_eval(x - step, p), y1 = h_eval(x, p), y2 = h_eval(x + step, p);
    REQUIRE(y1 > y0);
    REQUIRE(y2 - 2 * y1 + y0 < 0.0);
  }
}

TEST_CASE("vertex family on defaults") {
  const ConstructionParams p = default_params();
  const VertexFamily f = make_vertices(p, 12);
  check_close(f.w0, oracle::w0(D), 1e-15);
  check_close(f.w_inf, oracle::w_inf(D), 1e-15);
  CHECK(f.w0.x == Approx(2.302585).epsilon(1e-6));
  CHECK(f.w_inf.x == Approx(1.609438).epsilon(1e-6));
  CHECK(f.w_inf.y == Approx(1.386294).epsilon(1e-6));
  CHECK(f.x[0] == Approx(1.7827247075740867).epsilon(1e-14));
  CHECK(f.v[0].y == Approx(1.4661988795810521).epsilon(1e-14));
  CHECK(f.w[0].x == Approx(2.1292982978540594).epsilon(1e-14));
  CHECK(f.w[0].y == Approx(1.4129292006069445).epsilon(1e-14));

  for (int l = 1; l <= 12; ++l) {
    const auto i = static_cast<std::size_t>(l - 1);
    check_close(f.u[i], oracle::u(D, l), 1e-14);
    check_close(f.v[i], oracle::v(D, l), 1e-14);
    check_close(f.w[i], oracle::w(D, l), 1e-14);
    CHECK(f.u[i].y == f.w_inf.y);
    CHECK(f.x[i] > p.a());
    CHECK(f.x[i] < p.b());
    if (l > 1) {
      CHECK(f.x[i] < f.x[i - 1]);
      // (l + alpha + 1) w_l = (l + alpha) w_{l-1} + v_l
      const double n1 = l + p.alpha + 1, n0 = l + p.alpha;
      const Vec2 lhs = n1 * f.w[i];
      const Vec2 rhs = n0 * f.w[i - 1] + f.v[i];
      CHECK(std::abs(lhs.x - rhs.x) <= ulp_tol(lhs.x) * n1);
      CHECK(std::abs(lhs.y - rhs.y) <= ulp_tol(lhs.y) * n1);
      CHECK(norm(f.w[i] - f.w_inf) < norm(f.w[i - 1] - f.w_inf));
    }
    CHECK(norm(f.v[i] - f.w_inf) < p.decay_constant() * std::pow(p.theta, l));
  }
  // w_l carries weight (alpha+1)/(l+alpha+1) on w0, so it approaches w_inf like 1/l.
  CHECK(norm(make_vertices(p, 200).w[199] - f.w_inf) < 1e-2);
  CHECK_THROWS_AS(make_vertices(p, 0), InvalidArgument);

  ConstructionParams tight = p;
  tight.C = 0.05; // far below the decay of v_1
  CHECK_THROWS_AS(make_vertices(tight, 3), ConfigError);
}

TEST_CASE("rates") {
  const ConstructionParams p = default_params();
  const Rates r = rates_from_x(p.a() + std::log(2.0) / 4.0, 1, p);
  CHECK(r.delta == Approx(std::pow(2.0, -0.25)).epsilon(1e-14));
  CHECK(r.lambda == Approx(std::sqrt(1.0 + std::log(2.0) / 4.0)).epsilon(1e-14));
  const Rates near = rates_from_x(p.a() + 1e-12, 30, p);
  CHECK(near.delta == Approx(1.0).epsilon(1e-11));
  CHECK(near.lambda == Approx(1.0).epsilon(1e-11));
  CHECK_THROWS_AS(rates_from_x(p.a(), 1, p), DomainError);
  CHECK_THROWS_AS(rates_from_x(p.b() - 1e-3, 1, p), ConfigError);
  const Potential pot(p);
  for (int k = 1; k <= 10; ++k) {
    const Rates rk = pot.rates(k);
    CHECK(rk.delta > p.delta_0);
    CHECK(rk.delta < 1.0);
    CHECK(rk.lambda > 1.0);
  }
}

TEST_CASE("potential values") {
  const ConstructionParams p = default_params();
  const Potential pot(p);
  const VertexFamily f = make_vertices(p, 3);
  CHECK(phi_eval(parse_word("2011"), p, 4) == f.w0);
  CHECK(phi_eval(parse_word("1120"), p, 4) == f.v[0]);
  CHECK(phi_eval(parse_word("0120"), p, 4) == f.u[0]);
  CHECK(phi_eval(parse_word("0101"), p, 4) == f.w_inf);
  CHECK_THROWS_AS(phi_eval(parse_word("01"), p, 4), InvalidArgument);

  CHECK(phi_periodic_rv(PeriodicItinerary(parse_word("2")), pot) == f.w0);
  CHECK(phi_periodic_rv(PeriodicItinerary(parse_word("01")), pot) == f.w_inf);
  for (int l = 1; l <= 6; ++l) {
    Word g = repeat(Symbol(1), static_cast<std::size_t>(l + p.alpha));
    g.push_back(Symbol(2));
    const Vec2 rv = phi_periodic_rv(PeriodicItinerary(g), pot);
    const Vec2 wl = make_vertices(p, l).w.back();
    CHECK(std::abs(rv.x - wl.x) <= 10 * std::numeric_limits<double>::epsilon() * wl.x);
    CHECK(std::abs(rv.y - wl.y) <= 10 * std::numeric_limits<double>::epsilon() * wl.y);
  }
}

TEST_CASE("truncation error") {
  const ConstructionParams p = default_params();
  const double C = p.decay_constant();
  double prev = std::numeric_limits<double>::infinity();
  for (int N = 3; N <= 12; ++N) {
    const double e = truncation_error(p, N);
    CHECK(e <= C * std::pow(p.theta, N - p.alpha - 1));
    CHECK(e < prev);
    prev = e;
    // Brute force over the merged classes, using the oracle's closed forms.
    long double worst = 0;
    for (int l = N - p.alpha; l < N + 40; ++l) {
      const auto u = oracle::u(D, l), v = oracle::v(D, l), wi = oracle::w_inf(D);
      worst = std::max({worst, std::hypot(u.x - wi.x, u.y - wi.y), std::hypot(v.x - wi.x, v.y - wi.y)});
    }
    CHECK(e == Approx(static_cast<double>(worst)).epsilon(1e-12));
  }
  CHECK(truncation_error(p, 10) < 1e-2);
  CHECK_THROWS_AS(truncation_error(p, p.alpha + 1), InvalidArgument);
}

TEST_CASE("Lipschitz bound holds exhaustively") {
  const ConstructionParams p = default_params();
  const double K = lipschitz_bound(p);
  for (int N = 3; N <= 8; ++N) {
    const TruncatedPotential tp(p, N);
    const auto words = oracle::all_words(N);
    std::vector<Vec2> vals;
    std::vector<Word> ws;
    for (const auto& w : words) {
      ws.push_back(parse_word(w));
      vals.push_back(tp.value(ws.back()));
    }
    for (std::size_t i = 0; i < ws.size(); ++i) {
      for (std::size_t j = i + 1; j < ws.size(); ++j) {
        const double d = word_distance(ws[i], ws[j], p.theta);
        REQUIRE(norm(vals[i] - vals[j]) <= K * d + 1e-15);
      }
    }
  }
}
