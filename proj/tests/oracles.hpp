#pragma once

// Reference computations that share no code paths with the library: literal
// set membership, necklace counting, long-double closed forms, the Bernoulli
// average, an M-matrix bisection for the Perron root and finite differences.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace oracle {

// ---------------------------------------------------------------- symbols

// First index of '2' that is preceded only by S = {0,1}; -1 when absent.
inline int first_two(const std::string& w) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == '2') return static_cast<int>(i);
  }
  return -1;
}

// X(j): symbols 0..j-1 in S and symbol j equal to 2.
inline bool in_X(const std::string& w, int j) {
  if (j < 0 || j >= static_cast<int>(w.size())) return false;
  for (int i = 0; i < j; ++i) {
    if (w[i] != '0' && w[i] != '1') return false;
  }
  return w[j] == '2';
}

// Cylinder C_{n-1}(1^n): first n symbols all equal to 1.
inline bool in_ones_cylinder(const std::string& w, int n) {
  if (n > static_cast<int>(w.size())) return false;
  return std::all_of(w.begin(), w.begin() + n, [](char c) { return c == '1'; });
}

// Literal membership: returns "X0", "U<k>", "V<k>" or "Xinf". Every window
// belongs to exactly one of the sets; that is asserted by the caller via
// `memberships`.
inline std::vector<std::string> memberships(const std::string& w, int alpha) {
  std::vector<std::string> out;
  for (int j = 0; j <= alpha; ++j) {
    if (in_X(w, j)) out.push_back("X0");
  }
  for (int k = 1; k + alpha < static_cast<int>(w.size()); ++k) {
    if (in_X(w, k + alpha) && !in_ones_cylinder(w, k + alpha)) out.push_back("U" + std::to_string(k));
    if (in_X(w, k + alpha) && in_ones_cylinder(w, k + alpha)) out.push_back("V" + std::to_string(k));
  }
  if (std::none_of(w.begin(), w.end(), [](char c) { return c == '2'; })) out.push_back("Xinf");
  return out;
}

inline std::vector<std::string> all_words(int n) {
  std::vector<std::string> out{""};
  for (int i = 0; i < n; ++i) {
    std::vector<std::string> next;
    for (const auto& w : out) {
      for (char c : {'0', '1', '2'}) next.push_back(w + c);
    }
    out.swap(next);
  }
  return out;
}

inline int mobius(int n) {
  int result = 1;
  for (int p = 2; p * p <= n; ++p) {
    if (n % p) continue;
    n /= p;
    if (n % p == 0) return 0;
    result = -result;
  }
  return n > 1 ? -result : result;
}

// Number of primitive necklaces of length n over 3 letters.
inline long long necklaces(int n) {
  long long sum = 0;
  for (int d = 1; d <= n; ++d) {
    if (n % d) continue;
    long long pw = 1;
    for (int i = 0; i < n / d; ++i) pw *= 3;
    sum += mobius(d) * pw;
  }
  return sum / n;
}

// Brute force: distinct rotation classes of primitive words of length n.
inline long long necklaces_brute(int n) {
  long long count = 0;
  for (const auto& w : all_words(n)) {
    bool minimal = true, primitive = true;
    for (int s = 1; s < n; ++s) {
      const std::string r = w.substr(s) + w.substr(0, s);
      if (r < w) minimal = false;
      if (r == w) primitive = false;
    }
    count += minimal && primitive;
  }
  return count;
}

// ---------------------------------------------------------------- closed forms

struct Defaults {
  long double lambda_inf = 4.0L, delta_inf = 0.2L, delta_0 = 0.5L, theta = 0.5L, beta = 0.5L, s = 0.5L;
  int alpha = 1;

  long double a() const { return -std::log(delta_inf); }
  long double b() const { return -std::log(delta_0 * delta_inf); }
  long double h(long double x) const { return std::log(lambda_inf) + beta * std::log1p(x - a()); }
  long double x(int l) const { return a() + (b() - a()) * s * std::pow(theta, l); }
};

struct P2 {
  long double x = 0, y = 0;
};

inline P2 w0(const Defaults& d) { return {d.b(), d.h(d.a())}; }
inline P2 w_inf(const Defaults& d) { return {d.a(), d.h(d.a())}; }
inline P2 u(const Defaults& d, int l) { return {d.x(l), d.h(d.a())}; }
inline P2 v(const Defaults& d, int l) { return {d.x(l), d.h(d.x(l))}; }

// w_l as the explicit average ((alpha+1) w0 + v_1 + ... + v_l) / (l + alpha + 1).
inline P2 w(const Defaults& d, int l) {
  P2 sum{(d.alpha + 1) * w0(d).x, (d.alpha + 1) * w0(d).y};
  for (int j = 1; j <= l; ++j) {
    sum.x += v(d, j).x;
    sum.y += v(d, j).y;
  }
  const long double n = l + d.alpha + 1;
  return {sum.x / n, sum.y / n};
}

// Uniform Bernoulli average of the depth-N truncated potential, summing over
// the position of the first 2.
inline P2 bernoulli_rv(const Defaults& d, int N) {
  P2 acc;
  auto add = [&](long double p, P2 val) {
    acc.x += p * val.x;
    acc.y += p * val.y;
  };
  const long double third = 1.0L / 3.0L;
  for (int j = 0; j < N; ++j) {
    const long double s_prefix = std::pow(2.0L / 3.0L, j); // j symbols in S
    const long double ones = std::pow(third, j);           // j symbols equal to 1
    if (j <= d.alpha) {
      add(s_prefix * third, w0(d));
    } else {
      const int k = j - d.alpha;
      add(ones * third, v(d, k));
      add((s_prefix - ones) * third, u(d, k));
    }
  }
  add(std::pow(2.0L / 3.0L, N), w_inf(d));
  return acc;
}

// ---------------------------------------------------------------- linear algebra

// Perron root of a nonnegative matrix by bisection: lambda > rho exactly when
// lambda I - A is a nonsingular M-matrix, i.e. Gaussian elimination without
// pivoting meets only positive pivots.
inline long double perron_root(const std::vector<std::vector<long double>>& A) {
  const std::size_t n = A.size();
  auto above = [&](long double lam) {
    std::vector<std::vector<long double>> M(n, std::vector<long double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) M[i][j] = (i == j ? lam : 0.0L) - A[i][j];
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (!(M[k][k] > 0.0L)) return false;
      for (std::size_t i = k + 1; i < n; ++i) {
        const long double f = M[i][k] / M[k][k];
        for (std::size_t j = k; j < n; ++j) M[i][j] -= f * M[k][j];
      }
    }
    return true;
  };
  long double lo = 0.0L, hi = 0.0L;
  for (const auto& row : A) {
    long double s = 0.0L;
    for (long double x : row) s += x;
    hi = std::max(hi, s);
  }
  lo = hi;
  for (const auto& row : A) {
    long double s = 0.0L;
    for (long double x : row) s += x;
    lo = std::min(lo, s);
  }
  lo *= 0.999L;
  hi *= 1.001L;
  for (int it = 0; it < 200 && hi - lo > 1e-18L * hi; ++it) {
    const long double mid = 0.5L * (lo + hi);
    (above(mid) ? hi : lo) = mid;
  }
  return 0.5L * (lo + hi);
}

// Central difference of a scalar function of two variables.
inline std::pair<double, double> central_gradient(const std::function<double(double, double)>& f, double x,
                                                  double y, double h) {
  return {(f(x + h, y) - f(x - h, y)) / (2 * h), (f(x, y + h) - f(x, y - h)) / (2 * h)};
}

// Karp's maximum cycle mean for vertex weights c on a graph given by
// successor lists. Every vertex is a start, so no strong connectivity needed.
inline double karp_max_mean(const std::vector<std::vector<int>>& succ, const std::vector<double>& c) {
  const int n = static_cast<int>(succ.size());
  const double ninf = -std::numeric_limits<double>::infinity();
  // D[k][v]: best weight of a k-edge walk ending at v, from any start.
  std::vector<std::vector<double>> D(static_cast<std::size_t>(n + 1), std::vector<double>(static_cast<std::size_t>(n), ninf));
  std::fill(D[0].begin(), D[0].end(), 0.0);
  for (int k = 0; k < n; ++k) {
    for (int u = 0; u < n; ++u) {
      if (D[k][u] == ninf) continue;
      for (int v : succ[u]) D[k + 1][v] = std::max(D[k + 1][v], D[k][u] + c[u]);
    }
  }
  double best = ninf;
  for (int v = 0; v < n; ++v) {
    if (D[n][v] == ninf) continue;
    double worst = std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
      if (D[k][v] != ninf) worst = std::min(worst, (D[n][v] - D[k][v]) / (n - k));
    }
    best = std::max(best, worst);
  }
  return best;
}

} // namespace oracle
