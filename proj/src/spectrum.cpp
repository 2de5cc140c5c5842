#include "lyapspec/spectrum.hpp"

#include "lyapspec/errors.hpp"
#include "lyapspec/parallel.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <sstream>

namespace lyap {

// ============================================================ geometry

std::vector<Vec2> convex_hull(std::vector<Vec2> pts, double tol) {
  std::sort(pts.begin(), pts.end(),
            [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  auto turn = [](Vec2 o, Vec2 a, Vec2 b) { return cross(a - o, b - o); };
  for (const Vec2& p : pts) {
    while (k >= 2 && turn(hull[k - 2], hull[k - 1], p) <= tol) --k;
    hull[k++] = p;
  }
  const std::size_t lower = k + 1;
  for (auto it = pts.rbegin() + 1; it != pts.rend(); ++it) {
    while (k >= lower && turn(hull[k - 2], hull[k - 1], *it) <= tol) --k;
    hull[k++] = *it;
  }
  hull.resize(k - 1);
  return hull;
}

namespace {

double segment_distance(Vec2 a, Vec2 b, Vec2 p) {
  const Vec2 d = b - a;
  const double len2 = dot(d, d);
  const double s = len2 > 0.0 ? std::clamp(dot(p - a, d) / len2, 0.0, 1.0) : 0.0;
  return norm(p - (a + s * d));
}

} // namespace

double signed_distance(const std::vector<Vec2>& poly, Vec2 p) {
  if (poly.empty()) return std::numeric_limits<double>::infinity();
  if (poly.size() == 1) return norm(p - poly[0]);
  if (poly.size() == 2) return segment_distance(poly[0], poly[1], p);
  double boundary = std::numeric_limits<double>::infinity();
  bool inside = true;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2 a = poly[i];
    const Vec2 b = poly[(i + 1) % poly.size()];
    boundary = std::min(boundary, segment_distance(a, b, p));
    if (cross(b - a, p - a) < 0.0) inside = false;
  }
  return inside ? -boundary : boundary;
}

bool contains(const std::vector<Vec2>& poly, Vec2 p, double tol) {
  return signed_distance(poly, p) <= tol;
}

std::vector<Vec2> value_hull(const ConstructionParams& params, int N) {
  return convex_hull(TruncatedPotential(params, N).value_set());
}

namespace {

// Strongly connected component id per vertex over the kept edges (iterative
// Tarjan). Vertices without kept edges get their own singleton component.
std::vector<int> scc_ids(std::size_t n, const std::vector<std::vector<std::size_t>>& adj) {
  std::vector<int> index(n, -1), low(n, 0), comp(n, -1);
  std::vector<char> on_stack(n, 0);
  std::vector<std::size_t> stack;
  int counter = 0, ncomp = 0;
  struct Frame {
    std::size_t v;
    std::size_t next;
  };
  for (std::size_t root = 0; root < n; ++root) {
    if (index[root] >= 0) continue;
    std::vector<Frame> call{{root, 0}};
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack[root] = 1;
    while (!call.empty()) {
      Frame& f = call.back();
      if (f.next < adj[f.v].size()) {
        const std::size_t w = adj[f.v][f.next++];
        if (index[w] < 0) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack[w] = 1;
          call.push_back({w, 0});
        } else if (on_stack[w]) {
          low[f.v] = std::min(low[f.v], index[w]);
        }
        continue;
      }
      const std::size_t v = f.v;
      call.pop_back();
      if (!call.empty()) low[call.back().v] = std::min(low[call.back().v], low[v]);
      if (low[v] == index[v]) {
        std::size_t x;
        do {
          x = stack.back();
          stack.pop_back();
          on_stack[x] = 0;
          comp[x] = ncomp;
        } while (x != v);
        ++ncomp;
      }
    }
  }
  return comp;
}

// Maximum mean cycle of the vertex weight n . val over a subgraph of the
// de Bruijn graph, by Howard policy iteration. Along with the value it gives
// one optimal cycle's mean vector and the edges lying on optimal cycles.
struct CycleSupport {
  double value = -std::numeric_limits<double>::infinity();
  Vec2 mean;
  std::vector<char> critical; // full edge indexing 3*v + s
};

class CycleOracle {
public:
  CycleOracle(const DeBruijnGraph& graph, const std::vector<Vec2>& val, std::vector<char> edge_ok)
      : graph_(graph), val_(val), edge_ok_(std::move(edge_ok)), live_(graph.vertex_count(), 1) {
    // Keep only vertices with an infinite forward path.
    const std::size_t nv = graph_.vertex_count();
    std::vector<int> out_degree(nv, 0);
    std::vector<std::size_t> dead;
    for (std::size_t v = 0; v < nv; ++v) {
      for (int s = 0; s < 3; ++s) out_degree[v] += edge_ok_[3 * v + static_cast<std::size_t>(s)] ? 1 : 0;
      if (out_degree[v] == 0) dead.push_back(v), live_[v] = 0;
    }
    while (!dead.empty()) {
      const std::size_t w = dead.back();
      dead.pop_back();
      for (int s = 0; s < 3; ++s) {
        const std::size_t u = graph_.predecessor(w, s);
        const std::size_t e = 3 * u + static_cast<std::size_t>(w % 3);
        if (!edge_ok_[e]) continue;
        edge_ok_[e] = 0;
        if (live_[u] && --out_degree[u] == 0) dead.push_back(u), live_[u] = 0;
      }
    }
  }

  bool empty() const { return std::none_of(live_.begin(), live_.end(), [](char c) { return c != 0; }); }

  CycleSupport support(Vec2 n) const {
    const std::size_t nv = graph_.vertex_count();
    const auto none = std::numeric_limits<std::size_t>::max();
    std::vector<double> c(nv, 0.0);
    double scale = 1.0;
    for (std::size_t v = 0; v < nv; ++v) {
      c[v] = dot(n, val_[v]);
      scale = std::max(scale, std::abs(c[v]));
    }
    const double eps_eta = 1e-13 * scale;
    const double eps_h = 1e-11 * scale;

    std::vector<std::size_t> pol(nv, none);
    for (std::size_t v = 0; v < nv; ++v) {
      if (!live_[v]) continue;
      for (int s = 0; s < 3 && pol[v] == none; ++s) {
        if (edge_ok_[3 * v + static_cast<std::size_t>(s)]) pol[v] = graph_.successor(v, s);
      }
    }
    std::vector<double> eta(nv, 0.0), h(nv, 0.0);
    std::vector<int> state(nv, 0); // 0 new, 1 on current walk, 2 done
    std::vector<std::size_t> path;

    auto evaluate = [&] {
      std::fill(state.begin(), state.end(), 0);
      for (std::size_t start = 0; start < nv; ++start) {
        if (!live_[start] || state[start] != 0) continue;
        path.clear();
        std::size_t x = start;
        while (state[x] == 0) {
          state[x] = 1;
          path.push_back(x);
          x = pol[x];
        }
        std::size_t stop = path.size();
        if (state[x] == 1) {
          // New cycle closing at x.
          const auto first = static_cast<std::size_t>(std::find(path.begin(), path.end(), x) - path.begin());
          double sum = 0.0;
          for (std::size_t i = first; i < path.size(); ++i) sum += c[path[i]];
          const double mean = sum / static_cast<double>(path.size() - first);
          eta[x] = mean;
          h[x] = 0.0;
          state[x] = 2;
          for (std::size_t i = path.size(); i-- > first + 1;) {
            const std::size_t u = path[i];
            eta[u] = mean;
            h[u] = c[u] - mean + h[pol[u]];
            state[u] = 2;
          }
          stop = first;
        }
        for (std::size_t i = stop; i-- > 0;) {
          const std::size_t u = path[i];
          eta[u] = eta[pol[u]];
          h[u] = c[u] - eta[u] + h[pol[u]];
          state[u] = 2;
        }
      }
    };

    for (int round = 0; round < 10000; ++round) {
      evaluate();
      bool changed = false;
      for (std::size_t v = 0; v < nv; ++v) {
        if (!live_[v]) continue;
        for (int s = 0; s < 3; ++s) {
          if (!edge_ok_[3 * v + static_cast<std::size_t>(s)]) continue;
          const std::size_t w = graph_.successor(v, s);
          if (eta[w] > eta[pol[v]] + eps_eta) pol[v] = w, changed = true;
        }
      }
      if (changed) continue;
      for (std::size_t v = 0; v < nv; ++v) {
        if (!live_[v]) continue;
        double best = h[v];
        for (int s = 0; s < 3; ++s) {
          if (!edge_ok_[3 * v + static_cast<std::size_t>(s)]) continue;
          const std::size_t w = graph_.successor(v, s);
          if (std::abs(eta[w] - eta[v]) > eps_eta) continue;
          const double cand = c[v] - eta[w] + h[w];
          if (cand > best + eps_h) best = cand, pol[v] = w, changed = true;
        }
      }
      if (!changed) break;
    }

    CycleSupport out;
    std::size_t top = none;
    for (std::size_t v = 0; v < nv; ++v) {
      if (live_[v] && (top == none || eta[v] > eta[top])) top = v;
    }
    if (top == none) return out;
    out.value = eta[top];

    // Walk the policy from `top` onto its cycle and average along it.
    std::size_t x = top;
    for (std::size_t i = 0; i < nv; ++i) x = pol[x];
    Vec2 sum;
    std::size_t len = 0;
    std::size_t y = x;
    do {
      sum += val_[y];
      ++len;
      y = pol[y];
    } while (y != x);
    out.mean = sum / static_cast<double>(len);

    // Tight edges between optimal vertices, kept when they close up into cycles.
    std::vector<char> tight(edge_ok_.size(), 0);
    std::vector<std::vector<std::size_t>> adj(nv);
    for (std::size_t v = 0; v < nv; ++v) {
      if (!live_[v] || eta[v] < out.value - eps_eta) continue;
      for (int s = 0; s < 3; ++s) {
        const std::size_t e = 3 * v + static_cast<std::size_t>(s);
        if (!edge_ok_[e]) continue;
        const std::size_t w = graph_.successor(v, s);
        if (eta[w] < out.value - eps_eta) continue;
        if (c[v] - out.value + h[w] - h[v] >= -1e-9 * scale) tight[e] = 1, adj[v].push_back(w);
      }
    }
    const std::vector<int> comp = scc_ids(nv, adj);
    out.critical.assign(edge_ok_.size(), 0);
    for (std::size_t e = 0; e < tight.size(); ++e) {
      if (tight[e] && comp[e / 3] == comp[graph_.successor(e / 3, static_cast<int>(e % 3))]) out.critical[e] = 1;
    }
    return out;
  }

  // Hull of all cycle means, by gift wrapping against the support oracle.
  std::vector<Vec2> hull() const {
    if (empty()) return {};
    std::vector<Vec2> pts;
    for (Vec2 n : {Vec2{1, 0}, Vec2{0, 1}, Vec2{-1, 0}, Vec2{0, -1}}) pts.push_back(support(n).mean);
    std::vector<Vec2> out;
    int budget = 4096;
    auto refine = [&](auto&& self, Vec2 a, Vec2 b) -> void {
      const Vec2 d = b - a;
      if (norm(d) < 1e-14 || --budget < 0) return;
      const Vec2 n = Vec2{d.y, -d.x} / norm(d);
      const CycleSupport s = support(n);
      if (s.value <= dot(n, a) + 1e-12) return;
      self(self, a, s.mean);
      out.push_back(s.mean);
      self(self, s.mean, b);
    };
    for (std::size_t i = 0; i < pts.size(); ++i) {
      out.push_back(pts[i]);
      refine(refine, pts[i], pts[(i + 1) % pts.size()]);
    }
    return convex_hull(out, 1e-12);
  }

private:
  const DeBruijnGraph& graph_;
  const std::vector<Vec2>& val_;
  std::vector<char> edge_ok_;
  std::vector<char> live_;
};

// Exact rotation sets are reused across dual queries on the same operator.
std::vector<Vec2> cached_rotation_set(const DeBruijnGraph& graph, const std::vector<Vec2>& val) {
  static std::mutex mutex;
  static std::vector<std::pair<std::vector<Vec2>, std::vector<Vec2>>> cache;
  {
    const std::lock_guard lock(mutex);
    for (const auto& [key, poly] : cache) {
      if (key == val) return poly;
    }
  }
  std::vector<Vec2> poly = CycleOracle(graph, val, std::vector<char>(graph.edge_count(), 1)).hull();
  const std::lock_guard lock(mutex);
  if (cache.size() >= 8) cache.erase(cache.begin());
  cache.emplace_back(val, poly);
  return poly;
}

} // namespace

RotationPolygon depth_rotation_set(const ConstructionParams& params, int N) {
  const TruncatedPotential tp(params, N);
  const DeBruijnGraph graph(N);
  std::vector<Vec2> val(graph.vertex_count());
  for (std::size_t v = 0; v < val.size(); ++v) val[v] = tp.value(graph.word(v));
  return {cached_rotation_set(graph, val), 0};
}

RotationPolygon rotation_set_hull(int n_max, const ConstructionParams& params) {
  if (n_max < 1 || n_max > 14) throw InvalidArgument("rotation_set_hull: n_max must lie in [1, 14]");
  const Potential pot(params);
  std::vector<Vec2> pts;
  for (const auto& orbit : enumerate_periodic(n_max)) pts.push_back(phi_periodic_rv(orbit, pot));
  return {convex_hull(std::move(pts)), n_max};
}

// ============================================================ dual

std::string to_string(SpectrumStatus s) {
  switch (s) {
  case SpectrumStatus::InteriorAttained: return "interior-attained";
  case SpectrumStatus::BoundaryLimit: return "boundary-limit";
  case SpectrumStatus::Infeasible: return "infeasible";
  }
  return "?";
}

void SpectrumQuery::validate() const {
  if (!(tol > 0.0)) throw InvalidArgument("spectrum query: tol must be positive");
  if (!(dual_radius > 0.0)) throw InvalidArgument("spectrum query: dual_radius must be positive");
  if (N < 1) throw InvalidArgument("spectrum query: N must be >= 1");
  if (!std::isfinite(w.x) || !std::isfinite(w.y)) throw InvalidArgument("spectrum query: w must be finite");
}

namespace {

using V2 = Eigen::Vector2d;

struct DualEval {
  double F;
  V2 grad;
};

class DualObjective {
public:
  DualObjective(const TransferOperator& op, Vec2 w) : op_(op), w_(w) {}

  DualEval operator()(const V2& t) const {
    const EquilibriumData eq = op_.equilibrium({t[0], t[1]}, Backend::Lumped);
    return {eq.log_rho - t[0] * w_.x - t[1] * w_.y, V2(eq.rv.x - w_.x, eq.rv.y - w_.y)};
  }

  // Hessian by central differences of the analytic gradient.
  Eigen::Matrix2d hessian(const V2& t) const {
    const double h = 1e-5 * std::max(1.0, t.norm() * 1e-2);
    Eigen::Matrix2d H;
    for (int j = 0; j < 2; ++j) {
      V2 e = V2::Zero();
      e[j] = h;
      H.col(j) = ((*this)(t + e).grad - (*this)(t - e).grad) / (2.0 * h);
    }
    return 0.5 * (H + H.transpose());
  }

private:
  const TransferOperator& op_;
  Vec2 w_;
};

V2 project_disc(const V2& t, double R) {
  const double n = t.norm();
  return n > R ? V2(t * (R / n)) : t;
}

} // namespace

SpectrumResult entropy_spectrum_dual(const SpectrumQuery& query, const TransferOperator& op) {
  query.validate();
  if (query.N != op.depth()) throw InvalidArgument("spectrum query depth differs from operator depth");
  SpectrumResult res;
  const double hull_distance = signed_distance(cached_rotation_set(op.graph(), op.vertex_values()), query.w);
  if (hull_distance > query.tol) {
    res.status = SpectrumStatus::Infeasible;
    return res;
  }
  // On the boundary of the rotation set the infimum runs off to infinite tilt;
  // the gradient decays exponentially there, so a small gradient proves nothing.
  const bool on_hull_boundary = hull_distance > -query.tol;
  const SpectrumStatus stationary =
      on_hull_boundary ? SpectrumStatus::BoundaryLimit : SpectrumStatus::InteriorAttained;

  const double R = query.dual_radius;
  const DualObjective obj(op, query.w);
  V2 t = V2::Zero();
  DualEval cur = obj(t);

  auto finish = [&](SpectrumStatus status) {
    res.dual_point = {t[0], t[1]};
    res.grad_norm = cur.grad.norm();
    res.status = status;
    // Feasibility is settled by the rotation set above; a slightly negative F
    // at huge tilts is rounding in the pressure.
    res.value = std::max(cur.F, 0.0);
    return res;
  };

  // Best point on the circle |t| = R, golden section after a coarse scan.
  auto circle_search = [&]() {
    auto at = [&](double phi) { return V2(R * std::cos(phi), R * std::sin(phi)); };
    constexpr int kScan = 72;
    const double step = 2.0 * std::numbers::pi / kScan;
    double best_phi = std::atan2(t[1], t[0]);
    double best = cur.F;
    for (int i = 0; i < kScan; ++i) {
      const double phi = best_phi + i * step;
      const double f = obj(at(phi)).F;
      if (f < best) best = f, best_phi = phi;
    }
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = best_phi - step, hi = best_phi + step;
    double m1 = hi - g * (hi - lo), m2 = lo + g * (hi - lo);
    double f1 = obj(at(m1)).F, f2 = obj(at(m2)).F;
    while (hi - lo > 1e-11) {
      if (f1 < f2) {
        hi = m2, m2 = m1, f2 = f1;
        m1 = hi - g * (hi - lo);
        f1 = obj(at(m1)).F;
      } else {
        lo = m1, m1 = m2, f1 = f2;
        m2 = lo + g * (hi - lo);
        f2 = obj(at(m2)).F;
      }
    }
    const V2 cand = at(0.5 * (lo + hi));
    const DualEval ev = obj(cand);
    if (ev.F < cur.F) t = cand, cur = ev;
  };

  constexpr int kMaxIterations = 500;
  for (res.iterations = 1; res.iterations <= kMaxIterations; ++res.iterations) {
    const bool on_boundary = t.norm() >= R * (1.0 - 1e-12);
    if (!on_boundary && !on_hull_boundary && cur.grad.norm() < query.tol) {
      return finish(SpectrumStatus::InteriorAttained);
    }
    if (on_boundary && cur.grad.dot(t) < 0.0) {
      circle_search();
      if (cur.grad.dot(t) < 0.0 || obj(t).grad.dot(t) < 0.0) {
        cur = obj(t);
        return finish(SpectrumStatus::BoundaryLimit);
      }
    }

    const Eigen::Matrix2d H = obj.hessian(t);
    V2 newton = V2::Zero();
    if (H.determinant() > 0.0 && H.trace() > 0.0) newton = -H.ldlt().solve(cur.grad);
    const bool use_newton = newton.allFinite() && newton.dot(cur.grad) < 0.0;

    bool moved = false;
    for (int attempt = use_newton ? 0 : 1; attempt < 2 && !moved; ++attempt) {
      const V2 d = attempt == 0 ? newton : V2(-cur.grad);
      double s = 1.0;
      for (int halving = 0; halving < 60; ++halving, s *= 0.5) {
        const V2 cand = project_disc(t + s * d, R);
        const DualEval ev = obj(cand);
        if (ev.F <= cur.F + 1e-4 * cur.grad.dot(cand - t) && ev.F < cur.F) {
          t = cand;
          cur = ev;
          moved = true;
          break;
        }
      }
    }
    if (!moved) {
      // No representable descent left: accept only if already stationary.
      if (cur.grad.norm() < 100.0 * query.tol) return finish(stationary);
      // Any F is an upper bound; off to infinity the decrease drowns in rounding.
      if (on_hull_boundary || t.norm() >= R * (1.0 - 1e-9)) return finish(SpectrumStatus::BoundaryLimit);
      std::ostringstream msg;
      msg << "dual solver stalled at w=(" << query.w.x << "," << query.w.y << ") tilt=(" << t[0]
          << "," << t[1] << ") |grad|=" << cur.grad.norm();
      throw NumericalFailure(msg.str());
    }
  }
  if (on_hull_boundary) return finish(SpectrumStatus::BoundaryLimit);
  std::ostringstream msg;
  msg << "dual solver did not converge at w=(" << query.w.x << "," << query.w.y
      << ") |grad|=" << cur.grad.norm();
  throw NumericalFailure(msg.str());
}

SpectrumResult entropy_spectrum_dual(const SpectrumQuery& query, const ConstructionParams& params) {
  return entropy_spectrum_dual(query, TransferOperator(params, query.N));
}

// ============================================================ primal

namespace {

struct FaceSolution {
  bool feasible = false; // constraints consistent on the face
  bool converged = false;
  std::vector<double> edge_measure; // full indexing 3*v + s
  std::size_t active_edges = 0;
  int iterations = 0;
  std::string detail;
};

// Newton on the KKT system of the max-entropy program, restricted to the
// edges in edge_ok and to strongly connected pieces of them.
FaceSolution solve_face(const DeBruijnGraph& graph, const std::vector<Vec2>& val, const std::vector<char>& edge_ok,
                        const SpectrumQuery& query, const PrimalOptions& options) {
  FaceSolution sol;
  const std::size_t nv = graph.vertex_count();
  std::vector<std::vector<std::size_t>> adj(nv);
  for (std::size_t v = 0; v < nv; ++v) {
    for (int s = 0; s < 3; ++s) {
      if (edge_ok[3 * v + static_cast<std::size_t>(s)]) adj[v].push_back(graph.successor(v, s));
    }
  }
  const std::vector<int> comp = scc_ids(nv, adj);

  // Kept edges: both ends allowed and inside one strongly connected component.
  std::vector<std::size_t> edge_id; // kept index -> full edge index 3v+s
  std::vector<std::size_t> edge_src, edge_dst;
  for (std::size_t v = 0; v < nv; ++v) {
    for (int s = 0; s < 3; ++s) {
      const std::size_t w = graph.successor(v, s);
      if (edge_ok[3 * v + static_cast<std::size_t>(s)] && comp[w] == comp[v]) {
        edge_id.push_back(3 * v + static_cast<std::size_t>(s));
        edge_src.push_back(v);
        edge_dst.push_back(w);
      }
    }
  }
  const std::size_t E = edge_id.size();
  sol.active_edges = E;
  if (E == 0) return sol;
  if (E > options.max_edges) {
    throw ResourceLimit("primal program has " + std::to_string(E) + " edges after presolve, cap " +
                        std::to_string(options.max_edges));
  }

  // Active vertices, balance rows minus one per component.
  std::vector<long> vrow(nv, -1);
  std::vector<char> comp_seen(nv, 0);
  std::vector<std::vector<std::size_t>> out_edges(nv);
  long nbal = 0;
  for (std::size_t e = 0; e < E; ++e) out_edges[edge_src[e]].push_back(e);
  for (std::size_t v = 0; v < nv; ++v) {
    if (out_edges[v].empty()) continue;
    const auto c = static_cast<std::size_t>(comp[v]);
    if (!comp_seen[c]) {
      comp_seen[c] = 1; // this vertex's balance row is the redundant one
      continue;
    }
    vrow[v] = nbal++;
  }

  // Mass and rotation rows, reduced to their numerical rank.
  Eigen::MatrixXd Rt(static_cast<Eigen::Index>(E), 3);
  for (std::size_t e = 0; e < E; ++e) {
    const Vec2 phi = val[edge_src[e]];
    Rt.row(static_cast<Eigen::Index>(e)) << 1.0, phi.x, phi.y;
  }
  const Eigen::Vector3d rhs(1.0, query.w.x, query.w.y);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Rt, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::Vector3d sv = svd.singularValues();
  const Eigen::Vector3d vr = svd.matrixV().transpose() * rhs;
  std::vector<Eigen::VectorXd> red_rows;
  std::vector<double> red_rhs;
  for (int i = 0; i < 3; ++i) {
    if (sv[i] > 1e-10 * sv[0]) {
      red_rows.push_back(svd.matrixU().col(i));
      red_rhs.push_back(vr[i] / sv[i]);
    } else if (std::abs(vr[i]) > 1e-9 * rhs.norm()) {
      return sol; // inconsistent on this face
    }
  }
  const long nred = static_cast<long>(red_rows.size());
  const long m = nbal + nred;
  const long dim = static_cast<long>(E) + m;

  auto constraint_residual = [&](const Eigen::VectorXd& mu, Eigen::VectorXd& r) {
    r.setZero(m);
    for (std::size_t e = 0; e < E; ++e) {
      if (vrow[edge_src[e]] >= 0) r[vrow[edge_src[e]]] += mu[static_cast<Eigen::Index>(e)];
      if (vrow[edge_dst[e]] >= 0) r[vrow[edge_dst[e]]] -= mu[static_cast<Eigen::Index>(e)];
    }
    for (long i = 0; i < nred; ++i) r[nbal + i] = red_rows[static_cast<std::size_t>(i)].dot(mu) - red_rhs[static_cast<std::size_t>(i)];
  };
  auto apply_At = [&](const Eigen::VectorXd& nu, Eigen::VectorXd& g) {
    for (std::size_t e = 0; e < E; ++e) {
      double acc = 0.0;
      if (vrow[edge_src[e]] >= 0) acc += nu[vrow[edge_src[e]]];
      if (vrow[edge_dst[e]] >= 0) acc -= nu[vrow[edge_dst[e]]];
      for (long i = 0; i < nred; ++i) acc += nu[nbal + i] * red_rows[static_cast<std::size_t>(i)][static_cast<Eigen::Index>(e)];
      g[static_cast<Eigen::Index>(e)] += acc;
    }
  };
  auto source_mass = [&](const Eigen::VectorXd& mu) {
    std::vector<double> pi(nv, 0.0);
    for (std::size_t e = 0; e < E; ++e) pi[edge_src[e]] += mu[static_cast<Eigen::Index>(e)];
    return pi;
  };
  // Residual of the KKT conditions for minimizing sum mu log(mu / pi).
  auto kkt_residual = [&](const Eigen::VectorXd& mu, const Eigen::VectorXd& nu, Eigen::VectorXd& rd,
                          Eigen::VectorXd& rp) {
    const std::vector<double> pi = source_mass(mu);
    rd.resize(static_cast<Eigen::Index>(E));
    for (std::size_t e = 0; e < E; ++e) {
      rd[static_cast<Eigen::Index>(e)] = std::log(mu[static_cast<Eigen::Index>(e)] / pi[edge_src[e]]);
    }
    apply_At(nu, rd);
    constraint_residual(mu, rp);
  };

  // Constant part of the KKT matrix (constraint blocks).
  std::vector<Eigen::Triplet<double>> a_trip;
  for (std::size_t e = 0; e < E; ++e) {
    const auto col = static_cast<long>(e);
    if (vrow[edge_src[e]] >= 0) a_trip.emplace_back(static_cast<long>(E) + vrow[edge_src[e]], col, 1.0);
    if (vrow[edge_dst[e]] >= 0) a_trip.emplace_back(static_cast<long>(E) + vrow[edge_dst[e]], col, -1.0);
    for (long i = 0; i < nred; ++i) {
      const double a = red_rows[static_cast<std::size_t>(i)][col];
      if (a != 0.0) a_trip.emplace_back(static_cast<long>(E) + nbal + i, col, a);
    }
  }

  Eigen::VectorXd mu = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(E), 1.0 / static_cast<double>(E));
  Eigen::VectorXd nu = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd rd, rp;
  kkt_residual(mu, nu, rd, rp);
  auto merit = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return std::sqrt(a.squaredNorm() + b.squaredNorm());
  };

  bool converged = false;
  for (sol.iterations = 0; sol.iterations < options.max_iterations; ++sol.iterations) {
    if (rp.lpNorm<Eigen::Infinity>() < options.residual_tol &&
        rd.lpNorm<Eigen::Infinity>() < options.residual_tol * 10.0) {
      converged = true;
      break;
    }
    const std::vector<double> pi = source_mass(mu);
    // Near a degenerate optimum many masses vanish and the KKT matrix loses
    // rank; retry with a growing proximal term before giving up.
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    bool factored = false;
    for (double reg : {1e-10, 1e-8, 1e-6, 1e-4}) {
      std::vector<Eigen::Triplet<double>> trip;
      trip.reserve(a_trip.size() * 2 + E * 3 + static_cast<std::size_t>(m));
      for (std::size_t v = 0; v < nv; ++v) {
        for (std::size_t e : out_edges[v]) {
          for (std::size_t f : out_edges[v]) {
            double h = -1.0 / pi[v];
            if (e == f) h += (1.0 + reg) / mu[static_cast<Eigen::Index>(e)];
            trip.emplace_back(static_cast<long>(e), static_cast<long>(f), h);
          }
        }
      }
      for (const auto& t : a_trip) {
        trip.push_back(t);
        trip.emplace_back(t.col(), t.row(), t.value());
      }
      if (reg > 1e-10) {
        for (long i = 0; i < m; ++i) trip.emplace_back(static_cast<long>(E) + i, static_cast<long>(E) + i, -reg);
      }
      Eigen::SparseMatrix<double> K(dim, dim);
      K.setFromTriplets(trip.begin(), trip.end());
      K.makeCompressed();
      lu.compute(K);
      if (lu.info() == Eigen::Success) {
        factored = true;
        break;
      }
    }
    if (!factored) {
      sol.detail = "KKT factorization failed";
      break;
    }
    Eigen::VectorXd rhs_k(dim);
    rhs_k << -rd, -rp;
    const Eigen::VectorXd step = lu.solve(rhs_k);
    if (!step.allFinite()) throw NumericalFailure("primal KKT solve produced non-finite step");
    const Eigen::VectorXd dmu = step.head(static_cast<Eigen::Index>(E));
    const Eigen::VectorXd dnu = step.tail(m);

    double smax = 1.0;
    for (Eigen::Index e = 0; e < dmu.size(); ++e) {
      if (dmu[e] < 0.0) smax = std::min(smax, -0.99 * mu[e] / dmu[e]);
    }
    const double m0 = merit(rd, rp);
    double s = smax;
    bool accepted = false;
    Eigen::VectorXd rd2, rp2;
    for (int k = 0; k < 60; ++k, s *= 0.5) {
      const Eigen::VectorXd mu2 = mu + s * dmu;
      const Eigen::VectorXd nu2 = nu + s * dnu;
      kkt_residual(mu2, nu2, rd2, rp2);
      if (merit(rd2, rp2) <= (1.0 - 1e-4 * s) * m0) {
        mu = mu2;
        nu = nu2;
        rd = rd2;
        rp = rp2;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  sol.edge_measure.assign(edge_ok.size(), 0.0);
  for (std::size_t e = 0; e < E; ++e) sol.edge_measure[edge_id[e]] = mu[static_cast<Eigen::Index>(e)];
  sol.feasible = true;
  sol.converged = converged || (rp.lpNorm<Eigen::Infinity>() < options.residual_tol &&
                                rd.lpNorm<Eigen::Infinity>() < 1e-7);
  if (!sol.converged && sol.detail.empty()) {
    std::ostringstream msg;
    msg << "primal residual " << rp.lpNorm<Eigen::Infinity>() << ", dual residual "
        << rd.lpNorm<Eigen::Infinity>();
    sol.detail = msg.str();
  }
  return sol;
}

} // namespace

PrimalResult entropy_spectrum_primal(const SpectrumQuery& query, const ConstructionParams& params,
                                     const PrimalOptions& options) {
  query.validate();
  PrimalResult out;
  const TruncatedPotential tp(params, query.N);
  const DeBruijnGraph graph(query.N);
  const std::size_t nv = graph.vertex_count();
  std::vector<Vec2> val(nv);
  for (std::size_t v = 0; v < nv; ++v) val[v] = tp.value(graph.word(v));

  // Facial reduction: while w lies on the boundary of the rotation set of the
  // current subgraph, every measure with rotation vector w lives on cycles
  // that are optimal for the supporting direction, so restrict to those.
  std::vector<char> edge_ok(3 * nv, 1);
  for (int round = 0;; ++round) {
    const CycleOracle oracle(graph, val, edge_ok);
    const std::vector<Vec2> hull = oracle.hull();
    if (hull.empty() || signed_distance(hull, query.w) > query.tol) return out;
    std::vector<Vec2> normals;
    if (hull.size() == 1) {
      normals = {Vec2{1, 0}, Vec2{0, 1}};
    } else if (hull.size() == 2) {
      const Vec2 d = (hull[1] - hull[0]) / norm(hull[1] - hull[0]);
      normals = {Vec2{d.y, -d.x}, d, -1.0 * d};
    } else {
      for (std::size_t i = 0; i < hull.size(); ++i) {
        const Vec2 d = hull[(i + 1) % hull.size()] - hull[i];
        normals.push_back(Vec2{d.y, -d.x} / norm(d));
      }
    }
    bool shrunk = false;
    for (Vec2 n : normals) {
      const CycleSupport sup = oracle.support(n);
      if (dot(n, query.w) < sup.value - 1e-10) continue;
      for (std::size_t e = 0; e < edge_ok.size(); ++e) {
        if (edge_ok[e] && !sup.critical[e]) edge_ok[e] = 0, shrunk = true;
      }
      if (shrunk) break;
    }
    if (!shrunk || round > 64) break;
  }

  // Masses the optimum sends to zero stall Newton; drop the vanishing edges
  // and solve again on the smaller face.
  FaceSolution sol;
  for (int pass = 0;; ++pass) {
    sol = solve_face(graph, val, edge_ok, query, options);
    out.iterations += sol.iterations;
    if (pass == 0) out.active_edges = sol.active_edges;
    if (!sol.feasible) return out;
    if (sol.converged) break;
    const double top = *std::max_element(sol.edge_measure.begin(), sol.edge_measure.end());
    std::size_t dropped = 0;
    for (std::size_t e = 0; e < edge_ok.size(); ++e) {
      if (edge_ok[e] && sol.edge_measure[e] < 1e-12 * top) edge_ok[e] = 0, ++dropped;
    }
    if (dropped == 0 || pass >= 8) {
      std::ostringstream msg;
      msg << "primal solver stalled at w=(" << query.w.x << "," << query.w.y << "): " << sol.detail;
      throw NumericalFailure(msg.str());
    }
  }

  // Expand to the full graph and check the original constraints.
  out.edge_measure = sol.edge_measure;
  out.vertex_measure.assign(nv, 0.0);
  std::vector<double> pi(nv, 0.0);
  for (std::size_t e = 0; e < out.edge_measure.size(); ++e) pi[e / 3] += out.edge_measure[e];
  double entropy = 0.0;
  for (std::size_t e = 0; e < out.edge_measure.size(); ++e) {
    const double me = out.edge_measure[e];
    if (me > 0.0) entropy -= me * std::log(me / pi[e / 3]);
  }
  std::vector<double> inflow(nv, 0.0);
  double mass = 0.0;
  Vec2 rv;
  for (std::size_t v = 0; v < nv; ++v) {
    double o = 0.0;
    for (int s = 0; s < 3; ++s) {
      const double me = out.edge_measure[3 * v + static_cast<std::size_t>(s)];
      o += me;
      inflow[graph.successor(v, s)] += me;
    }
    out.vertex_measure[v] = o;
    mass += o;
    rv += o * val[v];
  }
  double resid = std::abs(mass - 1.0);
  resid = std::max(resid, std::max(std::abs(rv.x - query.w.x), std::abs(rv.y - query.w.y)));
  out.mass_outside_all_s = 0.0;
  for (std::size_t v = 0; v < nv; ++v) {
    resid = std::max(resid, std::abs(out.vertex_measure[v] - inflow[v]));
    const Word word = graph.word(v);
    if (std::any_of(word.begin(), word.end(), [](Symbol s) { return s.value() == 2; })) {
      out.mass_outside_all_s += out.vertex_measure[v];
    }
  }
  out.max_residual = resid;
  out.value = entropy;
  out.feasible = true;
  return out;
}

SpectrumResult entropy_spectrum_checked(const SpectrumQuery& query, const ConstructionParams& params) {
  SpectrumResult dual = entropy_spectrum_dual(query, params);
  const PrimalResult primal = entropy_spectrum_primal(query, params);
  if (primal.feasible && dual.status != SpectrumStatus::Infeasible) {
    dual.gap_estimate = dual.value - primal.value;
  }
  return dual;
}

// ============================================================ probe

ProbeReport discontinuity_probe(int L, int N, const ConstructionParams& params, double dual_radius) {
  if (L < 1) throw InvalidArgument("discontinuity_probe: L must be >= 1");
  if (L + params.alpha + 1 > N) {
    throw InvalidArgument("discontinuity_probe: w_L needs depth L + alpha + 1 <= N");
  }
  const VertexFamily fam = make_vertices(params, L);
  const TransferOperator op(params, N);
  ProbeReport rep;
  rep.L = L;
  rep.N = N;
  rep.dual_radius = dual_radius;
  rep.w_inf = fam.w_inf;

  SpectrumQuery q;
  q.N = N;
  q.dual_radius = dual_radius;
  q.w = fam.w_inf;
  const PrimalResult at_inf = entropy_spectrum_primal(q, params);
  if (!at_inf.feasible) throw NumericalFailure("primal program infeasible at w_inf");
  rep.h_w_inf = at_inf.value;
  rep.h_w_inf_residual = at_inf.max_residual;

  rep.max_upper = 0.0;
  for (int l = 1; l <= L; ++l) {
    ProbeEntry e;
    e.ell = l;
    e.w = fam.w[static_cast<std::size_t>(l - 1)];
    e.distance_to_w_inf = norm(e.w - fam.w_inf);
    q.w = e.w;
    e.upper = entropy_spectrum_dual(q, op);
    if (e.upper.status == SpectrumStatus::Infeasible) {
      throw NumericalFailure("dual reports w_" + std::to_string(l) + " infeasible");
    }
    rep.max_upper = std::max(rep.max_upper, e.upper.value);
    rep.entries.push_back(e);
  }
  rep.gap = rep.h_w_inf - rep.max_upper;
  return rep;
}

// ============================================================ grids

GridSpec default_grid(const ConstructionParams& params, int N, int nx, int ny) {
  if (nx < 1 || ny < 1 || nx > 512 || ny > 512) throw InvalidArgument("grid resolution must lie in [1, 512]");
  const auto hull = value_hull(params, N);
  GridSpec g;
  g.x_min = g.y_min = std::numeric_limits<double>::infinity();
  g.x_max = g.y_max = -std::numeric_limits<double>::infinity();
  for (const Vec2& p : hull) {
    g.x_min = std::min(g.x_min, p.x);
    g.x_max = std::max(g.x_max, p.x);
    g.y_min = std::min(g.y_min, p.y);
    g.y_max = std::max(g.y_max, p.y);
  }
  g.nx = nx;
  g.ny = ny;
  return g;
}

namespace {

double grid_coord(double lo, double hi, int i, int n) {
  if (n == 1) return 0.5 * (lo + hi);
  return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
}

} // namespace

std::vector<GridRow> spectrum_grid(const ConstructionParams& params, int N, const GridSpec& grid,
                                   double dual_radius, unsigned threads) {
  if (grid.nx < 1 || grid.ny < 1 || grid.nx > 512 || grid.ny > 512) {
    throw InvalidArgument("grid resolution must lie in [1, 512]");
  }
  const TransferOperator op(params, N);
  const std::size_t count = static_cast<std::size_t>(grid.nx) * static_cast<std::size_t>(grid.ny);
  std::vector<GridRow> rows(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int ix = static_cast<int>(i % static_cast<std::size_t>(grid.nx));
    const int iy = static_cast<int>(i / static_cast<std::size_t>(grid.nx));
    rows[i].w = {grid_coord(grid.x_min, grid.x_max, ix, grid.nx),
                 grid_coord(grid.y_min, grid.y_max, iy, grid.ny)};
  }

  parallel_for(count, threads, [&](std::size_t i) {
    SpectrumQuery q;
    q.w = rows[i].w;
    q.N = N;
    q.dual_radius = dual_radius;
    try {
      rows[i].result = entropy_spectrum_dual(q, op);
    } catch (const NumericalFailure& e) {
      rows[i].error = e.what();
    }
  });
  return rows;
}

} // namespace lyap
