#include "lyapspec/horseshoe.hpp"

#include "lyapspec/errors.hpp"
#include "lyapspec/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace lyap {

// ============================================================ small geometry

Interval Interval::hull(Interval a, Interval b) {
  return {std::min(a.lo, b.lo), std::max(a.hi, b.hi)};
}

double rect_gap(const Rect& a, const Rect& b) {
  const double gx = std::max({0.0, b.x.lo - a.x.hi, a.x.lo - b.x.hi});
  const double gy = std::max({0.0, b.y.lo - a.y.hi, a.y.lo - b.y.hi});
  return std::max(gx, gy);
}

double inner_clearance(const Rect& r, Vec2 p) {
  return std::min({p.x - r.x.lo, r.x.hi - p.x, p.y - r.y.lo, r.y.hi - p.y});
}

namespace {

double outside_distance(const Rect& r, Vec2 p) {
  const double dx = std::max({0.0, r.x.lo - p.x, p.x - r.x.hi});
  const double dy = std::max({0.0, r.y.lo - p.y, p.y - r.y.hi});
  return std::max(dx, dy);
}

Interval affine_image(Interval v, double slope, double offset) {
  const double a = slope * v.lo + offset;
  const double b = slope * v.hi + offset;
  return {std::min(a, b), std::max(a, b)};
}

// Every word of the given length over {0,1,2}, lexicographic.
std::vector<std::string> words_of_length(int n) {
  std::vector<std::string> out{""};
  for (int i = 0; i < n; ++i) {
    std::vector<std::string> next;
    next.reserve(out.size() * 3);
    for (const auto& w : out) {
      for (char c : {'0', '1', '2'}) next.push_back(w + c);
    }
    out = std::move(next);
  }
  return out;
}

BoxMarking marking_of(std::string_view forward, int depth_before_two) {
  if (static_cast<int>(forward.size()) <= depth_before_two) return BoxMarking::None;
  if (forward[static_cast<std::size_t>(depth_before_two)] != '2') return BoxMarking::None;
  bool ones = true;
  for (int i = 0; i < depth_before_two; ++i) {
    const char c = forward[static_cast<std::size_t>(i)];
    if (c == '2') return BoxMarking::None;
    ones = ones && c == '1';
  }
  return ones ? BoxMarking::V : BoxMarking::U;
}

std::string box_key(int level, std::string_view forward, std::string_view backward) {
  std::string k = std::to_string(level);
  k += ':';
  k += forward;
  k += ':';
  k += backward;
  return k;
}

} // namespace

Mat2 operator*(const Mat2& a, const Mat2& b) {
  return {a.xx * b.xx + a.xy * b.yx, a.xx * b.xy + a.xy * b.yy, a.yx * b.xx + a.yy * b.yx,
          a.yx * b.xy + a.yy * b.yy};
}

std::string to_string(BoxMarking m) {
  switch (m) {
  case BoxMarking::None: return "none";
  case BoxMarking::U: return "U";
  case BoxMarking::V: return "V";
  }
  return "?";
}

std::size_t BoxFamily::marked_count() const {
  return static_cast<std::size_t>(std::count_if(covers.begin(), covers.end(), [](const BoxCover& c) {
    return c.marking != BoxMarking::None;
  }));
}

double BlendNorms::max() const { return std::max({c0, c1, c2}); }

// ============================================================ blend

namespace {

// Quintic smoothstep collar along one axis: 1 for |t - c| <= inner,
// 0 for |t - c| >= outer.
struct Collar {
  double value, d1, d2;
};

Collar collar(double t, double c, double inner, double outer) {
  const double r = std::abs(t - c);
  if (r <= inner) return {1.0, 0.0, 0.0};
  if (r >= outer) return {0.0, 0.0, 0.0};
  const double w = outer - inner;
  const double s = (outer - r) / w;
  const double sign = t >= c ? 1.0 : -1.0;
  const double S = s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
  const double S1 = 30.0 * s * s * (1.0 - s) * (1.0 - s);
  const double S2 = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
  return {S, -sign * S1 / w, S2 / (w * w)};
}

} // namespace

Vec2 SurgeryBlend::apply(Vec2 p) const {
  if (inner.contains(p)) {
    return {center.x + rate_x * (p.x - center.x), center.y + rate_y * (p.y - center.y)};
  }
  const Collar cx = collar(p.x, center.x, inner.x.half(), outer.x.half());
  const Collar cy = collar(p.y, center.y, inner.y.half(), outer.y.half());
  const double psi = cx.value * cy.value;
  return {p.x + psi * (rate_x - 1.0) * (p.x - center.x), p.y + psi * (rate_y - 1.0) * (p.y - center.y)};
}

Mat2 SurgeryBlend::jacobian(Vec2 p) const {
  if (inner.contains(p)) return {rate_x, 0.0, 0.0, rate_y};
  const Collar cx = collar(p.x, center.x, inner.x.half(), outer.x.half());
  const Collar cy = collar(p.y, center.y, inner.y.half(), outer.y.half());
  const double psi = cx.value * cy.value;
  const double px = cx.d1 * cy.value;
  const double py = cx.value * cy.d1;
  const double ex = rate_x - 1.0, ey = rate_y - 1.0;
  const double dx = p.x - center.x, dy = p.y - center.y;
  return {1.0 + ex * (px * dx + psi), ex * py * dx, ey * px * dy, 1.0 + ey * (py * dy + psi)};
}

void SurgeryBlend::hessian(Vec2 p, double out[2][2][2]) const {
  const Collar cx = collar(p.x, center.x, inner.x.half(), outer.x.half());
  const Collar cy = collar(p.y, center.y, inner.y.half(), outer.y.half());
  const double g[2] = {cx.d1 * cy.value, cx.value * cy.d1};
  const double h[2][2] = {{cx.d2 * cy.value, cx.d1 * cy.d1}, {cx.d1 * cy.d1, cx.value * cy.d2}};
  const double e[2] = {rate_x - 1.0, rate_y - 1.0};
  const double d[2] = {p.x - center.x, p.y - center.y};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      for (int l = 0; l < 2; ++l) {
        out[i][j][l] = e[i] * (h[j][l] * d[i] + (i == l ? g[j] : 0.0) + (i == j ? g[l] : 0.0));
      }
    }
  }
}

// ============================================================ stage map

Interval StageMap::h_strip(int i) const {
  const double c = h_center(i);
  const double half = 0.5 / params_.lambda_inf;
  return {c - half, c + half};
}

double StageMap::h_center(int i) const {
  const double half = 0.5 / params_.lambda_inf;
  return i == 0 ? half : (i == 1 ? 0.5 : 1.0 - half);
}

double StageMap::v_center(int i) const {
  const double half = 0.5 * params_.delta_inf;
  return i == 0 ? half : (i == 1 ? 0.5 : 1.0 - half);
}

const F0Piece& StageMap::piece_at(double y) const {
  for (const auto& p : pieces_) {
    if (p.y.contains(y)) return p;
  }
  throw DomainError("point outside the horizontal strips: y=" + std::to_string(y));
}

const F0Piece& StageMap::piece_for(std::string_view word) const {
  for (const auto& p : pieces_) {
    if (p.word == word) return p;
  }
  throw InvalidArgument("no f0 piece for word " + std::string(word));
}

const SurgeryBlend* StageMap::surgery_at(Vec2 p) const {
  for (const auto& s : surgeries_) {
    if (s.outer.contains(p)) return &s;
  }
  return nullptr;
}

const SurgeryBlend* StageMap::find_box(int level, std::string_view forward,
                                       std::string_view backward) const {
  const auto it = index_.find(box_key(level, forward, backward));
  return it == index_.end() ? nullptr : &surgeries_[it->second];
}

double StageMap::gamma(int level) const {
  for (const auto& l : levels_) {
    if (l.level == level) return l.gamma;
  }
  throw InvalidArgument("stage has no level " + std::to_string(level));
}

Vec2 StageMap::apply(Vec2 p) const {
  const SurgeryBlend* s = surgery_at(p);
  const Vec2 q = s ? s->apply(p) : p;
  const F0Piece& piece = piece_at(q.y);
  const int sg = piece.sigma;
  return {v_center(piece.strip) + sg * piece.d * (q.x - 0.5),
          0.5 + sg * params_.lambda_inf * (q.y - h_center(piece.strip))};
}

Mat2 StageMap::jacobian(Vec2 p) const {
  const SurgeryBlend* s = surgery_at(p);
  const Vec2 q = s ? s->apply(p) : p;
  const F0Piece& piece = piece_at(q.y);
  const Mat2 df0{piece.sigma * piece.d, 0.0, 0.0, piece.sigma * params_.lambda_inf};
  return s ? df0 * s->jacobian(p) : df0;
}

StageMap build_f0(const ConstructionParams& params) {
  params.validate();
  StageMap st;
  st.params_ = params;
  st.stage_ = 0;
  st.history_ = {params.x_scale};
  const int depth = params.alpha + 1;
  const double lam = params.lambda_inf;

  // Cylinders of f0 along y do not depend on the horizontal rates.
  auto cylinder = [&](const std::string& w) {
    Interval y{0.0, 1.0};
    for (auto it = w.rbegin(); it != w.rend(); ++it) {
      const int i = *it - '0';
      const double s = StageMap::sigma(i) * lam;
      y = affine_image(y, 1.0 / s, st.h_center(i) - 0.5 / s);
    }
    return y;
  };

  for (int i = 0; i < 3; ++i) {
    std::vector<F0Piece> strip;
    for (const auto& tail : words_of_length(depth - 1)) {
      F0Piece p;
      p.strip = i;
      p.word = std::string(1, static_cast<char>('0' + i)) + tail;
      p.y = cylinder(p.word);
      p.sigma = StageMap::sigma(i);
      p.d = p.word.find('2') != std::string::npos ? params.delta_0 * params.delta_inf
                                                  : params.delta_inf;
      strip.push_back(p);
    }
    std::sort(strip.begin(), strip.end(), [](const F0Piece& a, const F0Piece& b) { return a.y.lo < b.y.lo; });
    const Interval h = st.h_strip(i);
    std::vector<Interval> ext(strip.size());
    for (std::size_t j = 0; j < strip.size(); ++j) {
      ext[j].lo = j == 0 ? h.lo : 0.5 * (strip[j - 1].y.hi + strip[j].y.lo);
      ext[j].hi = j + 1 == strip.size() ? h.hi : 0.5 * (strip[j].y.hi + strip[j + 1].y.lo);
    }
    for (std::size_t j = 0; j < strip.size(); ++j) {
      strip[j].y = ext[j];
      st.pieces_.push_back(strip[j]);
    }
  }
  return st;
}

// ============================================================ covers

namespace {

// Enclosures of Lambda_S along y (by forward word) and along x (by backward
// word) for the stage map `st`, memoized. The `r` argument asks for the hull
// over all extensions by r further symbols, which is how the depth-m covers
// used for gamma are formed without enumerating them.
class CoverOracle {
public:
  explicit CoverOracle(const StageMap& st)
      : st_(st), S_(st.stage()), alpha_(st.params().alpha), resolve_(S_ + alpha_ + 1) {}

  Interval Y(const std::string& F, int r) {
    std::string key = F;
    key += '|';
    key += std::to_string(r);
    if (auto it = ymemo_.find(key); it != ymemo_.end()) return it->second;
    const Interval out = compute_y(F, r);
    ymemo_.emplace(std::move(key), out);
    return out;
  }

  // G is the forward word of the points, at least S + alpha symbols.
  Interval X(const std::string& Bw, const std::string& G, int r) {
    const std::string g = G.substr(0, static_cast<std::size_t>(S_ + alpha_));
    std::string key = Bw;
    key += '|';
    key += g;
    key += '|';
    key += std::to_string(r);
    if (auto it = xmemo_.find(key); it != xmemo_.end()) return it->second;
    const Interval out = compute_x(Bw, g, r);
    xmemo_.emplace(std::move(key), out);
    return out;
  }

private:
  // Level of the surgery acting on points with this forward word, 0 for
  // none, -1 when the word is too short to decide.
  int surgery_level(std::string_view F) const {
    const auto j = F.find('2');
    if (j == std::string_view::npos) return static_cast<int>(F.size()) >= resolve_ ? 0 : -1;
    const int k = static_cast<int>(j) - alpha_;
    return (k >= 1 && k <= S_) ? k : 0;
  }

  Interval compute_y(const std::string& F, int r) {
    auto extend = [&](int rr) {
      Interval h = Y(F + '0', rr);
      h = Interval::hull(h, Y(F + '1', rr));
      return Interval::hull(h, Y(F + '2', rr));
    };
    if (F.empty()) return r == 0 ? Interval{0.0, 1.0} : extend(r - 1);
    const int level = surgery_level(F);
    if (level < 0 && r > 0) return extend(r - 1);

    // (center, rate) pairs of the y-surgeries that may act on this cylinder;
    // several only when F is too short to fix the level.
    std::vector<std::pair<double, double>> maps;
    if (level > 0) {
      const SurgeryBlend& b = any_box(level, F.substr(0, static_cast<std::size_t>(level + alpha_ + 1)));
      maps.emplace_back(b.center.y, b.rate_y);
    } else {
      maps.emplace_back(0.0, 1.0);
      if (level < 0) {
        for (const auto& b : st_.surgeries()) {
          if (b.rate_y != 1.0 && b.forward.compare(0, F.size(), F) == 0) maps.emplace_back(b.center.y, b.rate_y);
        }
      }
    }

    const int i = F[0] - '0';
    const double s = StageMap::sigma(i) * st_.params().lambda_inf;
    const Interval next = Y(F.substr(1), r);
    Interval pre{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& [cy, ly] : maps) {
      // y' = 1/2 + sigma lambda_inf (cy + ly (y - cy) - m_i)
      const double slope = s * ly;
      const double offset = 0.5 + s * (cy * (1.0 - ly) - st_.h_center(i));
      pre = Interval::hull(pre, affine_image(next, 1.0 / slope, -offset / slope));
    }
    const Interval h = st_.h_strip(i);
    pre.lo = std::max(pre.lo, h.lo);
    pre.hi = std::min(pre.hi, h.hi);
    return pre;
  }

  Interval compute_x(const std::string& Bw, const std::string& G, int r) {
    if (Bw.empty()) {
      if (r == 0) return {0.0, 1.0};
      Interval h = X("0", G, r - 1);
      h = Interval::hull(h, X("1", G, r - 1));
      return Interval::hull(h, X("2", G, r - 1));
    }
    const int u = Bw[0] - '0';
    const std::string qF = Bw.substr(0, 1) + G; // forward word of the preimage
    const bool x0 = qF.substr(0, static_cast<std::size_t>(alpha_ + 1)).find('2') != std::string::npos;
    const double d = x0 ? st_.params().delta_0 * st_.params().delta_inf : st_.params().delta_inf;
    const int level = surgery_level(qF);
    const std::string rest = Bw.substr(1);

    Interval inner;
    if (level > 0) {
      const auto need = static_cast<std::size_t>(level + alpha_ - 1);
      const std::string fw = qF.substr(0, static_cast<std::size_t>(level + alpha_ + 1));
      if (rest.size() >= need) {
        const SurgeryBlend* b = st_.find_box(level, fw, rest.substr(0, need));
        if (!b) throw NumericalFailure("cover recursion: missing box " + box_key(level, fw, rest.substr(0, need)));
        const Interval in = X(rest, qF, r);
        inner = affine_image(in, b->rate_x, (1.0 - b->rate_x) * b->center.x);
      } else if (r > 0) {
        Interval h = X(Bw + '0', G, r - 1);
        h = Interval::hull(h, X(Bw + '1', G, r - 1));
        return Interval::hull(h, X(Bw + '2', G, r - 1));
      } else {
        const Interval in = X(rest, qF, 0);
        const auto [cmin, cmax, rate] = center_range(level, fw, rest);
        inner = {rate * in.lo + (1.0 - rate) * cmin, rate * in.hi + (1.0 - rate) * cmax};
      }
    } else {
      inner = X(rest, qF, r);
    }
    const double s = StageMap::sigma(u) * d;
    return affine_image(inner, s, st_.v_center(u) - 0.5 * s);
  }

  const SurgeryBlend& any_box(int level, const std::string& fw) {
    for (const auto& b : st_.surgeries()) {
      if (b.level == level && b.forward == fw) return b;
    }
    throw NumericalFailure("cover recursion: no level-" + std::to_string(level) + " box for " + fw);
  }

  std::tuple<double, double, double> center_range(int level, const std::string& fw,
                                                  const std::string& prefix) {
    const std::string key = box_key(level, fw, prefix);
    if (auto it = cmemo_.find(key); it != cmemo_.end()) return it->second;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, rate = 1.0;
    for (const auto& b : st_.surgeries()) {
      if (b.level == level && b.forward == fw && b.backward.compare(0, prefix.size(), prefix) == 0) {
        lo = std::min(lo, b.center.x);
        hi = std::max(hi, b.center.x);
        rate = b.rate_x;
      }
    }
    if (!(lo <= hi)) throw NumericalFailure("cover recursion: no box matches " + key);
    return cmemo_[key] = {lo, hi, rate};
  }

  const StageMap& st_;
  int S_;
  int alpha_;
  int resolve_;
  std::unordered_map<std::string, Interval> ymemo_, xmemo_;
  std::unordered_map<std::string, std::tuple<double, double, double>> cmemo_;
};

} // namespace

BoxFamily boxes_of_level(const StageMap& prev, int k) {
  if (k < 1) throw InvalidArgument("boxes_of_level: k must be >= 1");
  if (prev.stage() != k - 1) throw InvalidArgument("boxes_of_level: needs stage k-1");
  const int alpha = prev.params().alpha;
  BoxFamily fam;
  fam.level = k;
  fam.forward_depth = k + alpha + 1;
  fam.backward_depth = k + alpha - 1;
  CoverOracle oracle(prev);
  const auto fws = words_of_length(fam.forward_depth);
  const auto bws = words_of_length(fam.backward_depth);
  fam.covers.reserve(fws.size() * bws.size());
  for (const auto& f : fws) {
    const Interval y = oracle.Y(f, 0);
    const BoxMarking mark = marking_of(f, k + alpha);
    for (const auto& b : bws) {
      fam.covers.push_back({f, b, mark, Rect{oracle.X(b, f, 0), y}});
    }
  }

  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < fam.covers.size(); ++i) {
    if (fam.covers[i].marking == BoxMarking::None) continue;
    for (std::size_t j = 0; j < fam.covers.size(); ++j) {
      if (j != i) gap = std::min(gap, rect_gap(fam.covers[i].cover, fam.covers[j].cover));
    }
    for (const auto& s : prev.surgeries()) gap = std::min(gap, rect_gap(fam.covers[i].cover, s.outer));
  }
  if (!(gap > 0.0)) {
    throw NumericalFailure("level-" + std::to_string(k) + " covers touch; boxes cannot be separated");
  }
  fam.margin = 0.25 * gap;
  return fam;
}

double gamma_of_level(const BoxFamily& family, const StageMap& prev, int m) {
  if (m < family.forward_depth) throw InvalidArgument("gamma_of_level: m below the forward depth");
  CoverOracle oracle(prev);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : family.covers) {
    if (c.marking == BoxMarking::None) continue;
    const Rect outer = c.cover.inflated(family.margin);
    const Interval xm = oracle.X(c.backward, c.forward, m - static_cast<int>(c.backward.size()));
    const Interval ym = oracle.Y(c.forward, m - static_cast<int>(c.forward.size()));
    const double d = std::min({xm.lo - outer.x.lo, outer.x.hi - xm.hi, ym.lo - outer.y.lo, outer.y.hi - ym.hi});
    best = std::min(best, d);
  }
  if (!(best > 0.0)) {
    throw IncreaseDepth("gamma_of_level: margin not resolved at depth " + std::to_string(m));
  }
  return best / 3.0;
}

// ============================================================ surgery

SurgeryBlend make_surgery(const BoxCover& box, int k, const ConstructionParams& params, double margin,
                          double gamma) {
  if (box.marking == BoxMarking::None) throw InvalidArgument("make_surgery: box is not marked");
  if (!(gamma > 0.0) || !(margin > 0.0)) throw InvalidArgument("make_surgery: margin and gamma must be positive");
  const Potential pot(params);
  const Rates rates = pot.rates(k);
  const double size = std::hypot(-std::log(rates.delta), std::log(rates.lambda));
  if (!(size < params.decay_constant() * std::pow(params.theta, k))) {
    throw ConfigError("rate condition fails at level " + std::to_string(k));
  }

  SurgeryBlend s;
  s.level = k;
  s.marking = box.marking;
  s.forward = box.forward;
  s.backward = box.backward;
  s.cover = box.cover;
  s.outer = box.cover.inflated(margin);
  s.inner = s.outer.inflated(-2.0 * gamma);
  s.center = s.cover.center();
  s.gamma = gamma;
  s.rate_x = rates.delta;
  s.rate_y = box.marking == BoxMarking::V ? rates.lambda : 1.0;

  const double ax = s.outer.x.half(), ay = s.outer.y.half();
  const double ix = s.inner.x.half(), iy = s.inner.y.half();
  if (!(ix > 0.0 && iy > 0.0)) throw IncreaseDepth("make_surgery: inner box is empty");

  // L^{+1} and L^{-1} of the inner box must stay gamma away from the outer boundary.
  const double slack = std::min({ax - s.rate_x * ix, ay - s.rate_y * iy, ax - ix / s.rate_x, ay - iy / s.rate_y});
  if (!(slack > gamma)) {
    const double excess = std::max((1.0 / s.rate_x - 1.0) * ix, (s.rate_y - 1.0) * iy);
    throw ShrinkRates("surgery at level " + std::to_string(k) + " moves its core into the collar",
                      std::min(0.5, 0.5 * gamma / excess));
  }

  s.k_psi = 2.0 * (1.0 + 1.875 * (ax + ay) * (1.0 / (ax - ix) + 1.0 / (ay - iy)));

  // Sampled norms on a 101 x 101 grid over B; Df0 = diag(delta_inf, lambda_inf)
  // on every marked box since their first alpha + 1 symbols avoid 2.
  const double dfx = params.delta_inf, dfy = params.lambda_inf;
  constexpr int kGrid = 101;
  s.min_jacobian = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kGrid; ++i) {
    for (int j = 0; j < kGrid; ++j) {
      const Vec2 p{s.outer.x.lo + (s.outer.x.hi - s.outer.x.lo) * i / (kGrid - 1.0),
                   s.outer.y.lo + (s.outer.y.hi - s.outer.y.lo) * j / (kGrid - 1.0)};
      const Vec2 dl = s.apply(p) - p;
      const Mat2 J = s.jacobian(p);
      double H[2][2][2];
      s.hessian(p, H);
      double h2x = 0.0, h2y = 0.0;
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          h2x += H[0][a][b] * H[0][a][b];
          h2y += H[1][a][b] * H[1][a][b];
        }
      }
      const double jxx = J.xx - 1.0, jyy = J.yy - 1.0;
      s.norms.c0 = std::max(s.norms.c0, norm(dl));
      s.norms.c1 = std::max(s.norms.c1, std::sqrt(jxx * jxx + J.xy * J.xy + J.yx * J.yx + jyy * jyy));
      s.norms.c2 = std::max(s.norms.c2, std::sqrt(h2x + h2y));
      s.budget_norms.c0 = std::max(s.budget_norms.c0, std::hypot(dfx * dl.x, dfy * dl.y));
      s.budget_norms.c1 = std::max(
          s.budget_norms.c1, std::sqrt(dfx * dfx * (jxx * jxx + J.xy * J.xy) + dfy * dfy * (J.yx * J.yx + jyy * jyy)));
      s.budget_norms.c2 = std::max(s.budget_norms.c2, std::sqrt(dfx * dfx * h2x + dfy * dfy * h2y));
      s.min_jacobian = std::min(s.min_jacobian, J.xx * J.yy - J.xy * J.yx);
    }
  }
  if (!(s.min_jacobian > 0.0)) {
    throw ShrinkRates("surgery at level " + std::to_string(k) + " is not a local diffeomorphism", 0.5);
  }
  return s;
}

StageMap compose_stage(const StageMap& prev, const BoxFamily& family, double gamma, int refinement_depth,
                       std::vector<SurgeryBlend> blends, bool enforce_budget) {
  const int k = family.level;
  if (prev.stage() != k - 1) throw InvalidArgument("compose_stage: level does not follow the stage");
  StageMap st = prev;
  st.stage_ = k;

  LevelSummary sum;
  sum.level = k;
  sum.box_count = family.covers.size();
  sum.marked_count = blends.size();
  sum.margin = family.margin;
  sum.gamma = gamma;
  sum.refinement_depth = refinement_depth;
  sum.budget = std::pow(0.5, k + 1) * prev.params().eps_0;
  sum.min_jacobian = std::numeric_limits<double>::infinity();

  const int alpha = prev.params().alpha;
  for (auto& b : blends) {
    for (const auto& old : prev.surgeries()) {
      if (!(rect_gap(b.outer, old.outer) > 0.0)) {
        throw NumericalFailure("surgery boxes of levels " + std::to_string(old.level) + " and " +
                               std::to_string(k) + " intersect");
      }
    }
    const F0Piece& piece = prev.piece_for(b.forward.substr(0, static_cast<std::size_t>(alpha + 1)));
    if (b.outer.y.lo < piece.y.lo || b.outer.y.hi > piece.y.hi) {
      throw NumericalFailure("surgery box " + box_key(k, b.forward, b.backward) + " leaves its f0 piece");
    }
    sum.sampled.c0 = std::max(sum.sampled.c0, b.budget_norms.c0);
    sum.sampled.c1 = std::max(sum.sampled.c1, b.budget_norms.c1);
    sum.sampled.c2 = std::max(sum.sampled.c2, b.budget_norms.c2);
    sum.min_jacobian = std::min(sum.min_jacobian, b.min_jacobian);
    st.index_[box_key(k, b.forward, b.backward)] = st.surgeries_.size();
    st.surgeries_.push_back(std::move(b));
  }
  if (enforce_budget && !(sum.sampled.max() < sum.budget)) {
    std::ostringstream msg;
    msg << "level " << k << " sampled C2 distance " << sum.sampled.max() << " exceeds budget " << sum.budget;
    throw ShrinkRates(msg.str(), std::min(0.5, 0.5 * sum.budget / sum.sampled.max()));
  }
  st.levels_.push_back(sum);
  return st;
}

StageMap build_stage(const ConstructionParams& params, int K, const StageBuildOptions& options,
                     std::vector<std::string>* log) {
  if (K < 0) throw InvalidArgument("build_stage: K must be >= 0");
  ConstructionParams p = params;
  std::vector<double> history;
  for (int attempt = 0;; ++attempt) {
    history.push_back(p.x_scale);
    try {
      StageMap st = build_f0(p);
      for (int k = 1; k <= K; ++k) {
        const BoxFamily fam = boxes_of_level(st, k);
        const int m = k + p.alpha + options.extra_refinement;
        const double gamma = gamma_of_level(fam, st, m);
        std::vector<SurgeryBlend> blends;
        for (const auto& c : fam.covers) {
          if (c.marking != BoxMarking::None) blends.push_back(make_surgery(c, k, p, fam.margin, gamma));
        }
        st = compose_stage(st, fam, gamma, m, std::move(blends), false);
      }
      const LevelSummary* worst = nullptr;
      double factor = 1.0;
      for (const auto& l : st.levels()) {
        if (l.sampled.max() < l.budget) continue;
        const double f = std::min(0.5, 0.5 * l.budget / l.sampled.max());
        if (f < factor) factor = f, worst = &l;
      }
      if (worst) {
        std::ostringstream msg;
        msg << "level " << worst->level << " sampled C2 distance " << worst->sampled.max() << " exceeds budget "
            << worst->budget;
        throw ShrinkRates(msg.str(), factor);
      }
      st.history_ = history;
      return st;
    } catch (const ShrinkRates& e) {
      if (attempt >= options.max_retries) throw;
      const double next = p.x_scale * e.suggested_factor();
      if (log) {
        std::ostringstream msg;
        msg.precision(6);
        msg << "shrink-rates retry " << attempt + 1 << ": " << e.what() << "; x_scale " << p.x_scale << " -> "
            << next;
        log->push_back(msg.str());
      }
      p.x_scale = next;
    }
  }
}

// ============================================================ orbits

PeriodicPointFix locate_periodic(const StageMap& stage, const PeriodicItinerary& itinerary) {
  if (!itinerary.primitive()) throw InvalidArgument("locate_periodic: itinerary must be primitive");
  const int K = stage.stage();
  const int alpha = stage.params().alpha;
  const std::size_t n = itinerary.period();
  const auto classes = classify_periodic(itinerary, alpha);
  const double lam = stage.params().lambda_inf;

  struct Affine {
    double dx, tx, dy, ty;
  };
  std::vector<Affine> maps(n);
  std::vector<const SurgeryBlend*> boxes(n, nullptr);
  std::vector<const F0Piece*> pieces(n);
  PeriodicPointFix fix{itinerary, K, {}, std::vector<int>(n, 0), 0.0, 1.0, 0.0};

  for (std::size_t j = 0; j < n; ++j) {
    const std::string fw = to_string(itinerary.window(j, static_cast<std::size_t>(K + alpha + 1)));
    std::string bw;
    for (int i = 0; i < K + alpha - 1; ++i) {
      const std::size_t idx = (j + n * static_cast<std::size_t>(K + alpha + 1) - 1 - static_cast<std::size_t>(i)) % n;
      bw.push_back(static_cast<char>('0' + itinerary.at(idx).value()));
    }
    const PrefixClass& c = classes[j];
    if ((c.tag == PrefixTag::U || c.tag == PrefixTag::V) && c.k <= K) {
      boxes[j] = stage.find_box(c.k, fw.substr(0, static_cast<std::size_t>(c.k + alpha + 1)),
                                bw.substr(0, static_cast<std::size_t>(c.k + alpha - 1)));
      if (!boxes[j]) throw CoreViolation("no surgery box for shift " + std::to_string(j) + " of " + to_string(itinerary.generator()));
      fix.box_level[j] = c.k;
    }
    pieces[j] = &stage.piece_for(fw.substr(0, static_cast<std::size_t>(alpha + 1)));
    const F0Piece& pc = *pieces[j];
    double ax = 1.0, ay = 1.0, cx = 0.0, cy = 0.0;
    if (boxes[j]) ax = boxes[j]->rate_x, ay = boxes[j]->rate_y, cx = boxes[j]->center.x, cy = boxes[j]->center.y;
    const double sx = pc.sigma * pc.d, sy = pc.sigma * lam;
    maps[j] = {sx * ax, stage.v_center(pc.strip) + sx * ((1.0 - ax) * cx - 0.5), sy * ay,
               0.5 + sy * ((1.0 - ay) * cy - stage.h_center(pc.strip))};
  }

  // Fixed point of the cyclic composition started at each shift, so that
  // expansion along y never amplifies rounding from one point to the next.
  fix.orbit.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    double Dx = 1.0, Tx = 0.0, Dy = 1.0, Ty = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Affine& a = maps[(j + i) % n];
      Dx = a.dx * Dx, Tx = a.dx * Tx + a.tx;
      Dy = a.dy * Dy, Ty = a.dy * Ty + a.ty;
    }
    fix.orbit[j] = {Tx / (1.0 - Dx), Ty / (1.0 - Dy)};
  }

  // Points inside a box must sit gamma/2 deep in its core; points off every box
  // only need to avoid the collars. The reported pair is the tightest one.
  double slack = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    const Vec2 p = fix.orbit[j];
    const SurgeryBlend* s = stage.surgery_at(p);
    if (s != boxes[j]) {
      throw CoreViolation("orbit of " + to_string(itinerary.generator()) + " point " + std::to_string(j) +
                          " lies in the wrong surgery box");
    }
    const Vec2 q = s ? s->apply(p) : p;
    if (&stage.piece_at(q.y) != pieces[j]) {
      throw CoreViolation("orbit of " + to_string(itinerary.generator()) + " point " + std::to_string(j) +
                          " left its f0 piece");
    }
    double clearance = 1.0, need = 0.0;
    if (s) {
      clearance = inner_clearance(s->inner, p);
      need = 0.5 * s->gamma;
    } else {
      for (const auto& b : stage.surgeries()) clearance = std::min(clearance, outside_distance(b.outer, p));
    }
    if (!(clearance > 0.0)) {
      throw CoreViolation("orbit of " + to_string(itinerary.generator()) + " point " + std::to_string(j) +
                          " touches a blend collar");
    }
    if (clearance - need < slack) {
      slack = clearance - need;
      fix.core_clearance = clearance;
      fix.required_clearance = need;
    }
    const Vec2 next = stage.apply(p);
    const Vec2 err = next - fix.orbit[(j + 1) % n];
    fix.residual = std::max({fix.residual, std::abs(err.x), std::abs(err.y)});
  }
  return fix;
}

std::vector<Vec2> cocycle_pointwise(const StageMap& stage, const PeriodicPointFix& fix) {
  std::vector<Vec2> out;
  out.reserve(fix.orbit.size());
  for (const Vec2& p : fix.orbit) {
    const Mat2 J = stage.jacobian(p);
    if (J.xy != 0.0 || J.yx != 0.0) throw CoreViolation("non-diagonal derivative along the orbit");
    out.push_back({-std::log(std::abs(J.xx)), std::log(std::abs(J.yy))});
  }
  return out;
}

Vec2 cocycle_exponents(const StageMap& stage, const PeriodicPointFix& fix) {
  const auto pts = cocycle_pointwise(stage, fix);
  Vec2 sum;
  for (const Vec2& v : pts) sum += v;
  return sum / static_cast<double>(pts.size());
}

VerificationReport verify_phi_L(const StageMap& stage, int n_max, unsigned threads) {
  if (stage.stage() < 1) throw InvalidArgument("verify_phi_L: stage must be >= 1");
  if (n_max < 1) throw InvalidArgument("verify_phi_L: n_max must be >= 1");
  const int K = stage.stage();
  const Potential pot(stage.params());
  const auto orbits = enumerate_periodic(n_max);
  VerificationReport rep;
  rep.stage = K;
  rep.n_max = n_max;
  rep.rows.resize(orbits.size());

  parallel_for(orbits.size(), threads, [&](std::size_t idx) {
    const PeriodicItinerary& orbit = orbits[idx];
    ItineraryCheck& row = rep.rows[idx];
    row.word = to_string(orbit.generator());
    try {
      const PeriodicPointFix fix = locate_periodic(stage, orbit);
      const auto pts = cocycle_pointwise(stage, fix);
      const auto classes = classify_periodic(orbit, pot.alpha());
      Vec2 sum;
      for (std::size_t j = 0; j < pts.size(); ++j) {
        PrefixClass c = classes[j];
        if ((c.tag == PrefixTag::U || c.tag == PrefixTag::V) && c.k > K) c = PrefixClass::infinity();
        const Vec2 expect = pot.value(c);
        row.pointwise_deviation =
            std::max({row.pointwise_deviation, std::abs(pts[j].x - expect.x), std::abs(pts[j].y - expect.y)});
        sum += pts[j];
      }
      row.exponents = sum / static_cast<double>(pts.size());
      const Vec2 avg = phi_periodic_rv_truncated(orbit, pot, K);
      row.average_deviation = std::max(std::abs(row.exponents.x - avg.x), std::abs(row.exponents.y - avg.y));
      row.residual = fix.residual;
      row.core_clearance = fix.core_clearance;
      row.required_clearance = fix.required_clearance;
      row.pass = row.pointwise_deviation < 1e-12 && row.average_deviation < 1e-12 && row.residual < 1e-12 &&
                 row.core_clearance > row.required_clearance;
      if (!row.pass) row.failure = "tolerance exceeded";
    } catch (const CoreViolation& e) {
      row.failure = e.what();
    } catch (const DomainError& e) {
      row.failure = e.what();
    }
  });
  for (const auto& r : rep.rows) {
    if (r.pass) ++rep.passed;
    rep.max_deviation = std::max(rep.max_deviation, r.pointwise_deviation);
  }
  return rep;
}

} // namespace lyap
