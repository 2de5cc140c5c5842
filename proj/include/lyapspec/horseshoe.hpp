#pragma once

// Piecewise-affine 3-fold horseshoe, level-k surgery boxes, C2 blends and
// finite-stage maps f_K = f_0 o L_1 o ... o L_K, with periodic-orbit
// location and the comparison of Lyapunov data with the symbolic potential.

#include "lyapspec/construction.hpp"
#include "lyapspec/symbolic.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace lyap {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double mid() const { return 0.5 * (lo + hi); }
  double half() const { return 0.5 * (hi - lo); }
  bool contains(double t) const { return lo <= t && t <= hi; }
  static Interval hull(Interval a, Interval b);
};

struct Rect {
  Interval x;
  Interval y;

  Vec2 center() const { return {x.mid(), y.mid()}; }
  bool contains(Vec2 p) const { return x.contains(p.x) && y.contains(p.y); }
  Rect inflated(double m) const { return {{x.lo - m, x.hi + m}, {y.lo - m, y.hi + m}}; }
};

/// Separation of two rectangles in the sup metric (0 when they meet).
double rect_gap(const Rect& a, const Rect& b);
/// Sup-metric distance from p to the boundary of r; negative outside r.
double inner_clearance(const Rect& r, Vec2 p);

struct Mat2 {
  double xx = 1.0, xy = 0.0, yx = 0.0, yy = 1.0;
};

Mat2 operator*(const Mat2& a, const Mat2& b);

// ------------------------------------------------------------------ f0

/// Affine piece of f0 on a depth-(alpha+1) sub-strip of H_strip:
/// (x, y) -> (cx + sigma d (x - 1/2), 1/2 + sigma lambda_inf (y - m)).
struct F0Piece {
  int strip = 0;
  std::string word; // forward word of depth alpha + 1
  Interval y;       // sub-strip, extended to the midpoints of the gaps
  double d = 0.0;   // delta_inf, or delta_0 delta_inf on X0(alpha) words
  int sigma = 1;
};

// ------------------------------------------------------------------ boxes

enum class BoxMarking { None, U, V };

std::string to_string(BoxMarking m);

struct BoxCover {
  std::string forward;  // depth k + alpha + 1
  std::string backward; // depth k + alpha - 1, most recent symbol first
  BoxMarking marking = BoxMarking::None;
  Rect cover;           // contains the part of Lambda_{k-1} with these words
};

struct BoxFamily {
  int level = 0;
  int forward_depth = 0;
  int backward_depth = 0;
  std::vector<BoxCover> covers; // all rectangles of W_k
  double margin = 0.0;          // inflation of marked covers into surgery boxes

  std::size_t marked_count() const;
};

// ------------------------------------------------------------------ surgery

struct BlendNorms {
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  double max() const;
};

/// L(p) = p + psi(p) (A - I)(p - c), psi a product of quintic smoothsteps equal
/// to 1 on the inner box and 0 off the outer box.
struct SurgeryBlend {
  int level = 0;
  BoxMarking marking = BoxMarking::None;
  std::string forward;
  std::string backward;
  Rect cover;
  Rect outer; // B
  Rect inner; // B'
  Vec2 center;
  double rate_x = 1.0; // delta_k
  double rate_y = 1.0; // lambda_k on V boxes, 1 on U boxes
  double gamma = 0.0;
  double k_psi = 0.0;       // bound on |DL - I| / max(1 - delta, lambda - 1)
  BlendNorms norms;         // sampled L - id
  BlendNorms budget_norms;  // sampled Df0 (L - id) = f_k - f_{k-1}
  double min_jacobian = 0.0;

  Vec2 apply(Vec2 p) const;
  Mat2 jacobian(Vec2 p) const;
  /// out[i][j][l] = d^2 L_i / dp_j dp_l.
  void hessian(Vec2 p, double out[2][2][2]) const;
};

struct LevelSummary {
  int level = 0;
  std::size_t box_count = 0;    // rectangles of W_k
  std::size_t marked_count = 0; // surgery boxes
  double margin = 0.0;
  double gamma = 0.0;
  int refinement_depth = 0;
  double budget = 0.0;          // (1/2)^(k+1) eps_0
  BlendNorms sampled;           // max over the level's boxes
  double min_jacobian = 0.0;
};

struct StageBuildOptions {
  int max_retries = 3;
  int extra_refinement = 6; // m = k + alpha + extra_refinement
};

class StageMap {
public:
  const ConstructionParams& params() const noexcept { return params_; }
  int stage() const noexcept { return stage_; }
  const std::vector<F0Piece>& f0_pieces() const noexcept { return pieces_; }
  const std::vector<SurgeryBlend>& surgeries() const noexcept { return surgeries_; }
  const std::vector<LevelSummary>& levels() const noexcept { return levels_; }
  /// x_scale values tried, the last one is the one in params().
  const std::vector<double>& x_scale_history() const noexcept { return history_; }

  // Fixed strip geometry.
  Interval h_strip(int i) const;
  double h_center(int i) const;
  double v_center(int i) const;
  static int sigma(int i) { return i == 1 ? -1 : 1; }

  /// f_K(p); throws DomainError when p is not in a horizontal strip.
  Vec2 apply(Vec2 p) const;
  Mat2 jacobian(Vec2 p) const;
  const SurgeryBlend* surgery_at(Vec2 p) const;
  const F0Piece& piece_at(double y) const;
  const F0Piece& piece_for(std::string_view word) const;
  const SurgeryBlend* find_box(int level, std::string_view forward, std::string_view backward) const;
  double gamma(int level) const;

private:
  friend StageMap build_f0(const ConstructionParams& params);
  friend StageMap compose_stage(const StageMap& prev, const BoxFamily& family, double gamma,
                                int refinement_depth, std::vector<SurgeryBlend> blends,
                                bool enforce_budget);
  friend StageMap build_stage(const ConstructionParams& params, int K,
                              const StageBuildOptions& options,
                              std::vector<std::string>* log);

  ConstructionParams params_;
  int stage_ = 0;
  std::vector<F0Piece> pieces_;
  std::vector<SurgeryBlend> surgeries_;
  std::vector<LevelSummary> levels_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> history_;
};

StageMap build_f0(const ConstructionParams& params);

/// Rectangles of W_k covering Lambda_{k-1}, marked by forward class.
BoxFamily boxes_of_level(const StageMap& prev, int k);

/// Certified lower bound for gamma_k from depth-m rectangle covers.
/// Throws IncreaseDepth if the margin is not resolved at depth m.
double gamma_of_level(const BoxFamily& family, const StageMap& prev, int m);

/// Blend for one marked cover; throws ShrinkRates when a property fails.
SurgeryBlend make_surgery(const BoxCover& box, int k, const ConstructionParams& params,
                          double margin, double gamma);

/// Stage k from stage k-1; samples the C2 budget, throws ShrinkRates on violation
/// unless enforce_budget is false (the summary still records the sampled norms).
StageMap compose_stage(const StageMap& prev, const BoxFamily& family, double gamma,
                       int refinement_depth, std::vector<SurgeryBlend> blends,
                       bool enforce_budget = true);

/// Builds f_K, shrinking x_scale on ShrinkRates up to max_retries times. Budgets
/// of all levels are checked together so one retry can fix several of them.
StageMap build_stage(const ConstructionParams& params, int K, const StageBuildOptions& options = {},
                     std::vector<std::string>* log = nullptr);

// ------------------------------------------------------------------ orbits

struct PeriodicPointFix {
  PeriodicItinerary itinerary;
  int stage = 0;
  std::vector<Vec2> orbit;
  std::vector<int> box_level; // 0 off every surgery box
  double residual = 0.0;
  double core_clearance = 0.0;
  double required_clearance = 0.0; // half the gamma of the relevant level

  Vec2 point() const { return orbit.front(); }
};

PeriodicPointFix locate_periodic(const StageMap& stage, const PeriodicItinerary& itinerary);

/// Per-point (-log|d_i|, log|l_i|) from the generic derivative of f_K.
std::vector<Vec2> cocycle_pointwise(const StageMap& stage, const PeriodicPointFix& fix);
Vec2 cocycle_exponents(const StageMap& stage, const PeriodicPointFix& fix);

struct ItineraryCheck {
  std::string word;
  bool pass = false;
  double pointwise_deviation = 0.0;
  double average_deviation = 0.0;
  double residual = 0.0;
  double core_clearance = 0.0;
  double required_clearance = 0.0;
  Vec2 exponents;
  std::string failure;
};

struct VerificationReport {
  int stage = 0;
  int n_max = 0;
  std::vector<ItineraryCheck> rows;
  std::size_t passed = 0;
  double max_deviation = 0.0;
  bool all_pass() const { return passed == rows.size(); }
};

/// Compares Lyapunov data of every primitive orbit of period <= n_max with
/// the depth-(K+alpha+1) truncated potential.
VerificationReport verify_phi_L(const StageMap& stage, int n_max, unsigned threads = 0);

} // namespace lyap
