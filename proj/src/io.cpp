#include "lyapspec/io.hpp"

#include "lyapspec/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace lyap::io {

namespace {

const char* backend_name(Backend b) { return b == Backend::Lumped ? "lumped" : "debruijn"; }

template <class T>
T take(const Json& obj, const char* key, T fallback) {
  const auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if constexpr (std::is_same_v<T, int>) {
    if (!it->is_number_integer()) throw ConfigError(std::string(key) + " must be an integer");
  } else if constexpr (std::is_same_v<T, double>) {
    if (!it->is_number()) throw ConfigError(std::string(key) + " must be a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) throw ConfigError(std::string(key) + " must be a string");
  }
  return it->template get<T>();
}

void reject_unknown(const Json& obj, std::initializer_list<const char*> known, const char* where) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    const bool ok = std::any_of(known.begin(), known.end(), [&](const char* k) { return key == k; });
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

std::array<double, 2> pair_of(const Json& v, const char* key) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw ConfigError(std::string(key) + " must be a pair of numbers");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

Json box_json(const Rect& r) { return Json::array({Json::array({r.x.lo, r.x.hi}), Json::array({r.y.lo, r.y.hi})}); }

Json norms_json(const BlendNorms& n) { return {{"c0", n.c0}, {"c1", n.c1}, {"c2", n.c2}}; }

// JSON has no NaN; absent values become null.
Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

} // namespace

// ------------------------------------------------------------------ config

void RunConfig::validate() const {
  construction.validate();
  auto fail = [](const std::string& what) { throw ConfigError("invalid run config: " + what); };
  if (depth < 1 || depth > DeBruijnGraph::kDefaultMaxDepth) fail("depth must lie in [1, 10]");
  if (stage < 0 || stage > 4) fail("stage must lie in [0, 4]");
  if (levels < 1 || levels > 40) fail("levels must lie in [1, 40]");
  if (probe_levels < 1 || probe_levels > 12) fail("probe_levels must lie in [1, 12]");
  if (period < 1 || period > 14) fail("period must lie in [1, 14]");
  if (!(dual_radius > 0.0) || !std::isfinite(dual_radius)) fail("dual_radius must be positive");
  if (!std::isfinite(tilt.p) || !std::isfinite(tilt.q)) fail("tilt must be finite");
  if (grid.nx < 1 || grid.ny < 1 || grid.nx > 512 || grid.ny > 512) fail("grid resolution must lie in [1, 512]");
  for (const auto& r : {grid.x_range, grid.y_range}) {
    if (r && !((*r)[0] < (*r)[1] && std::isfinite((*r)[0]) && std::isfinite((*r)[1]))) {
      fail("grid ranges must be finite with lo < hi");
    }
  }
  if (out_dir.empty()) fail("out must not be empty");
  for (const auto& f : formats) {
    if (f != "csv" && f != "json" && f != "svg") fail("unknown format '" + f + "'");
  }
}

bool RunConfig::wants(std::string_view format) const {
  return std::find(formats.begin(), formats.end(), format) != formats.end();
}

Json to_json(const ConstructionParams& p) {
  return {{"lambda_inf", p.lambda_inf}, {"delta_inf", p.delta_inf}, {"delta_0", p.delta_0},
          {"alpha", p.alpha},           {"theta", p.theta},         {"C", p.C},
          {"h_beta", p.h_beta},         {"x_scale", p.x_scale},     {"N_default", p.N_default},
          {"K_default", p.K_default},   {"eps_0", p.eps_0}};
}

ConstructionParams params_from_json(const Json& j) {
  reject_unknown(j,
                 {"lambda_inf", "delta_inf", "delta_0", "alpha", "theta", "C", "h_beta", "x_scale", "N_default",
                  "K_default", "eps_0"},
                 "construction");
  ConstructionParams p;
  p.lambda_inf = take(j, "lambda_inf", p.lambda_inf);
  p.delta_inf = take(j, "delta_inf", p.delta_inf);
  p.delta_0 = take(j, "delta_0", p.delta_0);
  p.alpha = take(j, "alpha", p.alpha);
  p.theta = take(j, "theta", p.theta);
  p.C = take(j, "C", p.C);
  p.h_beta = take(j, "h_beta", p.h_beta);
  p.x_scale = take(j, "x_scale", p.x_scale);
  p.N_default = take(j, "N_default", p.N_default);
  p.K_default = take(j, "K_default", p.K_default);
  p.eps_0 = take(j, "eps_0", p.eps_0);
  p.validate();
  return p;
}

Json to_json(const RunConfig& c) {
  Json grid = {{"resolution", Json::array({c.grid.nx, c.grid.ny})}};
  grid["x_range"] = c.grid.x_range ? Json::array({(*c.grid.x_range)[0], (*c.grid.x_range)[1]}) : Json(nullptr);
  grid["y_range"] = c.grid.y_range ? Json::array({(*c.grid.y_range)[0], (*c.grid.y_range)[1]}) : Json(nullptr);
  return {{"construction", to_json(c.construction)},
          {"depth", c.depth},
          {"stage", c.stage},
          {"levels", c.levels},
          {"probe_levels", c.probe_levels},
          {"period", c.period},
          {"tilt", Json::array({c.tilt.p, c.tilt.q})},
          {"dual_radius", c.dual_radius},
          {"grid", grid},
          {"out", c.out_dir},
          {"formats", c.formats},
          {"threads", c.threads}};
}

RunConfig config_from_json(const Json& j) {
  try {
    reject_unknown(j,
                   {"construction", "depth", "stage", "levels", "probe_levels", "period", "tilt", "dual_radius",
                    "grid", "out", "formats", "threads"},
                   "config");
    RunConfig c;
    if (const auto it = j.find("construction"); it != j.end()) c.construction = params_from_json(*it);
    c.depth = take(j, "depth", c.construction.N_default);
    c.stage = take(j, "stage", c.construction.K_default);
    c.levels = take(j, "levels", c.levels);
    c.probe_levels = take(j, "probe_levels", c.probe_levels);
    c.period = take(j, "period", c.period);
    c.dual_radius = take(j, "dual_radius", c.dual_radius);
    c.out_dir = take(j, "out", c.out_dir);
    const int threads = take(j, "threads", 0);
    if (threads < 0) throw ConfigError("threads must be >= 0");
    c.threads = static_cast<unsigned>(threads);
    if (const auto it = j.find("tilt"); it != j.end()) {
      const auto t = pair_of(*it, "tilt");
      c.tilt = {t[0], t[1]};
    }
    if (const auto it = j.find("grid"); it != j.end()) {
      reject_unknown(*it, {"x_range", "y_range", "resolution"}, "grid");
      for (const char* key : {"x_range", "y_range"}) {
        const auto r = it->find(key);
        if (r == it->end() || r->is_null()) continue;
        (key[0] == 'x' ? c.grid.x_range : c.grid.y_range) = pair_of(*r, key);
      }
      if (const auto r = it->find("resolution"); r != it->end()) {
        if (!r->is_array() || r->size() != 2 || !(*r)[0].is_number_integer() || !(*r)[1].is_number_integer()) {
          throw ConfigError("grid.resolution must be a pair of integers");
        }
        c.grid.nx = (*r)[0].get<int>();
        c.grid.ny = (*r)[1].get<int>();
      }
    }
    if (const auto it = j.find("formats"); it != j.end()) {
      if (!it->is_array()) throw ConfigError("formats must be an array of strings");
      c.formats.clear();
      for (const auto& f : *it) {
        if (!f.is_string()) throw ConfigError("formats must be an array of strings");
        c.formats.push_back(f.get<std::string>());
      }
    }
    c.validate();
    return c;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

std::string canonical_dump(const Json& j) { return j.dump(); }

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const Json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_dump(j))));
  return buf;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ------------------------------------------------------------------ json

Json to_json(Vec2 v) { return Json::array({num(v.x), num(v.y)}); }

Json to_json(const VertexFamily& f, const std::vector<Vec2>& hull) {
  Json u = Json::array(), v = Json::array(), w = Json::array();
  for (std::size_t l = 0; l < f.size(); ++l) {
    u.push_back(to_json(f.u[l]));
    v.push_back(to_json(f.v[l]));
    w.push_back(to_json(f.w[l]));
  }
  Json h = Json::array();
  for (Vec2 p : hull) h.push_back(to_json(p));
  return {{"L", f.size()}, {"w0", to_json(f.w0)}, {"w_inf", to_json(f.w_inf)}, {"x", f.x},
          {"u", u},        {"v", v},              {"w", w},                    {"hull", h},
          {"hull_vertex_count", hull.size()}};
}

Json to_json(const RotationPolygon& p) {
  Json verts = Json::array();
  for (Vec2 v : p.vertices) verts.push_back(to_json(v));
  return {{"vertices", verts}, {"vertex_count", p.vertices.size()}, {"source_period", p.source_period}};
}

Json to_json(const EquilibriumData& e, Tilt t) {
  return {{"tilt", Json::array({t.p, t.q})},
          {"backend", backend_name(e.backend)},
          {"pressure", num(e.log_rho)},
          {"rotation_vector", to_json(e.rv)},
          {"entropy", num(e.entropy)},
          {"gibbs_residual", num(e.log_rho - (e.entropy + dot(t, e.rv)))},
          {"iterations", e.iterations},
          {"states", e.vertex_measure.size()}};
}

Json to_json(const SpectrumResult& r) {
  return {{"value", num(r.value)},
          {"status", to_string(r.status)},
          {"dual_point", Json::array({num(r.dual_point.p), num(r.dual_point.q)})},
          {"gap_estimate", num(r.gap_estimate)},
          {"grad_norm", num(r.grad_norm)},
          {"iterations", r.iterations}};
}

Json to_json(const ProbeReport& r) {
  Json entries = Json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"ell", e.ell},
                       {"w", to_json(e.w)},
                       {"distance_to_w_inf", e.distance_to_w_inf},
                       {"upper", to_json(e.upper)}});
  }
  return {{"L", r.L},
          {"N", r.N},
          {"dual_radius", r.dual_radius},
          {"w_inf", to_json(r.w_inf)},
          {"H_w_inf", num(r.h_w_inf)},
          {"H_w_inf_residual", num(r.h_w_inf_residual)},
          {"entries", entries},
          {"max_upper", num(r.max_upper)},
          {"gap", num(r.gap)}};
}

Json to_json(const StageMap& s) {
  Json levels = Json::array();
  for (const auto& l : s.levels()) {
    levels.push_back({{"level", l.level},
                      {"box_count", l.box_count},
                      {"marked_count", l.marked_count},
                      {"margin", l.margin},
                      {"gamma", l.gamma},
                      {"refinement_depth", l.refinement_depth},
                      {"budget", l.budget},
                      {"sampled", norms_json(l.sampled)},
                      {"within_budget", l.sampled.max() < l.budget},
                      {"min_jacobian", l.min_jacobian}});
  }
  Json boxes = Json::array();
  for (const auto& b : s.surgeries()) {
    boxes.push_back({{"level", b.level},
                     {"marking", to_string(b.marking)},
                     {"forward", b.forward},
                     {"backward", b.backward},
                     {"outer", box_json(b.outer)},
                     {"inner", box_json(b.inner)},
                     {"rates", Json::array({b.rate_x, b.rate_y})},
                     {"gamma", b.gamma},
                     {"k_psi", b.k_psi},
                     {"norms", norms_json(b.norms)},
                     {"budget_norms", norms_json(b.budget_norms)},
                     {"min_jacobian", b.min_jacobian}});
  }
  Json pieces = Json::array();
  for (const auto& p : s.f0_pieces()) {
    pieces.push_back({{"word", p.word}, {"y", Json::array({p.y.lo, p.y.hi})}, {"d", p.d}, {"sigma", p.sigma}});
  }
  return {{"stage", s.stage()},
          {"params", to_json(s.params())},
          {"x_scale_history", s.x_scale_history()},
          {"levels", levels},
          {"boxes", boxes},
          {"f0_pieces", pieces}};
}

Json to_json(const VerificationReport& r) {
  Json rows = Json::array();
  for (const auto& c : r.rows) {
    rows.push_back({{"word", c.word},
                    {"pass", c.pass},
                    {"exponents", to_json(c.exponents)},
                    {"pointwise_deviation", c.pointwise_deviation},
                    {"average_deviation", c.average_deviation},
                    {"residual", c.residual},
                    {"core_clearance", c.core_clearance},
                    {"required_clearance", c.required_clearance},
                    {"failure", c.failure}});
  }
  return {{"stage", r.stage},     {"n_max", r.n_max},         {"passed", r.passed}, {"total", r.rows.size()},
          {"all_pass", r.all_pass()}, {"max_deviation", r.max_deviation}, {"rows", rows}};
}

// ------------------------------------------------------------------ csv

std::string grid_csv(const std::vector<GridRow>& rows) {
  std::string out = "w1,w2,H,status,p,q\n";
  for (const auto& r : rows) {
    const bool has_value = r.error.empty() && r.result.status != SpectrumStatus::Infeasible;
    out += format_double(r.w.x) + ',' + format_double(r.w.y) + ',';
    out += has_value ? format_double(r.result.value) : std::string();
    out += ',';
    out += r.error.empty() ? to_string(r.result.status) : std::string("failed");
    out += ',';
    out += has_value ? format_double(r.result.dual_point.p) : std::string();
    out += ',';
    out += has_value ? format_double(r.result.dual_point.q) : std::string();
    out += '\n';
  }
  return out;
}

// ------------------------------------------------------------------ svg

std::string render_svg(const std::vector<SvgPolygon>& shapes, const std::vector<SvgLabel>& labels,
                       const std::vector<Vec2>& dots) {
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
  auto grow = [&](Vec2 p) {
    x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
  };
  for (const auto& s : shapes) std::for_each(s.points.begin(), s.points.end(), grow);
  for (const auto& l : labels) grow(l.at);
  std::for_each(dots.begin(), dots.end(), grow);
  if (!(x0 <= x1)) x0 = y0 = 0.0, x1 = y1 = 1.0;
  const double span = std::max({x1 - x0, y1 - y0, 1e-12});
  const double pad = 0.05 * span;
  const double font = 0.025 * span;
  const double dot = 0.006 * span;

  // y is flipped by hand so text stays upright.
  std::ostringstream o;
  o.precision(10);
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"" << x0 - pad << ' ' << -y1 - pad << ' '
    << (x1 - x0) + 2 * pad << ' ' << (y1 - y0) + 2 * pad << "\">\n";
  for (const auto& s : shapes) {
    o << (s.closed ? "  <polygon" : "  <polyline") << " points=\"";
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      o << (i ? " " : "") << s.points[i].x << ',' << -s.points[i].y;
    }
    o << "\" fill=\"" << s.fill << "\" stroke=\"" << s.stroke
      << "\" stroke-width=\"1\" vector-effect=\"non-scaling-stroke\"";
    if (s.dashed) o << " stroke-dasharray=\"4 2\"";
    o << "/>\n";
  }
  for (Vec2 p : dots) o << "  <circle cx=\"" << p.x << "\" cy=\"" << -p.y << "\" r=\"" << dot << "\"/>\n";
  for (const auto& l : labels) {
    o << "  <text x=\"" << l.at.x + dot << "\" y=\"" << -l.at.y - dot << "\" font-size=\"" << font
      << "\" font-family=\"sans-serif\">" << l.text << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string vertex_svg(const VertexFamily& f, const std::vector<Vec2>& hull) {
  std::vector<SvgLabel> labels{{f.w0, "w0"}, {f.w_inf, "w_inf"}};
  std::vector<Vec2> dots{f.w0, f.w_inf};
  for (std::size_t l = 0; l < f.size(); ++l) {
    labels.push_back({f.w[l], "w" + std::to_string(l + 1)});
    dots.push_back(f.w[l]);
  }
  std::vector<SvgPolygon> shapes{{hull, "#1f4e9c", "#dbe6f6"}};
  std::vector<Vec2> vs(f.v.begin(), f.v.end());
  if (!vs.empty()) shapes.push_back({vs, "#b03a2e", "none", false, true});
  return render_svg(shapes, labels, dots);
}

std::string polygon_svg(const RotationPolygon& p) {
  return render_svg({{p.vertices, "#1f4e9c", "#dbe6f6"}}, {}, p.vertices);
}

std::string boxes_svg(const StageMap& s) {
  static const char* colors[] = {"#1f4e9c", "#b03a2e", "#1e8449", "#7d3c98", "#b9770e"};
  auto rect = [](const Rect& r) {
    return std::vector<Vec2>{{r.x.lo, r.y.lo}, {r.x.hi, r.y.lo}, {r.x.hi, r.y.hi}, {r.x.lo, r.y.hi}};
  };
  std::vector<SvgPolygon> shapes{{rect({{0.0, 1.0}, {0.0, 1.0}}), "#000"}};
  for (int i = 0; i < 3; ++i) shapes.push_back({rect({{0.0, 1.0}, s.h_strip(i)}), "#999"});
  for (const auto& b : s.surgeries()) {
    const char* c = colors[(b.level - 1) % 5];
    shapes.push_back({rect(b.outer), c});
    shapes.push_back({rect(b.inner), c, "none", true, true});
  }
  return render_svg(shapes, {});
}

void write_text(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path);
}

} // namespace lyap::io
