#pragma once

// Run configuration, canonical JSON, CSV and SVG emitters shared by the CLI
// and the Python module.

#include "lyapspec/construction.hpp"
#include "lyapspec/horseshoe.hpp"
#include "lyapspec/spectrum.hpp"
#include "lyapspec/thermo.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lyap::io {

using Json = nlohmann::json; // std::map objects: keys always come out sorted

struct GridConfig {
  std::optional<std::array<double, 2>> x_range; // default: value-hull bounding box
  std::optional<std::array<double, 2>> y_range;
  int nx = 16;
  int ny = 16;
};

struct RunConfig {
  ConstructionParams construction;
  int depth = 8;  // N
  int stage = 2;  // K
  int levels = 6; // vertex levels L for construct
  int probe_levels = 3;
  int period = 8; // n_max for rotation-set
  Tilt tilt;      // for pressure
  double dual_radius = 200.0;
  GridConfig grid;
  std::string out_dir = "lyapspec-out";
  std::vector<std::string> formats{"csv", "json", "svg"};
  unsigned threads = 0;

  /// Throws ConfigError on the first violated bound.
  void validate() const;
  bool wants(std::string_view format) const;
};

Json to_json(const ConstructionParams& p);
ConstructionParams params_from_json(const Json& j);

Json to_json(const RunConfig& c);
/// Strict: unknown keys and wrong types are ConfigError. Missing keys keep defaults.
RunConfig config_from_json(const Json& j);
RunConfig load_config(const std::string& path);

std::string canonical_dump(const Json& j);
/// 64-bit FNV-1a of the canonical dump, as 16 hex digits.
std::string config_hash(const Json& j);
std::uint64_t fnv1a64(std::string_view bytes);

/// "%.17g"; NaN prints as the empty string.
std::string format_double(double v);

Json to_json(Vec2 v);
Json to_json(const VertexFamily& f, const std::vector<Vec2>& hull);
Json to_json(const RotationPolygon& p);
Json to_json(const EquilibriumData& e, Tilt t);
Json to_json(const SpectrumResult& r);
Json to_json(const ProbeReport& r);
Json to_json(const StageMap& s);
Json to_json(const VerificationReport& r);

/// Header w1,w2,H,status,p,q; infeasible and failed rows leave H empty.
std::string grid_csv(const std::vector<GridRow>& rows);

struct SvgPolygon {
  std::vector<Vec2> points;
  std::string stroke = "#000";
  std::string fill = "none";
  bool closed = true;
  bool dashed = false;
};

struct SvgLabel {
  Vec2 at;
  std::string text;
};

/// SVG 1.1 with the viewBox set to the padded data bounding box (y up).
std::string render_svg(const std::vector<SvgPolygon>& shapes, const std::vector<SvgLabel>& labels,
                       const std::vector<Vec2>& dots = {});

std::string vertex_svg(const VertexFamily& f, const std::vector<Vec2>& hull);
std::string polygon_svg(const RotationPolygon& p);
std::string boxes_svg(const StageMap& s);

void write_text(const std::string& path, const std::string& text);

} // namespace lyap::io
