#include "lyapspec/errors.hpp"
#include "lyapspec/io.hpp"

#include <doctest.h>

#include <regex>

using namespace lyap;
using io::Json;

TEST_CASE("fnv1a64 reference vectors") {
  CHECK(io::fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(io::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(io::fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("config hash ignores key order and formatting") {
  const Json a = Json::parse(R"({"depth": 6, "construction": {"alpha": 1, "theta": 0.5}, "grid": {"resolution": [8, 4]}})");
  const Json b = Json::parse(R"({"grid":{"resolution":[8,4]},"construction":{"theta":0.5,"alpha":1},"depth":6})");
  CHECK(io::config_hash(a) == io::config_hash(b));
  CHECK(io::config_hash(a).size() == 16);
  const io::RunConfig ca = io::config_from_json(a), cb = io::config_from_json(b);
  CHECK(io::config_hash(io::to_json(ca)) == io::config_hash(io::to_json(cb)));
  CHECK(ca.depth == 6);
  CHECK(ca.grid.nx == 8);
  CHECK(ca.grid.ny == 4);

  const Json c = Json::parse(R"({"depth": 7})");
  CHECK(io::config_hash(c) != io::config_hash(a));
}

TEST_CASE("config round trip and validation") {
  const io::RunConfig d;
  const io::RunConfig back = io::config_from_json(io::to_json(d));
  CHECK(io::canonical_dump(io::to_json(back)) == io::canonical_dump(io::to_json(d)));
  CHECK(d.wants("csv"));

  CHECK_THROWS_AS(io::config_from_json(Json::parse(R"({"depht": 6})")), ConfigError);
  CHECK_THROWS_AS(io::config_from_json(Json::parse(R"({"construction": {"lambda": 4}})")), ConfigError);
  CHECK_THROWS_AS(io::config_from_json(Json::parse(R"({"grid": {"resolution": [513, 4]}})")), ConfigError);
  CHECK_THROWS_AS(io::config_from_json(Json::parse(R"({"construction": {"lambda_inf": 2.5}})")), ConfigError);
  CHECK_THROWS_AS(io::config_from_json(Json::parse(R"({"depth": "six"})")), ConfigError);
  CHECK_THROWS_AS(io::load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("float formatting") {
  CHECK(io::format_double(0.1) == "0.10000000000000001");
  CHECK(io::format_double(std::nan("")) == "");
  CHECK(std::stod(io::format_double(std::log(3.0))) == std::log(3.0));
}

TEST_CASE("grid csv rows") {
  std::vector<GridRow> rows(3);
  rows[0].w = {1.5, 1.25};
  rows[0].result.status = SpectrumStatus::InteriorAttained;
  rows[0].result.value = 0.5;
  rows[0].result.dual_point = {1.0, -2.0};
  rows[1].w = {0.0, 0.0};
  rows[1].result.status = SpectrumStatus::Infeasible;
  rows[2].w = {2.0, 1.0};
  rows[2].error = "boom";
  const std::string csv = io::grid_csv(rows);
  CHECK(csv ==
        "w1,w2,H,status,p,q\n"
        "1.5,1.25,0.5,interior-attained,1,-2\n"
        "0,0,,infeasible,,\n"
        "2,1,,failed,,\n");
}

TEST_CASE("svg viewBox covers the data with padding") {
  io::SvgPolygon sq;
  sq.points = {{0, 0}, {2, 0}, {2, 1}, {0, 1}};
  const std::string svg = io::render_svg({sq}, {{{1, 0.5}, "c"}});
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("version=\"1.1\"") != std::string::npos);
  std::smatch m;
  REQUIRE(std::regex_search(svg, m, std::regex(R"re(viewBox="([-0-9.e]+) ([-0-9.e]+) ([-0-9.e]+) ([-0-9.e]+)")re")));
  const double x = std::stod(m[1]), w = std::stod(m[3]), h = std::stod(m[4]);
  CHECK(x < 0.0);
  CHECK(w > 2.0);
  CHECK(h > 1.0);
  CHECK(svg == io::render_svg({sq}, {{{1, 0.5}, "c"}}));
}

TEST_CASE("json output is deterministic") {
  const ConstructionParams p = default_params();
  const VertexFamily f = make_vertices(p, 3);
  const auto hull = value_hull(p, 5);
  const std::string a = io::canonical_dump(io::to_json(f, hull));
  CHECK(a == io::canonical_dump(io::to_json(f, hull)));
  const Json j = Json::parse(a);
  CHECK(j.contains("w0"));
  CHECK(io::canonical_dump(j) == a);
}
