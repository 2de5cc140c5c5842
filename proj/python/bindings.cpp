#include "lyapspec/construction.hpp"
#include "lyapspec/errors.hpp"
#include "lyapspec/horseshoe.hpp"
#include "lyapspec/spectrum.hpp"
#include "lyapspec/thermo.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace lyap;

namespace {

// Points cross the boundary as plain (x, y) tuples.
py::tuple pt(Vec2 v) { return py::make_tuple(v.x, v.y); }

py::list pts(const std::vector<Vec2>& vs) {
  py::list out;
  for (Vec2 v : vs) out.append(pt(v));
  return out;
}

Vec2 vec(std::pair<double, double> p) { return {p.first, p.second}; }

py::dict result_dict(const SpectrumResult& r) {
  py::dict d;
  d["value"] = r.value;
  d["status"] = to_string(r.status);
  d["dual_point"] = py::make_tuple(r.dual_point.p, r.dual_point.q);
  d["gap_estimate"] = r.gap_estimate;
  d["grad_norm"] = r.grad_norm;
  d["iterations"] = r.iterations;
  return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Lyapunov and entropy spectra of a horseshoe with a discontinuous entropy spectrum";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<NumericalFailure>(m, "NumericalFailure", PyExc_RuntimeError);
  py::register_exception<VerificationFailure>(m, "VerificationFailure", PyExc_RuntimeError);

  py::class_<ConstructionParams>(m, "Params")
      .def(py::init([](py::kwargs kw) {
        ConstructionParams p = default_params();
        auto obj = py::cast(&p, py::return_value_policy::reference);
        for (auto [k, v] : kw) {
          const auto name = k.cast<std::string>();
          if (!py::hasattr(obj, name.c_str())) throw ConfigError("unknown parameter '" + name + "'");
          obj.attr(name.c_str()) = v;
        }
        p.validate();
        return p;
      }))
      .def_readwrite("lambda_inf", &ConstructionParams::lambda_inf)
      .def_readwrite("delta_inf", &ConstructionParams::delta_inf)
      .def_readwrite("delta_0", &ConstructionParams::delta_0)
      .def_readwrite("alpha", &ConstructionParams::alpha)
      .def_readwrite("theta", &ConstructionParams::theta)
      .def_readwrite("C", &ConstructionParams::C)
      .def_readwrite("h_beta", &ConstructionParams::h_beta)
      .def_readwrite("x_scale", &ConstructionParams::x_scale)
      .def_readwrite("N_default", &ConstructionParams::N_default)
      .def_readwrite("K_default", &ConstructionParams::K_default)
      .def_readwrite("eps_0", &ConstructionParams::eps_0)
      .def_property_readonly("a", &ConstructionParams::a)
      .def_property_readonly("b", &ConstructionParams::b)
      .def("validate", &ConstructionParams::validate);

  m.def("vertices", [](const ConstructionParams& p, int L) {
    const VertexFamily f = make_vertices(p, L);
    py::dict d;
    d["w0"] = pt(f.w0);
    d["w_inf"] = pt(f.w_inf);
    d["w"] = pts(f.w);
    d["v"] = pts(f.v);
    d["u"] = pts(f.u);
    return d;
  }, py::arg("params"), py::arg("L"));

  m.def("pressure", [](double p, double q, const ConstructionParams& params, int N) {
    return pressure(p, q, params, N);
  }, py::arg("p"), py::arg("q"), py::arg("params"), py::arg("N"));

  m.def("equilibrium", [](double p, double q, const ConstructionParams& params, int N) {
    const EquilibriumData e = equilibrium(p, q, params, N);
    py::dict d;
    d["log_rho"] = e.log_rho;
    d["rv"] = pt(e.rv);
    d["entropy"] = e.entropy;
    d["vertex_measure"] = e.vertex_measure;
    return d;
  }, py::arg("p"), py::arg("q"), py::arg("params"), py::arg("N"));

  m.def("depth_rotation_set", [](const ConstructionParams& p, int N) { return pts(depth_rotation_set(p, N).vertices); },
        py::arg("params"), py::arg("N"));
  m.def("rotation_set_hull", [](int n_max, const ConstructionParams& p) { return pts(rotation_set_hull(n_max, p).vertices); },
        py::arg("n_max"), py::arg("params"));

  m.def("entropy_spectrum", [](std::pair<double, double> w, const ConstructionParams& p, int N, double radius, bool check) {
    SpectrumQuery q{vec(w), N};
    q.dual_radius = radius;
    py::gil_scoped_release nogil;
    const SpectrumResult r = check ? entropy_spectrum_checked(q, p) : entropy_spectrum_dual(q, p);
    py::gil_scoped_acquire gil;
    return result_dict(r);
  }, py::arg("w"), py::arg("params"), py::arg("N"), py::arg("dual_radius") = 200.0, py::arg("check") = false);

  m.def("entropy_primal", [](std::pair<double, double> w, const ConstructionParams& p, int N) {
    const PrimalResult r = entropy_spectrum_primal({vec(w), N}, p);
    py::dict d;
    d["feasible"] = r.feasible;
    d["value"] = r.value;
    d["max_residual"] = r.max_residual;
    d["active_edges"] = r.active_edges;
    return d;
  }, py::arg("w"), py::arg("params"), py::arg("N"));

  m.def("probe", [](int L, int N, const ConstructionParams& p, double radius) {
    const ProbeReport r = discontinuity_probe(L, N, p, radius);
    py::dict d;
    d["h_w_inf"] = r.h_w_inf;
    d["max_upper"] = r.max_upper;
    d["gap"] = r.gap;
    py::list entries;
    for (const ProbeEntry& e : r.entries) {
      py::dict x = result_dict(e.upper);
      x["ell"] = e.ell;
      x["w"] = pt(e.w);
      x["distance_to_w_inf"] = e.distance_to_w_inf;
      entries.append(x);
    }
    d["entries"] = entries;
    return d;
  }, py::arg("L"), py::arg("N"), py::arg("params"), py::arg("dual_radius") = 200.0);

  m.def("verify_stage", [](const ConstructionParams& p, int K, int n_max) {
    std::vector<std::string> log;
    const StageMap s = [&] {
      py::gil_scoped_release nogil;
      return build_stage(p, K, {}, &log);
    }();
    const VerificationReport r = verify_phi_L(s, n_max);
    py::dict d;
    d["x_scale"] = s.params().x_scale;
    d["log"] = log;
    d["passed"] = r.passed;
    d["total"] = r.rows.size();
    d["max_deviation"] = r.max_deviation;
    py::dict rows;
    for (const ItineraryCheck& c : r.rows) rows[py::str(c.word)] = pt(c.exponents);
    d["exponents"] = rows;
    return d;
  }, py::arg("params"), py::arg("K"), py::arg("n_max"));
}
