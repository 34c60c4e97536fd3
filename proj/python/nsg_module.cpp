// Python bindings. Reports are returned as plain dicts.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "nsg/checks.hpp"
#include "nsg/config.hpp"
#include "nsg/constants.hpp"
#include "nsg/error.hpp"
#include "nsg/grid.hpp"
#include "nsg/group.hpp"
#include "nsg/nonlocal.hpp"
#include "nsg/parallel.hpp"
#include "nsg/variational.hpp"

namespace py = pybind11;
using namespace nsg;

namespace {

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

std::vector<double> as_vector(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

py::array_t<double> as_array(std::span<const double> v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

// Values reshaped to the grid (row-major, last axis fastest).
py::array_t<double> grid_array(const GridFunction& u) {
  std::vector<py::ssize_t> shape;
  for (int m : u.domain().points_per_axis()) shape.push_back(m);
  py::array_t<double> out(shape);
  std::copy(u.values().begin(), u.values().end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_nsg, m) {
  m.doc() = "Fractional p-sublaplacian ground states on H^1 and R^N, and best constants";

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);

  py::enum_<GroupKind>(m, "GroupKind").value("Euclidean", GroupKind::Euclidean).value("Heisenberg1", GroupKind::Heisenberg1);

  py::class_<GroupSpec>(m, "GroupSpec")
      .def_static("euclidean", &GroupSpec::euclidean, py::arg("dim"))
      .def_static("heisenberg1", &GroupSpec::heisenberg1)
      .def_property_readonly("kind", &GroupSpec::kind)
      .def_property_readonly("dim", &GroupSpec::dim)
      .def_property_readonly("Q", &GroupSpec::homogeneous_dim)
      .def_property_readonly("name", &GroupSpec::name)
      .def_property_readonly("gauge", &GroupSpec::gauge_name)
      .def("__eq__", [](const GroupSpec& a, const GroupSpec& b) { return a == b; })
      .def("__repr__", [](const GroupSpec& g) { return "GroupSpec(" + g.name() + ", dim=" + std::to_string(g.dim()) + ")"; });

  m.def("compose", [](const GroupSpec& g, const GroupPoint& a, const GroupPoint& b) { return compose(g, a, b); });
  m.def("inverse", [](const GroupSpec& g, const GroupPoint& a) { return inverse(g, a); });
  m.def("dilate", [](const GroupSpec& g, double lam, const GroupPoint& a) { return dilate(g, lam, a); });
  m.def("qnorm", [](const GroupSpec& g, const GroupPoint& a) { return qnorm(g, a); });
  m.def("dist", [](const GroupSpec& g, const GroupPoint& a, const GroupPoint& b) { return dist(g, a, b); });

  py::class_<BoxDomain>(m, "BoxDomain")
      .def(py::init<GroupSpec, std::vector<double>, std::vector<int>>(), py::arg("group"), py::arg("half_widths"),
           py::arg("points_per_axis"))
      .def_static("gauge_box", &BoxDomain::gauge_box, py::arg("group"), py::arg("half_width"), py::arg("points"))
      .def_property_readonly("group", &BoxDomain::group)
      .def_property_readonly("half_widths", &BoxDomain::half_widths)
      .def_property_readonly("points_per_axis", &BoxDomain::points_per_axis)
      .def_property_readonly("spacings", &BoxDomain::spacings)
      .def_property_readonly("cell_volume", &BoxDomain::cell_volume)
      .def_property_readonly("size", &BoxDomain::size)
      .def("axis", [](const BoxDomain& d, int a) {
        std::vector<double> x;
        for (int k = 0; k < d.points_per_axis().at(static_cast<size_t>(a)); ++k) x.push_back(d.node_coord(a, k));
        return x;
      })
      .def("refined", &BoxDomain::refined)
      .def("__eq__", [](const BoxDomain& a, const BoxDomain& b) { return a == b; });

  py::class_<GridFunction>(m, "GridFunction")
      .def(py::init([](const BoxDomain& d, const py::array_t<double, py::array::c_style | py::array::forcecast>& v) {
             return GridFunction(d, as_vector(v));
           }),
           py::arg("domain"), py::arg("values"))
      .def_property_readonly("domain", &GridFunction::domain)
      .def_property_readonly("values", [](const GridFunction& u) { return grid_array(u); })
      .def("interpolate", [](const GridFunction& u, const std::vector<double>& x) { return u.interpolate(x); })
      .def("lp_norm_pow", [](const GridFunction& u, double p) { return lp_norm_pow(u, p); })
      .def("save", [](const GridFunction& u, const std::filesystem::path& p) { save(u, p); })
      .def_static("load", [](const std::filesystem::path& p) { return load(p); });

  m.def("sample", [](const BoxDomain& d, const std::function<double(std::vector<double>)>& f) {
    return sample(d, [&](std::span<const double> x) { return f({x.begin(), x.end()}); });
  });

  py::class_<KernelSpec>(m, "KernelSpec")
      .def(py::init([](const GroupSpec& g, double s, double p, double c) {
             KernelSpec k{g, s, p, c};
             k.validate();
             return k;
           }),
           py::arg("group"), py::arg("s"), py::arg("p"), py::arg("kernel_constant") = 1.0)
      .def_readonly("group", &KernelSpec::group)
      .def_readonly("s", &KernelSpec::s)
      .def_readonly("p", &KernelSpec::p)
      .def_readonly("kernel_constant", &KernelSpec::kernel_constant);

  py::class_<ProblemParams>(m, "ProblemParams")
      .def(py::init([](const KernelSpec& k, double q, bool borderline) {
             ProblemParams pp{k, q};
             pp.allow_borderline = borderline;
             pp.validate();
             return pp;
           }),
           py::arg("kernel"), py::arg("q"), py::arg("allow_borderline") = false)
      .def_readonly("kernel", &ProblemParams::kernel)
      .def_readonly("q", &ProblemParams::q)
      .def_property_readonly("Q", &ProblemParams::Q)
      .def_property_readonly("critical_exponent", &ProblemParams::critical_exponent)
      .def("to_dict", [](const ProblemParams& p) { return to_py(to_json(p)); });

  py::enum_<NearRule>(m, "NearRule")
      .value("Auto", NearRule::Auto)
      .value("GaugeBall", NearRule::GaugeBall)
      .value("CellBox", NearRule::CellBox);

  py::class_<NonlocalOptions>(m, "NonlocalOptions")
      .def(py::init<>())
      .def_readwrite("near_factor", &NonlocalOptions::near_factor)
      .def_readwrite("near_rule", &NonlocalOptions::near_rule)
      .def_readwrite("subcell_points", &NonlocalOptions::subcell_points);

  py::class_<NonlocalOperator>(m, "NonlocalOperator")
      .def(py::init<BoxDomain, KernelSpec, NonlocalOptions>(), py::arg("domain"), py::arg("kernel"),
           py::arg("options") = NonlocalOptions{})
      .def("seminorm", [](const NonlocalOperator& op, const GridFunction& u) { return op.seminorm(u.values()).total; })
      .def("gradient",
           [](const NonlocalOperator& op, const GridFunction& u) {
             std::vector<double> g(u.size());
             op.seminorm_with_gradient(u.values(), g);
             return as_array(g);
           })
      .def("pairing", [](const NonlocalOperator& op, const GridFunction& u, const GridFunction& v) {
        return op.pairing(u.values(), v.values());
      })
      .def("residual", [](const NonlocalOperator& op, const GridFunction& u, double q) {
        return as_array(operator_residual(op, u.values(), q));
      });

  m.def("oracle_seminorm", [](const GridFunction& u, const KernelSpec& k) {
    const NonlocalOperator op(u.domain(), k);
    return oracle_gagliardo_pp(u, k, op.exterior());
  });

  py::class_<EnergyFunctional>(m, "EnergyFunctional")
      .def(py::init<ProblemParams, BoxDomain, NonlocalOptions>(), py::arg("params"), py::arg("domain"),
           py::arg("options") = NonlocalOptions{})
      .def("energy", [](const EnergyFunctional& f, const GridFunction& u) { return to_py(to_json(f.energy(u.values()))); })
      .def("rayleigh", [](const EnergyFunctional& f, const GridFunction& u) { return f.rayleigh(u.values()); })
      .def("nehari_theta", [](const EnergyFunctional& f, const GridFunction& u) { return f.nehari_theta(u.values()); })
      .def("j_quotient", [](const EnergyFunctional& f, const GridFunction& u) { return j_quotient(f, u.values()); })
      .def("sobolev_quotient",
           [](const EnergyFunctional& f, const GridFunction& u) { return sobolev_quotient(f, u.values()); });

  py::enum_<InitKind>(m, "InitKind")
      .value("GaugeBump", InitKind::GaugeBump)
      .value("Gaussian", InitKind::Gaussian)
      .value("File", InitKind::File);

  py::class_<SolverOptions>(m, "SolverOptions")
      .def(py::init<>())
      .def_readwrite("max_iter", &SolverOptions::max_iter)
      .def_readwrite("tol_rel_R", &SolverOptions::tol_rel_R)
      .def_readwrite("tol_grad", &SolverOptions::tol_grad)
      .def_readwrite("init", &SolverOptions::init)
      .def_readwrite("init_scale", &SolverOptions::init_scale)
      .def_readwrite("continuation_levels", &SolverOptions::continuation_levels)
      .def_readwrite("rng_seed", &SolverOptions::rng_seed)
      .def_readwrite("lbfgs_memory", &SolverOptions::lbfgs_memory)
      .def_readwrite("nonlocal", &SolverOptions::nonlocal);

  py::class_<GroundStateResult>(m, "GroundStateResult")
      .def_readonly("phi", &GroundStateResult::phi)
      .def_readonly("d", &GroundStateResult::d)
      .def_readonly("converged", &GroundStateResult::converged)
      .def_readonly("message", &GroundStateResult::message)
      .def_readonly("iterations", &GroundStateResult::iterations)
      .def_readonly("weak_residual", &GroundStateResult::weak_residual)
      .def("to_dict", [](const GroundStateResult& r) { return to_py(to_json(r)); });

  m.def("solve_ground_state",
        [](const ProblemParams& p, const BoxDomain& d, const SolverOptions& o) {
          py::gil_scoped_release release;
          return solve_ground_state(p, d, o);
        },
        py::arg("params"), py::arg("domain"), py::arg("options") = SolverOptions{});

  m.def("c_gn_inverse_from_norm",
        [](const ProblemParams& p, double lp_pp) { return c_gn_inverse(p, ConstantSource::LpNorm, lp_pp); });
  m.def("c_s_inverse_from_norm",
        [](const ProblemParams& p, double lp_pp) { return c_s_inverse(p, ConstantSource::LpNorm, lp_pp); });
  m.def("c_gn_inverse_from_energy",
        [](const ProblemParams& p, double d) { return c_gn_inverse(p, ConstantSource::Energy, d); });
  m.def("c_s_inverse_from_energy",
        [](const ProblemParams& p, double d) { return c_s_inverse(p, ConstantSource::Energy, d); });
  m.def("c_s_log", &c_s_log, py::arg("params"), py::arg("d"));
  m.def("log_holder_gap", &log_holder_gap, py::arg("u"), py::arg("p"), py::arg("q"));
  m.def("holder_interpolation_gap", &holder_interpolation_gap, py::arg("u"), py::arg("p"), py::arg("r"), py::arg("q"));

  m.def("compute_constants",
        [](const EnergyFunctional& f, const GridFunction& phi, double d, int trials, uint64_t seed) {
          TrialOptions to;
          to.trials = trials;
          to.seed = seed;
          return to_py(to_json(compute_constants(f, phi, d, to)));
        },
        py::arg("functional"), py::arg("phi"), py::arg("d"), py::arg("trials") = 50, py::arg("seed") = 7);

  m.def("check_group_properties", [](int triples, uint64_t seed) {
    py::list out;
    for (const auto& c : check_group_properties(triples, seed)) out.append(to_py(to_json(c)));
    return out;
  });

  m.def("load_config", [](const std::filesystem::path& p) { return to_py(build_run_config(read_config_file(p)).echo); });

  m.def("set_num_threads", &set_num_threads);
  m.def("num_threads", &num_threads);
}
