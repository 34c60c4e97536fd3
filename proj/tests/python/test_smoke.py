import math

import numpy as np
import pytest

import nsg


def line_problem(kernel_constant=1.0):
    g = nsg.GroupSpec.euclidean(1)
    return nsg.ProblemParams(nsg.KernelSpec(g, 0.5, 2.0, kernel_constant), 3.0, allow_borderline=True)


def test_heisenberg_group_law():
    h = nsg.GroupSpec.heisenberg1()
    assert h.Q == 4
    a, b = [1.0, 2.0, 3.0], [-0.5, 0.25, 1.0]
    c = nsg.compose(h, a, b)
    assert c == pytest.approx([0.5, 2.25, 4.0 + (1.0 * 0.25 - 2.0 * -0.5) / 2])
    assert nsg.compose(h, a, nsg.inverse(h, a)) == pytest.approx([0, 0, 0])
    assert nsg.qnorm(h, nsg.dilate(h, 3.0, a)) == pytest.approx(3.0 * nsg.qnorm(h, a))


def test_invalid_problem_raises():
    g = nsg.GroupSpec.euclidean(1)
    with pytest.raises(ValueError, match="Q > ps"):
        nsg.ProblemParams(nsg.KernelSpec(g, 0.5, 2.0), 3.0)


def test_seminorm_matches_oracle():
    d = nsg.BoxDomain(nsg.GroupSpec.heisenberg1(), [20.0, 20.0, 100.0], [8, 8, 8])
    k = nsg.KernelSpec(d.group, 0.5, 2.0)
    rng = np.random.default_rng(3)
    u = nsg.GridFunction(d, rng.uniform(-1, 1, d.size))
    fast = nsg.NonlocalOperator(d, k).seminorm(u)
    assert fast == pytest.approx(nsg.oracle_seminorm(u, k), rel=1e-12)


def test_soliton_residual_is_small():
    d = nsg.BoxDomain(nsg.GroupSpec.euclidean(1), [40.0], [1024])
    op = nsg.NonlocalOperator(d, line_problem(1 / math.pi).kernel)
    u = nsg.sample(d, lambda x: 2 / (1 + x[0] ** 2))
    r = op.residual(u, 3.0)
    assert np.sqrt(np.mean(r**2)) < 5e-3


def test_line_ground_state_and_constants(tmp_path):
    pp = line_problem()
    d = nsg.BoxDomain(nsg.GroupSpec.euclidean(1), [40.0], [256])
    opts = nsg.SolverOptions()
    opts.tol_grad = 1e-7
    res = nsg.solve_ground_state(pp, d, opts)
    assert res.converged
    assert res.d > 0
    rep = res.to_dict()
    assert rep["identity_residuals"]["r3"] < 0.02
    assert rep["identity_residuals"]["target1"] == pytest.approx(0.5)

    f = nsg.EnergyFunctional(pp, d)
    assert f.rayleigh(res.phi) == pytest.approx(res.d, rel=1e-10)
    c = nsg.compute_constants(f, res.phi, res.d, trials=5)
    assert c["cross_residual"] < 1e-12
    assert c["c_gn_inv_routeA"] > 0 and c["c_gn_inv_routeB"] > 0

    path = tmp_path / "phi.nsgf"
    res.phi.save(path)
    back = nsg.GridFunction.load(path)
    assert back.domain == d
    np.testing.assert_array_equal(back.values, res.phi.values)


def test_group_property_suite():
    rows = nsg.check_group_properties(200, 11)
    assert rows and all(r["passed"] for r in rows)
