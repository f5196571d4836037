import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bregbayes.errors import InvalidArgumentError, UnsupportedOperationError
from bregbayes.models import make_model
from bregbayes.solver import SolverConfig, certify_optimality, solve_map

from conftest import ZOO_CASES, zoo_model


def test_gaussian_map():
    res = solve_map(make_model("gaussian", {"mu": [1.0, 2.0]}))
    assert res.converged
    np.testing.assert_allclose(res.estimate, [1.0, 2.0], atol=1e-8)


def test_lasso_soft_threshold():
    res = solve_map(make_model("lasso_1d", {"y": 2.0, "lam": 1.0, "sigma": 1.0}))
    assert abs(res.estimate[0] - 1.0) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(0.0, 3.0), st.floats(0.3, 3.0))
def test_lasso_matches_closed_form(y, lam, sigma):
    res = solve_map(make_model("lasso_1d", {"y": y, "lam": lam, "sigma": sigma}))
    closed = np.sign(y) * max(abs(y) - lam * sigma**2, 0.0)
    assert abs(res.estimate[0] - closed) < 1e-8


def test_exponential_cone_map_at_origin():
    res = solve_map(make_model("exponential_cone", {"n": 3}), SolverConfig(method="projected_gradient"))
    np.testing.assert_array_equal(res.estimate, np.zeros(3))


def test_certify_examples():
    g = make_model("gaussian", {"mu": [1.0, 2.0], "cov": 1.0})
    assert certify_optimality(g, [1.1, 2.0], 1.0) == pytest.approx(0.1, rel=1e-12)
    assert certify_optimality(make_model("lasso_1d"), [1.0]) < 1e-8


def test_certify_true_map(zoo):
    if zoo.true_map is None:
        pytest.skip("no closed-form MAP")
    assert certify_optimality(zoo, zoo.true_map) < 1e-8


@pytest.mark.parametrize("name", sorted(ZOO_CASES))
def test_solver_matches_reference(name):
    inst = zoo_model(name)
    res = solve_map(inst)
    assert res.converged and res.iterations <= 10_000
    assert res.residual <= 1e-10
    if inst.true_map is not None:
        assert np.linalg.norm(res.estimate - inst.true_map) <= 1e-6


@pytest.mark.parametrize("name", sorted(ZOO_CASES))
def test_monotone_descent(name):
    inst = zoo_model(name)
    res = solve_map(inst, SolverConfig(method="proximal_gradient"), x0=np.full(inst.dim, 1.5))
    tr = np.asarray(res.trace)
    assert np.all(np.diff(tr) <= 1e-12 * (1 + np.abs(tr[:-1])))


@pytest.mark.parametrize("name", sorted(ZOO_CASES))
def test_fista_agrees_with_proximal_gradient(name):
    inst = zoo_model(name)
    x0 = np.full(inst.dim, 0.8)
    # the quartic minimiser is degenerate: a residual r only pins x to (r / 4)^(1/3)
    tol = 1e-20 if name == "quartic" else 1e-10
    a = solve_map(inst, SolverConfig(method="proximal_gradient", tol=tol), x0=x0)
    b = solve_map(inst, SolverConfig(method="fista", tol=tol), x0=x0)
    assert a.converged and b.converged
    assert np.linalg.norm(a.estimate - b.estimate) <= 1e-6


def test_gradient_method_requires_smooth():
    with pytest.raises(UnsupportedOperationError):
        solve_map(make_model("laplace_iid"), SolverConfig(method="gradient"))


def test_projected_gradient_requires_indicator():
    with pytest.raises(UnsupportedOperationError):
        solve_map(make_model("lasso_1d"), SolverConfig(method="projected_gradient"))


def test_step_outside_stability_range():
    with pytest.raises(InvalidArgumentError):
        solve_map(make_model("gaussian"), SolverConfig(step=2.0))


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        SolverConfig(method="newton")
    with pytest.raises(InvalidArgumentError):
        SolverConfig(tol=0.0)
    with pytest.raises(InvalidArgumentError):
        SolverConfig(step=-1.0)


def test_nonconvergence_is_reported():
    res = solve_map(make_model("exp_linear"), SolverConfig(max_iter=2, tol=1e-14), x0=[3.0])
    assert not res.converged
    assert res.residual > 1e-14


def test_uniqueness_flag():
    assert solve_map(make_model("gaussian")).uniqueness_certified
    assert not solve_map(make_model("exponential_cone")).uniqueness_certified


def test_result_dict_fields():
    d = solve_map(make_model("quartic")).to_dict("quartic")
    assert list(d) == ["model", "method", "estimate", "objective", "residual", "iterations", "converged"]
