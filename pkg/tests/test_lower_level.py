import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilevel_ds.bench.problems import p1, p2, p5, p7
from bilevel_ds.core import BilevelProblem, ProblemMetadata
from bilevel_ds.errors import MissingAnalyticLower, MissingMetadata, NonFiniteValue
from bilevel_ds.lower_level import (
    GradientDescentOracle,
    gd_oracle,
    injected_error_oracle,
    iteration_cap,
    make_oracle,
)


def scalar_problem():
    # g(x, z) = (z - x)^2
    return BilevelProblem(
        name="scalar", n_x=1, n_y=1,
        upper=lambda x, y: float(y[0] ** 2),
        lower=lambda x, z: float((z[0] - x[0]) ** 2),
        lower_grad_y=lambda x, z: 2.0 * (z - x),
        analytic_lower=lambda x: np.array(x, float),
        meta=ProblemMetadata(L_g=2.0, c_g=2.0),
    )


def diag_problem():
    A = np.diag([1.0, 2.0])
    return BilevelProblem(
        name="diag", n_x=2, n_y=2,
        upper=lambda x, y: float(y @ y),
        lower=lambda x, z: float((z - A @ x) @ (z - A @ x)),
        lower_grad_y=lambda x, z: 2.0 * (z - A @ x),
        analytic_lower=lambda x: A @ x,
        meta=ProblemMetadata(L_g=2.0, c_g=2.0),
    )


def test_gd_one_step_exact():
    rep = gd_oracle(scalar_problem(), np.array([1.0]), 0.1, y0=np.array([0.0]))
    assert rep.y_tilde[0] == 1.0
    assert rep.final_grad_norm == 0.0
    assert rep.converged_by == "grad_threshold"
    assert rep.inner_iters == 1


def test_iteration_cap_formula():
    assert iteration_cap(2.0, 2.0, 1.0, 0.1) == 100
    assert iteration_cap(2.0, 2.0, 0.0, 0.1) == 0


def test_gd_diag_example():
    rep = gd_oracle(diag_problem(), np.array([1.0, 1.0]), 1e-3, y0=np.zeros(2))
    assert np.linalg.norm(rep.y_tilde - np.array([1.0, 2.0])) <= 1e-3


def test_gd_needs_metadata():
    P = BilevelProblem("m", 1, 1, None, lambda x, z: 0.0, lambda x, z: z)
    with pytest.raises(MissingMetadata):
        gd_oracle(P, np.zeros(1), 0.1)


def test_gd_rejects_start_outside_box():
    with pytest.raises(ValueError):
        gd_oracle(p5(), np.zeros(2), 0.1, y0=np.array([3.0, 0.0]))


def test_gd_nan_gradient():
    P = BilevelProblem("nan", 1, 1, None, lambda x, z: 1.0, lambda x, z: np.array([np.nan]),
                       meta=ProblemMetadata(L_g=1.0, c_g=1.0))
    with pytest.raises(NonFiniteValue):
        gd_oracle(P, np.zeros(1), 0.1)


def test_gd_cap_is_respected():
    rep = gd_oracle(p2(), np.array([1.0, 1.0]), 1e-8, max_inner=5)
    assert rep.inner_iters <= rep.cap_K == 5
    assert rep.converged_by == "iter_cap"


@pytest.mark.parametrize("factory", [p1, p2, p5, p7])
def test_oracle_contract_random_points(factory):
    P = factory()
    rng = np.random.default_rng(11)
    lo, hi = P.start_box
    for eps in (1e-2, 1e-4):
        for _ in range(200):
            x = lo + (hi - lo) * rng.random(P.n_x)
            rep = gd_oracle(P, x, eps)
            assert rep.converged_by == "grad_threshold"
            assert np.linalg.norm(rep.y_tilde - P.analytic_lower(x)) <= eps


@pytest.mark.parametrize("factory", [p1, p2, p7])
def test_descent_and_min_selection(factory):
    # record the unconstrained iterates and check monotone g and argmin selection
    P = factory()
    L_g = P.meta.L_g
    x = np.full(P.n_x, 0.8)
    y = np.zeros(P.n_y)
    gs, norms = [], []
    for _ in range(40):
        gs.append(P.lower(x, y))
        norms.append(np.linalg.norm(P.lower_grad_y(x, y)))
        y = y - P.lower_grad_y(x, y) / L_g
    assert all(b <= a + 1e-12 for a, b in zip(gs, gs[1:]))
    rep = gd_oracle(P, x, 1e-30, y0=np.zeros(P.n_y), max_inner=39)
    assert rep.final_grad_norm == pytest.approx(min(norms), rel=1e-9, abs=1e-300)


def test_final_grad_norm_is_recomputed_at_output():
    P = p2()
    rep = gd_oracle(P, np.array([0.3, -0.6]), 1e-3)
    assert rep.final_grad_norm == pytest.approx(np.linalg.norm(P.lower_grad_y(np.array([0.3, -0.6]), rep.y_tilde)))


def test_injected_zero_error_is_exact():
    P = p2()
    x = np.array([0.2, 0.4])
    assert np.array_equal(injected_error_oracle(P, x, 0.0).y_tilde, P.analytic_lower(x))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.integers(0, 2**32))
def test_injected_error_has_exact_magnitude(xs, seed):
    P = p1()
    x = np.array(xs)
    y = injected_error_oracle(P, x, 0.1, seed=seed).y_tilde
    assert abs(np.linalg.norm(y - P.analytic_lower(x)) - 0.1) <= 1e-15
    again = injected_error_oracle(P, x, 0.1, seed=seed).y_tilde
    assert np.array_equal(y, again)


def test_injected_needs_analytic_lower():
    P = BilevelProblem("o", 1, 1, None, None, None)
    with pytest.raises(MissingAnalyticLower):
        injected_error_oracle(P, np.zeros(1), 0.1)


def test_oracle_objects():
    assert isinstance(make_oracle("gd", 1e-3), GradientDescentOracle)
    assert make_oracle("exact", 0.0).describe() == {"kind": "exact", "eps": 0.0}
    with pytest.raises(ValueError):
        make_oracle("magic", 0.1)
    # warm start input gets projected into the box
    rep = GradientDescentOracle(1e-4)(p5(), np.array([0.5, 0.5]), y0=np.array([9.0, 9.0]))
    assert np.linalg.norm(rep.y_tilde - 0.5) <= 1e-4
