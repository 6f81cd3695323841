import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilevel_ds.bench.problems import p1, p2, p6, p8
from bilevel_ds.core import BilevelProblem, EvalLedger, ProblemMetadata, SolverConfig, evaluate_reduced
from bilevel_ds.ds_directional import (
    DirectionalState,
    extrapolate,
    gen_directions,
    poll,
    run_directional,
)
from bilevel_ds.errors import BudgetExhausted, InvalidConfig
from bilevel_ds.halton import sphere_point
from bilevel_ds.lower_level import ExactOracle, InjectedErrorOracle
from bilevel_ds.stationarity import bound_violations, smooth_bound, success_count_bound
from bilevel_ds.trace import read_trace


def square_problem():
    # F(x) = x^2 through the trivial lower level y(x) = x
    return BilevelProblem(
        name="square", n_x=1, n_y=1,
        upper=lambda x, y: float(y[0] ** 2),
        lower=lambda x, z: float((z[0] - x[0]) ** 2),
        lower_grad_y=lambda x, z: 2.0 * (z - x),
        analytic_lower=lambda x: np.array(x, float),
        analytic_F_grad=lambda x: 2.0 * np.asarray(x, float),
        meta=ProblemMetadata(L_f=10.0, L=2.0, c_g=2.0, L_g=2.0, f_low=0.0),
    )


def state_at(problem, x, alpha, ledger, oracle=None):
    y, F = evaluate_reduced(problem, np.asarray(x, float), oracle or ExactOracle(), ledger)
    return DirectionalState(np.asarray(x, float), y, F, alpha)


def success_events(trace):
    return trace.n_successes + trace.n_expansions


# --------------------------------------------------------------------------
# directions
# --------------------------------------------------------------------------

def test_coordinate_directions():
    D = gen_directions("coordinate", 2, 0, None)
    assert D.dirs.tolist() == [[1, 0], [0, 1], [-1, 0], [0, -1]]
    assert D.kappa_hint == pytest.approx(1 / math.sqrt(2))


def test_random_directions_are_unit_pair():
    rng = np.random.default_rng(3)
    D = gen_directions("random", 3, 0, rng)
    assert len(D) == 2
    assert np.allclose(np.linalg.norm(D.dirs, axis=1), 1.0, atol=1e-12)
    assert np.allclose(D.dirs.sum(axis=0), 0.0)


def test_dense_directions_pair_from_halton():
    D = gen_directions("dense", 3, 4, None)
    assert np.array_equal(D.dirs[0], sphere_point(5, 3))
    assert np.array_equal(D.dirs[1], -sphere_point(5, 3))


def test_dense_directions_fill_the_circle():
    ang = np.sort([math.atan2(*sphere_point(k, 2)[::-1]) % (2 * math.pi) for k in range(1, 10_001)])
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * math.pi]]))
    assert math.degrees(gaps.max()) < 5.0


def test_unknown_mode():
    with pytest.raises(ValueError):
        gen_directions("spiral", 2, 0, None)
    with pytest.raises(InvalidConfig):
        run_directional(p1(), SolverConfig.mesh_defaults(), np.ones(2), ExactOracle())


# --------------------------------------------------------------------------
# poll
# --------------------------------------------------------------------------

def test_poll_finds_first_success():
    P = p1()
    led = EvalLedger(50)
    s = state_at(P, [1.0, 0.0], 0.5, led)
    out = poll(s, P, ExactOracle(), SolverConfig(), gen_directions("coordinate", 2, 0, None), led)
    assert out.success
    assert out.d.tolist() == [-1.0, 0.0]
    assert out.F_new == 0.5
    assert led.upper_evals == 4  # start + three poll points


@pytest.mark.parametrize("alpha", [1.0, 0.25, 1e-3])
def test_poll_fails_at_minimizer(alpha):
    P = p1()
    led = EvalLedger(50)
    s = state_at(P, [0.0, 0.0], alpha, led)
    out = poll(s, P, ExactOracle(), SolverConfig(), gen_directions("coordinate", 2, 0, None), led)
    assert not out.success
    assert led.upper_evals == 5


def test_poll_budget_exhausted():
    P = p1()
    led = EvalLedger(1)
    s = state_at(P, [1.0, 1.0], 0.5, led)
    with pytest.raises(BudgetExhausted):
        poll(s, P, ExactOracle(), SolverConfig(), gen_directions("coordinate", 2, 0, None), led)


def test_poll_skips_nan_directions():
    P = BilevelProblem(
        name="half-nan", n_x=1, n_y=1,
        upper=lambda x, y: float("nan") if x[0] > 1.2 else float(y[0] ** 2),
        lower=lambda x, z: float((z[0] - x[0]) ** 2),
        lower_grad_y=lambda x, z: 2.0 * (z - x),
        analytic_lower=lambda x: np.array(x, float),
    )
    led = EvalLedger(10)
    s = state_at(P, [1.0], 0.5, led)
    out = poll(s, P, ExactOracle(), SolverConfig(), gen_directions("coordinate", 1, 0, None), led)
    assert out.success and out.x_new[0] == 0.5
    assert led.upper_evals == 3


# --------------------------------------------------------------------------
# extrapolation
# --------------------------------------------------------------------------

def test_extrapolation_chain():
    P = square_problem()
    led = EvalLedger(50)
    s = state_at(P, [-2.0], 0.5, led)
    x, y, F, a, j = extrapolate(s, P, ExactOracle(), SolverConfig(), np.array([1.0]), led)
    assert x[0] == 0.0 and F == 0.0 and a == 2.0 and j == 2
    # x0, -1.5, -1, 0 and the rejected 2
    assert led.upper_evals == 5


def test_extrapolation_first_expansion_fails():
    P = square_problem()
    led = EvalLedger(50)
    s = state_at(P, [-2.0], 2.0, led)
    x, y, F, a, j = extrapolate(s, P, ExactOracle(), SolverConfig(), np.array([1.0]), led)
    assert x[0] == 0.0 and a == 2.0 and j == 0


def test_extrapolation_disabled_with_unit_gamma():
    P = square_problem()
    led = EvalLedger(50)
    s = state_at(P, [-2.0], 0.5, led)
    x, y, F, a, j = extrapolate(s, P, ExactOracle(), SolverConfig(gamma=1.0), np.array([1.0]), led)
    assert x[0] == -1.5 and a == 0.5 and j == 0
    assert led.upper_evals == 2


def test_extrapolation_budget_carries_best():
    P = square_problem()
    led = EvalLedger(3)
    s = state_at(P, [-2.0], 0.5, led)
    with pytest.raises(BudgetExhausted) as info:
        extrapolate(s, P, ExactOracle(), SolverConfig(), np.array([1.0]), led)
    x, y, F, a, j = info.value.best
    assert x[0] == -1.0 and a == 1.0 and j == 1


# --------------------------------------------------------------------------
# full runs
# --------------------------------------------------------------------------

def test_run_p1_reaches_floor():
    tr = run_directional(p1(), SolverConfig(), np.array([1.0, 1.0]), ExactOracle())
    assert tr.termination == "floor"
    assert np.linalg.norm(tr.final.x) <= 1e-4
    assert tr.upper_evals <= 500


def test_run_from_minimizer_never_moves():
    tr = run_directional(p1(), SolverConfig(), np.zeros(2), ExactOracle())
    assert tr.termination == "floor"
    assert tr.n_successes == 0
    assert all(np.array_equal(r.x, np.zeros(2)) for r in tr.rows)
    alphas = [r.alpha for r in tr.rows[1:]]
    assert alphas[:3] == [1.0, 0.5, 0.25]
    assert alphas[-1] == alphas[-2] == 1e-6


def test_run_budget_termination_keeps_best():
    tr = run_directional(p2(), SolverConfig(budget=30), np.array([1.0, -1.0]), ExactOracle())
    assert tr.termination == "budget"
    assert tr.upper_evals == 30
    assert tr.final.F_tilde == tr.best_F


def test_dense_mode_stops_only_at_budget():
    cfg = SolverConfig(direction_mode="dense", budget=120)
    tr = run_directional(p8(), cfg, np.array([0.3, 0.2]), ExactOracle())
    assert tr.termination == "budget"


def test_max_iter_cap():
    tr = run_directional(p1(), SolverConfig(max_iter=5), np.ones(2), ExactOracle())
    assert tr.termination == "max_iter" and tr.n_iterations == 5


def test_determinism_and_csv_round_trip(tmp_path):
    cfg = SolverConfig(direction_mode="random", seed=42)
    a = run_directional(p2(), cfg, np.array([0.5, 0.5]), InjectedErrorOracle(1e-3, seed=1))
    b = run_directional(p2(), cfg, np.array([0.5, 0.5]), InjectedErrorOracle(1e-3, seed=1))
    assert a.to_csv() == b.to_csv()
    path = a.write_csv(tmp_path / "t.csv")
    back = read_trace(path)
    assert back.to_csv() == a.to_csv()
    assert back.final.F_tilde == a.final.F_tilde


def test_final_gradient_bound_after_floor():
    P = p1()
    cfg = SolverConfig(eps_oracle=1e-4, alpha_min=1e-2)
    tr = run_directional(P, cfg, np.array([0.9, -0.4]), InjectedErrorOracle(1e-4, seed=2))
    assert tr.termination == "floor"
    bound = smooth_bound(cfg, P.meta, 1 / math.sqrt(2))
    assert np.linalg.norm(P.analytic_F_grad(tr.final.x)) <= bound


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["coordinate", "random", "dense"]),
       st.lists(st.floats(-1, 1), min_size=2, max_size=2),
       st.integers(0, 1000),
       st.sampled_from([0.0, 1e-4, 1e-2]))
def test_run_invariants(mode, x0, seed, eps):
    P = p2()
    cfg = SolverConfig(direction_mode=mode, seed=seed, alpha_min=1e-4, eps_oracle=eps, budget=300)
    tr = run_directional(P, cfg, np.array(x0), InjectedErrorOracle(eps, seed=seed))
    Fs = [r.F_tilde for r in tr.rows]
    # monotone, with margin rho(alpha_k) on successes
    for prev, r in zip(tr.rows, tr.rows[1:]):
        if r.success:
            assert r.F_tilde < prev.F_tilde - 0.5 * cfg.c * r.alpha ** 2
        else:
            assert r.F_tilde == prev.F_tilde
    assert Fs == sorted(Fs, reverse=True)
    assert all(r.alpha >= cfg.alpha_min for r in tr.rows)
    assert tr.upper_evals <= cfg.budget
    assert success_events(tr) <= success_count_bound(tr.F0, 0.0, P.meta.L_f, eps, cfg.c, cfg.alpha_min)
    checked, bad = bound_violations(tr, P)
    assert not bad


def test_successful_alpha_within_expansion_range():
    tr = run_directional(p6(), SolverConfig(), np.array([-1.7]), ExactOracle())
    for prev, r in zip(tr.rows[1:], tr.rows[2:]):
        if prev.success:
            assert prev.alpha <= r.alpha <= prev.alpha * 2.0 ** prev.expansions
