import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilevel_ds.bench.experiment import (
    Cell,
    ExperimentConfig,
    load_experiment,
    run_experiment,
    score,
)
from bilevel_ds.bench.problems import get_problem, instances, p3, p5, suite
from bilevel_ds.bench.profiles import (
    INF,
    build_table,
    check_axioms,
    convergence_eval_count,
    eval_step,
)
from bilevel_ds.bench.svg import profile_svg
from bilevel_ds.core import SolverConfig
from bilevel_ds.lower_level import GradientDescentOracle
from bilevel_ds.solvers import default_config, run_solver
from bilevel_ds.trace import IterRecord, Trace


def toy_trace(Fs, evals):
    tr = Trace("P1", "coordinate-ds", SolverConfig(), {"kind": "exact", "eps": 0.0}, np.zeros(1))
    for k, (F, e) in enumerate(zip(Fs, evals)):
        tr.rows.append(IterRecord(k, e, k > 0, 1.0, F, np.zeros(1)))
    return tr


# --------------------------------------------------------------------------
# suite contract
# --------------------------------------------------------------------------

def test_suite_size_and_metadata():
    probs = suite()
    assert len(probs) >= 8
    assert len({p.name for p in probs}) == len(probs)
    for P in probs:
        m = P.meta
        assert m.L_f is not None and m.c_g is not None and m.L_g is not None and m.f_low is not None
        if m.smooth_true_objective:
            assert m.L is not None
        assert P.analytic_lower is not None and P.F_star is not None
        assert P.true_F(P.x_star) == pytest.approx(P.F_star, abs=1e-12)


def test_analytic_lower_solutions_are_stationary():
    for P in suite():
        rng = np.random.default_rng(4)
        lo, hi = P.start_box
        for _ in range(100):
            x = lo + (hi - lo) * rng.random(P.n_x)
            y = P.analytic_lower(x)
            g = P.lower_grad_y(x, y)
            if P.lower_box is not None:
                # projected gradient mapping vanishes at a box minimizer
                g = y - P.project(y - g / P.meta.L_g)
            assert np.linalg.norm(g) <= 1e-10, P.name


def test_p3_minimizer_soft_threshold():
    P = p3(2)
    assert P.x_star.tolist() == [0.0, 0.5]
    rng = np.random.default_rng(0)
    for _ in range(500):
        x = P.x_star + 0.2 * rng.standard_normal(2)
        assert P.true_F(x) >= P.F_star


def test_p5_minimizer_is_interior():
    P = p5()
    lo, hi = P.lower_box
    y = P.analytic_lower(P.x_star)
    assert np.all(y > lo) and np.all(y < hi)
    assert np.linalg.norm(P.analytic_F_grad(P.x_star)) <= 1e-12


def test_get_problem_dimensions():
    assert get_problem("P3-1d").n_x == 1
    assert get_problem("P8-3d").n_x == 3
    with pytest.raises(KeyError):
        get_problem("P9")
    with pytest.raises(KeyError):
        get_problem("P2-3d")


def test_instances_reproducible():
    P = get_problem("P2")
    a = [i.x0 for i in instances(P, 0)]
    b = [i.x0 for i in instances(P, 0)]
    c = [i.x0 for i in instances(P, 1)]
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert not np.array_equal(a[0], c[0])
    lo, hi = P.start_box
    assert all(np.all((lo <= x) & (x <= hi)) for x in a)


# --------------------------------------------------------------------------
# convergence test and profiles
# --------------------------------------------------------------------------

def test_convergence_count_examples():
    tr = toy_trace([10.0, 5.0, 1.0, 0.001], [1, 4, 9, 20])
    assert convergence_eval_count(tr, 0.0, 1e-3) == 20
    assert convergence_eval_count(tr, 0.0, 0.1) == 9
    assert convergence_eval_count(tr, 0.0, 1e-5) == INF
    assert convergence_eval_count(tr, 10.0, 1e-3) == 1


def test_performance_profile_two_solvers():
    table = build_table([[2, 4]], ["p"], ["a", "b"], [1], 1e-3)
    assert table.rho_at("a", 1.0) == 1.0
    assert table.rho_at("b", 1.0) == 0.0
    assert table.rho_at("b", 1.999) == 0.0
    assert table.rho_at("b", 2.0) == 1.0
    assert eval_step(table.rho["b"], 2.0) == 1.0 and eval_step(table.rho["b"], 1.5) == 0.0
    check_axioms(table)


def test_performance_profile_unsolved_solver():
    table = build_table([[2, INF]], ["p"], ["a", "b"], [1], 1e-3)
    assert all(table.rho_at("b", g) == 0.0 for g in (1, 10, 1e9))
    assert table.rho["b"][0].size == 0
    check_axioms(table)


def test_data_profile_units():
    table = build_table([[2, 4]], ["p"], ["a", "b"], [1], 1e-3)
    # kappa counts simplex gradients: t / (n_p + 1)
    assert table.d_at("a", 0.99) == 0.0 and table.d_at("a", 1.0) == 1.0
    assert table.d_at("b", 1.99) == 0.0 and table.d_at("b", 2.0) == 1.0
    assert eval_step(table.d["a"], 1.0) == 1.0


def test_unsolved_instances_dropped():
    table = build_table([[INF, INF], [3, 6]], ["x", "y"], ["a", "b"], [2, 2], 1e-6)
    assert table.instances == ["y"] and table.dropped == ["x"]
    assert table.solved_fraction.tolist() == [1.0, 1.0]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**31))
def test_profile_axioms_random_tables(n_inst, n_solv, seed):
    rng = np.random.default_rng(seed)
    t = rng.integers(0, 200, (n_inst, n_solv)).astype(float)
    t[rng.random(t.shape) < 0.3] = INF
    table = build_table(t, [f"i{k}" for k in range(n_inst)], [f"s{k}" for k in range(n_solv)],
                        rng.integers(1, 6, n_inst), 1e-3)
    check_axioms(table)
    for s in table.solvers:
        for fn in (table.rho[s], table.d[s]):
            xs = np.linspace(0, 300, 61)
            vals = [eval_step(fn, x) for x in xs]
            assert vals == sorted(vals)


def test_svg_has_one_polyline_per_solver():
    table = build_table([[2, 4], [5, 3]], ["p", "q"], ["a", "b"], [1, 1], 1e-3)
    doc = profile_svg([("panel", table.rho)], (1.0, 64.0), True, "gamma", "rho")
    assert doc.startswith("<svg") or doc.startswith("<?xml")
    assert doc.count('data-solver="a"') == 1 and doc.count('data-solver="b"') == 1


# --------------------------------------------------------------------------
# experiment runner
# --------------------------------------------------------------------------

SMALL = dict(problems=["P1", "P6"], n_starts=2, budget=120, lltols=[1e-3], tols=[1e-3, 1e-6])


def test_coordinate_solves_p1_from_every_start():
    P = get_problem("P1")
    for inst in instances(P, 0):
        cfg = default_config("coordinate-ds", P, eps_oracle=1e-6)
        tr = run_solver("coordinate-ds", P, cfg, inst.x0, GradientDescentOracle(1e-6))
        assert P.true_F(tr.final.x) <= 1e-6 * P.true_F(inst.x0) + 1e-10


def test_experiment_is_deterministic(tmp_path):
    exp = ExperimentConfig(**SMALL)
    a = run_experiment(exp, jobs=1)
    b = run_experiment(exp, jobs=2)
    assert len(a.cells) == 2 * 2 * 3
    assert set(a.traces) == set(b.traces) and not a.errors
    for cid in a.traces:
        assert a.traces[cid].to_csv() == b.traces[cid].to_csv()
    for key in a.tables:
        assert np.array_equal(a.tables[key].t, b.tables[key].t)


def test_scores_recompute_bit_identically(tmp_path):
    res = run_experiment(ExperimentConfig(**SMALL), out_dir=tmp_path, jobs=1)
    back = load_experiment(tmp_path)
    for key, table in res.tables.items():
        other = back.tables[key]
        assert np.array_equal(table.t, other.t)
        for s in table.solvers:
            for a, b in ((table.rho[s], other.rho[s]), (table.d[s], other.d[s])):
                assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert (tmp_path / "table.csv").read_text().count("\n") == 1 + len(res.cells)
    assert len(list((tmp_path / "figures").glob("*.svg"))) == 4


def test_failed_cell_scores_infinite():
    exp = ExperimentConfig(**SMALL)
    res = run_experiment(exp, jobs=1)
    lost = Cell("P1", 0, "coordinate-ds", 1e-3).cell_id
    traces = {k: v for k, v in res.traces.items() if k != lost}
    table = score(exp, exp.cells(), traces)[(1e-3, 1e-3)]
    row = table.instances.index("P1_0")
    assert math.isinf(table.t[row, table.solvers.index("coordinate-ds")])
    check_axioms(table)


def test_failing_cell_does_not_abort(monkeypatch):
    import bilevel_ds.bench.experiment as ex

    def boom(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(ex, "run_solver", boom)
    res = run_experiment(ExperimentConfig(**dict(SMALL, problems=["P6"])), jobs=1)
    assert len(res.errors) == len(res.cells) and not res.traces


def test_experiment_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"problem": ["P1"]})
