import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xfemoc.analysis import builtin_benchmarks
from xfemoc.assembly import ControlProblem, assemble_system, reduced_solve
from xfemoc.control import (INACTIVE, LOWER, UPPER, ControlEvaluator, ConvergenceError,
                            active_labels, clamp, kkt_solve, objective, solve_costate,
                            solve_state, ssn_solve)
from xfemoc.enrichment import EnrichmentConfig
from xfemoc.mesh import build_structured_crack_mesh

from oracles import enumerate_kkt, stepwise_update, tiny_problem

CUT = EnrichmentConfig("cut_xfem")


def test_clamp_examples():
    assert clamp(-(-0.5) / 1.0, -0.2, 0.2) == 0.2
    assert clamp(0.0, -0.2, 0.2) == 0.0
    assert clamp(0.0, 0.1, 0.2) == 0.1
    assert clamp(-(0.3) / 0.01, -math.inf, math.inf) == pytest.approx(-30.0)


@given(st.floats(-1e6, 1e6), st.floats(-10, 10), st.floats(0, 10))
def test_clamp_idempotent_and_in_bounds(v, lo, width):
    hi = lo + width
    c = clamp(v, lo, hi)
    assert lo <= c <= hi
    assert clamp(c, lo, hi) == c


def test_active_labels_ties_are_active():
    p = np.array([0.2, -0.2, 0.0, 1.0, -1.0])  # -p/alpha with alpha = 1
    lab = active_labels(p, 1.0, -0.2, 0.2)
    assert lab.tolist() == [LOWER, UPPER, INACTIVE, LOWER, UPPER]


@pytest.fixture(scope="module")
def ex2_n19():
    bench = builtin_benchmarks()["example2"]
    mesh = build_structured_crack_mesh(19)
    prob = bench.problem(CUT)
    system = assemble_system(prob, mesh)
    return system, prob


def test_zero_control_zero_state(mesh9, crack_geom):
    prob = ControlProblem(crack_geom, CUT, 1.0)
    system = assemble_system(prob, mesh9)
    assert np.all(solve_state(system, prob, 0.0) == 0.0)


def test_costate_vanishes_at_target(ex2_n19):
    system, prob = ex2_n19
    rng = np.random.default_rng(7)
    Y = rng.standard_normal(system.disc.n)
    Y[system.constrained] = 0.0
    sysm = dataclasses.replace(system, F2=system.M @ Y)
    assert np.abs(solve_costate(sysm, Y)).max() < 1e-12


def test_costate_random_state_matches_dense(rng):
    system, prob = tiny_problem()
    F = system.free
    Y = rng.standard_normal(system.disc.n)
    P = solve_costate(system, Y)
    A = system.A.toarray()[np.ix_(F, F)]
    ref = np.linalg.solve(A, (system.M @ Y - system.F2)[F])
    assert np.allclose(P[F], ref, rtol=1e-12, atol=1e-14)
    assert np.all(P[system.constrained] == 0)


def test_state_with_array_and_callable_control(ex2_n19):
    system, prob = ex2_n19
    pts = system.disc.points
    a = solve_state(system, prob, 0.1 * pts[:, 0])
    b = solve_state(system, prob, lambda p: 0.1 * p[:, 0])
    assert np.array_equal(a, b)


def test_unconstrained_converges_fast_and_is_linear(mesh9):
    bench = builtin_benchmarks()["example1"]
    prob = bench.problem(CUT)
    system = assemble_system(prob, mesh9)
    sol = ssn_solve(system, prob)
    assert sol.converged and sol.iterations <= 2
    u = sol.control.at_quadrature()
    assert np.array_equal(u, -(system.disc.B @ sol.P) / prob.alpha)
    assert sol.active_fraction == 0.0


@pytest.mark.parametrize("f, bounds", [
    (1.0, (-0.05, 0.02)),
    (-2.0, (-0.05, 0.02)),
    (lambda p, s=None: 3 * p[:, 0] + 1,
     (lambda p: -0.05 + 0.015 * p[:, 0], lambda p: 0.025 + 0.01 * p[:, 1])),
])
def test_ssn_matches_label_enumeration(f, bounds):
    system, prob = tiny_problem(f=f, bounds=bounds)
    hits = enumerate_kkt(system, prob)
    assert len(hits) == 1
    lab, Y, P = hits[0]
    sol = ssn_solve(system, prob)
    F = system.free
    assert np.array_equal(sol.labels, lab)
    assert np.allclose(sol.Y[F], Y, atol=1e-9)
    assert np.allclose(sol.P[F], P, atol=1e-9)
    assert (lab != 0).any()


def test_coupled_solve_equals_stepwise_formula(rng):
    system, prob = tiny_problem(f=1.0, bounds=(-0.05, 0.02))
    lo, hi = prob.bound_values(system.disc.points)
    F = system.free
    for _ in range(10):
        labels = rng.integers(-1, 2, system.disc.n_points).astype(np.int8)
        Y, P = kkt_solve(system, prob, labels, lo, hi)
        Ys, Ps, U1 = stepwise_update(system, prob, labels)
        assert np.allclose(Y[F], Ys, atol=1e-9)
        assert np.allclose(P[F], Ps, atol=1e-9)


def test_fixed_point_and_complementarity(ex2_n19):
    system, prob = ex2_n19
    sol = ssn_solve(system, prob)
    assert sol.converged
    lo, hi = prob.bound_values(system.disc.points)
    v = -(system.disc.B @ sol.P) / prob.alpha
    assert np.array_equal(active_labels(system.disc.B @ sol.P, prob.alpha, lo, hi), sol.labels)
    tol = 1e-10
    assert np.all(v[sol.labels == LOWER] <= lo[sol.labels == LOWER] + tol)
    assert np.all(v[sol.labels == UPPER] >= hi[sol.labels == UPPER] - tol)
    ina = sol.labels == INACTIVE
    assert np.all((v[ina] >= lo[ina] - tol) & (v[ina] <= hi[ina] + tol))
    assert (sol.labels != INACTIVE).any()
    # the state solves its own equation with the converged control
    Y = solve_state(system, prob, sol.control)
    assert np.allclose(Y, sol.Y, atol=1e-10)
    assert np.allclose(solve_costate(system, sol.Y), sol.P, atol=1e-10)


@pytest.mark.parametrize("N, method", [(19, "cut_xfem"), (39, "cut_xfem"), (40, "p1_plain")])
def test_objective_monotone_along_iterates(N, method):
    # the first iterate is the unconstrained minimizer, so the active-set
    # iterates approach the constrained optimum from below
    bench = builtin_benchmarks()["example2"]
    prob = bench.problem(EnrichmentConfig(method))
    system = assemble_system(prob, build_structured_crack_mesh(N, fitted=method == "p1_plain"))
    sol = ssn_solve(system, prob)
    J = [h["objective"] for h in sol.history]
    assert len(J) >= 3
    assert all(b >= a - 1e-12 * abs(a) for a, b in zip(J, J[1:]))
    assert J[-1] == pytest.approx(sol.objective, rel=1e-12)


def test_objective_value(ex2_n19):
    system, prob = ex2_n19
    sol = ssn_solve(system, prob)
    u = sol.control.at_quadrature()
    assert sol.objective == pytest.approx(objective(system, prob, sol.Y, u), rel=1e-14)


def test_iteration_cap_raises(ex2_n19):
    system, prob = ex2_n19
    with pytest.raises(ConvergenceError) as info:
        ssn_solve(system, prob, max_iter=1)
    assert info.value.iterations == 1 and len(info.value.history) == 1


def test_cycle_detection(monkeypatch, ex2_n19):
    system, prob = ex2_n19
    import xfemoc.control as control
    flip = {"k": 0}
    n = system.disc.n_points

    def fake_labels(p, alpha, lo, hi):
        # alternate between "upper half active" and "nothing active"
        flip["k"] += 1
        lab = np.zeros(n, dtype=np.int8)
        if flip["k"] % 2:
            lab[: n // 2] = UPPER
        return lab

    monkeypatch.setattr(control, "active_labels", fake_labels)
    with pytest.raises(ConvergenceError, match="cycle"):
        ssn_solve(system, prob)


def test_evaluator_pointwise_matches_quadrature(ex2_n19):
    system, prob = ex2_n19
    sol = ssn_solve(system, prob)
    disc = system.disc
    sel = np.nonzero(disc.side == 0)[0][::50]
    assert isinstance(sol.control, ControlEvaluator)
    assert np.allclose(sol.control(disc.points[sel]), sol.control.at_quadrature()[sel], atol=1e-12)
    with pytest.raises(ValueError, match="outside"):
        sol.control(np.array([[3.0, 3.0]]))


def test_reduced_solve_keeps_constrained_values(ex2_n19):
    system, prob = ex2_n19
    g = system.dirichlet_values
    x = reduced_solve(system, system.F1 + system.bc_rhs, g)
    assert np.array_equal(x[system.constrained], g[system.constrained])
