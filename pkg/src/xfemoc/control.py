"""Semi-smooth Newton (primal-dual active set) solver for the discrete KKT system.

The control is never discretized: it is the pointwise projection
``u = clamp(-p / alpha, lower, upper)`` of the discrete costate. Active sets
are therefore tracked per quadrature point, and each iteration solves the
coupled linear system

    A Y + (1/alpha) M_inactive P = F_active + F1
    -M Y + A P                   = -F2

on the free unknowns.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import (assemble_active_load, assemble_indicator_mass, assemble_load,
                       reduced_solve)
from .linalg import Factorization

log = logging.getLogger(__name__)

MAX_ITER = 50
STEP_TOL = 1e-12

INACTIVE, LOWER, UPPER = 0, -1, 1


class ConvergenceError(RuntimeError):
    """Raised when the active-set iteration does not settle."""

    def __init__(self, msg, iterations, history):
        super().__init__(msg)
        self.iterations = iterations
        self.history = history


def clamp(v, lower, upper):
    """Pointwise projection onto ``[lower, upper]``; bounds may be +-inf."""
    return np.minimum(np.maximum(v, lower), upper)


def active_labels(p_values, alpha, lower, upper):
    """Per-point labels of ``-p/alpha`` against the bounds; ties count as active."""
    v = -np.asarray(p_values) / alpha
    lab = np.zeros(v.shape, dtype=np.int8)
    lab[v <= lower] = LOWER
    lab[v >= upper] = UPPER
    return lab


class ControlEvaluator:
    """The control ``clamp(-p_h/alpha, lower, upper)`` as a pointwise function."""

    def __init__(self, disc, P, alpha, bounds):
        self.disc, self.P, self.alpha = disc, np.asarray(P, dtype=float), alpha
        self.bounds = bounds

    def _bounds_at(self, pts):
        lo, hi = self.bounds
        lo = np.full(len(pts), lo, float) if np.isscalar(lo) else np.asarray(lo(pts), float)
        hi = np.full(len(pts), hi, float) if np.isscalar(hi) else np.asarray(hi(pts), float)
        return lo, hi

    def at(self, elem, pts, side=None):
        vals, _, cols = self.disc.basis.eval(elem, pts, side)
        p = np.einsum("qk,qk->q", vals, np.where(cols >= 0, self.P[np.maximum(cols, 0)], 0.0))
        lo, hi = self._bounds_at(pts)
        return clamp(-p / self.alpha, lo, hi)

    def at_quadrature(self, disc=None):
        d = disc or self.disc
        if d is self.disc:
            lo, hi = self._bounds_at(d.points)
            return clamp(-(d.B @ self.P) / self.alpha, lo, hi)
        return self.at(d.elem, d.points, d.side)

    def __call__(self, pts, side=None):
        pts = np.atleast_2d(pts)
        elem = self.disc.basis.locate(pts)
        if (elem < 0).any():
            raise ValueError("control evaluated outside the mesh")
        return self.at(elem, pts, side)


@dataclass
class Solution:
    """Discrete optimal state, costate and solver diagnostics."""

    Y: np.ndarray
    P: np.ndarray
    labels: np.ndarray
    iterations: int
    converged: bool
    control: ControlEvaluator
    objective: float = math.nan
    history: list = field(default_factory=list)

    @property
    def active_fraction(self):
        return float(np.mean(self.labels != INACTIVE)) if self.labels.size else 0.0


def solve_state(system, problem, control):
    """State for a given control (array over quadrature points or callable)."""
    disc = system.disc
    u = control.at_quadrature(disc) if isinstance(control, ControlEvaluator) else control
    if callable(u):
        u = u(disc.points)
    rhs = system.F1 + assemble_load(disc, _point_field(u, disc)) + system.bc_rhs
    return reduced_solve(system, rhs, system.dirichlet_values)


def _point_field(values, disc):
    vals = np.broadcast_to(np.asarray(values, dtype=float), (disc.n_points,))
    return lambda pts, side=None: vals


def solve_costate(system, Y):
    """Costate with homogeneous boundary data: ``A P = M Y - F2``."""
    return reduced_solve(system, system.M @ Y - system.F2)


def objective(system, problem, Y, u_values):
    """``1/2 |y_h - y_d|^2 + alpha/2 |u_h|^2`` by the assembly quadrature."""
    disc = system.disc
    yd = problem.y_d(disc.points, disc.side) if callable(problem.y_d) else problem.y_d
    w = disc.weights
    return 0.5 * w @ (disc.B @ Y - yd) ** 2 + 0.5 * problem.alpha * w @ u_values ** 2


def _coupled_matrix(A, M, Mi, alpha, F):
    AFF = A[F][:, F]
    return sp.bmat([[AFF, Mi[F][:, F] / alpha], [-M[F][:, F], AFF]], format="csc")


def kkt_solve(system, problem, labels, lower=None, upper=None):
    """State and costate of the linear optimality system at fixed per-point labels."""
    disc = system.disc
    A, M = system.A, system.M
    F, C = system.free, system.constrained
    nF = F.size
    if lower is None or upper is None:
        lower, upper = problem.bound_values(disc.points)
    g = system.dirichlet_values
    Mi = assemble_indicator_mass(disc, (np.asarray(labels) == INACTIVE).astype(float))
    b_act = assemble_active_load(disc, lower, upper, labels)
    r1 = (system.F1 + system.bc_rhs + b_act)[F]
    r2 = -system.F2[F]
    if C.size:
        r1 = r1 - A[F][:, C] @ g[C]
        r2 = r2 + M[F][:, C] @ g[C]
    K = _coupled_matrix(A, M, Mi, problem.alpha, F)
    x = Factorization(K).solve(np.concatenate([r1, r2]))
    Y = g.copy()
    Y[F] = x[:nF]
    P = np.zeros(disc.n)
    P[F] = x[nF:]
    return Y, P


def ssn_solve(system, problem, max_iter=MAX_ITER, initial_labels=None):
    """Solve the discrete optimality system by semi-smooth Newton.

    Stops when the active sets of two consecutive iterates coincide, or when
    the control changes by less than ``1e-12`` in L2. Raises
    :class:`ConvergenceError` when neither happens within ``max_iter``
    iterations or the iteration revisits an earlier active set.
    """
    disc = system.disc
    alpha = problem.alpha
    lo, hi = problem.bound_values(disc.points)
    labels = (np.zeros(disc.n_points, dtype=np.int8) if initial_labels is None
              else np.asarray(initial_labels, dtype=np.int8).copy())
    seen = {labels.tobytes(): 0}
    history = []
    u_prev = None
    for it in range(1, max_iter + 1):
        Y, P = kkt_solve(system, problem, labels, lo, hi)
        p_q = disc.B @ P
        u = clamp(-p_q / alpha, lo, hi)
        new = active_labels(p_q, alpha, lo, hi)
        du = math.sqrt(disc.weights @ (u - u_prev) ** 2) if u_prev is not None else math.inf
        changed = int(np.count_nonzero(new != labels))
        # objective of the pair (state, control) that this solve actually realized
        u_used = np.where(labels == LOWER, lo, np.where(labels == UPPER, hi, -p_q / alpha))
        history.append({"iteration": it, "changed": changed, "active": int(np.count_nonzero(new)),
                        "du": du, "objective": objective(system, problem, Y, u_used)})
        log.debug("ssn iteration %d: %d labels changed, |du| = %.3e", it, changed, du)
        if changed == 0 or du < STEP_TOL:
            ctrl = ControlEvaluator(disc, P, alpha, problem.bounds)
            return Solution(Y, P, new, it, True, ctrl, objective(system, problem, Y, u), history)
        key = new.tobytes()
        if key in seen:
            raise ConvergenceError(f"active sets cycle (iteration {it} repeats iteration "
                                   f"{seen[key]})", it, history)
        seen[key] = it
        labels, u_prev = new, u
    raise ConvergenceError(f"no convergence within {max_iter} iterations", max_iter, history)


def solve_unconstrained(system, problem):
    """Direct solve when both bounds are infinite (one linear KKT solve)."""
    return ssn_solve(system, problem, max_iter=2)
