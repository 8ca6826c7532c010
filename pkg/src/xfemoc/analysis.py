"""Manufactured benchmarks, error norms and convergence orders."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assembly import ControlProblem, Discretization
from .control import clamp
from .geometry import CornerGeometry, _polar_frame, singular_cartesian

NORM_KEYS = ("y_h1", "y_l2", "p_h1", "p_l2", "u_l2")


@dataclass
class ExactTriple:
    """Closed-form state, costate and control of a manufactured problem.

    ``y`` and ``p`` map ``(pts, side)`` to ``(values, gradients)``; ``u``,
    ``f``, ``y_d`` and ``y_b`` map ``(pts, side)`` to values.
    """

    y: Callable
    p: Callable
    u: Callable
    f: Callable
    y_d: Callable
    y_b: Callable
    alpha: float
    bounds: tuple = (-math.inf, math.inf)
    reaction: float = 0.0


@dataclass
class Benchmark:
    """A manufactured problem together with its domain."""

    name: str
    geom: CornerGeometry
    exact: ExactTriple
    level_kind: str  # "N" (structured crack square) or "inv_h" (disk)
    description: str = ""

    def problem(self, config, crack_faces="nitsche"):
        e = self.exact
        return ControlProblem(self.geom, config, e.alpha, f=e.f, y_d=e.y_d, bounds=e.bounds,
                              reaction=e.reaction, dirichlet_data=e.y_b, crack_faces=crack_faces)


# ---------------------------------------------------------------------------
# crack square: y = S - r^2/4, p = x2^2 q + S q / 2 with q = (1 - x1^2)(1 - x2^2)


def _crack_state(geom):
    def y(pts, side=None):
        S, dS = singular_cartesian(pts, geom, side)
        return S - 0.25 * (pts ** 2).sum(axis=1), dS - 0.5 * pts
    return y


def _crack_costate(geom):
    """Costate value, gradient and Laplacian (S is harmonic away from the tip)."""
    def full(pts, side=None):
        x1, x2 = pts[:, 0], pts[:, 1]
        a, b = 1.0 - x1 ** 2, 1.0 - x2 ** 2
        q = a * b
        qx, qy = -2.0 * x1 * b, -2.0 * x2 * a
        lap_q = -2.0 * b - 2.0 * a
        S, dS = singular_cartesian(pts, geom, side)
        val = x2 ** 2 * q + 0.5 * S * q
        grad = np.column_stack([x2 ** 2 * qx, 2.0 * x2 * q + x2 ** 2 * qy])
        grad += 0.5 * (q[:, None] * dS + S[:, None] * np.column_stack([qx, qy]))
        lap = 2.0 * q - 8.0 * x2 ** 2 * a + x2 ** 2 * lap_q
        lap += 0.5 * (S * lap_q + 2.0 * (dS[:, 0] * qx + dS[:, 1] * qy))
        return val, grad, lap
    return full


def _crack_benchmark(name, alpha, bounds, description):
    geom = CornerGeometry.crack_square()
    y = _crack_state(geom)
    pfull = _crack_costate(geom)
    lo, hi = bounds

    def p(pts, side=None):
        v, g, _ = pfull(pts, side)
        return v, g

    def u(pts, side=None):
        return clamp(-pfull(pts, side)[0] / alpha, lo, hi)

    def f(pts, side=None):  # -lap y = 1
        return 1.0 - u(pts, side)

    def y_d(pts, side=None):  # -lap p = y - y_d
        return y(pts, side)[0] + pfull(pts, side)[2]

    def y_b(pts, side=None):
        return y(pts, side)[0]

    return Benchmark(name, geom, ExactTriple(y, p, u, f, y_d, y_b, alpha, bounds), "N", description)


# ---------------------------------------------------------------------------
# three-quarter disk: y = (r^a - r^b) sin(2 theta / 3), p = alpha y


def _power_sine(geom, terms, lam):
    """``sum c r^a sin(lam theta)`` with gradient and Laplacian, ``terms = [(c, a), ...]``."""
    def full(pts, side=None):
        r, theta, er, et = _polar_frame(pts, geom, side)
        s, c = np.sin(lam * theta), np.cos(lam * theta)
        val = np.zeros(len(r))
        dr = np.zeros(len(r))
        dt = np.zeros(len(r))
        lap = np.zeros(len(r))
        with np.errstate(divide="ignore", invalid="ignore"):
            for coef, a in terms:
                val += coef * r ** a * s
                dr += coef * a * r ** (a - 1) * s
                dt += coef * lam * r ** (a - 1) * c
                lap += coef * (a * a - lam * lam) * r ** (a - 2) * s
            # undefined at the tip itself for exponents below one
            grad = dr[:, None] * er + dt[:, None] * et
        return val, grad, lap
    return full


def _disk_benchmark(name, alpha, bounds, exponents, description):
    geom = CornerGeometry.three_quarter_disk()
    lam = 2.0 / 3.0
    a, b = exponents
    base = _power_sine(geom, [(1.0, a), (-1.0, b)], lam)
    lo, hi = bounds

    def y(pts, side=None):
        v, g, _ = base(pts, side)
        return v, g

    def p(pts, side=None):
        v, g, _ = base(pts, side)
        return alpha * v, alpha * g

    def u(pts, side=None):
        return clamp(-base(pts, side)[0], lo, hi)

    def f(pts, side=None):  # -lap y + y = u + f
        v, _, lap = base(pts, side)
        return -lap + v - u(pts, side)

    def y_d(pts, side=None):  # -lap p + p = y - y_d
        v, _, lap = base(pts, side)
        return v + alpha * lap - alpha * v

    def y_b(pts, side=None):
        return np.zeros(len(pts))

    exact = ExactTriple(y, p, u, f, y_d, y_b, alpha, bounds, reaction=1.0)
    return Benchmark(name, geom, exact, "inv_h", description)


def builtin_benchmarks():
    """The three shipped manufactured problems keyed by name."""
    return {
        "example1": _crack_benchmark("example1", 0.01, (-math.inf, math.inf),
                                     "unconstrained problem on the cracked square"),
        "example2": _crack_benchmark("example2", 1.0, (-0.2, 0.2),
                                     "box-constrained problem on the cracked square"),
        "example3": _disk_benchmark("example3", 0.01, (-0.3, 1.0), (1.5, 2.5),
                                    "box-constrained problem on the three-quarter disk"),
        "example3_corner": _disk_benchmark("example3_corner", 0.01, (-0.3, 1.0),
                                           (2.0 / 3.0, 5.0 / 3.0),
                                           "three-quarter disk with corner-exponent radial factor"),
    }


# ---------------------------------------------------------------------------
# errors


def error_norms(mesh, dofmap, solution, exact, geom, config, disc=None):
    """Absolute and relative errors of ``(y_h, p_h, u_h)``.

    Returns a dict with ``abs_*``, ``ref_*`` (exact norms) and ``rel_*``
    entries for the keys ``y_h1, y_l2, p_h1, p_l2, u_l2``. Norms use the
    error-norm quadrature, which is finer than the assembly one.
    """
    d = disc or Discretization(mesh, geom, config, dofmap, purpose="error_norm")
    w = d.weights
    pts, side = d.points, d.side
    yv, yg = d.evaluate(solution.Y)
    pv, pg = d.evaluate(solution.P)
    lo, hi = exact.bounds
    lo = lo if np.isscalar(lo) else lo(pts)
    hi = hi if np.isscalar(hi) else hi(pts)
    uh = clamp(-pv / exact.alpha, lo, hi)
    ye, yge = exact.y(pts, side)
    pe, pge = exact.p(pts, side)
    ue = exact.u(pts, side)

    def l2(v):
        return math.sqrt(max(float(w @ v ** 2), 0.0))

    def h1(g):
        return math.sqrt(max(float(w @ (g ** 2).sum(axis=1)), 0.0))

    out = {
        "abs_y_h1": h1(yg - yge), "abs_y_l2": l2(yv - ye),
        "abs_p_h1": h1(pg - pge), "abs_p_l2": l2(pv - pe), "abs_u_l2": l2(uh - ue),
        "ref_y_h1": h1(yge), "ref_y_l2": l2(ye),
        "ref_p_h1": h1(pge), "ref_p_l2": l2(pe), "ref_u_l2": l2(ue),
    }
    for k in NORM_KEYS:
        ref = out["ref_" + k]
        out["rel_" + k] = out["abs_" + k] / ref if ref > 0 else math.nan
    return out


def estimate_order(e_coarse, e_fine, h_coarse, h_fine):
    """Observed order ``log(e_c/e_f) / log(h_c/h_f)``; None when undefined.

    Any positive mesh-size surrogate can stand in for ``h``; orders against
    the node count ``ND`` use ``h = 1/ND``.
    """
    vals = (e_coarse, e_fine, h_coarse, h_fine)
    if any(v is None or not np.isfinite(v) or v <= 0 for v in vals) or h_coarse == h_fine:
        return None
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


@dataclass
class ConvergenceReport:
    """Rows of relative errors with orders between consecutive rows.

    ``scale`` holds the mesh-size surrogate used for orders: ``h = 2/N`` on
    the crack square and ``1/ND`` (orders against the node count) on the
    unstructured disk meshes.
    """

    case: str
    method: str
    levels: list = field(default_factory=list)
    scale: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    dofs: list = field(default_factory=list)
    nodes: list = field(default_factory=list)
    ssn_iters: list = field(default_factory=list)
    extra: list = field(default_factory=list)

    def add(self, level, scale, rel_errors, dofs, nodes, iters, extra=None):
        self.levels.append(level)
        self.scale.append(scale)
        self.errors.append({k: rel_errors[k] for k in NORM_KEYS})
        self.dofs.append(dofs)
        self.nodes.append(nodes)
        self.ssn_iters.append(iters)
        self.extra.append(extra or {})

    def __len__(self):
        return len(self.levels)

    def orders(self, key):
        out = [None]
        for i in range(1, len(self)):
            out.append(estimate_order(self.errors[i - 1][key], self.errors[i][key],
                                      self.scale[i - 1], self.scale[i]))
        return out[: len(self)]

    def column(self, key):
        return [row[key] for row in self.errors]

    def fitted_slope(self, key):
        """Least-squares slope of log(error) against log(scale)."""
        e = np.array(self.column(key), dtype=float)
        h = np.array(self.scale, dtype=float)
        ok = (e > 0) & np.isfinite(e)
        if ok.sum() < 2:
            return None
        return float(np.polyfit(np.log(h[ok]), np.log(e[ok]), 1)[0])
