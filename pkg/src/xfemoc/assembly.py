"""Matrices and vectors of the discrete state/costate problems.

Every volume integral is a quadrature sum over one fixed point set, so all
matrices are products of the sparse basis-at-point matrices::

    A = Gx' W Gx + Gy' W Gy + c B' W B,    M_ind = B' diag(w * ind) B

which makes ``M_ind + M_(1-ind) = M`` hold to rounding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import quadrature as quad
from .enrichment import (Basis, EnrichmentConfig, boundary_rule, classify_nodes,
                         crack_face_rule)
from .geometry import CornerGeometry
from .linalg import Factorization, SingularMatrixError, is_symmetric

log = logging.getLogger(__name__)

NITSCHE_GAMMA = 100.0


def _as_field(value):
    """Wrap constants as callables of the point array."""
    if value is None:
        return lambda pts, side=None: np.zeros(len(pts))
    if callable(value):
        return value
    c = float(value)
    return lambda pts, side=None: np.full(len(pts), c)


def _call(fn, pts, side=None):
    try:
        return np.asarray(fn(pts, side), dtype=float)
    except TypeError:
        return np.asarray(fn(pts), dtype=float)


@dataclass
class ControlProblem:
    """Box-constrained tracking problem ``min 1/2|y - y_d|^2 + alpha/2 |u|^2``.

    Fields (``f``, ``y_d``, bounds, ``dirichlet_data``) are callables of an
    ``(n, 2)`` point array (and optionally a crack-side array) or constants.
    """

    geom: CornerGeometry
    config: EnrichmentConfig
    alpha: float
    f: Callable | float = 0.0
    y_d: Callable | float = 0.0
    bounds: tuple = (-math.inf, math.inf)
    reaction: float = 0.0
    dirichlet_data: Callable | float | None = None
    crack_faces: str = "nitsche"  # or "penalty" or "free"
    nitsche_gamma: float = NITSCHE_GAMMA

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.crack_faces not in ("nitsche", "penalty", "free"):
            raise ValueError(f"unknown crack face treatment {self.crack_faces!r}")

    def bound_values(self, pts):
        lo, hi = self.bounds
        lo = np.full(len(pts), lo, dtype=float) if np.isscalar(lo) else _call(lo, pts)
        hi = np.full(len(pts), hi, dtype=float) if np.isscalar(hi) else _call(hi, pts)
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound at a quadrature point")
        return lo, hi


class Discretization:
    """A discrete space together with one volume quadrature point set.

    ``rules = (elem, points, weights, side)`` overrides the default per-element
    rule selection (used for tiny reference problems).
    """

    def __init__(self, mesh, geom, config, dofmap=None, purpose="assembly", rules=None):
        self.mesh, self.geom, self.config = mesh, geom, config
        self.dofmap = dofmap if dofmap is not None else classify_nodes(mesh, geom, config)
        self.basis = Basis(mesh, geom, config, self.dofmap)
        tris = mesh.nodes[mesh.triangles]
        if rules is None:
            rules = quad.mesh_rules(tris, geom, config, purpose)
        self.elem, self.points, self.weights, self.side = (np.asarray(a) for a in rules)
        self.B, self.Gx, self.Gy = self._point_matrices(self.elem, self.points, self.side)

    @property
    def n(self):
        return self.dofmap.size

    @property
    def n_points(self):
        return len(self.weights)

    def _point_matrices(self, elem, pts, side, normals=None):
        vals, grads, cols = self.basis.eval(elem, pts, side)
        mask = cols >= 0
        rows = np.broadcast_to(np.arange(len(elem))[:, None], cols.shape)[mask]
        c = cols[mask]
        shape = (len(elem), self.n)
        B = sp.csr_matrix((vals[mask], (rows, c)), shape=shape)
        if normals is not None:
            dn = np.einsum("qkd,qd->qk", grads, normals)
            return B, sp.csr_matrix((dn[mask], (rows, c)), shape=shape)
        Gx = sp.csr_matrix((grads[..., 0][mask], (rows, c)), shape=shape)
        Gy = sp.csr_matrix((grads[..., 1][mask], (rows, c)), shape=shape)
        return B, Gx, Gy

    def weighted_gram(self, X, weights, Y=None):
        Y = X if Y is None else Y
        return (X.T @ sp.diags(weights) @ Y).tocsr()

    def evaluate(self, coeffs):
        """Discrete function values and gradients at the quadrature points."""
        return self.B @ coeffs, np.column_stack([self.Gx @ coeffs, self.Gy @ coeffs])


def assemble_operator(disc, reaction=0.0):
    """Volume part of the operator, ``(grad psi_i, grad psi_j) + c (psi_i, psi_j)``."""
    w = disc.weights
    A = disc.weighted_gram(disc.Gx, w) + disc.weighted_gram(disc.Gy, w)
    if reaction:
        A = A + reaction * disc.weighted_gram(disc.B, w)
    return _symmetrize(A)


def _symmetrize(A):
    # products X'WX are symmetric up to summation order; make it exact
    return (0.5 * (A + A.T)).tocsr()


def assemble_mass(disc):
    return _symmetrize(disc.weighted_gram(disc.B, disc.weights))


def assemble_load(disc, field):
    return disc.B.T @ (disc.weights * _call(_as_field(field), disc.points, disc.side))


def assemble_indicator_mass(disc, indicator):
    """Mass matrix with the weight ``indicator(x_q)`` at every quadrature point.

    ``indicator`` is either an array over the quadrature points or a callable.
    """
    ind = indicator if not callable(indicator) else _call(indicator, disc.points)
    ind = np.broadcast_to(np.asarray(ind, dtype=float), (disc.n_points,))
    return _symmetrize(disc.weighted_gram(disc.B, disc.weights * ind))


def assemble_active_load(disc, lower, upper, labels):
    """``int_{A0} u0 psi_j + int_{A1} u1 psi_j`` for per-point labels (-1 lower, +1 upper)."""
    labels = np.asarray(labels)
    g = np.zeros(disc.n_points)
    lo_mask, hi_mask = labels < 0, labels > 0
    g[lo_mask] = np.broadcast_to(lower, g.shape)[lo_mask]
    g[hi_mask] = np.broadcast_to(upper, g.shape)[hi_mask]
    return disc.B.T @ (disc.weights * g)


# ---------------------------------------------------------------------------
# boundary conditions


@dataclass
class CrackFaceTerms:
    """Weak crack-face condition: operator part and a data-to-rhs map."""

    matrix: sp.csr_matrix
    B: sp.csr_matrix
    Gn: sp.csr_matrix
    weights: np.ndarray
    penalty: np.ndarray
    points: np.ndarray
    side: np.ndarray
    mode: str

    def rhs(self, data):
        g = _call(_as_field(data), self.points, self.side)
        if self.mode == "nitsche":
            return -self.Gn.T @ (self.weights * g) + self.B.T @ (self.weights * self.penalty * g)
        return self.B.T @ (self.weights * self.penalty * g)


def crack_face_terms(disc, mode="nitsche", gamma=NITSCHE_GAMMA):
    """Symmetric Nitsche (or penalty-only) terms on both faces of an unfitted crack."""
    rule, h = crack_face_rule(disc.mesh, disc.geom)
    if mode == "free" or not len(rule.weights):
        return None
    B, Gn = disc._point_matrices(rule.elem, rule.points, rule.side, rule.normals)
    w = rule.weights
    if mode == "nitsche":
        pen = gamma / h
        K = -(Gn.T @ sp.diags(w) @ B) - (B.T @ sp.diags(w) @ Gn) + B.T @ sp.diags(w * pen) @ B
    else:
        pen = gamma / h ** 2
        K = B.T @ sp.diags(w * pen) @ B
    return CrackFaceTerms(_symmetrize(K), B, Gn, w, pen, rule.points, rule.side, mode)


def boundary_projection(disc, data):
    """Values of the constrained entries from the L2 trace projection of ``data``."""
    C = disc.dofmap.constrained_array
    g = np.zeros(disc.n)
    if not C.size:
        return g
    rule = boundary_rule(disc.mesh, disc.geom)
    Bb = disc._point_matrices(rule.elem, rule.points, rule.side)[0][:, C]
    G = (Bb.T @ sp.diags(rule.weights) @ Bb).tocsc()
    r = Bb.T @ (rule.weights * _call(_as_field(data), rule.points, rule.side))
    try:
        g[C] = Factorization(G).solve(r)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"boundary Gram matrix is singular: {exc}", exc.pivot) from exc
    return g


@dataclass
class AssembledSystem:
    """Operator, mass, loads and boundary data for one problem on one mesh."""

    disc: Discretization
    A: sp.csr_matrix
    M: sp.csr_matrix
    F1: np.ndarray
    F2: np.ndarray
    dirichlet_values: np.ndarray
    bc_rhs: np.ndarray
    crack: CrackFaceTerms | None = None
    timings: dict = field(default_factory=dict)

    @property
    def dofmap(self):
        return self.disc.dofmap

    @property
    def free(self):
        return self.disc.dofmap.free

    @property
    def constrained(self):
        return self.disc.dofmap.constrained_array


def assemble_system(problem, mesh, disc=None):
    """Assemble and apply boundary conditions for ``problem`` on ``mesh``."""
    disc = disc or Discretization(mesh, problem.geom, problem.config)
    A = assemble_operator(disc, problem.reaction)
    M = assemble_mass(disc)
    F1 = assemble_load(disc, problem.f)
    F2 = assemble_load(disc, problem.y_d)
    return apply_dirichlet(disc, A, M, F1, F2, problem)


def apply_dirichlet(disc, A, M, F1, F2, problem):
    """Strong outer-boundary data by trace projection, weak crack-face data."""
    crack = crack_face_terms(disc, problem.crack_faces, problem.nitsche_gamma)
    bc_rhs = np.zeros(disc.n)
    if crack is not None:
        A = (A + crack.matrix).tocsr()
        bc_rhs = bc_rhs + crack.rhs(problem.dirichlet_data)
    g = boundary_projection(disc, problem.dirichlet_data)
    return AssembledSystem(disc, A, M, F1, F2, g, bc_rhs, crack)


def reduced_solve(system, rhs, values=None):
    """Solve ``A x = rhs`` on the free entries with constrained entries fixed to ``values``."""
    A = system.A
    F, C = system.free, system.constrained
    x = np.zeros(system.disc.n) if values is None else values.copy()
    b = rhs[F] - A[F][:, C] @ x[C] if C.size else rhs[F]
    x[F] = Factorization(A[F][:, F]).solve(b)
    return x


def free_block_is_positive_definite(system):
    """Cholesky-style check: all LDL' pivots of the free block positive."""
    from scipy.linalg import ldl
    F = system.free
    K = system.A[F][:, F].toarray()
    _, D, _ = ldl(K)
    return bool(np.all(np.linalg.eigvalsh(D) > 0))


__all__ = [
    "ControlProblem", "Discretization", "AssembledSystem", "assemble_operator",
    "assemble_mass", "assemble_load", "assemble_indicator_mass", "assemble_active_load",
    "apply_dirichlet", "assemble_system", "reduced_solve", "boundary_projection",
    "crack_face_terms", "is_symmetric",
]
