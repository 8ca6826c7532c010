"""Enriched finite element spaces on a triangulation.

Three discretizations share one evaluation path:

``p1_plain``
    continuous piecewise linears only.
``cut_xfem``
    linears + Heaviside enrichment + one global function ``chi(r) S_beta``.
``classic_xfem``
    linears + Heaviside enrichment + ``phi_i S_beta`` for every node within
    the enrichment radius of the tip.

Heaviside enrichment only appears on crack geometries meshed without
duplicated crack nodes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import quadrature as quad
from .geometry import (GEOM_TOL, CornerGeometry, cutoff_eval, heaviside,  # noqa: F401
                       polar_coords, singular_cartesian, singular_eval)

log = logging.getLogger(__name__)

METHODS = ("cut_xfem", "classic_xfem", "p1_plain")
STANDARD, HEAVISIDE, NODAL_SINGULAR, GLOBAL_SINGULAR = (
    "standard", "heaviside", "nodal_singular", "global_singular")
N_SLOTS = 10  # 3 standard, 3 heaviside, 3 nodal singular, 1 global
HEAVISIDE_AREA_RATIO = 1e-10
TRACE_TOL = 1e-10


@dataclass(frozen=True)
class CutoffSpec:
    r0: float = 0.01
    r1: float = 0.99

    def __post_init__(self):
        if not 0.0 < self.r0 < self.r1:
            raise ValueError(f"cut-off radii must satisfy 0 < r0 < r1, got {self.r0}, {self.r1}")

    def __iter__(self):
        return iter((self.r0, self.r1))

    def __call__(self, r):
        return cutoff_eval(self.r0, self.r1, r)


@dataclass(frozen=True)
class EnrichmentConfig:
    method: str = "cut_xfem"
    r_s: float = 0.5
    cutoff: CutoffSpec = field(default_factory=CutoffSpec)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.r_s <= 0:
            raise ValueError("enrichment radius must be positive")


@dataclass(frozen=True, eq=False)
class DofMap:
    """Global numbering of the basis functions.

    ``entries[k] = (kind, node)`` with ``node = None`` for the global
    singular function. Index arrays give the entry of each node per kind
    (-1 where absent).
    """

    entries: list
    constrained: frozenset
    theta_S: frozenset
    theta_H: frozenset
    heaviside_of: np.ndarray
    singular_of: np.ndarray
    global_index: int = -1

    @property
    def size(self):
        return len(self.entries)

    def __len__(self):
        return len(self.entries)

    @property
    def free(self):
        c = np.zeros(self.size, dtype=bool)
        c[list(self.constrained)] = True
        return np.nonzero(~c)[0]

    @property
    def constrained_array(self):
        return np.array(sorted(self.constrained), dtype=np.int64)

    def kinds(self):
        return [k for k, _ in self.entries]


# ---------------------------------------------------------------------------
# node classification


def node_patches(mesh):
    patches = [[] for _ in range(mesh.n_nodes)]
    for e, tri in enumerate(mesh.triangles):
        for n in tri:
            patches[n].append(e)
    return patches


def _is_fitted(mesh):
    return any(t != "outer" for _, _, t in mesh.boundary_edges)


def _heaviside_nodes(mesh, geom):
    if not geom.is_crack or _is_fitted(mesh):
        return set()
    tris = mesh.nodes[mesh.triangles]
    normal = np.asarray(geom.normal)
    side = (tris - np.asarray(geom.tip)) @ normal
    straddle = (side.max(axis=1) > GEOM_TOL) & (side.min(axis=1) < -GEOM_TOL)
    cut = np.zeros(mesh.n_triangles, dtype=bool)
    tip_el = np.zeros(mesh.n_triangles, dtype=bool)
    for e in np.nonzero(straddle)[0]:
        cut[e] = quad.is_cut(tris[e], geom)
    for e in _tip_candidates(tris, geom):
        tip_el[e] = quad.tip_in_element(tris[e], geom)

    theta_H = set()
    for node, patch in enumerate(node_patches(mesh)):
        if not cut[patch].any() or tip_el[patch].any():
            continue
        above = below = total = 0.0
        for e in patch:
            a = abs(quad._area(tris[e]))
            total += a
            if not straddle[e]:
                if side[e].max() > GEOM_TOL:
                    above += a
                else:
                    below += a
                continue
            up = quad.clip_polygon(tris[e], normal, np.asarray(geom.tip), True)
            part = quad._polygon_area(up) if len(up) else 0.0
            above += part
            below += a - part
        if min(above, below) >= HEAVISIDE_AREA_RATIO * total:
            theta_H.add(node)
    return theta_H


def _tip_candidates(tris, geom):
    t = np.asarray(geom.tip)
    lo = tris.min(axis=1) - 1e-9
    hi = tris.max(axis=1) + 1e-9
    return np.nonzero(((lo <= t) & (t <= hi)).all(axis=1))[0]


def classify_nodes(mesh, geom, config):
    """Build the :class:`DofMap` realizing the chosen discrete space."""
    tip = np.asarray(geom.tip)
    n = mesh.n_nodes
    if mesh.n_triangles and not _tip_in_mesh(mesh, geom):
        raise ValueError("corner tip lies outside the meshed domain")
    theta_H = _heaviside_nodes(mesh, geom) if config.method != "p1_plain" else set()
    theta_S = set()
    if config.method == "classic_xfem":
        dist = np.linalg.norm(mesh.nodes - tip, axis=1)
        theta_S = set(np.nonzero(dist <= config.r_s + GEOM_TOL)[0].tolist())

    entries = [(STANDARD, i) for i in range(n)]
    heav = -np.ones(n, dtype=np.int64)
    sing = -np.ones(n, dtype=np.int64)
    for i in sorted(theta_H):
        heav[i] = len(entries)
        entries.append((HEAVISIDE, i))
    for i in sorted(theta_S):
        sing[i] = len(entries)
        entries.append((NODAL_SINGULAR, i))
    gidx = -1
    if config.method == "cut_xfem":
        gidx = len(entries)
        entries.append((GLOBAL_SINGULAR, None))

    draft = DofMap(entries, frozenset(), frozenset(theta_S), frozenset(theta_H), heav, sing, gidx)
    constrained = _constrained_entries(mesh, geom, config, draft)
    if theta_S:
        bnodes = {i for e in mesh.boundary_edges for i in e[:2]}
        if bnodes & theta_S:
            log.warning("enrichment radius %.3g reaches the boundary (%d boundary nodes enriched)",
                        config.r_s, len(bnodes & theta_S))
    return DofMap(entries, frozenset(constrained), frozenset(theta_S), frozenset(theta_H),
                  heav, sing, gidx)


def _tip_in_mesh(mesh, geom):
    tris = mesh.nodes[mesh.triangles]
    return any(quad.tip_in_element(tris[e], geom) for e in _tip_candidates(tris, geom))


def _constrained_entries(mesh, geom, config, dofmap):
    """Entries with a non-negligible trace on the strongly constrained boundary."""
    basis = Basis(mesh, geom, config, dofmap)
    bq = boundary_rule(mesh, geom)
    if not len(bq.weights):
        return set()
    vals, _, cols = basis.eval(bq.elem, bq.points, bq.side)
    norms = np.zeros(dofmap.size)
    np.add.at(norms, cols[cols >= 0], (bq.weights[:, None] * vals ** 2)[cols >= 0])
    return set(np.nonzero(norms > TRACE_TOL * norms.max())[0].tolist())


# ---------------------------------------------------------------------------
# evaluation


class Basis:
    """Vectorised evaluation of all basis functions living on an element.

    Local slots per element: 0-2 hat functions, 3-5 Heaviside-weighted hats,
    6-8 singular-weighted hats, 9 the global cut-off singular function.
    Unused slots carry entry index -1.
    """

    def __init__(self, mesh, geom, config, dofmap):
        self.mesh, self.geom, self.config, self.dofmap = mesh, geom, config, dofmap
        tris = mesh.nodes[mesh.triangles]
        J = np.stack([tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]], axis=2)
        Jinv = np.linalg.inv(J)
        self._origin = tris[:, 0]
        self._Jinv = Jinv
        g12 = Jinv  # rows: gradients of lambda_1, lambda_2
        self.grad_hat = np.stack([-g12[:, 0] - g12[:, 1], g12[:, 0], g12[:, 1]], axis=1)

        T = mesh.triangles
        table = -np.ones((mesh.n_triangles, N_SLOTS), dtype=np.int64)
        table[:, 0:3] = T
        table[:, 3:6] = dofmap.heaviside_of[T]
        table[:, 6:9] = dofmap.singular_of[T]
        table[:, 9] = dofmap.global_index
        self.table = table
        self._uses_heaviside = bool(dofmap.theta_H)
        self._uses_nodal = bool(dofmap.theta_S)
        self._uses_global = dofmap.global_index >= 0

    def barycentric(self, elem, pts):
        rel = pts - self._origin[elem]
        l12 = np.einsum("qij,qj->qi", self._Jinv[elem], rel)
        return np.column_stack([1.0 - l12[:, 0] - l12[:, 1], l12[:, 0], l12[:, 1]])

    def eval(self, elem, pts, side=None):
        """Values ``(Q, 10)``, gradients ``(Q, 10, 2)`` and entry indices ``(Q, 10)``."""
        elem = np.asarray(elem, dtype=np.int64)
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        Q = len(elem)
        lam = self.barycentric(elem, pts)
        dlam = self.grad_hat[elem]
        vals = np.zeros((Q, N_SLOTS))
        grads = np.zeros((Q, N_SLOTS, 2))
        vals[:, 0:3] = lam
        grads[:, 0:3] = dlam
        geom = self.geom
        if self._uses_heaviside:
            H = heaviside(pts, geom, side)
            vals[:, 3:6] = lam * H[:, None]
            grads[:, 3:6] = dlam * H[:, None, None]
        if self._uses_nodal or self._uses_global:
            S, dS = singular_cartesian(pts, geom, side)
        if self._uses_nodal:
            vals[:, 6:9] = lam * S[:, None]
            grads[:, 6:9] = dlam * S[:, None, None] + lam[:, :, None] * dS[:, None, :]
        if self._uses_global:
            d = pts - np.asarray(geom.tip)
            r = np.hypot(d[:, 0], d[:, 1])
            chi, dchi = self.config.cutoff(r)
            with np.errstate(invalid="ignore", divide="ignore"):
                er = np.where(r[:, None] > 0, d / r[:, None], 0.0)
            vals[:, 9] = chi * S
            grads[:, 9] = (dchi * S)[:, None] * er + chi[:, None] * dS
            # beyond r1 the function vanishes identically
            far = chi == 0.0
            grads[far, 9] = 0.0
        cols = self.table[elem]
        vals[cols < 0] = 0.0
        grads[cols < 0] = 0.0
        return vals, grads, cols

    def locate(self, pts, tol=1e-12):
        """Element index containing each point (first match), -1 if none."""
        pts = np.atleast_2d(pts)
        out = -np.ones(len(pts), dtype=np.int64)
        for k, p in enumerate(pts):
            lam = self.barycentric(np.arange(self.mesh.n_triangles),
                                   np.broadcast_to(p, (self.mesh.n_triangles, 2)))
            hit = np.nonzero((lam >= -tol).all(axis=1))[0]
            if hit.size:
                out[k] = hit[0]
        return out


def shape_eval(mesh, dofmap, geom, config, element, point, side=None, basis=None):
    """All basis functions supported on ``element`` evaluated at ``point``.

    Returns a list of ``(entry, value, gradient)``.
    """
    basis = basis or Basis(mesh, geom, config, dofmap)
    point = np.asarray(point, dtype=float).reshape(1, 2)
    lam = basis.barycentric(np.array([element]), point)[0]
    if (lam < -1e-12).any():
        raise ValueError(f"point {point[0].tolist()} lies outside element {element}")
    r, _ = polar_coords(point, geom)
    if r[0] <= GEOM_TOL and (dofmap.theta_S or dofmap.global_index >= 0):
        raise ValueError("singular basis functions cannot be evaluated at the tip")
    s = None if side is None else np.array([side])
    vals, grads, cols = basis.eval(np.array([element]), point, s)
    return [(int(c), float(v), g.copy()) for c, v, g in zip(cols[0], vals[0], grads[0]) if c >= 0]


# ---------------------------------------------------------------------------
# line rules on the boundary and on the crack faces


@dataclass(frozen=True, eq=False)
class LineRule:
    """1D rule: host element, points, weights, crack side, outward normals."""

    elem: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    side: np.ndarray
    normals: np.ndarray

    @staticmethod
    def build(parts):
        if not parts:
            z = np.zeros(0)
            return LineRule(z.astype(np.int64), np.zeros((0, 2)), z, z, np.zeros((0, 2)))
        cols = list(zip(*parts))
        return LineRule(np.concatenate(cols[0]).astype(np.int64), np.vstack(cols[1]),
                        np.concatenate(cols[2]), np.concatenate(cols[3]), np.vstack(cols[4]))


def _segment_rule(a, b, tip, n=6):
    tip = np.asarray(tip, float)
    if np.linalg.norm(a - tip) <= GEOM_TOL:
        return quad.graded_segment(a, b, n=n)
    if np.linalg.norm(b - tip) <= GEOM_TOL:
        return quad.graded_segment(b, a, n=n)
    return quad.gauss_segment(a, b, n)


def boundary_rule(mesh, geom, tags=None):
    """Gauss rule on the strongly constrained boundary.

    By default these are all outer edges, plus crack faces of fitted meshes.
    Edges hosted by a crack-cut element are split where they cross the
    crack line so each piece sees a single face.
    """
    tags = tags or BOUNDARY_STRONG_TAGS
    owner = mesh.edge_to_triangle()
    tris = mesh.nodes[mesh.triangles]
    parts = []
    for i, j, tag in mesh.boundary_edges:
        if tag not in tags:
            continue
        e = owner[(min(i, j), max(i, j))][0]
        a, b = mesh.nodes[i], mesh.nodes[j]
        t = b - a
        normal = np.array([t[1], -t[0]]) / np.linalg.norm(t)
        if normal @ (tris[e].mean(axis=0) - a) > 0:
            normal = -normal
        face = {"crack_upper": 1.0, "crack_lower": -1.0}.get(tag, 0.0)
        pieces = [(a, b)]
        if geom.is_crack and face == 0.0:
            nrm = np.asarray(geom.normal)
            da, db = (a - geom.tip) @ nrm, (b - geom.tip) @ nrm
            if da * db < 0 and quad.is_cut(tris[e], geom):
                c = a + da / (da - db) * (b - a)
                pieces = [(a, c), (c, b)]
        for p, q in pieces:
            pts, w = _segment_rule(p, q, geom.tip)
            parts.append((np.full(len(w), e), pts, w, np.full(len(w), face),
                          np.broadcast_to(normal, pts.shape)))
    return LineRule.build(parts)


BOUNDARY_STRONG_TAGS = ("outer", "crack_upper", "crack_lower")


def crack_face_rule(mesh, geom):
    """Rules on both faces of an unfitted crack, one copy per face.

    The upper face (side +1) has outward normal ``-n``, the lower face
    ``+n``. Returns ``(rule, h_e)`` with the host element diameter per point.
    """
    if not geom.is_crack or _is_fitted(mesh):
        return LineRule.build([]), np.zeros(0)
    tris = mesh.nodes[mesh.triangles]
    a, b = geom.crack_segment()
    nrm = np.asarray(geom.normal)
    diam = mesh.diameters()
    parts, hs = [], []
    kinds = quad.classify_elements(tris, geom, None)
    for e in np.nonzero(kinds >= quad.KIND_CUT)[0]:
        t0, t1 = quad.segment_in_triangle(tris[e], a, b)
        p, q = a + t0 * (b - a), a + t1 * (b - a)
        pts, w = _segment_rule(p, q, geom.tip)
        for face in (1.0, -1.0):
            parts.append((np.full(len(w), e), pts, w, np.full(len(w), face),
                          np.broadcast_to(-face * nrm, pts.shape)))
            hs.append(np.full(len(w), diam[e]))
    rule = LineRule.build(parts)
    return rule, (np.concatenate(hs) if hs else np.zeros(0))
