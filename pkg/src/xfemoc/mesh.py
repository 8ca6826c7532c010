"""Triangulations of the benchmark domains and a plain-text mesh format.

Three families are provided:

* structured ``N x N`` meshes of the crack square ``[-1, 1]^2`` with the
  crack running from ``(-1, 0)`` to the tip ``(0, 0)``, either unfitted
  (the crack crosses element interiors) or fitted (crack nodes duplicated);
* quasi-uniform meshes of the three-quarter unit disk produced by a
  distmesh-style force equilibrium iteration;
* whatever is read back through :func:`import_mesh`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

GEOM_TOL = 1e-12
BOUNDARY_TAGS = ("outer", "crack_upper", "crack_lower")


class MeshError(ValueError):
    """Raised for malformed meshes or invalid construction parameters."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangle mesh.

    Attributes
    ----------
    nodes : (n, 2) float array
    triangles : (m, 3) int array, counterclockwise
    boundary_edges : list of (i, j, tag)
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: list = field(default_factory=list)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float).reshape(-1, 2)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        nodes.setflags(write=False)
        tris.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        edges = [(int(i), int(j), str(t)) for i, j, t in self.boundary_edges]
        object.__setattr__(self, "boundary_edges", edges)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def signed_areas(self):
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def diameters(self):
        p = self.nodes[self.triangles]
        lens = [np.linalg.norm(p[:, a] - p[:, b], axis=1) for a, b in ((0, 1), (1, 2), (2, 0))]
        return np.max(lens, axis=0)

    def edges(self):
        """Unique undirected edges as an (k, 2) array with i < j."""
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def boundary_by_tag(self, *tags):
        return [(i, j, t) for i, j, t in self.boundary_edges if t in tags]

    def edge_to_triangle(self):
        """Map directed-agnostic edge ``(min, max)`` to the list of triangles using it."""
        table = {}
        for k, tri in enumerate(self.triangles):
            for a, b in ((0, 1), (1, 2), (2, 0)):
                key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
                table.setdefault(key, []).append(k)
        return table

    def validate(self):
        """Check the structural invariants; raise :class:`MeshError` on failure."""
        n = self.n_nodes
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            bad = int(np.nonzero((self.triangles < 0).any(1) | (self.triangles >= n).any(1))[0][0])
            raise MeshError(f"triangle {bad} references a node out of range")
        areas = self.signed_areas()
        bad = np.nonzero(areas <= 0.0)[0]
        if bad.size:
            raise MeshError(f"triangle {int(bad[0])} has non-positive signed area {areas[bad[0]]:.3e}")
        table = self.edge_to_triangle()
        for key, tris in table.items():
            if len(tris) > 2:
                raise MeshError(f"edge {key} is shared by {len(tris)} triangles")
        for k, (i, j, tag) in enumerate(self.boundary_edges):
            if not (0 <= i < n and 0 <= j < n):
                raise MeshError(f"boundary edge {k} references a node out of range")
            if tag not in BOUNDARY_TAGS:
                raise MeshError(f"boundary edge {k} has unknown tag {tag!r}")
            owners = table.get((min(i, j), max(i, j)), [])
            if len(owners) != 1:
                raise MeshError(f"boundary edge {k} belongs to {len(owners)} triangles, expected 1")
        upper = self.boundary_by_tag("crack_upper")
        lower = self.boundary_by_tag("crack_lower")
        if upper or lower:
            seg = lambda e: tuple(sorted(map(tuple, np.round(self.nodes[[e[0], e[1]]], 12))))
            lower_segs = {seg(e): e for e in lower}
            for k, e in enumerate(upper):
                other = lower_segs.get(seg(e))
                if other is None:
                    raise MeshError(f"crack_upper edge {k} has no coincident crack_lower edge")
                if {e[0], e[1]} & {other[0], other[1]} and not _shares_only_tip(e, other):
                    raise MeshError(f"crack_upper edge {k} shares node indices with its lower copy")
        return self


def _shares_only_tip(e, other):
    # the tip node is the single shared endpoint of the innermost crack edges
    return len({e[0], e[1]} & {other[0], other[1]}) == 1


def _boundary_from_triangles(triangles):
    """Edges used by exactly one triangle, oriented as in that triangle."""
    count = {}
    for tri in triangles:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            i, j = int(tri[a]), int(tri[b])
            key = (min(i, j), max(i, j))
            if key in count:
                count[key] = None
            else:
                count[key] = (i, j)
    return [v for v in count.values() if v is not None]


def build_structured_crack_mesh(N, fitted=False):
    """Uniform ``N x N`` triangulation of ``[-1, 1]^2``.

    Every square is split by its top-left to bottom-right diagonal. In the
    unfitted variant ``N`` must be odd so that the crack line ``y = 0`` runs
    through element interiors; the tip then sits on the diagonal of the
    central square. The fitted variant needs ``N`` even; nodes on the crack
    strictly left of the tip are duplicated and the crack edges are tagged.
    """
    N = int(N)
    if N < 1:
        raise MeshError("N must be positive")
    if fitted and N % 2:
        raise MeshError(f"fitted crack meshes need an even N, got {N}")
    if not fitted and N % 2 == 0:
        raise MeshError(f"unfitted crack meshes need an odd N, got {N}")

    t = np.linspace(-1.0, 1.0, N + 1)
    X, Y = np.meshgrid(t, t)  # node (i, j) -> index j*(N+1) + i
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = lambda i, j: j * (N + 1) + i

    mid = N // 2
    dup = {}
    if fitted:
        # copies for the lower face; the originals stay with the upper face
        for i in range(mid):
            dup[i] = len(nodes) + i
        nodes = np.vstack([nodes, nodes[[idx(i, mid) for i in range(mid)]]])

    tris = []
    for j in range(N):
        for i in range(N):
            bl, br, tl, tr = idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1)
            if fitted and j == mid - 1:
                # square just below the crack row: use the lower copies on y = 0
                tl = dup.get(i, tl)
                tr = dup.get(i + 1, tr)
            tris.append((bl, br, tl))
            tris.append((br, tr, tl))
    tris = np.array(tris, dtype=np.int64)

    bnd = []
    for a, b in _boundary_from_triangles(tris):
        pa, pb = nodes[a], nodes[b]
        on_crack = abs(pa[1]) < GEOM_TOL and abs(pb[1]) < GEOM_TOL and max(pa[0], pb[0]) <= GEOM_TOL
        if on_crack and not (abs(pa[0] + 1) < GEOM_TOL and abs(pb[0] + 1) < GEOM_TOL):
            lower = a in dup.values() or b in dup.values()
            bnd.append((a, b, "crack_lower" if lower else "crack_upper"))
        else:
            bnd.append((a, b, "outer"))
    return Mesh(nodes, tris, bnd).validate()


# ---------------------------------------------------------------------------
# three-quarter disk


def _three_quarter_disk_distance(p):
    d_circle = np.hypot(p[:, 0], p[:, 1]) - 1.0
    x, y = p[:, 0], p[:, 1]
    inside_q = (x > 0) & (y < 0)
    d_quad = np.where(inside_q, -np.minimum(x, -y),
                      np.hypot(np.maximum(-x, 0.0), np.maximum(y, 0.0)))
    return np.maximum(d_circle, -d_quad)


def build_three_quarter_disk_mesh(h, max_iter=2000, seed=0):
    """Quasi-uniform mesh of the unit disk minus the open quadrant x > 0, y < 0.

    Persson-Strang style truss relaxation: a hexagonal point lattice is
    clipped to the domain, fixed points are placed along the two straight
    edges, and the points are moved until the bar forces balance. Boundary
    points are projected back with a finite-difference gradient of the
    signed distance.
    """
    h = float(h)
    if not 0.0 < h < 1.0:
        raise MeshError(f"mesh size must satisfy 0 < h < 1, got {h}")
    fd = _three_quarter_disk_distance
    geps = 1e-3 * h
    deps = math.sqrt(np.finfo(float).eps) * h
    dptol, ttol, Fscale, dt = 1e-3, 0.1, 1.2, 0.2

    k = np.arange(0.0, 1.0 + 0.5 * h, h)
    k = k[k <= 1.0 + 1e-12]
    k[-1] = 1.0
    fixed = np.unique(np.vstack([
        np.column_stack([k, 0 * k]),
        np.column_stack([0 * k, -k]),
    ]), axis=0)

    xs = np.arange(-1.0, 1.0 + h, h)
    ys = np.arange(-1.0, 1.0 + h, h * math.sqrt(3) / 2)
    X, Y = np.meshgrid(xs, ys)
    X[1::2] += h / 2
    p = np.column_stack([X.ravel(), Y.ravel()])
    p = p[fd(p) < -geps]
    # drop lattice points crowding the fixed ones
    dist = np.min(np.linalg.norm(p[:, None, :] - fixed[None, :, :], axis=2), axis=1)
    p = p[dist > 0.5 * h]
    nfix = len(fixed)
    p = np.vstack([fixed, p])

    pold = np.full_like(p, np.inf)
    t = None
    for _ in range(max_iter):
        if np.max(np.linalg.norm(p - pold, axis=1)) / h > ttol:
            pold = p.copy()
            t = Delaunay(p).simplices
            pmid = p[t].mean(axis=1)
            t = t[fd(pmid) < -geps]
            bars = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [0, 2]]])
            bars.sort(axis=1)
            bars = np.unique(bars, axis=0)
        barvec = p[bars[:, 0]] - p[bars[:, 1]]
        L = np.linalg.norm(barvec, axis=1)
        L0 = np.ones_like(L) * Fscale * math.sqrt(np.sum(L ** 2) / len(L))
        F = np.maximum(L0 - L, 0.0)
        Fvec = (F / L)[:, None] * barvec
        Ftot = np.zeros_like(p)
        np.add.at(Ftot, bars[:, 0], Fvec)
        np.add.at(Ftot, bars[:, 1], -Fvec)
        Ftot[:nfix] = 0.0
        p = p + dt * Ftot
        d = fd(p)
        out = d > 0
        if out.any():
            q = p[out]
            dgx = (fd(q + [deps, 0]) - d[out]) / deps
            dgy = (fd(q + [0, deps]) - d[out]) / deps
            g2 = dgx ** 2 + dgy ** 2
            g2[g2 == 0] = 1.0
            p[out] -= (d[out] / g2)[:, None] * np.column_stack([dgx, dgy])
        step = np.max(np.linalg.norm(dt * Ftot[d < -geps], axis=1), initial=0.0)
        if step / h < dptol:
            break
    else:
        raise MeshError(f"disk mesher did not converge in {max_iter} iterations (h={h})")

    # snap boundary points exactly onto the arc and edges
    r = np.hypot(p[:, 0], p[:, 1])
    on_arc = np.abs(r - 1.0) < 1e-3 * h
    p[on_arc] /= r[on_arc, None]
    p[np.abs(p[:, 1]) < 1e-3 * h, 1] *= 0.0
    p[np.abs(p[:, 0]) < 1e-3 * h, 0] *= 0.0
    p[:nfix] = fixed

    t = Delaunay(p).simplices
    t = t[fd(p[t].mean(axis=1)) < -geps]
    used = np.unique(t)
    remap = -np.ones(len(p), dtype=np.int64)
    remap[used] = np.arange(len(used))
    p = p[used]
    t = remap[t]
    a = 0.5 * ((p[t[:, 1], 0] - p[t[:, 0], 0]) * (p[t[:, 2], 1] - p[t[:, 0], 1])
               - (p[t[:, 1], 1] - p[t[:, 0], 1]) * (p[t[:, 2], 0] - p[t[:, 0], 0]))
    t[a < 0] = t[a < 0][:, [0, 2, 1]]
    t = t[np.abs(a) > 1e-12 * h * h]
    bnd = [(i, j, "outer") for i, j in _boundary_from_triangles(t)]
    mesh = Mesh(p, t, bnd).validate()
    _check_disk_quality(mesh, h)
    return mesh


def _check_disk_quality(mesh, h):
    e = mesh.edges()
    L = np.linalg.norm(mesh.nodes[e[:, 0]] - mesh.nodes[e[:, 1]], axis=1)
    if L.min() < 0.5 * h or L.max() > 2.0 * h:
        raise MeshError(f"edge lengths [{L.min():.4f}, {L.max():.4f}] outside [{0.5 * h}, {2 * h}]")
    diam = mesh.diameters()
    for key, tris in mesh.edge_to_triangle().items():
        if len(tris) == 2:
            a, b = diam[tris[0]], diam[tris[1]]
            if max(a, b) > 2.0 * min(a, b):
                raise MeshError(f"adjacent elements {tris} violate the grading bound")


# ---------------------------------------------------------------------------
# text format


def export_mesh(mesh):
    lines = ["xfemmesh 1", f"nodes {mesh.n_nodes}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    lines += [f"{i} {j} {t}" for i, j, t in mesh.boundary_edges]
    return "\n".join(lines) + "\n"


def import_mesh(text):
    """Parse a ``xfemmesh 1`` document and validate the result."""
    rows = [(n + 1, line.split()) for n, line in enumerate(text.splitlines())]
    rows = [(n, tok) for n, tok in rows if tok]
    pos = 0

    def take(expected_len, what):
        nonlocal pos
        if pos >= len(rows):
            raise MeshError(f"unexpected end of document while reading {what}")
        n, tok = rows[pos]
        pos += 1
        if len(tok) != expected_len:
            raise MeshError(f"line {n}: expected {expected_len} fields for {what}, got {len(tok)}")
        return n, tok

    n, tok = take(2, "header")
    if tok != ["xfemmesh", "1"]:
        raise MeshError(f"line {n}: bad header {' '.join(tok)!r}")

    def section(name):
        n, tok = take(2, f"'{name}' section header")
        if tok[0] != name:
            raise MeshError(f"line {n}: expected '{name} <count>'")
        try:
            return int(tok[1])
        except ValueError:
            raise MeshError(f"line {n}: bad count {tok[1]!r}") from None

    def parse(conv, n, tok):
        try:
            return [conv(v) for v in tok]
        except ValueError:
            raise MeshError(f"line {n}: cannot parse {' '.join(tok)!r}") from None

    nodes = [parse(float, *take(2, "node")) for _ in range(section("nodes"))]
    tris = [parse(int, *take(3, "triangle")) for _ in range(section("triangles"))]
    bnd = []
    for _ in range(section("boundary")):
        n, tok = take(3, "boundary edge")
        i, j = parse(int, n, tok[:2])
        bnd.append((i, j, tok[2]))
    if pos != len(rows):
        raise MeshError(f"line {rows[pos][0]}: trailing content")
    return Mesh(np.array(nodes, dtype=float).reshape(-1, 2),
                np.array(tris, dtype=np.int64).reshape(-1, 3), bnd).validate()
