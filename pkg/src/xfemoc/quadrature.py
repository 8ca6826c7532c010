"""Quadrature on triangles: symmetric rules, crack-cut rules, tip-graded rules.

Symmetric rules come from the Dunavant tables shipped with scikit-fem; the
degrees whose table carries a negative weight (3 and 7) are served by the
next positive rule. Tip grading uses a collapsed (Duffy) map of every
sub-triangle fanned from the tip, with geometric layers in the radial
coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from skfem.quadrature import get_quadrature_tri

from .geometry import GEOM_TOL

MAX_DEGREE = 10
TIP_LEVELS = 12
TIP_DEGREE = 6
SLIVER_AREA = 1e-14
# degree increments per purpose; the refined variant checks norm convergence
PURPOSE_BUMP = {"assembly": 0, "error_norm": 2, "error_norm_refined": 4}


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Physical points, weights and, for crack-cut elements, the crack side
    (+1 above the crack line, -1 below, 0 where it does not matter)."""

    points: np.ndarray
    weights: np.ndarray
    side: np.ndarray | None = None

    def __post_init__(self):
        if self.side is None:
            object.__setattr__(self, "side", np.zeros(len(self.weights)))

    def integrate(self, func):
        return float(np.dot(self.weights, func(self.points)))

    @property
    def area(self):
        return float(self.weights.sum())

    def __len__(self):
        return len(self.weights)

    @staticmethod
    def concat(rules):
        rules = [r for r in rules if len(r)]
        if not rules:
            return QuadratureRule(np.zeros((0, 2)), np.zeros(0))
        return QuadratureRule(np.vstack([r.points for r in rules]),
                              np.concatenate([r.weights for r in rules]),
                              np.concatenate([r.side for r in rules]))


@lru_cache(maxsize=None)
def reference_rule(degree):
    """Points ``(k, 2)`` and weights on the unit right triangle (area 1/2)."""
    if not 1 <= degree <= MAX_DEGREE:
        raise QuadratureError(f"unsupported quadrature degree {degree} (1..{MAX_DEGREE})")
    if degree == 1:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([0.5])
    table = {3: 4, 7: 8}.get(degree, degree)
    X, W = get_quadrature_tri(table)
    W = W * (0.5 / W.sum())
    return np.ascontiguousarray(X.T), W


def _area(tri):
    d1, d2 = tri[1] - tri[0], tri[2] - tri[0]
    return 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])


def standard_rule(tri, degree):
    """Symmetric rule on one triangle given by its (3, 2) vertex array."""
    tri = np.asarray(tri, dtype=float)
    X, W = reference_rule(degree)
    J = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    pts = tri[0] + X @ J.T
    return QuadratureRule(pts, W * 2.0 * abs(_area(tri)))


def standard_rules_batch(tris, degree):
    """Vectorised :func:`standard_rule` for an ``(E, 3, 2)`` array.

    Returns points ``(E, k, 2)`` and weights ``(E, k)``.
    """
    X, W = reference_rule(degree)
    d1 = tris[:, 1] - tris[:, 0]
    d2 = tris[:, 2] - tris[:, 0]
    pts = tris[:, None, 0] + X[None, :, 0, None] * d1[:, None] + X[None, :, 1, None] * d2[:, None]
    area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    return pts, (2.0 * area)[:, None] * W[None, :]


@lru_cache(maxsize=None)
def _graded_reference(levels, degree):
    """Collapsed-coordinate rule on [0,1]^2 with geometric layers in xi.

    Returns (xi, eta, w) already including the collapse Jacobian ``xi``.
    """
    n_xi = (degree + 3) // 2 + 1
    # the angular factor 1/|u + eta v| is not polynomial; over-resolve it
    n_eta = degree + 6
    ex, ew = leggauss(n_eta)
    ex, ew = 0.5 * (ex + 1.0), 0.5 * ew
    cuts = [0.0] + [0.5 ** k for k in range(levels, -1, -1)]
    xi, eta, w = [], [], []
    for k, (lo, hi) in enumerate(zip(cuts[:-1], cuts[1:])):
        # the layer touching the tip sees r**s with fractional s
        gx, gw = leggauss(4 * n_xi if k == 0 else n_xi)
        x = lo + 0.5 * (gx + 1.0) * (hi - lo)
        wx = 0.5 * gw * (hi - lo)
        X, E = np.meshgrid(x, ex, indexing="ij")
        WX, WE = np.meshgrid(wx, ew, indexing="ij")
        xi.append(X.ravel())
        eta.append(E.ravel())
        w.append((WX * WE * X).ravel())
    return np.concatenate(xi), np.concatenate(eta), np.concatenate(w)


def collapsed_rule(tip, a, b, levels=TIP_LEVELS, degree=TIP_DEGREE):
    """Rule on the triangle (tip, a, b), graded toward ``tip``."""
    tip, a, b = (np.asarray(v, dtype=float) for v in (tip, a, b))
    xi, eta, w = _graded_reference(levels, degree)
    u = a - tip
    v = b - a
    pts = tip + xi[:, None] * (u[None, :] + eta[:, None] * v[None, :])
    jac = abs(u[0] * v[1] - u[1] * v[0])
    return QuadratureRule(pts, w * jac)


def _point_in_closed_polygon(p, poly, tol=GEOM_TOL):
    n = len(poly)
    for k in range(n):
        a, b = poly[k], poly[(k + 1) % n]
        cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        if cross < -tol * max(1.0, np.linalg.norm(b - a)):
            return False
    return True


def _polygon_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_rule(poly, degree, tip=None, levels=TIP_LEVELS):
    """Rule on a convex counterclockwise polygon.

    When ``tip`` lies in the closed polygon the polygon is fanned from the
    tip and every fan triangle gets a collapsed graded rule; otherwise a fan
    from the first vertex with symmetric rules is used.
    """
    poly = np.asarray(poly, dtype=float)
    if tip is not None and _point_in_closed_polygon(np.asarray(tip, float), poly):
        tip = np.asarray(tip, dtype=float)
        rules = []
        n = len(poly)
        for k in range(n):
            a, b = poly[k], poly[(k + 1) % n]
            if abs(_area(np.array([tip, a, b]))) <= SLIVER_AREA:
                continue  # edge through the tip
            rules.append(collapsed_rule(tip, a, b, levels, max(degree, 1)))
        return QuadratureRule.concat(rules)
    rules = []
    for k in range(1, len(poly) - 1):
        t = np.array([poly[0], poly[k], poly[k + 1]])
        if abs(_area(t)) > SLIVER_AREA:
            rules.append(standard_rule(t, degree))
    return QuadratureRule.concat(rules)


def tip_graded_rule(tri, geom, levels=TIP_LEVELS, degree=TIP_DEGREE):
    tri = np.asarray(tri, dtype=float)
    if not _point_in_closed_polygon(np.asarray(geom.tip, float), tri):
        raise QuadratureError("tip lies outside the element")
    return polygon_rule(tri, degree, tip=geom.tip, levels=levels)


# ---------------------------------------------------------------------------
# crack handling


def clip_polygon(poly, normal, origin, keep_positive=True):
    """Sutherland-Hodgman clip of a polygon by the half plane ``(x - origin) . n >= 0``."""
    sgn = 1.0 if keep_positive else -1.0
    n = np.asarray(normal, dtype=float) * sgn
    d = (poly - origin) @ n
    out = []
    m = len(poly)
    for k in range(m):
        p, q = poly[k], poly[(k + 1) % m]
        dp, dq = d[k], d[(k + 1) % m]
        if dp >= 0:
            out.append(p)
        if (dp > 0 > dq) or (dp < 0 < dq):
            t = dp / (dp - dq)
            out.append(p + t * (q - p))
    if len(out) < 3:
        return np.zeros((0, 2))
    out = np.array(out)
    # drop repeated vertices produced by clipping through a vertex
    keep = np.linalg.norm(out - np.roll(out, -1, axis=0), axis=1) > 1e-15
    out = out[keep]
    return out if len(out) >= 3 else np.zeros((0, 2))


def segment_in_triangle(tri, a, b):
    """Parameter interval ``[t0, t1]`` of segment a->b inside the closed triangle, or None."""
    tri = np.asarray(tri, dtype=float)
    a, b = np.asarray(a, float), np.asarray(b, float)
    d = b - a
    t0, t1 = 0.0, 1.0
    for k in range(3):
        p, q = tri[k], tri[(k + 1) % 3]
        e = q - p
        inward = np.array([-e[1], e[0]])  # ccw triangle: left normal points inside
        num = (a - p) @ inward
        den = d @ inward
        tol = GEOM_TOL * np.linalg.norm(e)
        if abs(den) < 1e-300:
            if num < -tol:
                return None
            continue
        t = -num / den
        if den > 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
    if t1 - t0 <= 0.0:
        return None
    return t0, t1


def is_cut(tri, geom):
    """True when the crack segment runs through the triangle's interior."""
    if not geom.is_crack:
        return False
    tri = np.asarray(tri, dtype=float)
    a, b = geom.crack_segment()
    n = np.asarray(geom.normal)
    side = (tri - a) @ n
    if side.max() <= GEOM_TOL or side.min() >= -GEOM_TOL:
        return False
    span = segment_in_triangle(tri, a, b)
    if span is None:
        return False
    return (span[1] - span[0]) * np.linalg.norm(b - a) > 1e-10


def tip_in_element(tri, geom):
    return _point_in_closed_polygon(np.asarray(geom.tip, float), np.asarray(tri, float))


def cut_element_rule(tri, geom, degree, levels=TIP_LEVELS):
    """Split the element along the crack line and integrate each piece.

    Pieces are fanned into triangles; a piece whose closure holds the tip is
    graded toward it. Returns the rule and a per-point side flag (+1 above
    the crack line, -1 below) in ``rule.side``.
    """
    tri = np.asarray(tri, dtype=float)
    if not is_cut(tri, geom):
        raise QuadratureError("crack does not cut this element")
    origin = np.asarray(geom.tip, float)
    n = np.asarray(geom.normal)
    area = abs(_area(tri))
    pieces = []
    for positive in (True, False):
        piece = clip_polygon(tri, n, origin, positive)
        if len(piece) and _polygon_area(piece) > SLIVER_AREA:
            pieces.append((piece, 1.0 if positive else -1.0))
    if len(pieces) == 1:
        pieces = [(tri, pieces[0][1])]
    rules = []
    for piece, s in pieces:
        r = polygon_rule(piece, degree, tip=geom.tip, levels=levels)
        rules.append(QuadratureRule(r.points, r.weights, np.full(len(r), s)))
    rule = QuadratureRule.concat(rules)
    assert abs(rule.area - area) <= 1e-12 * area
    return rule


def element_kind(tri, geom, config):
    """Classify an element for rule selection: 'tip', 'cut', 'cut+tip', 'zone' or 'far'."""
    tip = tip_in_element(tri, geom)
    cut = is_cut(tri, geom)
    if cut and tip:
        return "cut+tip"
    if cut:
        return "cut"
    if tip:
        return "tip"
    return "zone" if _in_enrichment_zone(tri, geom, config) else "far"


def _in_enrichment_zone(tri, geom, config):
    method = getattr(config, "method", "p1_plain")
    if method == "p1_plain":
        return False
    dmin, dmax = _distance_range(np.asarray(tri, float), np.asarray(geom.tip, float))
    if method == "classic_xfem":
        return dmin <= config.r_s
    r0, r1 = config.cutoff
    return dmin < r1 and dmax > r0


def _distance_range(tri, p):
    dmax = float(np.max(np.linalg.norm(tri - p, axis=1)))
    if _point_in_closed_polygon(p, tri):
        return 0.0, dmax
    dmin = np.inf
    for k in range(3):
        a, b = tri[k], tri[(k + 1) % 3]
        e = b - a
        t = np.clip((p - a) @ e / (e @ e), 0.0, 1.0)
        dmin = min(dmin, float(np.linalg.norm(a + t * e - p)))
    return dmin, dmax


def select_rule(tri, geom, config, purpose="assembly"):
    """Rule dispatch by element kind (tip, crack-cut, enrichment zone, far field)."""
    deg, levels = _purpose_degrees(purpose)
    kind = element_kind(tri, geom, config)
    if kind in ("cut", "cut+tip"):
        return cut_element_rule(tri, geom, deg(6), levels)
    if kind == "tip":
        return tip_graded_rule(tri, geom, levels, deg(TIP_DEGREE))
    return standard_rule(tri, deg(6) if kind == "zone" else deg(4))


def _purpose_degrees(purpose):
    if purpose not in PURPOSE_BUMP:
        raise QuadratureError(f"unknown purpose {purpose!r}")
    bump = PURPOSE_BUMP[purpose]
    levels = TIP_LEVELS + (6 if purpose == "error_norm_refined" else 0)
    return (lambda d: min(d + bump, MAX_DEGREE)), levels


# ---------------------------------------------------------------------------
# line rules


def gauss_segment(a, b, n=6):
    """Gauss-Legendre points/weights on the segment a->b."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    x, w = leggauss(n)
    t = 0.5 * (x + 1.0)
    L = np.linalg.norm(b - a)
    return a + t[:, None] * (b - a), 0.5 * w * L


def graded_segment(a, b, levels=TIP_LEVELS, n=6):
    """Gauss rule on a->b, geometrically graded toward ``a``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    cuts = [0.5 ** k for k in range(levels, -1, -1)]
    # innermost piece: t = eps * s**2 turns t**(-1/2) * smooth into a polynomial
    x, w = leggauss(n)
    s = 0.5 * (x + 1.0)
    L = np.linalg.norm(b - a)
    eps = cuts[0]
    pts = [a + (eps * s ** 2)[:, None] * (b - a)]
    wts = [0.5 * w * 2.0 * s * eps * L]
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        p, wk = gauss_segment(a + lo * (b - a), a + hi * (b - a), n)
        pts.append(p)
        wts.append(wk)
    return np.vstack(pts), np.concatenate(wts)


# ---------------------------------------------------------------------------
# whole-mesh rule construction

KIND_FAR, KIND_ZONE, KIND_TIP, KIND_CUT, KIND_CUT_TIP = range(5)


def classify_elements(tris, geom, config):
    """Vectorised :func:`element_kind` for an ``(E, 3, 2)`` array (integer codes)."""
    E = len(tris)
    tip = np.asarray(geom.tip, dtype=float)
    kinds = np.full(E, KIND_FAR, dtype=np.int64)

    d = tris - tip
    dmax = np.linalg.norm(d, axis=2).max(axis=1)
    # distance from the tip to each triangle
    dmin = np.full(E, np.inf)
    for k in range(3):
        a, b = tris[:, k], tris[:, (k + 1) % 3]
        e = b - a
        t = np.clip(np.einsum("ij,ij->i", tip - a, e) / np.einsum("ij,ij->i", e, e), 0.0, 1.0)
        dmin = np.minimum(dmin, np.linalg.norm(a + t[:, None] * e - tip, axis=1))
    cross = np.stack([
        (tris[:, (k + 1) % 3, 0] - tris[:, k, 0]) * (tip[1] - tris[:, k, 1])
        - (tris[:, (k + 1) % 3, 1] - tris[:, k, 1]) * (tip[0] - tris[:, k, 0])
        for k in range(3)], axis=1)
    has_tip = (cross >= -GEOM_TOL).all(axis=1)
    dmin[has_tip] = 0.0

    method = getattr(config, "method", "p1_plain")
    if method == "classic_xfem":
        kinds[dmin <= config.r_s] = KIND_ZONE
    elif method == "cut_xfem":
        r0, r1 = config.cutoff
        kinds[(dmin < r1) & (dmax > r0)] = KIND_ZONE
    kinds[has_tip] = KIND_TIP

    if geom.is_crack:
        n = np.asarray(geom.normal)
        side = d @ n
        cand = np.nonzero((side.max(axis=1) > GEOM_TOL) & (side.min(axis=1) < -GEOM_TOL))[0]
        for e in cand:
            if is_cut(tris[e], geom):
                kinds[e] = KIND_CUT_TIP if has_tip[e] else KIND_CUT
    return kinds


def mesh_rules(tris, geom, config, purpose="assembly"):
    """Rules for every element, concatenated.

    Returns ``(elem, points, weights, side)`` flat arrays ordered by element.
    """
    deg, levels = _purpose_degrees(purpose)
    kinds = classify_elements(tris, geom, config)
    chunks = []
    for kind, d in ((KIND_FAR, deg(4)), (KIND_ZONE, deg(6))):
        ids = np.nonzero(kinds == kind)[0]
        if ids.size:
            pts, w = standard_rules_batch(tris[ids], d)
            k = w.shape[1]
            chunks.append((np.repeat(ids, k), pts.reshape(-1, 2), w.ravel(), np.zeros(w.size)))
    for e in np.nonzero(kinds >= KIND_TIP)[0]:
        if kinds[e] == KIND_TIP:
            rule = tip_graded_rule(tris[e], geom, levels, deg(TIP_DEGREE))
        else:
            rule = cut_element_rule(tris[e], geom, deg(6), levels)
        chunks.append((np.full(len(rule), e), rule.points, rule.weights, rule.side))
    elem = np.concatenate([c[0] for c in chunks])
    order = np.argsort(elem, kind="stable")
    return (elem[order], np.vstack([c[1] for c in chunks])[order],
            np.concatenate([c[2] for c in chunks])[order],
            np.concatenate([c[3] for c in chunks])[order])
