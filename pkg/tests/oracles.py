"""Independent reference computations used by the tests.

None of these reuse the package's quadrature or solver paths.
"""

import itertools
import math

import mpmath
import numpy as np
import sympy
from scipy import integrate

from xfemoc.assembly import ControlProblem, Discretization, AssembledSystem, apply_dirichlet
from xfemoc.assembly import assemble_load, assemble_mass, assemble_operator
from xfemoc.enrichment import EnrichmentConfig
from xfemoc.geometry import CornerGeometry
from xfemoc.mesh import Mesh

mpmath.mp.dps = 30


def monomial_integral(a, b, vertices=((0, 0), (1, 0), (0, 1))):
    """Exact integral of x**a * y**b over a triangle by symbolic integration."""
    x, y, s, t = sympy.symbols("x y s t")
    (x0, y0), (x1, y1), (x2, y2) = [tuple(map(sympy.nsimplify, v)) for v in vertices]
    X = x0 + s * (x1 - x0) + t * (x2 - x0)
    Y = y0 + s * (y1 - y0) + t * (y2 - y0)
    jac = abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
    inner = sympy.Poly(X ** a * Y ** b * jac, t, s).integrate(t)
    inner = sympy.Poly(inner.as_expr().subs(t, 1 - s), s).integrate()
    return inner.eval(1) - inner.eval(0)


def radial_power_integral(power):
    """``int r**power`` over the unit right triangle with the tip at the origin.

    Polar reduction: the far edge is ``r = 1/(cos t + sin t)``, so the radial
    integral is closed form and only the angle is integrated numerically.
    """
    s = mpmath.mpf(power) + 2
    f = lambda t: (1 / (mpmath.cos(t) + mpmath.sin(t))) ** s / s
    return float(mpmath.quad(f, [0, mpmath.pi / 4, mpmath.pi / 2]))


def triangle_integral(f, tri, split_y=None, eps=1e-12):
    """Adaptive integral of ``f(x, y)`` over a triangle.

    With ``split_y`` the triangle is integrated separately above and below
    that horizontal line so a jump there does not hurt the adaptivity.
    """
    tri = np.asarray(tri, float)
    ys = sorted(tri[:, 1])
    cuts = [ys[0], ys[1], ys[2]]
    if split_y is not None and ys[0] < split_y < ys[2]:
        cuts = sorted(set(cuts + [split_y]))

    def xrange_at(yv):
        xs = []
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            if (a[1] - yv) * (b[1] - yv) <= 0 and a[1] != b[1]:
                xs.append(a[0] + (yv - a[1]) / (b[1] - a[1]) * (b[0] - a[0]))
            elif a[1] == b[1] == yv:
                xs += [a[0], b[0]]
        return min(xs), max(xs)

    total = 0.0
    for y0, y1 in zip(cuts[:-1], cuts[1:]):
        if y1 - y0 < 1e-15:
            continue
        val, _ = integrate.dblquad(lambda x, y: f(x, y), y0, y1,
                                   lambda y: xrange_at(y)[0], lambda y: xrange_at(y)[1],
                                   epsabs=eps, epsrel=eps)
        total += val
    return total


def fd_gradient(func, pts, step=1e-7):
    """Central differences of a vectorised scalar function."""
    g = np.zeros((len(pts), 2))
    for d in range(2):
        e = np.zeros(2)
        e[d] = step
        g[:, d] = (func(pts + e) - func(pts - e)) / (2 * step)
    return g


def fd_laplacian(func, pts, step=1e-3):
    """Fourth-order five-point-per-axis Laplacian."""
    c = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * step ** 2)
    lap = np.zeros(len(pts))
    for d in range(2):
        for k, ck in zip(range(-2, 3), c):
            e = np.zeros(2)
            e[d] = k * step
            lap += ck * func(pts + e)
    return lap


# ---------------------------------------------------------------------------
# a KKT system small enough for brute force


def tiny_square_mesh():
    """[-1, 1]^2 split into 2x2 squares: 9 nodes, 8 triangles, one interior node."""
    xs = np.array([-1.0, 0.0, 1.0])
    nodes = np.array([[x, y] for y in xs for x in xs])
    tris = []
    for j in range(2):
        for i in range(2):
            a, b, c, d = 3 * j + i, 3 * j + i + 1, 3 * (j + 1) + i, 3 * (j + 1) + i + 1
            tris += [[a, b, c], [b, d, c]]
    bnd = [(0, 1, "outer"), (1, 2, "outer"), (2, 5, "outer"), (5, 8, "outer"),
           (8, 7, "outer"), (7, 6, "outer"), (6, 3, "outer"), (3, 0, "outer")]
    return Mesh(nodes, np.array(tris), bnd)


def tiny_problem(f=1.0, y_d=0.0, alpha=0.1, bounds=(-0.05, 0.02)):
    """P1 system on the tiny mesh with one centroid point per triangle (Q = 8)."""
    mesh = tiny_square_mesh()
    geom = CornerGeometry.three_quarter_disk()
    cfg = EnrichmentConfig(method="p1_plain")
    tris = mesh.nodes[mesh.triangles]
    cen = tris.mean(axis=1)
    area = 0.5 * np.abs((tris[:, 1, 0] - tris[:, 0, 0]) * (tris[:, 2, 1] - tris[:, 0, 1])
                        - (tris[:, 2, 0] - tris[:, 0, 0]) * (tris[:, 1, 1] - tris[:, 0, 1]))
    rules = (np.arange(len(tris)), cen, area, np.zeros(len(tris)))
    disc = Discretization(mesh, geom, cfg, rules=rules)
    problem = ControlProblem(geom, cfg, alpha, f=f, y_d=y_d, bounds=bounds)
    A = assemble_operator(disc)
    M = assemble_mass(disc)
    system = apply_dirichlet(disc, A, M, assemble_load(disc, f), assemble_load(disc, y_d), problem)
    return system, problem


def enumerate_kkt(system, problem, tol=1e-12):
    """Every label assignment whose KKT solution is self-consistent.

    For each of the ``3**Q`` labelings, solve the dense linear optimality
    system with the control fixed on the active points, then keep the
    labeling if the resulting costate reproduces it.
    """
    disc = system.disc
    F = system.free
    A = system.A.toarray()[np.ix_(F, F)]
    M = system.M.toarray()[np.ix_(F, F)]
    B = disc.B.toarray()[:, F]
    w = disc.weights
    lo, hi = problem.bound_values(disc.points)
    a = problem.alpha
    F1 = (system.F1 + system.bc_rhs)[F]
    F2 = system.F2[F]
    n = len(F)
    hits = []
    for labels in itertools.product((-1, 0, 1), repeat=disc.n_points):
        lab = np.array(labels)
        inact = (lab == 0).astype(float)
        Mi = B.T @ np.diag(w * inact) @ B
        fixed = np.where(lab < 0, lo, np.where(lab > 0, hi, 0.0))
        K = np.block([[A, Mi / a], [-M, A]])
        rhs = np.concatenate([F1 + B.T @ (w * fixed), -F2])
        x = np.linalg.solve(K, rhs)
        v = -(B @ x[n:]) / a
        ok = np.all(np.where(lab < 0, v <= lo + tol, True)) and \
            np.all(np.where(lab > 0, v >= hi - tol, True)) and \
            np.all(np.where(lab == 0, (v >= lo - tol) & (v <= hi + tol), True))
        if ok:
            hits.append((lab, x[:n], x[n:]))
    return hits


def stepwise_update(system, problem, labels):
    """One iteration written as explicit solves with A, inverting the small
    system ``(I + A^-1 M A^-1 M_I / alpha)`` for the inactive control."""
    disc = system.disc
    F = system.free
    A = system.A.toarray()[np.ix_(F, F)]
    M = system.M.toarray()[np.ix_(F, F)]
    B = disc.B.toarray()[:, F]
    w = disc.weights
    lo, hi = problem.bound_values(disc.points)
    a = problem.alpha
    F1 = (system.F1 + system.bc_rhs)[F]
    F2 = system.F2[F]
    M1 = B.T @ np.diag(w * (labels == 0)) @ B
    M2U2 = B.T @ (w * np.where(labels < 0, lo, np.where(labels > 0, hi, 0.0)))
    Ainv = np.linalg.inv(A)
    S = Ainv @ M @ Ainv
    U1 = -(1.0 / a) * np.linalg.solve(np.eye(len(F)) + S @ M1 / a, S @ M2U2 + S @ F1 - Ainv @ F2)
    Y = Ainv @ (M1 @ U1 + M2U2 + F1)
    P = Ainv @ (M @ Y - F2)
    return Y, P, U1
