"""Corner geometry and the pointwise enrichment ingredients.

All evaluators are vectorised over an ``(n, 2)`` array of points and
accept an optional ``side`` array (+1 / -1 / 0) that selects the crack face
for points lying exactly on the crack; ``0`` means "decide from the
geometry", which puts on-crack points on the upper face.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GEOM_TOL = 1e-12


@dataclass(frozen=True)
class CornerGeometry:
    """Re-entrant corner or crack tip.

    ``theta`` is measured from the ray at angle ``edge_angle_start`` and
    increases in the rotational sense given by ``orientation`` (+1 for
    counterclockwise, -1 for clockwise), spanning ``[0, pi / beta]``.
    """

    tip: tuple = (0.0, 0.0)
    edge_angle_start: float = 0.0
    beta: float = 2.0 / 3.0
    orientation: int = 1
    crack_dir: tuple | None = None
    crack_origin: tuple | None = None

    def __post_init__(self):
        if not 0.5 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [1/2, 1], got {self.beta}")
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")
        if self.is_crack and (self.crack_dir is None or self.crack_origin is None):
            raise ValueError("a crack geometry (beta = 1/2) needs crack_dir and crack_origin")

    @classmethod
    def crack_square(cls):
        """Crack from (-1, 0) to the tip at the origin; theta = 0 on the upper face."""
        return cls(tip=(0.0, 0.0), edge_angle_start=math.pi, beta=0.5, orientation=-1,
                   crack_dir=(1.0, 0.0), crack_origin=(-1.0, 0.0))

    @classmethod
    def three_quarter_disk(cls):
        """Corner of angle 3*pi/2 with edges along +x and -y."""
        return cls(tip=(0.0, 0.0), edge_angle_start=0.0, beta=2.0 / 3.0, orientation=1)

    @property
    def is_crack(self):
        return abs(self.beta - 0.5) < 1e-14

    @property
    def opening(self):
        return math.pi / self.beta

    @property
    def normal(self):
        """Unit normal of the crack, ``crack_dir`` rotated by +90 degrees."""
        dx, dy = self.crack_dir
        return (-dy, dx)

    def crack_segment(self):
        return np.array(self.crack_origin, dtype=float), np.array(self.tip, dtype=float)

    def on_crack(self, pts, tol=GEOM_TOL):
        """Points on the closed crack segment."""
        if not self.is_crack:
            return np.zeros(len(pts), dtype=bool)
        a, b = self.crack_segment()
        d = b - a
        L = np.linalg.norm(d)
        rel = np.asarray(pts, dtype=float) - a
        s = rel @ d / L
        off = np.abs(rel @ np.array(self.normal))
        return (off <= tol) & (s >= -tol) & (s <= L + tol)


def polar_coords(pts, geom, side=None):
    """Return ``(r, theta)`` relative to the tip.

    Points on a crack face get ``theta = 0`` (upper face, ``side >= 0``) or
    ``2*pi`` (lower face). At the tip itself ``theta`` is 0 by convention.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    d = pts - np.asarray(geom.tip)
    r = np.hypot(d[:, 0], d[:, 1])
    phi = np.arctan2(d[:, 1], d[:, 0])
    theta = np.mod(geom.orientation * (phi - geom.edge_angle_start), 2 * math.pi)
    opening = geom.opening
    if opening < 2 * math.pi - 1e-14:
        # outside the sector: snap to the nearer bounding edge
        outside = theta > opening + GEOM_TOL
        theta = np.where(outside & (theta > 0.5 * (opening + 2 * math.pi)), 0.0, theta)
        theta = np.where(outside & (theta <= 0.5 * (opening + 2 * math.pi)), opening, theta)
        theta = np.minimum(theta, opening)
    if geom.is_crack:
        on = geom.on_crack(pts) & (r > GEOM_TOL)
        if on.any():
            s = np.zeros(len(pts)) if side is None else np.broadcast_to(side, (len(pts),))
            theta = np.where(on, np.where(s < 0, 2 * math.pi, 0.0), theta)
    theta = np.where(r <= GEOM_TOL, 0.0, theta)
    return r, theta


def _polar_frame(pts, geom, side=None):
    """Unit radial vector and unit vector of increasing theta."""
    r, theta = polar_coords(pts, geom, side)
    # rebuild the Cartesian angle from theta so crack faces get a consistent frame
    phi = geom.edge_angle_start + geom.orientation * theta
    er = np.column_stack([np.cos(phi), np.sin(phi)])
    et = geom.orientation * np.column_stack([-np.sin(phi), np.cos(phi)])
    return r, theta, er, et


def singular_eval(beta, r, theta):
    """Value of ``r**beta * sin(beta*theta)`` and its polar derivatives.

    Returns ``(value, d_dr, d_dtheta_over_r)``; the last two are undefined
    (nan) at ``r = 0``.
    """
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    s, c = np.sin(beta * theta), np.cos(beta * theta)
    val = r ** beta * s
    with np.errstate(divide="ignore", invalid="ignore"):
        rb1 = np.where(r > 0, r ** (beta - 1.0), np.nan)
    return val, beta * rb1 * s, beta * rb1 * c


def singular_cartesian(pts, geom, side=None, beta=None):
    """``S_beta`` and its Cartesian gradient at the given points."""
    beta = geom.beta if beta is None else beta
    r, theta, er, et = _polar_frame(pts, geom, side)
    val, dr, dt = singular_eval(beta, r, theta)
    grad = dr[:, None] * er + dt[:, None] * et
    return val, grad


def cutoff_eval(r0, r1, r):
    """Quintic smoothstep cut-off: 1 below ``r0``, 0 above ``r1``, C^2 in between."""
    if not 0.0 < r0 < r1:
        raise ValueError("cut-off radii must satisfy 0 < r0 < r1")
    r = np.asarray(r, dtype=float)
    t = np.clip((r - r0) / (r1 - r0), 0.0, 1.0)
    chi = 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)
    dchi = -30.0 * t ** 2 * (1.0 - t) ** 2 / (r1 - r0)
    return chi, dchi


def heaviside(pts, geom, side=None):
    """+1 on and above the crack line, -1 below; ``side`` overrides on the crack."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    dot = (pts - np.asarray(geom.tip)) @ np.asarray(geom.normal)
    h = np.where(dot >= -GEOM_TOL, 1.0, -1.0)
    if side is not None:
        s = np.broadcast_to(side, (len(pts),))
        on = np.abs(dot) <= GEOM_TOL
        h = np.where(on & (s != 0), np.sign(s), h)
    return h
