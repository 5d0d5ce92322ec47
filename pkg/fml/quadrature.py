"""
Integrals of the radial power weight `y ↦ |y - c|^ρ` over boxes.

In one dimension the antiderivative `sign(u)|u|^{ρ+1}/(ρ+1)` gives the
integral in closed form. In two dimensions the box is cut along the axis
lines through `c`, so that `c` is at worst a corner of each piece. Smooth
pieces are integrated by adaptive tensor Gauss–Legendre subdivision; a piece
with `c` at a corner is peeled into an L-shaped smooth part and a corner
square half its size, and the peeling stops once the corner square's
contribution is pinned down by the quarter-disk bounds

    (π/2)·s^{ρ+2}/(ρ+2)  <=  ∫_{[0,s]²} |y|^ρ  <=  (π/2)·(s√2)^{ρ+2}/(ρ+2).
"""

import math
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .boxes import Box


__all__ = ('power_distance_integral', 'DEFAULT_TOLERANCE')

DEFAULT_TOLERANCE = 1e-8

# Gauss–Legendre order of the tensor rule on a smooth box.
_ORDER = 8
_MAX_DEPTH = 40


@lru_cache(maxsize=None)
def _rule(order: int):
    nodes, weights = leggauss(order)
    return nodes, weights


def _antiderivative(u: float, rho: float) -> float:
    return math.copysign(abs(u) ** (rho + 1.0), u) / (rho + 1.0)


def _integral_1d(lo: float, hi: float, c: float, rho: float) -> float:
    return _antiderivative(hi - c, rho) - _antiderivative(lo - c, rho)


def _gauss_box(x0, x1, y0, y1, cx, cy, rho) -> float:
    nodes, weights = _rule(_ORDER)
    xs = 0.5 * (x1 - x0) * nodes + 0.5 * (x1 + x0)
    ys = 0.5 * (y1 - y0) * nodes + 0.5 * (y1 + y0)
    dx, dy = np.meshgrid(xs - cx, ys - cy, indexing='ij')
    values = (dx * dx + dy * dy) ** (0.5 * rho)
    return 0.25 * (x1 - x0) * (y1 - y0) * float(weights @ values @ weights)


def _adaptive(x0, x1, y0, y1, cx, cy, rho, tol, whole=None, depth=0) -> float:
    whole = _gauss_box(x0, x1, y0, y1, cx, cy, rho) if whole is None else whole
    xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    quads = ((x0, xm, y0, ym), (xm, x1, y0, ym), (x0, xm, ym, y1), (xm, x1, ym, y1))
    parts = [_gauss_box(*q, cx, cy, rho) for q in quads]
    total = math.fsum(parts)
    if abs(total - whole) <= tol * abs(total) or depth >= _MAX_DEPTH:
        return total
    return math.fsum(_adaptive(*q, cx, cy, rho, tol, p, depth + 1) for q, p in zip(quads, parts))


def _quarter_disk(radius: float, rho: float) -> float:
    return 0.5 * math.pi * radius ** (rho + 2.0) / (rho + 2.0)


def _corner(a: float, b: float, rho: float, tol: float) -> float:
    """
    `∫_{[0,a]×[0,b]} |y|^ρ dy`, the singular point sitting at the origin.
    """
    total = 0.0
    while True:
        s = 0.5 * min(a, b)
        # The L-shape left after removing the corner square [0, s]².
        total += _adaptive(s, a, 0.0, b, 0.0, 0.0, rho, tol)
        total += _adaptive(0.0, s, s, b, 0.0, 0.0, rho, tol)
        low, high = _quarter_disk(s, rho), _quarter_disk(s * math.sqrt(2.0), rho)
        if high - low <= tol * (total + low) or s < 1e-300:
            return total + 0.5 * (low + high)
        a = b = s


def power_distance_integral(region: Box, center, rho: float, tol: float = DEFAULT_TOLERANCE) -> float:
    """
    `∫_region |y - center|^ρ dH(y)` for `ρ > -q`. With `ρ = 0` this is
    the volume of the region, returned without any floating point work
    beyond the final conversion.
    """
    q = region.dim
    if rho <= -q:
        raise ValueError("The power {} makes the integral diverge in dimension {}".format(rho, q))
    if rho == 0:
        return float(region.volume)
    lo = [float(a) for a in region.lo]
    hi = [float(b) for b in region.hi]
    c = [float(ci) for ci in center]
    if q == 1:
        return _integral_1d(lo[0], hi[0], c[0], rho)

    total = 0.0
    for piece in Box(tuple(lo), tuple(hi)).split(c):
        (x0, y0), (x1, y1) = piece.lo, piece.hi
        # A piece touching the singular point has it at one of its corners.
        if piece.inf_dist2(c) == 0.0:
            ax = max(abs(x0 - c[0]), abs(x1 - c[0]))
            ay = max(abs(y0 - c[1]), abs(y1 - c[1]))
            total += _corner(ax, ay, rho, tol)
        else:
            total += _adaptive(x0, x1, y0, y1, c[0], c[1], rho, tol)
    return total
