"""
Half-open axis-aligned boxes `[lo, hi)` in one or two dimensions and their
relation to open Euclidean balls `B(x, r) = {y : |y - x| < r}`.

Every predicate here is generic in the number type: fed with `Fraction`
coordinates it is exact, fed with floats it is as good as floating point.
The cube and measure modules rely on this to run the same code exactly
(validation, IN/COV, I-sets) or fast (ball masses).
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Tuple


__all__ = ('Box', 'exact', 'unit_box', 'ball_interval_length', 'ball_rect_area')


def exact(value):
    """
    Lift a float (or an int) to a `Fraction` without rounding.
    """
    if isinstance(value, Fraction):
        return value
    return Fraction(value)


@dataclass(frozen=True)
class Box:
    lo: Tuple
    hi: Tuple

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def volume(self):
        v = 1
        for a, b in zip(self.lo, self.hi):
            v *= b - a
        return v

    @property
    def midpoint(self) -> Tuple:
        return tuple((a + b) / 2 for a, b in zip(self.lo, self.hi))

    @property
    def side(self):
        """The shortest side length."""
        return min(b - a for a, b in zip(self.lo, self.hi))

    def as_float(self) -> 'Box':
        return Box(tuple(float(a) for a in self.lo), tuple(float(b) for b in self.hi))

    def contains_point(self, x) -> bool:
        return all(a <= xi < b for a, xi, b in zip(self.lo, x, self.hi))

    def contains_box(self, other: 'Box') -> bool:
        return all(a <= c and d <= b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def overlaps(self, other: 'Box') -> bool:
        """Whether the two half-open boxes share a point."""
        return all(max(a, c) < min(b, d) for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def inf_dist2(self, x):
        """Squared distance from `x` to the closure of the box."""
        s = 0
        for a, xi, b in zip(self.lo, x, self.hi):
            if xi < a:
                s += (a - xi) ** 2
            elif xi > b:
                s += (xi - b) ** 2
        return s

    def sup_dist2(self, x):
        """Squared distance from `x` to the farthest corner of the closure."""
        return sum(max((xi - a) ** 2, (b - xi) ** 2) for a, xi, b in zip(self.lo, x, self.hi))

    def inside_ball(self, x, r) -> bool:
        """
        Whether the half-open box lies inside the open ball `B(x, r)`.

        The farthest point of the box is a corner built from, on each axis,
        the endpoint farther from `x`. An `hi` endpoint is not attained by the
        half-open box, so the supremum may equal `r` as long as at least one
        axis contributes an unattained endpoint.
        """
        s, attained = 0, True
        for a, xi, b in zip(self.lo, x, self.hi):
            da, db = (xi - a) ** 2, (b - xi) ** 2
            if da >= db:
                s += da
            else:
                s += db
                attained = False
        return s < r * r if attained else s <= r * r

    def meets_ball(self, x, r) -> bool:
        return self.inf_dist2(x) < r * r

    def inradius_at(self, x, domain: 'Box' = None):
        """
        The largest `ρ` with `B(x, ρ) ∩ domain ⊆ box`; box faces lying on
        the domain boundary do not constrain `ρ`.
        """
        best = None
        for k, (a, xi, b) in enumerate(zip(self.lo, x, self.hi)):
            for face, gap in ((a, xi - a), (b, b - xi)):
                if domain is not None and face in (domain.lo[k], domain.hi[k]):
                    continue
                best = gap if best is None else min(best, gap)
        return best

    def split(self, point) -> list:
        """The nonempty pieces of the box cut by the axis lines through `point`."""
        axes = []
        for a, p, b in zip(self.lo, point, self.hi):
            if a < p < b:
                axes.append(((a, p), (p, b)))
            else:
                axes.append(((a, b),))
        if len(axes) == 1:
            return [Box((i[0],), (i[1],)) for i in axes[0]]
        return [Box((i[0], j[0]), (i[1], j[1])) for j in axes[1] for i in axes[0]]

    def ball_volume(self, x, r) -> float:
        """`H(box ∩ B(x, r))` in floating point, clipped to `[0, volume]`."""
        lo = [float(a) for a in self.lo]
        hi = [float(b) for b in self.hi]
        x = [float(xi) for xi in x]
        if self.dim == 1:
            v = ball_interval_length(lo[0], hi[0], x[0], float(r))
        else:
            v = ball_rect_area(lo, hi, x, float(r))
        return min(max(v, 0.0), float(self.volume))

    def to_list(self) -> list:
        return [[float(a), float(b)] for a, b in zip(self.lo, self.hi)]


def unit_box(q: int, exact_coords: bool = True) -> Box:
    zero, one = (Fraction(0), Fraction(1)) if exact_coords else (0.0, 1.0)
    return Box((zero,) * q, (one,) * q)


# === Closed-form ball volumes ===

def ball_interval_length(lo: float, hi: float, c: float, r: float) -> float:
    return max(0.0, min(hi, c + r) - max(lo, c - r))


def _disk_primitive(x: float, r: float) -> float:
    """`∫_0^x sqrt(r² - t²) dt` for `|x| <= r`."""
    x = min(max(x, -r), r)
    return 0.5 * (x * math.sqrt(max(r * r - x * x, 0.0)) + r * r * math.asin(x / r))


def _quadrant_area(X: float, Y: float, r: float) -> float:
    """Area of the disk of radius `r` at the origin within `{x < X, y < Y}`."""
    if X <= -r or Y <= -r:
        return 0.0
    X = min(X, r)

    def chord(a, b):
        return _disk_primitive(b, r) - _disk_primitive(a, r)

    if Y >= r:
        return 2.0 * chord(-r, X)
    w = math.sqrt(r * r - Y * Y)
    if Y >= 0:
        pieces = ((-r, -w, False), (-w, w, True), (w, r, False))
    else:
        pieces = ((-w, w, True),)
    area = 0.0
    for a, b, cut in pieces:
        b = min(b, X)
        if b <= a:
            continue
        # Where the disk pokes above `y = Y` the column is cut at `Y`.
        area += Y * (b - a) + chord(a, b) if cut else 2.0 * chord(a, b)
    return area


def ball_rect_area(lo, hi, c, r: float) -> float:
    """`area([lo, hi) ∩ B(c, r))` by inclusion-exclusion of quadrants."""
    x0, y0 = lo[0] - c[0], lo[1] - c[1]
    x1, y1 = hi[0] - c[0], hi[1] - c[1]
    return (_quadrant_area(x1, y1, r) - _quadrant_area(x0, y1, r)
            - _quadrant_area(x1, y0, r) + _quadrant_area(x0, y0, r))
