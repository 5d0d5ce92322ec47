"""
Cube systems on the model spaces `[0,1)^q`, `q ∈ {1, 2}`.

A `CubeSystem` is the family `{Q_{n,i}}` of an `(α_n)`-regular set: level `n`
partitions the domain, every cube carries a center `x_{n,i}` and a radius
`r_{n,i}` with `B(x, r) ∩ domain ⊆ Q ⊆ B(x, C_1 r)`, and the child holding
the center (the *center child*) is what gets removed on the way to `E`.

Cubes are identified by their *path*, the tuple of child ids leading to them
from the root. Lattice children are numbered row-major, `i_x + m·i_y` for an
`m`-fold split; a child handed over by a neighbouring cube gets the next free
id `m^q`. Children are created on first use and memoized by path, so an eager
system (everything made at build time) and a lazy one (made on demand) hold
identical cubes.

Lattice geometry is exact: boxes are `Fraction`s of the level's grid. The
power-map pushforward produces float geometry.
"""

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .boxes import Box, exact, unit_box
from .quadrature import DEFAULT_TOLERANCE, power_distance_integral
from .sequences import AlphaSequence, Kind, make_sequence


__all__ = ('SpaceModel', 'Cube', 'Constants', 'CubeSystem', 'LatticeSystem', 'PushforwardSystem',
           'ValidationReport', 'AxiomResult', 'DEFAULT_BUDGET',
           'build_adic_system', 'build_subsampled_dyadic', 'designate_center_child', 'transfer_island',
           'build_distorted_carpet', 'spine_probes', 'validate', 'survivors', 'iter_survivors',
           'in_cover', 'representatives', 'pushforward_power', 'upper_porosity_check',
           'system_to_dict', 'system_from_dict', 'subsampling_gaps', 'generations', 'island_gap')

# Largest number of cubes a build or a validation pass is allowed to touch.
DEFAULT_BUDGET = 200_000


# === The model space ===

@dataclass(frozen=True)
class SpaceModel:
    q: int
    C: Optional[float] = None
    D: float = 2.0

    def __post_init__(self):
        if self.q not in (1, 2):
            raise ValueError("Only dimensions 1 and 2 are supported, got q={}".format(self.q))
        if self.C is None:
            object.__setattr__(self, 'C', 2.0 if self.q == 1 else math.pi)
        if self.C < 1 or self.D < 1:
            raise ValueError("Ahlfors and perfectness constants must be >= 1")

    @property
    def domain(self) -> Box:
        return unit_box(self.q)

    @property
    def diameter(self) -> float:
        return math.sqrt(self.q)

    def check_ahlfors(self, samples: int = 256, seed: int = 0) -> dict:
        """
        Spot-check `(1/C) r^q <= H(B(x,r) ∩ domain) <= C r^q` at random
        `x` and `r <= diam`, returning the smallest constant that works.
        """
        rng = np.random.default_rng(seed)
        dom = self.domain.as_float()
        fitted = 1.0
        for _ in range(samples):
            x = tuple(rng.random(self.q))
            r = float(rng.uniform(0.0, self.diameter)) or self.diameter
            mass = dom.ball_volume(x, r)
            fitted = max(fitted, mass / r ** self.q, r ** self.q / mass)
        return {"C": self.C, "fitted_C": fitted,
                "passed": fitted <= self.C * (1 + 1e-12), "samples": samples, "seed": seed}

    def check_perfectness(self, samples: int = 256, seed: int = 0) -> dict:
        """
        Spot-check that `B(x,r) \\ B(x,r/D)` meets the domain whenever the
        domain is not inside `B(x,r)`. The domain is convex, so a point at
        distance `(1 + 1/D)·r/2` along the ray to the farthest corner works.
        """
        rng = np.random.default_rng(seed)
        dom = self.domain.as_float()
        failures = []
        for _ in range(samples):
            x = np.array(rng.random(self.q))
            r = float(rng.uniform(0.0, self.diameter))
            far = np.array([0.0 if xi > 0.5 else 1.0 for xi in x])
            reach = float(np.linalg.norm(far - x))
            if reach < r or r == 0.0:
                continue
            t = 0.5 * (1.0 + 1.0 / self.D) * r
            y = x + (far - x) * (t / reach)
            if not (r / self.D <= float(np.linalg.norm(y - x)) < r and dom.inf_dist2(tuple(y)) == 0.0):
                failures.append({"x": x.tolist(), "r": r})
        return {"D": self.D, "passed": not failures, "failures": failures}

    def to_dict(self) -> dict:
        return {"q": self.q, "C": self.C, "D": self.D}

    @classmethod
    def from_dict(cls, doc: dict) -> 'SpaceModel':
        return cls(int(doc["q"]), doc.get("C"), float(doc.get("D", 2.0)))


# === Cubes ===

@dataclass(eq=False)
class Cube:
    level: int
    path: Tuple[int, ...]
    box: Box
    center: Tuple
    radius: object
    center_child: Optional[int] = None
    holes: Tuple[Box, ...] = ()
    extras: Tuple[Box, ...] = ()
    cell: Optional[Tuple[Tuple[int, ...], int]] = None
    key: tuple = ()

    @property
    def volume(self):
        return self.box.volume - sum(h.volume for h in self.holes) + sum(e.volume for e in self.extras)

    @cached_property
    def fbox(self) -> Box:
        return self.box.as_float()

    @cached_property
    def fcenter(self) -> Tuple[float, ...]:
        return tuple(float(c) for c in self.center)

    @cached_property
    def fradius(self) -> float:
        return float(self.radius)

    @cached_property
    def fvolume(self) -> float:
        return float(self.volume)

    def pieces(self):
        """`(box, sign)` pairs whose signed sum is the region."""
        yield self.box, 1
        for h in self.holes:
            yield h, -1
        for e in self.extras:
            yield e, 1

    def contains_point(self, x) -> bool:
        if any(e.contains_point(x) for e in self.extras):
            return True
        return self.box.contains_point(x) and not any(h.contains_point(x) for h in self.holes)

    def inside_ball(self, x, r) -> bool:
        # Holes only shrink the region; the test ignores them.
        return self.box.inside_ball(x, r) and all(e.inside_ball(x, r) for e in self.extras)

    def meets_ball(self, x, r) -> bool:
        return self.box.meets_ball(x, r) or any(e.meets_ball(x, r) for e in self.extras)

    def fast_inside_ball(self, x, r) -> bool:
        return self.fbox.inside_ball(x, r) and all(e.as_float().inside_ball(x, r) for e in self.extras)

    def fast_meets_ball(self, x, r) -> bool:
        return self.fbox.meets_ball(x, r) or any(e.as_float().meets_ball(x, r) for e in self.extras)

    def ball_volume(self, x, r) -> float:
        v = sum(sign * b.ball_volume(x, r) for b, sign in self.pieces())
        return min(max(v, 0.0), self.fvolume)

    def sup_dist2(self, x):
        return max(b.sup_dist2(x) for b in (self.box,) + self.extras)

    def inner_radius(self, x, domain: Box):
        """The largest `ρ` with `B(x, ρ) ∩ domain ⊆ region`."""
        rad = self.box.inradius_at(x, domain)
        for h in self.holes:
            gap = h.inf_dist2(x)
            rad = min(rad, _sqrt(gap))
        return rad

    def integral(self, center, rho: float, tol: float = DEFAULT_TOLERANCE) -> float:
        return math.fsum(sign * power_distance_integral(b, center, rho, tol) for b, sign in self.pieces())

    def to_dict(self) -> dict:
        doc = {"path": list(self.path), "level": self.level, "box": self.box.to_list(),
               "center": [float(c) for c in self.center], "radius": float(self.radius),
               "center_child": self.center_child}
        if self.holes:
            doc["holes"] = [h.to_list() for h in self.holes]
        if self.extras:
            doc["extras"] = [e.to_list() for e in self.extras]
        return doc


def _sqrt(value):
    """Square root, exact when `value` is the square of a rational."""
    if isinstance(value, Fraction):
        num, den = math.isqrt(value.numerator), math.isqrt(value.denominator)
        if num * num == value.numerator and den * den == value.denominator:
            return Fraction(num, den)
    return math.sqrt(value)


@dataclass
class Constants:
    d: float = 1.0
    C1: float = 1.0
    C2: float = 1.0
    C3: Optional[Dict[float, float]] = None

    def to_dict(self) -> dict:
        doc = {"d": self.d, "C1": self.C1, "C2": self.C2}
        if self.C3 is not None:
            doc["C3"] = {repr(float(t)): v for t, v in sorted(self.C3.items())}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> 'Constants':
        c3 = doc.get("C3")
        return cls(float(doc["d"]), float(doc["C1"]), float(doc["C2"]),
                   {float(t): float(v) for t, v in c3.items()} if c3 is not None else None)


# === Cube systems ===

class CubeSystem:
    """
    The common part of lattice and pushforward systems: memoized children,
    center overrides, island transfers and level traversal. Subclasses
    provide `_raw_children(cube)`, the undistorted geometry of the children.
    """

    exact = True

    def __init__(self, space: SpaceModel, alpha: AlphaSequence, depth: int, constants: Constants,
                 lazy: bool = True, budget: int = DEFAULT_BUDGET):
        if depth < 0:
            raise ValueError("Depth must be nonnegative, got {}".format(depth))
        self.space = space
        self.alpha = alpha
        self.depth = depth
        self.constants = constants
        self.lazy = lazy
        self.budget = budget
        self.overrides: Dict[Tuple, Tuple] = {}
        self.transfers: Dict[Tuple, Tuple] = {}
        self.manifest: List[dict] = []
        self.spec_extra: dict = {}
        self._memo: Dict[Tuple, List[Cube]] = {}
        self._root = None

    # --- construction helpers ---

    def _copy(self) -> 'CubeSystem':
        other = object.__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.constants = replace(self.constants, C3=dict(self.constants.C3) if self.constants.C3 else None)
        other.overrides = dict(self.overrides)
        other.transfers = dict(self.transfers)
        other.manifest = list(self.manifest)
        other._memo = {}
        other._root = None
        other.__dict__.pop('dirty', None)
        return other

    @cached_property
    def dirty(self) -> frozenset:
        """Paths of cubes that differ from their lattice class, and their ancestors."""
        marked = set()
        for path in list(self.overrides) + list(self.transfers) + [t[1] for t in self.transfers.values()]:
            for k in range(len(path) + 1):
                marked.add(tuple(path[:k]))
        return frozenset(marked)

    def alpha_at(self, n: int) -> float:
        return self.alpha.value(n)

    def _key(self, level: int, path: Tuple) -> tuple:
        return ('path', path) if path in self.dirty else ('level', level)

    def _finish(self, cube: Cube) -> Cube:
        if cube.path in self.overrides:
            center, radius = self.overrides[cube.path]
            cube.center, cube.radius = center, radius
            for name in ('fcenter', 'fradius'):
                cube.__dict__.pop(name, None)
        cube.key = self._key(cube.level, cube.path)
        return cube

    # --- traversal ---

    @property
    def root(self) -> Cube:
        if self._root is None:
            self._root = self._finish(self._make_root())
        return self._root

    def children(self, cube: Cube) -> List[Cube]:
        if cube.level >= self.depth:
            return []
        kids = self._memo.get(cube.path)
        if kids is None:
            kids = [self._finish(c) for c in self._raw_children(cube)]
            if cube.path in self.transfers:
                moved, _ = self.transfers[cube.path]
                kids = [k for k in kids if k.path[-1] != moved]
            for hole_path, (moved, recipient) in sorted(self.transfers.items()):
                if recipient == cube.path:
                    kids.append(self._finish(self._island(hole_path, moved, cube)))
            self._memo[cube.path] = kids
        return kids

    def _island(self, hole_path, moved, recipient: Cube) -> Cube:
        raise ValueError("This system does not support moving children between cubes")

    def center_child_id(self, cube: Cube) -> Optional[int]:
        """The id of the child holding the center, found on first use."""
        if cube.level >= self.depth:
            return None
        if cube.center_child is None:
            cube.center_child = self._find_center_child(cube)
        return cube.center_child

    def _find_center_child(self, cube: Cube) -> int:
        for kid in self.children(cube):
            if kid.contains_point(cube.center):
                return kid.path[-1]
        raise ValueError("No child of cube {} contains its center {}".format(list(cube.path), cube.center))

    def child(self, cube: Cube, child_id: int) -> Cube:
        for kid in self.children(cube):
            if kid.path[-1] == child_id:
                return kid
        raise ValueError("Cube {} has no child {}".format(list(cube.path), child_id))

    def center_child(self, cube: Cube) -> Optional[Cube]:
        child_id = self.center_child_id(cube)
        return None if child_id is None else self.child(cube, child_id)

    def cube(self, path) -> Cube:
        """Look a cube up by its path; unknown paths raise `ValueError`."""
        node = self.root
        for child_id in path:
            node = self.child(node, int(child_id))
        return node

    def locate(self, x, n: int) -> Cube:
        """The level-`n` cube holding the point `x`."""
        node = self.root
        while node.level < n:
            node = next((k for k in self.children(node) if k.contains_point(x)), None)
            if node is None:
                raise ValueError("No level-{} cube holds the point {}".format(n, [float(v) for v in x]))
        return node

    def iter_level(self, n: int) -> Iterator[Cube]:
        if n > self.depth:
            raise ValueError("Level {} is deeper than the system depth {}".format(n, self.depth))
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.level == n:
                yield node
            else:
                stack.extend(reversed(self.children(node)))

    def level_size(self, n: int) -> int:
        """Number of cubes at level `n`, from the lattice factors."""
        size = 1
        for k in range(1, n + 1):
            size *= self.factor(k) ** self.space.q
        return size

    def total_size(self) -> int:
        return sum(self.level_size(n) for n in range(self.depth + 1))

    def materialize(self):
        """Create every cube down to the system depth."""
        for n in range(self.depth + 1):
            for _ in self.iter_level(n):
                pass

    def descend(self, x, r, n: int, fast: bool = False) -> Iterator[Tuple[Cube, bool]]:
        """
        Yield `(cube, inside)` for the level-`n` cubes meeting `B(x, r)`,
        skipping whole subtrees that miss the ball.
        """
        meets = Cube.fast_meets_ball if fast else Cube.meets_ball
        inside = Cube.fast_inside_ball if fast else Cube.inside_ball
        stack = [self.root]
        while stack:
            node = stack.pop()
            if not meets(node, x, r):
                continue
            if node.level == n:
                yield node, inside(node, x, r)
            else:
                stack.extend(reversed(self.children(node)))

    def ball_args(self, x, r):
        """Coordinates of a query ball in the arithmetic of the system."""
        if self.exact:
            return tuple(exact(xi) for xi in x), exact(r)
        return tuple(float(xi) for xi in x), float(r)

    # --- subclass hooks ---

    def factor(self, n: int) -> int:
        raise NotImplementedError

    def _make_root(self) -> Cube:
        raise NotImplementedError

    def _raw_children(self, cube: Cube) -> List[Cube]:
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError


class LatticeSystem(CubeSystem):
    """
    Systems whose level-`n` cubes are cells of a grid with `S_n = m_1···m_n`
    cells per axis. `kind` is `adic` (`m_n = a_n`) or `subsampled`
    (`m_n = b^{g_n}`).
    """

    def __init__(self, space, alpha, depth, constants, factors, kind, base=None, gaps=None,
                 lazy=True, budget=DEFAULT_BUDGET):
        super().__init__(space, alpha, depth, constants, lazy, budget)
        self.factors = list(factors)
        self.kind = kind
        self.base = base
        self.gaps = None if gaps is None else list(gaps)

    def factor(self, n: int) -> int:
        return self.factors[n - 1]

    @cached_property
    def scales(self) -> List[int]:
        s = [1]
        for m in self.factors:
            s.append(s[-1] * m)
        return s

    def scale(self, n: int) -> int:
        return self.scales[n]

    def _cell_box(self, level: int, cell) -> Box:
        s = self.scale(level)
        return Box(tuple(Fraction(i, s) for i in cell), tuple(Fraction(i + 1, s) for i in cell))

    def _make_cube(self, level, path, cell) -> Cube:
        box = self._cell_box(level, cell)
        return Cube(level, path, box, box.midpoint, Fraction(1, 2 * self.scale(level)), cell=(cell, self.scale(level)))

    def _child_cell(self, cell, child_id: int, m: int) -> Tuple[int, ...]:
        if self.space.q == 1:
            return (cell[0] * m + child_id,)
        return (cell[0] * m + child_id % m, cell[1] * m + child_id // m)

    def _cell_of(self, path) -> Tuple[int, ...]:
        """The grid cell of the cube at `path`, without creating any cube."""
        cell = (0,) * self.space.q
        for k, child_id in enumerate(path, start=1):
            m = self.factor(k)
            if child_id >= m ** self.space.q:
                hole = next(h for h, (_, rc) in self.transfers.items() if rc == tuple(path[:k - 1]))
                cell = self._child_cell(self._cell_of(hole), self.transfers[hole][0], m)
            else:
                cell = self._child_cell(cell, child_id, m)
        return cell

    def _make_root(self) -> Cube:
        return self._make_cube(0, (), (0,) * self.space.q)

    def _raw_children(self, cube: Cube) -> List[Cube]:
        m = self.factor(cube.level + 1)
        cell, _ = cube.cell
        return [self._make_cube(cube.level + 1, cube.path + (i,), self._child_cell(cell, i, m))
                for i in range(m ** self.space.q)]

    def _island(self, hole_path, moved, recipient: Cube) -> Cube:
        m = self.factor(recipient.level + 1)
        cell = self._child_cell(self._cell_of(hole_path), moved, m)
        return self._make_cube(recipient.level + 1, recipient.path + (m ** self.space.q,), cell)

    def _finish(self, cube: Cube) -> Cube:
        cube = super()._finish(cube)
        level = cube.level + 1
        holes, extras = [], []
        for hole_path, (moved, recipient) in sorted(self.transfers.items()):
            if hole_path == cube.path:
                holes.append(self._cell_box(level, self._child_cell(cube.cell[0], moved, self.factor(level))))
            if recipient == cube.path:
                cell = self._child_cell(self._cell_of(hole_path), moved, self.factor(level))
                extras.append(self._cell_box(level, cell))
        cube.holes, cube.extras = tuple(holes), tuple(extras)
        cube.__dict__.pop('fvolume', None)
        return cube

    def _find_center_child(self, cube: Cube) -> int:
        if cube.path in self.overrides:
            return super()._find_center_child(cube)
        m = self.factor(cube.level + 1)
        mid = m // 2
        return mid if self.space.q == 1 else mid + m * mid

    def spec(self) -> dict:
        doc = {"kind": self.kind, "depth": self.depth, "lazy": self.lazy, "budget": self.budget}
        if self.kind == 'subsampled':
            doc["base"] = self.base
        return doc


class PushforwardSystem(CubeSystem):
    """
    The image of a 1D system under `f(x) = x^β`: regions `f(Q)`, centers
    `f(x)` and radii `R = inf_{y ∉ Q} |f(x) - f(y)|`.
    """

    exact = False

    def __init__(self, source: CubeSystem, beta: float):
        eta = max(source.constants.C1 ** beta, source.constants.C1 ** (1.0 / beta))
        d = source.space.D
        c2 = 4.0 * d * (4.0 * d * source.constants.C2) ** (1.0 / beta)
        constants = Constants(source.constants.d * beta, 2.0 * eta, c2, None)
        super().__init__(source.space, source.alpha, source.depth, constants, source.lazy, source.budget)
        self.source = source
        self.beta = beta

    def factor(self, n: int) -> int:
        return self.source.factor(n)

    def _f(self, t) -> float:
        return float(t) ** self.beta

    def _map(self, cube: Cube) -> Cube:
        lo, hi, x = cube.fbox.lo[0], cube.fbox.hi[0], cube.fcenter[0]
        gaps = []
        if lo > 0.0:
            gaps.append(self._f(x) - self._f(lo))
        if hi < 1.0:
            gaps.append(self._f(hi) - self._f(x))
        radius = min(gaps) if gaps else 0.5 * (self._f(hi) - self._f(lo))
        return Cube(cube.level, cube.path, Box((self._f(lo),), (self._f(hi),)), (self._f(x),), radius)

    def _make_root(self) -> Cube:
        return self._map(self.source.root)

    def _raw_children(self, cube: Cube) -> List[Cube]:
        return [self._map(c) for c in self.source.children(self.source.cube(cube.path))]

    def _find_center_child(self, cube: Cube) -> int:
        # x ↦ x^β is increasing, so the image of the center stays in the image of its child.
        return self.source.center_child_id(self.source.cube(cube.path))

    def _key(self, level: int, path: Tuple) -> tuple:
        return ('path', path)

    def spec(self) -> dict:
        return {"kind": "pushforward", "beta": self.beta, "source": system_to_dict(self.source, cubes=False)}


# === Builders ===

def _check_budget(system: CubeSystem, lazy: bool):
    if lazy:
        return
    total = system.total_size()
    if total > system.budget:
        raise ValueError("Depth {} needs {} cubes, over the budget of {}; build a lazy system instead".format(
            system.depth, total, system.budget))
    system.materialize()


def _base_sequence(bases) -> AlphaSequence:
    if isinstance(bases, AlphaSequence):
        return bases
    if isinstance(bases, dict):
        return make_sequence(bases)
    return make_sequence({"kind": Kind.EXPLICIT.value, "params": {"values": [1.0 / int(a) for a in bases]}})


def build_adic_system(space: SpaceModel, bases, depth: int, lazy: bool = False,
                      budget: int = DEFAULT_BUDGET) -> LatticeSystem:
    """
    The `a_1···a_n`-adic system with `α_n = 1/a_n`. `bases` is a list of odd
    integers, or a reciprocal-odd sequence for systems of unbounded depth.
    """
    alpha = _base_sequence(bases)
    factors = []
    for n in range(1, depth + 1):
        try:
            a = alpha.base(n)
        except ValueError:
            raise ValueError("Level {} has no odd base in {}".format(n, alpha.to_dict()))
        if a < 3 or a % 2 == 0:
            raise ValueError("Bases must be odd and at least 3, got {} at level {}".format(a, n))
        factors.append(a)
    constants = Constants(1.0, 2.0 * math.sqrt(space.q), 1.0, {})
    system = LatticeSystem(space, alpha, depth, constants, factors, 'adic', lazy=lazy, budget=budget)
    _check_budget(system, lazy)
    return system


def subsampling_gaps(base: int, alpha: AlphaSequence, depth: int) -> List[int]:
    """
    The generation gaps `g_n`: the smallest `g >= 1` with `b^{-g} <= α_n`,
    decided in exact arithmetic.
    """
    gaps = []
    for n in range(1, depth + 1):
        a, g = exact(alpha.value(n)), 1
        while Fraction(1, base ** g) > a:
            g += 1
        gaps.append(g)
    return gaps


def build_subsampled_dyadic(space: SpaceModel, base: int, alpha, depth: int, lazy: bool = False,
                            budget: int = DEFAULT_BUDGET) -> LatticeSystem:
    """
    Keep only the b-adic generations `k_0 = 0, k_n = k_{n-1} + g_n`, so that
    the child/parent width ratio `b^{-g_n}` lies in `[α_n/b, α_n]`.
    """
    alpha = make_sequence(alpha)
    if base < 2:
        raise ValueError("The subsampling base must be at least 2, got {}".format(base))
    if alpha.is_constant() and alpha.value(1) >= 1.0 / base:
        raise ValueError("A constant alpha = {} >= 1/{} leaves no generation gap".format(alpha.value(1), base))
    gaps = subsampling_gaps(base, alpha, depth)
    constants = Constants(1.0, 2.0 * math.sqrt(space.q), float(base), {})
    system = LatticeSystem(space, alpha, depth, constants, [base ** g for g in gaps], 'subsampled',
                           base=base, gaps=gaps, lazy=lazy, budget=budget)
    _check_budget(system, lazy)
    return system


def generations(system: LatticeSystem) -> List[int]:
    """The generations `k_n` of a subsampled system, `k_0 = 0`."""
    if getattr(system, "gaps", None) is None:
        raise ValueError("Only subsampled systems have generations")
    ks = [0]
    for g in system.gaps:
        ks.append(ks[-1] + g)
    return ks


def _refit(system: CubeSystem, paths):
    """
    Raise `C_1` and `C_2` so that the cubes at `paths`, their center children
    and the parents they are center children of satisfy axioms III and IV.
    """
    c = system.constants
    for path in paths:
        cube = system.cube(path)
        c.C1 = max(c.C1, math.sqrt(float(cube.sup_dist2(cube.center))) / float(cube.radius))
        pairs = []
        if cube.level < system.depth:
            pairs.append((cube, system.center_child(cube)))
        if path:
            parent = system.cube(path[:-1])
            if system.center_child_id(parent) == path[-1]:
                pairs.append((parent, cube))
        for parent, kid in pairs:
            alpha = system.alpha_at(parent.level + 1)
            ratio = float(kid.radius) / float(parent.radius)
            c.C2 = max(c.C2, ratio / alpha ** c.d, alpha ** (1.0 / c.d) / ratio)


def designate_center_child(system: CubeSystem, cube_path, child_id: int) -> CubeSystem:
    """
    Move the center of a cube into one of its children. The new radius is
    the inradius of the cube at the new center, capped by the old radius;
    `C_1` grows to `max(3·C_1, needed)` and `C_2` to whatever the new
    center child needs.
    """
    cube_path = tuple(cube_path)
    cube = system.cube(cube_path)
    kid = system.child(cube, child_id)
    if system.center_child_id(cube) == child_id:
        return system
    center = kid.center
    inner = cube.inner_radius(center, system.space.domain)
    radius = cube.radius if inner is None else min(inner, cube.radius)
    if radius <= 0:
        raise ValueError("Child {} of cube {} leaves no room for a ball".format(child_id, list(cube_path)))
    out = system._copy()
    out.overrides[cube_path] = (center, radius)
    out.constants.C1 = 3.0 * system.constants.C1
    _refit(out, [cube_path])
    return out


def transfer_island(system: LatticeSystem, hole_path, recipient_path, child_id: int) -> LatticeSystem:
    """
    Hand the child `child_id` of a removed cube over to a kept neighbour.
    The removed cube's radius shrinks until its ball misses the island, and
    the constants are refitted around both cubes.
    """
    hole_path, recipient_path = tuple(hole_path), tuple(recipient_path)
    if len(hole_path) != len(recipient_path):
        raise ValueError("Cubes {} and {} are on different levels".format(list(hole_path), list(recipient_path)))
    hole = system.cube(hole_path)
    system.cube(recipient_path)
    island = system.child(hole, child_id)
    if system.center_child_id(hole) == child_id:
        raise ValueError("The center child of {} cannot be moved".format(list(hole_path)))
    out = system._copy()
    radius = min(hole.radius, _sqrt(island.box.inf_dist2(hole.center)))
    out.overrides[hole_path] = (hole.center, radius)
    out.transfers[hole_path] = (child_id, recipient_path)
    _refit(out, [hole_path, recipient_path])
    return out


def island_gap(a: int) -> int:
    """Columns between an island and the kept cube, for an `a`-fold split."""
    return max(1, round(a / 4))


def _spine(system: LatticeSystem, depth: int):
    """`(n, hole path, kept path)` for the cubes right of the removed middles."""
    kept = ()
    for n in range(1, depth + 1):
        m = system.factor(n)
        mid = (m - 1) // 2
        yield n, kept + (mid + m * mid,), kept + (mid + 1 + m * mid,)
        kept = kept + (mid + 1 + m * mid,)


def build_distorted_carpet(bases, depth: int, mode: str = 'island', lazy: bool = True,
                           budget: int = DEFAULT_BUDGET) -> LatticeSystem:
    """
    A 2D carpet distorted once per level along a spine of kept cubes
    `K_1 ⊃ K_2 ⊃ ...`, each `K_n` sitting right of the removed middle `Ĥ_n`.

    * `island`: a middle-row child of `Ĥ_n`, a few columns away from `K_n`,
      is handed to `K_n`; it survives as a small piece far from the rest.
      Levels whose next base is below 5 have no such child and are skipped.
    * `relocate`: the center of `K_n` moves to its child touching `Ĥ_n`.
    """
    if mode not in ('island', 'relocate'):
        raise ValueError("Unknown distortion mode: {}".format(mode))
    system = build_adic_system(SpaceModel(2), bases, depth, lazy=True, budget=budget)
    manifest = []
    for n, hole, kept in _spine(system, depth - 1):
        a = system.factor(n + 1)
        mid = (a - 1) // 2
        if mode == 'relocate':
            child = 0 + a * mid
            system = designate_center_child(system, kept, child)
            manifest.append({"level": n, "mode": mode, "kept": list(kept), "hole": list(hole),
                             "child": child, "center": list(kept) + [child]})
            continue
        if a < 5:
            manifest.append({"level": n, "mode": mode, "skipped": "base {} < 5".format(a)})
            continue
        g = island_gap(a)
        child = (a - 1 - g) + a * mid
        system = transfer_island(system, hole, kept, child)
        manifest.append({"level": n, "mode": mode, "kept": list(kept), "hole": list(hole),
                         "child": child, "gap": g, "island": list(kept) + [a * a]})
    system.manifest = manifest
    system.lazy = lazy
    system.spec_extra = {"distortion": mode}
    _check_budget(system, lazy)
    return system


def spine_probes(system: LatticeSystem) -> List[dict]:
    """
    Probe balls for restricted-doubling scans, one per spine level `n`.

    The point is the center of the island (island mode), of the relocated
    child (relocate mode) or of the child of `K_n` touching `Ĥ_n` (plain
    carpets). The radius `(g + 1/2)·w` reaches from there to the nearest
    other piece of the island's surroundings.
    """
    if system.space.q != 2 or not isinstance(system, LatticeSystem):
        raise ValueError("Spine probes need a 2D lattice system")
    records = {m["level"]: m for m in system.manifest}
    probes = []
    for n, hole, kept in _spine(system, system.depth - 1):
        a = system.factor(n + 1)
        mid = (a - 1) // 2
        rec = records.get(n, {})
        if "island" in rec:
            piece = system.cube(rec["island"])
            g = rec["gap"]
        else:
            piece = system.child(system.cube(kept), a * mid)
            g = island_gap(a)
        w = piece.box.side
        probes.append({"level": n, "alpha": system.alpha_at(n + 1), "path": list(piece.path),
                       "x": [float(c) for c in piece.box.midpoint], "r": float((g + Fraction(1, 2)) * w)})
    return probes


def pushforward_power(system: CubeSystem, beta: float) -> CubeSystem:
    """
    The image of a 1D system under `x ↦ x^β`. `β = 1` returns the system
    itself.
    """
    if system.space.q != 1:
        raise ValueError("The power-map pushforward is only defined for 1D systems")
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must be in (0, 1], got {}".format(beta))
    if beta == 1.0:
        return system
    return PushforwardSystem(system, float(beta))


# === Queries ===

def iter_survivors(system: CubeSystem, n: int, start: Cube = None) -> Iterator[Cube]:
    """Level-`n` cubes whose ancestry (below `start`) avoids every center child."""
    stack = [start or system.root]
    while stack:
        node = stack.pop()
        if node.level == n:
            yield node
            continue
        cc = system.center_child_id(node)
        kids = [k for k in system.children(node) if k.path[-1] != cc]
        stack.extend(reversed(kids))


def survivors(system: CubeSystem, n: int) -> List[Cube]:
    if n > system.depth:
        raise ValueError("Level {} is deeper than the system depth {}".format(n, system.depth))
    return list(iter_survivors(system, n))


def in_cover(system: CubeSystem, x, r, n: int) -> Tuple[List[Cube], List[Cube]]:
    """
    `IN`: level-`n` cubes inside the open ball `B(x, r)`; `COV`: level-`n`
    cubes meeting it.
    """
    if r <= 0:
        raise ValueError("The radius must be positive, got {}".format(r))
    x, r = system.ball_args(x, r)
    inner, cover = [], []
    for cube, inside in system.descend(x, r, n):
        cover.append(cube)
        if inside:
            inner.append(cube)
    return inner, cover


def representatives(system: CubeSystem, n: int) -> List[Cube]:
    """
    One cube per class of level `n`: every distorted cube (or every cube,
    for pushforward systems) and one undistorted lattice cube.
    """
    if not isinstance(system, LatticeSystem):
        return list(system.iter_level(n))
    picked = [system.cube(path) for path in sorted(p for p in system.dirty if len(p) == n)]
    node = system.root
    while node is not None and node.level < n:
        node = next((k for k in system.children(node) if k.path not in system.dirty), None)
    if node is not None and node.path not in system.dirty:
        picked.append(node)
    return picked


def _boundary_distance(box: Box, x):
    if box.contains_point(x) or box.inf_dist2(x) == 0:
        return min(min(xi - a, b - xi) for a, xi, b in zip(box.lo, x, box.hi))
    return _sqrt(box.inf_dist2(x))


def upper_porosity_check(system: CubeSystem, n: int, samples: int = 32, seed: int = 0) -> dict:
    """
    For points `z` on the boundary of level-`n` cubes, check that at every
    finer level `m` the ball `B(x_{m,i}, r_{m,i})` of the cube holding `z`
    misses that boundary, and report the smallest porosity ratio
    `r_{m,i} / (|z - x_{m,i}| + r_{m,i})` seen.
    """
    if not system.exact:
        raise ValueError("Boundary porosity is checked on lattice systems only")
    rng = np.random.default_rng(seed)
    cubes = list(system.iter_level(n)) if system.level_size(n) <= system.budget else [system.root]
    ratio, failures, checked = 1.0, [], 0
    for _ in range(samples):
        cube = cubes[int(rng.integers(len(cubes)))]
        axis, side = int(rng.integers(system.space.q)), int(rng.integers(2))
        z = [a + (b - a) * Fraction(int(rng.integers(1, 1024)), 1024) for a, b in zip(cube.box.lo, cube.box.hi)]
        z[axis] = (cube.box.lo, cube.box.hi)[side][axis]
        if not system.space.domain.contains_point(z):
            continue
        for m in range(n + 1, system.depth + 1):
            holder = system.locate(z, m)
            checked += 1
            if _boundary_distance(cube.box, holder.center) < holder.radius:
                failures.append({"cube": list(cube.path), "z": [float(v) for v in z], "level": m,
                                 "witness": list(holder.path)})
                continue
            dist = math.sqrt(float(sum((a - b) ** 2 for a, b in zip(z, holder.center))))
            ratio = min(ratio, float(holder.radius) / (dist + float(holder.radius)))
    return {"level": n, "checked": checked, "min_ratio": ratio, "passed": not failures, "failures": failures}


# === Validation ===

@dataclass
class AxiomResult:
    passed: bool = True
    witness: Optional[dict] = None
    detail: dict = field(default_factory=dict)

    def fail(self, witness: dict):
        if self.passed:
            self.passed, self.witness = False, witness

    def to_dict(self) -> dict:
        return {"passed": self.passed, "witness": self.witness, "detail": self.detail}


@dataclass
class ValidationReport:
    axioms: Dict[str, AxiomResult]
    fitted: dict
    depth: int
    certified_from: Optional[int]
    exhaustive: bool

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.axioms.values())

    def to_dict(self) -> dict:
        return {"passed": self.passed, "depth": self.depth, "certified_from": self.certified_from,
                "exhaustive": self.exhaustive, "fitted": self.fitted,
                "axioms": {k: v.to_dict() for k, v in self.axioms.items()}}


def _cube_ref(cube: Cube) -> dict:
    return {"path": list(cube.path), "center": [float(c) for c in cube.center], "radius": float(cube.radius),
            "box": cube.box.to_list()}


def _checked_cubes(system: CubeSystem, n: int) -> Tuple[List[Cube], bool]:
    """All level-`n` cubes, or one per class when the level is over the budget."""
    if system.level_size(n) <= system.budget:
        return list(system.iter_level(n)), True
    return representatives(system, n), False


def _tolerance(system: CubeSystem):
    # Exact systems compare in `Fraction` arithmetic, so the tolerance is the int 0.
    return 0 if system.exact else 1e-9


def validate(system: CubeSystem, depth: Optional[int] = None, T_list=(2.0, 4.0, 8.0)) -> ValidationReport:
    """
    Check axioms I–V down to `depth`, fitting the constants on the way.
    Violations are report entries, each with a witness.
    """
    depth = system.depth if depth is None else depth
    if depth > system.depth:
        raise ValueError("Depth {} is beyond the system depth {}".format(depth, system.depth))
    if any(float(t) <= 1.0 for t in T_list):
        raise ValueError("Every T must be > 1, got {}".format(list(T_list)))
    tol = _tolerance(system)
    domain = system.space.domain if system.exact else system.space.domain.as_float()
    axioms = {name: AxiomResult() for name in ('I', 'II', 'III', 'IV', 'V')}
    c1_fit, c2_fit, d_fit = 0.0, 0.0, 1.0
    c3_fit = {float(t): 1.0 for t in T_list}
    iv_ok_levels, exhaustive = {}, True

    for n in range(depth + 1):
        cubes, complete = _checked_cubes(system, n)
        exhaustive = exhaustive and complete
        if complete and n > 0:
            total = sum(c.volume for c in cubes)
            if abs(float(total - 1)) > tol:
                axioms['I'].fail({"level": n, "total_volume": float(total)})
        for cube in cubes:
            # III: B(x, r) ∩ domain ⊆ Q ⊆ B(x, C_1 r)
            inner = cube.inner_radius(cube.center, domain)
            if inner is not None and inner < cube.radius * (1 - tol):
                axioms['III'].fail(dict(_cube_ref(cube), inner_radius=float(inner)))
            need = math.sqrt(float(cube.sup_dist2(cube.center))) / float(cube.radius)
            c1_fit = max(c1_fit, need)
            if n == depth:
                continue
            kids = system.children(cube)
            # I, II: the children partition the parent region.
            vol = sum(k.volume for k in kids)
            if abs(float(vol - cube.volume)) > tol * float(cube.volume):
                axioms['I'].fail(dict(_cube_ref(cube), children_volume=float(vol), volume=float(cube.volume)))
            for k in kids:
                for piece in (k.box,) + k.extras:
                    if not any(b.contains_box(piece) for b in (cube.box,) + cube.extras) or \
                            any(h.overlaps(piece) for h in cube.holes):
                        axioms['II'].fail({"parent": list(cube.path), "child": list(k.path),
                                           "box": piece.to_list()})
            # IV: radius ratio of the center child and a nonempty remainder.
            cc = system.center_child(cube)
            alpha = system.alpha_at(n + 1)
            ratio = float(cc.radius) / float(cube.radius)
            c2_fit = max(c2_fit, ratio / alpha, alpha / ratio)
            d_fit = min(d_fit, _largest_d(ratio, alpha, system.constants.C2))
            ok = (ratio <= system.constants.C2 * alpha ** system.constants.d * (1 + 1e-12)
                  and alpha ** (1.0 / system.constants.d) / system.constants.C2 <= ratio * (1 + 1e-12)
                  and cube.volume > cc.volume)
            if not ok:
                axioms['IV'].fail(dict(_cube_ref(cube), center_child=list(cc.path), ratio=ratio, alpha=alpha))
                iv_ok_levels[n] = False
            else:
                iv_ok_levels.setdefault(n, True)
        # V: comparable radii of cubes meeting B(x_j, T r_j).
        for t in c3_fit:
            c3_fit[t] = max(c3_fit[t], _fit_c3(system, n, cubes, t))

    if c1_fit > system.constants.C1 * (1 + 1e-12):
        axioms['III'].detail["needs_C1"] = c1_fit
        axioms['III'].fail({"fitted_C1": c1_fit, "stored_C1": system.constants.C1})
    stored = system.constants.C3
    for t, value in c3_fit.items():
        bound = stored.get(t) if stored else None
        if (bound is not None and value > bound * (1 + 1e-12)) or not math.isfinite(value):
            axioms['V'].fail({"T": t, "fitted_C3": value, "stored_C3": bound})

    certified = None
    for n in range(depth - 1, -1, -1):
        if not iv_ok_levels.get(n, True):
            break
        certified = n
    fitted = {"C1": c1_fit, "C2": c2_fit if depth else None, "d": d_fit if depth else None,
              "C3": {repr(t): v for t, v in sorted(c3_fit.items())}}
    return ValidationReport(axioms, fitted, depth, certified, exhaustive)


def _largest_d(ratio: float, alpha: float, c2: float) -> float:
    """The largest `d <= 1` with `α^{1/d}/C_2 <= ratio <= C_2 α^d`, 0 if none."""
    la = math.log(alpha)
    if ratio / c2 >= 1.0:
        return 0.0
    d = min(1.0, math.log(ratio / c2) / la)
    if c2 * ratio < 1.0:
        d = min(d, la / math.log(c2 * ratio))
    return max(d, 0.0)


def _fit_c3(system: CubeSystem, n: int, cubes: List[Cube], t: float) -> float:
    lattice = isinstance(system, LatticeSystem)
    if lattice and not any(len(p) == n for p in system.dirty):
        return 1.0
    if lattice:
        anchors = [c for c in cubes if c.path in system.dirty]
        near = {}
        for a in anchors:
            x, r = system.ball_args(a.center, a.radius * 3 * Fraction(t))
            for c, _ in system.descend(x, r, n):
                near[c.path] = c
        anchors = list(near.values())
    else:
        anchors = cubes
    worst = 1.0
    for j in anchors:
        x, r = system.ball_args(j.center, j.radius * (Fraction(t) if system.exact else t))
        for i, _ in system.descend(x, r, n):
            worst = max(worst, float(i.radius) / float(j.radius), float(j.radius) / float(i.radius))
    return worst


# === Serialization ===

def system_to_dict(system: CubeSystem, cubes: Optional[bool] = None) -> dict:
    """
    The documented JSON form of a system. Lazy systems (and `cubes=False`)
    carry only the build spec, overrides, transfers and the distortion
    manifest; eager ones list every cube as well.
    """
    doc = {"space": system.space.to_dict(), "alpha": system.alpha.to_dict(),
           "constants": system.constants.to_dict(), "spec": system.spec(),
           "overrides": [{"path": list(p), "center": [str(exact(c)) if system.exact else c for c in v[0]],
                          "radius": str(exact(v[1])) if system.exact else v[1]}
                         for p, v in sorted(system.overrides.items())],
           "transfers": [{"hole": list(h), "child": v[0], "recipient": list(v[1])}
                         for h, v in sorted(system.transfers.items())],
           "manifest": system.manifest}
    if system.spec_extra:
        doc["spec"].update(system.spec_extra)
    if cubes if cubes is not None else not system.lazy:
        doc["cubes"] = []
        for n in range(system.depth + 1):
            for c in system.iter_level(n):
                system.center_child_id(c)
                doc["cubes"].append(c.to_dict())
    return doc


def system_from_dict(doc: dict) -> CubeSystem:
    spec = doc["spec"]
    if spec["kind"] == "pushforward":
        return pushforward_power(system_from_dict(spec["source"]), float(spec["beta"]))
    space = SpaceModel.from_dict(doc["space"])
    alpha = make_sequence(doc["alpha"])
    depth, lazy = int(spec["depth"]), bool(spec.get("lazy", True))
    budget = int(spec.get("budget", DEFAULT_BUDGET))
    if spec["kind"] == "subsampled":
        system = build_subsampled_dyadic(space, int(spec["base"]), alpha, depth, lazy=True, budget=budget)
    else:
        system = build_adic_system(space, alpha, depth, lazy=True, budget=budget)
    system.constants = Constants.from_dict(doc["constants"])
    system.overrides = {tuple(o["path"]): (tuple(Fraction(c) for c in o["center"]), Fraction(o["radius"]))
                        for o in doc.get("overrides", [])}
    system.transfers = {tuple(t["hole"]): (int(t["child"]), tuple(t["recipient"]))
                        for t in doc.get("transfers", [])}
    system.manifest = list(doc.get("manifest", []))
    if "distortion" in spec:
        system.spec_extra = {"distortion": spec["distortion"]}
    system.__dict__.pop('dirty', None)
    system.lazy = lazy
    _check_budget(system, lazy)
    return system
