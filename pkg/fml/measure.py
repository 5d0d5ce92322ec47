"""
The weighted measures `ν_n` built on a cube system.

Inside a cube `Q = Q_{n-1,j}` with center `x` and radius `r`, the children
split into `I` (inside the open ball `B(x, r/2)`) and the rest `I^c`. On `I`
the radial weight `A·|y - x|^ρ` is averaged child by child into a constant
`t`, and `A` is chosen so that the weighted children of `I` keep the volume
of `I`; children in `I^c` keep `t = 1`. A cube's cumulative weight `K` is the
product of the `t` along its ancestry from level `n_0` on, and its mass is
`ν(Q) = K·H(Q)`.

Weights only depend on a cube's *class* (its level, for undistorted lattice
cubes, or its path otherwise), so they are computed once per class. Ball
masses are found by descending the tree with `K` carried down: cubes inside
the ball add their mass, cubes missing it are skipped, and the cubes cut by
the sphere at the finest level add `K·H(Q ∩ B)` in closed form.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .cubes import Cube, CubeSystem, in_cover, representatives, system_to_dict
from .quadrature import DEFAULT_TOLERANCE, power_distance_integral


__all__ = ('WeightLevel', 'MeasureTree', 'BallMass', 'Sampling', 'DoublingReport', 'NEVER',
           'power_distance_integral', 'iset', 'coefficient_A', 'child_weight_t', 'choose_n0',
           'build_measure', 'cube_mass', 'ball_mass', 'measure_ball', 'doubling_scan',
           'weight_comparability_probe', 'conservation_audit', 'fitted_C4', 'tree_to_dict')

# `choose_n0` result when no level qualifies.
NEVER = math.inf

CRITERIA = ('surrogate', 'nontrivial')


# === Weights of one cube ===

def iset(system: CubeSystem, cube: Cube) -> Tuple[List[Cube], List[Cube]]:
    """
    Split the children of `cube` into `I` (inside `B(x, r/2)`, exactly) and
    `I^c`.
    """
    x, half = cube.center, cube.radius / 2
    inner, rest = [], []
    for kid in system.children(cube):
        (inner if kid.inside_ball(x, half) else rest).append(kid)
    return inner, rest


@dataclass
class WeightLevel:
    level: int
    key: tuple
    I: Tuple[int, ...]
    Ic: Tuple[int, ...]
    A: Optional[float]
    t: Dict[int, float]
    radius: float
    volume: float
    volumes: Dict[int, float] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.I

    def conservation_error(self) -> float:
        """`|Σ t·H(child) - H(Q)| / H(Q)`."""
        total = math.fsum(self.t[c] * self.volumes[c] for c in self.t)
        return abs(total - self.volume) / self.volume

    def to_dict(self) -> dict:
        return {"level": self.level, "key": list(self.key), "I": list(self.I), "Ic": list(self.Ic),
                "A": self.A, "t": {str(c): v for c, v in sorted(self.t.items())}}


def _weight_level(system: CubeSystem, cube: Cube, rho: float, tol: float) -> WeightLevel:
    inner, rest = iset(system, cube)
    volumes = {k.path[-1]: k.fvolume for k in system.children(cube)}
    t = {c: 1.0 for c in volumes}
    A = None
    if inner:
        integrals = {k.path[-1]: k.integral(cube.center, rho, tol) for k in inner}
        A = math.fsum(volumes[c] for c in integrals) / math.fsum(integrals.values())
        for c, value in integrals.items():
            t[c] = A * value / volumes[c]
    return WeightLevel(cube.level + 1, cube.key, tuple(k.path[-1] for k in inner),
                       tuple(k.path[-1] for k in rest), A, t, cube.fradius, cube.fvolume, volumes)


def coefficient_A(system: CubeSystem, cube: Cube, rho: float, tol: float = DEFAULT_TOLERANCE) -> Optional[float]:
    """
    `A = H(I) / ∫_I |y - x|^ρ dH(y)`, or `None` when `I` is empty.
    """
    _check_rho(system, rho)
    return _weight_level(system, cube, rho, tol).A


def child_weight_t(system: CubeSystem, cube: Cube, child: Cube, rho: float,
                   tol: float = DEFAULT_TOLERANCE) -> float:
    """The averaged weight `t` of one child: 1 on `I^c`, `A·∫_child|y-x|^ρ / H(child)` on `I`."""
    _check_rho(system, rho)
    if child.path[:-1] != cube.path:
        raise ValueError("Cube {} is not a child of {}".format(list(child.path), list(cube.path)))
    return _weight_level(system, cube, rho, tol).t[child.path[-1]]


def _check_rho(system: CubeSystem, rho: float):
    if rho <= -system.space.q:
        raise ValueError("rho must be > -{}, got {}".format(system.space.q, rho))


# === Choosing the starting level ===

def _level_ok(system: CubeSystem, cube: Cube, criterion: str) -> Tuple[bool, int]:
    inner, _ = iset(system, cube)
    ids = {k.path[-1] for k in inner}
    small = cube.radius / 16
    covered = all(k.path[-1] in ids for k in system.children(cube) if k.meets_ball(cube.center, small))
    need = 2 if criterion == 'nontrivial' else 1
    return covered and len(ids) >= need, len(ids)


def n0_survey(system: CubeSystem, depth: Optional[int] = None, criterion: str = 'nontrivial') -> List[dict]:
    """Per weighted level `n`: whether every class of level `n-1` qualifies."""
    if criterion not in CRITERIA:
        raise ValueError("Unknown n0 criterion: {}".format(criterion))
    depth = system.depth if depth is None else depth
    rows = []
    for n in range(1, depth + 1):
        results = [_level_ok(system, c, criterion) for c in representatives(system, n - 1)]
        rows.append({"level": n, "ok": all(ok for ok, _ in results),
                     "min_I": min(size for _, size in results), "max_I": max(size for _, size in results)})
    return rows


def choose_n0(system: CubeSystem, rho: float = 0.0, depth: Optional[int] = None,
              criterion: str = 'nontrivial'):
    """
    The smallest weighted level from which every class satisfies
    `B(x, r/16) ⊂ ∪I` and has a large enough `I` (one child for the
    `surrogate` criterion, two for `nontrivial`), or `NEVER`.
    """
    _check_rho(system, rho)
    rows = n0_survey(system, depth, criterion)
    n0 = NEVER
    for row in reversed(rows):
        if not row["ok"]:
            break
        n0 = row["level"]
    return n0


# === The measure tree ===

class MeasureTree:
    """
    `ν` at finite depth: weighted levels `n_0 .. depth`, `t ≡ 1` elsewhere.
    """

    def __init__(self, system: CubeSystem, rho: float, n0, depth: int, tol: float = DEFAULT_TOLERANCE,
                 weights: Optional[dict] = None):
        self.system = system
        self.rho = rho
        self.n0 = n0
        self.depth = depth
        self.tol = tol
        self.flags: List[str] = []
        self._weights: Dict[tuple, WeightLevel] = {} if weights is None else weights
        self._fractions: Dict[tuple, float] = {}

    def weighted(self, n: int) -> bool:
        return self.n0 != NEVER and self.n0 <= n <= self.depth

    def weights(self, cube: Cube) -> Optional[WeightLevel]:
        """The weights on the children of `cube`, `None` where `t ≡ 1`."""
        if not self.weighted(cube.level + 1):
            return None
        level = self._weights.get(cube.key)
        if level is None:
            level = _weight_level(self.system, cube, self.rho, self.tol)
            self._weights[cube.key] = level
        return level

    def t(self, cube: Cube, child_id: int) -> float:
        level = self.weights(cube)
        return 1.0 if level is None else level.t[child_id]

    def K(self, path) -> float:
        node, k = self.system.root, 1.0
        for child_id in path:
            k *= self.t(node, child_id)
            node = self.system.child(node, child_id)
        return k

    def mass(self, cube: Cube, K: Optional[float] = None) -> float:
        return (self.K(cube.path) if K is None else K) * cube.fvolume

    def survivor_fraction(self, cube: Cube, n: int) -> float:
        """
        `ν(level-n survivors inside Q) / ν(Q)` for a cube on a surviving line.
        """
        if cube.level >= n:
            return 1.0
        key = (cube.key, n)
        value = self._fractions.get(key)
        if value is None:
            cc = self.system.center_child_id(cube)
            parts = [self.t(cube, k.path[-1]) * k.fvolume * self.survivor_fraction(k, n)
                     for k in self.system.children(cube) if k.path[-1] != cc]
            value = math.fsum(parts) / cube.fvolume
            self._fractions[key] = value
        return value

    def single_level(self, n: int) -> 'MeasureTree':
        """The single-level measure `θ_n`: only the weights of level `n` applied."""
        if not 1 <= n <= self.depth:
            raise ValueError("Level {} is not weighted in this tree".format(n))
        view = MeasureTree(self.system, self.rho, n, n, self.tol, self._weights)
        return view

    def weight_levels(self) -> List[WeightLevel]:
        """Weights for every class of every weighted level."""
        out = []
        if self.n0 == NEVER:
            return out
        for n in range(int(self.n0), self.depth + 1):
            for cube in representatives(self.system, n - 1):
                out.append(self.weights(cube))
        return out


def build_measure(system: CubeSystem, rho: float, n0='auto', depth: Optional[int] = None,
                  tol: float = DEFAULT_TOLERANCE, criterion: str = 'nontrivial') -> MeasureTree:
    """
    Weight the system from level `n_0` (a number, or `auto` for
    `choose_n0`) down to `depth`.
    """
    _check_rho(system, rho)
    depth = system.depth if depth is None else depth
    if depth > system.depth:
        raise ValueError("Depth {} is beyond the system depth {}".format(depth, system.depth))
    if n0 == 'auto':
        n0 = choose_n0(system, rho, depth, criterion)
    elif n0 != NEVER:
        n0 = int(n0)
        if n0 < 1:
            raise ValueError("n0 must be >= 1, got {}".format(n0))
    tree = MeasureTree(system, rho, n0, depth, tol)
    if n0 == NEVER:
        tree.flags.append("no level qualifies for weighting; the measure is the reference measure")
    for level in tree.weight_levels():
        if level.empty:
            tree.flags.append("empty I at class {} of level {}; t = 1 there".format(list(level.key), level.level))
        elif len(level.I) == 1:
            tree.flags.append("single-child I at class {} of level {}; t = 1 there".format(
                list(level.key), level.level))
    return tree


def cube_mass(tree: MeasureTree, path) -> float:
    """`ν(Q)` of the cube at `path`; unknown paths raise `ValueError`."""
    cube = tree.system.cube(tuple(path))
    return tree.mass(cube)


# === Ball masses ===

@dataclass
class BallMass:
    value: float
    inner: float
    outer: float

    @property
    def width(self) -> float:
        return self.outer - self.inner

    def to_dict(self) -> dict:
        return {"value": self.value, "inner": self.inner, "outer": self.outer, "width": self.width}


def _descend(tree: MeasureTree, x, r: float, survivor_level: int = 0, stop_level: Optional[int] = None) -> BallMass:
    """
    The mass of `B(x, r)`, restricted to the level-`survivor_level`
    survivors. Cubes cut by the sphere at `stop_level` (default: the tree
    depth) count their mass times the volume fraction inside the ball.
    """
    system = tree.system
    x = tuple(float(v) for v in x)
    r = float(r)
    stop = tree.depth if stop_level is None else stop_level
    inner, cut, cut_full = [], [], []
    stack = [(system.root, 1.0)]
    while stack:
        cube, K = stack.pop()
        if not cube.fast_meets_ball(x, r):
            continue
        mass = K * cube.fvolume
        if cube.level < survivor_level:
            mass *= tree.survivor_fraction(cube, survivor_level)
        if mass == 0.0:
            continue
        if cube.fast_inside_ball(x, r):
            inner.append(mass)
            continue
        if cube.level >= stop or cube.level >= system.depth:
            cut.append(mass * cube.ball_volume(x, r) / cube.fvolume)
            cut_full.append(mass)
            continue
        cc = system.center_child_id(cube) if cube.level < survivor_level else None
        for kid in system.children(cube):
            if kid.path[-1] != cc:
                stack.append((kid, K * tree.t(cube, kid.path[-1])))
    low = math.fsum(inner)
    return BallMass(low + math.fsum(cut), low, low + math.fsum(cut_full))


def measure_ball(tree: MeasureTree, x, r: float, stop_level: Optional[int] = None) -> BallMass:
    if r <= 0:
        raise ValueError("The radius must be positive, got {}".format(r))
    return _descend(tree, x, r, 0, stop_level)


def ball_mass(tree: MeasureTree, x, r: float, mode: str = 'exact') -> float:
    """
    `ν(B(x, r))`: `inner` sums the finest cubes inside the ball, `outer`
    those meeting it, `exact` adds the cut cubes' exact share.
    """
    bm = measure_ball(tree, x, r)
    if mode == 'exact':
        return bm.value
    if mode in ('inner', 'outer'):
        return getattr(bm, mode)
    raise ValueError("Unknown ball mass mode: {}".format(mode))


# === Scans ===

@dataclass
class Sampling:
    source: str = 'uniform'
    count: int = 1000
    seed: int = 0
    rmin: float = 1e-3
    rmax: float = 0.25
    level: Optional[int] = None
    single_level: Optional[int] = None

    SOURCES = ('uniform', 'centers', 'survivors')

    def __post_init__(self):
        if self.source not in self.SOURCES:
            raise ValueError("Unknown point source: {}".format(self.source))
        if not 0 < self.rmin <= self.rmax:
            raise ValueError("Need 0 < rmin <= rmax, got {} and {}".format(self.rmin, self.rmax))
        if self.count < 1:
            raise ValueError("The sample count must be positive, got {}".format(self.count))

    def radii(self) -> List[float]:
        grid, r = [], self.rmin
        while r <= self.rmax * (1 + 1e-12):
            grid.append(r)
            r *= 2.0
        return grid

    def to_dict(self) -> dict:
        return {"source": self.source, "count": self.count, "seed": self.seed, "rmin": self.rmin,
                "rmax": self.rmax, "level": self.level, "single_level": self.single_level}


def _random_cube(system: CubeSystem, level: int, rng, survivors_only: bool) -> Cube:
    node = system.root
    while node.level < level:
        kids = system.children(node)
        if survivors_only:
            cc = system.center_child_id(node)
            kids = [k for k in kids if k.path[-1] != cc]
        node = kids[int(rng.integers(len(kids)))]
    return node


def sample_points(system: CubeSystem, sampling: Sampling, level: int) -> List[Tuple[tuple, float]]:
    """The `(x, r)` queries of a scan, fixed by the seed."""
    rng = np.random.default_rng(sampling.seed)
    grid = sampling.radii()
    out = []
    for _ in range(sampling.count):
        if sampling.source == 'uniform':
            x = tuple(float(v) for v in rng.random(system.space.q))
        else:
            x = _random_cube(system, level, rng, sampling.source == 'survivors').fcenter
        out.append((x, grid[int(rng.integers(len(grid)))]))
    return out


def _parallel_map(fn, items, workers: int) -> list:
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class DoublingReport:
    sampling: dict
    rows: List[dict]
    max_ratio: float
    fitted: dict
    zero_denominators: int = 0

    def to_dict(self) -> dict:
        return {"sampling": self.sampling, "max_ratio": self.max_ratio, "fitted_constants": self.fitted,
                "zero_denominators": self.zero_denominators, "samples": len(self.rows)}


def _in_level(system: CubeSystem, x, r: float) -> int:
    """
    The first level at which the cube holding `x` fits well inside
    `B(x, r)`, so that `IN(B(x, r), n)` is a fair share of the ball.
    """
    node = system.root
    while node.level < system.depth and system.constants.C1 * node.fradius > r / 2:
        node = next((k for k in system.children(node) if k.contains_point(x)), None)
        if node is None:
            return system.depth
    return node.level


def doubling_scan(tree: MeasureTree, sampling: Sampling, workers: int = 1) -> DoublingReport:
    """
    Ratios `ν(B(x,2r)) / ν(B(x,r))` over seeded queries. With
    `sampling.single_level = n` the single-level measure `θ_n` is probed
    instead, and with `source = centers` the balls are centered at cube
    centers.
    """
    probe = tree if sampling.single_level is None else tree.single_level(sampling.single_level)
    level = probe.depth if sampling.level is None else sampling.level
    queries = sample_points(tree.system, sampling, level)

    def one(query):
        x, r = query
        small, big = measure_ball(probe, x, r).value, measure_ball(probe, x, 2 * r).value
        inside, _ = in_cover(tree.system, x, r, _in_level(tree.system, x, r))
        in_mass = math.fsum(probe.mass(c) for c in inside)
        return {"x": list(x), "r": r, "nu_r": small, "nu_2r": big,
                "ratio": big / small if small > 0 else None,
                "mu_ratio": small / in_mass if in_mass > 0 else None}

    rows = _parallel_map(one, queries, workers)
    ratios = [row["ratio"] for row in rows if row["ratio"] is not None]
    mu = [row["mu_ratio"] for row in rows if row["mu_ratio"] is not None]
    max_ratio = max(ratios) if ratios else math.nan
    name = "C_nu" if sampling.single_level is None else ("C_6" if sampling.source == 'centers' else "C_5")
    fitted = {name: max_ratio, "C_mu": max(mu) if mu else None, "C_4": fitted_C4(tree)}
    return DoublingReport(sampling.to_dict(), rows, max_ratio, fitted, len(rows) - len(ratios))


def weight_comparability_probe(tree: MeasureTree, n: int, T: Optional[float] = None,
                               anchors: int = 4096, seed: int = 0) -> dict:
    """
    Over the level-`n` cubes meeting a common ball `B(x_{n,k}, T r_{n,k})`
    (`T = 8·C_1` by default), the largest ratio of their weights `t_n`
    (the empirical `C_7`) and of their parents' weights `t_{n-1}` (`C_8`).
    """
    system = tree.system
    if not 1 <= n <= tree.depth:
        raise ValueError("Level {} is not weighted in this tree".format(n))
    T = 8.0 * system.constants.C1 if T is None else float(T)
    if system.level_size(n) <= anchors:
        centers = list(system.iter_level(n))
    else:
        rng = np.random.default_rng(seed)
        centers = representatives(system, n) + [_random_cube(system, n, rng, False) for _ in range(64)]

    def weights_of(cube: Cube) -> Tuple[float, float]:
        parent = system.cube(cube.path[:-1])
        t_n = tree.t(parent, cube.path[-1])
        t_prev = tree.t(system.cube(parent.path[:-1]), parent.path[-1]) if parent.path else 1.0
        return t_n, t_prev

    within = 1.0
    for cube in representatives(system, n - 1):
        level = tree.weights(cube)
        if level is not None:
            within = max(within, max(level.t.values()) / min(level.t.values()))
    c7 = c8 = 1.0
    for anchor in centers:
        _, cover = in_cover(system, anchor.center, anchor.fradius * T, n)
        pairs = [weights_of(c) for c in cover]
        c7 = max(c7, max(p[0] for p in pairs) / min(p[0] for p in pairs))
        c8 = max(c8, max(p[1] for p in pairs) / min(p[1] for p in pairs))
    return {"level": n, "T": T, "anchors": len(centers), "C_7_within_cube": within, "C_7": c7, "C_8": c8}


# === Audits ===

def conservation_audit(tree: MeasureTree, budget: Optional[int] = None) -> dict:
    """
    Weighted classes: `|Σ t·H(child) - H(Q)| / H(Q)`. Cubes (while within
    the budget): `|Σ ν(children) - ν(Q)| / ν(Q)`.
    """
    system = tree.system
    budget = system.budget if budget is None else budget
    class_error = max((w.conservation_error() for w in tree.weight_levels()), default=0.0)
    cube_error, cubes, worst = 0.0, 0, None
    stack = [(system.root, 1.0)]
    while stack and cubes < budget:
        cube, K = stack.pop()
        if cube.level >= tree.depth:
            continue
        kids = [(k, K * tree.t(cube, k.path[-1])) for k in system.children(cube)]
        parent = K * cube.fvolume
        err = abs(math.fsum(k2 * k.fvolume for k, k2 in kids) - parent) / parent
        if err > cube_error:
            cube_error, worst = err, list(cube.path)
        cubes += 1
        stack.extend(kids)
    bound = 1e-12 if system.space.q == 1 else 1e-6
    return {"class_error": class_error, "cube_error": cube_error, "worst_cube": worst, "cubes_checked": cubes,
            "complete": not stack, "bound": bound, "passed": max(class_error, cube_error) <= bound}


def fitted_C4(tree: MeasureTree) -> Optional[float]:
    """The smallest `C_4` with `r^{-ρ}/C_4 <= A <= C_4 r^{-ρ}` over all computed `A`."""
    scaled = [w.A * w.radius ** tree.rho for w in tree.weight_levels() if w.A is not None]
    if not scaled:
        return None
    return max(max(scaled), 1.0 / min(scaled))


def tree_to_dict(tree: MeasureTree, budget: Optional[int] = None) -> dict:
    """
    The system reference, the per-class weights and, for systems within the
    budget, the per-path table of `K`.
    """
    system = tree.system
    budget = system.budget if budget is None else budget
    doc = {"system": system_to_dict(system, cubes=False), "rho": tree.rho,
           "n0": "never" if tree.n0 == NEVER else tree.n0, "depth": tree.depth, "tolerance": tree.tol,
           "flags": tree.flags, "weights": [w.to_dict() for w in tree.weight_levels()]}
    if system.total_size() <= budget:
        table = {}
        stack = [(system.root, 1.0)]
        while stack:
            cube, K = stack.pop()
            table["/".join(str(c) for c in cube.path)] = K
            if cube.level < tree.depth:
                stack.extend((k, K * tree.t(cube, k.path[-1])) for k in system.children(cube))
        doc["K"] = dict(sorted(table.items()))
    return doc
