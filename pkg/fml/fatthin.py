"""
Fat and thin experiments on the level-`n` survivors, the finite-depth
stand-ins for the set `E`.

The mass lost at each level is carried by the center children. When
`ν(center child) / ν(Q) <= CEC·α^{(q+ρ)d}` for one constant `CEC`, the
survivor masses stay above the product `∏ (1 - CEC·α_j^{(q+ρ)d})`, which is
positive exactly when `Σ α_j^{(q+ρ)d}` converges. The `fat_thin_experiment`
below measures the ratios, fits `CEC`, follows the survivor masses and puts
the outcome next to the prediction made from the sequence class.

The second half restricts `ν` to the survivors: restricted doubling ratios
along the spine of a distorted carpet, and the relative plumpness probe.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .cubes import CubeSystem, Cube, LatticeSystem, representatives, spine_probes, upper_porosity_check
from .measure import MeasureTree, BallMass, Sampling, _descend, _parallel_map, build_measure, sample_points
from .quadrature import DEFAULT_TOLERANCE
from .sequences import AlphaSequence, Membership, classify_family


__all__ = ('FatThinReport', 'PlumpnessReport', 'ProductBound', 'survivor_mass', 'center_child_ratio',
           'product_lower_bound', 'choose_rho', 'fat_thin_experiment', 'restricted_ball_mass',
           'restricted_doubling_scan', 'relative_plumpness_probe', 'measure_density_floor')


# === Survivor masses ===

def survivor_mass(tree: MeasureTree, n: int) -> float:
    """`ν` of the union of the level-`n` survivors."""
    if not 0 <= n <= tree.system.depth:
        raise ValueError("Level {} is outside the system depth {}".format(n, tree.system.depth))
    root = tree.system.root
    return root.fvolume * tree.survivor_fraction(root, n)


def _is_survivor(system: CubeSystem, cube: Cube) -> bool:
    node = system.root
    for child_id in cube.path:
        if system.center_child_id(node) == child_id:
            return False
        node = system.child(node, child_id)
    return True


def _survivor_classes(system: CubeSystem, n: int) -> List[Cube]:
    return [c for c in representatives(system, n) if _is_survivor(system, c)]


def _exponent(tree: MeasureTree) -> float:
    return (tree.system.space.q + tree.rho) * tree.system.constants.d


def center_child_ratio(tree: MeasureTree, n: int) -> dict:
    """
    The largest `ν(center child) / ν(Q)` over the survivor cubes `Q` of level
    `n`, and the constant it implies, `ratio / α_{n+1}^{(q+ρ)d}`.
    """
    system = tree.system
    if not 0 <= n < system.depth:
        raise ValueError("Level {} has no children in a system of depth {}".format(n, system.depth))
    worst, witness = 0.0, None
    for cube in _survivor_classes(system, n):
        cc = system.center_child(cube)
        ratio = tree.t(cube, cc.path[-1]) * cc.fvolume / cube.fvolume
        if ratio > worst:
            worst, witness = ratio, list(cube.path)
    alpha = system.alpha_at(n + 1)
    return {"level": n, "alpha": alpha, "ratio": worst, "implied_CEC": worst / alpha ** _exponent(tree),
            "witness": witness}


@dataclass
class ProductBound:
    value: float
    extrapolated: Optional[float]
    lower: Optional[float]
    vacuous: bool
    n1: int
    N: int

    def to_dict(self) -> dict:
        return {"value": self.value, "extrapolated": self.extrapolated, "lower": self.lower,
                "vacuous": self.vacuous, "n1": self.n1, "N": self.N}


def product_lower_bound(alpha: AlphaSequence, rho: float, q: int, d: float, CEC: float, n1: int,
                        N: int) -> ProductBound:
    """
    `∏_{j=n1}^{N} (1 - CEC·α_j^{(q+ρ)d})`, extended past `N` with the tail
    sum of the sequence: `extrapolated` uses `-log(1 - x) ≈ x`, `lower`
    the bound `-log(1 - x) <= x / (1 - x)`.
    """
    if n1 < 1 or N < n1 - 1:
        raise ValueError("Need 1 <= n1 <= N + 1, got n1={} and N={}".format(n1, N))
    e = (q + rho) * d
    factors = [1.0 - CEC * alpha.value(j) ** e for j in range(n1, N + 1)]
    if any(f <= 0.0 for f in factors):
        return ProductBound(0.0, 0.0, 0.0, True, n1, N)
    value = math.exp(math.fsum(math.log(f) for f in factors))
    converges = alpha.converges(e)
    if not converges:
        # No closed form (None) or a divergent series: nothing beyond N is claimed.
        tail_value = 0.0 if converges is False else None
        return ProductBound(value, tail_value, tail_value, False, n1, N)
    tail = CEC * alpha.tail_sum(e, N)
    largest = CEC * alpha.value(N + 1) ** e if alpha.length_limit is None or N < alpha.length_limit else 0.0
    if largest >= 1.0:
        return ProductBound(value, 0.0, 0.0, True, n1, N)
    return ProductBound(value, value * math.exp(-tail), value * math.exp(-tail / (1.0 - largest)), False, n1, N)


# === The experiment ===

@dataclass
class FatThinReport:
    rho: float
    q: int
    d: float
    rows: List[dict]
    CEC: float
    n1: Optional[int]
    bound: Optional[ProductBound]
    verdict: str
    prediction: str
    consistent: Optional[bool]
    flags: List[str] = field(default_factory=list)
    violations: List[str] = field(default_factory=list)
    porosity: Optional[dict] = None

    COLUMNS = ('n', 'alpha_n', 'center_ratio', 'survivor_mass', 'product_bound')

    def table(self) -> List[list]:
        return [[row[c] for c in self.COLUMNS] for row in self.rows]

    def to_dict(self) -> dict:
        return {"rho": self.rho, "q": self.q, "d": self.d, "CEC": self.CEC, "n1": self.n1,
                "bound": self.bound.to_dict() if self.bound else None, "verdict": self.verdict,
                "prediction": self.prediction, "consistent": self.consistent, "flags": self.flags,
                "violations": self.violations, "porosity": self.porosity, "levels": self.rows}


def choose_rho(system: CubeSystem) -> float:
    """
    The default `ρ` per sequence class: `1` on `ℓ^0`; on `ℓ^∞ \\ ℓ^0` the
    smallest `ρ >= 0` making `Σ α^{(q+ρ)d}` converge at the witness `p`;
    `-q/2` (the thin branch) when the sequence is in neither.
    """
    report = classify_family(system.alpha)
    q, d = system.space.q, system.constants.d
    if report.membership is Membership.ELL0:
        return 1.0
    if report.membership is Membership.ELL_INFINITY:
        return max(0.0, report.witness_p / d - q)
    if report.membership is Membership.NEITHER:
        return -q / 2.0
    return 0.0


_CONSISTENT = {
    'positive-limit': ('fat', 'neither fat nor thin'),
    'collapse': ('thin', 'neither fat nor thin'),
}


def fat_thin_experiment(system: CubeSystem, rho='auto', depth: Optional[int] = None, n0='auto',
                        tol: float = DEFAULT_TOLERANCE, criterion: str = 'nontrivial',
                        tree: Optional[MeasureTree] = None) -> FatThinReport:
    """
    Per level: the center-child ratio, the survivor mass and the product
    bound from the fitted `CEC`. The verdict (`positive-limit` when
    `Σ α^{(q+ρ)d}` converges, `collapse` when it diverges) is checked
    against the survivor masses and against the class prediction.
    """
    if tree is None:
        rho = choose_rho(system) if rho == 'auto' else float(rho)
        if rho <= -system.space.q:
            raise ValueError("rho = {} is inadmissible in dimension {}".format(rho, system.space.q))
        tree = build_measure(system, rho, n0, depth, tol, criterion)
    rho, depth = tree.rho, tree.depth
    q, d = system.space.q, system.constants.d
    e = (q + rho) * d
    flags, violations = list(tree.flags), []

    ratios = [center_child_ratio(tree, n) for n in range(depth)]
    masses = [survivor_mass(tree, n) for n in range(depth + 1)]
    CEC = max((r["implied_CEC"] for r in ratios), default=1.0)
    n1 = next((n for n in range(1, depth + 1) if 1.0 - CEC * system.alpha_at(n) ** e > 0.0), None)

    rows = [{"n": 0, "alpha_n": None, "center_ratio": None, "survivor_mass": masses[0], "product_bound": None}]
    for n in range(1, depth + 1):
        bound = None
        if n1 is not None and n >= n1:
            pb = product_lower_bound(system.alpha, rho, q, d, CEC, n1, n)
            bound = None if pb.vacuous else masses[n1 - 1] * pb.value
        rows.append({"n": n, "alpha_n": system.alpha_at(n), "center_ratio": ratios[n - 1]["ratio"],
                     "survivor_mass": masses[n], "product_bound": bound})

    for a, b in zip(masses, masses[1:]):
        if b > a * (1 + 1e-12):
            violations.append("survivor mass grew from {!r} to {!r}".format(a, b))
    for row in rows:
        if row["product_bound"] is not None and row["survivor_mass"] < row["product_bound"] * (1 - 1e-9):
            violations.append("survivor mass {!r} below the product bound {!r} at level {}".format(
                row["survivor_mass"], row["product_bound"], row["n"]))

    final = None
    if n1 is not None:
        final = product_lower_bound(system.alpha, rho, q, d, CEC, n1, depth)
        if final.vacuous:
            flags.append("product bound vacuous below n1 = {}".format(n1))
    else:
        flags.append("no level with 1 - CEC*alpha^(q+rho)d > 0; the product bound is vacuous")
    converges = system.alpha.converges(e)
    verdict = {True: 'positive-limit', False: 'collapse'}.get(converges, 'undetermined')
    prediction = classify_family(system.alpha).prediction
    consistent = None if verdict == 'undetermined' or prediction == 'unknown' else \
        prediction in _CONSISTENT[verdict]
    porosity = upper_porosity_check(system, min(1, depth)) if system.exact and depth else None
    return FatThinReport(rho, q, d, rows, CEC, n1, final, verdict, prediction, consistent, flags, violations,
                         porosity)


def measure_density_floor(tree: MeasureTree, n: int, deep: int) -> dict:
    """
    `min ν(level-deep survivors in Q) / ν(Q)` over the survivor cubes `Q` of
    level `n`: the finite-depth value of the constant `c` in
    `ν(Q ∩ E) >= c·ν(Q)`.
    """
    if not 0 <= n <= deep <= tree.system.depth:
        raise ValueError("Need 0 <= n <= deep <= {}, got n={} and deep={}".format(tree.system.depth, n, deep))
    worst, witness = 1.0, None
    for cube in _survivor_classes(tree.system, n):
        value = tree.survivor_fraction(cube, deep)
        if value < worst:
            worst, witness = value, list(cube.path)
    return {"level": n, "deep": deep, "c": worst, "witness": witness}


# === The restricted measure ===

def restricted_ball_mass(tree: MeasureTree, n: int, x, r: float, stop_level: Optional[int] = None) -> BallMass:
    """
    `ν(B(x, r) ∩ level-n survivors)`. Cubes cut by the sphere are resolved
    down to `stop_level` (default: the tree depth, where the result is
    exact); above that their share is the volume fraction and the bracket
    says how much that matters.
    """
    if not 0 <= n <= tree.system.depth:
        raise ValueError("Level {} is outside the system depth {}".format(n, tree.system.depth))
    if r <= 0:
        raise ValueError("The radius must be positive, got {}".format(r))
    return _descend(tree, x, r, n, stop_level)


def _fit_lambda(rows: List[dict], first: int = 3) -> Optional[dict]:
    usable = [r for r in rows if r["level"] >= first and r["ratio"] and r["ratio"] > 0]
    if len(usable) < 2:
        return None
    xs = np.log([r["alpha"] for r in usable])
    ys = np.log([r["ratio"] for r in usable])
    (slope, intercept), residuals, *_ = np.polyfit(xs, ys, 1, full=True)
    return {"lambda": float(slope), "C_hat": float(math.exp(intercept)),
            "residual": float(residuals[0]) if len(residuals) else 0.0,
            "levels": [r["level"] for r in usable]}


def restricted_doubling_scan(tree: MeasureTree, n: Optional[int] = None, sampling: Optional[Sampling] = None,
                             factor: float = 6.0, refine: int = 1, workers: int = 1) -> dict:
    """
    Ratios `ν⌞E(B(x, r)) / ν⌞E(B(x, factor·r))`.

    Without `sampling`, a 2D lattice system is probed along its spine: one
    ball per level `k`, with the survivors of level `k + 1` (or `n`) and cut
    cubes resolved `refine` levels below that. The slope `λ` of `log ratio`
    against `log α` is fitted on the levels from 3 on. With `sampling`, the
    balls are the sampled ones and the survivors those of level `n`.
    """
    system = tree.system
    if factor <= 1:
        raise ValueError("The radius factor must be > 1, got {}".format(factor))
    if sampling is None:
        if system.space.q != 2 or not isinstance(system, LatticeSystem):
            raise ValueError("Spine probes need a 2D lattice system; pass a sampling instead")
        probes = []
        for p in spine_probes(system):
            level = min(system.depth, p["level"] + 1) if n is None else n
            probes.append(dict(p, survivors=level, stop=min(tree.depth, level + refine)))
    else:
        if n is None:
            raise ValueError("A sampled restricted scan needs the survivor level n")
        sampling = Sampling(**dict(sampling.to_dict(), source='survivors'))
        probes = [{"level": n, "alpha": system.alpha_at(n) if n else None, "x": list(x), "r": r,
                   "survivors": n, "stop": min(tree.depth, n + refine)}
                  for x, r in sample_points(system, sampling, n)]

    def one(probe):
        small = restricted_ball_mass(tree, probe["survivors"], probe["x"], probe["r"], probe["stop"])
        big = restricted_ball_mass(tree, probe["survivors"], probe["x"], factor * probe["r"], probe["stop"])
        return dict(probe, nu_r=small.value, nu_factor_r=big.value, width=small.width + big.width,
                    ratio=small.value / big.value if big.value > 0 else None)

    rows = _parallel_map(one, probes, workers)
    zero = sum(1 for r in rows if r["ratio"] is None)
    fit = _fit_lambda(rows) if sampling is None else None
    return {"factor": factor, "rows": rows, "zero_denominators": zero, "fit": fit,
            "sampling": sampling.to_dict() if sampling else None}


# === Relative plumpness ===

@dataclass
class PlumpnessReport:
    probes: List[dict]

    def min_b_per_level(self) -> dict:
        out = {}
        for p in self.probes:
            if p["b"] is not None:
                key = p.get("spine_level", p["level"])
                out[key] = min(out.get(key, math.inf), p["b"])
        return dict(sorted(out.items()))

    def to_dict(self) -> dict:
        return {"probes": self.probes, "min_b": {str(k): v for k, v in self.min_b_per_level().items()}}


def _plump_one(system: CubeSystem, x, R, n_max: int) -> dict:
    """
    The first level with a survivor cube inside `B(x, R)`, and among those
    cubes the one with the largest inscribed ball, nearest to `x` on ties.

    Only whole survivor cubes are scored, so a moved island scores like the
    lattice cube it replaced: along the spine, island-distorted and plain
    carpets get the same bound.
    """
    xe, Re = system.ball_args(x, R)
    frontier = [system.root]
    for level in range(n_max + 1):
        inside = [c for c in frontier if c.inside_ball(xe, Re)]
        if inside:
            def score(c):
                half = float(c.box.side) / 2
                dist = math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(c.box.midpoint, xe)))
                return -half, dist
            best = min(inside, key=score)
            half = float(best.box.side) / 2
            return {"x": [float(v) for v in x], "R": float(R), "level": level, "b": half / float(R),
                    "witness": {"path": list(best.path), "y": [float(v) for v in best.box.midpoint],
                                "radius": half}}
        if level == n_max:
            break
        nxt = []
        for c in frontier:
            cc = system.center_child_id(c)
            nxt.extend(k for k in system.children(c) if k.path[-1] != cc and k.meets_ball(xe, Re))
        frontier = nxt
    return {"x": [float(v) for v in x], "R": float(R), "level": None, "b": None, "witness": None}


def relative_plumpness_probe(system: CubeSystem, n_max: Optional[int] = None, probes=None) -> PlumpnessReport:
    """
    For each probe `(x, R)`, lower-bound the `b` with `B(y, bR) ⊂ B(x, R) ∩
    survivors` using inscribed balls of survivor cubes. Without probes, a 2D
    lattice system is probed along its spine with `R` the spine radius.
    The bound does not tell a distorted carpet from a plain one.
    """
    n_max = system.depth if n_max is None else n_max
    if n_max > system.depth:
        raise ValueError("Level {} is deeper than the system depth {}".format(n_max, system.depth))
    spine = probes is None
    if spine:
        probes = [(p["x"], p["r"], p["level"]) for p in spine_probes(system)]
    else:
        probes = [(tuple(p[0]), p[1], None) for p in probes]
    out = []
    for x, R, spine_level in probes:
        if R <= 0:
            raise ValueError("Probe radii must be positive, got {}".format(R))
        rec = _plump_one(system, x, R, n_max)
        if spine_level is not None:
            rec["spine_level"] = spine_level
        out.append(rec)
    return PlumpnessReport(out)
