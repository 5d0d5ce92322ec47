import math

import pytest

from fml.cubes import SpaceModel, build_adic_system, build_distorted_carpet, build_subsampled_dyadic
from fml.fatthin import center_child_ratio, choose_rho, fat_thin_experiment, measure_density_floor, \
    product_lower_bound, relative_plumpness_probe, restricted_ball_mass, restricted_doubling_scan, survivor_mass
from fml.measure import Sampling, build_measure
from fml.sequences import make_sequence, parse_rule


LINE = SpaceModel(1)
PLANE = SpaceModel(2)
GEOMETRIC_HALF = make_sequence({"kind": "geometric", "params": {"c": 0.5}})
CONSTANT_THIRD = make_sequence({"kind": "constant", "params": {"c": 1 / 3}})


def base7(depth, lazy=False):
    return build_adic_system(LINE, [7] * depth, depth, lazy=lazy)


def test_survivor_masses_of_a_constant_base():
    system = base7(10, lazy=True)
    tree = build_measure(system, 1.0)
    assert [survivor_mass(tree, n) for n in (0, 1, 10)] == pytest.approx([1.0, 20 / 21, (20 / 21) ** 10],
                                                                           rel=1e-12)
    tree = build_measure(system, -0.5)
    assert survivor_mass(tree, 10) == pytest.approx((1 - math.sqrt(3) / 7) ** 10, rel=1e-12)
    with pytest.raises(ValueError):
        survivor_mass(tree, 11)


def test_center_child_ratio():
    tree = build_measure(base7(3), 1.0)
    row = center_child_ratio(tree, 0)
    assert row["ratio"] == pytest.approx(1 / 21, rel=1e-12)
    assert row["implied_CEC"] == pytest.approx(7 / 3, rel=1e-12)
    assert row["witness"] == []
    assert center_child_ratio(build_measure(base7(3), -0.5), 1)["ratio"] == pytest.approx(math.sqrt(3) / 7)
    with pytest.raises(ValueError):
        center_child_ratio(tree, 3)


def test_product_bound_vacuous_when_a_factor_is_not_positive():
    bound = product_lower_bound(CONSTANT_THIRD, 0.0, 1, 1.0, 10.0, 1, 4)
    assert bound.vacuous
    assert bound.value == 0.0


def test_product_bound_of_a_divergent_series():
    bound = product_lower_bound(CONSTANT_THIRD, 0.0, 1, 1.0, 1.0, 1, 6)
    assert not bound.vacuous
    assert bound.value == pytest.approx((2 / 3) ** 6)
    assert bound.extrapolated == 0.0
    assert bound.lower == 0.0


def test_product_bound_of_a_convergent_series():
    bound = product_lower_bound(GEOMETRIC_HALF, 0.0, 1, 1.0, 1.0, 1, 5)
    partial = math.prod(1 - 2.0 ** -j for j in range(1, 6))
    assert bound.value == pytest.approx(partial, rel=1e-12)
    # The tail sum of 2^-j past j = 5 is 2^-5.
    assert bound.extrapolated == pytest.approx(partial * math.exp(-1 / 32), rel=1e-12)
    assert bound.lower <= bound.extrapolated <= bound.value
    with pytest.raises(ValueError):
        product_lower_bound(GEOMETRIC_HALF, 0.0, 1, 1.0, 1.0, 0, 5)


def test_wallis_carpet_is_fat():
    system = build_adic_system(PLANE, parse_rule("odd:2n+1"), 5, lazy=True)
    report = fat_thin_experiment(system, rho=0.0)
    partial = 1.0
    for row in report.rows[1:]:
        partial *= 1 - 1 / (2 * row["n"] + 1) ** 2
        assert row["survivor_mass"] == pytest.approx(partial, abs=1e-10)
    assert report.CEC == pytest.approx(1.0)
    assert report.n1 == 1
    assert report.bound.extrapolated == pytest.approx(math.pi / 4, abs=1e-3)
    assert report.verdict == 'positive-limit'
    assert report.consistent
    assert not report.violations
    assert report.porosity["passed"]
    assert len(report.table()) == 6


def test_constant_base_collapses():
    system = build_adic_system(LINE, parse_rule("constant:1/7"), 6, lazy=True)
    assert choose_rho(system) == -0.5
    report = fat_thin_experiment(system)
    assert report.rho == -0.5
    assert report.verdict == 'collapse'
    assert report.prediction == 'thin'
    assert report.consistent
    assert not report.violations
    masses = [row["survivor_mass"] for row in report.rows]
    assert masses[-1] == pytest.approx((1 - math.sqrt(3) / 7) ** 6, rel=1e-12)


def test_explicit_lists_leave_the_verdict_open():
    system = build_adic_system(LINE, [3, 5, 7], 3)
    assert choose_rho(system) == 0.0
    report = fat_thin_experiment(system)
    assert report.verdict == 'undetermined'
    assert report.consistent is None


def test_fat_thin_rejects_inadmissible_powers():
    with pytest.raises(ValueError):
        fat_thin_experiment(base7(3), rho=-1.0)


def test_measure_density_floor():
    tree = build_measure(base7(4), 1.0)
    floor = measure_density_floor(tree, 0, 2)
    assert floor["c"] == pytest.approx((20 / 21) ** 2, rel=1e-12)
    assert floor["witness"] == []
    with pytest.raises(ValueError):
        measure_density_floor(tree, 0, 5)


def test_restricted_ball_mass():
    tree = build_measure(base7(3), 1.0)
    bm = restricted_ball_mass(tree, 1, (0.5,), 1.0)
    assert bm.value == pytest.approx(20 / 21, rel=1e-12)
    assert bm.width == 0.0
    # The center child is gone from the level-1 survivors.
    assert restricted_ball_mass(tree, 1, (0.5,), 1 / 14).value == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        restricted_ball_mass(tree, 4, (0.5,), 0.1)


def test_restricted_scan_along_the_carpet_spine():
    system = build_distorted_carpet(parse_rule("odd:2n+1"), 4)
    tree = build_measure(system, 0.0, n0=1)
    scan = restricted_doubling_scan(tree)
    assert scan["factor"] == 6.0
    assert scan["rows"]
    for row in scan["rows"]:
        assert row["width"] >= 0.0
        assert row["ratio"] is None or 0.0 <= row["ratio"] <= 1.0 + 1e-12


def test_island_carpet_ratios_decay_along_the_spine():
    """
    Island mode at depth 5: from level 3 on the restricted ratios fall and
    the fitted slope is positive, while the plain carpet's ratios stay
    within a factor of 2 of each other.
    """
    rule = parse_rule("odd:2n+1")
    island = restricted_doubling_scan(build_measure(build_distorted_carpet(rule, 5), 0.0, n0=1))
    plain = restricted_doubling_scan(build_measure(build_adic_system(PLANE, rule, 5, lazy=True), 0.0, n0=1))
    assert [row["level"] for row in island["rows"]] == [1, 2, 3, 4]
    ratios = {row["level"]: row["ratio"] for row in island["rows"]}
    assert 0.0 < ratios[4] < ratios[3]
    assert island["fit"]["levels"] == [3, 4]
    assert island["fit"]["lambda"] > 1.0
    deep = [row["ratio"] for row in plain["rows"] if row["level"] >= 3]
    assert max(deep) <= 2 * min(deep)
    assert ratios[4] < min(deep)


def test_restricted_scan_needs_spine_or_sampling():
    tree = build_measure(base7(3), 1.0)
    with pytest.raises(ValueError):
        restricted_doubling_scan(tree)
    with pytest.raises(ValueError):
        restricted_doubling_scan(tree, sampling=Sampling(count=4))
    with pytest.raises(ValueError):
        restricted_doubling_scan(tree, 2, Sampling(count=4), factor=1.0)
    scan = restricted_doubling_scan(tree, 2, Sampling(count=8, seed=1, rmin=0.01, rmax=0.1))
    assert len(scan["rows"]) == 8
    assert scan["sampling"]["source"] == 'survivors'
    assert scan["fit"] is None


def test_relative_plumpness_of_the_middle_thirds():
    system = build_adic_system(LINE, [3, 3, 3], 3)
    report = relative_plumpness_probe(system, probes=[((0.5,), 0.5)])
    probe = report.probes[0]
    assert probe["level"] == 1
    assert probe["b"] == pytest.approx(1 / 3)
    assert probe["witness"]["path"] == [2]
    assert report.min_b_per_level() == {1: pytest.approx(1 / 3)}
    with pytest.raises(ValueError):
        relative_plumpness_probe(system, n_max=4)


def test_relative_plumpness_of_the_carpet_corner():
    system = build_adic_system(PLANE, [3, 3, 3], 3)
    report = relative_plumpness_probe(system, probes=[((0.0, 0.0), 1.0)])
    first = report.probes[0]
    assert first["level"] == 1
    assert first["b"] == pytest.approx(1 / 6)
    assert first["witness"]["path"] == [0]
    assert first["witness"]["y"] == pytest.approx([1 / 6, 1 / 6])


def test_plumpness_does_not_see_moved_islands():
    rule = parse_rule("odd:2n+1")
    plain = relative_plumpness_probe(build_adic_system(PLANE, rule, 5, lazy=True))
    island = relative_plumpness_probe(build_distorted_carpet(rule, 5))
    expected = {1: pytest.approx(1 / 3), 2: pytest.approx(1 / 5), 3: pytest.approx(1 / 5), 4: pytest.approx(1 / 7)}
    assert plain.min_b_per_level() == expected
    assert island.min_b_per_level() == expected


def test_subsampled_geometric_system_is_fat():
    system = build_subsampled_dyadic(LINE, 2, GEOMETRIC_HALF, 8, lazy=True)
    report = fat_thin_experiment(system, rho=1.0)
    assert report.verdict == 'positive-limit'
    assert report.prediction == 'fat'
    assert report.consistent
    assert not report.violations
    masses = [row["survivor_mass"] for row in report.rows]
    assert len(masses) == 9
    assert masses[-1] > 0.0
    assert masses[-1] >= masses[-2] * (1 - 2 ** -7)


def test_fitted_constant_is_stable_across_depths():
    shallow = fat_thin_experiment(base7(4, lazy=True), rho=1.0)
    deep = fat_thin_experiment(base7(8, lazy=True), rho=1.0)
    assert shallow.CEC == pytest.approx(7 / 3, rel=1e-12)
    assert deep.CEC == pytest.approx(shallow.CEC, rel=0.05)
