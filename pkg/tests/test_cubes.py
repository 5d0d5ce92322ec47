import math
from fractions import Fraction

import pytest

from fml.boxes import Box
from fml.cubes import SpaceModel, build_adic_system, build_distorted_carpet, build_subsampled_dyadic, \
    designate_center_child, generations, in_cover, pushforward_power, representatives, spine_probes, \
    subsampling_gaps, survivors, system_from_dict, system_to_dict, upper_porosity_check, validate
from fml.sequences import make_sequence, parse_rule


LINE = SpaceModel(1)
PLANE = SpaceModel(2)
GEOMETRIC_HALF = {"kind": "geometric", "params": {"c": 0.5}}


def test_space_models():
    assert LINE.C == 2.0
    with pytest.raises(ValueError):
        SpaceModel(3)
    for space in (LINE, PLANE):
        assert space.check_ahlfors(samples=64)["passed"]
        assert space.check_perfectness(samples=64)["passed"]


def test_ahlfors_constant_of_the_plane_is_pi():
    report = PLANE.check_ahlfors(samples=64)
    assert report["fitted_C"] == pytest.approx(math.pi, rel=1e-12)
    assert report["passed"]
    assert not SpaceModel(2, C=3.0).check_ahlfors(samples=64)["passed"]


def test_adic_system_levels():
    system = build_adic_system(LINE, [3, 5, 7], 3)
    assert [system.level_size(n) for n in range(4)] == [1, 3, 15, 105]
    assert system.alpha_at(2) == pytest.approx(1 / 5)
    cube = system.cube((1, 2))
    assert cube.box == Box((Fraction(7, 15),), (Fraction(8, 15),))
    assert cube.radius == Fraction(1, 30)
    assert system.center_child_id(system.root) == 1
    assert system.locate((Fraction(1, 2),), 2).path == (1, 2)


def test_adic_bases_must_be_odd():
    with pytest.raises(ValueError):
        build_adic_system(LINE, [3, 4], 2)
    with pytest.raises(ValueError):
        build_adic_system(LINE, [3, 5], 3)


def test_eager_builds_respect_the_budget():
    with pytest.raises(ValueError):
        build_adic_system(PLANE, parse_rule("odd:2n+1"), 5)
    lazy = build_adic_system(PLANE, parse_rule("odd:2n+1"), 5, lazy=True)
    assert lazy.cube((4, 12, 24)).level == 3


def test_lazy_and_eager_builds_agree():
    eager = build_adic_system(PLANE, [3, 5], 2)
    lazy = build_adic_system(PLANE, [3, 5], 2, lazy=True)
    for level in (1, 2):
        for cube in eager.iter_level(level):
            twin = lazy.cube(cube.path)
            assert (twin.box, twin.center, twin.radius) == (cube.box, cube.center, cube.radius)
            assert twin.key == cube.key


def test_in_cover_uses_open_balls():
    system = build_adic_system(LINE, [3, 5], 2)
    inner, cover = in_cover(system, (Fraction(1, 2),), Fraction(1, 5), 1)
    assert [c.path for c in inner] == [(1,)]
    assert sorted(c.path for c in cover) == [(0,), (1,), (2,)]
    with pytest.raises(ValueError):
        in_cover(system, (Fraction(1, 2),), 0, 1)


def test_in_cover_of_the_center_ninth():
    system = build_adic_system(PLANE, [3], 1)
    x = (Fraction(1, 2), Fraction(1, 2))
    inner, cover = in_cover(system, x, Fraction(17, 100), 1)
    # The center ninth fits only once r > sqrt(2)/6.
    assert inner == []
    assert sorted(c.path for c in cover) == [(1,), (3,), (4,), (5,), (7,)]
    inner, cover = in_cover(system, x, Fraction(1, 4), 1)
    assert [c.path for c in inner] == [(4,)]
    assert len(cover) == 9


def test_survivors_avoid_center_children():
    system = build_adic_system(LINE, [3, 3], 2)
    assert [c.path for c in survivors(system, 2)] == [(0, 0), (0, 2), (2, 0), (2, 2)]
    with pytest.raises(ValueError):
        survivors(system, 3)


def test_adic_systems_validate():
    for system in (build_adic_system(LINE, [3, 5, 7], 3), build_adic_system(PLANE, [3, 3, 3], 3)):
        report = validate(system)
        assert report.passed
        assert report.exhaustive
        assert report.certified_from == 0
        assert set(report.fitted["C3"].values()) == {1.0}


def test_subsampled_dyadic_system():
    alpha = make_sequence(GEOMETRIC_HALF)
    assert subsampling_gaps(2, alpha, 4) == [1, 2, 3, 4]
    system = build_subsampled_dyadic(LINE, 2, alpha, 4)
    assert generations(system) == [0, 1, 3, 6, 10]
    assert system.level_size(4) == 2 ** 10
    assert system.cube((0, 0)).box.hi == (Fraction(1, 8),)
    assert validate(system).passed
    with pytest.raises(ValueError):
        build_subsampled_dyadic(LINE, 3, {"kind": "constant", "params": {"c": 0.5}}, 2)


def test_subsampling_gap_of_a_fifth():
    fifth = make_sequence({"kind": "constant", "params": {"c": 0.2}})
    assert subsampling_gaps(2, fifth, 2) == [3, 3]
    system = build_subsampled_dyadic(LINE, 2, fifth, 2)
    assert system.cube((0,)).box.hi == (Fraction(1, 8),)
    assert Fraction(1, 10) <= system.cube((0,)).box.side <= Fraction(1, 5)


def test_system_attributes_are_set_on_construction():
    adic = build_adic_system(LINE, [3, 5], 2)
    assert adic.gaps is None
    assert adic.spec_extra == {}
    assert "distortion" not in system_to_dict(adic)["spec"]
    assert build_subsampled_dyadic(LINE, 2, GEOMETRIC_HALF, 3).gaps == [1, 2, 3]
    assert build_distorted_carpet(parse_rule("odd:2n+1"), 3).spec_extra == {"distortion": 'island'}


def test_validate_reports_a_corrupted_radius():
    system = build_adic_system(LINE, [3, 5, 7], 2)
    system.cube((0,)).radius *= 2
    report = validate(system)
    assert not report.passed
    assert not report.axioms['III'].passed
    assert report.axioms['III'].witness["path"] == [0]


def test_exact_validation_has_no_slack():
    system = build_adic_system(LINE, [3, 5, 7], 2)
    assert validate(system).axioms['III'].passed
    system.cube((0,)).radius *= 1 + Fraction(1, 10 ** 12)
    report = validate(system)
    assert not report.axioms['III'].passed
    assert report.axioms['III'].witness["path"] == [0]


def test_designate_center_child():
    system = build_adic_system(LINE, [3, 3], 2)
    assert designate_center_child(system, (), 1) is system
    moved = designate_center_child(system, (), 2)
    assert moved.center_child_id(moved.root) == 2
    assert moved.root.center == (Fraction(5, 6),)
    # Both faces of the root lie on the domain boundary, so the radius stays.
    assert moved.root.radius == Fraction(1, 2)
    assert moved.constants.C1 >= 3 * system.constants.C1
    assert system.center_child_id(system.root) == 1


def test_distorted_carpet_moves_islands():
    system = build_distorted_carpet(parse_rule("odd:2n+1"), 3)
    first = system.manifest[0]
    assert first["island"] == [5, 25]
    island = system.cube((5, 25))
    assert island.box == Box((Fraction(8, 15), Fraction(7, 15)), (Fraction(9, 15), Fraction(8, 15)))
    hole = system.cube((4,))
    assert hole.holes == (island.box,)
    assert hole.radius == Fraction(1, 30)
    assert 13 not in [k.path[-1] for k in system.children(hole)]
    assert len(representatives(system, 2)) > 1

    report = validate(system)
    for axiom in ('I', 'II', 'III'):
        assert report.axioms[axiom].passed

    probe = spine_probes(system)[0]
    assert probe["x"] == pytest.approx([17 / 30, 0.5])
    assert probe["r"] == pytest.approx(1.5 / 15)


def test_distorted_carpet_relocate_mode():
    system = build_distorted_carpet(parse_rule("odd:2n+1"), 3, mode='relocate')
    kept = system.cube((5,))
    assert system.center_child_id(kept) == 10
    with pytest.raises(ValueError):
        build_distorted_carpet(parse_rule("odd:2n+1"), 3, mode='shuffle')


def test_undistorted_lattices_have_one_class_per_level():
    system = build_adic_system(PLANE, [3, 3], 2)
    assert [c.key for c in representatives(system, 2)] == [('level', 2)]


def test_distorted_cubes_never_share_a_lattice_class():
    system = build_distorted_carpet(parse_rule("odd:2n+1"), 5)
    hole = system.cube((4,))
    plain = system.cube((0, 0, 0, 0))
    assert hole.key == ('path', (4,))
    assert plain.key == ('level', 4)
    assert hole.key != plain.key
    assert system.cube((5, 25)).key == ('level', 2)


def test_pushforward_power():
    system = build_adic_system(LINE, [3] * 5, 5)
    assert pushforward_power(system, 1.0) is system
    image = pushforward_power(system, 0.5)
    assert image.root.box.hi == (1.0,)
    assert image.cube((0,)).box.hi[0] == pytest.approx(3 ** -0.5)
    report = validate(image)
    assert report.passed
    with pytest.raises(ValueError):
        pushforward_power(system, 1.5)
    with pytest.raises(ValueError):
        pushforward_power(build_adic_system(PLANE, [3], 1), 0.5)


def test_pushforward_image_of_the_middle_third():
    image = pushforward_power(build_adic_system(LINE, [3], 1), 0.5)
    box = image.cube((1,)).box
    assert float(box.lo[0]) == pytest.approx(math.sqrt(1 / 3), rel=1e-12)
    assert float(box.hi[0]) == pytest.approx(math.sqrt(2 / 3), rel=1e-12)
    assert image.cube((1,)).key == ('path', (1,))


def test_upper_porosity_of_cube_boundaries():
    system = build_adic_system(LINE, [3] * 4, 4)
    report = upper_porosity_check(system, 1)
    assert report["passed"]
    assert report["checked"] > 0
    assert report["min_ratio"] == pytest.approx(0.5)


def test_system_documents():
    carpet = build_distorted_carpet(parse_rule("odd:2n+1"), 3)
    doc = system_to_dict(carpet)
    assert "cubes" not in doc
    rebuilt = system_from_dict(doc)
    assert rebuilt.cube((5, 25)).box == carpet.cube((5, 25)).box
    assert rebuilt.cube((4,)).radius == carpet.cube((4,)).radius

    eager = build_adic_system(LINE, [3, 5], 2)
    assert len(system_to_dict(eager)["cubes"]) == 1 + 3 + 15

    image = system_from_dict(system_to_dict(pushforward_power(eager, 0.5)))
    assert image.beta == 0.5
    assert image.cube((2, 4)).box == pushforward_power(eager, 0.5).cube((2, 4)).box
