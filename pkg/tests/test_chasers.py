import numpy as np
import pytest

from steinerchase.chasers import (FunctionalSteiner, Greedy, LevelSetSteiner, NestedSteiner,
                                  circumradius, run)
from steinerchase.errors import NotNested, ValidationError
from steinerchase.geometry import HPolytope, MaxAffine, NormTag, norm
from steinerchase.instances import NestedCuts, RandomBodies, RandomMaxAffine, gen
from steinerchase.steiner import SteinerConfig
from steinerchase.workfn import Instance, WorkFunctionHandle

CFG = SteinerConfig(samples=2048, seed=1)


def inst(tag, *reqs, d=2):
    return Instance(d, NormTag.parse(tag), reqs)


def test_symmetric_first_body_stays_home():
    tr = run(FunctionalSteiner(CFG), inst("l2", HPolytope.box([-1, -2], [1, 2])))
    s = tr.steps[0]
    assert np.linalg.norm(s.position) <= 4 * s.stderr + 1e-5
    assert s.movement <= 4 * s.stderr + 1e-5


@pytest.mark.parametrize("tag", ["l2", "linf", "l1"])
def test_far_slab_selector(tag):
    slab = HPolytope([[1, 0], [-1, 0], [0, 1], [0, -1]], [6, -5, 10, 10])
    tr = run(FunctionalSteiner(CFG), inst(tag, slab))
    s = tr.steps[0]
    assert s.fixup_distance <= 5 * s.stderr + 1e-6
    assert slab.contains(s.position)


def test_hypercube_movement_bound():
    adv = gen("hypercube:d=2,N=8,seed=1", "linf")
    tr = run(FunctionalSteiner(SteinerConfig(samples=8192, seed=1)), adv)
    assert tr.total_movement <= 2 * tr.opt_total * 1.1


def test_greedy_worse_than_steiner_on_adaptive_cube():
    ratios = {}
    for name, ch in [("steiner", FunctionalSteiner(SteinerConfig(samples=4096, seed=1))),
                     ("greedy", Greedy())]:
        tr = run(ch, gen("hypercube:d=2,N=16,seed=1", "linf"))
        ratios[name] = tr.alg_total / tr.opt_total
    assert ratios["greedy"] > ratios["steiner"]


@pytest.mark.parametrize("tag", ["l2", "linf"])
def test_feasibility_and_accounting(tag):
    I = gen(RandomBodies(2, 6, seed=4), tag)
    tr = run(FunctionalSteiner(CFG), I)
    P = np.vstack([np.zeros(2), tr.positions])
    path = float(np.sum(norm(np.diff(P, axis=0), NormTag.parse(tag))))
    assert abs(tr.total_movement - path) <= 1e-12
    for req, s in zip(I.requests, tr.steps):
        assert req.contains(s.position)
        assert s.movement >= 0 and s.service == 0 and s.fixup_distance >= 0


def test_rerun_bit_exact():
    I = gen(RandomBodies(2, 4, seed=6), "l2")
    a = run(FunctionalSteiner(CFG), I)
    b = run(FunctionalSteiner(CFG), I)
    np.testing.assert_array_equal(a.positions, b.positions)
    assert a.opt == b.opt


def test_function_chasing_substeps():
    I = gen(RandomMaxAffine(2, 3, seed=1), "l2")
    tr = run(FunctionalSteiner(CFG, substeps=4), I)
    for req, s in zip(I.requests, tr.steps):
        assert s.service == pytest.approx(float(req(s.position)))
        assert 1 <= s.substep_index <= 4
        assert s.substep_path_length >= s.movement - 1e-12
    assert tr.total_service <= tr.opt_total * 1.15 + 0.05


def test_single_substep_function():
    f = MaxAffine.from_pieces([[0, 0, 0], [1, 0, -1]])
    tr = run(FunctionalSteiner(CFG), inst("l2", f))
    assert tr.steps[0].service == pytest.approx(max(0.0, tr.positions[0][0] - 1))


def test_invalid_substeps():
    with pytest.raises(ValidationError):
        FunctionalSteiner(CFG, substeps=0)


def test_level_set_n0_like_first_symmetric_request():
    tr = run(LevelSetSteiner(CFG, r_policy=1.0), inst("l2", HPolytope.box([-3, -3], [3, 3])))
    assert np.linalg.norm(tr.positions[0]) <= 4 * tr.steps[0].stderr + 1e-5


def test_level_set_large_r_tracks_functional():
    I = gen(RandomBodies(2, 4, seed=9), "l2")
    a = run(LevelSetSteiner(CFG), I)
    b = run(FunctionalSteiner(CFG), I)
    for sa, sb in zip(a.steps, b.steps):
        assert np.linalg.norm(sa.position - sb.position) <= 4 * (sa.stderr + sb.stderr) + 1e-5


def test_level_set_small_r_near_argmin():
    I = gen(RandomBodies(2, 3, seed=2), "l2")
    ch = LevelSetSteiner(CFG, r_policy="small")
    tr = run(ch, I)
    h = WorkFunctionHandle(I)
    # the small level set has W-excess 0.01 above the minimum
    assert h.eval_work(tr.positions[-1]) <= h.opt_value() + 0.01 + 0.05


def test_level_set_policies():
    h = WorkFunctionHandle(inst("l2", HPolytope.box([1, 1], [2, 2])))
    ch = LevelSetSteiner(CFG, r_policy=lambda hh: hh.opt_value() + 5)
    assert ch.level(h) == pytest.approx(h.opt_value() + 5)
    with pytest.raises(ValidationError):
        LevelSetSteiner(CFG, r_policy="huge").level(h)
    assert circumradius(HPolytope.box([1, 1], [2, 2]), "linf") == pytest.approx(2.0)


def test_greedy_examples():
    ch = Greedy()
    ch.reset(3, "l2")
    s = ch.step(HPolytope.box([-1] * 3, [1] * 3))
    assert s.movement == 0
    half = HPolytope([[-1, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
                     [-3, 10, 10, 10, 10, 10])
    s = ch.step(half)
    np.testing.assert_allclose(s.position, [3, 0, 0], atol=1e-9)


def test_greedy_function_descends():
    f = MaxAffine.from_pieces([[0, 0, 0], [-2, 0, -1]])  # f = max(0, -2 x1 - 1); f(0) = 0
    g = MaxAffine.from_pieces([[0, 0, 0], [3, 0, 3]])    # f = max(0, 3 x1 + 3), f(0) = 3
    tr = run(Greedy(), inst("l2", f, g))
    assert tr.steps[0].movement == 0
    # moving left by 1 costs 1 and saves 3
    assert tr.positions[1][0] == pytest.approx(-1.0, abs=0.05)
    assert tr.alg_total < 3


def test_nested_examples():
    box = HPolytope.box([-1, -1], [2, 1])
    tr = run(NestedSteiner(CFG), inst("l2", box, box, box))
    np.testing.assert_array_equal(tr.positions[1], tr.positions[2])
    boxes = [HPolytope.box([-2.0**-n] * 2, [2.0**-n] * 2) for n in range(1, 6)]
    tr = run(NestedSteiner(SteinerConfig(samples=8192)), inst("l2", *boxes))
    assert tr.total_movement <= 1e-9


def test_nested_rejects_non_nested():
    with pytest.raises(NotNested):
        run(NestedSteiner(CFG), inst("l2", HPolytope.box([0, 0], [1, 1]), HPolytope.box([2, 2], [3, 3])))


def test_nested_cuts_movement():
    I = gen(NestedCuts(2, 8, seed=3), "l2")
    tr = run(NestedSteiner(SteinerConfig(samples=8192, seed=1)), I, track_opt=False)
    assert tr.total_movement <= 2 * 1.15


def test_dimension_mismatch():
    ch = Greedy()
    ch.reset(2, "l2")
    with pytest.raises(ValidationError):
        ch.step(HPolytope.box([0] * 3, [1] * 3))
