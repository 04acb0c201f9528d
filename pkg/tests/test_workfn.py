import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from steinerchase.errors import DimensionTooLarge, DualNormViolation, EmptyLevelSet, ValidationError
from steinerchase.geometry import HPolytope, MaxAffine, NormTag, norm, sample_dual_ball, stream
from steinerchase.instances import RandomBodies, RandomMaxAffine, gen
from steinerchase.workfn import (Instance, SolverConfig, WorkFunctionHandle, brute_force_work,
                                 eval_conjugate, eval_work, finite_diff_conjugate_rate,
                                 level_set_support, opt_value)

TOL = 1e-6


def inst(tag, *reqs, d=2):
    return Instance(d, NormTag.parse(tag), reqs)


def relu_x1(shift=-1.0):
    return MaxAffine.from_pieces([[0, 0, 0], [1, 0, shift]])


def random_instance(kind, seed, tag, d=2, N=3):
    spec = RandomBodies(d, N, seed=seed) if kind == "body" else RandomMaxAffine(d, N, seed=seed)
    return gen(spec, tag)


# -- examples -------------------------------------------------------------


def test_w0_is_norm():
    h = WorkFunctionHandle(inst("l2"))
    assert eval_work(h, [3, 4]) == pytest.approx(5.0)


def test_single_box_l2():
    h = WorkFunctionHandle(inst("l2", HPolytope.box([1, 1], [2, 2])))
    assert eval_work(h, [0, 0]) == pytest.approx(2 * math.sqrt(2), abs=1e-5)


def test_single_function_stays_home():
    h = WorkFunctionHandle(inst("l2", relu_x1()))
    assert eval_work(h, [0, 0]) == pytest.approx(0.0, abs=1e-5)


@pytest.mark.parametrize("tag", ["l2", "linf", "l1"])
def test_conjugate_of_w0(tag):
    r = eval_conjugate(WorkFunctionHandle(inst(tag)), [0.5, 0])
    assert r.value == 0.0 and np.allclose(r.endpoint, 0)


def test_conjugate_halfplane_example():
    K = HPolytope([[-1, 0], [1, 0], [0, 1], [0, -1]], [-2, 5, 5, 5])
    h = WorkFunctionHandle(inst("l2", K))
    r = eval_conjugate(h, [1.0, 0.0])
    assert r.value == pytest.approx(0.0, abs=1e-5)
    # every y = (t, 0) with 2 <= t <= 5 is optimal; the endpoint must be one of them
    assert abs(r.endpoint[1]) < 1e-2 and 2 - 1e-6 <= r.endpoint[0] <= 5 + 1e-6


def test_conjugate_at_zero_is_min(rng):
    I = random_instance("body", 3, "l2")
    h = WorkFunctionHandle(I)
    X = rng.uniform(-3, 3, (200, 2))
    assert h.eval_conjugate([0, 0]).value <= h.eval_work_many(X).values.min() + TOL
    assert h.eval_work(h.argmin()) == pytest.approx(h.opt_value(), abs=1e-5)


def test_opt_examples():
    assert opt_value(WorkFunctionHandle(inst("l2"))) == 0.0
    assert opt_value(WorkFunctionHandle(inst("l2", HPolytope.box([-1, -1], [1, 1])))) == pytest.approx(0, abs=1e-6)
    faces = inst("linf", HPolytope.box([1, -1], [1, 1]), HPolytope.box([-1, 1], [1, 1]))
    assert opt_value(WorkFunctionHandle(faces)) == pytest.approx(1.0, abs=1e-5)


def test_level_set_examples():
    h = WorkFunctionHandle(inst("l2"))
    val, wit = level_set_support(h, 1.0, [1, 0])
    assert val == pytest.approx(1.0) and np.allclose(wit, [1, 0], atol=1e-9)
    h = WorkFunctionHandle(inst("linf"))
    val, _ = level_set_support(h, 1.0, np.array([1, 1]) / math.sqrt(2))
    assert val == pytest.approx(math.sqrt(2))


@pytest.mark.parametrize("tag", ["l2", "linf", "l1"])
def test_level_set_witness_consistent(tag, rng):
    I = random_instance("body", 5, tag, N=1)
    h = WorkFunctionHandle(I)
    for R in h.opt_value() + rng.uniform(0.1, 3.0, 3):
        th = rng.standard_normal(2)
        th /= np.linalg.norm(th)
        val, wit = h.level_set_support(R, th)
        assert h.eval_work(wit) <= R + 1e-5
        assert th @ wit == pytest.approx(val, abs=1e-5)


@pytest.mark.parametrize("tag", ["linf", "l1"])
@pytest.mark.parametrize("extra", [0.05, 6.0])
def test_level_set_matches_lp(tag, extra, rng):
    # large extra goes through R - W*, small extra through the budgeted barrier
    I = random_instance("body", 11, tag, N=5)
    h = WorkFunctionHandle(I)
    lp = WorkFunctionHandle(I, solver=SolverConfig(mode="lp"))
    R = h.opt_value() + extra
    th = rng.standard_normal((6, 2))
    got = h.level_set_support_many(R, th)
    ref = np.array([lp.level_set_support(R, t)[0] for t in th])
    assert np.all(np.abs(got.values - ref) <= got.gaps + 2 * TOL)


def test_level_set_below_opt_is_empty():
    h = WorkFunctionHandle(inst("l2", HPolytope.box([2, 2], [3, 3])))
    with pytest.raises(EmptyLevelSet):
        h.level_set_support(1.0, [1, 0])


def test_dual_norm_violation():
    h = WorkFunctionHandle(inst("linf", relu_x1()))
    with pytest.raises(DualNormViolation):
        h.eval_conjugate([0.8, 0.8])  # l1 norm 1.6


def test_prefix_bounds():
    with pytest.raises(ValidationError):
        WorkFunctionHandle(inst("l2"), n=1)


# -- backends -------------------------------------------------------------


@pytest.mark.parametrize("tag", ["linf", "l1"])
@pytest.mark.parametrize("kind", ["body", "func"])
def test_ipm_matches_lp(tag, kind, rng):
    I = random_instance(kind, 11, tag, N=4)
    ipm = WorkFunctionHandle(I)
    lp = WorkFunctionHandle(I, solver=SolverConfig(mode="lp"))
    V = sample_dual_ball(I.norm, 2, stream(0, 4), 12)
    np.testing.assert_allclose(ipm.eval_conjugate_many(V).values,
                               lp.eval_conjugate_many(V).values, atol=5e-6)
    X = rng.uniform(-3, 3, (6, 2))
    np.testing.assert_allclose(ipm.eval_work_many(X).values, lp.eval_work_many(X).values, atol=5e-6)


def test_lp_mode_rejects_l2():
    h = WorkFunctionHandle(inst("l2", relu_x1()), solver=SolverConfig(mode="lp"))
    with pytest.raises(ValidationError):
        h.eval_conjugate([0.1, 0])


@pytest.mark.parametrize("kind", ["body", "func"])
def test_subgradient_mode_close(kind):
    I = random_instance(kind, 2, "l2", N=2)
    ipm = WorkFunctionHandle(I)
    sg = WorkFunctionHandle(I, solver=SolverConfig.for_mode("subgradient"))
    V = sample_dual_ball(I.norm, 2, stream(0, 5), 4)
    a = ipm.eval_conjugate_many(V).values
    b = sg.eval_conjugate_many(V)
    assert np.all(b.values >= a - 1e-6)  # subgradient values are primal upper bounds
    np.testing.assert_allclose(b.values, a, atol=5e-3)


@pytest.mark.parametrize("tag", ["l2", "linf", "l1"])
def test_degenerate_face_requests(tag):
    I = inst(tag, HPolytope.box([1, -1], [1, 1]), HPolytope.box([-1, 1], [1, 1]))
    h = WorkFunctionHandle(I)
    r = h.eval_conjugate([0, 0])
    assert r.endpoint[1] == pytest.approx(1.0, abs=1e-4)


def test_results_carry_gaps():
    h = WorkFunctionHandle(random_instance("body", 1, "l2"))
    r = h.eval_conjugate_many(np.zeros((3, 2)))
    assert np.all(r.gaps >= 0) and np.all(r.gaps <= 1e-6)


# -- properties -----------------------------------------------------------

seeds = st.integers(0, 10_000)
kinds = st.sampled_from(["body", "func"])
tags = st.sampled_from(["l2", "linf", "l1"])


@given(seeds, kinds, tags)
def test_monotone_in_n(seed, kind, tag):
    I = random_instance(kind, seed, tag)
    X = stream(seed, 1).uniform(-3, 3, (8, 2))
    prev = norm(X, I.norm)
    for n in range(1, len(I) + 1):
        cur = WorkFunctionHandle(I, n).eval_work_many(X).values
        assert np.all(cur >= prev - 2 * TOL)
        prev = cur


@given(seeds, kinds, tags)
def test_convex_and_lipschitz(seed, kind, tag):
    I = random_instance(kind, seed, tag)
    r = stream(seed, 2)
    X, Y = r.uniform(-3, 3, (8, 2)), r.uniform(-3, 3, (8, 2))
    lam = r.uniform(0, 1, (8, 1))
    h = WorkFunctionHandle(I)
    wx, wy = h.eval_work_many(X).values, h.eval_work_many(Y).values
    wm = h.eval_work_many(lam * X + (1 - lam) * Y).values
    l = lam[:, 0]
    assert np.all(wm <= l * wx + (1 - l) * wy + 3 * TOL)
    assert np.all(np.abs(wx - wy) <= norm(X - Y, I.norm) + 2 * TOL)


@given(seeds, kinds, tags)
def test_conjugate_concave_monotone_and_fenchel(seed, kind, tag):
    I = random_instance(kind, seed, tag)
    r = stream(seed, 3)
    U = sample_dual_ball(I.norm, 2, r, 6)
    V = sample_dual_ball(I.norm, 2, r, 6)
    h = WorkFunctionHandle(I)
    hp = WorkFunctionHandle(I, len(I) - 1)
    cu, cv = h.eval_conjugate_many(U).values, h.eval_conjugate_many(V).values
    cm = h.eval_conjugate_many(0.5 * (U + V)).values
    assert np.all(cm >= 0.5 * (cu + cv) - 3 * TOL)
    assert np.all(cu >= hp.eval_conjugate_many(U).values - 2 * TOL)
    X = r.uniform(-3, 3, (6, 2))
    wx = h.eval_work_many(X).values
    assert np.all(cu <= wx - np.sum(U * X, axis=1) + 2 * TOL)


@given(seeds, kinds, tags)
def test_conjugate_bounded_by_twice_opt(seed, kind, tag):
    I = random_instance(kind, seed, tag)
    h = WorkFunctionHandle(I)
    V = sample_dual_ball(I.norm, 2, stream(seed, 4), 40)
    assert np.all(h.eval_conjugate_many(V).values <= 2 * h.opt_value() + 3 * TOL)


# -- oracles --------------------------------------------------------------


def test_brute_force_w0():
    I = inst("l2", relu_x1())
    assert brute_force_work(I, 0, [3, 4], 0.5) == pytest.approx(5.0)


def test_brute_force_too_large():
    with pytest.raises(DimensionTooLarge):
        brute_force_work(Instance(3, NormTag.L2, ()), 0, np.zeros(3), 0.1)


@pytest.mark.parametrize("tag", ["l2", "linf"])
def test_brute_force_agrees(tag, rng):
    I = random_instance("body", 7, tag, N=2)
    X = rng.uniform(-1, 1, (3, 2))
    got = WorkFunctionHandle(I).eval_work_many(X).values
    np.testing.assert_allclose(brute_force_work(I, len(I), X, 0.02), got, atol=0.05)


def test_brute_force_box_example():
    I = inst("l2", HPolytope.box([1, 1], [2, 2]))
    assert brute_force_work(I, 1, [0, 0], 0.05) == pytest.approx(2 * math.sqrt(2), abs=1e-9)


# -- derivative -----------------------------------------------------------


def test_rate_of_zero_function():
    zero = MaxAffine.from_pieces([[0, 0, 0]])
    h = WorkFunctionHandle(inst("l2", zero), n=0)
    # solver error is amplified by 1/delta
    assert finite_diff_conjugate_rate(h, [0.3, 0.1], 1 / 64) == pytest.approx(0.0, abs=64 * 2 * TOL)


def test_rate_at_origin_conjugate_point():
    f = MaxAffine.from_pieces([[0, 0, 0], [1, 0, 0]])
    h = WorkFunctionHandle(inst("l2", f), n=0)
    assert finite_diff_conjugate_rate(h, [-0.5, 0], 1 / 64) == pytest.approx(0.0, abs=64 * 2 * TOL)


@pytest.mark.parametrize("delta", [1 / 16, 1 / 64, 1 / 256])
def test_rate_converges_to_service(delta):
    f = MaxAffine.from_pieces([[0, 0, 0], [1, 0, 2]])  # max(0, x1 + 2) > 0 near the origin
    h = WorkFunctionHandle(inst("l2", f), n=0)
    # v* of W_0 at |v| < 1 is the origin, so the rate tends to f(0) = 2
    assert finite_diff_conjugate_rate(h, [0.2, 0.1], delta) == pytest.approx(2.0, abs=0.05)


def test_rate_requires_function_and_interior():
    h = WorkFunctionHandle(inst("l2", HPolytope.box([0, 0], [1, 1])), n=0)
    with pytest.raises(ValidationError):
        finite_diff_conjugate_rate(h, [0, 0], 0.1)
    h = WorkFunctionHandle(inst("l2", relu_x1()), n=0)
    with pytest.raises(DualNormViolation):
        finite_diff_conjugate_rate(h, [1, 0], 0.1)
