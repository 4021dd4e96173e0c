import math

import numpy as np
import pytest

from conftest import grid_oracle, match_oracle, random_points, small_scenario
from phaseloc.channel import Observation, observe
from phaseloc.hyperbola import (HyperbolaBranch, ambiguity_range, branches_for_pair,
                                common_focus_batch, differential_phase, feasible_range,
                                intersect_common_focus, intersect_disjoint_pairs,
                                intersect_pair_families, refine_least_squares)

LAM = 299792458.0 / 3.5e9


def test_differential_phase_examples():
    obs = Observation.from_samples(np.exp(-1j * np.array([0.0, 0.0, math.pi, 0.5])))
    assert differential_phase(obs, 0, 1, LAM) == 0.0
    # r_a = 0, r_b = -pi
    assert differential_phase(obs, 0, 2, LAM) == pytest.approx(LAM / 2)
    with pytest.raises(ValueError):
        differential_phase(obs, 1, 1, LAM)


def test_differential_phase_is_range_difference_mod_lambda(sc):
    rng = np.random.default_rng(0)
    lam = sc.wavelength
    for u in random_points(rng, sc.area, 30, sc):
        obs = observe(u, sc)
        d = np.hypot(*(sc.ap_positions - u).T)
        for a, b in [(0, 1), (4, 9), (17, 3)]:
            dp = differential_phase(obs, a, b, lam)
            assert 0 <= dp < lam
            assert math.remainder(dp - (d[a] - d[b]), lam) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("sep, z", [(5.0, 5), (0.4, 0), (5.6, 6)])
def test_ambiguity_range_rounds_separation(sep, z):
    r = ambiguity_range([0.0, 0.0], [sep * LAM, 0.0], LAM)
    assert (r.z_min, r.z_max) == (-z, z)
    assert len(r) == 2 * z + 1


def test_ambiguity_range_rejects_coincident_foci():
    with pytest.raises(ValueError):
        ambiguity_range([1.0, 1.0], [1.0, 1.0], LAM)


def test_feasible_range_matches_bruteforce():
    rng = np.random.default_rng(1)
    for _ in range(500):
        sep = rng.uniform(0.01, 3.0)
        dp = rng.uniform(0, LAM)
        r = feasible_range(dp, sep, LAM)
        brute = [z for z in range(-200, 201) if abs(dp - z * LAM) < sep]
        assert list(r.values()) == brute


def test_branches_for_pair_contains_truth(sc):
    u = np.array([1.0, 2.0])
    obs = observe(u, sc)
    for a, b in [(0, 1), (2, 7)]:
        branches = branches_for_pair(obs, a, b, sc)
        assert all(br.feasible for br in branches)
        zs = [br.z for br in branches]
        assert zs == sorted(zs) and len(set(zs)) == len(zs)
        res = np.array([abs(br.residual(u)) for br in branches])
        assert np.sum(res < 1e-9) == 1


def test_common_focus_hand_example():
    h1 = HyperbolaBranch([0, 0], [2, 0], 0.0)
    h2 = HyperbolaBranch([0, 0], [0, 2], 0.0)
    out = intersect_common_focus(h1, h2)
    assert not out.degenerate
    assert len(out.points) == 1
    assert np.allclose(out.points[0], [1, 1], atol=1e-12)


def test_common_focus_empty_when_branches_do_not_meet():
    # both branches bend toward the same far focus side and never meet
    h1 = HyperbolaBranch([0, 0], [1, 0], 0.99)
    h2 = HyperbolaBranch([0, 0], [-1, 0.01], 0.99)
    out = intersect_common_focus(h1, h2)
    assert not out.degenerate
    assert len(out.points) == 0


def test_common_focus_rank_deficient_flagged():
    out = intersect_common_focus(HyperbolaBranch([0, 0], [1, 0], 0.2), HyperbolaBranch([0, 0], [2, 0], 0.5))
    assert out.degenerate
    assert len(out.points) == 0
    with pytest.raises(ValueError):
        intersect_common_focus(HyperbolaBranch([0, 0], [1, 0], 0.2), HyperbolaBranch([0, 1], [2, 0], 0.5))


def test_common_focus_matches_grid_oracle():
    rng = np.random.default_rng(2)
    box = (0.0, 0.0, 10.0, 10.0)
    big = (-0.2, -0.2, 10.2, 10.2)
    total = 0
    for _ in range(60):
        pr, p1, p2, u = rng.uniform(0, 10, (4, 2))
        if rng.random() < 0.5:
            o1 = np.hypot(*(u - pr)) - np.hypot(*(u - p1))
            o2 = np.hypot(*(u - pr)) - np.hypot(*(u - p2))
        else:
            o1 = rng.uniform(-1, 1) * np.hypot(*(pr - p1))
            o2 = rng.uniform(-1, 1) * np.hypot(*(pr - p2))
        h1, h2 = HyperbolaBranch(pr, p1, o1), HyperbolaBranch(pr, p2, o2)
        got = intersect_common_focus(h1, h2).points
        comps, certified, h = grid_oracle(h1, h2, big, LAM)
        inside = np.array([((c >= 0) & (c <= 10)).all(1).any() for c in comps], bool)
        stray, missed = match_oracle(got, comps, certified & inside, h, box)
        assert not stray and missed == 0
        total += int(np.sum(certified & inside))
    assert total > 40


def test_closed_form_roots_satisfy_both_branches():
    rng = np.random.default_rng(3)
    pr = np.zeros(2)
    secs = rng.uniform(-5, 5, (2, 2))
    sep = np.hypot(*(pr - secs).T)
    offsets = rng.uniform(-1, 1, (400, 2)) * sep
    pts, sq, maxres = common_focus_batch(pr, secs, offsets)
    ok = np.isfinite(maxres) & (maxres < 1e-6)
    assert ok.sum() > 100
    for (i, j) in zip(*np.nonzero(ok)):
        for k in range(2):
            assert abs(HyperbolaBranch(pr, secs[k], offsets[i, k]).residual(pts[i, j])) < 1e-6


def test_disjoint_pairs_cross_layout():
    sc = small_scenario([[-1, 0], [1, 0], [0, -1], [0, 1]], area=(-2, -2, 2, 2))
    h1 = HyperbolaBranch([-1, 0], [1, 0], 0.0)
    h2 = HyperbolaBranch([0, -1], [0, 1], 0.0)
    out = intersect_disjoint_pairs(h1, h2, sc)
    assert len(out) == 1
    assert np.allclose(out[0], [0, 0], atol=1e-9)


def test_disjoint_pairs_require_four_foci():
    sc = small_scenario([[1, 1], [2, 1], [1, 3]])
    with pytest.raises(ValueError):
        intersect_disjoint_pairs(HyperbolaBranch([1, 1], [2, 1], 0.1), HyperbolaBranch([1, 1], [1, 3], 0.1), sc)


def test_disjoint_pairs_match_grid_oracle():
    rng = np.random.default_rng(1)
    box = (0.0, 0.0, 10.0, 10.0)
    big = (-0.2, -0.2, 10.2, 10.2)
    total = 0
    for _ in range(200):
        pa, pb, pc, pd, u = rng.uniform(0, 10, (5, 2))
        sc = small_scenario([pa, pb, pc, pd])
        if rng.random() < 0.5:
            o1 = np.hypot(*(u - pa)) - np.hypot(*(u - pb))
            o2 = np.hypot(*(u - pc)) - np.hypot(*(u - pd))
        else:
            o1 = rng.uniform(-1, 1) * np.hypot(*(pa - pb))
            o2 = rng.uniform(-1, 1) * np.hypot(*(pc - pd))
        h1, h2 = HyperbolaBranch(pa, pb, o1), HyperbolaBranch(pc, pd, o2)
        got = intersect_disjoint_pairs(h1, h2, sc, max_roots=None)
        for p in got:
            assert abs(h1.residual(p)) < 1e-6 and abs(h2.residual(p)) < 1e-6
        comps, certified, h = grid_oracle(h1, h2, big, LAM)
        inside = np.array([((c >= 0) & (c <= 10)).all(1).any() for c in comps], bool)
        stray, missed = match_oracle(got, comps, certified & inside, h, box)
        assert not stray and missed == 0
        total += int(np.sum(certified & inside))
        assert len(intersect_disjoint_pairs(h1, h2, sc)) <= 2
    assert total > 150


def test_noiseless_truth_on_intersections(sc, quad):
    rng = np.random.default_rng(4)
    (a, b), (c, d) = quad.pair1, quad.pair2
    for u in random_points(rng, sc.area, 5, sc, 0.5):
        obs = observe(u, sc)
        br1 = [br for br in branches_for_pair(obs, a, b, sc) if abs(br.residual(u)) < 1e-9][0]
        br2 = [br for br in branches_for_pair(obs, c, d, sc) if abs(br.residual(u)) < 1e-9][0]
        pts = intersect_disjoint_pairs(br1, br2, sc, max_roots=None)
        assert np.min(np.hypot(*(pts - u).T)) < 1e-6


def test_pair_families_contain_truth(sc, quad):
    u = np.array([1.0, 2.0])
    obs = observe(u, sc)
    (a, b), (c, d) = quad.pair1, quad.pair2
    branches = branches_for_pair(obs, a, b, sc)
    dp2 = differential_phase(obs, c, d, sc.wavelength)
    sep2 = np.hypot(*(sc.ap_positions[c] - sc.ap_positions[d]))
    pts, z1, z2 = intersect_pair_families(
        sc, (a, b), [br.offset for br in branches], [br.z for br in branches], (c, d), dp2,
        feasible_range(dp2, sep2, sc.wavelength), sc.area)
    assert len(pts) == len(z1) == len(z2)
    k = np.argmin(np.hypot(*(pts - u).T))
    assert np.hypot(*(pts[k] - u)) < 1e-6
    truth_branch = [br for br in branches if abs(br.residual(u)) < 1e-9][0]
    assert z1[k] == truth_branch.z


def test_refine_least_squares_fixed_point(sc, s2_choice):
    u = np.array([1.0, 2.0])
    obs = observe(u, sc)
    ref = s2_choice.indices
    others = [i for i in range(sc.n_aps) if i not in ref]
    q = (*ref, others[0])
    out, ok = refine_least_squares(u, obs, q, sc, full_output=True)
    assert ok
    assert np.hypot(*(out - u)) < 1e-9


def test_refine_least_squares_pulls_back_small_perturbation(sc):
    u = np.array([1.0, 2.0])
    obs = observe(u, sc)
    q = (0, 5, 11, 16)
    rng = np.random.default_rng(5)
    for _ in range(20):
        ang = rng.uniform(0, 2 * np.pi)
        u0 = u + (sc.wavelength / 10) * np.array([np.cos(ang), np.sin(ang)])
        assert np.hypot(*(refine_least_squares(u0, obs, q, sc) - u)) < 1e-9
    batch = refine_least_squares(np.vstack([u, u + 0.001]), obs, q, sc)
    assert batch.shape == (2, 2)
    assert np.allclose(batch, u, atol=1e-9)
