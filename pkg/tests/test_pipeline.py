import math

import numpy as np
import pytest

from conftest import alignment_locus, random_points, small_scenario
from phaseloc.channel import observe
from phaseloc.fim import high_error_membership, peb_from_matrices, efim_triplet
from phaseloc.hyperbola import CandidateSet
from phaseloc.mle import CostField, cost, egs_estimate, egs_eval_count, grid_axes
from phaseloc.pipeline import (PipelineConfig, _finish, branch_count, egs_report, estimate,
                               eval_bound, polo1_candidates, polo1_estimate, polo2_candidates,
                               polo2_estimate)
from phaseloc.scenario import SeededRng
from phaseloc.selection import QuadChoice, TripletChoice


def _err(rep, u):
    return float(np.hypot(*(rep.estimate - u)))


def test_polo1_noiseless_recovery(sc, s2_choice):
    rng = np.random.default_rng(0)
    pts = random_points(rng, sc.area, 200, sc, 0.3)
    J = efim_triplet(pts, s2_choice.indices, sc)
    good = pts[peb_from_matrices(J) < sc.wavelength / 100][:12]
    assert len(good) == 12
    for u in good:
        rep = polo1_estimate(observe(u, sc), s2_choice, sc)
        assert _err(rep, u) < 1e-6
        assert not rep.fallback


def test_polo1_counts(sc, s1_choice, s2_choice):
    u = np.array([1.0, 2.0])
    obs = observe(u, sc, SeededRng(0, 0))
    for tri in (s1_choice, s2_choice):
        r, (a, b) = tri.reference, tri.secondaries
        rep = polo1_estimate(obs, tri, sc)
        bound = 2 * branch_count(sc, r, a) * branch_count(sc, r, b)
        assert rep.eval_bound == bound
        assert 1 <= rep.ml_evals <= bound
        assert rep.ml_evals == len(rep.candidates)
        assert rep.intersection_calls >= 1
        dist = np.hypot(*(sc.ap_positions[[a, b]] - sc.ap_positions[r]).T)
        assert bound == 2 * math.prod(2 * round(d / sc.wavelength) + 1 for d in dist)


def test_polo1_collinear_triplet_falls_back_to_numeric():
    sc = small_scenario([[2, 5], [4, 5], [6, 5], [5, 9]])
    tri = TripletChoice(1, (0, 2))
    u = np.array([4.3, 6.7])
    cands, _ = polo1_candidates(observe(u, sc), tri, sc)
    assert cands.degenerate
    assert set(cands.source) == {"numeric"}
    assert np.min(np.hypot(*(cands.points - u).T)) < 1e-6


def test_polo2_noiseless_recovery(sc, quad):
    rng = np.random.default_rng(1)
    pts = random_points(rng, sc.area, 40, sc, 0.3)
    pts = pts[~high_error_membership(pts, quad.pair1, quad.pair2, sc)][:10]
    for u in pts:
        rep = polo2_estimate(observe(u, sc), quad, sc)
        assert _err(rep, u) < 1e-6
        assert rep.ml_evals <= rep.eval_bound == eval_bound(sc, quad.pair1, quad.pair2)


def test_polo2_recovers_on_alignment_locus(sc, quad):
    locus = alignment_locus(sc, quad, n_lines=12)
    assert len(locus) >= 5
    for u in locus:
        rep = polo2_estimate(observe(u, sc), quad, sc)
        assert _err(rep, u) < 1e-6
        assert rep.refined_candidates >= 1


def test_step2_snaps_flagged_candidates(sc, quad):
    u = alignment_locus(sc, quad, n_lines=5)[0]
    obs = observe(u, sc, SeededRng(2, 0))
    raw, calls, n0 = polo2_candidates(obs, quad, sc, step2=False)
    ref, calls2, n1 = polo2_candidates(obs, quad, sc)
    assert n0 == 0 and n1 >= 1 and calls == calls2
    assert "refined" in set(ref.source)
    assert "refined" not in set(raw.source)


def test_eval_bound_ignores_inter_pair_distance():
    base = np.array([[1.0, 1.0], [1.8, 1.3], [4.0, 4.0], [4.5, 4.9]])
    counts = []
    for shift in (0.0, 3.0, 6.0):
        aps = base.copy()
        aps[2:] += shift
        sc = small_scenario(aps, area=(0, 0, 12, 12))
        q = QuadChoice.from_pairs(sc, (0, 1), (2, 3))
        counts.append(eval_bound(sc, q.pair1, q.pair2))
        rep = polo2_estimate(observe([6.0, 2.5], sc), q, sc)
        assert rep.ml_evals <= rep.eval_bound
    assert len(set(counts)) == 1


def test_estimate_never_worse_than_initial(sc, s1_choice, quad):
    rng = np.random.default_rng(3)
    for k, u in enumerate(random_points(rng, sc.area, 8, sc, 0.3)):
        obs = observe(u, sc.with_power_dbm(0.0), SeededRng(3, k))
        field = CostField(obs, sc.with_power_dbm(0.0))
        for rep in (polo1_estimate(obs, s1_choice, sc, field_=field),
                    polo2_estimate(obs, quad, sc, field_=field)):
            assert cost(rep.estimate, field) <= cost(rep.initial, field) + 1e-18


def test_empty_candidates_fall_back_to_coarse_egs(sc, s1_choice, quad):
    cfg = PipelineConfig(admission_margin=-50.0)
    obs = observe([1.0, 2.0], sc)
    for rep in (polo1_estimate(obs, s1_choice, sc, cfg), polo2_estimate(obs, quad, sc, cfg)):
        assert rep.fallback
        assert rep.ml_evals == egs_eval_count(sc.area, sc.wavelength, 1.0)
        assert len(rep.candidates) == 0
        field = CostField(obs, sc)
        assert np.array_equal(rep.estimate, egs_estimate(field, 1.0)[0])
        assert cost(rep.estimate, field) <= cost(rep.initial, field)


def test_full_grid_candidates_reproduce_egs(sc):
    area = (0.0, 1.0, 2.0, 3.0)
    obs = observe([1.0, 2.0], sc, SeededRng(4, 0))
    field = CostField(obs, sc)
    x0, y0, nx, ny = grid_axes(area, 0.5 * sc.wavelength)
    X, Y = np.meshgrid(x0 + 0.5 * sc.wavelength * np.arange(nx), y0 + 0.5 * sc.wavelength * np.arange(ny))
    grid = np.column_stack([X.ravel(), Y.ravel()])
    cands = CandidateSet(grid, np.zeros((len(grid), 2), int), np.full(len(grid), "grid", dtype=object))
    rep = _finish(field, cands, PipelineConfig(), intersection_calls=0)
    est, count = egs_estimate(field, 0.5, area=area)
    assert rep.ml_evals == count
    assert np.array_equal(rep.estimate, est)


def test_egs_report_and_dispatch(sc, s2_choice, quad):
    obs = observe([1.0, 2.0], sc)
    rep = egs_report(obs, sc, 0.1, area=(0.0, 1.0, 2.0, 3.0))
    assert rep.method == "egs" and rep.ml_evals == rep.eval_bound
    assert _err(rep, [1.0, 2.0]) < 1e-6
    assert estimate("polo1", obs, sc, s2_choice).method == "polo1"
    assert estimate("polo2", obs, sc, quad).method == "polo2"
    with pytest.raises(ValueError):
        estimate("ml", obs, sc)
    row = rep.as_row()
    assert {"x_m", "y_m", "ml_evals", "wall_time_s", "fallback"} <= row.keys()
