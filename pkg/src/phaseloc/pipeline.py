"""End-to-end estimators: candidates, ML scoring, local refinement."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .channel import Observation
from .fim import high_error_membership
from .hyperbola import (CandidateSet, SolverConfig, ambiguity_range, branch_offsets,
                        differential_phase, feasible_range, intersect_pair_families,
                        refine_least_squares, _is_rank_deficient)
from .mle import CostField, GdConfig, argmin_over_candidates, grid_search, refine_gd
from .scenario import Scenario
from .selection import QuadChoice, TripletChoice


@dataclass(frozen=True)
class PipelineConfig:
    gd: GdConfig = field(default_factory=GdConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    admission_margin: float = 2.0  # meters outside the area
    closed_form_tol: float = 1e-6  # meters, signed branch residual
    high_error_tol_deg: float = 3.0
    step2: bool = True
    fallback_k: float = 1.0


@dataclass
class EstimateReport:
    estimate: np.ndarray
    initial: np.ndarray
    ml_evals: int
    intersection_calls: int
    refined_candidates: int = 0
    wall_time: float = 0.0
    eval_bound: int = 0
    fallback: bool = False
    method: str = ""
    candidates: CandidateSet | None = field(default=None, repr=False)

    def as_row(self) -> dict:
        return {
            "method": self.method,
            "x_m": float(self.estimate[0]), "y_m": float(self.estimate[1]),
            "x0_m": float(self.initial[0]), "y0_m": float(self.initial[1]),
            "ml_evals": self.ml_evals, "intersection_calls": self.intersection_calls,
            "refined_candidates": self.refined_candidates, "eval_bound": self.eval_bound,
            "fallback": int(self.fallback), "wall_time_s": self.wall_time,
        }


def branch_count(sc: Scenario, a: int, b: int) -> int:
    return len(ambiguity_range(sc.ap_positions[a], sc.ap_positions[b], sc.wavelength))


def eval_bound(sc: Scenario, pair1, pair2) -> int:
    """Two intersections per branch pair: the candidate count model."""
    return 2 * branch_count(sc, *pair1) * branch_count(sc, *pair2)


def _admit(points, sc: Scenario, cfg: PipelineConfig):
    return np.all(np.isfinite(points), axis=-1) & sc.contains(points, cfg.admission_margin).reshape(points.shape[:-1])


def _finish(field_: CostField, cands: CandidateSet, cfg: PipelineConfig, **report):
    """Pick the lowest-cost candidate and refine it; EGS fallback when empty."""
    if len(cands) == 0:
        u0, ml_evals = grid_search(field_, field_.sc.area, cfg.fallback_k * field_.sc.wavelength)
        est = refine_gd(u0, field_, cfg.gd)
        fallback = True
    else:
        u0, _ = argmin_over_candidates(cands.points, field_)
        est = refine_gd(u0, field_, cfg.gd)
        fallback = False
        ml_evals = len(cands)
    return EstimateReport(estimate=est, initial=u0, ml_evals=ml_evals, fallback=fallback,
                          candidates=cands, **report)


def polo1_candidates(obs: Observation, triplet: TripletChoice, sc: Scenario,
                     cfg: PipelineConfig = PipelineConfig()):
    """Intersections of every (r, s1) branch with every (r, s2) branch.

    Returns the admitted candidates and the number of branch pairs tried.
    """
    r, (s1, s2) = triplet.reference, triplet.secondaries
    z1, o1 = branch_offsets(obs, r, s1, sc)
    z2, o2 = branch_offsets(obs, r, s2, sc)
    n_pairs = len(z1) * len(z2)
    if n_pairs == 0:
        return CandidateSet.empty(), 0
    pr = sc.ap_positions[r]
    secs = sc.ap_positions[[s1, s2]]
    if _is_rank_deficient(pr - secs):
        # collinear foci: the shared-focus system is singular, solve numerically
        dphase2 = differential_phase(obs, r, s2, sc.wavelength)
        lo, hi = sc.area[:2], sc.area[2:]
        box = (lo[0] - cfg.admission_margin, lo[1] - cfg.admission_margin,
               hi[0] + cfg.admission_margin, hi[1] + cfg.admission_margin)
        pts, za, zb = intersect_pair_families(
            sc, (r, s1), o1, z1, (r, s2), dphase2,
            feasible_range(dphase2, float(np.hypot(*(pr - sc.ap_positions[s2]))), sc.wavelength),
            box, cfg.solver)
        keep = _admit(pts, sc, cfg)
        cs = CandidateSet(pts[keep], np.column_stack([za, zb])[keep],
                          np.full(int(keep.sum()), "numeric", dtype=object), degenerate=True)
        return cs, n_pairs
    xmin, ymin, xmax, ymax = sc.area
    m = cfg.admission_margin
    xs, ys, i1, i2 = _kernels.common_focus_pairs(
        pr, secs[0], secs[1], np.ascontiguousarray(o1), np.ascontiguousarray(o2),
        cfg.closed_form_tol, np.array([xmin - m, ymin - m, xmax + m, ymax + m]))
    zs = np.column_stack([z1[i1], z2[i2]])
    cs = CandidateSet(np.column_stack([xs, ys]), zs, np.full(len(xs), "closed_form", dtype=object))
    return cs, n_pairs


def polo1_estimate(obs: Observation, triplet: TripletChoice, sc: Scenario,
                   cfg: PipelineConfig = PipelineConfig(), field_: CostField | None = None) -> EstimateReport:
    """Shared-reference triplet estimator."""
    t0 = time.perf_counter()
    field_ = field_ or CostField(obs, sc)
    cands, calls = polo1_candidates(obs, triplet, sc, cfg)
    rep = _finish(field_, cands, cfg, intersection_calls=calls, method="polo1",
                  eval_bound=eval_bound(sc, (triplet.reference, triplet.secondaries[0]),
                                        (triplet.reference, triplet.secondaries[1])))
    rep.wall_time = time.perf_counter() - t0
    return rep


def polo2_candidates(obs: Observation, quad: QuadChoice, sc: Scenario,
                     cfg: PipelineConfig = PipelineConfig(), step2: bool | None = None):
    """Step 1 intersections of two disjoint pairs, then Step 2 snapping.

    Returns (candidates, branch pairs tried, number of refined candidates).
    """
    step2 = cfg.step2 if step2 is None else step2
    a, b = quad.pair1
    c, d = quad.pair2
    z1, o1 = branch_offsets(obs, a, b, sc)
    z2, _ = branch_offsets(obs, c, d, sc)
    dphase2 = differential_phase(obs, c, d, sc.wavelength)
    calls = len(z1) * len(z2)
    xmin, ymin, xmax, ymax = sc.area
    m = cfg.admission_margin
    pts, za, zb = intersect_pair_families(
        sc, (a, b), o1, z1, (c, d), dphase2,
        feasible_range(dphase2, float(np.hypot(*(sc.ap_positions[c] - sc.ap_positions[d]))), sc.wavelength),
        (xmin - m, ymin - m, xmax + m, ymax + m), cfg.solver)
    keep = _admit(pts, sc, cfg)
    pts, zs = pts[keep], np.column_stack([za, zb])[keep]
    source = np.full(len(pts), "numeric", dtype=object)
    n_ref = 0
    if step2 and len(pts):
        mask = high_error_membership(pts, quad.pair1, quad.pair2, sc, cfg.high_error_tol_deg)
        if mask.any():
            ref_quad = (a, b, c, d) if a < b else (b, a, c, d)
            new, ok = refine_least_squares(pts[mask], obs, ref_quad, sc, full_output=True)
            idx = np.flatnonzero(mask)
            pts[idx] = new
            source[idx[ok]] = "refined"
            n_ref = int(mask.sum())
            keep = _admit(pts, sc, cfg)
            pts, zs, source = pts[keep], zs[keep], source[keep]
    return CandidateSet(pts, zs, source), calls, n_ref


def polo2_estimate(obs: Observation, quad: QuadChoice, sc: Scenario,
                   cfg: PipelineConfig = PipelineConfig(), step2: bool | None = None,
                   field_: CostField | None = None) -> EstimateReport:
    """Two-pair estimator; ``step2=False`` skips the high-error refinement."""
    t0 = time.perf_counter()
    field_ = field_ or CostField(obs, sc)
    cands, calls, n_ref = polo2_candidates(obs, quad, sc, cfg, step2)
    rep = _finish(field_, cands, cfg, intersection_calls=calls, refined_candidates=n_ref,
                  method="polo2", eval_bound=eval_bound(sc, quad.pair1, quad.pair2))
    rep.wall_time = time.perf_counter() - t0
    return rep


def egs_report(obs: Observation, sc: Scenario, resolution_k: float = 0.1, area=None,
               cfg: PipelineConfig = PipelineConfig(), field_: CostField | None = None) -> EstimateReport:
    """Exhaustive grid search wrapped in the same report type."""
    t0 = time.perf_counter()
    field_ = field_ or CostField(obs, sc)
    area = sc.area if area is None else area
    u0, count = grid_search(field_, area, resolution_k * sc.wavelength)
    est = refine_gd(u0, field_, cfg.gd)
    return EstimateReport(estimate=est, initial=u0, ml_evals=count, intersection_calls=0,
                          wall_time=time.perf_counter() - t0, eval_bound=count, method="egs")


def estimate(method: str, obs: Observation, sc: Scenario, choice=None,
             cfg: PipelineConfig = PipelineConfig(), **kw) -> EstimateReport:
    """Dispatch by method name: ``polo1``, ``polo2`` or ``egs``."""
    if method == "polo1":
        return polo1_estimate(obs, choice, sc, cfg, **kw)
    if method == "polo2":
        return polo2_estimate(obs, choice, sc, cfg, **kw)
    if method == "egs":
        return egs_report(obs, sc, cfg=cfg, **kw)
    raise ValueError(f"unknown method {method!r}")
