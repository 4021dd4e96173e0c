"""Choosing which APs feed the candidate generators."""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from .fim import efim_subset, peb_from_matrices
from .scenario import Scenario, grid_layout


@dataclass(frozen=True)
class TripletChoice:
    reference: int
    secondaries: tuple[int, int]
    coverage: Optional[float] = None

    def __post_init__(self):
        idx = (self.reference, *self.secondaries)
        if len(set(idx)) != 3:
            raise ValueError(f"triplet indices must be distinct: {idx}")
        if self.coverage is not None and not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")

    @property
    def indices(self) -> tuple[int, int, int]:
        return (self.reference, *self.secondaries)


@dataclass(frozen=True)
class QuadChoice:
    pair1: tuple[int, int]
    pair2: tuple[int, int]
    intra_mean: float
    inter_dist: float

    def __post_init__(self):
        if len({*self.pair1, *self.pair2}) != 4:
            raise ValueError("quadruplet indices must be distinct")

    @property
    def indices(self) -> tuple[int, int, int, int]:
        return (*self.pair1, *self.pair2)

    @classmethod
    def from_pairs(cls, sc: Scenario, pair1, pair2) -> "QuadChoice":
        p = sc.ap_positions
        pair1, pair2 = tuple(int(i) for i in pair1), tuple(int(i) for i in pair2)
        intra = 0.5 * (np.hypot(*(p[pair1[0]] - p[pair1[1]])) + np.hypot(*(p[pair2[0]] - p[pair2[1]])))
        mid = 0.5 * (p[pair1[0]] + p[pair1[1]]) - 0.5 * (p[pair2[0]] + p[pair2[1]])
        return cls(pair1, pair2, float(intra), float(np.hypot(*mid)))


def _dist_matrix(sc: Scenario) -> np.ndarray:
    diff = sc.ap_positions[:, None, :] - sc.ap_positions[None]
    return np.hypot(diff[..., 0], diff[..., 1])


def select_strategy1(sc: Scenario) -> TripletChoice:
    """Triplet minimizing |p_r - p_s1| * |p_r - p_s2|."""
    D = _dist_matrix(sc)
    best = None
    for r in range(sc.n_aps):
        for s1, s2 in combinations([m for m in range(sc.n_aps) if m != r], 2):
            key = (D[r, s1] * D[r, s2], r, s1, s2)
            if best is None or key < best:
                best = key
    return TripletChoice(best[1], (best[2], best[3]))


def coverage_points(area, grid_res: float, sc: Scenario | None = None) -> np.ndarray:
    """Cell centers of ``area``; centers on an AP site are nudged by 1 mm."""
    pts = grid_layout(area, grid_res)
    if sc is not None:
        pts = avoid_aps(pts, sc)
    return pts


def avoid_aps(points, sc: Scenario, eps: float = 1e-3) -> np.ndarray:
    pts = np.array(points, dtype=float, copy=True).reshape(-1, 2)
    diff = pts[:, None, :] - sc.ap_positions[None]
    hit = np.any(np.hypot(diff[..., 0], diff[..., 1]) < eps, axis=1)
    pts[hit] += eps
    return pts


def peb_coverage(sc: Scenario, subset, threshold: float, points) -> float:
    peb = peb_from_matrices(efim_subset(points, list(subset), sc))
    return float(np.mean(peb < threshold))


def reference_angle(sc: Scenario, r: int, s1: int, s2: int) -> float:
    """Angle in degrees at AP r between the directions to s1 and s2."""
    a = sc.ap_positions[s1] - sc.ap_positions[r]
    b = sc.ap_positions[s2] - sc.ap_positions[r]
    cosang = float(a @ b) / (np.hypot(*a) * np.hypot(*b))
    return math.degrees(math.acos(min(1.0, max(-1.0, cosang))))


def strategy2_scores(sc: Scenario, eps_deg: float = 10.0, gamma: float = 15.0,
                     threshold: float | None = None, grid_res: float = 0.5):
    """All triplets passing the collinearity and distance filters, with coverage."""
    threshold = sc.wavelength if threshold is None else threshold
    D = _dist_matrix(sc)
    pts = coverage_points(sc.area, grid_res, sc)
    cache: dict[tuple, float] = {}
    rows = []
    for tri in combinations(range(sc.n_aps), 3):
        if max(D[tri[0], tri[1]], D[tri[0], tri[2]], D[tri[1], tri[2]]) >= gamma:
            continue
        for r in tri:
            s1, s2 = (m for m in tri if m != r)
            theta = reference_angle(sc, r, s1, s2)
            if abs(theta - 180.0) > eps_deg:
                continue
            if tri not in cache:
                cache[tri] = peb_coverage(sc, tri, threshold, pts)
            rows.append(TripletChoice(r, (s1, s2), cache[tri]))
    return rows


def select_strategy2(sc: Scenario, eps_deg: float = 10.0, gamma: float = 15.0,
                     threshold: float | None = None, grid_res: float = 0.5) -> TripletChoice:
    """Near-collinear, compact triplet with the largest PEB coverage."""
    rows = strategy2_scores(sc, eps_deg, gamma, threshold, grid_res)
    if not rows:
        raise ValueError("no triplet passes the filters; increase eps_deg or gamma")
    return min(rows, key=lambda t: (-t.coverage, t.reference, *t.secondaries))


def _pairings(q):
    a, b, c, d = q
    return [((a, b), (c, d)), ((a, c), (b, d)), ((a, d), (b, c))]


def polo2_scores(sc: Scenario) -> list[QuadChoice]:
    """Every quadruplet in its lowest-intra-distance pairing, before filtering."""
    rows = []
    for q in combinations(range(sc.n_aps), 4):
        options = [QuadChoice.from_pairs(sc, p1, p2) for p1, p2 in _pairings(q)]
        rows.append(min(options, key=lambda c: (c.intra_mean, c.pair1, c.pair2)))
    return rows


def select_polo2(sc: Scenario, gamma: float = 15.0) -> QuadChoice:
    """Two compact AP pairs as far apart as possible."""
    if sc.n_aps < 4:
        raise ValueError("need at least four APs")
    valid = [c for c in polo2_scores(sc) if c.intra_mean < gamma]
    if not valid:
        raise ValueError("no quadruplet has mean intra-pair distance below gamma")
    return min(valid, key=lambda c: (-c.inter_dist, c.pair1, c.pair2))
