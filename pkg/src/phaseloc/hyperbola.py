"""Differential-phase hyperbolas and their intersections.

A branch is the locus ``|focus_a - u| - |focus_b - u| = offset``. Pairs of
branches sharing ``focus_a`` are intersected in closed form; branches of two
disjoint AP pairs are intersected by damped Newton on the unsquared
(radical) residuals, which pick the correct branch by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .channel import Observation, wrap_phase
from .scenario import Scenario

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, eq=False)
class HyperbolaBranch:
    focus_a: np.ndarray
    focus_b: np.ndarray
    offset: float
    z: int = 0

    def __post_init__(self):
        object.__setattr__(self, "focus_a", np.asarray(self.focus_a, dtype=float))
        object.__setattr__(self, "focus_b", np.asarray(self.focus_b, dtype=float))
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def focal_distance(self) -> float:
        return float(np.hypot(*(self.focus_a - self.focus_b)))

    @property
    def feasible(self) -> bool:
        return abs(self.offset) < self.focal_distance

    def residual(self, u):
        u = np.asarray(u, dtype=float)
        da = np.hypot(*np.moveaxis(u - self.focus_a, -1, 0))
        db = np.hypot(*np.moveaxis(u - self.focus_b, -1, 0))
        return da - db - self.offset


@dataclass(frozen=True)
class AmbiguityRange:
    z_min: int
    z_max: int

    def values(self) -> np.ndarray:
        return np.arange(self.z_min, self.z_max + 1)

    def __len__(self) -> int:
        return self.z_max - self.z_min + 1


@dataclass(eq=False)
class CandidateSet:
    """Candidate UE positions with the ambiguity indices that produced them."""

    points: np.ndarray
    z: np.ndarray  # (n, k) integer ambiguity indices
    source: np.ndarray  # per point: "closed_form", "numeric" or "refined"
    degenerate: bool = False

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls, n_idx: int = 2) -> "CandidateSet":
        return cls(np.empty((0, 2)), np.empty((0, n_idx), dtype=int), np.empty(0, dtype=object))

    def rows(self):
        for p, z, s in zip(self.points, self.z, self.source):
            yield float(p[0]), float(p[1]), *[int(v) for v in z], str(s)


def differential_phase(obs: Observation, a: int, b: int, wavelength: float) -> float:
    """Range difference d_a - d_b modulo the wavelength, in [0, lambda)."""
    if a == b:
        raise ValueError("need two distinct APs")
    return float(wavelength / TWO_PI * wrap_phase(obs.phases[b] - obs.phases[a]))


def ambiguity_range(p_a, p_b, wavelength: float) -> AmbiguityRange:
    sep = float(np.hypot(*(np.asarray(p_a, float) - np.asarray(p_b, float))))
    if sep <= 0:
        raise ValueError("foci must be distinct")
    z = int(np.rint(sep / wavelength))
    return AmbiguityRange(-z, z)


def feasible_range(dphase: float, sep: float, wavelength: float) -> AmbiguityRange:
    """Every z with |dphase - z*lambda| < sep.

    This can reach one index beyond the rounded symmetric range on either
    side; those edge branches hug the line through the two foci.
    """
    lo = math.floor((dphase - sep) / wavelength) + 1
    hi = math.ceil((dphase + sep) / wavelength) - 1
    return AmbiguityRange(int(lo), int(hi))


def branch_offsets(obs: Observation, a: int, b: int, sc: Scenario):
    """Ambiguity indices and offsets of the feasible branches for one pair."""
    lam = sc.wavelength
    pa, pb = sc.ap_positions[a], sc.ap_positions[b]
    sep = float(np.hypot(*(pa - pb)))
    dphase = differential_phase(obs, a, b, lam)
    zs = feasible_range(dphase, sep, lam).values()
    offsets = dphase - zs * lam
    keep = np.abs(offsets) < sep
    return zs[keep], offsets[keep]


def branches_for_pair(obs: Observation, a: int, b: int, sc: Scenario) -> list[HyperbolaBranch]:
    zs, offsets = branch_offsets(obs, a, b, sc)
    pa, pb = sc.ap_positions[a], sc.ap_positions[b]
    return [HyperbolaBranch(pa, pb, o, int(z)) for z, o in zip(zs, offsets)]


# -- closed form, shared focus ------------------------------------------------

class Intersections(NamedTuple):
    points: np.ndarray
    degenerate: bool = False


def _quadratic_roots(a, b, c, lin_tol=1e-12):
    """Non-negative roots of a r^2 + b r + c = 0, vectorized; NaN where absent."""
    a, b, c = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, b, c)))
    r = np.full(a.shape + (2,), np.nan)
    lin = np.abs(a) < lin_tol
    with np.errstate(divide="ignore", invalid="ignore"):
        r_lin = np.where(b != 0, -c / b, np.nan)
        disc = b * b - 4 * a * c
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        # numerically stable pair of roots
        q = -0.5 * (b + np.copysign(sq, b))
        r1 = q / a
        r2 = c / q
    r[..., 0] = np.where(lin, r_lin, r1)
    r[..., 1] = np.where(lin, np.nan, r2)
    r[r < 0] = np.nan
    return r


def common_focus_batch(ref, secs, offsets, tol: float = 1e-6):
    """Closed-form intersection of shared-focus branches, vectorized.

    ``ref`` is the shared focus (2,), ``secs`` the secondary foci (k, 2) and
    ``offsets`` (n, k) the signed offsets d_ref - d_sec of each branch. With
    k = 2 the linear system is square; with k > 2 it is solved in the least
    squares sense. Returns points (n, 2, 2) with NaN for missing roots, and
    the per-root sum of squared branch residuals (n, 2).
    """
    ref = np.asarray(ref, float)
    secs = np.asarray(secs, float)
    offsets = np.atleast_2d(np.asarray(offsets, float))
    B = ref - secs  # rows: relative secondary positions
    Bp = np.linalg.pinv(B)
    v = -offsets  # d_sec - d_ref
    c = 0.5 * (np.sum(B * B, axis=1) - v * v)
    alpha = c @ Bp.T
    beta = v @ Bp.T
    qa = np.sum(beta * beta, axis=1) - 1.0
    qb = -2.0 * np.sum(alpha * beta, axis=1)
    qc = np.sum(alpha * alpha, axis=1)
    r = _quadratic_roots(qa, qb, qc)
    u_rel = alpha[:, None, :] - beta[:, None, :] * r[..., None]
    pts = ref - u_rel
    d_ref = np.hypot(u_rel[..., 0], u_rel[..., 1])
    diff = pts[:, :, None, :] - secs[None, None]
    d_sec = np.hypot(diff[..., 0], diff[..., 1])
    res = d_ref[..., None] - d_sec - offsets[:, None, :]
    sq = np.sum(res * res, axis=-1)
    return pts, sq, np.max(np.abs(res), axis=-1)


def _is_rank_deficient(B) -> bool:
    s = np.linalg.svd(np.asarray(B, float), compute_uv=False)
    return s[-1] <= 1e-12 * s[0]


def intersect_common_focus(h1: HyperbolaBranch, h2: HyperbolaBranch, tol: float = 1e-6) -> Intersections:
    """Intersections of two branches that share ``focus_a``."""
    if not np.allclose(h1.focus_a, h2.focus_a, atol=0, rtol=0):
        raise ValueError("branches must share focus_a")
    secs = np.vstack([h1.focus_b, h2.focus_b])
    if _is_rank_deficient(h1.focus_a - secs):
        return Intersections(np.empty((0, 2)), True)
    pts, _, maxres = common_focus_batch(h1.focus_a, secs, [[h1.offset, h2.offset]])
    ok = np.isfinite(maxres[0]) & (maxres[0] < tol)
    out = pts[0][ok]
    if len(out) == 2 and np.hypot(*(out[0] - out[1])) < 1e-9:
        out = out[:1]
    return Intersections(out, False)


# -- numeric, disjoint pairs ---------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 30
    residual_tol: float = 1e-8
    dedupe_tol: float = 1e-4
    max_halvings: int = 12
    max_step: float = 5.0  # meters
    sweep_spacing: float | None = None  # meters; None means one wavelength


def _pair_residuals(u, a1, b1, o1, a2, b2, o2):
    """Residuals and Jacobians for two branches at points ``u`` (n, 2)."""
    da1 = u - a1
    db1 = u - b1
    da2 = u - a2
    db2 = u - b2
    na1 = np.hypot(da1[..., 0], da1[..., 1])
    nb1 = np.hypot(db1[..., 0], db1[..., 1])
    na2 = np.hypot(da2[..., 0], da2[..., 1])
    nb2 = np.hypot(db2[..., 0], db2[..., 1])
    f = np.stack([na1 - nb1 - o1, na2 - nb2 - o2], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        g1 = da1 / na1[..., None] - db1 / nb1[..., None]
        g2 = da2 / na2[..., None] - db2 / nb2[..., None]
    return f, g1, g2


def damped_newton(u0, a1, b1, o1, a2, b2, o2, cfg: SolverConfig = SolverConfig()):
    """Vectorized damped Newton for f1 = f2 = 0 from seeds ``u0`` (n, 2).

    Foci and offsets broadcast against the seeds. The step is halved while
    the residual norm would increase. Returns (points, |residual|_max).
    """
    u = np.array(u0, dtype=float, copy=True)
    n = len(u)
    a1, b1, a2, b2 = (np.broadcast_to(np.asarray(x, float), (n, 2)) for x in (a1, b1, a2, b2))
    o1, o2 = (np.broadcast_to(np.asarray(x, float), (n,)) for x in (o1, o2))
    f, g1, g2 = _pair_residuals(u, a1, b1, o1, a2, b2, o2)
    fn = np.max(np.abs(f), axis=-1)
    active = np.isfinite(fn) & (fn >= cfg.residual_tol * 1e-3)
    for _ in range(cfg.max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        fa, j1, j2 = f[idx], g1[idx], g2[idx]
        det = j1[:, 0] * j2[:, 1] - j1[:, 1] * j2[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            sx = -(fa[:, 0] * j2[:, 1] - fa[:, 1] * j1[:, 1]) / det
            sy = -(j1[:, 0] * fa[:, 1] - j2[:, 0] * fa[:, 0]) / det
        step = np.column_stack([sx, sy])
        bad = ~np.all(np.isfinite(step), axis=1)
        if bad.any():
            # singular Jacobian: fall back to a gradient step on |f|^2 / 2
            gstep = -(fa[:, :1] * j1 + fa[:, 1:] * j2)
            step[bad] = np.nan_to_num(gstep[bad])
        slen = np.hypot(step[:, 0], step[:, 1])
        scale = np.minimum(1.0, cfg.max_step / np.maximum(slen, 1e-300))
        step *= scale[:, None]
        base = fn[idx]
        t = np.ones(idx.size)
        pending = np.ones(idx.size, dtype=bool)
        new_u = u[idx].copy()
        new_f = fa.copy()
        new_j1, new_j2 = j1.copy(), j2.copy()
        for _h in range(cfg.max_halvings + 1):
            p = np.flatnonzero(pending)
            if p.size == 0:
                break
            trial = u[idx[p]] + t[p, None] * step[p]
            tf, tj1, tj2 = _pair_residuals(trial, a1[idx[p]], b1[idx[p]], o1[idx[p]],
                                           a2[idx[p]], b2[idx[p]], o2[idx[p]])
            tn = np.max(np.abs(tf), axis=-1)
            ok = np.isfinite(tn) & (tn <= base[p])
            acc = p[ok]
            new_u[acc] = trial[ok]
            new_f[acc] = tf[ok]
            new_j1[acc] = tj1[ok]
            new_j2[acc] = tj2[ok]
            pending[acc] = False
            t[p[~ok]] *= 0.5
        stalled = pending  # no decrease found
        u[idx] = new_u
        f[idx] = new_f
        g1[idx] = new_j1
        g2[idx] = new_j2
        fn[idx] = np.max(np.abs(new_f), axis=-1)
        done = stalled | (fn[idx] < cfg.residual_tol * 1e-3)
        active[idx[done]] = False
    return u, fn


def default_seeds(foci, area) -> np.ndarray:
    """Nine deterministic seeds: edge midpoints, centroid, corner-biased points."""
    foci = np.asarray(foci, float)
    mids = 0.5 * (foci + np.roll(foci, -1, axis=0))
    centroid = foci.mean(axis=0)
    xmin, ymin, xmax, ymax = area
    corners = np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])
    biased = centroid + 0.75 * (corners - centroid)
    return np.vstack([mids, centroid, biased])


def _dedupe(points, tol):
    keep = []
    for p in points:
        if all(np.hypot(*(p - q)) >= tol for q in keep):
            keep.append(p)
    return np.array(keep).reshape(-1, 2)


def intersect_disjoint_pairs(h1: HyperbolaBranch, h2: HyperbolaBranch, sc: Scenario,
                             cfg: SolverConfig = SolverConfig(), max_roots: int | None = 2,
                             box=None) -> np.ndarray:
    """Intersections of branches with four distinct foci, in seed order.

    The nine default seeds are followed by a sweep along ``h1`` inside
    ``box`` (default: the area grown by 2 m), which catches crossings far
    from the foci when both branches hug their focal rays. Two such
    branches can cross up to four times; ``max_roots`` truncates the list
    (``None`` keeps every distinct root found).
    """
    foci = np.vstack([h1.focus_a, h1.focus_b, h2.focus_a, h2.focus_b])
    if len(_dedupe(foci, 1e-12)) < 4:
        raise ValueError("the two branches must have four distinct foci")
    seeds = default_seeds(foci, sc.area)
    pts, res = damped_newton(seeds, h1.focus_a, h1.focus_b, h1.offset,
                             h2.focus_a, h2.focus_b, h2.offset, cfg)
    good = pts[np.isfinite(res) & (res < cfg.residual_tol)]
    if box is None:
        xmin, ymin, xmax, ymax = sc.area
        box = (xmin - 2.0, ymin - 2.0, xmax + 2.0, ymax + 2.0)
    xs, ys, _, _ = _kernels.sweep_families(
        h1.focus_a, h1.focus_b, np.array([h1.offset]), h2.focus_a, h2.focus_b, h2.offset,
        sc.wavelength, 0, 0, np.asarray(box, dtype=float), float(cfg.sweep_spacing or sc.wavelength),
        cfg.max_iters, cfg.residual_tol, cfg.max_halvings, cfg.max_step, cfg.dedupe_tol, 0)
    good = np.vstack([good, np.column_stack([xs, ys])])
    return _dedupe(good, cfg.dedupe_tol)[:max_roots]


def intersect_pair_families(sc: Scenario, pair1, offsets1, z1, pair2, dphase2, zrange2,
                            box, cfg: SolverConfig = SolverConfig(), max_roots: int | None = None):
    """All intersections between the branch families of two AP pairs.

    Each branch of ``pair1`` is sampled inside ``box`` at roughly
    ``cfg.sweep_spacing`` arc length, using x = (o/2) sqrt(1 + s^2), y = b s
    in the frame of its foci, and the range difference of ``pair2`` is
    tracked along it. Every crossing of a ``pair2`` branch level, plus every local
    extremum of that function (where a level may be touched twice within one
    step), seeds a damped Newton solve. Returns (points, z1, z2) with
    distinct roots grouped by (z1, z2).
    """
    pa, pb = sc.ap_positions[pair1[0]], sc.ap_positions[pair1[1]]
    pc, pd = sc.ap_positions[pair2[0]], sc.ap_positions[pair2[1]]
    offsets1 = np.ascontiguousarray(offsets1, dtype=float)
    if len(offsets1) == 0:
        return np.empty((0, 2)), np.empty(0, dtype=int), np.empty(0, dtype=int)
    xs, ys, bi, zz = _kernels.sweep_families(
        pa, pb, offsets1, pc, pd, float(dphase2), sc.wavelength,
        int(zrange2.z_min), int(zrange2.z_max), np.asarray(box, dtype=float),
        float(cfg.sweep_spacing or sc.wavelength), cfg.max_iters, cfg.residual_tol,
        cfg.max_halvings, cfg.max_step, cfg.dedupe_tol, 0 if max_roots is None else int(max_roots))
    return np.column_stack([xs, ys]), np.asarray(z1)[bi], zz


# -- three-branch least-squares refinement ------------------------------------

def refine_least_squares(u_hat, obs: Observation, quad, sc: Scenario, full_output: bool = False):
    """Snap candidate(s) onto the three shared-focus branches of a quadruplet.

    ``quad[0]`` is the reference AP. Ambiguities are fixed by rounding at the
    candidate (ties to even); the overdetermined shared-focus system is then
    solved through the pseudo-inverse and the root with the smaller sum of
    squared residuals is kept. Candidates without a non-negative root are
    returned unchanged (``refined`` is False for them).
    """
    u_hat = np.asarray(u_hat, dtype=float)
    single = u_hat.ndim == 1
    U = u_hat.reshape(-1, 2)
    lam = sc.wavelength
    ref = int(quad[0])
    others = [int(q) for q in quad[1:]]
    pr = sc.ap_positions[ref]
    secs = sc.ap_positions[others]
    dphase = np.array([differential_phase(obs, ref, s, lam) for s in others])
    d_ref = np.hypot(*(U - pr).T)
    d_sec = np.hypot(*np.moveaxis(U[:, None, :] - secs[None], -1, 0))
    zhat = np.rint((dphase[None, :] - (d_ref[:, None] - d_sec)) / lam)
    offsets = dphase[None, :] - zhat * lam
    pts, sq, _ = common_focus_batch(pr, secs, offsets)
    sq = np.where(np.isfinite(sq), sq, np.inf)
    best = np.argmin(sq, axis=1)
    refined = np.isfinite(sq[np.arange(len(U)), best])
    out = np.where(refined[:, None], pts[np.arange(len(U)), best], U)
    if single:
        out, refined = out[0], bool(refined[0])
    return (out, refined) if full_output else out
