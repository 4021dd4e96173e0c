"""Compressed maximum-likelihood cost, grid search and local refinement.

With the amplitudes and the UE phase offset eliminated, the cost reduces to

    C(u) = -| sum_m t_m exp(-j 4 pi d_m(u) / lambda) |,   t_m = (y_m^*)^2 s^2

and the phase-offset estimate is half the argument of that sum.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .channel import Observation
from .scenario import Scenario


class CostField:
    """ML cost landscape for one observation; immutable and shareable."""

    def __init__(self, obs: Observation, sc: Scenario):
        self.obs = obs
        self.sc = sc
        self.terms = np.conj(obs.samples) ** 2 * sc.pilot ** 2
        self.terms.setflags(write=False)
        self.k2 = 4.0 * math.pi / sc.wavelength
        self._apx = np.ascontiguousarray(sc.ap_positions[:, 0])
        self._apy = np.ascontiguousarray(sc.ap_positions[:, 1])
        self._tr = np.ascontiguousarray(self.terms.real)
        self._ti = np.ascontiguousarray(self.terms.imag)

    def steering_sum(self, u) -> np.ndarray:
        """Exact (float64 trig) sum at point(s) ``u`` of shape (..., 2)."""
        u = np.asarray(u, dtype=float)
        diff = u[..., None, :] - self.sc.ap_positions
        d = np.hypot(diff[..., 0], diff[..., 1])
        return np.exp(-1j * self.k2 * d) @ self.terms

    def steering_sum_fast(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        sr, si = _kernels.steering_sum(np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]),
                                       self._apx, self._apy, self._tr, self._ti, self.k2)
        return sr + 1j * si

    def costs(self, points) -> np.ndarray:
        """Cost at many points via the compiled kernel."""
        return -np.abs(self.steering_sum_fast(points))

    def grad_hess(self, u):
        """Cost, gradient and Hessian at a single point (all analytic)."""
        u = np.asarray(u, dtype=float)
        diff = u - self.sc.ap_positions
        d = np.hypot(diff[:, 0], diff[:, 1])
        g = diff / d[:, None]  # gradient of each distance
        a = self.terms * np.exp(-1j * self.k2 * d)
        S = a.sum()
        jk = -1j * self.k2
        dS = (a[:, None] * jk * g).sum(axis=0)
        eye = np.eye(2)
        hd = (eye[None] - g[:, :, None] * g[:, None, :]) / d[:, None, None]
        d2S = (a[:, None, None] * (jk * jk * g[:, :, None] * g[:, None, :] + jk * hd)).sum(axis=0)
        absS = abs(S)
        re1 = np.real(np.conj(S) * dS)
        grad_abs = re1 / absS
        hess_abs = (np.real(np.conj(dS)[:, None] * dS[None, :]) + np.real(np.conj(S) * d2S)) / absS \
            - np.outer(re1, re1) / absS ** 3
        return -absS, -grad_abs, -hess_abs


def phase_offset_hat(u, field: CostField) -> float:
    """UE phase-offset estimate at ``u`` (defined modulo pi)."""
    S = field.steering_sum(u)
    if S == 0:
        warnings.warn("degenerate steering sum; phase offset set to 0", RuntimeWarning)
        return 0.0
    return 0.5 * float(np.angle(S))


def cost(u, field: CostField):
    """Compressed ML cost; vectorized over leading axes of ``u``."""
    S = field.steering_sum(u)
    out = -np.abs(S)
    return float(out) if np.ndim(out) == 0 else out


def cost_from_phase(u, field: CostField) -> float:
    """Cost written with the explicit phase-offset substitution."""
    S = field.steering_sum(u)
    return float(-np.real(np.exp(-2j * phase_offset_hat(u, field)) * S))


def gradient(u, field: CostField) -> np.ndarray:
    return field.grad_hess(u)[1]


def argmin_over_candidates(points, field: CostField):
    """Candidate with the smallest cost; ties go to the lowest index."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("empty candidate set")
    idx = int(np.argmin(field.costs(pts)))
    return pts[idx].copy(), cost(pts[idx], field)


@dataclass(frozen=True)
class GdConfig:
    max_iters: int = 100
    step_init: float | None = None  # meters; None means lambda / 10
    shrink_factor: float = 0.5
    grad_tol: float = 1e-9  # on |grad C| / |C|, 1/m
    step_tol: float = 1e-12
    armijo: float = 1e-4

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.shrink_factor < 1:
            raise ValueError("shrink_factor must lie in (0, 1)")
        if self.grad_tol <= 0 or self.step_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.step_init is not None and self.step_init <= 0:
            raise ValueError("step_init must be positive")


@dataclass(frozen=True)
class GdResult:
    point: np.ndarray
    cost: float
    iterations: int
    converged: bool


def refine_gd(u0, field: CostField, cfg: GdConfig | None = None, full_output: bool = False):
    """Local descent on the ML cost from ``u0`` with backtracking.

    The search direction is the Newton direction when the 2x2 Hessian is
    positive definite and the negative gradient otherwise. Each trial step
    is capped at ``step_init`` and shrunk until the Armijo condition holds,
    so the cost never increases along accepted iterates.
    """
    cfg = cfg or GdConfig()
    step_init = cfg.step_init if cfg.step_init is not None else field.sc.wavelength / 10.0
    u = np.asarray(u0, dtype=float).copy()
    if not np.all(np.isfinite(u)):
        raise ValueError("u0 must be finite")
    c, g, H = field.grad_hess(u)
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        gnorm = float(np.hypot(*g))
        if gnorm <= cfg.grad_tol * abs(c):
            converged = True
            it -= 1
            break
        direction = None
        if np.linalg.eigvalsh(H)[0] > 0:
            direction = -np.linalg.solve(H, g)
            dnorm = float(np.hypot(*direction))
            t = min(1.0, step_init / dnorm)
            slope = float(g @ direction)
        if direction is None or slope >= 0:
            direction = -g
            dnorm = gnorm
            t = step_init / dnorm
            slope = -gnorm ** 2
        accepted = False
        while t * dnorm >= cfg.step_tol:
            trial = u + t * direction
            c_new = cost(trial, field)
            predicted = cfg.armijo * t * slope
            roundoff = abs(t * slope) <= 1e-13 * abs(c)
            if c_new <= c + predicted or (roundoff and c_new <= c):
                accepted = True
                break
            t *= cfg.shrink_factor
        if not accepted:
            converged = True
            break
        u = trial
        c, g, H = field.grad_hess(u)
        if t * dnorm < cfg.step_tol:
            converged = True
            break
    else:
        warnings.warn("gradient refinement hit max_iters", RuntimeWarning)
    if full_output:
        return GdResult(point=u, cost=float(c), iterations=it, converged=converged)
    return u


def grid_axes(area, spacing: float):
    """Grid anchored at the lower-left corner: ceil(W/spacing) points per axis."""
    xmin, ymin, xmax, ymax = area
    nx = int(math.ceil((xmax - xmin) / spacing - 1e-9))
    ny = int(math.ceil((ymax - ymin) / spacing - 1e-9))
    return xmin, ymin, max(nx, 1), max(ny, 1)


def egs_eval_count(area, wavelength: float, resolution_k: float) -> int:
    _, _, nx, ny = grid_axes(area, resolution_k * wavelength)
    return nx * ny


def grid_search(field: CostField, area, spacing: float):
    """Best grid point and the number of cost evaluations performed."""
    x0, y0, nx, ny = grid_axes(area, spacing)
    idx, _ = _kernels.grid_best(float(x0), float(y0), float(spacing), nx, ny,
                                field._apx, field._apy, field._tr, field._ti, field.k2)
    iy, ix = divmod(int(idx), nx)
    return np.array([x0 + ix * spacing, y0 + iy * spacing]), nx * ny


def egs_estimate(field: CostField, resolution_k: float = 0.1, area=None,
                 gd: GdConfig | None = None):
    """Exhaustive grid search at spacing k*lambda, then local refinement.

    Returns ``(estimate, eval_count)``.
    """
    if not 0 < resolution_k <= 1:
        raise ValueError("resolution_k must lie in (0, 1]")
    area = field.sc.area if area is None else area
    u0, count = grid_search(field, area, resolution_k * field.sc.wavelength)
    return refine_gd(u0, field, gd), count
