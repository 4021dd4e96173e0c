"""Fisher information and position error bounds for AP subsets.

All closed forms share one structure: with unit vectors v_m pointing from
the UE to AP m and path gains rho_m, the position block of the equivalent
Fisher information for a subset is

    K * sum_{m < m'} rho_m^2 rho_m'^2 (v_m - v_m')(v_m - v_m')^T,
    K = 8 pi^2 P / (sigma^2 lambda^2 sum_m rho_m^2).

Matrix-valued functions broadcast over leading axes of ``u``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .channel import path_loss
from .scenario import Scenario

EIG_RATIO_TOL = 1e-12


@dataclass(frozen=True)
class FisherResult:
    matrix: np.ndarray
    peb: float
    min_eig: float
    rank_deficient: bool

    @classmethod
    def from_matrix(cls, J) -> "FisherResult":
        J = np.asarray(J, dtype=float)
        eig = np.linalg.eigvalsh(0.5 * (J + J.T))
        lo, hi = float(eig[0]), float(eig[-1])
        deficient = hi <= 0 or lo <= EIG_RATIO_TOL * hi
        peb = math.inf if deficient else math.sqrt(float(np.sum(1.0 / eig)))
        return cls(J, peb, lo, deficient)


def _unit_and_gain(u, sc: Scenario, subset):
    u = np.asarray(u, dtype=float)
    aps = sc.ap_positions[list(subset)]
    diff = aps - u[..., None, :]
    d = np.hypot(diff[..., 0], diff[..., 1])
    if np.any(d <= 0):
        raise ValueError("UE coincides with an AP")
    return diff / d[..., None], path_loss(d, sc)


def full_fim(u, phi: float, rho, sc: Scenario, subset=None) -> np.ndarray:
    """FIM over (u_x, u_y, phi, rho_1..rho_K) for the APs in ``subset``.

    ``rho`` holds the path gains of the subset, in subset order. Built from
    the analytic derivatives of the noiseless samples.
    """
    subset = list(range(sc.n_aps)) if subset is None else list(subset)
    u = np.asarray(u, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (len(subset),):
        raise ValueError("rho must have one entry per AP in the subset")
    aps = sc.ap_positions[subset]
    diff = aps - u
    d = np.hypot(diff[:, 0], diff[:, 1])
    v = diff / d[:, None]
    k = 2.0 * math.pi / sc.wavelength
    mu = math.sqrt(sc.tx_power) * rho * np.exp(-1j * (k * d + phi)) * sc.pilot
    K = len(subset)
    D = np.zeros((K, K + 3), dtype=complex)
    D[:, 0:2] = (1j * k * mu)[:, None] * v
    D[:, 2] = -1j * mu
    D[np.arange(K), 3 + np.arange(K)] = mu / rho
    return (2.0 / sc.noise_power) * np.real(D.conj().T @ D)


def efim_position(J: np.ndarray) -> np.ndarray:
    """Schur complement of the nuisance block onto the first two parameters."""
    J = np.asarray(J, dtype=float)
    A, Bm, C = J[:2, :2], J[:2, 2:], J[2:, 2:]
    try:
        Cinv_Bt = np.linalg.solve(C, Bm.T)
    except np.linalg.LinAlgError:
        Cinv_Bt = np.linalg.pinv(C) @ Bm.T
    return A - Bm @ Cinv_Bt


def efim_subset(u, subset, sc: Scenario) -> np.ndarray:
    """Equivalent position FIM for any AP subset (pairwise-difference form)."""
    v, rho = _unit_and_gain(u, sc, subset)
    r2 = rho ** 2
    K = 8 * math.pi ** 2 * sc.tx_power / (sc.noise_power * sc.wavelength ** 2 * r2.sum(axis=-1))
    J = 0.0
    for i, j in combinations(range(len(subset)), 2):
        dv = v[..., i, :] - v[..., j, :]
        J = J + (r2[..., i] * r2[..., j])[..., None, None] * dv[..., :, None] * dv[..., None, :]
    return K[..., None, None] * J


def efim_triplet(u, triplet, sc: Scenario) -> np.ndarray:
    """Reference-centered form for three APs; equal to :func:`efim_subset`."""
    if len(triplet) != 3:
        raise ValueError("triplet needs three APs")
    return _reference_form(u, triplet, sc)


def efim_quadruplet_ref(u, quad, sc: Scenario) -> np.ndarray:
    """All four APs sharing a common reference."""
    if len(quad) != 4:
        raise ValueError("quadruplet needs four APs")
    return _reference_form(u, quad, sc)


def _reference_form(u, subset, sc):
    # K * sum_m rho_m^2 v_m (beta_m v_m - sum_{m' != m} rho_m'^2 v_m')^T
    v, rho = _unit_and_gain(u, sc, subset)
    r2 = rho ** 2
    tot = r2.sum(axis=-1)
    K = 8 * math.pi ** 2 * sc.tx_power / (sc.noise_power * sc.wavelength ** 2 * tot)
    weighted = (r2[..., None] * v).sum(axis=-2)
    J = 0.0
    for m in range(len(subset)):
        vm = v[..., m, :]
        beta = tot - r2[..., m]
        other = weighted - r2[..., m, None] * vm
        J = J + r2[..., m, None, None] * vm[..., :, None] * (beta[..., None] * vm - other)[..., None, :]
    return K[..., None, None] * J


def efim_pair(u, pair, sc: Scenario) -> np.ndarray:
    """One AP pair: rank one along v_a - v_b."""
    if len(pair) != 2:
        raise ValueError("pair needs two APs")
    return efim_subset(u, pair, sc)


def efim_two_pairs(u, pair1, pair2, sc: Scenario) -> np.ndarray:
    """Two disjoint pairs without a common reference: the pair FIMs add."""
    if set(pair1) & set(pair2):
        raise ValueError("pairs must be disjoint")
    return efim_pair(u, pair1, sc) + efim_pair(u, pair2, sc)


def efim_general(u, subset, sc: Scenario) -> np.ndarray:
    """Direct form sum(a_m v v^T) - (sum g_m v)(sum g_m v)^T."""
    v, rho = _unit_and_gain(u, sc, subset)
    r2 = rho ** 2
    c = 8 * math.pi ** 2 * sc.tx_power / (sc.noise_power * sc.wavelength ** 2)
    a = c * r2
    g = np.sqrt(c / r2.sum(axis=-1))[..., None] * r2
    s = (g[..., None] * v).sum(axis=-2)
    outer = (a[..., None, None] * v[..., :, None] * v[..., None, :]).sum(axis=-3)
    return outer - s[..., :, None] * s[..., None, :]


def peb_from_matrices(J) -> np.ndarray:
    """sqrt(trace(J^-1)) for stacked 2x2 matrices; inf where rank deficient."""
    J = np.asarray(J, dtype=float)
    a, b, c, d = J[..., 0, 0], J[..., 0, 1], J[..., 1, 0], J[..., 1, 1]
    tr = a + d
    det = a * d - b * c
    off = 0.5 * (b + c)
    disc = np.sqrt(np.maximum((0.5 * (a - d)) ** 2 + off ** 2, 0.0))
    hi = 0.5 * tr + disc
    lo = 0.5 * tr - disc
    bad = (hi <= 0) | (lo <= EIG_RATIO_TOL * hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        peb = np.sqrt(tr / det)
    return np.where(bad, np.inf, peb)


def peb_triplet(u, triplet, sc: Scenario) -> np.ndarray:
    """Triplet PEB from trace and determinant, centred on the first AP.

    With g_a = v_r - v_a and g_b = v_r - v_b the determinant is
    K^2 (g_a x g_b)^2 (w_ra w_rb + w_ra w_ab + w_rb w_ab), which has no
    cancellation near degenerate geometry, unlike inverting the 2x2 matrix.
    Vectorized over ``u``; inf where the FIM is rank deficient.
    """
    if len(triplet) != 3:
        raise ValueError("triplet needs three APs")
    v, rho = _unit_and_gain(u, sc, triplet)
    r2 = rho ** 2
    K = 8 * math.pi ** 2 * sc.tx_power / (sc.noise_power * sc.wavelength ** 2 * r2.sum(axis=-1))
    ga = v[..., 0, :] - v[..., 1, :]
    gb = v[..., 0, :] - v[..., 2, :]
    w_ra, w_rb, w_ab = r2[..., 0] * r2[..., 1], r2[..., 0] * r2[..., 2], r2[..., 1] * r2[..., 2]
    tr = K * (w_ra * (ga ** 2).sum(-1) + w_rb * (gb ** 2).sum(-1) + w_ab * ((gb - ga) ** 2).sum(-1))
    cross = ga[..., 0] * gb[..., 1] - ga[..., 1] * gb[..., 0]
    det = K ** 2 * cross ** 2 * (w_ra * w_rb + w_ra * w_ab + w_rb * w_ab)
    hi = 0.5 * tr + np.sqrt(np.maximum(0.25 * tr ** 2 - det, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(tr / det)
        bad = ~(det / hi > EIG_RATIO_TOL * hi)
    return np.where(bad, np.inf, out)


def peb(u, subset, sc: Scenario) -> float:
    return FisherResult.from_matrix(efim_subset(u, subset, sc)).peb


def high_error_membership(u, pair1, pair2, sc: Scenario, tol_deg: float = 3.0) -> np.ndarray:
    """True where the two-pair FIM is close to rank one.

    That happens when either pair's unit vectors (nearly) align, or when the
    two difference vectors are (nearly) parallel. Vectorized over ``u``.
    """
    u = np.asarray(u, dtype=float)
    v, _ = _unit_and_gain(u, sc, list(pair1) + list(pair2))
    cos_tol = math.cos(math.radians(tol_deg))

    def aligned(x, y):
        nx = np.linalg.norm(x, axis=-1)
        ny = np.linalg.norm(y, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            cosang = np.abs(np.sum(x * y, axis=-1)) / (nx * ny)
        return np.where((nx == 0) | (ny == 0), True, cosang >= cos_tol)

    v1, v2, v3, v4 = (v[..., i, :] for i in range(4))
    same_dir = lambda x, y: np.sum(x * y, axis=-1) >= cos_tol  # noqa: E731
    return same_dir(v1, v2) | same_dir(v3, v4) | aligned(v1 - v2, v3 - v4)
