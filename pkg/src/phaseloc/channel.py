"""Received-signal synthesis for a single-antenna UE and single-antenna APs."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .scenario import Scenario, SeededRng

TWO_PI = 2.0 * math.pi


def wrap_phase(x):
    """Map angles into [0, 2*pi)."""
    w = np.mod(x, TWO_PI)
    # np.mod can return exactly 2*pi for tiny negative inputs
    return np.where(w >= TWO_PI, 0.0, w)


def distances(u, sc: Scenario, subset=None) -> np.ndarray:
    """Distances from point(s) ``u`` to the APs, shape ``(..., M)``."""
    u = np.asarray(u, dtype=float)
    aps = sc.ap_positions if subset is None else sc.ap_positions[list(subset)]
    diff = u[..., None, :] - aps
    return np.hypot(diff[..., 0], diff[..., 1])


def path_loss(dist, sc: Scenario):
    """Free-space amplitude gain sqrt(Gtx*Grx) * lambda / (4*pi*d)."""
    dist = np.asarray(dist, dtype=float)
    if np.any(dist <= 0):
        raise ValueError("distance must be positive (UE co-located with an AP)")
    out = math.sqrt(sc.tx_gain * sc.rx_gain) * sc.wavelength / (4.0 * math.pi * dist)
    return float(out) if out.ndim == 0 else out


def noiseless_samples(u, sc: Scenario, phase_offset: float | None = None) -> np.ndarray:
    """Noise-free received samples at every AP for a UE at ``u``."""
    d = distances(u, sc)
    if np.any(d <= 0):
        raise ValueError("UE position coincides with an AP")
    phi = sc.phase_offset if phase_offset is None else phase_offset
    rho = path_loss(d, sc)
    return (math.sqrt(sc.tx_power) * rho * np.exp(-1j * TWO_PI * d / sc.wavelength)
            * np.exp(-1j * phi) * sc.pilot)


def noiseless_sample(m: int, u, sc: Scenario) -> complex:
    d = float(np.hypot(*(sc.ap_positions[m] - np.asarray(u, dtype=float))))
    if d <= 0:
        raise ValueError("UE position coincides with an AP")
    return complex(math.sqrt(sc.tx_power) * path_loss(d, sc)
                   * np.exp(-1j * TWO_PI * d / sc.wavelength)
                   * np.exp(-1j * sc.phase_offset) * sc.pilot)


@dataclass(frozen=True, eq=False)
class Observation:
    samples: np.ndarray
    phases: np.ndarray
    ue_truth: Optional[np.ndarray] = None

    @classmethod
    def from_samples(cls, samples, ue_truth=None) -> "Observation":
        y = np.asarray(samples, dtype=complex)
        truth = None if ue_truth is None else np.asarray(ue_truth, dtype=float)
        return cls(samples=y, phases=wrap_phase(np.angle(y)), ue_truth=truth)

    @property
    def n_aps(self) -> int:
        return len(self.samples)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["ap_index", "re", "im", "phase"])
            for m, (y, r) in enumerate(zip(self.samples, self.phases)):
                w.writerow([m, repr(float(y.real)), repr(float(y.imag)), repr(float(r))])


def complex_awgn(rng: np.random.Generator, variance: float, size) -> np.ndarray:
    """Circularly-symmetric complex Gaussian noise, variance/2 per component."""
    scale = math.sqrt(variance / 2.0)
    w = rng.standard_normal((2,) + tuple(np.atleast_1d(size)))
    return scale * (w[0] + 1j * w[1])


def observe(u, sc: Scenario, rng: SeededRng | np.random.Generator | None = None) -> Observation:
    """One noisy snapshot at every AP; ``rng=None`` gives the noise-free one."""
    u = np.asarray(u, dtype=float)
    mu = noiseless_samples(u, sc)
    if rng is None:
        return Observation.from_samples(mu, ue_truth=u)
    gen = rng.generator() if isinstance(rng, SeededRng) else rng
    y = mu + complex_awgn(gen, sc.noise_power, sc.n_aps)
    return Observation.from_samples(y, ue_truth=u)
