"""Physical constants, AP geometry and reproducible randomness."""
from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BOLTZMANN = 1.380649e-23  # J/K
SPEED_OF_LIGHT = 299_792_458.0  # m/s


def dbm_to_watts(p_dbm):
    return 1e-3 * 10.0 ** (np.asarray(p_dbm, dtype=float) / 10.0)


def watts_to_dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=float) / 1e-3)


def thermal_noise_power(bandwidth: float, temp: float) -> float:
    """Thermal noise power k_B * T * W in watts."""
    if not bandwidth > 0 or not temp > 0:
        raise ValueError("bandwidth and temperature must be positive")
    return BOLTZMANN * temp * bandwidth


@dataclass(frozen=True)
class SeededRng:
    """Key for one independent random stream.

    Streams with the same ``(seed, stream_id)`` always produce the same
    draws, regardless of which worker creates them or when.
    """

    seed: int
    stream_id: int | tuple[int, ...] = 0

    def generator(self) -> np.random.Generator:
        key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=tuple(int(k) for k in key))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, *ids: int) -> "SeededRng":
        key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        return SeededRng(self.seed, tuple(key) + tuple(int(i) for i in ids))


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything the signal model needs, in SI units.

    ``area`` is ``(xmin, ymin, xmax, ymax)`` in meters.
    """

    ap_positions: np.ndarray
    area: tuple[float, float, float, float]
    carrier_freq: float = 3.5e9
    tx_power: float = float(dbm_to_watts(5.0))
    phase_offset: float = math.radians(10.0)
    pilot: complex = 1.0 + 0.0j
    tx_gain: float = 1.0
    rx_gain: float = 1.0
    noise_power: float = field(default_factory=lambda: thermal_noise_power(120e3, 290.0))
    bandwidth: float = 120e3
    noise_temp: float = 290.0

    def __post_init__(self):
        aps = np.array(self.ap_positions, dtype=float).reshape(-1, 2)
        aps.setflags(write=False)
        object.__setattr__(self, "ap_positions", aps)
        object.__setattr__(self, "area", tuple(float(a) for a in self.area))
        object.__setattr__(self, "pilot", complex(self.pilot))
        xmin, ymin, xmax, ymax = self.area
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f"degenerate area {self.area}")
        if len(aps) < 3:
            raise ValueError("at least 3 APs are required")
        if abs(abs(self.pilot) - 1.0) > 1e-12:
            raise ValueError("pilot must have unit modulus")
        if not (self.carrier_freq > 0 and self.tx_power > 0 and self.noise_power > 0):
            raise ValueError("carrier_freq, tx_power and noise_power must be positive")
        inside = ((aps[:, 0] >= xmin) & (aps[:, 0] <= xmax)
                  & (aps[:, 1] >= ymin) & (aps[:, 1] <= ymax))
        if not inside.all():
            raise ValueError("all APs must lie inside the area")
        diff = aps[:, None, :] - aps[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        np.fill_diagonal(dist, np.inf)
        if dist.min() <= 0:
            raise ValueError("AP positions must be pairwise distinct")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def n_aps(self) -> int:
        return len(self.ap_positions)

    @property
    def area_size(self) -> tuple[float, float]:
        xmin, ymin, xmax, ymax = self.area
        return xmax - xmin, ymax - ymin

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def with_power_dbm(self, p_dbm: float) -> "Scenario":
        return self.replace(tx_power=float(dbm_to_watts(p_dbm)))

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        xmin, ymin, xmax, ymax = self.area
        return ((pts[:, 0] >= xmin - margin) & (pts[:, 0] <= xmax + margin)
                & (pts[:, 1] >= ymin - margin) & (pts[:, 1] <= ymax + margin))

    def digest(self) -> str:
        """Short stable hash of every field, used to tag experiment outputs."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.ap_positions).tobytes())
        scalars = [*self.area, self.carrier_freq, self.tx_power, self.phase_offset,
                   self.pilot.real, self.pilot.imag, self.tx_gain, self.rx_gain,
                   self.noise_power, self.bandwidth, self.noise_temp]
        h.update(np.asarray(scalars, dtype=float).tobytes())
        return h.hexdigest()[:16]


def random_layout(n_aps: int, area, rng: np.random.Generator) -> np.ndarray:
    xmin, ymin, xmax, ymax = area
    u = rng.random((n_aps, 2))
    return np.column_stack([xmin + u[:, 0] * (xmax - xmin), ymin + u[:, 1] * (ymax - ymin)])


def grid_layout(area, spacing: float) -> np.ndarray:
    """Centers of the ``spacing`` x ``spacing`` squares tiling ``area``."""
    xmin, ymin, xmax, ymax = area
    nx = int(round((xmax - xmin) / spacing))
    ny = int(round((ymax - ymin) / spacing))
    xs = xmin + spacing * (np.arange(nx) + 0.5)
    ys = ymin + spacing * (np.arange(ny) + 0.5)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


DEFAULT_AREA = (-10.0, -10.0, 10.0, 10.0)


def default_scenario(seed: int = 1, n_aps: int = 20, area=DEFAULT_AREA) -> Scenario:
    """20 random APs in a 20 m x 20 m square, 3.5 GHz, 5 dBm, 10 deg offset."""
    aps = random_layout(n_aps, area, SeededRng(seed, 0).generator())
    return Scenario(
        ap_positions=aps,
        area=area,
        carrier_freq=3.5e9,
        tx_power=float(dbm_to_watts(5.0)),
        phase_offset=math.radians(10.0),
        pilot=1.0,
        tx_gain=1.0,
        rx_gain=1.0,
        noise_power=thermal_noise_power(120e3, 290.0),
        bandwidth=120e3,
        noise_temp=290.0,
    )


def grid_scenario(area=(0.0, 0.0, 10.0, 10.0), spacing: float = 2.5, **kwargs) -> Scenario:
    """Scenario whose APs sit at every cell center of a regular site grid."""
    base = default_scenario(seed=0, area=area)
    return base.replace(ap_positions=grid_layout(area, spacing), **kwargs)


# -- config files -----------------------------------------------------------

def _load_toml(path: Path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def scenario_from_config(cfg: dict, seed: int | None = None) -> Scenario:
    """Build a scenario from a parsed config mapping.

    Powers are given in dBm and angles in degrees; see ``README.md`` for
    the full list of keys.
    """
    sc = dict(cfg.get("scenario", cfg))
    if seed is None:
        seed = int(cfg.get("seed", sc.get("seed", 1)))
    area = tuple(sc.get("area", DEFAULT_AREA))
    aps_cfg = sc.get("aps", {})
    if isinstance(aps_cfg, list):
        aps_cfg = {"positions": aps_cfg}
    if "positions" in aps_cfg:
        aps = np.asarray(aps_cfg["positions"], dtype=float)
    elif "grid_spacing" in aps_cfg:
        aps = grid_layout(area, float(aps_cfg["grid_spacing"]))
    else:
        aps = random_layout(int(aps_cfg.get("count", 20)), area, SeededRng(seed, 0).generator())
    bandwidth = float(sc.get("bandwidth_hz", 120e3))
    noise_temp = float(sc.get("noise_temp_k", 290.0))
    if "noise_power_dbm" in sc:
        noise_power = float(dbm_to_watts(sc["noise_power_dbm"]))
    else:
        noise_power = thermal_noise_power(bandwidth, noise_temp)
    pilot = sc.get("pilot", [1.0, 0.0])
    return Scenario(
        ap_positions=aps,
        area=area,
        carrier_freq=float(sc.get("carrier_freq_hz", 3.5e9)),
        tx_power=float(dbm_to_watts(sc.get("tx_power_dbm", 5.0))),
        phase_offset=math.radians(float(sc.get("phase_offset_deg", 10.0))),
        pilot=complex(pilot[0], pilot[1]) if isinstance(pilot, (list, tuple)) else complex(pilot),
        tx_gain=float(sc.get("tx_gain", 1.0)),
        rx_gain=float(sc.get("rx_gain", 1.0)),
        noise_power=noise_power,
        bandwidth=bandwidth,
        noise_temp=noise_temp,
    )


def load_config(path) -> dict:
    return _load_toml(Path(path))
