"""Monte Carlo experiments, CSV export and heatmap rendering."""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .channel import observe
from .fim import efim_general, efim_quadruplet_ref, efim_subset, efim_two_pairs, peb_from_matrices
from .mle import CostField, egs_eval_count
from .pipeline import PipelineConfig, egs_report, polo1_estimate, polo2_estimate
from .scenario import Scenario, SeededRng
from .selection import (QuadChoice, TripletChoice, coverage_points, polo2_scores, select_polo2,
                        select_strategy1, select_strategy2)

METHODS = ("polo1-s1", "polo1-s2", "polo2", "polo2-step1", "egs")
ALIASES = {"polo1": "polo1-s2", "s1": "polo1-s1", "s2": "polo1-s2"}

# stream tags keep experiment families from sharing noise draws
_STREAM_MAP = 1
_STREAM_POWER = 2
_STREAM_TRADEOFF = 3
_STREAM_SINGLE = 4


@dataclass(frozen=True)
class Method:
    """A named estimator bound to its AP subset; picklable for worker processes."""

    name: str
    choice: TripletChoice | QuadChoice | None = None
    cfg: PipelineConfig = field(default_factory=PipelineConfig)
    resolution_k: float = 0.1
    area: tuple | None = None  # EGS search area; None means the scenario area

    def run(self, obs, sc: Scenario):
        if self.name.startswith("polo1"):
            rep = polo1_estimate(obs, self.choice, sc, self.cfg)
        elif self.name == "polo2":
            rep = polo2_estimate(obs, self.choice, sc, self.cfg, step2=True)
        elif self.name == "polo2-step1":
            rep = polo2_estimate(obs, self.choice, sc, self.cfg, step2=False)
        elif self.name == "egs":
            rep = egs_report(obs, sc, self.resolution_k, self.area, self.cfg)
        else:
            raise ValueError(f"unknown method {self.name!r}")
        rep.method = self.name
        return rep

    @property
    def subset(self) -> tuple:
        return () if self.choice is None else tuple(self.choice.indices)


def make_method(sc: Scenario, name: str, selection: dict | None = None,
                cfg: PipelineConfig | None = None, **kw) -> Method:
    """Resolve a method name and run the matching AP selection."""
    name = ALIASES.get(name, name)
    if name not in METHODS:
        raise ValueError(f"method must be one of {METHODS + tuple(ALIASES)}")
    sel = dict(selection or {})
    cfg = cfg or PipelineConfig()
    if name == "polo1-s1":
        choice = select_strategy1(sc)
    elif name == "polo1-s2":
        choice = select_strategy2(sc, **{k: sel[k] for k in ("eps_deg", "gamma", "threshold", "grid_res") if k in sel})
    elif name.startswith("polo2"):
        choice = select_polo2(sc, **{k: sel[k] for k in ("gamma",) if k in sel})
    else:
        choice = None
    return Method(name, choice, cfg, **kw)


@dataclass
class MapResult:
    grid: np.ndarray  # (n, 2) cell centers, meters
    values: np.ndarray  # (n,) meters, +inf allowed
    meta: dict

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float).reshape(-1, 2)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(self.grid) != len(self.values):
            raise ValueError("grid and values must have the same length")

    def coverage(self, threshold: float) -> float:
        return float(np.mean(self.values < threshold))


def _run_tasks(fn, tasks, threads: int):
    """Map ``fn`` over ``tasks`` in order, optionally in worker processes."""
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, tasks, chunksize=chunk))


def _cell_sq_errors(task):
    sc, method, u, seed, cell, trials, noiseless = task
    sq = 0.0
    for t in range(trials):
        rng = None if noiseless else SeededRng(seed, (_STREAM_MAP, cell, t))
        obs = observe(u, sc, rng)
        est = method.run(obs, sc).estimate
        sq += float(np.sum((est - u) ** 2))
    return sq


def rmse_map(sc: Scenario, method: Method, ue_grid_res: float = 0.25, trials: int = 20,
             seed: int = 0, threads: int = 1, noiseless: bool = False, area=None) -> MapResult:
    """Per-cell RMSE over ``trials`` independent noisy snapshots."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    grid = coverage_points(sc.area if area is None else area, ue_grid_res, sc)
    tasks = [(sc, method, u, seed, i, trials, noiseless) for i, u in enumerate(grid)]
    sq = np.array(_run_tasks(_cell_sq_errors, tasks, threads))
    meta = {"kind": "rmse", "scenario": sc.digest(), "method": method.name,
            "subset": list(method.subset), "trials": trials, "seed": seed,
            "ue_grid_res": ue_grid_res, "noiseless": noiseless}
    return MapResult(grid, np.sqrt(sq / trials), meta)


PEB_VARIANTS = ("triplet", "two_pairs", "quad_ref", "full")


def peb_values(points, sc: Scenario, variant: str, subset=()) -> np.ndarray:
    subset = [int(i) for i in subset]
    if variant == "triplet":
        if len(subset) != 3:
            raise ValueError("triplet variant needs 3 APs")
        J = efim_subset(points, subset, sc)
    elif variant == "two_pairs":
        if len(subset) != 4:
            raise ValueError("two_pairs variant needs 4 APs (pair1 then pair2)")
        J = efim_two_pairs(points, subset[:2], subset[2:], sc)
    elif variant == "quad_ref":
        if len(subset) != 4:
            raise ValueError("quad_ref variant needs 4 APs")
        J = efim_quadruplet_ref(points, subset, sc)
    elif variant == "full":
        J = efim_general(points, range(sc.n_aps), sc)
    else:
        raise ValueError(f"variant must be one of {PEB_VARIANTS}")
    return peb_from_matrices(J)


def peb_map(sc: Scenario, variant: str, subset=(), ue_grid_res: float = 0.25, area=None) -> MapResult:
    grid = coverage_points(sc.area if area is None else area, ue_grid_res, sc)
    values = peb_values(grid, sc, variant, subset)
    meta = {"kind": "peb", "scenario": sc.digest(), "variant": variant,
            "subset": [int(i) for i in subset], "ue_grid_res": ue_grid_res}
    return MapResult(grid, values, meta)


def coverage_cdf(m: MapResult):
    """Empirical CDF over the map; +inf cells stay in the denominator."""
    if len(m.values) == 0:
        raise ValueError("empty map")
    finite = np.sort(m.values[np.isfinite(m.values)])
    n = len(m.values)
    thresholds, counts = np.unique(finite, return_counts=True)
    frac = np.cumsum(counts) / n
    return list(zip(thresholds.tolist(), frac.tolist()))


def _power_task(task):
    sc, method, u, seed, p_idx, trials = task
    sq = 0.0
    for t in range(trials):
        obs = observe(u, sc, SeededRng(seed, (_STREAM_POWER, p_idx, t)))
        sq += float(np.sum((method.run(obs, sc).estimate - u) ** 2))
    return sq


def rmse_vs_power(sc: Scenario, methods, powers_dbm, ue, trials: int = 200, seed: int = 0,
                  threads: int = 1, min_trials: int = 50):
    """RMSE of each method at each transmit power, with the all-AP PEB."""
    if trials < min_trials:
        raise ValueError(f"trials must be >= {min_trials}")
    ue = np.asarray(ue, dtype=float)
    rows = []
    for p_idx, p in enumerate(powers_dbm):
        sp = sc.with_power_dbm(float(p))
        bound = float(peb_values(ue[None], sp, "full")[0])
        tasks = [(sp, m, ue, seed, p_idx, trials) for m in methods]
        for m, sq in zip(methods, _run_tasks(_power_task, tasks, threads)):
            rows.append({"method": m.name, "power_dbm": float(p),
                         "rmse_m": math.sqrt(sq / trials), "peb_m": bound})
    return rows


# -- coverage / complexity trade-off -------------------------------------------

@dataclass(frozen=True)
class TradeoffPoint:
    subset: tuple
    coverage: float
    norm_runtime: float
    norm_evals: float
    mean_intra: float
    inter_dist: float | None = None
    eval_bound: int = 0

    def __post_init__(self):
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")
        if not self.norm_evals > 0:
            raise ValueError("norm_evals must be positive")


def tradeoff_subsets(sc: Scenario, method: str, gamma: float = 15.0):
    """Subsets scored in the trade-off study, in lexicographic order."""
    P = sc.ap_positions
    out = []
    if method == "polo1":
        for tri in combinations(range(sc.n_aps), 3):
            best = None
            for r in tri:
                s1, s2 = (m for m in tri if m != r)
                mean_intra = 0.5 * (np.hypot(*(P[r] - P[s1])) + np.hypot(*(P[r] - P[s2])))
                if best is None or mean_intra < best[0]:
                    best = (float(mean_intra), TripletChoice(r, (s1, s2)))
            if best[0] <= gamma:
                out.append(best)
    elif method == "polo2":
        for q in polo2_scores(sc):
            if q.intra_mean <= gamma:
                out.append((q.intra_mean, q))
    else:
        raise ValueError("method must be polo1 or polo2")
    return out


def _tradeoff_task(task):
    sc, method, choice, samples, seed, cfg = task
    evals = 0
    runtime = 0.0
    for j, u in enumerate(samples):
        obs = observe(u, sc, SeededRng(seed, (_STREAM_TRADEOFF, j)))
        field_ = CostField(obs, sc)
        if method == "polo1":
            rep = polo1_estimate(obs, choice, sc, cfg, field_=field_)
        else:
            rep = polo2_estimate(obs, choice, sc, cfg, field_=field_)
        evals += rep.ml_evals
        runtime += rep.wall_time
    return evals / len(samples), runtime / len(samples), rep.eval_bound


def egs_baseline(sc: Scenario, resolution_k: float = 0.1, seed: int = 0, repeats: int = 3):
    """EGS eval count and median wall time on this machine."""
    u = np.array([0.5 * (sc.area[0] + sc.area[2]), 0.5 * (sc.area[1] + sc.area[3])]) + 0.123
    obs = observe(u, sc, SeededRng(seed, (_STREAM_SINGLE, 0)))
    egs_report(obs, sc, resolution_k)  # compile
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        egs_report(obs, sc, resolution_k)
        times.append(time.perf_counter() - t0)
    return egs_eval_count(sc.area, sc.wavelength, resolution_k), float(np.median(times))


def tradeoff_study(sc_grid: Scenario, method: str, gamma: float = 15.0, seed: int = 0,
                   coverage_res: float = 0.5, sample_res: float = 1.0, resolution_k: float = 0.1,
                   threads: int = 1, cfg: PipelineConfig | None = None):
    """Coverage against normalized complexity for every admissible subset.

    Coverage is the fraction of ``coverage_res`` cells where the subset's
    PEB is below one wavelength (triplet bound for ``polo1``, four-AP
    referenced bound for ``polo2``). The default 0.5 m grid contains the
    2.5 m AP sites as cell centers, so cells on AP-pair lines are sampled.
    Eval counts and runtimes are averaged over noisy estimates at
    ``sample_res`` cell centers and normalized by EGS.
    """
    cfg = cfg or PipelineConfig()
    subsets = tradeoff_subsets(sc_grid, method, gamma)
    if not subsets:
        raise ValueError("no subset satisfies the intra-distance limit")
    cov_pts = coverage_points(sc_grid.area, coverage_res, sc_grid)
    samples = coverage_points(sc_grid.area, sample_res, sc_grid)
    egs_count, egs_time = egs_baseline(sc_grid, resolution_k, seed)
    tasks = [(sc_grid, method, choice, samples, seed, cfg) for _, choice in subsets]
    stats = _run_tasks(_tradeoff_task, tasks, threads)
    points = []
    for (mean_intra, choice), (evals, runtime, bound) in zip(subsets, stats):
        if method == "polo1":
            peb = peb_values(cov_pts, sc_grid, "triplet", choice.indices)
            inter = None
        else:
            peb = peb_values(cov_pts, sc_grid, "quad_ref", choice.indices)
            inter = choice.inter_dist
        points.append(TradeoffPoint(
            subset=tuple(int(i) for i in choice.indices),
            coverage=float(np.mean(peb < sc_grid.wavelength)),
            norm_runtime=runtime / egs_time,
            norm_evals=max(evals, 1e-12) / egs_count,
            mean_intra=mean_intra, inter_dist=inter, eval_bound=int(bound)))
    return points


# -- output --------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(rows, path, columns=None) -> Path:
    """Write dict rows with a fixed header order; floats use repr for stability."""
    rows = list(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    return path


def write_map_csv(m: MapResult, path) -> Path:
    col = "rmse_m" if m.meta.get("kind") == "rmse" else "peb_m"
    rows = [{"x_m": float(x), "y_m": float(y), col: float(v)} for (x, y), v in zip(m.grid, m.values)]
    out = write_csv(rows, path, ["x_m", "y_m", col])
    meta_path = Path(path).with_suffix(".meta.json")
    meta_path.write_text(json.dumps(m.meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return out


def read_map_csv(path) -> MapResult:
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        data = np.array([[float(v) for v in row] for row in rd]).reshape(-1, 3)
    meta_path = Path(path).with_suffix(".meta.json")
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    meta.setdefault("kind", "rmse" if header[2] == "rmse_m" else "peb")
    return MapResult(data[:, :2], data[:, 2], meta)


def tradeoff_rows(points):
    for p in points:
        yield {"subset": "-".join(str(i) for i in p.subset), "mean_intra_m": p.mean_intra,
               "inter_dist_m": "" if p.inter_dist is None else p.inter_dist,
               "coverage": p.coverage, "norm_evals": p.norm_evals, "eval_bound": p.eval_bound,
               "norm_runtime": p.norm_runtime}


# -- heatmaps ------------------------------------------------------------------

def _raster(m: MapResult):
    xs = np.unique(np.round(m.grid[:, 0], 9))
    ys = np.unique(np.round(m.grid[:, 1], 9))
    img = np.full((len(ys), len(xs)), np.nan)
    ix = np.searchsorted(xs, np.round(m.grid[:, 0], 9))
    iy = np.searchsorted(ys, np.round(m.grid[:, 1], 9))
    img[len(ys) - 1 - iy, ix] = m.values  # north up
    return img


def color_indices(values, color_scale: str = "log", n_colors: int = 256) -> np.ndarray:
    """Map values to palette indices; +inf gets the top color, NaN stays -1."""
    v = np.asarray(values, dtype=float)
    out = np.full(v.shape, -1, dtype=int)
    finite = np.isfinite(v)
    if color_scale == "log":
        finite &= v > 0
        t = np.where(finite, np.log10(np.where(finite, v, 1.0)), 0.0)
    elif color_scale == "linear":
        t = np.where(finite, v, 0.0)
    else:
        raise ValueError("color_scale must be 'log' or 'linear'")
    if finite.any():
        lo, hi = t[finite].min(), t[finite].max()
        span = hi - lo if hi > lo else 1.0
        out[finite] = np.clip(((t[finite] - lo) / span * (n_colors - 1)).round().astype(int), 0, n_colors - 1)
    out[np.isposinf(v)] = n_colors - 1
    return out


def _palette(n: int = 256) -> np.ndarray:
    from matplotlib import colormaps

    return (colormaps["viridis"](np.linspace(0, 1, n))[:, :3] * 255).round().astype(np.uint8)


def render_heatmap(m: MapResult, out_path, color_scale: str = "log", cell_px: int = 8) -> Path:
    """Write the map as PNG or SVG (chosen by extension); bytes are deterministic."""
    if len(m.values) == 0:
        raise ValueError("empty map")
    out_path = Path(out_path)
    idx = color_indices(_raster(m), color_scale)
    pal = _palette()
    rgb = np.where(idx[..., None] >= 0, pal[np.maximum(idx, 0)], np.uint8(255)).astype(np.uint8)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if out_path.suffix.lower() == ".svg":
        h, w = idx.shape
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * cell_px}" height="{h * cell_px}" '
                 f'shape-rendering="crispEdges">']
        for r in range(h):
            for c in range(w):
                red, green, blue = (int(x) for x in rgb[r, c])
                parts.append(f'<rect x="{c * cell_px}" y="{r * cell_px}" width="{cell_px}" height="{cell_px}" '
                             f'fill="#{red:02x}{green:02x}{blue:02x}"/>')
        parts.append("</svg>\n")
        out_path.write_text("\n".join(parts), encoding="utf-8")
    else:
        from PIL import Image

        big = np.repeat(np.repeat(rgb, cell_px, axis=0), cell_px, axis=1)
        Image.fromarray(big, mode="RGB").save(out_path, format="PNG", optimize=False)
    return out_path
