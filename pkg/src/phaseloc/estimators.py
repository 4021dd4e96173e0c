"""scikit-learn style front end.

``fit`` takes a :class:`~phaseloc.scenario.Scenario` and performs AP
selection; ``predict`` maps rows of complex received samples (one column
per AP) to 2D position estimates.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .channel import Observation
from .pipeline import PipelineConfig, egs_report, polo1_estimate, polo2_estimate
from .scenario import Scenario
from .selection import select_polo2, select_strategy1, select_strategy2


def check_scenario(sc) -> Scenario:
    if not isinstance(sc, Scenario):
        raise TypeError(f"expected a Scenario, got {type(sc).__name__}")
    return sc


def check_samples(X, n_aps: int) -> np.ndarray:
    """Validate a (n_snapshots, n_aps) array of complex samples."""
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"samples must be 2D (n_snapshots, n_aps), got shape {X.shape}")
    if X.shape[1] != n_aps:
        raise ValueError(f"expected {n_aps} samples per snapshot, got {X.shape[1]}")
    if X.shape[0] == 0:
        raise ValueError("no snapshots given")
    X = X.astype(complex, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("samples contain NaN or inf")
    return X


def check_positions(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (n, 2):
        raise ValueError(f"positions must have shape ({n}, 2), got {y.shape}")
    return y


class PhaseLocalizer(BaseEstimator):
    """Phase-only UE localization with candidate pruning.

    Parameters
    ----------
    method : {"polo1", "polo2", "egs"}
    strategy : {"s1", "s2"}
        AP-triplet selection rule for ``polo1``.
    eps_deg, gamma, coverage_threshold, selection_grid_res
        Selection parameters; ``coverage_threshold=None`` means one wavelength.
    step2 : bool
        Refine high-error candidates (``polo2`` only).
    high_error_tol_deg : float
        Angular tolerance of the high-error test.
    resolution_k : float
        EGS grid spacing in wavelengths.
    admission_margin : float
        How far outside the area (meters) candidates are kept.
    """

    def __init__(self, method="polo2", strategy="s2", eps_deg=10.0, gamma=15.0,
                 coverage_threshold=None, selection_grid_res=0.5, step2=True,
                 high_error_tol_deg=3.0, resolution_k=0.1, admission_margin=2.0):
        self.method = method
        self.strategy = strategy
        self.eps_deg = eps_deg
        self.gamma = gamma
        self.coverage_threshold = coverage_threshold
        self.selection_grid_res = selection_grid_res
        self.step2 = step2
        self.high_error_tol_deg = high_error_tol_deg
        self.resolution_k = resolution_k
        self.admission_margin = admission_margin

    def _config(self) -> PipelineConfig:
        return PipelineConfig(admission_margin=self.admission_margin,
                              high_error_tol_deg=self.high_error_tol_deg, step2=self.step2)

    def fit(self, X, y=None):
        """Select APs for the scenario ``X``; ``y`` is ignored."""
        sc = check_scenario(X)
        if self.method == "polo1":
            if self.strategy == "s1":
                choice = select_strategy1(sc)
            elif self.strategy == "s2":
                choice = select_strategy2(sc, self.eps_deg, self.gamma, self.coverage_threshold,
                                          self.selection_grid_res)
            else:
                raise ValueError("strategy must be 's1' or 's2'")
        elif self.method == "polo2":
            choice = select_polo2(sc, self.gamma)
        elif self.method == "egs":
            if not 0 < self.resolution_k <= 1:
                raise ValueError("resolution_k must lie in (0, 1]")
            choice = None
        else:
            raise ValueError("method must be 'polo1', 'polo2' or 'egs'")
        self.scenario_ = sc
        self.choice_ = choice
        self.n_aps_ = sc.n_aps
        self.config_ = self._config()
        return self

    def predict_reports(self, X) -> list:
        check_is_fitted(self, "scenario_")
        X = check_samples(X, self.n_aps_)
        sc, cfg = self.scenario_, self.config_
        out = []
        for row in X:
            obs = Observation.from_samples(row)
            if self.method == "polo1":
                out.append(polo1_estimate(obs, self.choice_, sc, cfg))
            elif self.method == "polo2":
                out.append(polo2_estimate(obs, self.choice_, sc, cfg))
            else:
                out.append(egs_report(obs, sc, self.resolution_k, cfg=cfg))
        return out

    def predict(self, X) -> np.ndarray:
        """Position estimates, shape (n_snapshots, 2)."""
        return np.array([r.estimate for r in self.predict_reports(X)]).reshape(-1, 2)

    def score(self, X, y) -> float:
        """Negative RMSE in meters (higher is better)."""
        pred = self.predict(X)
        y = check_positions(y, len(pred))
        return -float(np.sqrt(np.mean(np.sum((pred - y) ** 2, axis=1))))
