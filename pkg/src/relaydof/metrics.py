"""Closed-form DoF expressions, the AF/DF comparison and slope fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


def _check_sizes(K: int, L: int) -> None:
    if K < 2 or L < K:
        raise ValueError(f"need L >= K >= 2, got K={K}, L={L}")


def dof_formula_af(K: int, L: int) -> Fraction:
    """Achievable DoF of AF cancellation plus alignment in a K-L-K network."""
    _check_sizes(K, L)
    return min(Fraction(K), Fraction(K, 2) + Fraction(L, 2 * (K - 1)))


def dof_formula_df(K: int, L: int) -> Fraction:
    """DoF of the decode-and-forward X-network baseline, ``KL/(K+L-1)``."""
    if K < 2 or L < 1:
        raise ValueError(f"need K >= 2 and L >= 1, got K={K}, L={L}")
    return Fraction(K * L, K + L - 1)


def af_df_crossover(K: int) -> tuple[float, float] | None:
    """Open interval of relay counts ``L`` where DF beats AF, if any.

    ``None`` for ``K <= 5``. Endpoints are
    ``(K-1)(K-1 -/+ sqrt(K(K-6)+1)) / 2``.
    """
    if K < 2:
        raise ValueError(f"need K >= 2, got {K}")
    if K <= 5:
        return None
    root = math.sqrt(K * (K - 6) + 1)
    return ((K - 1) * (K - 1 - root) / 2, (K - 1) * (K - 1 + root) / 2)


def cutset_dof_upper(K: int) -> int:
    if K < 1:
        raise ValueError(f"need K >= 1, got {K}")
    return K


def db_to_linear(db) -> np.ndarray:
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass
class RateReport:
    """Per-user rate samples over an SNR grid.

    ``samples`` has shape ``(successful_trials, len(snr_db), K)`` in bits
    per channel use. ``failures`` counts trials dropped before any rate
    was recorded.
    """

    scheme: str
    K: int
    L: int
    snr_db: np.ndarray
    samples: np.ndarray
    trials: int
    failures: int = 0
    seed: int = 0
    slope: float = float("nan")
    slope_hw: float = float("nan")
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.snr_db = np.asarray(self.snr_db, dtype=float)
        self.samples = np.asarray(self.samples, dtype=float).reshape(
            -1, self.snr_db.size, self.K)
        if np.any(self.samples < 0):
            raise ValueError("rates must be nonnegative")

    @property
    def P(self) -> np.ndarray:
        return db_to_linear(self.snr_db)

    @property
    def user_rates(self) -> np.ndarray:
        """Mean rate per (SNR point, user)."""
        if self.samples.shape[0] == 0:
            return np.full((self.snr_db.size, self.K), np.nan)
        return self.samples.mean(axis=0)

    @property
    def sum_rate(self) -> np.ndarray:
        return self.user_rates.sum(axis=1)

    def fit(self, n_boot: int = 200, seed: int = 0) -> "RateReport":
        self.slope, self.slope_hw = estimate_dof_slope(self, n_boot=n_boot, seed=seed)
        return self


def fit_slope(snr_db, sum_rates) -> float:
    """Least-squares slope of sum rate against ``log2 P``."""
    x = np.log2(db_to_linear(snr_db))
    y = np.asarray(sum_rates, dtype=float)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def estimate_dof_slope(report: RateReport, n_boot: int = 200,
                       seed: int = 0) -> tuple[float, float]:
    """DoF estimate from a rate curve, with a bootstrap 95% half-width.

    The half-width comes from resampling trials with replacement; it is
    zero when there is a single trial.
    """
    snr = np.asarray(report.snr_db, dtype=float)
    if snr.size < 3 or np.ptp(snr) < 20:
        raise ValueError(
            f"slope fit needs >= 3 SNR points spanning >= 20 dB, got {snr.tolist()}")
    n = report.samples.shape[0]
    if n == 0:
        raise ValueError("report holds no successful trials")
    per_trial = report.samples.sum(axis=2)
    slope = fit_slope(snr, per_trial.mean(axis=0))
    if n == 1:
        return slope, 0.0
    rng = np.random.default_rng(seed)
    boots = np.array([
        fit_slope(snr, per_trial[rng.integers(0, n, n)].mean(axis=0))
        for _ in range(n_boot)
    ])
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return slope, float((hi - lo) / 2)
