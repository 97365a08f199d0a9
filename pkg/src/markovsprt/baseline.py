"""Fixed-length two-stage identity tester, calibrated by simulation.

Stage one compares the empirical state frequencies with the stationary law
of the null chain; only if that passes, stage two compares each
sufficiently visited empirical transition row with the null row. Both use
total-variation statistics whose thresholds are the ``1 - alpha/2`` null
quantiles.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .chain import Trajectory, derive_seed, sample_trajectories, stationary_distribution
from .errors import LengthMismatchError

ACCEPT = "accept"
REJECT = "reject"


@dataclass(frozen=True)
class FixedTestConfig:
    n: int
    epsilon: float
    alpha_target: float
    t_freq: float
    t_row: float
    calibration_trials: int
    min_visits: int

    def __post_init__(self):
        if not 0 < self.epsilon < 2:
            raise ValueError("epsilon must lie in (0, 2)")
        if self.t_freq < 0 or self.t_row < 0:
            raise ValueError("thresholds are nonnegative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FixedTestConfig":
        return cls(**json.loads(text))


def default_min_visits(n: int, m: int) -> int:
    return math.ceil(n / (2 * m))


def _statistics(x0, X: np.ndarray, rho: np.ndarray, P: np.ndarray,
                min_visits: int) -> tuple[np.ndarray, np.ndarray]:
    """Frequency and worst-row TV statistics for a batch of trajectories."""
    T, n = X.shape
    m = P.shape[0]
    x0 = np.broadcast_to(np.asarray(x0, dtype=np.int64), (T,))
    rows_idx = np.arange(T)[:, None]
    freq = np.bincount((rows_idx * m + X).ravel(), minlength=T * m).reshape(T, m)
    freq_tv = 0.5 * np.abs(freq / n - rho).sum(axis=1)
    prev = np.concatenate([x0[:, None], X[:, :-1]], axis=1)
    flat = (rows_idx * m * m + prev * m + X).ravel()
    counts = np.bincount(flat, minlength=T * m * m).reshape(T, m, m).astype(float)
    visits = counts.sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        rows = counts / visits[..., None]
    row_tv = 0.5 * np.abs(rows - P[None]).sum(axis=2)
    row_tv = np.where(visits >= min_visits, row_tv, 0.0)
    return freq_tv, row_tv.max(axis=1)


def trajectory_statistics(traj: Trajectory, P, min_visits: int,
                          rho=None) -> tuple[float, float]:
    P = np.asarray(P, dtype=float)
    rho = stationary_distribution(P) if rho is None else rho
    f, r = _statistics(traj.initial_state, np.asarray(traj.samples)[None, :], rho, P,
                       min_visits)
    return float(f[0]), float(r[0])


def calibrate(P, n: int, alpha_target: float = 0.05, trials: int = 2000, seed: int = 0,
              epsilon: float = 1.0, x0: int = 0, min_visits: int | None = None
              ) -> FixedTestConfig:
    """Set both thresholds to the empirical ``1 - alpha_target/2`` null quantiles.

    Null trajectory ``r`` uses seed ``derive_seed(seed, r)``.
    """
    P = np.asarray(P, dtype=float)
    m = P.shape[0]
    if n < m:
        raise ValueError("n must be at least m")
    if min_visits is None:
        min_visits = default_min_visits(n, m)
    rho = stationary_distribution(P)
    seeds = [derive_seed(seed, r) for r in range(trials)]
    f, r = batch_statistics(P, x0, n, seeds, min_visits, rho)
    q = 1 - alpha_target / 2
    return FixedTestConfig(n, epsilon, alpha_target, float(np.quantile(f, q)),
                           float(np.quantile(r, q)), trials, min_visits)


def batch_statistics(Pgen, x0, n, seeds, min_visits, rho, Pnull=None, batch=500):
    """Statistics for trajectories of ``Pgen`` scored against ``Pnull``."""
    Pgen = np.asarray(Pgen, dtype=float)
    Pnull = Pgen if Pnull is None else np.asarray(Pnull, dtype=float)
    fs, rs = [], []
    for lo in range(0, len(seeds), batch):
        X = sample_trajectories(Pgen, x0, n, seeds[lo:lo + batch])
        f, r = _statistics(x0, X, rho, Pnull, min_visits)
        fs.append(f)
        rs.append(r)
    return np.concatenate(fs), np.concatenate(rs)


def decide(freq_tv: float, row_tv: float, config: FixedTestConfig) -> str:
    if freq_tv > config.t_freq:
        return REJECT
    return REJECT if row_tv > config.t_row else ACCEPT


def run_fixed_test(traj: Trajectory, P, config: FixedTestConfig, rho=None) -> str:
    """Two-stage decision, ``"accept"`` or ``"reject"``, on exactly n samples."""
    if len(traj) != config.n:
        raise LengthMismatchError(f"trajectory has {len(traj)} samples, test needs {config.n}")
    P = np.asarray(P, dtype=float)
    rho = stationary_distribution(P) if rho is None else rho
    f, r = trajectory_statistics(traj, P, config.min_visits, rho)
    return decide(f, r, config)


def rejection_rate(Pgen, Pnull, config: FixedTestConfig, trials: int, seed: int,
                   x0: int = 0) -> float:
    """Fraction of ``trials`` trajectories from ``Pgen`` the test rejects."""
    rho = stationary_distribution(Pnull)
    seeds = [derive_seed(seed, r) for r in range(trials)]
    f, r = batch_statistics(Pgen, x0, config.n, seeds, config.min_visits, rho, Pnull)
    rejected = (f > config.t_freq) | (r > config.t_row)
    return float(rejected.mean())
