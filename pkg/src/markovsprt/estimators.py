"""Causal sequential estimators of the data-generating law, and regret tools.

Every estimator exposes

* ``predict(prev)`` -- the full predictive law of the next symbol,
* ``prob(prev, x)`` -- the single entry ``predict(prev)[x]`` (fast path),
* ``observe(prev, x)`` -- fold the transition ``prev -> x`` into the state.

Estimators are mutable: ``observe`` updates in place and returns ``self``.
Use ``copy()`` to snapshot one. The i.i.d. estimator ignores ``prev``.
"""
from __future__ import annotations

import copy as _copy
import math
from typing import NamedTuple, Protocol

import numpy as np

from .chain import Trajectory, derive_seed
from .errors import EmptyHistoryError, InvalidStateError, NoConvergenceError

PREDICTION_FLOOR = 1e-15
COMPONENT_FLOOR = 1e-12


class SequentialEstimator(Protocol):
    m: int

    def predict(self, prev: int | None = None) -> np.ndarray: ...

    def prob(self, prev: int | None, x: int) -> float: ...

    def observe(self, prev: int | None, x: int) -> "SequentialEstimator": ...

    def copy(self) -> "SequentialEstimator": ...


def _floor(p: np.ndarray) -> np.ndarray:
    if p.min() < PREDICTION_FLOOR:
        p = np.maximum(p, PREDICTION_FLOOR)
        p /= p.sum()
    return p


def _check_state(x, m: int) -> None:
    if not 0 <= x < m:
        raise InvalidStateError(f"state {x} outside [0, {m})")


class AddGammaIid:
    """Add-gamma estimator ``(n_x + gamma) / (t + m gamma)``; gamma=1/2 is KT."""

    def __init__(self, m: int, gamma: float = 0.5):
        if m < 2:
            raise ValueError("m must be at least 2")
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        self.m = m
        self.gamma = float(gamma)
        self.counts = [0] * m
        self.t = 0

    def predict(self, prev=None) -> np.ndarray:
        c = np.asarray(self.counts, dtype=float)
        return (c + self.gamma) / (self.t + self.m * self.gamma)

    def prob(self, prev, x: int) -> float:
        return (self.counts[x] + self.gamma) / (self.t + self.m * self.gamma)

    def observe(self, prev, x: int) -> "AddGammaIid":
        _check_state(x, self.m)
        self.counts[x] += 1
        self.t += 1
        return self

    def copy(self) -> "AddGammaIid":
        return _copy.deepcopy(self)

    def __repr__(self) -> str:
        return f"AddGammaIid(m={self.m}, gamma={self.gamma}, t={self.t})"


class AddGammaMarkov:
    """Independent add-gamma estimate for every row of the transition matrix."""

    def __init__(self, m: int, gamma: float = 0.5):
        if m < 2:
            raise ValueError("m must be at least 2")
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        self.m = m
        self.gamma = float(gamma)
        self.counts = [[0] * m for _ in range(m)]
        self.row_totals = [0] * m

    def predict(self, prev: int | None = None) -> np.ndarray:
        if prev is None:
            raise InvalidStateError("a Markov estimator needs the previous state")
        _check_state(prev, self.m)
        c = np.asarray(self.counts[prev], dtype=float)
        return (c + self.gamma) / (self.row_totals[prev] + self.m * self.gamma)

    def prob(self, prev: int, x: int) -> float:
        return (self.counts[prev][x] + self.gamma) / (
            self.row_totals[prev] + self.m * self.gamma)

    def observe(self, prev: int, x: int) -> "AddGammaMarkov":
        _check_state(prev, self.m)
        _check_state(x, self.m)
        self.counts[prev][x] += 1
        self.row_totals[prev] += 1
        return self

    def copy(self) -> "AddGammaMarkov":
        return _copy.deepcopy(self)

    def __repr__(self) -> str:
        return f"AddGammaMarkov(m={self.m}, gamma={self.gamma}, t={sum(self.row_totals)})"


def KT(m: int, mode: str = "markov"):
    """Krichevsky-Trofimov (add-1/2) estimator in the requested mode."""
    return AddGammaIid(m, 0.5) if mode == "iid" else AddGammaMarkov(m, 0.5)


class MixtureMarkov:
    """Bayesian mixture over a finite set of transition matrices.

    The prediction from ``prev`` is the posterior-weighted average of the
    components' rows; after each transition the log-weights gain the
    component log-likelihood and are renormalised in log space.
    """

    def __init__(self, components, log_weights=None):
        comps = np.array(components, dtype=float)
        if comps.ndim != 3 or comps.shape[1] != comps.shape[2]:
            raise ValueError("components must have shape (K, m, m)")
        if np.any(comps <= 0):
            raise ValueError("mixture components must be strictly positive")
        self.components = comps
        self.K, self.m, _ = comps.shape
        self._log_components = np.log(comps)
        if log_weights is None:
            lw = np.full(self.K, -math.log(self.K))
        else:
            lw = np.array(log_weights, dtype=float)
            if lw.shape != (self.K,):
                raise ValueError("need one log-weight per component")
        self.log_weights = lw
        self._normalise()

    def _normalise(self) -> None:
        lw = self.log_weights
        top = lw.max()
        w = np.exp(lw - top)
        s = w.sum()
        self.log_weights = lw - (top + math.log(s))
        self.weights = w / s

    def predict(self, prev: int | None = None) -> np.ndarray:
        if prev is None:
            raise InvalidStateError("a Markov estimator needs the previous state")
        _check_state(prev, self.m)
        return _floor(self.weights @ self.components[:, prev, :])

    def prob(self, prev: int, x: int) -> float:
        return float(self.predict(prev)[x])

    def observe(self, prev: int, x: int) -> "MixtureMarkov":
        _check_state(prev, self.m)
        _check_state(x, self.m)
        self.log_weights = self.log_weights + self._log_components[:, prev, x]
        self._normalise()
        return self

    def copy(self) -> "MixtureMarkov":
        new = _copy.copy(self)
        new.log_weights = self.log_weights.copy()
        new.weights = self.weights.copy()
        return new

    def __repr__(self) -> str:
        return f"{type(self).__name__}(m={self.m}, K={self.K})"


def _stationary_batch(Ps: np.ndarray) -> np.ndarray:
    """Solve ``rho (P - I) = 0, sum rho = 1`` for a stack of chains at once."""
    K, m, _ = Ps.shape
    A = np.transpose(Ps, (0, 2, 1)) - np.eye(m)
    A[:, -1, :] = 1.0
    b = np.zeros((K, m))
    b[:, -1] = 1.0
    with np.errstate(all="ignore"):
        try:
            return np.linalg.solve(A, b[..., None])[..., 0]
        except np.linalg.LinAlgError:
            pass
        rho = np.full((K, m), np.nan)
        for k in range(K):
            try:
                rho[k] = np.linalg.solve(A[k], b[k])
            except np.linalg.LinAlgError:
                continue
    return rho


def _floor_rows(Ps: np.ndarray) -> np.ndarray:
    Ps = np.maximum(Ps, COMPONENT_FLOOR)
    return Ps / Ps.sum(axis=-1, keepdims=True)


def sample_jeffreys_prior(m: int, K: int, seed: int, oversample: int = 8) -> np.ndarray:
    """Draw ``K`` chains from the Markov Jeffreys prior.

    Self-normalised importance resampling: each proposal has independent
    Dirichlet(1/2) rows and weight ``prod_i rho(i)^((m-1)/2)``, where rho is
    the proposal's stationary law. Proposals whose stationary law cannot be
    computed get weight zero. Entries are floored at 1e-12.
    """
    if m < 2 or K < 1:
        raise ValueError("need m >= 2 and K >= 1")
    rng = np.random.default_rng(seed)
    n = oversample * K
    props = rng.dirichlet(np.full(m, 0.5), size=(n, m))
    rho = _stationary_batch(props)
    ok = np.all(np.isfinite(rho), axis=1) & np.all(rho >= -1e-9, axis=1)
    logw = np.full(n, -np.inf)
    r = np.clip(rho[ok], 1e-300, None)
    logw[ok] = 0.5 * (m - 1) * np.log(r).sum(axis=1)
    if not np.any(np.isfinite(logw)):
        raise NoConvergenceError("no proposal had a usable stationary distribution")
    w = np.exp(logw - logw.max())
    idx = rng.choice(n, size=K, replace=True, p=w / w.sum())
    return _floor_rows(props[idx])


def sample_dirichlet_rows(m: int, K: int, gamma: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return _floor_rows(rng.dirichlet(np.full(m, gamma), size=(K, m)))


class JeffreysMixtureMarkov(MixtureMarkov):
    """Monte-Carlo approximation of the Jeffreys mixture with K components."""

    def __init__(self, m: int, K: int = 1000, seed: int = 0, components=None):
        if components is None:
            components = sample_jeffreys_prior(m, K, seed)
        super().__init__(components)
        self.seed = seed


class ModifiedJeffreysMixture(MixtureMarkov):
    """Jeffreys mixture blended with a sparse-favouring mixture.

    Prior mass ``1 - delta`` sits on K Jeffreys components and ``delta`` on K
    components with independent Dirichlet(``sparse_gamma``) rows. Without an
    explicit ``delta`` it defaults to ``1 / ln(horizon + e)``, which is why
    the estimator needs the total sample budget up front.
    """

    def __init__(self, m: int, K: int = 1000, delta: float | None = None,
                 sparse_gamma: float = 0.1, horizon: int = 10**4, seed: int = 0):
        if delta is None:
            delta = 1.0 / math.log(horizon + math.e)
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 0 < sparse_gamma < 0.5:
            raise ValueError("sparse_gamma must lie in (0, 1/2)")
        jeff = sample_jeffreys_prior(m, K, derive_seed(seed, 0))
        sparse = sample_dirichlet_rows(m, K, sparse_gamma, derive_seed(seed, 1))
        lw = np.concatenate([np.full(K, math.log((1 - delta) / K)),
                             np.full(K, math.log(delta / K))])
        super().__init__(np.concatenate([jeff, sparse]), lw)
        self.delta = delta
        self.sparse_gamma = sparse_gamma
        self.horizon = horizon
        self.seed = seed

    @property
    def sparse_weight(self) -> float:
        """Current posterior mass on the sparse half."""
        return float(self.weights[self.K // 2:].sum())


def make_estimator(spec: str, m: int, mode: str = "markov", seed: int = 0):
    """Build an estimator from its textual spec.

    Grammar: ``kt``, ``add:<gamma>``, ``jeffreys:<K>``,
    ``modified:<K>,<delta>,<gamma>,<horizon>``. Mixtures are Markov-only.
    """
    if mode not in ("iid", "markov"):
        raise ValueError(f"unknown mode {mode!r}")
    name, _, arg = spec.strip().partition(":")
    name = name.lower()
    try:
        if name == "kt" and not arg:
            return KT(m, mode)
        if name == "add":
            g = float(arg)
            return AddGammaIid(m, g) if mode == "iid" else AddGammaMarkov(m, g)
        if name in ("jeffreys", "modified") and mode == "iid":
            raise ValueError(f"{name} estimator is only defined for Markov data")
        if name == "jeffreys":
            return JeffreysMixtureMarkov(m, int(arg), seed=seed)
        if name == "modified":
            K, delta, gamma, horizon = arg.split(",")
            return ModifiedJeffreysMixture(m, int(K), float(delta), float(gamma),
                                           int(horizon), seed=seed)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"bad estimator spec {spec!r}: {exc}") from None
    raise ValueError(f"bad estimator spec {spec!r}")


# --- regret ------------------------------------------------------------------

class RegretRecord(NamedTuple):
    t: int
    estimator_loss: float
    hindsight_loss: float
    regret: float


def _xlogx(n):
    n = np.asarray(n, dtype=float)
    return np.where(n > 0, n * np.log(np.where(n > 0, n, 1.0)), 0.0)


def hindsight_best_loss(history: Trajectory, mode: str = "iid", m: int | None = None) -> float:
    """Log-loss (nats) of the maximum-likelihood model fitted in hindsight.

    The i.i.d. model uses the samples only; the Markov model fits one row per
    state on the transitions ``X_0 -> X_1 -> ...`` and charges nothing for X_0.
    """
    s = np.asarray(history.samples, dtype=np.int64)
    if s.size == 0:
        raise EmptyHistoryError("hindsight loss of an empty history")
    if m is None:
        m = int(max(s.max(), history.initial_state)) + 1
    if mode == "iid":
        n = np.bincount(s, minlength=m)
        t = s.size
        return float(-(n[n > 0] * np.log(n[n > 0] / t)).sum())
    if mode != "markov":
        raise ValueError(f"unknown mode {mode!r}")
    prev = np.concatenate([[history.initial_state], s[:-1]])
    nij = np.bincount(prev * m + s, minlength=m * m).reshape(m, m)
    ni = nij.sum(axis=1, keepdims=True)
    mask = nij > 0
    return float(-(nij[mask] * np.log((nij / np.where(ni > 0, ni, 1))[mask])).sum())


def prefix_hindsight_losses(history: Trajectory, mode: str, m: int) -> np.ndarray:
    """Hindsight loss of every prefix, ``out[t-1]`` for the first t samples."""
    s = np.asarray(history.samples, dtype=np.int64)
    T = s.size
    if T == 0:
        raise EmptyHistoryError("hindsight loss of an empty history")
    if mode == "iid":
        counts = np.cumsum(np.eye(m, dtype=np.int64)[s], axis=0)
        t = np.arange(1, T + 1)
        return _xlogx(t) - _xlogx(counts).sum(axis=1)
    prev = np.concatenate([[history.initial_state], s[:-1]])
    cell = prev * m + s
    # only the touched row changes at each step: accumulate the deltas
    pair_counts = [0] * (m * m)
    row_counts = [0] * m
    out = np.empty(T)
    f = lambda n: n * math.log(n) if n > 0 else 0.0  # noqa: E731
    total = 0.0
    cells = cell.tolist()
    prevs = prev.tolist()
    for k in range(T):
        c, i = cells[k], prevs[k]
        nc, ni = pair_counts[c], row_counts[i]
        total += (f(ni + 1) - f(ni)) - (f(nc + 1) - f(nc))
        pair_counts[c] = nc + 1
        row_counts[i] = ni + 1
        out[k] = total
    return out


def cumulative_regret(est, history: Trajectory, mode: str = "iid") -> list[RegretRecord]:
    """Replay ``history`` through a fresh estimator, predicting before observing.

    In i.i.d. mode ``prev`` is still passed along but the estimator and the
    hindsight model ignore it.
    """
    samples = np.asarray(history.samples).tolist()
    if not samples:
        raise EmptyHistoryError("regret of an empty history")
    hind = prefix_hindsight_losses(history, mode, est.m)
    records = []
    loss = 0.0
    prev = int(history.initial_state)
    for k, x in enumerate(samples):
        loss -= math.log(est.prob(prev, x))
        est.observe(prev, x)
        prev = x
        h = float(hind[k])
        records.append(RegretRecord(k + 1, loss, h, loss - h))
    return records
