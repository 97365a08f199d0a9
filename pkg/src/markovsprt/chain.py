"""Finite-state Markov chains: validation, sampling, divergences, instances.

Transition matrices are plain ``numpy`` arrays of shape ``(m, m)`` whose
row ``i`` is the next-state law from state ``i``. Matrices returned by
:func:`validate` (and every generator in this module) are read-only so they
can be shared freely. Divergences are in nats.
"""
from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    DimensionMismatchError,
    InvalidStateError,
    NegativeEntryError,
    NoConvergenceError,
    NotSquareError,
    RejectionBudgetExceededError,
    RowSumOutOfToleranceError,
)

ROW_SUM_TOL = 1e-9
STATIONARY_TOL = 1e-12
STATIONARY_MAX_ITER = 10**6
PERTURB_MAX_ATTEMPTS = 10**5


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def validate(raw) -> np.ndarray:
    """Check and normalise a raw square matrix of transition probabilities.

    Rows must be nonnegative and sum to 1 within ``1e-9``; accepted rows are
    renormalised so they sum to 1 up to rounding.
    """
    a = np.array(raw, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise NotSquareError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 2:
        raise NotSquareError("a chain needs at least 2 states")
    if not np.all(np.isfinite(a)):
        raise NegativeEntryError("matrix has non-finite entries")
    if np.any(a < 0):
        i, j = np.argwhere(a < 0)[0]
        raise NegativeEntryError(f"entry ({i}, {j}) = {a[i, j]} is negative")
    sums = a.sum(axis=1)
    bad = np.abs(sums - 1.0) > ROW_SUM_TOL
    if np.any(bad):
        i = int(np.argmax(bad))
        raise RowSumOutOfToleranceError(f"row {i} sums to {sums[i]!r}")
    return _frozen(a / sums[:, None])


def as_distribution(p, m: int | None = None) -> np.ndarray:
    """Validate a probability vector (entries >= 0, sum 1 within 1e-12)."""
    v = np.asarray(p, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatchError("a distribution is one-dimensional")
    if m is not None and v.shape[0] != m:
        raise DimensionMismatchError(f"expected {m} entries, got {v.shape[0]}")
    if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-12:
        raise ValueError("not a probability vector")
    return v


def _closed_classes(P: np.ndarray) -> int:
    n, labels = connected_components(P > 0, directed=True, connection="strong")
    closed = np.ones(n, dtype=bool)
    src, dst = np.nonzero(P > 0)
    leaving = labels[src] != labels[dst]
    closed[labels[src[leaving]]] = False
    return int(closed.sum())


def stationary_distribution(P, tol: float = STATIONARY_TOL,
                            max_iter: int = STATIONARY_MAX_ITER) -> np.ndarray:
    """Stationary law ``rho`` with ``||rho P - rho||_inf <= tol``.

    Iterates the averaged kernel ``(I + P) / 2``, which has the same
    stationary law as ``P`` but is aperiodic, so periodic chains converge
    too. Iterations are applied in blocks of 16 via a precomputed power.
    """
    P = np.asarray(P, dtype=float)
    m = P.shape[0]
    if _closed_classes(P) != 1:
        raise NoConvergenceError("chain has no unique stationary distribution")
    lazy = 0.5 * (np.eye(m) + P)
    block = 16
    step = np.linalg.matrix_power(lazy, block)
    x = np.full(m, 1.0 / m)
    done = 0
    while done < max_iter:
        x = x @ step
        x /= x.sum()
        done += block
        if np.max(np.abs(x @ P - x)) <= tol:
            return _frozen(x)
    raise NoConvergenceError(f"no convergence within {max_iter} iterations")


def _positive_graph_period(P: np.ndarray) -> int:
    m = P.shape[0]
    level = np.full(m, -1)
    level[0] = 0
    frontier = [0]
    adj = [np.flatnonzero(P[i] > 0) for i in range(m)]
    g = 0
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(v)
        frontier = nxt
    for u in range(m):
        for v in adj[u]:
            g = math.gcd(g, int(level[u] + 1 - level[v]))
    return g


def is_ergodic(P) -> bool:
    """Strongly connected positive-transition graph with period 1."""
    P = np.asarray(P, dtype=float)
    n, _ = connected_components(P > 0, directed=True, connection="strong")
    if n != 1:
        return False
    return _positive_graph_period(P) == 1


# --- seeds and sampling ------------------------------------------------------

def derive_seed(root: int, *keys: int) -> int:
    """Counter-mode child seed: a 64-bit integer determined by (root, keys)."""
    ss = np.random.SeedSequence(int(root), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class Trajectory:
    """Initial state ``X_0`` followed by samples ``X_1 .. X_t``."""

    initial_state: int
    samples: np.ndarray

    def __len__(self) -> int:
        return len(self.samples)

    def check(self, m: int) -> None:
        if not 0 <= self.initial_state < m:
            raise InvalidStateError(f"initial state {self.initial_state} not in [0, {m})")
        s = np.asarray(self.samples)
        if s.size and (s.min() < 0 or s.max() >= m):
            raise InvalidStateError(f"sample outside [0, {m})")

    def transitions(self) -> Iterator[tuple[int, int]]:
        prev = int(self.initial_state)
        for x in np.asarray(self.samples).tolist():
            yield prev, x
            prev = x


def _cdf_rows(P: np.ndarray) -> np.ndarray:
    cum = np.minimum(np.cumsum(P, axis=1), 1.0)
    cum[:, -1] = 1.0
    return cum


def sample_trajectory(P, x0: int, length: int, seed: int) -> Trajectory:
    """Inverse-CDF sampling: ``X_t`` is the first state whose cumulative
    row probability exceeds the uniform ``U_t``."""
    P = np.asarray(P, dtype=float)
    if not 0 <= x0 < P.shape[0]:
        raise InvalidStateError(f"x0={x0} outside the state space")
    u = np.random.default_rng(seed).random(length).tolist()
    cum = _cdf_rows(P).tolist()
    out = []
    append = out.append
    x = int(x0)
    for v in u:
        x = bisect_right(cum[x], v)
        append(x)
    return Trajectory(int(x0), np.array(out, dtype=np.int64))


def sample_trajectories(P, x0, length: int, seeds: Sequence[int]) -> np.ndarray:
    """Batch of trajectories, row ``r`` bit-identical to
    ``sample_trajectory(P, x0, length, seeds[r]).samples``."""
    P = np.asarray(P, dtype=float)
    cum = _cdf_rows(P)
    U = np.empty((len(seeds), length))
    for r, s in enumerate(seeds):
        U[r] = np.random.default_rng(s).random(length)
    x = np.broadcast_to(np.asarray(x0, dtype=np.int64), (len(seeds),)).copy()
    out = np.empty((len(seeds), length), dtype=np.int64)
    for t in range(length):
        x = (cum[x] <= U[:, t:t + 1]).sum(axis=1)
        out[:, t] = x
    return out


def chain_stream(P, x0: int, seed: int, block: int = 4096) -> Iterator[int]:
    """Endless sample source; its first n values equal ``sample_trajectory``."""
    P = np.asarray(P, dtype=float)
    rng = np.random.default_rng(seed)
    cum = _cdf_rows(P).tolist()
    x = int(x0)
    while True:
        for v in rng.random(block).tolist():
            x = bisect_right(cum[x], v)
            yield x


# --- divergences -------------------------------------------------------------

def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shapes {a.shape} and {b.shape} differ")


def kl_divergence(q, p) -> float:
    """``sum_i q_i ln(q_i / p_i)`` with 0 ln 0 = 0 and q>0=p giving inf."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    _same_shape(q, p)
    support = q > 0
    if np.any(p[support] == 0):
        return math.inf
    qs = q[support]
    return float(max(np.sum(qs * np.log(qs / p[support])), 0.0))


def row_kls(Q, P) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    P = np.asarray(P, dtype=float)
    _same_shape(Q, P)
    return np.array([kl_divergence(Q[i], P[i]) for i in range(Q.shape[0])])


def stationary_kl(Q, P) -> float:
    """Row KLs ``D(Q(.|i) || P(.|i))`` weighted by the stationary law of Q."""
    kls = row_kls(Q, P)
    rho = stationary_distribution(Q)
    pos = rho > 0
    if np.any(np.isinf(kls[pos])):
        return math.inf
    return float(np.dot(rho[pos], kls[pos]))


def total_variation(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    _same_shape(u, v)
    return 0.5 * float(np.abs(u - v).sum())


def markov_distance(P, Q) -> float:
    """Twice the largest row-wise total-variation distance."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    _same_shape(P, Q)
    return float(np.abs(P - Q).sum(axis=1).max())


def max_likelihood_ratio(Q, P) -> float:
    Q = np.asarray(Q, dtype=float)
    P = np.asarray(P, dtype=float)
    _same_shape(Q, P)
    support = Q > 0
    if np.any(P[support] == 0):
        return math.inf
    return float(np.max(Q[support] / P[support]))


# --- instance generation -----------------------------------------------------

def random_chain(m: int, seed: int) -> np.ndarray:
    """Rows drawn independently from the flat Dirichlet."""
    if m < 2:
        raise ValueError("m must be at least 2")
    rows = np.random.default_rng(seed).dirichlet(np.ones(m), size=m)
    return validate(rows)


def perturb_rows(P, k: int, eps: float, seed: int) -> np.ndarray:
    """Resample ``k`` randomly chosen rows until each is more than ``eps/2``
    away from the original in total variation.

    Row choice is a seeded permutation and each row uses its own derived
    seed, so for a fixed seed the perturbed rows at ``k`` are a subset of
    (and identical to) those at ``k + 1``.
    """
    P = np.asarray(P, dtype=float)
    m = P.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"k must lie in [1, {m}]")
    if not 0 < eps < 2:
        raise ValueError("eps must lie in (0, 2)")
    order = np.random.default_rng(seed).permutation(m)
    out = P.copy()
    for i in order[:k]:
        rng = np.random.default_rng(derive_seed(seed, int(i)))
        for _ in range(PERTURB_MAX_ATTEMPTS):
            row = rng.dirichlet(np.ones(m))
            if total_variation(row, P[i]) > eps / 2:
                out[i] = row / row.sum()
                break
        else:
            raise RejectionBudgetExceededError(
                f"row {i}: no resample beyond TV {eps / 2} in {PERTURB_MAX_ATTEMPTS} tries")
    validate(out)
    # untouched rows are kept bit for bit, so skip validate's renormalisation
    return _frozen(out)


def toy_chains(eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Null and alternative of the two-state near-edge problem.

    Both share the first row ``(eps, 1 - eps)``; the second row is
    ``(0.7, 0.3)`` under the null and ``(0.9, 0.1)`` under the alternative.
    """
    P = validate([[eps, 1 - eps], [0.7, 0.3]])
    Q = validate([[eps, 1 - eps], [0.9, 0.1]])
    return P, Q


# --- file formats ------------------------------------------------------------

def chain_to_dict(P) -> dict:
    P = np.asarray(P, dtype=float)
    return {"m": int(P.shape[0]), "rows": P.tolist()}


def chain_from_dict(d: dict) -> np.ndarray:
    if not isinstance(d, dict) or "rows" not in d:
        raise ValueError('chain spec must be an object with "rows"')
    P = validate(d["rows"])
    if "m" in d and int(d["m"]) != P.shape[0]:
        raise DimensionMismatchError(f'"m"={d["m"]} but {P.shape[0]} rows given')
    return P


def load_chain(path) -> np.ndarray:
    with open(path) as fh:
        return chain_from_dict(json.load(fh))


def save_chain(P, path) -> None:
    with open(path, "w") as fh:
        json.dump(chain_to_dict(P), fh)
        fh.write("\n")


def parse_states(lines: Iterable[str]) -> Iterator[int]:
    """Yield integer state indices from newline-delimited text, skipping blanks."""
    for n, line in enumerate(lines, 1):
        s = line.strip()
        if not s:
            continue
        try:
            yield int(s)
        except ValueError:
            raise InvalidStateError(f"line {n}: {s!r} is not a state index") from None


def format_states(states: Iterable[int]) -> str:
    return "".join(f"{int(x)}\n" for x in states)
