"""One-sided sequential likelihood-ratio tests for Markov data.

The composite test replaces the unknown alternative with a causal
estimator: before each sample ``X_t`` the estimator predicts from
``X_1..X_{t-1}``, the log-statistic grows by
``ln Qhat_t(X_t | X_{t-1}) - ln P(X_t | X_{t-1})`` and the null is rejected
the first time it reaches ``ln(1/alpha)``. The test never accepts the
null; under H0 it is meant to run forever.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chain import Trajectory, validate
from .errors import (
    DimensionMismatchError,
    ImpossibleUnderBothError,
    InvalidStateError,
    StreamError,
)
from .estimators import make_estimator

RUNNING = "running"
REJECT = "reject_null"
STILL_RUNNING = "still_running"


@dataclass(frozen=True)
class TestState:
    t: int = 0
    log_L: float = 0.0
    prev_state: int = 0
    verdict: str = RUNNING

    __test__ = False  # not a pytest class

    @property
    def rejected(self) -> bool:
        return self.verdict == REJECT


@dataclass(frozen=True)
class Verdict:
    decision: str
    stopping_time: int | None = None

    def __post_init__(self):
        if (self.decision == REJECT) != (self.stopping_time is not None):
            raise ValueError("stopping_time is set exactly when the null is rejected")


@dataclass
class TestConfig:
    """Inputs of a composite test.

    ``null_chain`` may be a probability vector in ``iid`` mode; it is then
    expanded to the matrix with every row equal to it. ``seed`` drives the
    Monte-Carlo components of mixture estimators only.
    """

    alpha: float
    null_chain: np.ndarray
    estimator_spec: str = "kt"
    mode: str = "markov"
    max_samples: int | None = None
    seed: int = 0

    __test__ = False

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.mode not in ("iid", "markov"):
            raise ValueError(f"unknown mode {self.mode!r}")
        P = np.asarray(self.null_chain, dtype=float)
        if self.mode == "iid":
            if P.ndim == 1:
                P = np.tile(P, (P.shape[0], 1))
            elif not np.allclose(P, P[0]):
                raise ValueError("iid mode needs a null chain with identical rows")
        self.null_chain = validate(P)

    @property
    def m(self) -> int:
        return self.null_chain.shape[0]

    @property
    def log_threshold(self) -> float:
        return math.log(1.0 / self.alpha)

    def make_estimator(self):
        return make_estimator(self.estimator_spec, self.m, self.mode, self.seed)


def _log(p: float) -> float:
    return math.log(p) if p > 0 else -math.inf


def _advance(state: TestState, x: int, log_q: float, log_p: float,
             log_threshold: float) -> TestState:
    if log_p == -math.inf:
        return TestState(state.t + 1, math.inf, x, REJECT)
    log_L = state.log_L + (log_q - log_p)
    verdict = REJECT if log_L >= log_threshold else RUNNING
    return TestState(state.t + 1, log_L, x, verdict)


def simple_sprt_step(state: TestState, x: int, P, Q, alpha: float) -> TestState:
    """SPRT step against a known alternative ``Q``."""
    if state.rejected:
        return state
    prev = state.prev_state
    p, q = float(P[prev][x]), float(Q[prev][x])
    if p == 0 and q == 0:
        raise ImpossibleUnderBothError(f"transition {prev}->{x} impossible under P and Q")
    return _advance(state, x, _log(q), _log(p), math.log(1.0 / alpha))


def composite_step(state: TestState, x: int, config: TestConfig, est):
    """One step of the composite test: predict, score, then observe.

    Returns ``(new_state, est)``; ``est`` is updated in place.
    """
    if not 0 <= x < config.m:
        raise InvalidStateError(f"state {x} outside [0, {config.m})")
    if state.rejected:
        return state, est
    prev = state.prev_state
    q = est.prob(prev, x)
    new = _advance(state, x, math.log(q), _log(float(config.null_chain[prev, x])),
                   config.log_threshold)
    est.observe(prev, x)
    return new, est


@dataclass
class RunResult:
    verdict: Verdict
    state: TestState
    trace: list = field(default_factory=list)
    estimator: object = None

    @property
    def stopping_time(self) -> int | None:
        return self.verdict.stopping_time


def run_to_decision(stream, config: TestConfig, x0: int | None = None, est=None,
                    record_trace: bool = True) -> RunResult:
    """Consume samples until rejection, the end of ``stream`` or ``max_samples``.

    ``stream`` is a :class:`Trajectory` (its initial state is ``X_0``) or any
    iterable of states together with ``x0``. The trace holds ``(t, log_L)``
    per consumed sample. A failing or out-of-range source raises
    :class:`StreamError` carrying the partial trace and state.
    """
    if isinstance(stream, Trajectory):
        if x0 is None:
            x0 = stream.initial_state
        stream = stream.samples.tolist()
    if x0 is None:
        raise ValueError("the initial state X_0 is required")
    m = config.m
    if not 0 <= x0 < m:
        raise InvalidStateError(f"x0={x0} outside [0, {m})")
    if est is None:
        est = config.make_estimator()
    # hot loop: locals only
    logP = np.log(np.where(config.null_chain > 0, config.null_chain, 1.0))
    logP[config.null_chain == 0] = -math.inf
    logP = logP.tolist()
    thr = config.log_threshold
    horizon = config.max_samples if config.max_samples is not None else math.inf
    prob, observe, log = est.prob, est.observe, math.log
    trace = []
    record = trace.append if record_trace else None
    t, log_L, prev = 0, 0.0, int(x0)
    rejected = False
    it = iter(stream)
    while t < horizon:
        try:
            x = next(it)
        except StopIteration:
            break
        except Exception as exc:
            raise StreamError(f"stream failed after {t} samples: {exc}", trace,
                              TestState(t, log_L, prev)) from exc
        if type(x) is not int:
            x = int(x)
        if not 0 <= x < m:
            raise StreamError(f"sample {t + 1}: state {x} outside [0, {m})", trace,
                              TestState(t, log_L, prev))
        t += 1
        lp = logP[prev][x]
        if lp == -math.inf:
            log_L = math.inf
        else:
            log_L += log(prob(prev, x)) - lp
        observe(prev, x)
        prev = x
        if record is not None:
            record((t, log_L))
        if log_L >= thr:
            rejected = True
            break
    if rejected:
        state = TestState(t, log_L, prev, REJECT)
        verdict = Verdict(REJECT, t)
    else:
        state = TestState(t, log_L, prev, RUNNING)
        verdict = Verdict(STILL_RUNNING)
    return RunResult(verdict, state, trace, est)


def run_simple_sprt(stream: Trajectory, P, Q, alpha: float,
                    max_samples: int | None = None) -> RunResult:
    """Oracle SPRT with the true alternative known; same contract as above."""
    state = TestState(prev_state=int(stream.initial_state))
    samples = stream.samples.tolist()
    if max_samples is not None:
        samples = samples[:max_samples]
    trace = []
    for x in samples:
        state = simple_sprt_step(state, x, P, Q, alpha)
        trace.append((state.t, state.log_L))
        if state.rejected:
            return RunResult(Verdict(REJECT, state.t), state, trace)
    return RunResult(Verdict(STILL_RUNNING), state, trace)


def martingale_check(prediction, P_row) -> float:
    """Null conditional expectation of the likelihood-ratio factor.

    ``sum_j P(j) * (pred(j) / P(j))`` over the null support, i.e. the
    prediction mass on that support: 1 when the null row is strictly
    positive, at most 1 otherwise.
    """
    q = np.asarray(prediction, dtype=float)
    p = np.asarray(P_row, dtype=float)
    if q.shape != p.shape:
        raise DimensionMismatchError(f"shapes {q.shape} and {p.shape} differ")
    s = p > 0
    return float(np.sum(p[s] * (q[s] / p[s])))

