"""Reproducible Monte-Carlo experiments.

Each experiment is a pure function of its :class:`ExperimentSpec`. Every
trial draws its randomness from ``derive_seed(spec.seed, stream, *index)``
where ``stream`` names the purpose (data, perturbation, calibration, ...)
and ``index`` is the grid position and trial number, so extending a grid
leaves existing trials untouched. Trials that reach the horizon without a
rejection are kept and flagged as censored.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import baseline
from .chain import (
    chain_stream,
    derive_seed,
    is_ergodic,
    markov_distance,
    perturb_rows,
    random_chain,
    stationary_distribution,
    stationary_kl,
    toy_chains,
    validate,
)
from .sprt import REJECT, TestConfig, run_to_decision
from .wald import stationary_drift, verify_wald_identity

NAMES = ("adaptivity", "estimator_sweep", "type1", "scaling", "wald_verify")

# seed streams
_CHAIN, _PERTURB, _SEQ, _FIXED, _CAL, _NULLFIXED = 1, 2, 3, 4, 5, 6

CSV_COLUMNS = ("product", "group", "estimator", "grid_value", "trial", "seed",
               "stopping_time", "decision", "censored", "final_log_lr", "value")


@dataclass
class ExperimentSpec:
    """Knobs of one experiment.

    ``grid`` holds perturbed-row counts (adaptivity), toy-problem epsilons
    (estimator_sweep, wald_verify), or first entries of the alternative's
    second row (scaling). ``alpha=None`` in adaptivity means "use the fixed
    test's measured type-1 error".
    """

    name: str
    seed: int
    m: int = 5
    alpha: float | None = 0.05
    epsilon: float = 0.5
    trials: int = 500
    horizon: int = 10**6
    estimators: list = field(default_factory=lambda: ["kt"])
    grid: list = field(default_factory=list)
    sample_sizes: list = field(default_factory=list)
    calibration_trials: int = 500
    fixed_alpha: float = 0.05
    x0: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.name not in NAMES:
            raise ValueError(f"unknown experiment {self.name!r}; expected one of {NAMES}")
        if self.seed is None:
            raise ValueError("experiments need an explicit seed")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.name != "type1" and not self.grid:
            raise ValueError(f"{self.name} needs a nonempty grid")
        if self.name == "adaptivity" and not self.sample_sizes:
            raise ValueError("adaptivity needs sample_sizes for the fixed-length sweep")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown spec fields: {sorted(extra)}")
        return cls(**d)

    def spec_hash(self) -> str:
        d = self.to_dict()
        d.pop("workers")  # scheduling does not change results
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    records: list
    aggregates: dict
    extras: dict = field(default_factory=dict)

    @property
    def stem(self) -> str:
        return f"{self.spec.name}_{self.spec.spec_hash()}"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.records:
            w.writerow({k: _csv_value(r.get(k)) for k in CSV_COLUMNS})
        return buf.getvalue()

    def summary(self) -> dict:
        return {"experiment": self.spec.name, "spec_hash": self.spec.spec_hash(),
                "config": self.spec.to_dict(), "aggregates": self.aggregates,
                "extras": self.extras}

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.summary()), sort_keys=True, indent=2) + "\n"

    def write(self, out_dir) -> tuple[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, self.stem + ".csv")
        json_path = os.path.join(out_dir, self.stem + ".json")
        with open(csv_path, "w", newline="") as fh:
            fh.write(self.to_csv())
        with open(json_path, "w") as fh:
            fh.write(self.to_json())
        return csv_path, json_path

    def table(self) -> str:
        """Plain-text summary, one line per aggregate group."""
        lines = []
        for key, a in self.aggregates.items():
            parts = [key]
            for name in ("n", "rejection_rate", "mean_tau", "se_tau", "n_censored",
                         "false_accept_rate"):
                if a.get(name) is not None:
                    v = a[name]
                    parts.append(f"{name}={v:.4g}" if isinstance(v, float) else f"{name}={v}")
            lines.append("  ".join(parts))
        return "\n".join(lines)


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


# --- aggregation -------------------------------------------------------------

def group_key(r: dict) -> str:
    return f"{r['product']}|{r['group']}|{r['estimator']}"


def aggregate(records: list) -> dict:
    """Per-group summaries; recomputable from the records alone."""
    groups: dict = {}
    for r in records:
        groups.setdefault(group_key(r), []).append(r)
    out = {}
    for key, rs in groups.items():
        n = len(rs)
        a = {"n": n, "grid_value": rs[0]["grid_value"]}
        if rs[0]["product"] == "fixed":
            acc = sum(r["decision"] == "accept" for r in rs)
            a["false_accept_rate"] = acc / n
            a["power"] = 1 - acc / n
            a["se_rate"] = math.sqrt(a["power"] * (1 - a["power"]) / n)
        elif rs[0]["product"] == "wald":
            v = np.array([r["value"] for r in rs], dtype=float)
            a["mean_value"] = float(v.mean())
            a["se_value"] = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        else:
            taus = np.array([r["stopping_time"] for r in rs if not r["censored"]], dtype=float)
            k = int(taus.size)
            a["n_rejected"] = k
            a["n_censored"] = n - k
            a["rejection_rate"] = k / n
            a["mean_tau"] = float(taus.mean()) if k else None
            a["se_tau"] = float(taus.std(ddof=1) / math.sqrt(k)) if k > 1 else None
            if k:
                q = np.quantile(taus, [0.1, 0.5, 0.9])
                a["tau_q10"], a["tau_q50"], a["tau_q90"] = (float(x) for x in q)
        out[key] = a
    return out


# --- trial runners (module level so worker processes can pickle them) -------

def _sequential_trial(args) -> dict:
    (Pnull, Pgen, est_spec, alpha, horizon, x0, seed, labels) = args
    cfg = TestConfig(alpha, Pnull, est_spec, "markov", max_samples=horizon,
                     seed=derive_seed(seed, 1))
    res = run_to_decision(chain_stream(Pgen, x0, seed), cfg, x0=x0, record_trace=False)
    rejected = res.verdict.decision == REJECT
    return dict(labels, seed=seed, stopping_time=res.verdict.stopping_time,
                decision="reject" if rejected else "running", censored=not rejected,
                final_log_lr=float(res.state.log_L), value=float(res.state.t))


def _map(fn, tasks, workers: int) -> list:
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=16))


def _seq_tasks(spec, Pnull, Pgen, est, alpha, gi, product, group, grid_value):
    for trial in range(spec.trials):
        seed = derive_seed(spec.seed, _SEQ, gi, trial)
        labels = {"product": product, "group": group, "estimator": est,
                  "grid_value": grid_value, "trial": trial}
        yield (Pnull, Pgen, est, alpha, spec.horizon, spec.x0, seed, labels)


def _ergodic_random_chain(m: int, seed: int) -> np.ndarray:
    for attempt in range(1000):
        P = random_chain(m, derive_seed(seed, attempt))
        if is_ergodic(P):
            return P
    raise RuntimeError("could not draw an ergodic chain")


# --- experiments -------------------------------------------------------------

def adaptivity_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Sequential stopping times versus fixed-length power as rows are perturbed.

    One random reference chain; for each ``k`` in the grid the alternative
    perturbs ``k`` rows, nested in ``k``. Two data products: sequential
    stopping times per ``k``, and the fixed-length test's decisions per
    ``(k, n)`` with thresholds calibrated on null data at each ``n``.
    """
    P = _ergodic_random_chain(spec.m, derive_seed(spec.seed, _CHAIN))
    alts = {k: perturb_rows(P, k, spec.epsilon, derive_seed(spec.seed, _PERTURB))
            for k in spec.grid}
    configs = {n: baseline.calibrate(P, n, spec.fixed_alpha, spec.calibration_trials,
                                     derive_seed(spec.seed, _CAL, ni), spec.epsilon,
                                     spec.x0)
               for ni, n in enumerate(spec.sample_sizes)}
    n_ref = max(spec.sample_sizes)
    fixed_type1 = baseline.rejection_rate(P, P, configs[n_ref], spec.trials,
                                          derive_seed(spec.seed, _NULLFIXED), spec.x0)
    alpha = spec.alpha if spec.alpha is not None else max(fixed_type1, 1e-3)
    est = spec.estimators[0]

    tasks = []
    for gi, k in enumerate(spec.grid):
        tasks.extend(_seq_tasks(spec, P, alts[k], est, alpha, gi, "sequential",
                                f"k={k}", k))
    records = _map(_sequential_trial, tasks, spec.workers)

    rho = stationary_distribution(P)
    for gi, k in enumerate(spec.grid):
        for ni, n in enumerate(spec.sample_sizes):
            cfg = configs[n]
            seeds = [derive_seed(spec.seed, _FIXED, gi, ni, t) for t in range(spec.trials)]
            f, r = baseline.batch_statistics(alts[k], spec.x0, n, seeds, cfg.min_visits,
                                             rho, P)
            for t in range(spec.trials):
                d = baseline.decide(float(f[t]), float(r[t]), cfg)
                records.append({"product": "fixed", "group": f"k={k},n={n}",
                                "estimator": "fixed", "grid_value": n, "trial": t,
                                "seed": seeds[t], "stopping_time": n, "decision": d,
                                "censored": False, "final_log_lr": None,
                                "value": float(f[t])})
    extras = {
        "null_chain": P.tolist(),
        "alpha_used": alpha,
        "fixed_type1_at_n": {"n": n_ref, "rate": fixed_type1},
        "alternatives": {str(k): {"markov_distance": markov_distance(P, Q),
                                  "d_m": stationary_kl(Q, P)} for k, Q in alts.items()},
        "fixed_configs": {str(n): asdict(c) for n, c in configs.items()},
    }
    return ExperimentResult(spec, records, aggregate(records), extras)


def estimator_sweep(spec: ExperimentSpec) -> ExperimentResult:
    """Mean stopping time of each estimator on the two-state toy problem.

    Estimators share data streams within a grid point (common random
    numbers), which makes their comparison paired.
    """
    alpha = spec.alpha if spec.alpha is not None else 0.05
    tasks = []
    for gi, eps in enumerate(spec.grid):
        P, Q = toy_chains(eps)
        for est in spec.estimators:
            tasks.extend(_seq_tasks(spec, P, Q, est, alpha, gi, "sequential",
                                    f"eps={eps}", eps))
    records = _map(_sequential_trial, tasks, spec.workers)
    extras = {"d_m": {str(eps): stationary_kl(toy_chains(eps)[1], toy_chains(eps)[0])
                      for eps in spec.grid}}
    return ExperimentResult(spec, records, aggregate(records), extras)


def type1_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Null data on a random ergodic chain; rejection rate up to the horizon."""
    alpha = spec.alpha if spec.alpha is not None else 0.05
    P = _ergodic_random_chain(spec.m, derive_seed(spec.seed, _CHAIN))
    records = []
    for est in spec.estimators:
        tasks = list(_seq_tasks(spec, P, P, est, alpha, 0, "sequential", "null", 0))
        records.extend(_map(_sequential_trial, tasks, spec.workers))
    agg = aggregate(records)
    for a in agg.values():
        k = a["n_rejected"]
        ci = stats.binomtest(k, a["n"]).proportion_ci(0.95, method="wilson")
        a["ci_low"], a["ci_high"] = float(ci.low), float(ci.high)
        a["slack_bound"] = alpha + 3 * math.sqrt(alpha * (1 - alpha) / a["n"])
    return ExperimentResult(spec, records, agg, {"null_chain": P.tolist(), "alpha": alpha})


def scaling_alternative(eps: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Toy null with an alternative whose second row is ``(q, 1 - q)``."""
    P, _ = toy_chains(eps)
    Q = validate([[eps, 1 - eps], [q, 1 - q]])
    return P, Q


def stopping_time_scaling(spec: ExperimentSpec) -> ExperimentResult:
    """Mean stopping time against ``D_M`` and the normalised ratio
    ``mean_tau * D_M / ln(1 / (alpha D_M))`` per alternative."""
    alpha = spec.alpha if spec.alpha is not None else 0.05
    est = spec.estimators[0]
    tasks = []
    points = {}
    for gi, q in enumerate(spec.grid):
        P, Q = scaling_alternative(spec.epsilon, q)
        points[q] = (stationary_kl(Q, P), stationary_drift(Q, P))
        tasks.extend(_seq_tasks(spec, P, Q, est, alpha, gi, "sequential", f"q={q}", q))
    records = _map(_sequential_trial, tasks, spec.workers)
    agg = aggregate(records)
    for a in agg.values():
        d_m, drift = points[a["grid_value"]]
        a["d_m"], a["drift"] = d_m, drift
        a["normalized"] = (a["mean_tau"] * d_m / math.log(1 / (alpha * d_m))
                           if a["mean_tau"] is not None else None)
    d = np.array([a["d_m"] for a in agg.values()])
    r = np.array([a["normalized"] for a in agg.values()], dtype=float)
    slope = float(np.polyfit(np.log(d), np.log(r), 1)[0]) if len(d) > 1 else 0.0
    return ExperimentResult(spec, records, agg, {"log_log_slope": slope})


def wald_experiment(spec: ExperimentSpec) -> ExperimentResult:
    records, reports = [], {}
    for gi, eps in enumerate(spec.grid):
        P, Q = toy_chains(eps)
        rep = verify_wald_identity(Q, P, spec.horizon, spec.trials,
                                   derive_seed(spec.seed, _SEQ, gi), spec.x0)
        reports[str(eps)] = rep.to_dict()
        for t, v in enumerate(rep.per_trial.tolist()):
            records.append({"product": "wald", "group": f"eps={eps}", "estimator": "oracle",
                            "grid_value": eps, "trial": t,
                            "seed": derive_seed(derive_seed(spec.seed, _SEQ, gi), t),
                            "stopping_time": spec.horizon, "decision": None,
                            "censored": False, "final_log_lr": v, "value": v})
    return ExperimentResult(spec, records, aggregate(records), {"wald": reports})


RUNNERS = {
    "adaptivity": adaptivity_experiment,
    "estimator_sweep": estimator_sweep,
    "type1": type1_experiment,
    "scaling": stopping_time_scaling,
    "wald_verify": wald_experiment,
}


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    return RUNNERS[spec.name](spec)
