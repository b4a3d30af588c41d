"""Simulation study: random networks, threshold outcome models, exact ground truth.

Outcomes follow ``Y_i = 1{u_i <= a0_i + a1_i X_i + a2_i W_i}``. For the
nonneighbors estimand ``W_i`` is replaced by the pooled exposure over the
close and non-close sets (own treatment excluded), thresholded at ``t_i``.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import sparse

from .design_core import DesignSpec
from .errors import BoundsError, ConfigError
from .estimators import ObservedData
from .exposure import EstimandSpec, NetworkSpec, Variant, compute_W, network_from_edges
from .inference import InferenceContext, SolverBudget, analyze
from .variance import MomentBackend


@dataclass(frozen=True)
class OutcomeModelParams:
    u: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray


@dataclass(frozen=True)
class SimConfig:
    n: int = 250
    estimand: str = "basic_network"
    replications: int = 500
    alpha: float = 0.05
    scales: tuple = (0.4, 0.5, 0.5)
    min_degree: int = 1
    max_degree: int = 5
    p: float = 0.5
    threshold: int = 1
    threshold2: int = 1
    network_seed: int = 0
    seed: int = 0
    backend: MomentBackend = field(default_factory=MomentBackend)
    budget: SolverBudget = field(default_factory=SolverBudget)
    use_threshold: bool = True

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError("simulation needs at least 2 units")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if len(self.scales) != 3 or any(s < 0 for s in self.scales):
            raise ConfigError("scales must be three nonnegative numbers")
        if not 1 <= self.min_degree <= self.max_degree < self.n:
            raise ConfigError("need 1 <= min_degree <= max_degree < n")
        if not 0 < self.p < 1:
            raise ConfigError("treatment probability must lie in (0, 1)")
        if self.threshold < 1 or self.threshold2 < 1:
            raise ConfigError("thresholds must be >= 1")
        Variant.parse(self.estimand)


@dataclass
class ReplicationRecord:
    rep: int
    tau_true: float
    tau_hat: float
    ci_lower: float
    solver_status_k1: str
    solver_status_k2: str
    wall_ms: float


@dataclass
class ReplicationSummary:
    n: int
    estimand: str
    replications: int
    failures: int
    actual_value_fraction: float
    bias: float  # mean (tau - tau_hat) / N; positive means the estimate undershoots
    rmse: float
    coverage: float
    mean_width: float
    records: list = field(default_factory=list, repr=False)
    settings: dict = field(default_factory=dict)


def generate_network(cfg: SimConfig) -> NetworkSpec:
    """Directed network: every unit names a uniform number of distinct random partners."""
    rng = np.random.default_rng([cfg.network_seed, 0x6E6574])
    edges = []
    for i in range(cfg.n):
        d = int(rng.integers(cfg.min_degree, cfg.max_degree + 1))
        others = rng.choice(cfg.n - 1, size=d, replace=False)
        edges.extend((i, int(j + (j >= i))) for j in others)
    t = np.full(cfg.n, cfg.threshold)
    t2 = np.full(cfg.n, cfg.threshold2)
    return network_from_edges(cfg.n, edges, t=t, t2=t2)


def generate_model(cfg: SimConfig, rng: np.random.Generator) -> OutcomeModelParams:
    n = cfg.n
    u = rng.uniform(0.0, 1.0, n)
    a0, a1, a2 = (rng.uniform(0.0, 1.0, n) * s for s in cfg.scales)
    return OutcomeModelParams(u=u, a0=a0, a1=a1, a2=a2)


def _pooled_matrix(network: NetworkSpec) -> sparse.csr_matrix:
    return (network.close_matrix + network.far_matrix).tocsr()


def spillover(X: np.ndarray, network: NetworkSpec, estimand: EstimandSpec) -> np.ndarray:
    """The neighbor exposure the outcome model reads (``W`` or the pooled version)."""
    if estimand.variant is Variant.NONNEIGHBORS:
        counts = np.asarray(_pooled_matrix(network) @ np.asarray(X, dtype=np.int64).T).T
        return (counts >= network.t).astype(np.int8)
    return compute_W(X, network)


def outcome_rule(params: OutcomeModelParams, x, w):
    return (params.u <= params.a0 + params.a1 * x + params.a2 * w).astype(np.int8)


def generate_outcomes(params: OutcomeModelParams, X: np.ndarray, network: NetworkSpec, estimand: EstimandSpec) -> np.ndarray:
    return outcome_rule(params, np.asarray(X), spillover(X, network, estimand))


def ground_truth(params: OutcomeModelParams, network: NetworkSpec, estimand: EstimandSpec):
    """Exact ``(phi_star, tau)`` by case analysis over the reachable (x, w) cells."""
    n = network.n
    g = [[outcome_rule(params, x, w) for w in (0, 1)] for x in (0, 1)]
    differs = [g[x][0] != g[x][1] for x in (0, 1)]
    own = (g[0][0] != g[1][0]) | (g[0][1] != g[1][1])
    variant = estimand.variant
    m1 = np.array([len(network.neighbors(i)) for i in range(n)])
    if variant is Variant.NONNEIGHBORS:
        m2 = np.array([len(network.nonclose[i]) for i in range(n)])
        t = network.t
        # some fixed close-neighbor count lets the far units flip the pooled exposure
        flexible = np.maximum(0, t - m2) <= np.minimum(m1, t - 1)
        affected = flexible & (differs[0] | differs[1])
    else:
        w_free = m1 >= network.t  # both w values are reachable
        if variant in (Variant.BASIC, Variant.BASIC_NETWORK):
            # w = 0 is always reachable; w = 1 only when enough neighbors exist
            affected = (g[0][0] != g[1][0]) | (w_free & (own | differs[0] | differs[1]))
        elif variant is Variant.INDIRECT:
            affected = w_free & (differs[0] | differs[1])
        elif variant is Variant.CONTROL:
            affected = w_free & differs[0]
        else:
            affected = w_free & differs[1]
    phi_star = (~affected).astype(np.int8)
    return phi_star, int(affected.sum())


class _Runner:
    """State shared by every replication of one configuration."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.network = generate_network(cfg)
        self.estimand = EstimandSpec(cfg.estimand, self.network)
        self.design = DesignSpec(np.full(cfg.n, cfg.p))
        self.ctx = InferenceContext(self.design, self.estimand)

    def run(self, r: int) -> ReplicationRecord:
        cfg = self.cfg
        start = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, r])
        params = generate_model(cfg, rng)
        X = self.design.sample(rng)
        Y = generate_outcomes(params, X, self.network, self.estimand)
        _, tau = ground_truth(params, self.network, self.estimand)
        try:
            report = analyze(ObservedData(X, Y), self.ctx, cfg.alpha, cfg.backend, cfg.budget, cfg.use_threshold)
        except BoundsError as exc:
            fail = f"failed:{type(exc).__name__}"
            return ReplicationRecord(r, tau, math.nan, math.nan, fail, fail, (time.perf_counter() - start) * 1000)
        return ReplicationRecord(
            r,
            tau,
            report.tau_hat,
            report.ci_lower,
            report.per_k[1].solve.status,
            report.per_k[2].solve.status,
            (time.perf_counter() - start) * 1000,
        )


_WORKER: Optional[_Runner] = None


def _init_worker(cfg: SimConfig) -> None:
    global _WORKER
    _WORKER = _Runner(cfg)


def _run_in_worker(r: int) -> ReplicationRecord:
    return _WORKER.run(r)


def summarize(records: list, cfg: SimConfig) -> ReplicationSummary:
    ok = sorted((rec for rec in records if not math.isnan(rec.tau_hat)), key=lambda rec: rec.rep)
    n = cfg.n
    m = len(ok)

    def mean(values) -> float:
        return math.fsum(values) / m if m else math.nan

    errors = [(rec.tau_true - rec.tau_hat) / n for rec in ok]
    return ReplicationSummary(
        n=n,
        estimand=Variant.parse(cfg.estimand).value,
        replications=m,
        failures=len(records) - m,
        actual_value_fraction=mean(rec.tau_true / n for rec in ok),
        bias=mean(errors),
        rmse=math.sqrt(mean(e * e for e in errors)) if m else math.nan,
        coverage=mean(1.0 if rec.ci_lower <= rec.tau_true else 0.0 for rec in ok),
        mean_width=mean((rec.tau_hat - rec.ci_lower) / n for rec in ok),
        records=sorted(records, key=lambda rec: rec.rep),
        settings=config_settings(cfg),
    )


def config_settings(cfg: SimConfig) -> dict:
    return {
        "n": cfg.n,
        "estimand": Variant.parse(cfg.estimand).value,
        "replications": cfg.replications,
        "alpha": cfg.alpha,
        "scales": ",".join(repr(float(s)) for s in cfg.scales),
        "min_degree": cfg.min_degree,
        "max_degree": cfg.max_degree,
        "p": cfg.p,
        "threshold": cfg.threshold,
        "threshold2": cfg.threshold2,
        "network_seed": cfg.network_seed,
        "seed": cfg.seed,
        "backend": cfg.backend.mode,
        "mc_reps": cfg.backend.replications,
        "mc_seed": cfg.backend.seed,
        "node_budget": cfg.budget.node_limit,
        "time_budget_ms": cfg.budget.time_limit_ms,
        "use_threshold": cfg.use_threshold,
    }


def run_replications(cfg: SimConfig, n_jobs: int = 1, csv_path=None) -> ReplicationSummary:
    """Run ``cfg.replications`` independent replications; replication ``r`` uses seed ``(seed, r)``."""
    reps = range(cfg.replications)
    if n_jobs <= 1:
        runner = _Runner(cfg)
        records = [runner.run(r) for r in reps]
    else:
        with ProcessPoolExecutor(n_jobs, initializer=_init_worker, initargs=(cfg,)) as pool:
            records = list(pool.map(_run_in_worker, reps, chunksize=max(1, cfg.replications // (4 * n_jobs))))
    summary = summarize(records, cfg)
    if csv_path is not None:
        write_replications_csv(summary.records, csv_path)
    return summary


CSV_FIELDS = ("rep", "tau_true", "tau_hat", "ci_lower", "solver_status_k1", "solver_status_k2", "wall_ms")


def write_replications_csv(records: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for rec in records:
            writer.writerow(
                [rec.rep, rec.tau_true, repr(rec.tau_hat), repr(rec.ci_lower), rec.solver_status_k1, rec.solver_status_k2, f"{rec.wall_ms:.3f}"]
            )


def with_estimand(cfg: SimConfig, estimand: str) -> SimConfig:
    return replace(cfg, estimand=estimand)
