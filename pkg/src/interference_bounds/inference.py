"""Point estimate and one-sided lower confidence bound for the number of affected units.

Both run the same recipe on each branch k in {1, 2}: maximize the Hajek
estimate of the number of unaffected units (plus, for the confidence bound,
``z`` times its estimated standard error) over every hypothesis ``phi``, then
subtract the smaller maximum from N.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

from .design_core import DesignSpec, ExposureModel
from .errors import BoundsError, ConfigError, ResourceError
from .estimators import HajekComponents, ObservedData, hajek_components, tau_contrast
from .exposure import EstimandSpec, ExposureRealization, realize_exposures
from .optimizer import BinaryProgram, SolveResult, solve_branch_bound, solve_exact
from .variance import MomentBackend, build_Q, critical_value, variance_floor


@dataclass(frozen=True)
class SolverBudget:
    node_limit: int = 200_000
    time_limit_ms: Optional[float] = None
    exact: bool = False  # enumerate all hypotheses instead (small N only)

    def __post_init__(self):
        if self.node_limit < 1:
            raise ConfigError("node budget must be at least 1")
        if self.time_limit_ms is not None and self.time_limit_ms <= 0:
            raise ConfigError("time budget must be positive")


class InferenceContext:
    """Design, estimand and the exposure model built from them, shared across calls."""

    def __init__(self, design: DesignSpec, estimand: EstimandSpec, model: Optional[ExposureModel] = None):
        if design.n != estimand.n:
            raise ConfigError(f"design covers {design.n} units but the estimand has {estimand.n}")
        self.design = design
        self.estimand = estimand
        self.model = model if model is not None else ExposureModel(design, estimand)

    def realize(self, data: ObservedData) -> ExposureRealization:
        if data.n != self.estimand.n:
            raise ConfigError(f"data has {data.n} units, expected {self.estimand.n}")
        return realize_exposures(data.X, self.estimand)


@dataclass
class BranchResult:
    k: int
    solve: SolveResult
    hajek_total: float  # v @ 1, the point-estimate optimum on this branch
    value: float  # certified maximum of the penalized objective


@dataclass
class BoundReport:
    n: int
    tau_hat: float
    ci_lower: float
    alpha: float
    per_k: dict
    settings: dict = field(default_factory=dict)

    @property
    def tau_hat_fraction(self) -> float:
        return self.tau_hat / self.n

    @property
    def ci_lower_fraction(self) -> float:
        return self.ci_lower / self.n


def _components(data: ObservedData, ctx: InferenceContext):
    exp = ctx.realize(data)
    return exp, hajek_components(data, exp, ctx.model)


def point_estimate(data: ObservedData, ctx: InferenceContext, components: Optional[HajekComponents] = None) -> float:
    """N minus the smaller Hajek total; equals the absolute Hajek contrast."""
    if components is None:
        exp, components = _components(data, ctx)
    else:
        exp = ctx.realize(data)
    n = data.n
    totals = [math.fsum(components.v[k]) for k in (1, 2)]
    tau_hat = n - min(totals)
    _, contrast = tau_contrast(data, exp, ctx.model, components.propensity)
    if abs(tau_hat - contrast) > 1e-9 * max(n, 1):
        raise BoundsError(f"internal inconsistency: N - min total {tau_hat!r} differs from |contrast| {contrast!r}")
    return tau_hat


def _solve(prog: BinaryProgram, budget: SolverBudget, k: int) -> SolveResult:
    try:
        if budget.exact:
            return solve_exact(prog)
        return solve_branch_bound(prog, node_limit=budget.node_limit, time_limit_ms=budget.time_limit_ms)
    except ResourceError as exc:
        raise ResourceError(f"branch k={k}: {exc}") from exc


def analyze(
    data: ObservedData,
    ctx: InferenceContext,
    alpha: float = 0.05,
    backend: MomentBackend = MomentBackend(),
    budget: SolverBudget = SolverBudget(),
    use_threshold: bool = True,
    z: Optional[float] = None,
) -> BoundReport:
    """Full pipeline for one observed experiment.

    ``z`` overrides the critical value (``z = 0`` collapses the bound onto the
    point estimate).
    """
    if z is None:
        z = critical_value(alpha)
    elif z < 0:
        raise ConfigError("z must be nonnegative")
    if not use_threshold:
        warnings.warn(
            "variance floor disabled; the coverage guarantee applies to the thresholded bound",
            stacklevel=2,
        )
    exp, comps = _components(data, ctx)
    tau_hat = point_estimate(data, ctx, comps)
    n = data.n
    floor = variance_floor(n, alpha) if use_threshold else 0.0
    per_k = {}
    for k in (1, 2):
        spec = build_Q(k, data, exp, ctx.model, backend=backend, z=z, components=comps)
        prog = BinaryProgram(spec.v, spec.Q, z, floor)
        res = _solve(prog, budget, k)
        per_k[k] = BranchResult(k, res, math.fsum(spec.v), res.upper_bound)
    ci_lower = n - min(per_k[k].value for k in (1, 2))
    ci_lower = min(max(0.0, ci_lower), tau_hat)
    settings = {
        "estimand": ctx.estimand.variant.value,
        "alpha": alpha,
        "z": z,
        "backend": backend.mode,
        "mc_reps": backend.replications,
        "mc_seed": backend.seed,
        "node_budget": budget.node_limit,
        "time_budget_ms": budget.time_limit_ms,
        "exact_solver": budget.exact,
        "variance_floor": floor,
        "use_threshold": use_threshold,
    }
    return BoundReport(n=n, tau_hat=tau_hat, ci_lower=ci_lower, alpha=alpha, per_k=per_k, settings=settings)


def lower_confidence_bound(
    data: ObservedData,
    ctx: InferenceContext,
    alpha: float = 0.05,
    backend: MomentBackend = MomentBackend(),
    budget: SolverBudget = SolverBudget(),
    use_threshold: bool = True,
    z: Optional[float] = None,
) -> float:
    return analyze(data, ctx, alpha, backend, budget, use_threshold, z).ci_lower


def make_context(design: DesignSpec, estimand: EstimandSpec) -> InferenceContext:
    return InferenceContext(design, estimand)

