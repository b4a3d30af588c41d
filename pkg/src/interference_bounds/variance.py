"""Variance estimator V_k(phi) = phi' Q phi and its pairwise terms.

For a pair of units realized on branch ``k`` (``zbar_i = Y_ki``), the entry is

    Q_ij = C_ij / P_ij,
    C_ij = E[v_i v_j | T_i, T_j] - E[v_i | T_i] E[v_j | T_j] * P(T_i) P(T_j) / P(T_i, T_j),
    P_ij = P(zbar_i = Y_ki, zbar_j = Y_kj | T_i, T_j).

Pairs not realized on branch ``k`` contribute exactly zero and are never
materialized. The conditional moments of the Hajek factor ``N / N_hat_a``
come from a backend:

``linearized``
    replaces the factor by 1. Moments become propensity ratios and are exact,
    and pairs with disjoint dependency neighborhoods contribute zero.
``monte_carlo``
    averages over design replications that hold the conditioning treatments
    fixed. One set of draws (common random numbers) serves every pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional

import numpy as np
from scipy import sparse

from .design_core import ExposureModel
from .errors import ConfigError, PositivityError
from .estimators import HajekComponents, ObservedData, hajek_components
from .exposure import ExposureRealization


@dataclass(frozen=True)
class MomentBackend:
    mode: str = "linearized"
    replications: int = 10000
    seed: int = 0

    def __post_init__(self):
        mode = {"mc": "monte_carlo"}.get(self.mode, self.mode)
        object.__setattr__(self, "mode", mode)
        if mode not in ("linearized", "monte_carlo"):
            raise ConfigError(f"unknown moment backend {self.mode!r}")
        if mode == "monte_carlo" and self.replications < 1000:
            raise ConfigError("monte_carlo backend needs at least 1000 replications")


@dataclass(frozen=True)
class QuadraticSpec:
    Q: sparse.csr_matrix
    v: np.ndarray
    z: float

    def value(self, phi) -> float:
        phi = np.asarray(phi, dtype=float)
        return float(phi @ (self.Q @ phi))


@dataclass(frozen=True)
class PairMoments:
    e_i: float
    e_j: float
    e_ij: float
    p_ij: float
    t_ratio: float

    @property
    def covariance(self) -> float:
        return self.e_ij - self.e_i * self.e_j * self.t_ratio


def critical_value(alpha: float) -> float:
    """z_{1 - alpha/2}."""
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    return NormalDist().inv_cdf(1 - alpha / 2)


def threshold_variance(V: float, N: int, alpha: float) -> float:
    """max(V, 1.01 N^(2/3 + 0.01) / (z^2 alpha / 2))."""
    return max(V, variance_floor(N, alpha))


def variance_floor(N: int, alpha: float) -> float:
    z = critical_value(alpha)
    return 1.01 * N ** (2 / 3 + 0.01) / (z * z * alpha / 2)


class MonteCarloMoments:
    """Moments of v_i = (N / N_hat_a) 1{zbar_i = a} / P(zbar_i = a | T_i) by simulation.

    Draws are shared across all queries. Conditioning on exposure statistics
    overrides the conditioned treatment columns and updates only the units
    whose dependency neighborhood is touched.
    """

    def __init__(self, model: ExposureModel, replications: int = 10000, seed: int = 0):
        self.model = model
        self.n = model.n
        rng = np.random.default_rng(seed)
        self.X = model.design.sample(rng, replications)
        self.reps = replications
        self.zbar = model.estimand.zbar(self.X)
        if any(model.marginal_depends_on_t(i) for i in range(self.n)):
            raise ConfigError("monte_carlo backend requires propensities that do not vary with T")
        self.pi = np.empty((self.n, 2))
        for i in range(self.n):
            tab = model.marginal_table(i, (0,) * len(model.tset(i)))
            self.pi[i] = tab[0], tab[1]
        # a level with zero propensity is never realized, so its weight is never used
        self.inv_pi = np.divide(1.0, self.pi, out=np.zeros_like(self.pi), where=self.pi > 0)
        self.contrib = [np.where(self.zbar == a, self.inv_pi[:, a], 0.0) for a in (0, 1)]
        self.n_hat = [c.sum(axis=1) for c in self.contrib]
        self._gram = None
        self._means = None
        self._single = {}

    def _scale(self, n_hat: np.ndarray) -> np.ndarray:
        out = np.zeros_like(n_hat)
        np.divide(self.n, n_hat, out=out, where=n_hat > 0)
        return out

    def constant_t_tables(self):
        """Means and Gram matrix of the v columns, indexed ``a * N + i``."""
        if self._gram is None:
            M = np.hstack([self._scale(self.n_hat[a])[:, None] * self.contrib[a] for a in (0, 1)])
            self._means = M.mean(axis=0)
            self._gram = (M.T @ M) / self.reps
        return self._means, self._gram

    def _columns(self, cond: dict, requests: list) -> list:
        """Per-draw v columns for (unit, level) requests with ``cond`` treatments fixed."""
        model = self.model
        est = model.estimand
        if not cond:
            return [self._scale(self.n_hat[a]) * self.contrib[a][:, u] for u, a in requests]
        affected = sorted(set().union(*(model.dependents(k) for k in cond)))

        def column(k):
            if k in cond:
                return np.full(self.reps, cond[k], dtype=np.int8)
            return self.X[:, k]

        new = {}
        n_hat = [h.copy() for h in self.n_hat]
        for u in affected:
            c = est.counter(u)
            if c is None:
                w = np.zeros(self.reps, dtype=np.int8)
            else:
                cnt = np.zeros(self.reps, dtype=np.int64)
                for k in c.members:
                    cnt += column(k)
                w = (cnt >= c.threshold).astype(np.int8)
            z = est.zbar_rule(column(u), w)
            for a in (0, 1):
                fresh = np.where(z == a, self.inv_pi[u, a], 0.0)
                n_hat[a] += fresh - self.contrib[a][:, u]
                new[u, a] = fresh
        scale = [self._scale(h) for h in n_hat]
        return [scale[a] * (new[u, a] if (u, a) in new else self.contrib[a][:, u]) for u, a in requests]

    def mean_v(self, i: int, t_i, a: int) -> float:
        model = self.model
        if model.estimand.t_constant:
            means, _ = self.constant_t_tables()
            return float(means[a * self.n + i])
        key = (i, tuple(t_i), a)
        if key not in self._single:
            cond = dict(zip(model.tset(i), t_i))
            (col,) = self._columns(cond, [(i, a)])
            self._single[key] = float(col.mean())
        return self._single[key]

    def mean_vv(self, i: int, j: int, t_i, t_j, a: int, b: int) -> float:
        model = self.model
        if model.estimand.t_constant:
            _, gram = self.constant_t_tables()
            return float(gram[a * self.n + i, b * self.n + j])
        cond = dict(zip(model.tset(i), t_i))
        cond.update(zip(model.tset(j), t_j))
        ci, cj = self._columns(cond, [(i, a), (j, b)])
        return float(np.mean(ci * cj))


def monte_carlo_engine(model: ExposureModel, backend: MomentBackend) -> MonteCarloMoments:
    """Engine shared by every query against the same model and backend settings."""
    key = (backend.replications, backend.seed)
    engine = model.engines.get(key)
    if engine is None:
        engine = model.engines[key] = MonteCarloMoments(model, backend.replications, backend.seed)
    return engine


def conditional_moments(
    i: int,
    j: int,
    k: int,
    backend: MomentBackend,
    data: ObservedData,
    exp: ExposureRealization,
    model: ExposureModel,
    propensity: Optional[np.ndarray] = None,
) -> PairMoments:
    """E[v_i | T_i], E[v_j | T_j], E[v_i v_j | T_i, T_j], P_ij and the T-ratio for a realized pair."""
    y = data.outcome(k)
    a, b = int(y[i]), int(y[j])
    if exp.zbar[i] != a or exp.zbar[j] != b:
        raise ConfigError(f"pair ({i}, {j}) is not realized on branch {k}")
    t_i, t_j = exp.t_value[i], exp.t_value[j]
    if propensity is None:
        q_i = model.marginal(i, t_i, a)
        q_j = model.marginal(j, t_j, b)
    else:
        q_i, q_j = propensity[i, a], propensity[j, b]
    disjoint = not (model.gamma(i) & model.gamma(j))
    if disjoint:
        p_ij = q_i * q_j
        ratio = 1.0
    else:
        p_ij = float(model.pair_table(i, j, t_i, t_j)[a + 1, b + 1])
        ratio = model.t_ratio(i, j, t_i, t_j)
    if p_ij <= 0:
        raise PositivityError(f"realized pair ({i}, {j}) has zero joint propensity")
    if backend.mode == "linearized":
        return PairMoments(1.0, 1.0, p_ij / (q_i * q_j), p_ij, ratio)
    engine = monte_carlo_engine(model, backend)
    return PairMoments(
        engine.mean_v(i, t_i, a),
        engine.mean_v(j, t_j, b),
        engine.mean_vv(i, j, t_i, t_j, a, b),
        p_ij,
        ratio,
    )


def build_Q(
    k: int,
    data: ObservedData,
    exp: ExposureRealization,
    model: ExposureModel,
    backend: MomentBackend = MomentBackend(),
    z: float = critical_value(0.05),
    components: Optional[HajekComponents] = None,
) -> QuadraticSpec:
    """Assemble the sparse matrix Q and weight vector v for branch ``k``."""
    if components is None:
        components = hajek_components(data, exp, model)
    propensity = components.propensity
    y = data.outcome(k)
    realized = np.flatnonzero(exp.zbar == y)
    is_realized = np.zeros(data.n, dtype=bool)
    is_realized[realized] = True
    rows, cols, vals = [], [], []

    def put(i, j, value):
        rows.append(i)
        cols.append(j)
        vals.append(value)
        if i != j:
            rows.append(j)
            cols.append(i)
            vals.append(value)

    if backend.mode == "linearized":
        for i in realized:
            i = int(i)
            a = int(y[i])
            q_i = propensity[i, a]
            put(i, i, (1.0 / q_i - model.t_probability(i, exp.t_value[i])) / q_i)
            for j in model.overlapping(i):
                if j <= i or not is_realized[j]:
                    continue
                b = int(y[j])
                q_j = propensity[j, b]
                p_ij = float(model.pair_table(i, j, exp.t_value[i], exp.t_value[j])[a + 1, b + 1])
                if p_ij <= 0:
                    raise PositivityError(f"realized pair ({i}, {j}) has zero joint propensity")
                ratio = model.t_ratio(i, j, exp.t_value[i], exp.t_value[j])
                put(i, j, 1.0 / (q_i * q_j) - ratio / p_ij)
    elif model.estimand.t_constant:
        # every moment is a Gram-matrix entry, so the realized block is filled at once
        means, gram = monte_carlo_engine(model, backend).constant_t_tables()
        levels = y[realized].astype(np.int64)
        col = levels * data.n + realized
        q = propensity[realized, levels]
        P = np.outer(q, q)
        np.fill_diagonal(P, q)
        pos = {int(u): idx for idx, u in enumerate(realized)}
        for idx, i in enumerate(realized):
            i = int(i)
            for j in model.overlapping(i):
                jdx = pos.get(j)
                if jdx is None or j <= i:
                    continue
                P[idx, jdx] = P[jdx, idx] = float(model.pair_table(i, j)[levels[idx] + 1, levels[jdx] + 1])
        if (P <= 0).any():
            raise PositivityError("a realized pair has zero joint propensity")
        C = gram[np.ix_(col, col)] - np.outer(means[col], means[col])
        block = C / P
        r, c = np.meshgrid(realized, realized, indexing="ij")
        rows, cols, vals = r.ravel(), c.ravel(), block.ravel()
    else:
        for idx, i in enumerate(realized):
            i = int(i)
            for j in realized[idx:]:
                m = conditional_moments(i, int(j), k, backend, data, exp, model, propensity)
                put(i, int(j), m.covariance / m.p_ij)
    Q = sparse.coo_matrix((vals, (rows, cols)), shape=(data.n, data.n)).tocsr()
    return QuadraticSpec(Q=Q, v=components.v[k], z=z)
