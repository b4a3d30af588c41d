"""Exact exposure probabilities under independent Bernoulli assignment.

Two routes compute the same quantities:

* ``method="dp"`` (default) exploits that every group is a function of the
  unit's own treatment and one thresholded count. Units outside the
  enumerated direct slots are pooled by which counters they feed, and each
  pool contributes a capped Poisson-binomial pmf. Cost does not grow with
  neighborhood size.
* ``method="enumerate"`` walks all ``2^|Gamma_i u Gamma_j|`` local
  assignments. It is capped by ``enumeration_limit`` and serves as the
  independent check of the DP route.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, PositivityError, ResourceError
from .exposure import EstimandSpec, ExposureRealization

ZBAR_LEVELS = (-1, 0, 1)
MIN_CONDITIONING_PROB = 1e-300


class DesignSpec:
    """Independent Bernoulli design, ``p[i] = P(X_i = 1)``."""

    def __init__(self, p: Sequence[float]):
        p = np.asarray(p, dtype=float)
        if p.ndim != 1:
            raise ConfigError("treatment probabilities must be a vector")
        bad = np.flatnonzero(~((p > 0) & (p < 1)))
        if len(bad):
            i = int(bad[0])
            raise ConfigError(
                f"unit {i}: treatment probability {p[i]!r} must lie strictly between 0 and 1 "
                "(treatment probabilities must be bounded away from 0 and 1)"
            )
        self.p = p
        self.p.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.p)

    @property
    def p_min(self) -> float:
        return float(np.minimum(self.p, 1 - self.p).min())

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        shape = (self.n,) if size is None else (size, self.n)
        return (rng.random(shape) < self.p).astype(np.int8)

    def prob_of(self, units: Sequence[int], values: Sequence[int]) -> float:
        """P(X_units = values)."""
        out = 1.0
        for k, x in zip(units, values):
            out *= self.p[k] if x else 1.0 - self.p[k]
        return out


def compute_gamma(estimand: EstimandSpec, i: int) -> frozenset:
    """Dependency neighborhood: units whose treatments fix ``(T_i, Z_i, 1{X in R_i})``."""
    if not 0 <= i < estimand.n:
        raise ConfigError(f"unit index {i} out of range")
    counter = estimand.counter(i)
    members = set(estimand.tset(i))
    if estimand.direct:
        members.add(i)
    if counter is not None:
        members.update(counter.members)
    return frozenset(members)


def capped_pmf(probs: Sequence[float], cap: int) -> list:
    """pmf of a Poisson-binomial count on ``0..cap``; the last cell holds P(count >= cap)."""
    if cap <= 0:
        return [1.0]
    pmf = [1.0] + [0.0] * cap
    for q in probs:
        if q == 0.0:
            continue
        r = 1.0 - q
        for c in range(cap, 0, -1):
            pmf[c] = pmf[c] * (1.0 if c == cap else r) + pmf[c - 1] * q
        pmf[0] *= r
    return pmf


def poisson_binomial_tail(probs: Sequence[float], threshold: int) -> float:
    """P(sum of independent Bernoulli(probs) >= threshold)."""
    threshold = int(threshold)
    if threshold <= 0:
        return 1.0
    if threshold > len(probs):
        return 0.0
    return capped_pmf(probs, threshold)[threshold]


def _tail(pmf: list, s: int) -> float:
    if s <= 0:
        return 1.0
    if s >= len(pmf):
        return 0.0
    return math.fsum(pmf[s:])


@dataclass(frozen=True)
class LocalAssignmentSpace:
    members: tuple
    assignments: np.ndarray  # (2^m, m) uint8
    weights: np.ndarray


def local_assignment_space(members: Sequence[int], design: DesignSpec, limit: int = 24) -> LocalAssignmentSpace:
    members = tuple(sorted(members))
    m = len(members)
    if m > limit:
        raise ResourceError(f"local assignment space of {m} units exceeds the enumeration limit {limit}")
    codes = np.arange(2**m, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(m)) & 1).astype(np.uint8)
    p = design.p[list(members)]
    weights = np.prod(np.where(bits == 1, p, 1.0 - p), axis=1) if m else np.ones(1)
    total = math.fsum(weights)
    if abs(total - 1.0) > 1e-12:
        raise AssertionError(f"assignment weights sum to {total}")
    return LocalAssignmentSpace(members, bits, weights)


@dataclass(frozen=True)
class JointExposure:
    """Joint group probability for a pair together with the exposure-statistic probabilities.

    ``p_event`` is the unconditional P(Zbar_i=a, Zbar_j=b, T_i=t_i, T_j=t_j).
    """

    p_event: float
    p_ti: float
    p_tj: float
    p_titj: float

    @property
    def conditional(self) -> float:
        if self.p_titj < MIN_CONDITIONING_PROB:
            raise PositivityError("conditioning event (T_i, T_j) has probability zero")
        return self.p_event / self.p_titj

    @property
    def t_ratio(self) -> float:
        """P(T_i) P(T_j) / P(T_i, T_j)."""
        if self.p_titj < MIN_CONDITIONING_PROB:
            raise PositivityError("conditioning event (T_i, T_j) has probability zero")
        return self.p_ti * self.p_tj / self.p_titj


class ExposureModel:
    """Design plus estimand, with cached exact probability queries.

    All queries are pure functions of the immutable inputs. Conditioning on
    exposure statistics is done by fixing the treatments in the T-sets, which
    is exact under independent assignment.
    """

    def __init__(self, design: DesignSpec, estimand: EstimandSpec, enumeration_limit: int = 24, method: str = "dp"):
        if design.n != estimand.n:
            raise ConfigError(f"design has {design.n} units but estimand has {estimand.n}")
        if method not in ("dp", "enumerate"):
            raise ConfigError(f"unknown probability method {method!r}")
        self.design = design
        self.estimand = estimand
        self.enumeration_limit = int(enumeration_limit)
        self.method = method
        self.n = design.n
        self._p = [float(x) for x in design.p]
        self._tsets = [estimand.tset(i) for i in range(self.n)]
        self._counters = [estimand.counter(i) for i in range(self.n)]
        self._gammas = [compute_gamma(estimand, i) for i in range(self.n)]
        self._zrule = _scalar_rule(estimand)
        inverse = [[] for _ in range(self.n)]
        for u, g in enumerate(self._gammas):
            for k in g:
                inverse[k].append(u)
        self._inverse_gamma = [tuple(sorted(x)) for x in inverse]
        # conditioned units that can actually move a unit's group
        self._relevant = []
        for i in range(self.n):
            c = self._counters[i]
            feed = set(c.members) if c else set()
            if estimand.direct:
                feed.add(i)
            self._relevant.append(feed)
        self._overlap = {}
        self.engines = {}  # moment engines keyed by backend settings
        self._marginal_cache = lru_cache(maxsize=None)(self._marginal_table_key)
        self._pair_cache = lru_cache(maxsize=None)(self._pair_table_key)

    # structure -----------------------------------------------------------

    def gamma(self, i: int) -> frozenset:
        return self._gammas[i]

    def tset(self, i: int) -> tuple:
        return self._tsets[i]

    def dependents(self, k: int) -> tuple:
        """Units whose dependency neighborhood contains ``k``."""
        return self._inverse_gamma[k]

    def overlapping(self, i: int) -> tuple:
        """Units whose dependency neighborhood meets that of ``i`` (including ``i``)."""
        cached = self._overlap.get(i)
        if cached is None:
            out = set()
            for k in self._gammas[i]:
                out.update(self._inverse_gamma[k])
            cached = self._overlap[i] = tuple(sorted(out))
        return cached

    def marginal_depends_on_t(self, i: int) -> bool:
        return bool(set(self._tsets[i]) & self._relevant[i])

    def _check_t(self, i: int, t) -> tuple:
        if t is None:
            t = ()
        elif np.ndim(t) == 0:
            t = (int(t),)
        else:
            t = tuple(int(x) for x in t)
        ts = self._tsets[i]
        if ts == () and t in ((), (1,)):
            return ()
        if len(t) != len(ts) or any(x not in (0, 1) for x in t):
            raise ConfigError(f"T-value {t} outside the support of T_{i} (expected {len(ts)} binary entries)")
        return t

    def t_probability(self, i: int, t) -> float:
        t = self._check_t(i, t)
        return self.design.prob_of(self._tsets[i], t)

    def t_joint_probability(self, i: int, j: int, t_i, t_j) -> float:
        t_i, t_j = self._check_t(i, t_i), self._check_t(j, t_j)
        cond = dict(zip(self._tsets[i], t_i))
        for k, x in zip(self._tsets[j], t_j):
            if cond.get(k, x) != x:
                return 0.0
            cond[k] = x
        return self.design.prob_of(list(cond), list(cond.values()))

    def t_ratio(self, i: int, j: int, t_i, t_j) -> float:
        """P(T_i) P(T_j) / P(T_i, T_j): the probability of the shared T-coordinates."""
        t_i, t_j = self._check_t(i, t_i), self._check_t(j, t_j)
        tj = dict(zip(self._tsets[j], t_j))
        out = 1.0
        for k, x in zip(self._tsets[i], t_i):
            if k in tj:
                if tj[k] != x:
                    raise PositivityError(f"T_{i} and T_{j} values are not jointly realizable")
                out *= self._p[k] if x else 1.0 - self._p[k]
        return out

    # marginals -----------------------------------------------------------

    def marginal_table(self, i: int, t=None) -> dict:
        """{a: P(Zbar_i = a | T_i = t)} for a in (-1, 0, 1)."""
        t = self._check_t(i, t)
        if self.method == "enumerate":
            joint, pt = self._enumerate(i, None, t, None)
            if pt < MIN_CONDITIONING_PROB:
                raise PositivityError(f"P(T_{i} = {t}) is zero")
            return {a: joint[a + 1][0] / pt for a in ZBAR_LEVELS}
        key = tuple((k, x) for k, x in zip(self._tsets[i], t) if k in self._relevant[i])
        return self._marginal_cache(i, key)

    def _marginal_table_key(self, i: int, key: tuple) -> dict:
        table = self._dp_table(i, None, dict(key))
        return {a: table[a + 1][0] for a in ZBAR_LEVELS}

    def marginal(self, i: int, t, a: int) -> float:
        return self.marginal_table(i, t)[a]

    def propensities(self, realization: ExposureRealization) -> np.ndarray:
        """(N, 2) array of P(Zbar_i = a | T_i) at the realized T, columns a = 0, 1."""
        out = np.empty((self.n, 2))
        for i in range(self.n):
            tab = self.marginal_table(i, realization.t_value[i])
            out[i, 0] = tab[0]
            out[i, 1] = tab[1]
        return out

    # pairs -----------------------------------------------------------------

    def pair_table(self, i: int, j: int, t_i=None, t_j=None) -> np.ndarray:
        """3x3 array of P(Zbar_i = a, Zbar_j = b | T_i, T_j), indexed [a + 1, b + 1]."""
        t_i, t_j = self._check_t(i, t_i), self._check_t(j, t_j)
        ptt = self.t_joint_probability(i, j, t_i, t_j)
        if ptt < MIN_CONDITIONING_PROB:
            raise PositivityError(f"(T_{i}, T_{j}) = ({t_i}, {t_j}) is not realizable")
        if self.method == "enumerate":
            joint, pt = self._enumerate(i, j, t_i, t_j)
            return np.asarray(joint) / pt
        if i == j:
            if t_i != t_j:
                raise PositivityError(f"T_{i} cannot take two values at once")
            m = self.marginal_table(i, t_i)
            return np.diag([m[a] for a in ZBAR_LEVELS])
        if i > j:
            return self.pair_table(j, i, t_j, t_i).T
        cond = dict(zip(self._tsets[i], t_i))
        cond.update(zip(self._tsets[j], t_j))
        feed = self._relevant[i] | self._relevant[j]
        key = tuple(sorted((k, x) for k, x in cond.items() if k in feed))
        return self._pair_cache(i, j, key)

    def _pair_table_key(self, i: int, j: int, key: tuple) -> np.ndarray:
        table = np.asarray(self._dp_table(i, j, dict(key)))
        table.setflags(write=False)
        return table

    def joint(self, i: int, j: int, t_i, t_j, a: int, b: int) -> JointExposure:
        t_i, t_j = self._check_t(i, t_i), self._check_t(j, t_j)
        p_ti = self.t_probability(i, t_i)
        p_tj = self.t_probability(j, t_j)
        ptt = self.t_joint_probability(i, j, t_i, t_j)
        if ptt < MIN_CONDITIONING_PROB:
            return JointExposure(0.0, p_ti, p_tj, ptt)
        if self.method == "enumerate":
            joint, pt = self._enumerate(i, j, t_i, t_j)
            return JointExposure(joint[a + 1][b + 1], p_ti, p_tj, pt)
        cond = self.pair_table(i, j, t_i, t_j)[a + 1, b + 1]
        return JointExposure(float(cond) * ptt, p_ti, p_tj, ptt)

    # engines ---------------------------------------------------------------

    def _dp_table(self, i: int, j: Optional[int], cond: dict) -> list:
        """Conditional group table for unit i (j None) or the pair (i, j).

        ``cond`` fixes treatments of conditioned units. Returns a 3x1 or 3x3
        nested list indexed by zbar + 1.
        """
        p = self._p

        def prob(k):
            return float(cond[k]) if k in cond else p[k]

        pair = j is not None and j != i
        units = [i, j] if pair else [i]
        direct = [u for u in units] if self.estimand.direct else []
        counters = [self._counters[u] for u in units]
        member_sets = [set(c.members) - set(direct) if c else set() for c in counters]
        cap = max([c.threshold for c in counters if c] or [0])

        if pair:
            both = member_sets[0] & member_sets[1]
            only = [member_sets[0] - both, member_sets[1] - both]
        else:
            both = set()
            only = [member_sets[0]]
        pmf_both = capped_pmf([prob(k) for k in sorted(both)], cap)
        pmf_only = [
            capped_pmf([prob(k) for k in sorted(s)], c.threshold if c else 0) for s, c in zip(only, counters)
        ]

        size = 3 if pair else 1
        acc = [[[] for _ in range(size)] for _ in range(3)]
        for xs in itertools.product((0, 1), repeat=len(direct)):
            weight = 1.0
            for u, x in zip(direct, xs):
                q = prob(u)
                weight *= q if x else 1.0 - q
            if weight == 0.0:
                continue
            xval = dict(zip(direct, xs))
            base = [sum(xval[d] for d in direct if c and d in c.members) for c in counters]
            for o, po in enumerate(pmf_both):
                if po == 0.0:
                    continue
                w_probs = []
                for idx, c in enumerate(counters):
                    if c is None:
                        w_probs.append((1.0, 0.0))
                        continue
                    if o == cap and both:
                        p1 = 1.0
                    else:
                        p1 = _tail(pmf_only[idx], c.threshold - base[idx] - o)
                    w_probs.append((1.0 - p1, p1))
                for wi in (0, 1):
                    pi = w_probs[0][wi]
                    if pi == 0.0:
                        continue
                    zi = self._zrule(xval.get(i, 0), wi)
                    if pair:
                        for wj in (0, 1):
                            pj = w_probs[1][wj]
                            if pj == 0.0:
                                continue
                            zj = self._zrule(xval.get(j, 0), wj)
                            acc[zi + 1][zj + 1].append(weight * po * pi * pj)
                    else:
                        acc[zi + 1][0].append(weight * po * pi)
        return [[math.fsum(cell) for cell in row] for row in acc]

    def _enumerate(self, i: int, j: Optional[int], t_i: tuple, t_j: Optional[tuple]):
        """Unconditional P(Zbar_i=a, Zbar_j=b, T_i=t_i, T_j=t_j) by enumeration, plus P(T_i, T_j)."""
        members = set(self._gammas[i])
        if j is not None:
            members |= self._gammas[j]
        space = local_assignment_space(members, self.design, self.enumeration_limit)
        col = {k: c for c, k in enumerate(space.members)}
        bits = space.assignments
        units = [i] if j is None else [i, j]
        ts = [t_i] if j is None else [t_i, t_j]
        match = np.ones(len(bits), dtype=bool)
        zs = []
        for u, t in zip(units, ts):
            for k, x in zip(self._tsets[u], t):
                match &= bits[:, col[k]] == x
            c = self._counters[u]
            if c is None:
                w = np.zeros(len(bits), dtype=np.int8)
            else:
                cnt = bits[:, [col[k] for k in c.members]].sum(axis=1) if c.members else np.zeros(len(bits))
                w = (cnt >= c.threshold).astype(np.int8)
            x = bits[:, col[u]] if u in col else np.zeros(len(bits), dtype=np.uint8)
            zs.append(self.estimand.zbar_rule(x, w))
        weights = space.weights
        pt = math.fsum(weights[match])
        if j is None:
            joint = [[math.fsum(weights[match & (zs[0] == a)])] for a in ZBAR_LEVELS]
        else:
            joint = [[math.fsum(weights[match & (zs[0] == a) & (zs[1] == b)]) for b in ZBAR_LEVELS] for a in ZBAR_LEVELS]
        return joint, pt


def _scalar_rule(estimand: EstimandSpec):
    table = {(x, w): int(estimand.zbar_rule(x, w)) for x in (0, 1) for w in (0, 1)}
    return lambda x, w: table[(x, w)]


def marginal_exposure_prob(i: int, t, a: int, model: ExposureModel) -> float:
    """P(Zbar_i = a | T_i = t)."""
    return model.marginal(i, t, a)


def joint_exposure_prob(i: int, j: int, t_i, t_j, a: int, b: int, model: ExposureModel) -> JointExposure:
    return model.joint(i, j, t_i, t_j, a, b)
