"""Networks, estimand variants and realized exposures.

Each estimand variant fixes, for every unit ``i``, three things computed from
the assignment vector ``X``:

* the exposure statistic ``T_i`` (constant, ``X_i`` or ``X`` on the close
  neighborhood),
* membership of ``X`` in the subset ``R_i`` on which the condition must hold,
* the three-level group ``Z_i`` in ``{1, 0, -1}``.

``zbar`` folds the subset into the group: it equals ``Z_i`` inside ``R_i`` and
``-1`` outside.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import sparse

from .errors import ConfigError


class Variant(str, enum.Enum):
    BASIC = "basic"
    BASIC_NETWORK = "basic_network"
    INDIRECT = "indirect"
    NONNEIGHBORS = "nonneighbors"
    CONTROL = "control"
    TREATED = "treated"

    @classmethod
    def parse(cls, name: "str | Variant") -> "Variant":
        if isinstance(name, Variant):
            return name
        key = str(name).strip().lower().replace("-", "_")
        key = {"tr": "treated", "nonneighbor": "nonneighbors"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown estimand variant {name!r}") from None


# variants whose group or subset reads the unit's own treatment
_DIRECT = {Variant.BASIC, Variant.BASIC_NETWORK, Variant.CONTROL, Variant.TREATED}


class NetworkSpec:
    """Close neighborhoods ``eta_i`` (containing ``i``), non-close sets and thresholds.

    ``close[i]`` and ``nonclose[i]`` are stored as sorted tuples. Thresholds
    default to 1.
    """

    def __init__(
        self,
        n: int,
        close: Sequence[Iterable[int]],
        nonclose: Optional[Sequence[Iterable[int]]] = None,
        t: Optional[Sequence[int]] = None,
        t2: Optional[Sequence[int]] = None,
    ):
        self.n = int(n)
        if len(close) != self.n:
            raise ConfigError(f"close neighborhoods given for {len(close)} units, expected {self.n}")
        self.close = tuple(tuple(sorted({int(j) for j in c} | {i})) for i, c in enumerate(close))
        if nonclose is None:
            nonclose = [()] * self.n
        if len(nonclose) != self.n:
            raise ConfigError(f"non-close sets given for {len(nonclose)} units, expected {self.n}")
        self.nonclose = tuple(tuple(sorted({int(j) for j in c})) for c in nonclose)
        self.t = np.ones(self.n, dtype=np.int64) if t is None else np.asarray(t, dtype=np.int64).copy()
        self.t2 = np.ones(self.n, dtype=np.int64) if t2 is None else np.asarray(t2, dtype=np.int64).copy()
        self._validate()
        self._close_matrix = None
        self._far_matrix = None

    def _validate(self) -> None:
        if self.t.shape != (self.n,) or self.t2.shape != (self.n,):
            raise ConfigError("threshold vectors must have one entry per unit")
        if (self.t < 1).any() or (self.t2 < 1).any():
            raise ConfigError("thresholds must be >= 1")
        for i in range(self.n):
            for j in self.close[i] + self.nonclose[i]:
                if not 0 <= j < self.n:
                    raise ConfigError(f"unit {i}: neighbor index {j} out of range [0, {self.n})")
            if set(self.close[i]) & set(self.nonclose[i]):
                raise ConfigError(f"unit {i}: close and non-close neighbor sets overlap")

    def neighbors(self, i: int) -> tuple:
        """Close neighbors of ``i`` excluding ``i`` itself."""
        return tuple(j for j in self.close[i] if j != i)

    @staticmethod
    def _indicator(n: int, rows: Sequence[Sequence[int]]) -> sparse.csr_matrix:
        indptr = np.zeros(n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in rows])
        indices = np.fromiter((j for r in rows for j in r), dtype=np.int64, count=int(indptr[-1]))
        data = np.ones(len(indices), dtype=np.int64)
        return sparse.csr_matrix((data, indices, indptr), shape=(n, n))

    @property
    def close_matrix(self) -> sparse.csr_matrix:
        if self._close_matrix is None:
            self._close_matrix = self._indicator(self.n, [self.neighbors(i) for i in range(self.n)])
        return self._close_matrix

    @property
    def far_matrix(self) -> sparse.csr_matrix:
        if self._far_matrix is None:
            self._far_matrix = self._indicator(self.n, self.nonclose)
        return self._far_matrix

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkSpec):
            return NotImplemented
        return (
            self.n == other.n
            and self.close == other.close
            and self.nonclose == other.nonclose
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.t2, other.t2)
        )

    __hash__ = None


def network_from_edges(
    n: int,
    edges: Iterable[tuple],
    far_edges: Optional[Iterable[tuple]] = None,
    t: Optional[Sequence[int]] = None,
    t2: Optional[Sequence[int]] = None,
    undirected: bool = False,
) -> NetworkSpec:
    """Build a network from an edge list.

    An edge ``(src, dst)`` makes ``dst`` a close neighbor of ``src``. When
    ``far_edges`` is omitted the non-close sets are the distance-2 sets of the
    (directed, or symmetrized when ``undirected``) close graph.
    """
    out = [set() for _ in range(n)]
    for src, dst in edges:
        src, dst = int(src), int(dst)
        if not (0 <= src < n and 0 <= dst < n):
            raise ConfigError(f"edge ({src}, {dst}) references a unit outside [0, {n})")
        if src == dst:
            continue
        out[src].add(dst)
        if undirected:
            out[dst].add(src)
    close = [out[i] | {i} for i in range(n)]
    if far_edges is None:
        far = []
        for i in range(n):
            two = set()
            for j in out[i]:
                two |= out[j]
            far.append(two - close[i])
    else:
        far = [set() for _ in range(n)]
        for src, dst in far_edges:
            src, dst = int(src), int(dst)
            if not (0 <= src < n and 0 <= dst < n):
                raise ConfigError(f"far edge ({src}, {dst}) references a unit outside [0, {n})")
            if src != dst:
                far[src].add(dst)
                if undirected:
                    far[dst].add(src)
    return NetworkSpec(n, close, far, t=t, t2=t2)


@dataclass(frozen=True)
class Counter:
    """A thresholded count: 1{at least ``threshold`` of ``members`` treated}."""

    members: tuple
    threshold: int


class EstimandSpec:
    """One estimand variant together with the network it reads.

    The per-unit structure is exposed through ``tset`` (units whose
    treatments make up ``T_i``), ``direct`` (whether ``X_i`` enters the group
    or subset), ``counter`` (the thresholded count feeding ``Z_i``) and
    ``zbar_rule``.
    """

    def __init__(self, variant: "str | Variant", network: Optional[NetworkSpec] = None, n: Optional[int] = None):
        self.variant = Variant.parse(variant)
        if self.variant is not Variant.BASIC and network is None:
            raise ConfigError(f"variant {self.variant.value} requires a network")
        if network is None and n is None:
            raise ConfigError("unit count required when no network is given")
        if network is not None and n is not None and network.n != n:
            raise ConfigError(f"network has {network.n} units, expected {n}")
        self.network = network
        self.n = network.n if network is not None else int(n)
        self.direct = self.variant in _DIRECT

    def tset(self, i: int) -> tuple:
        if self.variant is Variant.INDIRECT:
            return (i,)
        if self.variant is Variant.NONNEIGHBORS:
            return self.network.close[i]
        return ()

    @property
    def t_constant(self) -> bool:
        return self.variant not in (Variant.INDIRECT, Variant.NONNEIGHBORS)

    def counter(self, i: int) -> Optional[Counter]:
        if self.variant is Variant.BASIC:
            return None
        if self.variant is Variant.NONNEIGHBORS:
            return Counter(self.network.nonclose[i], int(self.network.t2[i]))
        return Counter(self.network.neighbors(i), int(self.network.t[i]))

    def zbar_rule(self, x, w):
        """Group of a unit given its own treatment ``x`` and thresholded count ``w``.

        Works elementwise on numpy arrays as well as on scalars.
        """
        x = np.asarray(x)
        w = np.asarray(w)
        v = self.variant
        if v is Variant.BASIC:
            out = x.astype(np.int8)
        elif v is Variant.BASIC_NETWORK:
            out = np.where(x != w, -1, x).astype(np.int8)
        elif v in (Variant.INDIRECT, Variant.NONNEIGHBORS):
            out = w.astype(np.int8)
        elif v is Variant.CONTROL:
            out = np.where(x == 0, w, -1).astype(np.int8)
        else:
            out = np.where(x == 1, w, -1).astype(np.int8)
        return out if out.ndim else int(out)

    def counts(self, X: np.ndarray) -> np.ndarray:
        """Thresholded counts feeding ``Z`` (``W`` or ``W2``) for 1-D or 2-D ``X``."""
        if self.variant is Variant.BASIC:
            return np.zeros(np.shape(X), dtype=np.int8)
        if self.variant is Variant.NONNEIGHBORS:
            return compute_W2(X, self.network)
        return compute_W(X, self.network)

    def zbar(self, X: np.ndarray) -> np.ndarray:
        """Realized groups for every unit; ``X`` may be one assignment or a stack of them."""
        X = np.asarray(X)
        return self.zbar_rule(X, self.counts(X))

    def __repr__(self) -> str:
        return f"EstimandSpec({self.variant.value!r}, n={self.n})"


@dataclass(frozen=True)
class ExposureRealization:
    """Per-unit realized exposure for one observed assignment."""

    t_value: tuple  # tuple of per-unit tuples: X restricted to the T-set
    zbar: np.ndarray
    w: np.ndarray
    w2: np.ndarray

    @property
    def n(self) -> int:
        return len(self.zbar)


def _thresholded(X: np.ndarray, matrix: sparse.csr_matrix, thresholds: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    if X.shape[-1] != matrix.shape[0]:
        raise ConfigError(f"assignment has length {X.shape[-1]}, expected {matrix.shape[0]}")
    counts = np.asarray(matrix @ X.T.astype(np.int64)).T
    return (counts >= thresholds).astype(np.int8)


def compute_W(X: np.ndarray, network: NetworkSpec) -> np.ndarray:
    """1{at least t_i treated among the close neighbors of i, excluding i}."""
    return _thresholded(X, network.close_matrix, network.t)


def compute_W2(X: np.ndarray, network: NetworkSpec) -> np.ndarray:
    """1{at least t2_i treated among the non-close neighbors of i}."""
    return _thresholded(X, network.far_matrix, network.t2)


def _check_binary(X, name: str, n: int) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim != 1 or len(X) != n:
        raise ConfigError(f"{name} must be a vector of length {n}")
    if not np.isin(X, (0, 1)).all():
        raise ConfigError(f"{name} entries must be 0 or 1")
    return X.astype(np.int8)


def realize_exposures(X, estimand: EstimandSpec) -> ExposureRealization:
    X = _check_binary(X, "X", estimand.n)
    net = estimand.network
    w = compute_W(X, net) if net is not None else np.zeros(estimand.n, dtype=np.int8)
    w2 = compute_W2(X, net) if net is not None else np.zeros(estimand.n, dtype=np.int8)
    t_value = tuple(tuple(int(X[k]) for k in estimand.tset(i)) for i in range(estimand.n))
    return ExposureRealization(t_value=t_value, zbar=estimand.zbar(X), w=w, w2=w2)
