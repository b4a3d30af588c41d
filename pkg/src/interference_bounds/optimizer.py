"""max over phi in {0,1}^N of  v'phi + z sqrt(max(phi'Q phi, floor)).

``v`` is nonnegative and ``Q`` symmetric but indefinite. ``solve_exact``
enumerates every ``phi`` and serves as the oracle for small N.
``solve_branch_bound`` is a depth-first search over variable fixings. If it is
stopped early it still returns a certified upper bound, and the confidence
bound relies only on that upper bound.

Node bound. With ``S`` fixed to one and ``F`` free, any completion satisfies

    phi'Q phi <= Q[S,S] + sum_{i in F} max(0, Q_ii + 2 Q[i,S] + sum_{j in F, j != i} max(Q_ij, 0))

and its linear part is at most ``v[S] + v[F]``.

Fixing rule. Adding a free unit ``i`` changes the quadratic by at least
``d_i = Q_ii + 2 Q[i,S] + 2 sum_{j in F, j != i} min(Q_ij, 0)``. The square
root term loses at most ``z * L(-d_i)``, where ``L`` is the modulus of
continuity of ``sqrt(max(., floor))``. If ``v_i`` covers that loss, some
optimum has ``phi_i = 1``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from .errors import ConfigError, ResourceError


@dataclass
class BinaryProgram:
    v: np.ndarray
    Q: "np.ndarray | sparse.spmatrix"
    z: float
    floor: float = 0.0

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        n = len(self.v)
        Q = self.Q.toarray() if sparse.issparse(self.Q) else np.asarray(self.Q, dtype=float)
        if Q.shape != (n, n):
            raise ConfigError(f"Q has shape {Q.shape}, expected {(n, n)}")
        if (self.v < 0).any():
            raise ConfigError("v must be nonnegative")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-9 * max(1.0, np.abs(Q).max(initial=0.0))):
            raise ConfigError("Q must be symmetric")
        if self.z < 0:
            raise ConfigError("z must be nonnegative")
        self.Q = Q
        self.z = float(self.z)
        self.floor = float(self.floor)

    @property
    def n(self) -> int:
        return len(self.v)


@dataclass
class SolveResult:
    upper_bound: float
    incumbent_value: float
    incumbent_phi: np.ndarray
    status: str  # "optimal" | "budget_exhausted"
    nodes_explored: int
    gap: float = field(init=False)

    def __post_init__(self):
        self.gap = self.upper_bound - self.incumbent_value


def _root(x: float, floor: float) -> float:
    return math.sqrt(max(x, floor, 0.0))


def evaluate_objective(prog: BinaryProgram, phi) -> float:
    phi = np.asarray(phi, dtype=float)
    return float(prog.v @ phi) + prog.z * _root(float(phi @ prog.Q @ phi), prog.floor)


def solve_exact(prog: BinaryProgram, max_n: int = 20, chunk: int = 1 << 14) -> SolveResult:
    """Enumerate all 2^N hypotheses."""
    n = prog.n
    if n > max_n:
        raise ResourceError(f"exhaustive enumeration over N={n} exceeds the cap {max_n}")
    best_val = -math.inf
    best_code = 0
    shifts = np.arange(n)
    floor = max(prog.floor, 0.0)
    for start in range(0, 1 << n, chunk):
        codes = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
        phis = ((codes[:, None] >> shifts) & 1).astype(float)
        quad = np.einsum("ri,ij,rj->r", phis, prog.Q, phis)
        vals = phis @ prog.v + prog.z * np.sqrt(np.maximum(quad, floor))
        idx = int(np.argmax(vals))
        if vals[idx] > best_val:
            best_val = float(vals[idx])
            best_code = int(codes[idx])
    phi = ((best_code >> shifts) & 1).astype(np.int8)
    value = evaluate_objective(prog, phi)
    return SolveResult(value, value, phi, "optimal", 1 << n)


class _Search:
    def __init__(self, prog: BinaryProgram):
        self.prog = prog
        v, Q = prog.v, prog.Q
        # units with no weight and no quadratic coupling never matter
        active = np.flatnonzero((v > 0) | (np.abs(Q).sum(axis=1) > 0))
        self.active = active
        self.v = v[active]
        self.Q = Q[np.ix_(active, active)]
        self.diag = np.diag(self.Q).copy()
        self.qpos = np.maximum(self.Q, 0.0)
        self.qneg = np.minimum(self.Q, 0.0)
        self.z = prog.z
        self.floor = max(prog.floor, 0.0)
        priority = self.v + self.qpos.sum(axis=1)
        self.order = np.lexsort((np.arange(len(active)), -priority))

    def value(self, ones: np.ndarray) -> float:
        phi = np.zeros(self.prog.n)
        phi[self.active[ones]] = 1.0
        return evaluate_objective(self.prog, phi)

    def full_phi(self, ones: np.ndarray) -> np.ndarray:
        phi = np.zeros(self.prog.n, dtype=np.int8)
        phi[self.active[ones]] = 1
        return phi

    def _modulus(self, drop: np.ndarray, lower: float) -> np.ndarray:
        """Largest loss of sqrt(max(x, floor)) when x falls by ``drop`` while staying >= ``lower``."""
        out = np.sqrt(drop)
        base = max(self.floor, lower)
        if base > 0:
            out = np.minimum(out, drop / (2.0 * math.sqrt(base)))
        return out

    def process(self, state: np.ndarray):
        """Apply fixing rules to ``state`` (1 one, 0 zero, -1 free) in place; return (bound, ones)."""
        Q = self.Q
        while True:
            ones = state == 1
            free = state == -1
            rs = Q[:, ones].sum(axis=1)
            if not free.any():
                break
            pos_f = self.qpos[:, free].sum(axis=1) - np.where(free, np.maximum(self.diag, 0.0), 0.0)
            neg_f = self.qneg[:, free].sum(axis=1) - np.where(free, np.minimum(self.diag, 0.0), 0.0)
            base = self.diag + 2.0 * rs
            d_min = base + 2.0 * neg_f
            d_max = base + 2.0 * pos_f
            q_ss = float(rs[ones].sum())
            low = q_ss + float(np.minimum(0.0, (base + neg_f)[free]).sum())
            loss = self.z * self._modulus(np.maximum(-d_min, 0.0), low)
            fix_one = free & ((d_min >= 0) | (self.v >= loss))
            fix_zero = free & ~fix_one & (self.v == 0) & (d_max <= 0)
            if not (fix_one.any() or fix_zero.any()):
                break
            state[fix_one] = 1
            state[fix_zero] = 0
        ones = state == 1
        free = state == -1
        q_ss = float(Q[np.ix_(ones, ones)].sum())
        lin = float(self.v[ones | free].sum())
        if free.any():
            rs = Q[:, ones].sum(axis=1)
            pos_f = self.qpos[:, free].sum(axis=1) - np.maximum(self.diag, 0.0)
            g = (self.diag + 2.0 * rs + pos_f)[free]
            quad = q_ss + float(np.maximum(g, 0.0).sum())
        else:
            quad = q_ss
        return lin + self.z * _root(quad, self.floor), ones | free


def solve_branch_bound(
    prog: BinaryProgram,
    node_limit: int = 200_000,
    time_limit_ms: Optional[float] = None,
    tolerance: Optional[float] = None,
) -> SolveResult:
    """Depth-first branch-and-bound; returns a certified upper bound on the optimum.

    Determinism holds whenever only ``node_limit`` binds.
    """
    if tolerance is None:
        tolerance = 1e-6 * max(prog.n, 1)
    search = _Search(prog)
    m = len(search.active)
    start = time.perf_counter()

    incumbent_ones = np.ones(m, dtype=bool)
    incumbent = search.value(incumbent_ones)
    # one-flip local search from the all-ones start
    improved = True
    while improved and m:
        improved = False
        for idx in search.order:
            trial = incumbent_ones.copy()
            trial[idx] = not trial[idx]
            val = search.value(trial)
            if val > incumbent:
                incumbent, incumbent_ones, improved = val, trial, True

    stack = [(np.full(m, -1, dtype=np.int8), math.inf)]
    nodes = 0
    exhausted = False
    while stack:
        if nodes >= node_limit or (
            time_limit_ms is not None and (time.perf_counter() - start) * 1000.0 >= time_limit_ms
        ):
            exhausted = True
            break
        state, parent_bound = stack.pop()
        nodes += 1
        bound, completion = search.process(state)
        bound = min(bound, parent_bound)
        val = search.value(completion)
        if val > incumbent:
            incumbent, incumbent_ones = val, completion
        if bound <= incumbent:
            continue
        free = np.flatnonzero(state[search.order] == -1)
        if len(free) == 0:
            continue
        pick = search.order[free[0]]
        zero = state.copy()
        zero[pick] = 0
        one = state
        one[pick] = 1
        stack.append((zero, bound))
        stack.append((one, bound))

    if exhausted:
        upper = max([incumbent] + [b for _, b in stack])
        status = "budget_exhausted" if upper - incumbent > tolerance else "optimal"
    else:
        upper = incumbent
        status = "optimal"
    return SolveResult(upper, incumbent, search.full_phi(incumbent_ones), status, nodes)


def dump_instance(prog: BinaryProgram, path) -> None:
    """Plain-text dump: ``N,z[,floor]`` header, the v line, then ``i,j,value`` triplets."""
    with open(path, "w") as fh:
        fh.write(f"{prog.n},{prog.z!r},{prog.floor!r}\n")
        fh.write(",".join(repr(float(x)) for x in prog.v) + "\n")
        rows, cols = np.nonzero(prog.Q)
        for i, j in zip(rows, cols):
            fh.write(f"{i},{j},{float(prog.Q[i, j])!r}\n")


def load_instance(path) -> BinaryProgram:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        n, z = int(header[0]), float(header[1])
        floor = float(header[2]) if len(header) > 2 else 0.0
        line = fh.readline().strip()
        v = np.array([float(x) for x in line.split(",")]) if line else np.zeros(0)
        Q = np.zeros((n, n))
        for rec in fh:
            rec = rec.strip()
            if rec:
                i, j, val = rec.split(",")
                Q[int(i), int(j)] = float(val)
    return BinaryProgram(v, Q, z, floor)
