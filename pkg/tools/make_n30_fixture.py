"""Regenerate tests/fixtures/n30_instance.txt and its exact optimum (one-off, ~1 min).

The optimum over all 2^30 hypotheses is found by splitting phi into two
halves of 15 bits: for each left half the quadratic is affine in the
cross term, so all right halves are scored with one matrix product.
"""

import math
import sys
from pathlib import Path

import numpy as np

from interference_bounds.optimizer import BinaryProgram, dump_instance, evaluate_objective

N, H = 30, 15


def instance(seed: int = 20240) -> BinaryProgram:
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(N, N))
    Q = (A + A.T) / 2
    np.fill_diagonal(Q, np.abs(np.diag(Q)) + 0.5)
    v = rng.uniform(0.0, 0.6, N)
    return BinaryProgram(v, Q, 1.96)


def exact_optimum(prog: BinaryProgram):
    Q, v, z = prog.Q, prog.v, prog.z
    codes = np.arange(1 << H, dtype=np.int64)
    half = ((codes[:, None] >> np.arange(H)) & 1).astype(float)
    Qaa, Qab, Qbb = Q[:H, :H], Q[:H, H:], Q[H:, H:]
    qa = np.einsum("ri,ij,rj->r", half, Qaa, half)
    qb = np.einsum("ri,ij,rj->r", half, Qbb, half)
    la, lb = half @ v[:H], half @ v[H:]
    cross = half @ Qab  # left half times Qab
    best, arg = -math.inf, None
    for s in range(0, 1 << H, 512):
        quad = qa[s : s + 512, None] + 2.0 * (cross[s : s + 512] @ half.T) + qb[None, :]
        val = la[s : s + 512, None] + lb[None, :] + z * np.sqrt(np.maximum(quad, 0.0))
        idx = np.unravel_index(int(np.argmax(val)), val.shape)
        if val[idx] > best:
            best, arg = float(val[idx]), (s + idx[0], idx[1])
    phi = np.concatenate([half[arg[0]], half[arg[1]]]).astype(np.int8)
    return evaluate_objective(prog, phi), phi


if __name__ == "__main__":
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures")
    prog = instance()
    value, phi = exact_optimum(prog)
    dump_instance(prog, out / "n30_instance.txt")
    (out / "n30_optimum.txt").write_text(f"{value!r}\n{''.join(map(str, phi))}\n")
    print(value, "".join(map(str, phi)))
