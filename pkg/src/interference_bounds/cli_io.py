"""File formats, reports and the command-line entry point.

Input CSVs (comma separated, header row, 0-based unit indices):

* units: ``unit,x,y``
* edges: ``src,dst`` (``dst`` is a close neighbor of ``src``)
* far edges (optional): ``src,dst`` (``dst`` is a non-close neighbor of ``src``);
  the default non-close sets are the distance-2 sets of the edge graph
* design: ``unit,p``
* thresholds (optional): ``unit,t`` or ``unit,t,t2``

Reports are ``key=value`` lines. Count-scale and raw numbers use ``repr`` so
they parse back exactly; fraction fields carry 4 decimals.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .design_core import DesignSpec
from .errors import BoundsError, ConfigError
from .estimators import ObservedData
from .exposure import EstimandSpec, NetworkSpec, Variant, network_from_edges
from .inference import BoundReport, InferenceContext, SolverBudget, analyze
from .simulate import ReplicationSummary, SimConfig, run_replications
from .variance import MomentBackend


@dataclass(frozen=True)
class RunConfig:
    mode: str  # "analyze" | "simulate"
    estimand: str = "basic"
    alpha: float = 0.05
    backend: MomentBackend = MomentBackend()
    budget: SolverBudget = SolverBudget()
    units: Optional[str] = None
    edges: Optional[str] = None
    far_edges: Optional[str] = None
    design: Optional[str] = None
    thresholds: Optional[str] = None
    out: Optional[str] = None
    seed: int = 0
    use_threshold: bool = True

    def __post_init__(self):
        if self.mode not in ("analyze", "simulate"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "analyze" and (self.units is None or self.design is None):
            raise ConfigError("analyze mode needs both a units file and a design file")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")


def _read_rows(path, columns: Sequence[str], optional: Sequence[str] = ()) -> list:
    """Rows of integer/float strings keyed by column, with line numbers."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ConfigError(f"{path}: empty file, expected header {','.join(columns)}")
        header = [h.strip() for h in header]
        allowed = list(columns) + list(optional)
        if header[: len(columns)] != list(columns) or any(h not in allowed for h in header):
            raise ConfigError(f"{path}:1: header {','.join(header)!r}, expected {','.join(allowed)!r}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ConfigError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            rows.append((lineno, dict(zip(header, (c.strip() for c in rec)))))
    return rows


def _as_int(value: str, path, lineno: int, name: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{path}:{lineno}: {name}={value!r} is not an integer") from None


def _as_float(value: str, path, lineno: int, name: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{path}:{lineno}: {name}={value!r} is not a number") from None


def _indexed(rows, path, n: Optional[int], what: str) -> dict:
    out = {}
    for lineno, row in rows:
        unit = _as_int(row["unit"], path, lineno, "unit")
        if unit in out:
            raise ConfigError(f"{path}:{lineno}: unit {unit} listed twice")
        out[unit] = (lineno, row)
    size = len(out) if n is None else n
    if sorted(out) != list(range(size)):
        raise ConfigError(f"{path}: {what} must list units 0..{size - 1} exactly once")
    return out


def _edge_list(path, n: int) -> list:
    edges = []
    for lineno, row in _read_rows(path, ("src", "dst")):
        src = _as_int(row["src"], path, lineno, "src")
        dst = _as_int(row["dst"], path, lineno, "dst")
        if not (0 <= src < n and 0 <= dst < n):
            raise ConfigError(f"{path}:{lineno}: edge ({src}, {dst}) references a unit outside 0..{n - 1}")
        edges.append((src, dst))
    return edges


def load_experiment(units, design, edges=None, thresholds=None, far_edges=None):
    """Parse and cross-validate experiment files into ``(ObservedData, NetworkSpec, DesignSpec)``."""
    unit_rows = _indexed(_read_rows(units, ("unit", "x", "y")), units, None, "the units file")
    n = len(unit_rows)
    if n == 0:
        raise ConfigError(f"{units}: no units")
    X = np.zeros(n, dtype=np.int8)
    Y = np.zeros(n, dtype=np.int8)
    for unit, (lineno, row) in unit_rows.items():
        for name, arr in (("x", X), ("y", Y)):
            val = row[name]
            if val not in ("0", "1"):
                raise ConfigError(f"{units}:{lineno}: {name}={val!r} must be 0 or 1")
            arr[unit] = int(val)
    design_rows = _indexed(_read_rows(design, ("unit", "p")), design, n, "the design file")
    p = np.zeros(n)
    for unit, (lineno, row) in design_rows.items():
        p[unit] = _as_float(row["p"], design, lineno, "p")
        if not 0 < p[unit] < 1:
            raise ConfigError(
                f"{design}:{lineno}: unit {unit} has p={row['p']}; every unit needs a treatment "
                "probability strictly between 0 and 1"
            )
    t = t2 = None
    if thresholds is not None:
        rows = _indexed(_read_rows(thresholds, ("unit", "t"), ("t2",)), thresholds, n, "the thresholds file")
        t = np.ones(n, dtype=np.int64)
        t2 = np.ones(n, dtype=np.int64)
        for unit, (lineno, row) in rows.items():
            t[unit] = _as_int(row["t"], thresholds, lineno, "t")
            if "t2" in row:
                t2[unit] = _as_int(row["t2"], thresholds, lineno, "t2")
    edge_list = _edge_list(edges, n) if edges is not None else []
    far = _edge_list(far_edges, n) if far_edges is not None else None
    network = network_from_edges(n, edge_list, far_edges=far, t=t, t2=t2)
    return ObservedData(X, Y), network, DesignSpec(p)


def write_experiment(directory, data: ObservedData, network: NetworkSpec, design: DesignSpec) -> dict:
    """Write the CSV files ``load_experiment`` reads; returns their paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {k: d / f"{k}.csv" for k in ("units", "edges", "far_edges", "design", "thresholds")}
    with open(paths["units"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("unit", "x", "y"))
        w.writerows((i, int(data.X[i]), int(data.Y[i])) for i in range(data.n))
    for key, sets in (("edges", [network.neighbors(i) for i in range(network.n)]), ("far_edges", network.nonclose)):
        with open(paths[key], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("src", "dst"))
            w.writerows((i, j) for i in range(network.n) for j in sets[i])
    with open(paths["design"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("unit", "p"))
        w.writerows((i, repr(float(p))) for i, p in enumerate(design.p))
    with open(paths["thresholds"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("unit", "t", "t2"))
        w.writerows((i, int(network.t[i]), int(network.t2[i])) for i in range(network.n))
    return paths


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_lines(report) -> list:
    """``(key, text)`` pairs for a BoundReport or ReplicationSummary."""
    if isinstance(report, BoundReport):
        lines = [
            ("kind", "bound_report"),
            ("n", _fmt(report.n)),
            ("tau_hat", _fmt(float(report.tau_hat))),
            ("tau_hat_fraction", f"{report.tau_hat_fraction:.4f}"),
            ("ci_lower", _fmt(float(report.ci_lower))),
            ("ci_lower_fraction", f"{report.ci_lower_fraction:.4f}"),
            ("alpha", _fmt(float(report.alpha))),
        ]
        for k in (1, 2):
            br = report.per_k[k]
            res = br.solve
            lines += [
                (f"k{k}.hajek_total", _fmt(float(br.hajek_total))),
                (f"k{k}.upper_bound", _fmt(float(res.upper_bound))),
                (f"k{k}.incumbent_value", _fmt(float(res.incumbent_value))),
                (f"k{k}.gap", _fmt(float(res.gap))),
                (f"k{k}.status", res.status),
                (f"k{k}.nodes_explored", _fmt(res.nodes_explored)),
                (f"k{k}.incumbent_phi", "".join(str(int(b)) for b in res.incumbent_phi)),
            ]
    elif isinstance(report, ReplicationSummary):
        lines = [
            ("kind", "replication_summary"),
            ("n", _fmt(report.n)),
            ("replications", _fmt(report.replications)),
            ("failures", _fmt(report.failures)),
        ]
        for name in ("actual_value_fraction", "bias", "rmse", "coverage", "mean_width"):
            value = float(getattr(report, name))
            lines += [(name, f"{value:.4f}"), (f"{name}.raw", _fmt(value))]
    else:
        raise ConfigError(f"cannot report a {type(report).__name__}")
    lines += [(f"settings.{k}", _fmt(v)) for k, v in report.settings.items()]
    return lines


def emit_report(report, path=None, stream=sys.stdout) -> None:
    """Write the key-value report to ``path`` and a short summary to ``stream``."""
    lines = report_lines(report)
    if path is not None:
        with open(path, "w") as fh:
            fh.writelines(f"{k}={v}\n" for k, v in lines)
    if stream is None:
        return
    if isinstance(report, BoundReport):
        stream.write(
            f"{report.settings.get('estimand', '?')}: estimated affected units {report.tau_hat:.2f} of {report.n} "
            f"({report.tau_hat_fraction:.4f}); one-sided {100 * (1 - report.alpha):g}% lower bound "
            f"{report.ci_lower:.2f} ({report.ci_lower_fraction:.4f})\n"
        )
        for k in (1, 2):
            res = report.per_k[k].solve
            stream.write(f"  branch k={k}: {res.status}, upper bound {res.upper_bound:.4f}, gap {res.gap:.3g}, {res.nodes_explored} nodes\n")
    else:
        stream.write(
            f"{report.estimand} N={report.n}: {report.replications} replications ({report.failures} failed); "
            f"actual {report.actual_value_fraction:.4f}, bias {report.bias:.4f}, RMSE {report.rmse:.4f}, "
            f"coverage {report.coverage:.4f}, mean width {report.mean_width:.4f}\n"
        )


def _parse_value(text: str):
    if text in ("true", "false"):
        return text == "true"
    if text == "none":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_report(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            # bit strings stay strings
            out[key] = value if key.endswith("incumbent_phi") else _parse_value(value)
    return out


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--estimand", default=None, help="basic, basic-network, indirect, nonneighbors, control or treated")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--backend", choices=("linearized", "mc"), default="linearized")
    p.add_argument("--mc-reps", type=int, default=10000)
    p.add_argument("--node-budget", type=int, default=200_000)
    p.add_argument("--time-budget-ms", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-variance-floor", action="store_true", help="disable the variance threshold (research use)")
    p.add_argument("--out", default=None, help="write the key=value report here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="interference-bounds",
        description="Lower confidence bounds on the number of units affected by treatment.",
    )
    sub = parser.add_subparsers(dest="mode", required=True)
    a = sub.add_parser("analyze", help="bound the effect in an observed experiment")
    a.add_argument("--units", required=True)
    a.add_argument("--design", required=True)
    a.add_argument("--edges")
    a.add_argument("--far-edges")
    a.add_argument("--thresholds")
    _add_common(a)
    s = sub.add_parser("simulate", help="run the replication study")
    s.add_argument("--n", type=int, default=250)
    s.add_argument("--replications", type=int, default=500)
    s.add_argument("--scales", default="0.4,0.5,0.5", help="a0,a1,a2 coefficient scales")
    s.add_argument("--min-degree", type=int, default=1)
    s.add_argument("--max-degree", type=int, default=5)
    s.add_argument("--p", type=float, default=0.5)
    s.add_argument("--threshold", type=int, default=1)
    s.add_argument("--threshold2", type=int, default=1)
    s.add_argument("--network-seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--csv", default=None, help="per-replication rows")
    _add_common(s)
    return parser


def _backend(args) -> MomentBackend:
    mode = "monte_carlo" if args.backend == "mc" else "linearized"
    return MomentBackend(mode, args.mc_reps, args.seed)


def _run(args, stream) -> None:
    budget = SolverBudget(args.node_budget, args.time_budget_ms)
    use_threshold = not args.no_variance_floor
    if args.mode == "analyze":
        cfg = RunConfig(
            "analyze",
            estimand=args.estimand or "basic",
            alpha=args.alpha,
            backend=_backend(args),
            budget=budget,
            units=args.units,
            edges=args.edges,
            far_edges=args.far_edges,
            design=args.design,
            thresholds=args.thresholds,
            out=args.out,
            seed=args.seed,
            use_threshold=use_threshold,
        )
        data, network, design = load_experiment(cfg.units, cfg.design, cfg.edges, cfg.thresholds, cfg.far_edges)
        ctx = InferenceContext(design, EstimandSpec(cfg.estimand, network))
        report = analyze(data, ctx, cfg.alpha, cfg.backend, cfg.budget, cfg.use_threshold)
        report.settings.update(
            {"units": cfg.units, "design": cfg.design, "edges": cfg.edges, "far_edges": cfg.far_edges, "thresholds": cfg.thresholds, "seed": cfg.seed}
        )
        emit_report(report, cfg.out, stream)
        return
    try:
        scales = tuple(float(s) for s in args.scales.split(","))
    except ValueError:
        raise ConfigError(f"--scales {args.scales!r} is not three comma-separated numbers") from None
    cfg = SimConfig(
        n=args.n,
        estimand=Variant.parse(args.estimand or "basic_network").value,
        replications=args.replications,
        alpha=args.alpha,
        scales=scales,
        min_degree=args.min_degree,
        max_degree=args.max_degree,
        p=args.p,
        threshold=args.threshold,
        threshold2=args.threshold2,
        network_seed=args.network_seed,
        seed=args.seed,
        backend=_backend(args),
        budget=budget,
        use_threshold=use_threshold,
    )
    summary = run_replications(cfg, n_jobs=args.jobs, csv_path=args.csv)
    emit_report(summary, args.out, stream)


def main(argv: Optional[Sequence[str]] = None, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    args = build_parser().parse_args(argv)
    try:
        _run(args, stream)
    except BoundsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0
