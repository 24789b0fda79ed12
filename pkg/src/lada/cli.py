"""Command-line experiment runner.

Example::

    lada --algorithm lada --n 250,500,1000 --seeds 1-5 --eps 1e-3 --out results
    lada --algorithm grid-lada --k 4,8,16 --metrics mix,fill
    lada --n 300 --r-rule sqrt2logn --seeds 7 --dump-network net.json

Every run is one CSV row carrying its full parameter tuple; the JSON summary
holds per-point medians and a log-log fit of averaging time against the
scale variable (k on grids, 1/r on geometric graphs).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import engine, lifting, metrics
from .clustering import (
    RESAMPLE_STRIDE,
    EmptyCellError,
    build_induced_graph,
    distributed_clustering,
    run_centralized_grid,
    run_clada,
    sample_clustered,
    tessellation_clusters,
)
from .topology import (
    EmptyDirectionError,
    classify_neighbors,
    connectivity_radius,
    default_radius,
    make_grid,
    make_rng,
    sample_geometric,
)

log = logging.getLogger("lada")

ALGORITHMS = ("grid-lada", "lada", "lada-u", "clada", "centralized-grid", "baseline-metropolis")
GEOMETRIC_ONLY = {"lada", "lada-u", "clada", "centralized-grid"}
R_RULES = {"sqrt2logn": connectivity_radius, "2sqrtlogn": default_radius}
METRICS = ("mix", "fill", "conductance", "stationary")
X0_MODES = ("corner", "random", "worst")

COLUMNS = [
    "algorithm", "topology", "k", "n", "r_rule", "r", "p_rule", "p", "eps", "seed", "max_iter", "x0",
    "status", "t_ave", "final_error", "resamples", "clusters", "adjacent_pairs",
    "messages_init", "messages_per_iter", "messages_total", "message_bound", "message_bound_ok",
    "t_mix", "t_fill", "conductance_axis", "stationary_ratio", "error",
]


class SpecError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentSpec:
    algorithm: str = "lada"
    k: list = field(default_factory=list)
    n: list = field(default_factory=list)
    r_rule: str = "2sqrtlogn"
    p_rule: str = "half-r"
    eps: float = 1e-3
    seeds: list = field(default_factory=lambda: [0])
    max_iter: int = 10_000
    metrics: list = field(default_factory=list)
    x0: str = "corner"
    out: str = "lada-out"
    traces: bool = False
    jobs: int = 1
    dump_network: Optional[str] = None

    @property
    def topology(self) -> str:
        return "grid" if self.k else "geometric"

    def validate(self) -> "ExperimentSpec":
        if self.algorithm not in ALGORITHMS:
            raise SpecError("algorithm", f"expected one of {', '.join(ALGORITHMS)}, got {self.algorithm!r}")
        if self.k and self.n:
            raise SpecError("k", "give either --k (grid) or --n (geometric), not both")
        if not self.k and not self.n:
            raise SpecError("n", "need --k for a grid or --n for a geometric network")
        if self.algorithm == "grid-lada" and not self.k:
            raise SpecError("k", "grid-lada runs on a k x k grid")
        if self.algorithm in GEOMETRIC_ONLY and not self.n:
            raise SpecError("n", f"{self.algorithm} needs a geometric network")
        if any(k < 2 for k in self.k):
            raise SpecError("k", "grid side must be at least 2")
        if any(n < 2 for n in self.n):
            raise SpecError("n", "need at least 2 nodes")
        parse_rule(self.r_rule, "r_rule", tuple(R_RULES))
        parse_rule(self.p_rule, "p_rule", ("half-r", "mu-alpha"))
        if not 0 <= self.eps < 1:
            raise SpecError("eps", "must lie in [0, 1); 0 runs exactly max_iter iterations")
        if not self.seeds:
            raise SpecError("seeds", "need at least one seed")
        if self.max_iter < 1:
            raise SpecError("max_iter", "must be positive")
        if self.jobs < 1:
            raise SpecError("jobs", "must be positive")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise SpecError("metrics", f"unknown metric {bad[0]!r}; choose from {', '.join(METRICS)}")
        if self.x0 not in X0_MODES:
            raise SpecError("x0", f"expected one of {', '.join(X0_MODES)}")
        if self.x0 == "worst" and self.algorithm not in ("grid-lada", "lada-u", "baseline-metropolis"):
            raise SpecError("x0", "worst-case starts need a doubly stochastic chain")
        return self

    def points(self) -> list:
        return [("k", k) for k in self.k] or [("n", n) for n in self.n]


def parse_rule(text: str, field_name: str, named: tuple):
    """Return ("name", None) for a named rule or ("fixed", value) for fixed(v) / fixed:v."""
    if text in named:
        return text, None
    m = re.fullmatch(r"fixed[(:]\s*([0-9.eE+-]+)\s*\)?", text)
    if m:
        try:
            value = float(m.group(1))
        except ValueError:
            value = math.nan
        if not value > 0:
            raise SpecError(field_name, f"fixed value must be positive, got {m.group(1)!r}")
        return "fixed", value
    raise SpecError(field_name, f"expected one of {', '.join(named)} or fixed(value), got {text!r}")


def parse_int_list(text: str, field_name: str) -> list:
    """Comma-separated integers with inclusive ranges, e.g. ``1-5,8``."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if re.fullmatch(r"\d+-\d+", part):
                lo, hi = map(int, part.split("-"))
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise SpecError(field_name, f"not an integer list: {text!r}") from None
    return out


def radius_for(spec: ExperimentSpec, n: int) -> float:
    kind, value = parse_rule(spec.r_rule, "r_rule", tuple(R_RULES))
    return value if kind == "fixed" else R_RULES[kind](n)


def turn_for(spec: ExperimentSpec, r: float) -> float:
    kind, value = parse_rule(spec.p_rule, "p_rule", ("half-r", "mu-alpha"))
    p = value if kind == "fixed" else lifting.turning_probability(r, kind)
    return min(p, 1.0)


# -- single runs ----------------------------------------------------------------


def _initial_values(spec: ExperimentSpec, net, seed: int) -> np.ndarray:
    x0 = np.zeros(net.n)
    if spec.x0 == "random":
        return make_rng(seed).random(net.n)
    x0[int(np.argmin(net.positions.sum(axis=1)))] = 1.0
    return x0


def _network(spec: ExperimentSpec, key: str, value: int, seed: int):
    if key == "k":
        return make_grid(value), None
    r = radius_for(spec, value)
    return sample_geometric(value, r, seed=seed), r


def _chain_for(spec: ExperimentSpec, net, r: Optional[float], p: Optional[float]):
    if spec.algorithm == "grid-lada":
        return lifting.build_grid_chain(net.k)
    if spec.algorithm == "baseline-metropolis":
        return lifting.build_baseline_chain(net)
    nbrs = classify_neighbors(net)
    if spec.algorithm == "lada":
        return lifting.build_lada_chain(net, nbrs, p)
    return lifting.build_ladau_chain(net, nbrs, p)


def _chain_metrics(row: dict, spec: ExperimentSpec, chain, net):
    if not spec.metrics or chain is None:
        return
    pi = lifting.stationary(chain)
    if "stationary" in spec.metrics:
        row["stationary_ratio"] = pi.stats()["ratio"]
    small = chain.n_states <= metrics.STATE_CAP
    if "mix" in spec.metrics and small:
        row["t_mix"] = metrics.mixing_time(chain, spec.eps, pi=pi)
    if "fill" in spec.metrics and small:
        row["t_fill"] = metrics.fill_time(chain, 0.5, pi=pi)
    if "conductance" in spec.metrics:
        row["conductance_axis"] = metrics.axis_cut_conductance(chain, net.positions, pi)


def run_one(spec: ExperimentSpec, key: str, value: int, seed: int) -> dict:
    """Execute one (parameter point, seed) run and return its CSV row."""
    row = dict.fromkeys(COLUMNS, "")
    row.update(
        algorithm=spec.algorithm, topology=spec.topology, eps=spec.eps, seed=seed,
        max_iter=spec.max_iter, x0=spec.x0, r_rule=spec.r_rule, p_rule=spec.p_rule,
    )
    row[key] = value
    try:
        _run_into(row, spec, key, value, seed)
    except Exception as exc:  # reported in the row, the sweep keeps going
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _run_into(row: dict, spec: ExperimentSpec, key: str, value: int, seed: int):
    cl = None
    if spec.algorithm == "centralized-grid":
        r = radius_for(spec, value)
        net, cl, tries = _tessellate(spec, value, r, seed)
    elif spec.algorithm == "clada":
        r = radius_for(spec, value)
        net, cl, tries = sample_clustered(value, r, seed)
    else:
        net, r = _network(spec, key, value, seed)
        tries = 0
    row["n"] = net.n
    row["resamples"] = net.resamples + tries
    if r is not None:
        row["r"] = r
    p = None
    if spec.algorithm in ("lada", "lada-u", "clada"):
        p = turn_for(spec, r)
        row["p"] = p
    chain, scheme = None, "lada"
    x0 = _initial_values(spec, net, seed)

    if spec.algorithm == "clada":
        run = run_clada(net, cl, x0, p, spec.eps, spec.max_iter)
        scheme = "clada"
    elif spec.algorithm == "centralized-grid":
        run = run_centralized_grid(net, cl, x0, spec.eps, spec.max_iter)
        scheme = "centralized-grid"
    else:
        chain = _chain_for(spec, net, r, p)
        if spec.x0 == "worst":
            trace = engine.worst_case_error_trace(chain, spec.eps, spec.max_iter)
            run = engine.ConsensusRun(chain, x0, float(x0.mean()), x0, x0, t=len(trace) - 1, eps=spec.eps)
            run.error_trace = trace.tolist()
            run.converged = bool(trace[-1] <= spec.eps)
        elif spec.algorithm == "lada":
            run = engine.run_pa2(chain, x0, spec.eps, spec.max_iter)
        else:
            run = engine.run_pa1(chain, x0, spec.eps, spec.max_iter)
        engine.count_messages(run, "lada")

    init, per = engine.per_iteration_messages(scheme, net.n, cl)
    row.update(
        status="ok" if run.converged else "not-converged",
        t_ave=run.t if run.converged else "",
        final_error=repr(float(run.error_trace[-1])),
        messages_init=init,
        messages_per_iter=per,
        messages_total=init + per * run.t,
    )
    if cl is not None:
        pairs = len(cl.gateways)
        row.update(clusters=cl.K, adjacent_pairs=pairs)
        if scheme == "clada":
            bound = 49 * cl.K + 2 * pairs
            row.update(message_bound=bound, message_bound_ok=per <= bound)
    _chain_metrics(row, spec, chain, net)
    if spec.traces:
        row["_trace"] = engine.run_to_csv(run, {k: row[k] for k in ("algorithm", key, "seed", "eps")})


def _tessellate(spec: ExperimentSpec, n: int, r: float, seed: int, max_resample: int = 100):
    """Network and tessellation clustering, resampling while a square is empty."""
    for attempt in range(max_resample + 1):
        net = sample_geometric(n, r, seed=seed + attempt * RESAMPLE_STRIDE)
        try:
            return net, tessellation_clusters(net, r), attempt
        except EmptyCellError as exc:
            last = exc
    raise last


# -- sweeps and artifacts ---------------------------------------------------------


def _task(args):
    return run_one(*args)


def run_experiment(spec: ExperimentSpec) -> tuple[list, dict]:
    """Run every (point, seed) pair; rows come back in parameter order."""
    tasks = [(spec, key, value, seed) for key, value in spec.points() for seed in spec.seeds]
    if spec.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            rows = list(pool.map(_task, tasks))
    else:
        rows = [_task(t) for t in tasks]
    return rows, summarize(spec, rows)


def summarize(spec: ExperimentSpec, rows: list) -> dict:
    points = []
    for key, value in spec.points():
        mine = [r for r in rows if r[key] == value]
        times = [r["t_ave"] for r in mine if r["status"] == "ok"]
        radii = [r["r"] for r in mine if r["r"] != ""]
        scale = value if key == "k" else (1.0 / float(np.median(radii)) if radii else None)
        points.append({
            key: value,
            "scale": scale,
            "runs": len(mine),
            "converged": len(times),
            "median_t_ave": float(np.median(times)) if times else None,
        })
    fit_points = [(p["scale"], p["median_t_ave"]) for p in points if p["scale"] and p["median_t_ave"]]
    fit = None
    if len(fit_points) >= 3:
        try:
            fit = asdict(metrics.scaling_fit(fit_points))
        except ValueError as exc:
            log.warning("scaling fit skipped: %s", exc)
    return {
        "spec": {k: v for k, v in asdict(spec).items() if k not in ("out", "jobs", "dump_network")},
        "scale_variable": "k" if spec.topology == "grid" else "1/r",
        "points": points,
        "scaling_fit": fit,
        "failed_runs": sum(r["status"] != "ok" for r in rows),
    }


def write_csv(rows: list, path: Path, header: dict):
    with open(path, "w", newline="") as fh:
        for key, value in header.items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.DictWriter(fh, fieldnames=COLUMNS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def dump_network(spec: ExperimentSpec, path) -> dict:
    """Network of the first parameter point and seed, with its clustering when geometric."""
    key, value = spec.points()[0]
    seed = spec.seeds[0]
    net, r = _network(spec, key, value, seed)
    doc = net.to_dict()
    if r is not None:
        cl = distributed_clustering(net, rng_seed=seed)
        doc["clustering"] = cl.to_dict()
        try:
            build_induced_graph(net, cl, r)
            doc["clustering"]["directional_degree"] = cl.directions.degree.tolist()
        except EmptyDirectionError as exc:
            doc["clustering"]["warning"] = str(exc)
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return doc


# -- argument handling ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lada", description="Lifted-chain distributed averaging experiments.")
    ap.add_argument("--config", help="flat key = value file; flags override it")
    ap.add_argument("--algorithm", choices=ALGORITHMS)
    ap.add_argument("--k", help="grid sides, e.g. 4,8,16")
    ap.add_argument("--n", help="network sizes, e.g. 250,500")
    ap.add_argument("--r-rule", help="sqrt2logn, 2sqrtlogn or fixed(r)")
    ap.add_argument("--p-rule", help="half-r, mu-alpha or fixed(p)")
    ap.add_argument("--eps", type=float)
    ap.add_argument("--seeds", help="seed list with ranges, e.g. 1-5")
    ap.add_argument("--max-iter", type=int)
    ap.add_argument("--metrics", help=f"comma list from {','.join(METRICS)}, or all")
    ap.add_argument("--x0", choices=X0_MODES, help="initial values: corner indicator, random, or worst case")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--traces", action="store_true", default=None, help="also write per-run error traces")
    ap.add_argument("--jobs", type=int)
    ap.add_argument("--dump-network", metavar="PATH", help="write the network (and clustering) as JSON and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _read_config(path: str) -> dict:
    text = Path(path).read_text()
    if not re.search(r"^\s*\[", text, re.M):
        text = "[experiment]\n" + text
    cp = configparser.ConfigParser()
    cp.read_string(text)
    out = {}
    for section in cp.sections():
        out.update({key.replace("-", "_"): value for key, value in cp[section].items()})
    return out


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    raw = _read_config(args.config) if args.config else {}
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "verbose")}
    raw.update(flags)
    unknown = set(raw) - set(ExperimentSpec.__dataclass_fields__)
    if unknown:
        raise SpecError(sorted(unknown)[0], "unknown setting")
    spec = ExperimentSpec()
    for name, value in raw.items():
        if name in ("k", "n", "seeds"):
            value = parse_int_list(value, name)
        elif name == "metrics":
            value = list(METRICS) if value == "all" else [m.strip() for m in str(value).split(",") if m.strip()]
        elif name in ("eps",):
            value = _convert(value, float, name)
        elif name in ("max_iter", "jobs"):
            value = _convert(value, int, name)
        elif name == "traces":
            value = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes", "on")
        setattr(spec, name, value)
    return spec.validate()


def _convert(value, kind, name):
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise SpecError(name, f"cannot parse {value!r}") from None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        spec = spec_from_args(args)
    except SpecError as exc:
        parser.error(str(exc))
    except OSError as exc:
        parser.error(f"config: {exc}")

    if spec.dump_network:
        try:
            dump_network(spec, spec.dump_network)
        except OSError as exc:
            print(f"lada: error: dump_network: {exc}", file=sys.stderr)
            return 2
        log.info("network written to %s", spec.dump_network)
        return 0

    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    rows, summary = run_experiment(spec)
    write_csv(rows, out / "results.csv", {"generated": started, "algorithm": spec.algorithm})
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if spec.traces:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for row in rows:
            if "_trace" in row:
                key = "k" if spec.topology == "grid" else "n"
                (tdir / f"{spec.algorithm}-{key}{row[key]}-seed{row['seed']}.csv").write_text(row["_trace"])
    for row in rows:
        if row["status"] != "ok":
            log.warning("%s=%s seed=%s: %s %s", "k" if spec.k else "n", row["k"] or row["n"], row["seed"],
                        row["status"], row["error"])
    ok = sum(r["status"] == "ok" for r in rows)
    print(f"{ok}/{len(rows)} runs converged; wrote {out / 'results.csv'} and {out / 'summary.json'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
