"""Command-line front end.

Inputs named ``@name`` refer to the fixtures bundled in ``morsecluster/data``
(``@twin_gaussians_2d`` is ``data/twin_gaussians_2d.json``). Exit codes: 0 success, 2 input
error, 3 numerical failure, 4 partial success.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, consistency, distances, flow, mixture, morse, partition
from .errors import InputError, MorseClusterError, NumericalError, UnsupportedGeometryError

DATA_DIR = Path(__file__).parent / "data"

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int | None
    tool_version: str
    timestamp: str
    outputs: dict[str, str] = field(default_factory=dict)


def _resolve(name: str) -> Path:
    if name.startswith("@"):
        p = DATA_DIR / f"{name[1:]}.json"
        if not p.exists():
            raise InputError(f"no bundled fixture named {name!r}")
        return p
    p = Path(name)
    if not p.exists():
        raise InputError(f"{name}: no such file")
    return p


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the timestamp for reproducible builds
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def _digest(command: str, options: dict, inputs: list[Path]) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"command": command, "options": options}, sort_keys=True).encode())
    for p in inputs:
        h.update(_sha256(p.read_bytes()).encode())
    return h.hexdigest()


def _write_manifest(out: Path, command: str, options: dict, inputs, seed, outputs) -> None:
    m = RunManifest(
        command=command,
        config_digest=_digest(command, options, inputs),
        seed=seed,
        tool_version=__version__,
        timestamp=_timestamp(),
        outputs={p.name: _sha256(p.read_bytes()) for p in outputs},
    )
    (out / "manifest.json").write_text(json.dumps(asdict(m), indent=2, sort_keys=True) + "\n")


def _parse_grid(text: str) -> tuple[int, ...]:
    try:
        res = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise InputError(f"--grid expects WxH, got {text!r}") from None
    if not res or min(res) < 1:
        raise InputError(f"--grid expects positive cell counts, got {text!r}")
    return res


def _parse_bbox(text: str, d: int):
    try:
        v = np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise InputError(f"--bbox expects comma-separated numbers, got {text!r}") from None
    if v.size != 2 * d:
        raise InputError(f"--bbox needs {2 * d} numbers for a {d}-dimensional model")
    return v[:d], v[d:]


def _options(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "threads", "out")}


# ---------------------------------------------------------------------------
# commands


def cmd_critical_points(args) -> int:
    src = _resolve(args.model)
    model = mixture.load_model(src)
    cs = morse.find_critical_points(model, morse.SearchConfig(tol=args.tol))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "critical_points.csv"
    morse.write_critical_csv(cs, path)
    _write_manifest(out, "critical-points", _options(args), [src], None, [path])
    return EXIT_OK


def cmd_partition(args) -> int:
    src = _resolve(args.model)
    model = mixture.load_model(src)
    out = Path(args.out)
    d = model.dimension
    bbox = _parse_bbox(args.bbox, d) if args.bbox else None
    if d == 1 and not args.grid:
        c = partition.modal_partition_1d(model, None if bbox is None else (bbox[0][0], bbox[1][0]))
        out.mkdir(parents=True, exist_ok=True)
        path = out / "clustering.json"
        partition.write_clustering_1d(c, path)
        _write_manifest(out, "partition", _options(args), [src], None, [path])
        return EXIT_OK
    if args.oned:
        raise InputError("--oned needs a univariate model")
    res = _parse_grid(args.grid) if args.grid else (128,) * d
    if len(res) != d:
        raise InputError(f"--grid has {len(res)} axes, model has dimension {d}")
    cs = morse.find_critical_points(model, morse.SearchConfig(tol=args.tol))
    g = partition.modal_partition_grid(model, cs, bbox, res, threads=args.threads)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "grid.json", out / "grid.labels.csv"]
    partition.write_grid_clustering(g, *outputs)
    status = EXIT_OK
    want_trace = args.trace if args.trace is not None else d == 2
    if want_trace:
        try:
            if d != 2:
                raise UnsupportedGeometryError(f"boundary tracing needs d = 2, model has d = {d}")
            branches = []
            for s in cs.saddles:
                branches.extend(flow.trace_boundary(model, s, box=bbox))
            path = out / "separatrices.csv"
            flow.write_polylines_csv(branches, path)
            outputs.append(path)
        except UnsupportedGeometryError as exc:
            print(f"warning: {exc}; partition written without boundaries", file=sys.stderr)
            status = EXIT_PARTIAL
    _write_manifest(out, "partition", _options(args), [src], None, outputs)
    return status


def _metric_report(metric: str, M: distances.MassMatrix, lam: float) -> distances.DistanceReport:
    if metric == "dP":
        return distances.dP_from_matrix(M, lam)
    if metric == "dH":
        return distances.dH_from_matrix(M)
    if metric == "dinf":
        return distances.dp_from_matrix(M, np.inf)
    if metric.startswith("dp:"):
        try:
            p = float(metric[3:])
        except ValueError:
            raise InputError(f"bad exponent in metric {metric!r}") from None
        return distances.dp_from_matrix(M, p)
    raise InputError(f"unknown metric {metric!r} (use dP, dH, dinf or dp:<p>)")


def cmd_distance(args) -> int:
    src = _resolve(args.model)
    model = mixture.load_model(src)
    pa, pb = _resolve(args.clustering_a), _resolve(args.clustering_b)
    A = partition.load_clustering(pa, model)
    B = partition.load_clustering(pb, model)
    for c in (A, B):
        dim = 1 if isinstance(c, partition.Clustering1D) else c.dimension
        if dim != model.dimension:
            raise InputError(f"clustering of dimension {dim} does not match the model dimension {model.dimension}")
    if args.empirical:
        samples = mixture.sample(model, args.empirical, args.seed)
        M = distances.empirical_matrix(A, B, samples)
    else:
        exact = isinstance(A, partition.Clustering1D) and isinstance(B, partition.Clustering1D)
        method = partition.ExactCdf() if exact else partition.MonteCarlo(args.mc_samples, args.seed)
        M = distances.mass_matrix(A, B, model, method, threads=args.threads)
    report = _metric_report(args.metric, M, args.lam)
    text = json.dumps(report.to_dict(), indent=2) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "distance.json"
        path.write_text(text)
        _write_manifest(out, "distance", _options(args), [src, pa, pb], args.seed, [path])
    return EXIT_OK


def cmd_consistency(args) -> int:
    src = _resolve(args.config)
    config = consistency.load_config(src)
    if args.seed is not None:
        config = consistency.ExperimentConfig(
            config.model, config.sample_sizes, config.replicates, config.bandwidth_rule, args.seed
        )
    records, summary, truth = consistency.run_consistency(config, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rp, sp = out / "records.csv", out / "summary.csv"
    consistency.write_records_csv(records, truth, rp)
    consistency.write_summary_csv(summary, sp)
    inputs = [src]
    data = json.loads(src.read_text())
    if "model_file" in data:
        inputs.append(src.parent / data["model_file"])
    _write_manifest(out, "consistency", _options(args), inputs, config.base_seed, [rp, sp])
    return EXIT_OK


def cmd_sample(args) -> int:
    src = _resolve(args.model)
    model = mixture.load_model(src)
    s = mixture.sample(model, args.n, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "samples.csv"
    mixture.write_samples_csv(s, path)
    _write_manifest(out, "sample", _options(args), [src], args.seed, [path])
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="morsecluster", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    common.add_argument("--seed", type=int, default=0, help="seed for every random draw")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("critical-points", parents=[common], help="locate and classify critical points")
    p.add_argument("model")
    p.add_argument("--tol", type=float, default=1e-10, help="gradient-norm tolerance for Newton")
    p.set_defaults(func=cmd_critical_points)

    p = sub.add_parser("partition", parents=[common], help="modal partition (1D breakpoints or labeled grid)")
    p.add_argument("model")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--grid", help="grid resolution, e.g. 128x128")
    g.add_argument("--oned", action="store_true", help="1D breakpoint partition (the default for d = 1)")
    p.add_argument("--bbox", help="box as lower then upper corner, e.g. --bbox=-4,-4,4,4")
    p.add_argument("--tol", type=float, default=1e-10)
    t = p.add_mutually_exclusive_group()
    t.add_argument("--trace", dest="trace", action="store_true", default=None, help="trace separatrices (default for d = 2)")
    t.add_argument("--no-trace", dest="trace", action="store_false")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("distance", parents=[common], help="distance between two clusterings")
    p.add_argument("model")
    p.add_argument("clustering_a")
    p.add_argument("clustering_b")
    p.add_argument("--metric", default="dP", help="dP, dH, dinf or dp:<p>")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="penalty on unmatched mass (dP only)")
    p.add_argument("--empirical", type=int, metavar="N", help="use the empirical measure of N model samples")
    p.add_argument("--mc-samples", type=int, default=100_000, help="Monte Carlo size when no exact path exists")
    p.set_defaults(func=cmd_distance, out=None)

    p = sub.add_parser("consistency", parents=[common], help="run the KDE consistency experiment")
    p.add_argument("config")
    p.set_defaults(func=cmd_consistency, seed=None)

    p = sub.add_parser("sample", parents=[common], help="draw samples from a model")
    p.add_argument("model")
    p.add_argument("-n", type=int, default=1000)
    p.set_defaults(func=cmd_sample)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MorseClusterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
