"""Operator-facing command line: extract, bench, cost, and check.

Exit codes:
    0  success
    2  validation/config/argument errors
    3  I/O errors (unreadable scans, missing files, unwritable outputs)
    4  one or more runtime checks failed

Every run writes a RunManifest (manifest.json) into its output directory
recording the command, its arguments, seed, thread count, per-stage timings,
produced files, and tool versions.  Re-running the same manifest reproduces
every output byte-for-byte except the manifest's own timings.

Numeric reproducibility: BLAS thread pools are pinned to one thread (see
_pin_blas_threads) before numpy is imported, so results do not depend on the
BLAS build or machine parallelism; the --threads flag only controls the
package's own deterministic fixed-chunk thread pool.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from pathlib import Path

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_CHECK_FAILED = 4

_BLAS_VARS = (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def _pin_blas_threads() -> None:
    """Pin BLAS pools to one thread unless the user explicitly chose otherwise.

    Must run before numpy's first import; threaded BLAS reductions reorder
    floating-point sums and would break bit-reproducibility.
    """
    for var in _BLAS_VARS:
        os.environ.setdefault(var, "1")


_pin_blas_threads()


class CliError(Exception):
    """Operator-facing error carrying its intended process exit code."""

    def __init__(self, message: str, exit_code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.exit_code = exit_code


def _versions() -> dict:
    import numpy

    from . import __version__

    return {
        "pcattn": __version__,
        "numpy": numpy.__version__,
        "python": platform.python_version(),
    }


def _prepare_out_dir(path_str: str) -> Path:
    out_dir = Path(path_str)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out_dir}: {exc}", EXIT_IO) from exc
    return out_dir


def _write_manifest(out_dir: Path, command: str, arguments: dict, timings: dict, outputs: list) -> Path:
    manifest = {
        "command": command,
        "arguments": arguments,
        "machine": {"platform": platform.platform(), "cpu_count": os.cpu_count()},
        "outputs": sorted(outputs),
        "timings_seconds": {k: round(v, 6) for k, v in timings.items()},
        "versions": _versions(),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


class _StageTimer:
    """Accumulates wall-clock seconds per named pipeline stage."""

    def __init__(self):
        self.timings: dict = {}
        self._t0 = time.perf_counter()

    def mark(self, stage: str) -> None:
        now = time.perf_counter()
        self.timings[stage] = self.timings.get(stage, 0.0) + (now - self._t0)
        self._t0 = now


def _apply_threads(threads: int | None) -> int:
    from . import parallel

    if threads is not None:
        if threads < 1:
            raise CliError(f"--threads must be >= 1, got {threads}")
        parallel.set_max_threads(threads)
    return parallel.get_max_threads()


# ---------------------------------------------------------------------------
# extract


def cmd_extract(args) -> int:
    import numpy as np

    from .configio import load_extract_config
    from .dsa import DsaParams, dsa_forward, random_dsa_weights
    from .fsa import fsa_forward, random_fsa_weights
    from .pcio import FeatureGraph, crop_range, discretize, load_scan, random_encoder_weights
    from .serialize import save_dsa_weights, save_fsa_weights, save_tensors

    threads = _apply_threads(args.threads)
    timer = _StageTimer()
    cfg = load_extract_config(args.config)
    kind = args.mode if args.mode is not None else cfg.attention.kind
    seed = args.seed if args.seed is not None else cfg.attention.seed
    att = cfg.attention
    timer.mark("load_config")

    try:
        cloud = load_scan(args.scan)
    except OSError as exc:
        raise CliError(f"extract stage load_scan: cannot read {args.scan}: {exc}", EXIT_IO) from exc
    if len(cloud) == 0:
        raise CliError("extract stage load_scan: scan contains no points")
    timer.mark("load_scan")

    cropped = crop_range(cloud, cfg.grid)
    if len(cropped) == 0:
        raise CliError("extract stage crop_range: no points fall inside the configured grid range")
    timer.mark("crop_range")

    encoder = random_encoder_weights(att.dim, cfg.encoder_seed, cfg.encoder_scale)
    graph = discretize(cropped, cfg.grid, cfg.mode, att.dim, encoder)
    if kind == "dsa" and att.keypoints > graph.n:
        raise CliError(
            f"extract stage discretize: config asks for {att.keypoints} keypoints "
            f"but the scan produced only {graph.n} nodes"
        )
    timer.mark("discretize")

    out_dir = _prepare_out_dir(args.out)
    outputs = []

    def _save_graph(name: str, g: FeatureGraph) -> None:
        save_tensors(
            out_dir / name,
            {"features": g.features, "positions": g.positions},
            meta={"kind": "feature_graph", "n": g.n, "d": g.d},
        )
        outputs.extend([f"{name}.bin", f"{name}.json"])

    _save_graph("features_before", graph)

    rng = np.random.default_rng(seed)
    params = DsaParams(
        deform_radius=att.deform_radius,
        pool_radius=att.pool_radius,
        neighbor_k=att.neighbor_k,
    )
    current = graph
    for layer in range(att.layers):
        if kind == "fsa":
            weights = random_fsa_weights(att.dim, att.heads, rng, n_groups=att.groups)
            result = fsa_forward(current, weights)
            save_fsa_weights(out_dir / f"weights_layer{layer:02d}", weights)
        else:
            weights = random_dsa_weights(
                att.dim,
                att.heads,
                rng,
                n_groups=att.groups,
                upsample=att.upsample,
                interp_radius=att.interp_radius,
                interp_samples=att.interp_samples,
            )
            result, deformed = dsa_forward(current, weights, att.keypoints, params)
            save_dsa_weights(out_dir / f"weights_layer{layer:02d}", weights)
            diag = {
                "layer": layer,
                "keypoints": len(deformed.indices),
                "indices": deformed.indices.indices.tolist(),
                "magnitudes": deformed.magnitudes.tolist(),
                "displacements": deformed.displacements.tolist(),
                "refined_positions": deformed.positions.tolist(),
            }
            diag_name = f"dsa_diagnostics_layer{layer:02d}.json"
            (out_dir / diag_name).write_text(
                json.dumps(diag, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            outputs.append(diag_name)
        outputs.extend([f"weights_layer{layer:02d}.bin", f"weights_layer{layer:02d}.json"])
        for head in range(att.heads):
            csv_name = f"attention_layer{layer:02d}_head{head:02d}.csv"
            np.savetxt(out_dir / csv_name, result.attn[head], fmt="%.17g", delimiter=",")
            outputs.append(csv_name)
        current = FeatureGraph(features=result.output, positions=current.positions)
    timer.mark("attention")

    _save_graph("features_after", current)
    timer.mark("write_outputs")

    manifest = _write_manifest(
        out_dir,
        "extract",
        {
            "config": str(args.config),
            "scan": str(args.scan),
            "mode": kind,
            "grid_mode": cfg.mode,
            "seed": seed,
            "threads": threads,
            "out": str(out_dir),
        },
        timer.timings,
        outputs,
    )
    print(
        f"extract: {len(cropped)}/{len(cloud)} points kept, {graph.n} nodes, "
        f"{att.layers} {kind} layer(s); {len(outputs)} artifacts in {out_dir}"
    )
    print(f"manifest: {manifest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    from .bench import bench_pair, check_memory_budget

    threads = _apply_threads(args.threads)
    timer = _StageTimer()
    if args.repeats < 1:
        raise CliError(f"--repeats must be >= 1, got {args.repeats}")
    try:
        sizes = [int(tok) for tok in args.sizes.split(",") if tok.strip()]
    except ValueError as exc:
        raise CliError(f"--sizes must be a comma-separated list of integers, got {args.sizes!r}") from exc
    if not sizes or any(n < 1 for n in sizes):
        raise CliError(f"--sizes entries must be positive, got {args.sizes!r}")

    plan = []
    for n in sizes:
        m = args.keypoints if args.keypoints is not None else max(1, n // 4)
        if m > n:
            raise CliError(f"keypoints m={m} cannot exceed n={n}")
        ok, detail = check_memory_budget(n, args.dim, args.heads)
        if not ok:
            raise CliError(f"refusing to benchmark n={n}: {detail}")
        plan.append((n, m))
    timer.mark("plan")

    results = [
        bench_pair(n, m, dim=args.dim, heads=args.heads, repeats=args.repeats, seed=args.seed)
        for n, m in plan
    ]
    timer.mark("measure")

    out_dir = _prepare_out_dir(args.out)
    versions = _versions()
    header = "n,m,dim,heads,repeats,fsa_seconds,dsa_seconds,speedup"
    lines = [
        f"# pcattn={versions['pcattn']} numpy={versions['numpy']} python={versions['python']}",
        f"# platform={platform.platform()} cpu_count={os.cpu_count()}",
        header,
    ]
    for r in results:
        lines.append(
            f"{r.n_nodes},{r.n_keypoints},{r.dim},{r.heads},{r.repeats},"
            f"{r.fsa_seconds:.6f},{r.dsa_seconds:.6f},{r.speedup:.3f}"
        )
    (out_dir / "bench.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out_dir / "bench.json").write_text(
        json.dumps([r.to_dict() for r in results], indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    timer.mark("write_outputs")

    print(f"{'n':>8}{'m':>8}{'fsa (s)':>12}{'dsa (s)':>12}{'speedup':>10}")
    for r in results:
        print(f"{r.n_nodes:>8}{r.n_keypoints:>8}{r.fsa_seconds:>12.4f}{r.dsa_seconds:>12.4f}{r.speedup:>10.2f}")
    _write_manifest(
        out_dir,
        "bench",
        {
            "sizes": sizes,
            "keypoints": args.keypoints,
            "dim": args.dim,
            "heads": args.heads,
            "repeats": args.repeats,
            "seed": args.seed,
            "threads": threads,
            "out": str(out_dir),
        },
        timer.timings,
        ["bench.csv", "bench.json"],
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# cost


def _resolve_config(token: str):
    from .configio import ConfigError
    from .costmodel import parse_config, shipped_config_path

    if os.path.exists(token):
        return parse_config(token)
    try:
        path = shipped_config_path(token)
    except ConfigError as exc:
        raise CliError(f"{token!r} is neither an existing config file nor a shipped config name") from exc
    return parse_config(path)


def cmd_cost(args) -> int:
    from .costmodel import (
        SHIPPED_PAIRS,
        compare,
        cost_report,
        load_counting_rules,
        render_comparison_text,
        render_report_json,
        render_report_text,
        shipped_config_path,
    )

    timer = _StageTimer()
    rules = load_counting_rules(args.rules) if args.rules else load_counting_rules()
    out_dir = _prepare_out_dir(args.out)
    outputs = []

    if args.config is None:
        # default: reduction table over every shipped baseline-vs-variant pair
        from .costmodel import parse_config

        rows = []
        print(f"{'baseline':<14}{'variant':<18}{'params (M)':>28}{'flops (G)':>30}")
        for base_name, variant_name in SHIPPED_PAIRS:
            base = parse_config(shipped_config_path(base_name))
            variant = parse_config(shipped_config_path(variant_name))
            comp = compare(base, variant, rules, nodes=args.nodes)
            rows.append(comp.to_dict())
            b, v = comp.baseline, comp.variant
            params_col = f"{b.params_total / 1e6:.2f} -> {v.params_total / 1e6:.2f} ({comp.param_change_pct:+.1f}%)"
            flops_col = f"{b.flops_total / 1e9:.2f} -> {v.flops_total / 1e9:.2f} ({comp.flop_change_pct:+.1f}%)"
            print(f"{base_name:<14}{variant_name:<18}{params_col:>28}{flops_col:>30}")
        payload = json.dumps(rows, indent=2, sort_keys=True) + "\n"
        (out_dir / "cost_pairs.json").write_text(payload, encoding="utf-8")
        outputs.append("cost_pairs.json")
    else:
        variant = _resolve_config(args.config)
        if args.baseline is not None:
            baseline = _resolve_config(args.baseline)
            comp = compare(baseline, variant, rules, nodes=args.nodes)
            print(render_comparison_text(comp))
            name = f"cost_{baseline.id}_vs_{variant.id}.json"
            (out_dir / name).write_text(
                json.dumps(comp.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            outputs.append(name)
        else:
            report = cost_report(variant, rules, nodes=args.nodes)
            print(render_report_text(report))
            name = f"cost_{variant.id}.json"
            (out_dir / name).write_text(render_report_json(report), encoding="utf-8")
            outputs.append(name)
    timer.mark("report")

    _write_manifest(
        out_dir,
        "cost",
        {
            "config": args.config,
            "baseline": args.baseline,
            "rules": args.rules,
            "nodes": args.nodes,
            "out": str(out_dir),
        },
        timer.timings,
        outputs,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# check


def cmd_check(args) -> int:
    from .checks import CHECK_NAMES, run_checks

    threads = _apply_threads(args.threads)
    timer = _StageTimer()
    names = None
    if args.only:
        names = [tok.strip() for tok in args.only.split(",") if tok.strip()]
        unknown = [n for n in names if n not in CHECK_NAMES]
        if unknown:
            raise CliError(f"unknown check(s) {unknown}; available: {', '.join(CHECK_NAMES)}")
    results = run_checks(names, seed=args.seed, inject_gradient_fault=args.inject_gradient_fault)
    timer.mark("checks")

    out_dir = _prepare_out_dir(args.out)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}: {r.detail}")
    n_failed = sum(1 for r in results if not r.ok)
    print(f"{len(results) - n_failed}/{len(results)} checks passed")
    (out_dir / "checks.json").write_text(
        json.dumps(
            [{"name": r.name, "ok": r.ok, "detail": r.detail} for r in results],
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    _write_manifest(
        out_dir,
        "check",
        {
            "only": args.only,
            "seed": args.seed,
            "inject_gradient_fault": args.inject_gradient_fault,
            "threads": threads,
            "out": str(out_dir),
        },
        timer.timings,
        ["checks.json"],
    )
    return EXIT_OK if n_failed == 0 else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcattn",
        description="Self-attention context aggregation for point clouds: "
        "feature extraction, invariant checks, micro-benchmarks, and cost reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_extract = sub.add_parser("extract", help="run attention over a discretized scan and export artifacts")
    p_extract.add_argument("--config", required=True, help="extraction config YAML")
    p_extract.add_argument("--scan", required=True, help="binary scan file (float32 x,y,z,intensity records)")
    p_extract.add_argument("--out", required=True, help="output directory")
    p_extract.add_argument("--mode", choices=("fsa", "dsa"), default=None, help="override the config's attention kind")
    p_extract.add_argument("--seed", type=int, default=None, help="override the config's weight seed")
    p_extract.add_argument("--threads", type=int, default=None, help="worker threads (default: PCATTN_THREADS or cpu count)")
    p_extract.set_defaults(fn=cmd_extract)

    p_bench = sub.add_parser("bench", help="time full vs deformable attention on synthetic graphs")
    p_bench.add_argument("--sizes", required=True, help="comma-separated node counts, e.g. 1024,4096")
    p_bench.add_argument("--keypoints", type=int, default=None, help="subset size m (default: n // 4 per size)")
    p_bench.add_argument("--dim", type=int, default=64, help="feature dimension (default 64)")
    p_bench.add_argument("--heads", type=int, default=4, help="attention heads (default 4)")
    p_bench.add_argument("--repeats", type=int, default=3, help="timed repetitions per point (default 3)")
    p_bench.add_argument("--seed", type=int, default=0, help="graph/weight seed (default 0)")
    p_bench.add_argument("--out", default="pcattn_out/bench", help="output directory")
    p_bench.add_argument("--threads", type=int, default=None, help="worker threads")
    p_bench.set_defaults(fn=cmd_bench)

    p_cost = sub.add_parser("cost", help="analytic parameter/FLOP reports for architecture configs")
    p_cost.add_argument("--config", default=None, help="config path or shipped config name")
    p_cost.add_argument("--baseline", default=None, help="baseline config path or shipped name (enables comparison)")
    p_cost.add_argument("--rules", default=None, help="counting-rules YAML (default: shipped)")
    p_cost.add_argument("--nodes", type=int, default=None, help="override the attention node count")
    p_cost.add_argument("--out", default="pcattn_out/cost", help="output directory")
    p_cost.set_defaults(fn=cmd_cost)

    p_check = sub.add_parser("check", help="run the runtime invariant checks")
    p_check.add_argument("--only", default=None, help="comma-separated subset of check names")
    p_check.add_argument("--seed", type=int, default=0, help="instance seed (default 0)")
    p_check.add_argument(
        "--inject-gradient-fault",
        action="store_true",
        help="corrupt one analytic gradient entry; the gradient check must then fail",
    )
    p_check.add_argument("--out", default="pcattn_out/check", help="output directory")
    p_check.add_argument("--threads", type=int, default=None, help="worker threads")
    p_check.set_defaults(fn=cmd_check)

    return parser


def main(argv=None) -> int:
    _pin_blas_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
