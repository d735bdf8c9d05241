"""Command-line front end: parse config, run experiments, write artifacts.

Each subcommand reads one JSON config, runs the corresponding operation,
and writes its CSV (plus optional PNG) and a manifest.json to the output
directory.  Exit codes: 0 success, 1 unwritable output, 2 configuration
or usage error, 3 budget refusal.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .errors import BudgetError, ValidationError
from .harness import (
    DEFAULT_BUDGET,
    LYAPUNOV_COLUMNS,
    NO_COLLAPSE_COLUMNS,
    NORMALITY_COLUMNS,
    SCALING_COLUMNS,
    SWEEP_COLUMNS,
    ExperimentConfig,
    run_collapse_sweep,
    run_lyapunov_check,
    run_no_collapse_check,
    run_normality_check,
    run_scaling_check,
    write_report_csv,
)
from .rng import derive_stream
from .spectrum import ObservationModel, canonicalize, effective_dimension
from .ssm import LinearGaussianSSM, bootstrap_filter, simulate_ssm

# Per-subcommand option keys allowed in the config next to the
# experiment fields, with their defaults.
_EXTRA_KEYS = {
    "sweep": {},
    "scaling": {},
    "no-collapse": {"g": "tanh"},
    "normality": {"samples": 10_000},
    "lyapunov": {"ks": (3, 4), "draws": 50},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pfcollapse",
        description="Monte Carlo experiments on importance-weight collapse in "
        "high-dimensional Gaussian particle filters",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    specs = [
        ("sweep", "replicated max-weight/ESS statistics over a (d', n) grid"),
        ("scaling", "scaled mean gap-sum statistic with regime diagnostics"),
        ("no-collapse", "posterior-estimate error for summable spectra"),
        ("normality", "normal fit of the standardized scores"),
        ("lyapunov", "moment-quotient decay across dimension"),
        ("filter", "sequential bootstrap filter with exact oracle"),
        ("canonicalize", "reduce an (H, Sigma_X) model to its spectrum"),
    ]
    for name, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to JSON config")
        if name != "canonicalize":
            p.add_argument("--out", required=True, help="output directory")
            p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
            p.add_argument("--plot", action="store_true", help="also render PNG figures")
        if name not in ("filter", "canonicalize"):
            p.add_argument("--workers", type=int, default=None, help="thread count (default: machine parallelism)")
            p.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="max scalar draws per cell")
    return parser


def _load_json(path: str):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc


def _split_config(obj, subcommand: str, seed_override):
    """Separate experiment fields from subcommand options; apply --seed."""
    if not isinstance(obj, dict):
        raise ValidationError("config must be a JSON object")
    extras = dict(_EXTRA_KEYS[subcommand])
    body = dict(obj)
    for key in extras:
        if key in body:
            extras[key] = body.pop(key)
    cfg = ExperimentConfig.from_json(body)
    if seed_override is not None:
        if not (0 <= seed_override < 2**64):
            raise ValidationError("--seed must fit in an unsigned 64-bit integer")
        cfg = dataclasses.replace(cfg, master_seed=seed_override)
    return cfg, extras


def _prepare_out_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
        probe = tempfile.NamedTemporaryFile(dir=path, delete=True)
        probe.close()
    except OSError as exc:
        raise _Unwritable(f"output directory not writable: {path}: {exc}") from exc
    return path


class _Unwritable(Exception):
    pass


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: str, subcommand: str, config_echo: dict, master_seed: int,
                    filenames: list[str], cells: list[dict], total_seconds: float) -> None:
    manifest = {
        "version": __version__,
        "subcommand": subcommand,
        "master_seed": int(master_seed),
        "config": config_echo,
        "outputs": {
            name: {
                "sha256": _sha256(os.path.join(out_dir, name)),
                "bytes": os.path.getsize(os.path.join(out_dir, name)),
            }
            for name in filenames
        },
        "cell_seconds": cells,
        "total_seconds": total_seconds,
    }
    # Written last, atomically, so a manifest's presence certifies the run.
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    os.chmod(tmp, 0o644)
    os.replace(tmp, os.path.join(out_dir, "manifest.json"))


def _run_harness(args) -> int:
    start = time.perf_counter()
    cfg, extras = _split_config(_load_json(args.config), args.subcommand, args.seed)
    out_dir = _prepare_out_dir(args.out)

    if args.subcommand == "sweep":
        rows = run_collapse_sweep(cfg, workers=args.workers, budget=args.budget)
        columns, stem = SWEEP_COLUMNS, "sweep"
    elif args.subcommand == "scaling":
        rows = run_scaling_check(cfg, workers=args.workers, budget=args.budget)
        columns, stem = SCALING_COLUMNS, "scaling"
    elif args.subcommand == "no-collapse":
        rows = run_no_collapse_check(cfg, g=extras["g"], workers=args.workers, budget=args.budget)
        columns, stem = NO_COLLAPSE_COLUMNS, "no_collapse"
    elif args.subcommand == "normality":
        rows = run_normality_check(
            cfg, samples=int(extras["samples"]), workers=args.workers, budget=args.budget
        )
        columns, stem = NORMALITY_COLUMNS, "normality"
    else:
        rows = run_lyapunov_check(
            cfg,
            ks=tuple(extras["ks"]),
            draws=int(extras["draws"]),
            workers=args.workers,
            budget=args.budget,
        )
        columns, stem = LYAPUNOV_COLUMNS, "lyapunov"

    csv_name = stem + ".csv"
    write_report_csv(os.path.join(out_dir, csv_name), columns, rows)
    filenames = [csv_name]
    if args.plot:
        from . import plots

        renderer = {
            "sweep": plots.plot_sweep,
            "scaling": plots.plot_scaling,
            "no-collapse": plots.plot_no_collapse,
            "normality": plots.plot_normality,
            "lyapunov": plots.plot_lyapunov,
        }[args.subcommand]
        png_name = stem + ".png"
        renderer(rows, os.path.join(out_dir, png_name))
        filenames.append(png_name)

    cells = [
        {k: getattr(r, k) for k in ("d_prime", "seconds") if hasattr(r, k)}
        | ({"n": r.n} if hasattr(r, "n") else {})
        for r in rows
    ]
    echo = {"experiment": cfg.to_json(), "options": {k: list(v) if isinstance(v, tuple) else v for k, v in extras.items()}}
    _write_manifest(
        out_dir, args.subcommand, echo, cfg.master_seed, filenames, cells,
        time.perf_counter() - start,
    )
    return 0


def _run_filter(args) -> int:
    start = time.perf_counter()
    obj = _load_json(args.config)
    if not isinstance(obj, dict) or "model" not in obj:
        raise ValidationError("filter config needs a 'model' object")
    known = {"model", "steps", "particles", "resample", "threshold", "resampler", "master_seed"}
    unknown = set(obj) - known
    if unknown:
        raise ValidationError(f"unknown filter config keys: {sorted(unknown)}")
    model = LinearGaussianSSM.from_json(obj["model"])
    steps = int(obj.get("steps", 0))
    particles = int(obj.get("particles", 0))
    if steps < 1 or particles < 2:
        raise ValidationError("filter config needs steps >= 1 and particles >= 2")
    seed = args.seed if args.seed is not None else int(obj.get("master_seed", 0))
    if not (0 <= seed < 2**64):
        raise ValidationError("master seed must fit in an unsigned 64-bit integer")
    out_dir = _prepare_out_dir(args.out)

    _, observations = simulate_ssm(model, steps, derive_stream(seed, "filter", "sim"))
    trace = bootstrap_filter(
        model,
        observations,
        particles,
        derive_stream(seed, "filter", "run"),
        resample=obj.get("resample", "ess_threshold"),
        threshold=float(obj.get("threshold", 0.5)),
        resampler=obj.get("resampler", "multinomial"),
    )
    trace.write_csv(os.path.join(out_dir, "trace.csv"))
    filenames = ["trace.csv"]
    if args.plot:
        from . import plots

        plots.plot_trace(trace, os.path.join(out_dir, "trace.png"))
        filenames.append("trace.png")
    echo = {k: v for k, v in obj.items() if k != "master_seed"}
    _write_manifest(
        out_dir, "filter", echo, seed, filenames,
        [{"steps": trace.steps, "seconds": time.perf_counter() - start}],
        time.perf_counter() - start,
    )
    return 0


def _run_canonicalize(args) -> int:
    obj = _load_json(args.config)
    if not isinstance(obj, dict) or not {"H", "sigma_x"} <= set(obj):
        raise ValidationError("canonicalize config needs 'H' and 'sigma_x' arrays")
    model = ObservationModel(
        H=np.asarray(obj["H"], dtype=np.float64),
        sigma_x=np.asarray(obj["sigma_x"], dtype=np.float64),
    )
    spectrum, _ = canonicalize(model, rank_rtol=float(obj.get("rank_rtol", 1e-10)))
    print("spectrum: " + " ".join(f"{v:.12g}" for v in spectrum.values))
    print(f"d_prime: {spectrum.d_prime}")
    print(f"effective_dimension: {effective_dimension(spectrum):.12g}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        if args.subcommand == "canonicalize":
            return _run_canonicalize(args)
        if args.subcommand == "filter":
            return _run_filter(args)
        return _run_harness(args)
    except BudgetError as exc:
        print(f"budget refusal: {exc}", file=sys.stderr)
        return 3
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _Unwritable as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
