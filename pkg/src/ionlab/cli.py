"""Command-line entry point: ``ionlab run | analyze | reproduce``.

Exit codes: 0 success, 2 bad input (config, CSV or digest), 3 simulation
failure, 4 fit did not converge (the report is still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import FitError, analyze_fringes, digest_bytes, fit_exponential_decay
from .config import ConfigError, load_config
from .datasets import DatasetFormatError, FringeDataset, atomic_write, sidecar_path
from .physics import TruncationError

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME, EXIT_FIT = 0, 2, 3, 4
TABLE_COLUMNS = ("delay", "amplitude", "stderr")


def _threads(arg):
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("IONLAB_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _err(msg):
    print(f"ionlab: {msg}", file=sys.stderr)


def _dump(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode()


# --- run ------------------------------------------------------------------

def cmd_run(args):
    from .experiments import run_experiment, run_field_calibration

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_INPUT
    out = Path(args.out or cfg.outputs.get("csv") or f"{cfg.experiment}.csv")
    try:
        if cfg.experiment == "field_calibration":
            cal = run_field_calibration(cfg, _threads(args.threads))
            ds = cal.dataset
            ds.metadata["field"] = cal.field
            ds.metadata["stretch_centre"] = cal.centre
        else:
            ds = run_experiment(cfg, _threads(args.threads))
    except (TruncationError, FitError, ValueError, FloatingPointError) as exc:
        _err(f"run failed: {exc}")
        return EXIT_RUNTIME
    data = ds.to_csv_bytes()
    ds.metadata["data_digest"] = digest_bytes(data)
    ds.write(out)
    print(f"wrote {out} ({len(ds)} rows, {ds.metadata['wall_clock_duration'] / 60:.2f} min "
          f"simulated, config {ds.metadata['config_digest'][:12]})")
    return EXIT_OK


# --- analyze --------------------------------------------------------------

def read_amplitude_table(text):
    """Parse a ``delay,amplitude,stderr`` table; errors carry the row number."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != TABLE_COLUMNS:
        raise DatasetFormatError(1, f"header must be {','.join(TABLE_COLUMNS)}")
    out = []
    for i, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        if len(r) != 3:
            raise DatasetFormatError(i, f"expected 3 fields, got {len(r)}")
        try:
            vals = [float(v) for v in r]
        except ValueError as exc:
            raise DatasetFormatError(i, str(exc)) from None
        if not np.all(np.isfinite(vals)) or vals[2] <= 0:
            raise DatasetFormatError(i, "values must be finite with stderr > 0")
        out.append(vals)
    if not out:
        raise DatasetFormatError(2, "no data rows")
    return np.array(out).T


def _check_digest(path, data, force):
    """Compare the CSV against the digest recorded in its sidecar, if any."""
    meta = sidecar_path(path)
    if not meta.exists():
        return None
    recorded = json.loads(meta.read_text(encoding="utf-8")).get("data_digest")
    if recorded and recorded != digest_bytes(data) and not force:
        return (f"{path} does not match the digest recorded in {meta.name}; "
                "use --force to analyze anyway")
    return None


def cmd_analyze(args):
    path = Path(args.input)
    try:
        data = path.read_bytes()
    except OSError as exc:
        _err(f"cannot read {path}: {exc.strerror}")
        return EXIT_INPUT
    problem = _check_digest(path, data, args.force)
    if problem:
        _err(problem)
        return EXIT_INPUT
    digest = digest_bytes(data)
    try:
        if args.model == "sinusoid":
            meta = sidecar_path(path)
            md = json.loads(meta.read_text(encoding="utf-8")) if meta.exists() else {}
            ds = FringeDataset.parse_csv(data.decode("utf-8"), md)
            fa = analyze_fringes(ds, readout_correct=args.readout_correct)
            fit, report = fa.test, fa.to_report(digest)
            extra = f" amplitude_ratio={fa.amplitude_ratio:.4g}+/-{fa.amplitude_ratio_stderr:.2g}"
        else:
            t, amp, err = read_amplitude_table(data.decode("utf-8"))
            fit = fit_exponential_decay(t, amp, err)
            report, extra = fit.to_report(digest), ""
    except DatasetFormatError as exc:
        _err(f"malformed {path}: {exc}")
        return EXIT_INPUT
    except ValueError as exc:
        _err(f"cannot fit {path}: {exc}")
        return EXIT_INPUT
    except FitError as exc:
        _err(f"fit failed: {exc}")
        report = {"model": args.model, "converged": False, "error": str(exc),
                  "inputs_digest": digest}
        _write_report(args, path, report)
        return EXIT_FIT
    out = _write_report(args, path, report)
    params = " ".join(f"{n}={v:.6g}+/-{e:.2g}" for n, v, e in zip(fit.names, fit.values, fit.stderr))
    print(f"{fit.model}: {params} chi2_red={fit.reduced_chi_sq:.3g}{extra} -> {out}")
    if not fit.converged:
        _err("fit did not converge; see diagnostics in the report")
        return EXIT_FIT
    return EXIT_OK


def _write_report(args, path, report):
    out = Path(args.out or path.with_suffix(".fit.json"))
    atomic_write(out, _dump(report))
    return out


# --- reproduce ------------------------------------------------------------

def cmd_reproduce(args):
    from .reproduce import format_table, reproduce

    outdir = Path(args.outdir or f"reproduce_{args.target}")
    try:
        rows = reproduce(args.target, outdir, seed=args.seed, threads=_threads(args.threads))
    except (TruncationError, FitError, ValueError) as exc:
        _err(f"{args.target} failed: {exc}")
        return EXIT_RUNTIME
    sys.stdout.write(format_table(rows))
    print(f"bundle written to {outdir}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="ionlab", description="Trapped-ion coherence simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one configured experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--threads", type=int)
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="fit a dataset or amplitude table")
    a.add_argument("--model", choices=("sinusoid", "expdecay"), required=True)
    a.add_argument("--in", dest="input", required=True)
    a.add_argument("--out")
    a.add_argument("--force", action="store_true", help="ignore a digest mismatch")
    a.add_argument("--readout-correct", action="store_true")
    a.set_defaults(func=cmd_analyze)

    from .reproduce import TARGETS
    g = sub.add_parser("reproduce", help="run a full pipeline and compare with published values")
    g.add_argument("target", choices=TARGETS)
    g.add_argument("--seed", type=int)
    g.add_argument("--outdir")
    g.add_argument("--threads", type=int)
    g.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
