"""Command-line entry point: ``swipt-bench <command> [options]``.

Exit codes: 0 success, 1 invalid input (usage, config or validation errors),
2 runtime failure. A single ``key=value`` status line goes to stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import replace

import numpy as np

from .config import load_config, parse_config, preset_text, serialize_config
from .errors import SwiptBenchError, ValidationError
from .harness import (CONTROLLERS, MetricsRow, SWEEP_PARAMETERS, aggregate, convergence_iterations,
                      converged_energy, queue_cdf, run_all, run_sequential, sweep, task_series)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
SEED_ENV = "SWIPT_BENCH_SEED"


class UsageError(SwiptBenchError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="swipt-bench", description="SWIPT sensor-network controller benchmark")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, needs_config=True):
        src = p.add_mutually_exclusive_group(required=needs_config)
        src.add_argument("--config", help="experiment config file")
        src.add_argument("--preset", choices=["table1", "table2"], help="shipped preset instead of --config")
        p.add_argument("--seed", type=int, help=f"single seed overriding the config (fallback: ${SEED_ENV})")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--format", choices=["csv", "json", "both"], default="both")
        p.add_argument("--plot", action="store_true", help="also write SVG charts")
        p.add_argument("--jobs", type=int, default=1, help="concurrent (controller, seed) runs")
        p.add_argument("--controllers", help="comma-separated subset of " + ",".join(CONTROLLERS))

    common(sub.add_parser("run", help="run the configured experiment"))
    common(sub.add_parser("compare", help="run all controllers and summarize them side by side"))
    sp = sub.add_parser("sweep", help="energy sweep over one parameter")
    common(sp)
    sp.add_argument("--parameter", required=True, choices=SWEEP_PARAMETERS)
    sp.add_argument("--points", help="comma-separated sweep points (default: the standard grid)")
    rp = sub.add_parser("report", help="summarize an existing metrics CSV")
    common(rp, needs_config=False)
    rp.add_argument("--input", help="metrics CSV (default: <out>/metrics.csv)")
    vp = sub.add_parser("validate-config", help="parse and validate a config")
    src = vp.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--preset", choices=["table1", "table2"])
    src.add_argument("--stdin", action="store_true", help="read the config from standard input")
    return parser


# --- output helpers -------------------------------------------------------------

def atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def git_blob_hash(text: str) -> str:
    data = text.encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MetricsRow.header())
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r.values()])
    return buf.getvalue()


def rows_from_csv(text: str) -> list:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != MetricsRow.header():
        raise ValidationError("input", f"unexpected CSV header {header}")
    rows = []
    for rec in reader:
        c, d, t, seed, it, *vals = rec
        rows.append(MetricsRow(c, d, t, int(seed), int(it), *(float(v) for v in vals)))
    return rows


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


# --- summaries ------------------------------------------------------------------

def _check(ok: bool, detail: str) -> dict:
    return {"pass": bool(ok), "detail": detail}


def summarize(rows, spec=None) -> dict:
    """Per-controller medians over seeds plus pass/fail checks derived from the rows."""
    controllers = [c for c in CONTROLLERS if any(r.controller == c for r in rows)]
    seeds = sorted({r.seed for r in rows})
    out: dict = {"controllers": {}, "checks": {}}
    conv: dict = {}
    energy: dict = {}
    for c in controllers:
        per_task: dict = {}
        energies, rewards = [], []
        for s in seeds:
            series = task_series(rows, c, s)
            if not series:
                continue
            mine = [r for rs in series.values() for r in rs]
            energies.append(converged_energy(mine))
            rewards.append(float(np.mean([r.avg_reward for r in mine])))
            for key, rs in series.items():
                per_task.setdefault(f"{key[0]}/{key[1]}", []).append(convergence_iterations([r.avg_reward for r in rs]))
        conv[c] = {k: float(np.median(v)) for k, v in per_task.items()}
        energy[c] = float(np.median(energies))
        out["controllers"][c] = {
            "median_avg_reward": float(np.median(rewards)),
            "median_converged_energy_mJ_per_slot": energy[c],
            "median_convergence_iterations": conv[c],
            "learning": c != "lyapunov",
        }

    finite = all(math.isfinite(v) for r in rows for v in r.values()[5:])
    out["checks"]["finite_metrics"] = _check(finite, "every metric value is finite")
    if spec is not None:
        order = [(d, t) for d, _k, t, _c in spec.task_list()]
        ok = all(list(task_series(rows, c, s)) == order for c in controllers for s in seeds)
        out["checks"]["task_order"] = _check(ok, f"{len(order)} task segments in configured order")
    for c in ("pgrl", "cdl2rl"):
        if c in controllers:
            first, last = [], []
            for s in seeds:
                rs = next(iter(task_series(rows, c, s).values()))
                first.append(rs[0].avg_reward)
                last.append(rs[-1].avg_reward)
            ok = float(np.median(last)) > float(np.median(first))
            out["checks"][f"{c}_learning_progress"] = _check(
                ok, f"first task: median final reward {np.median(last):.6g} vs iteration-1 {np.median(first):.6g}")
    if "pgrl" in controllers and "cdl2rl" in controllers:
        shared = [k for k in conv["cdl2rl"] if k in conv["pgrl"]]
        faster = [k for k in shared if conv["cdl2rl"][k] <= 0.85 * conv["pgrl"][k]]
        out["checks"]["transfer_convergence"] = _check(
            len(faster) > 0, f"cdl2rl within 0.85x of pgrl convergence on {len(faster)}/{len(shared)} tasks")
        out["checks"]["energy_ordering"] = _check(
            energy["cdl2rl"] <= 1.05 * energy["pgrl"],
            f"converged energy cdl2rl {energy['cdl2rl']:.6g} vs pgrl {energy['pgrl']:.6g} mJ/slot")
    out["metadata"] = {
        "convergence_metric": "rewards min-shifted, first iteration whose trailing 5-window mean reaches 95% of the best",
        "converged_phase": "mean over the final 25% of each task's iterations",
        "lyapunov_iterations": "one evaluation phase per task; the controller does not learn",
    }
    return out


def spec_echo(spec, config_text: str) -> dict:
    return {
        "name": spec.name,
        "controllers": list(spec.controllers),
        "seeds": list(spec.seeds),
        "iterations": spec.iterations,
        "tasks": [
            {"domain": d, "task": t, "n_secondary": c.n_secondary, "state_dim": c.state_dim, "action_dim": c.action_dim}
            for d, _k, t, c in spec.task_list()
        ],
        "config_hash": git_blob_hash(config_text),
        "config": config_text,
    }


# --- commands -------------------------------------------------------------------

def _load(args):
    if getattr(args, "stdin", False):
        text = sys.stdin.read()
    elif args.preset:
        text = preset_text(args.preset)
    else:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ValidationError("config", f"cannot read {args.config}: {exc.strerror}") from None
    spec = parse_config(text)
    seed = args.seed if getattr(args, "seed", None) is not None else None
    if seed is None and os.environ.get(SEED_ENV, "").strip():
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ValidationError(SEED_ENV, "must be an integer") from None
    if seed is not None:
        spec = replace(spec, seeds=(seed,))
    ctrl = getattr(args, "controllers", None)
    if ctrl:
        spec = replace(spec, controllers=tuple(x.strip() for x in ctrl.split(",") if x.strip()))
    return spec, text


def _write_outputs(args, rows, summary):
    written = []
    if args.format in ("csv", "both"):
        path = os.path.join(args.out, "metrics.csv")
        atomic_write(path, rows_to_csv(rows))
        written.append(path)
    if args.format in ("json", "both"):
        path = os.path.join(args.out, "summary.json")
        atomic_write(path, _json(summary))
        written.append(path)
    if args.plot:
        from . import plots

        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "reward_curves.svg")
        plots.reward_curves(rows, path)
        written.append(path)
    return written


def cmd_run(args, compare=False):
    spec, text = _load(args)
    if args.jobs < 1:
        raise ValidationError("jobs", "must be >= 1")
    if compare and not args.controllers:
        spec = replace(spec, controllers=CONTROLLERS)
    rows = run_all(spec, spec.controllers, args.jobs)
    summary = {"command": args.command, "spec": spec_echo(spec, text), **summarize(rows, spec)}
    written = _write_outputs(args, rows, summary)
    if args.plot and "queue_cdf" in spec.metrics:
        from . import plots

        curves = {}
        for c in spec.controllers:
            extras: dict = {}
            run_sequential(spec, c, spec.seeds[0], extras)
            samples = next(reversed(extras["queue_samples"].values()))
            curves[c] = queue_cdf(samples)
        path = os.path.join(args.out, "queue_cdf.svg")
        plots.cdf_chart(curves, path)
        written.append(path)
    return {"rows": len(rows), "files": len(written)}


def cmd_sweep(args):
    spec, text = _load(args)
    if args.jobs < 1:
        raise ValidationError("jobs", "must be >= 1")
    points = None
    if args.points:
        raw = [p.strip() for p in args.points.split(",") if p.strip()]
        if args.parameter == "eh_dynamicity":
            points = raw
        elif args.parameter == "n_nodes":
            points = [int(p) for p in raw]
        else:
            points = [float(p) for p in raw]
    table = sweep(args.parameter, spec, spec.controllers, spec.seeds, points, args.jobs)
    summary_rows = aggregate(table, ("controller", "point"), "avg_energy_mJ_per_slot")
    checks = {}
    by_point: dict = {}
    for s in summary_rows:
        by_point.setdefault(s["point"], {})[s["controller"]] = s["median"]
    if "cdl2rl" in spec.controllers and "pgrl" in spec.controllers:
        ok = all(v["cdl2rl"] <= 1.05 * v["pgrl"] for v in by_point.values())
        checks["energy_ordering"] = _check(ok, "cdl2rl median energy <= 1.05x pgrl at every point")
    summary = {
        "command": "sweep",
        "parameter": args.parameter,
        "spec": spec_echo(spec, text),
        "summary": summary_rows,
        "checks": checks,
        "runs": table,
    }
    written = []
    if args.format in ("csv", "both"):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["controller", "parameter", "point", "seed", "avg_energy_mJ_per_slot", "state_dim"])
        for t in table:
            w.writerow([t["controller"], t["parameter"], t["point"], t["seed"], repr(t["avg_energy_mJ_per_slot"]), t["state_dim"]])
        atomic_write(os.path.join(args.out, "sweep.csv"), buf.getvalue())
        written.append("sweep.csv")
    if args.format in ("json", "both"):
        atomic_write(os.path.join(args.out, "summary.json"), _json(summary))
        written.append("summary.json")
    if args.plot:
        from . import plots

        plots.bar_chart(summary_rows, os.path.join(args.out, "sweep.svg"), xlabel=args.parameter)
        written.append("sweep.svg")
    return {"points": len(by_point), "files": len(written)}


def cmd_report(args):
    path = args.input or os.path.join(args.out, "metrics.csv")
    try:
        with open(path, encoding="utf-8") as fh:
            rows = rows_from_csv(fh.read())
    except OSError as exc:
        raise ValidationError("input", f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise ValidationError("input", "metrics file has no rows")
    spec, text = (None, None)
    if args.config or args.preset:
        spec, text = _load(args)
    summary = {"command": "report", **summarize(rows, spec)}
    if spec is not None:
        summary["spec"] = spec_echo(spec, text)
    atomic_write(os.path.join(args.out, "summary.json"), _json(summary))
    if args.plot:
        from . import plots

        plots.reward_curves(rows, os.path.join(args.out, "reward_curves.svg"))
    return {"rows": len(rows)}


def cmd_validate(args):
    spec, _ = _load(args)
    return {"tasks": len(spec.task_list()), "domains": len(spec.domain_sequence)}


def _status(**kv) -> str:
    parts = []
    for k, v in kv.items():
        s = str(v).replace("\n", " ")
        parts.append(f"{k}={json.dumps(s) if (' ' in s or '=' in s or not s) else s}")
    return " ".join(parts)


def main(argv=None) -> int:
    command = "?"
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        if command in ("run", "compare"):
            info = cmd_run(args, compare=command == "compare")
        elif command == "sweep":
            info = cmd_sweep(args)
        elif command == "report":
            info = cmd_report(args)
        else:
            info = cmd_validate(args)
        print(_status(status="ok", command=command, **info), file=sys.stderr)
        return EXIT_OK
    except (UsageError, ValidationError, SwiptBenchError) as exc:
        if isinstance(exc, ValueError) or isinstance(exc, UsageError):
            print(_status(status="invalid", command=command, error=type(exc).__name__, message=exc), file=sys.stderr)
            return EXIT_INVALID
        print(_status(status="error", command=command, error=type(exc).__name__, message=exc), file=sys.stderr)
        return EXIT_RUNTIME
    except SystemExit as exc:
        # argparse --help exits with 0
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - every other failure maps onto exit code 2
        print(_status(status="error", command=command, error=type(exc).__name__, message=exc), file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
