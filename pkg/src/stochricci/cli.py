"""Command-line runner for the experiment registry.

Configuration is a flat ``key=value`` file (``#`` starts a comment) merged
over each experiment's defaults, with ``--set key=value`` and the global
flags applied last.  Each run writes one directory of CSV tables per
experiment plus a ``manifest.json``, and prints a JSON verdict block to
stdout.  Exit status: 0 when every experiment passes, 1 on any failure,
2 on usage or configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import numbers
import os
import subprocess
import sys
import time
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence, Tuple

from . import __version__
from .experiments import (FIELD_TYPES, GROUPS, REGISTRY, ConfigError, Context, Experiment,
                          Outcome, experiments)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


# ---------------------------------------------------------------------------
# configuration


def _convert(key: str, raw: str, line: Optional[int] = None):
    if key not in FIELD_TYPES:
        raise ConfigError(key, "unknown configuration key", line)
    raw = raw.strip()
    if key == "dt_pde" and raw.lower() in ("", "auto"):
        return None
    if key in ("preset", "custom_file") and raw.lower() in ("", "none"):
        return None
    kind = FIELD_TYPES[key]
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(key, f"expected {kind.__name__}, got {raw!r}", line) from None


def parse_config(text: str) -> Tuple[Dict[str, object], Dict[str, int]]:
    """Parse key=value lines; returns (values, line number of each key)."""
    values, lines = {}, {}
    for num, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(body.split()[0], "expected key=value", num)
        key, raw = (part.strip() for part in body.split("=", 1))
        if key in values:
            raise ConfigError(key, "duplicate key", num)
        values[key] = _convert(key, raw, num)
        lines[key] = num
    return values, lines


def load_config(path: str) -> Tuple[Dict[str, object], Dict[str, int]]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def parse_overrides(items: Sequence[str]) -> Dict[str, object]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        out[key.strip()] = _convert(key.strip(), raw)
    return out


def build_config(exp: Experiment, file_values: Dict[str, object], file_lines: Dict[str, int],
                 overrides: Dict[str, object]):
    merged = {k: v for k, v in {**file_values, **overrides}.items() if k != "experiment"}
    if merged.get("preset") is not None and "custom_file" not in merged:
        merged["custom_file"] = None
    try:
        return exp.config(**merged)
    except ConfigError as exc:
        if exc.field in file_lines and exc.field not in overrides:
            raise ConfigError(exc.field, exc.message, file_lines[exc.field]) from None
        raise


# ---------------------------------------------------------------------------
# output


def _cell(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, numbers.Integral):
        return str(int(x))
    if isinstance(x, numbers.Real):
        return repr(float(x))
    return str(x)


def write_csv(path: str, columns: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + ",".join(columns) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        for row in rows:
            writer.writerow([_cell(x) for x in row])


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, numbers.Integral):
        return int(x)
    if isinstance(x, numbers.Real):
        x = float(x)
        return x if math.isfinite(x) else None
    return str(x)


def build_id() -> str:
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# ---------------------------------------------------------------------------
# running


def run_one(exp: Experiment, cfg, out_dir: Optional[str]) -> Dict[str, object]:
    start = time.perf_counter()
    try:
        outcome: Outcome = exp.run(cfg, Context(cfg.seed))
        verdict, error = ("pass" if outcome.passed else "fail"), None
    except Exception as exc:  # reported in the verdict block, never swallowed silently
        outcome, verdict, error = None, "error", f"{type(exc).__name__}: {exc}"
    wall = time.perf_counter() - start
    files = []
    if out_dir is not None and outcome is not None:
        target = os.path.join(out_dir, exp.name)
        os.makedirs(target, exist_ok=True)
        for name, table in sorted(outcome.tables.items()):
            path = os.path.join(target, f"{name}.csv")
            write_csv(path, table.columns, table.rows)
            files.append(os.path.relpath(path, out_dir))
    record = {
        "experiment": exp.name,
        "anchor": exp.anchor,
        "config": cfg.as_dict(),
        "verdict": verdict,
        "metrics": outcome.metrics if outcome is not None else {},
        "wall_time_s": wall,
        "files": files,
    }
    if error is not None:
        record["error"] = error
    return record


def run_experiments(selected: List[Experiment], file_values, file_lines, overrides,
                    write: bool = True) -> Tuple[int, Dict[str, object]]:
    configs = [(exp, build_config(exp, file_values, file_lines, overrides)) for exp in selected]
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    out_dir = configs[0][1].out if write and configs else None
    records = []
    for exp, cfg in configs:
        print(f"running {exp.name} ...", file=sys.stderr, flush=True)
        rec = run_one(exp, cfg, out_dir)
        print(f"  {rec['verdict']} in {rec['wall_time_s']:.1f}s", file=sys.stderr, flush=True)
        records.append(rec)
    all_passed = all(r["verdict"] == "pass" for r in records)
    manifest = _jsonable({
        "build": build_id(),
        "started_at": started,
        "wall_time_s": time.perf_counter() - t0,
        "all_passed": all_passed,
        "experiments": records,
    })
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, ensure_ascii=False)
            fh.write("\n")
    return (EXIT_OK if all_passed else EXIT_FAIL), manifest


def verdict_block(manifest: Dict[str, object]) -> str:
    block = {
        "all_passed": manifest["all_passed"],
        "verdicts": {r["experiment"]: r["verdict"] for r in manifest["experiments"]},
    }
    errors = {r["experiment"]: r["error"] for r in manifest["experiments"] if "error" in r}
    if errors:
        block["errors"] = errors
    return json.dumps(block, indent=2)


def list_experiments(out=None) -> None:
    out = out or sys.stdout
    exps = experiments()
    width = max(len(e.name) for e in exps)
    for e in exps:
        print(f"{e.name:<{width}}  [{e.group}] {e.description}; probes: {e.anchor}", file=out)


# ---------------------------------------------------------------------------
# argument parsing


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    default = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", default=default, help="key=value configuration file")
    p.add_argument("--seed", type=int, default=default, help="root seed (unsigned 64-bit)")
    p.add_argument("--out", metavar="DIR", default=default, help="output directory")
    p.add_argument("--threads", type=int, default=default, help="worker threads for path batches")
    return p


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochricci", parents=[_global_flags(False)],
                                     description="Run flow, coupling and target-process experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_flags(True)

    def overrides(p):
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration field (repeatable)")
        p.add_argument("--no-output", action="store_true", help="skip writing CSV and manifest files")

    sub.add_parser("list", parents=[common], help="list registered experiments")
    p = sub.add_parser("run", parents=[common], help="run one experiment by name")
    p.add_argument("name", nargs="?", help="experiment name (default: 'experiment' in the config)")
    overrides(p)
    for group in GROUPS:
        names = ", ".join(e.name for e in experiments(group))
        p = sub.add_parser(group, parents=[common], help=f"run {group} experiments ({names})")
        p.add_argument("names", nargs="*", help="subset of this group's experiments")
        overrides(p)
    p = sub.add_parser("all", parents=[common], help="run every experiment")
    overrides(p)
    return parser


def _select(args, file_values) -> List[Experiment]:
    if args.command == "all":
        return experiments()
    if args.command == "run":
        name = args.name or file_values.get("experiment")
        if name is None:
            raise ConfigError("experiment", "no experiment named on the command line or in the config")
        if name not in REGISTRY:
            raise ConfigError("experiment", f"unknown experiment {name!r}")
        return [REGISTRY[name]]
    group = experiments(args.command)
    if not args.names:
        return group
    known = {e.name: e for e in group}
    for n in args.names:
        if n not in known:
            raise ConfigError("experiment", f"{n!r} is not in the {args.command} group")
    return [known[n] for n in args.names]


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.command == "list":
        list_experiments()
        return EXIT_OK
    try:
        file_values, file_lines = load_config(args.config) if args.config else ({}, {})
        over = parse_overrides(args.set)
        for flag in ("seed", "out", "threads"):
            if getattr(args, flag, None) is not None:
                over[flag] = getattr(args, flag)
        selected = _select(args, file_values)
        code, manifest = run_experiments(selected, file_values, file_lines, over,
                                         write=not args.no_output)
    except ConfigError as exc:
        print(f"stochricci: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(verdict_block(manifest))
    return code


if __name__ == "__main__":
    sys.exit(main())
