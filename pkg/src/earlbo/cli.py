"""Command-line entry point: ``run``, ``validate`` and ``summarize``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, EarlBoError
from .experiment import SUMMARY_COLUMNS, BenchmarkSpec, run_experiment, summarize_dir, write_results

# flag name -> (BenchmarkSpec field, parser)
_FLOATS = lambda s: tuple(float(v) for v in str(s).split(",") if v.strip())


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _int_or_none(s):
    return None if str(s).strip().lower() in ("", "none") else int(s)


RUN_KEYS = {
    "objective": ("objective", str),
    "dim": ("dim", _int_or_none),
    "method": ("methods", lambda s: tuple(m.strip() for m in str(s).split(",") if m.strip())),
    "methods": ("methods", lambda s: tuple(m.strip() for m in str(s).split(",") if m.strip())),
    "iters": ("iters", int),
    "n-init": ("n_init", int),
    "reps": ("reps", int),
    "seed": ("seed", int),
    "horizon": ("horizon", int),
    "paper-scale": ("paper_scale", _bool),
    "max-episodes": ("max_episodes", _int_or_none),
    "off-policy-episodes": ("off_policy_episodes", _int_or_none),
    "update-episodes": ("update_episodes", int),
    "epochs": ("epochs", int),
    "rl-lr": ("rl_lr", _FLOATS),
    "encoder-lr": ("encoder_lr", _FLOATS),
    "lr-labels": ("lr_labels", _bool),
    "n-mc": ("n_mc", int),
    "jobs": ("jobs", int),
    "timing": ("timing", _bool),
}


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in RUN_KEYS and key != "out":
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="earlbo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a benchmark experiment")
    run.add_argument("--config", help="key = value file; flags override it")
    run.add_argument("--objective", help="ackley|levy|rosenbrock|sumsquares or a table path")
    run.add_argument("--dim", type=int)
    run.add_argument("--method", help="comma-separated: earlbo,ei,pi,random,turbo,rollout_mc")
    run.add_argument("--iters", type=int)
    run.add_argument("--n-init", type=int)
    run.add_argument("--reps", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--horizon", type=int)
    run.add_argument("--out")
    run.add_argument("--paper-scale", action="store_const", const="true",
                     help="use 4000 episodes / 400 off-policy episodes")
    run.add_argument("--rl-lr", help="actor/critic learning rate(s), comma-separated")
    run.add_argument("--encoder-lr", help="encoder learning rate(s), paired with --rl-lr")
    run.add_argument("--max-episodes", type=int)
    run.add_argument("--off-policy-episodes", type=int)
    run.add_argument("--update-episodes", type=int)
    run.add_argument("--epochs", type=int)
    run.add_argument("--n-mc", type=int)
    run.add_argument("--jobs", type=int)
    run.add_argument("--no-timing", dest="timing", action="store_const", const="false",
                     help="write wall_ms as 0 so output files are byte-reproducible")

    val = sub.add_parser("validate", help="run the built-in property suites")
    val.add_argument("--quick", action="store_true", help="smaller problem counts")

    summ = sub.add_parser("summarize", help="re-derive summary tables from raw result files")
    summ.add_argument("--in", dest="in_dir", required=True)
    summ.add_argument("--out", help="write the table here instead of stdout")
    return parser


def spec_from_args(args: argparse.Namespace) -> tuple[BenchmarkSpec, str | None]:
    settings: dict[str, str] = {}
    if args.config:
        settings.update(read_config_file(args.config))
    for key in RUN_KEYS:
        attr = key.replace("-", "_")
        v = getattr(args, attr, None)
        if v is not None:
            settings[key] = v
    if getattr(args, "rl_lr", None) is not None or getattr(args, "encoder_lr", None) is not None:
        settings["lr-labels"] = "true"
    out = args.out if args.out is not None else settings.pop("out", None)
    settings.pop("out", None)
    kwargs = {}
    for key, value in settings.items():
        field_name, conv = RUN_KEYS[key]
        try:
            kwargs[field_name] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    if "objective" not in kwargs:
        raise ConfigError("--objective is required")
    return BenchmarkSpec(**kwargs), out


def _print_table(rows, fh) -> None:
    fh.write(",".join(SUMMARY_COLUMNS) + "\n")
    for r in rows:
        fh.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                          for c in SUMMARY_COLUMNS) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            spec, out = spec_from_args(args)
            if not out:
                raise ConfigError("--out is required")
            records = run_experiment(spec)
            for path in write_results(records, out, spec):
                print(path)
            failed = [(l, r.replication) for l, rs in records.items() for r in rs if r.failed]
            for label, rep in failed:
                print(f"warning: {label} replication {rep} failed", file=sys.stderr)
            return 0
        if args.command == "validate":
            from .validation import run_all
            results = run_all(quick=args.quick)
            for r in results:
                print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
            return 0 if all(r.passed for r in results) else 1
        if args.command == "summarize":
            rows = summarize_dir(args.in_dir)
            if args.out:
                with open(args.out, "w", newline="\n") as fh:
                    _print_table(rows, fh)
            else:
                _print_table(rows, sys.stdout)
            return 0
    except (EarlBoError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
