"""Replicated benchmark runs, regret bookkeeping and plain-text result files."""
from __future__ import annotations

import csv
import io
import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .acquisitions import (AcquisitionContext, ei_batch, maximize_acquisition, pi_batch,
                           random_suggest, rollout_suggest)
from .errors import ConfigError
from .gp import Dataset, fit
from .objectives import Objective, make_objective
from .optimizer import EarlBoConfig, earlbo_step
from .turbo import TrustRegion, tr_suggest, tr_update

log = logging.getLogger(__name__)

METHODS = ("earlbo", "ei", "pi", "random", "turbo", "rollout_mc")


@dataclass
class BenchmarkSpec:
    objective: str
    dim: int | None = None
    methods: tuple[str, ...] = ("earlbo",)
    iters: int = 20
    n_init: int = 30
    reps: int = 10
    seed: int = 0
    horizon: int = 3
    paper_scale: bool = False
    max_episodes: int | None = None
    off_policy_episodes: int | None = None
    update_episodes: int = 50
    epochs: int = 100
    rl_lr: tuple[float, ...] = (1e-3,)
    encoder_lr: tuple[float, ...] = (1e-2,)
    lr_labels: bool = False
    n_mc: int = 128
    jobs: int = 1
    timing: bool = True

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.rl_lr = tuple(float(v) for v in np.atleast_1d(self.rl_lr))
        self.encoder_lr = tuple(float(v) for v in np.atleast_1d(self.encoder_lr))
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if self.reps < 1 or self.iters < 0 or self.n_init < 1:
            raise ConfigError("need reps >= 1, iters >= 0 and n_init >= 1")
        if len(self.rl_lr) != len(self.encoder_lr):
            if len(self.rl_lr) == 1:
                self.rl_lr = self.rl_lr * len(self.encoder_lr)
            elif len(self.encoder_lr) == 1:
                self.encoder_lr = self.encoder_lr * len(self.rl_lr)
            else:
                raise ConfigError("--rl-lr and --encoder-lr lists must have equal length")

    def earlbo_config(self, rl_lr: float, encoder_lr: float, seed: int) -> EarlBoConfig:
        if self.paper_scale:
            max_ep, off_ep = 4000, 400
        else:
            max_ep, off_ep = 400, 50
        if self.max_episodes is not None:
            max_ep = self.max_episodes
        if self.off_policy_episodes is not None:
            off_ep = self.off_policy_episodes
        return EarlBoConfig(horizon=self.horizon, max_episodes=max_ep, off_policy_episodes=off_ep,
                            update_episodes=self.update_episodes, epochs=self.epochs,
                            rl_lr=rl_lr, encoder_lr=encoder_lr, seed=seed)

    def variants(self) -> list[tuple[str, str, dict]]:
        """(label, method, extra settings) for every result set to produce."""
        out = []
        for m in self.methods:
            if m == "earlbo" and (self.lr_labels or len(self.rl_lr) > 1):
                for rl, enc in zip(self.rl_lr, self.encoder_lr):
                    out.append((f"earlbo_rl{rl:g}_enc{enc:g}", m, {"rl_lr": rl, "encoder_lr": enc}))
            elif m == "earlbo":
                out.append((m, m, {"rl_lr": self.rl_lr[0], "encoder_lr": self.encoder_lr[0]}))
            else:
                out.append((m, m, {}))
        return out

    def as_config(self) -> dict[str, str]:
        cfg = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif v is None:
                continue
            cfg[f.name.replace("_", "-")] = str(v).lower() if isinstance(v, bool) else str(v)
        return cfg


@dataclass
class RunRecord:
    label: str
    replication: int
    seed: int
    dim: int
    y_opt: float | None
    iteration: list[int] = field(default_factory=list)
    X: list[np.ndarray] = field(default_factory=list)
    y: list[float] = field(default_factory=list)
    best: list[float] = field(default_factory=list)
    regret: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    training: list[dict] = field(default_factory=list)
    failed: bool = False
    error: str = ""

    def append(self, iteration: int, x, y: float, wall_ms: float) -> None:
        best = y if not self.best else max(self.best[-1], y)
        self.iteration.append(iteration)
        self.X.append(np.asarray(x, dtype=float).copy())
        self.y.append(float(y))
        self.best.append(best)
        self.regret.append(self.y_opt - best if self.y_opt is not None else float("nan"))
        self.wall_ms.append(float(wall_ms))

    def final_regret(self) -> float:
        return self.regret[-1]

    def regret_by_iteration(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for it, r in zip(self.iteration, self.regret):
            out[it] = r
        return out


def _method_rng(root_seed: int, rep: int, label: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([root_seed, rep, zlib.crc32(label.encode())]))


def initial_design(objective: Objective, n_init: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform initial points; identical for every method given the seed."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(objective.lb, objective.ub, size=(n_init, objective.dim))
    return X, np.array([objective.fn(x) for x in X])


def run_replication(spec: BenchmarkSpec, label: str, method: str, extra: dict, rep: int
                    ) -> RunRecord:
    objective = make_objective(spec.objective, spec.dim)
    seed = spec.seed + rep
    rec = RunRecord(label, rep, seed, objective.dim, objective.y_opt)
    X0, y0 = initial_design(objective, spec.n_init, seed)
    for x, y in zip(X0, y0):
        rec.append(0, x, y, 0.0)
    data = Dataset(X0, y0, objective.lb, objective.ub)
    rng = _method_rng(spec.seed, rep, label)
    tr = None
    clock = time.perf_counter if spec.timing else (lambda: 0.0)
    try:
        for it in range(1, spec.iters + 1):
            t0 = clock()
            if method == "random":
                x = random_suggest(data.lb, data.ub, rng)
            elif method in ("ei", "pi"):
                model = fit(data, seed=int(rng.integers(2**31)))
                ctx = AcquisitionContext.from_data(model, data)
                acq = ei_batch if method == "ei" else pi_batch
                x = maximize_acquisition(lambda Z: acq(ctx, Z), data.lb, data.ub, rng)
            elif method == "rollout_mc":
                model = fit(data, seed=int(rng.integers(2**31)))
                ctx = AcquisitionContext.from_data(model, data)
                x = rollout_suggest(ctx, spec.horizon, rng, n_mc=spec.n_mc)
            elif method == "turbo":
                model = fit(data, seed=int(rng.integers(2**31)))
                if tr is None:
                    tr = TrustRegion(data.X[int(np.argmax(data.y))].copy())
                x = tr_suggest(model, tr, data.lb, data.ub, rng)
            elif method == "earlbo":
                cfg = spec.earlbo_config(extra["rl_lr"], extra["encoder_lr"], int(rng.integers(2**31)))
                res = earlbo_step(data, cfg)
                x = res.x
                for entry in res.log:
                    rec.training.append({"iteration": it, "fallback": int(res.used_fallback), **entry})
            else:
                raise ConfigError(f"unknown method {method!r}")
            y = objective.fn(x)
            incumbent = data.incumbent
            data = data.add(x, y)
            if tr is not None:
                tr = tr_update(tr, y > incumbent, center=data.X[int(np.argmax(data.y))])
                if tr.restart:
                    tr = tr.restarted(data.X[int(np.argmax(data.y))])
            rec.append(it, x, y, (clock() - t0) * 1e3)
    except Exception as exc:
        log.exception("replication %d of %s failed", rep, label)
        rec.failed = True
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def _run_job(args):
    return run_replication(*args)


def run_experiment(spec: BenchmarkSpec) -> dict[str, list[RunRecord]]:
    """All variants x replications. Replications of one variant share nothing
    but the initial design; ``jobs > 1`` runs them in worker processes."""
    make_objective(spec.objective, spec.dim)  # fail fast on a bad objective
    jobs = [(spec, label, method, extra, rep) for label, method, extra in spec.variants()
            for rep in range(spec.reps)]
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    out: dict[str, list[RunRecord]] = {}
    for rec in results:
        out.setdefault(rec.label, []).append(rec)
    return out


# ---------------------------------------------------------------------------
# summaries and files


SUMMARY_COLUMNS = ["method", "iteration", "n", "mean_regret", "std_regret", "median_regret"]


def summarize_records(records: dict[str, list[RunRecord]]) -> list[dict]:
    """Per-method, per-iteration regret statistics over successful replications."""
    rows = []
    for label in sorted(records):
        recs = [r for r in records[label] if not r.failed]
        by_it = [r.regret_by_iteration() for r in recs]
        iterations = sorted(set().union(*by_it)) if by_it else []
        for it in iterations:
            vals = np.array([b[it] for b in by_it if it in b])
            rows.append({"method": label, "iteration": it, "n": int(vals.size),
                         "mean_regret": float(vals.mean()), "std_regret": float(vals.std()),
                         "median_regret": float(np.median(vals))})
    return rows


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def result_header(dim: int) -> list[str]:
    return (["replication", "iteration"] + [f"x{i + 1}" for i in range(dim)]
            + ["y", "best", "regret", "wall_ms"])


TRAINING_COLUMNS = ["replication", "iteration", "episode", "phase", "mean_reward",
                    "policy_loss", "value_loss", "entropy", "fallback"]


def write_results(records: dict[str, list[RunRecord]], out_dir, spec: BenchmarkSpec | None = None
                  ) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for label in sorted(records):
        everything = sorted(records[label], key=lambda r: r.replication)
        dim = everything[0].dim
        recs = [r for r in everything if not r.failed]
        rows = []
        for r in recs:
            for i in range(len(r.iteration)):
                rows.append([r.replication, r.iteration[i], *r.X[i], r.y[i], r.best[i], r.regret[i],
                             r.wall_ms[i]])
        path = out / f"results_{label}.csv"
        _write_csv(path, result_header(dim), rows)
        written.append(path)
        train_rows = [[r.replication, t["iteration"], t["episode"], t["phase"], t["mean_reward"],
                       t["policy_loss"], t["value_loss"], t["entropy"], t["fallback"]]
                      for r in recs for t in r.training]
        if train_rows:
            path = out / f"training_{label}.csv"
            _write_csv(path, TRAINING_COLUMNS, train_rows)
            written.append(path)
    path = out / "summary.csv"
    _write_csv(path, SUMMARY_COLUMNS, [[r[c] for c in SUMMARY_COLUMNS]
                                       for r in summarize_records(records)])
    written.append(path)
    path = out / "metadata.txt"
    with path.open("w", newline="\n") as fh:
        fh.write(metadata_text(records, spec))
    written.append(path)
    return written


def metadata_text(records: dict[str, list[RunRecord]], spec: BenchmarkSpec | None) -> str:
    buf = io.StringIO()
    buf.write("# replay with: earlbo run --config <this file> --out <dir>\n")
    if spec is not None:
        for k, v in spec.as_config().items():
            buf.write(f"{k} = {v}\n")
    for label in sorted(records):
        for r in sorted(records[label], key=lambda r: r.replication):
            status = f"failed ({r.error})" if r.failed else "ok"
            buf.write(f"# {label} replication {r.replication}: init seed {r.seed}, {status}\n")
    return buf.getvalue()


def read_results(path) -> tuple[str, list[dict]]:
    path = Path(path)
    label = path.stem[len("results_"):]
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return label, rows


def summarize_dir(in_dir) -> list[dict]:
    """Recompute the summary table from the raw per-method files."""
    in_dir = Path(in_dir)
    files = sorted(in_dir.glob("results_*.csv"))
    if not files:
        raise FileNotFoundError(f"no results_*.csv files in {in_dir}")
    out = []
    for f in files:
        label, rows = read_results(f)
        final: dict[int, dict[int, float]] = {}
        for row in rows:
            final.setdefault(int(row["iteration"]), {})[int(row["replication"])] = float(row["regret"])
        for it in sorted(final):
            vals = np.array([final[it][rep] for rep in sorted(final[it])])
            out.append({"method": label, "iteration": it, "n": int(vals.size),
                        "mean_regret": float(vals.mean()), "std_regret": float(vals.std()),
                        "median_regret": float(np.median(vals))})
    out.sort(key=lambda r: (r["method"], r["iteration"]))
    return out


def read_summary(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"method": r["method"], "iteration": int(r["iteration"]), "n": int(r["n"]),
             "mean_regret": float(r["mean_regret"]), "std_regret": float(r["std_regret"]),
             "median_regret": float(r["median_regret"])} for r in rows]
