import csv
import math

import numpy as np
import pytest

from earlbo.errors import ConfigError
from earlbo.experiment import (BenchmarkSpec, RunRecord, initial_design, read_summary,
                               result_header, run_experiment, run_replication, summarize_dir,
                               summarize_records, write_results)
from earlbo.objectives import make_objective


def _spec(**kw):
    base = dict(objective="sumsquares", dim=2, methods=("ei", "random"), iters=10, n_init=5,
                reps=3, seed=7, timing=False)
    base.update(kw)
    return BenchmarkSpec(**base)


@pytest.fixture(scope="module")
def ei_random():
    spec = _spec()
    return spec, run_experiment(spec)


def test_shared_initial_regret(ei_random):
    _, recs = ei_random
    for rep in range(3):
        a, b = recs["ei"][rep], recs["random"][rep]
        assert a.regret[:5] == b.regret[:5]
        assert all(np.array_equal(x, y) for x, y in zip(a.X[:5], b.X[:5]))


def test_initial_design_depends_on_rep_seed():
    obj = make_objective("ackley", 2)
    X0, y0 = initial_design(obj, 4, 7)
    X1, _ = initial_design(obj, 4, 8)
    assert not np.array_equal(X0, X1)
    assert np.array_equal(X0, np.random.default_rng(7).uniform(-15, 15, size=(4, 2)))
    assert y0[0] == obj.fn(X0[0])


def test_regret_non_increasing_and_consistent(ei_random):
    _, recs = ei_random
    for rs in recs.values():
        for r in rs:
            assert not r.failed
            assert np.all(np.diff(r.regret) <= 0)
            assert np.all(np.diff(r.best) >= 0)
            assert r.best[-1] == max(r.y)
            assert r.iteration == [0] * 5 + list(range(1, 11))
            assert all(np.all(np.abs(x) <= 15) for x in r.X)


def test_record_append():
    r = RunRecord("m", 0, 0, 1, 2.0)
    for y in (1.0, 0.5, 1.5):
        r.append(0, [0.0], y, 0.0)
    assert r.best == [1.0, 1.0, 1.5] and r.regret == [1.0, 1.0, 0.5]
    assert r.regret_by_iteration() == {0: 0.5}
    unknown = RunRecord("t", 0, 0, 1, None)
    unknown.append(0, [0.0], 1.0, 0.0)
    assert math.isnan(unknown.regret[0])


def test_summary_matches_manual(ei_random):
    _, recs = ei_random
    rows = {(r["method"], r["iteration"]): r for r in summarize_records(recs)}
    vals = np.array([rec.regret[-1] for rec in recs["random"]])
    row = rows[("random", 10)]
    assert row["n"] == 3
    assert row["mean_regret"] == pytest.approx(np.mean(vals), abs=1e-15)
    assert row["std_regret"] == pytest.approx(np.std(vals), abs=1e-15)
    assert row["median_regret"] == np.median(vals)
    # iteration 0 uses the best of the initial design
    assert rows[("ei", 0)]["mean_regret"] == rows[("random", 0)]["mean_regret"]


def test_files_roundtrip_and_bytes(tmp_path, ei_random):
    spec, recs = ei_random
    write_results(recs, tmp_path / "a", spec)
    write_results(run_experiment(spec), tmp_path / "b", spec)
    for name in ("results_ei.csv", "results_random.csv", "summary.csv", "metadata.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    with open(tmp_path / "a" / "results_ei.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == result_header(2) and len(rows[0]) == 2 + 6
    assert len(rows) == 1 + 3 * 15
    raw = summarize_dir(tmp_path / "a")
    emitted = read_summary(tmp_path / "a" / "summary.csv")
    assert len(raw) == len(emitted)
    for r, e in zip(raw, emitted):
        assert (r["method"], r["iteration"], r["n"]) == (e["method"], e["iteration"], e["n"])
        for k in ("mean_regret", "std_regret", "median_regret"):
            assert abs(r[k] - e[k]) <= 1e-12


def test_metadata_lists_config_and_seeds(tmp_path, ei_random):
    spec, recs = ei_random
    write_results(recs, tmp_path, spec)
    text = (tmp_path / "metadata.txt").read_text()
    assert "objective = sumsquares" in text
    assert "seed = 7" in text
    assert "# ei replication 2: init seed 9, ok" in text


def test_method_failure_recorded(monkeypatch):
    import earlbo.experiment as ex

    def broken(*a, **k):
        raise RuntimeError("kaput")

    monkeypatch.setattr(ex, "random_suggest", broken)
    recs = run_experiment(_spec(methods=("random",), reps=2, iters=2))
    assert all(r.failed and "kaput" in r.error for r in recs["random"])
    assert summarize_records(recs) == []


def test_earlbo_variant_labels_and_training_log(tmp_path):
    spec = _spec(methods=("earlbo",), iters=1, reps=1, max_episodes=6, off_policy_episodes=3,
                 update_episodes=3, epochs=2, rl_lr=(1e-3, 1e-2), encoder_lr=(1e-2, 1e-3))
    labels = [v[0] for v in spec.variants()]
    assert labels == ["earlbo_rl0.001_enc0.01", "earlbo_rl0.01_enc0.001"]
    recs = run_experiment(spec)
    paths = {p.name for p in write_results(recs, tmp_path, spec)}
    assert {"results_earlbo_rl0.001_enc0.01.csv", "results_earlbo_rl0.01_enc0.001.csv"} <= paths
    assert any(n.startswith("training_") for n in paths)


def test_earlbo_config_scales():
    spec = _spec(methods=("earlbo",))
    cfg = spec.earlbo_config(1e-3, 1e-2, 0)
    assert (cfg.max_episodes, cfg.off_policy_episodes) == (400, 50)
    cfg = _spec(methods=("earlbo",), paper_scale=True).earlbo_config(1e-3, 1e-2, 0)
    assert (cfg.max_episodes, cfg.off_policy_episodes) == (4000, 400)


def test_spec_validation():
    with pytest.raises(ConfigError):
        _spec(methods=("sgd",))
    with pytest.raises(ConfigError):
        _spec(rl_lr=(1e-3, 1e-2), encoder_lr=(1e-2, 1e-3, 1e-4))
    assert _spec(rl_lr=(1e-3, 1e-2), encoder_lr=1e-2).encoder_lr == (1e-2, 1e-2)


def test_turbo_and_rollout_methods_run():
    spec = _spec(methods=("turbo", "rollout_mc", "pi"), iters=2, reps=1, n_mc=4)
    for label, rs in run_experiment(spec).items():
        assert not rs[0].failed, (label, rs[0].error)


def test_replication_deterministic():
    spec = _spec(methods=("turbo",), iters=4, reps=1)
    a = run_replication(spec, "turbo", "turbo", {}, 0)
    b = run_replication(spec, "turbo", "turbo", {}, 0)
    assert a.y == b.y
