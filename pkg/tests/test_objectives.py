import math

import numpy as np
import pytest

from earlbo.errors import ConfigError, IngestionError
from earlbo.objectives import (SYNTHETIC, eval_synthetic, eval_tabular, load_hpo_table,
                               make_objective)


# second transcriptions, scalar loops from the textbook definitions
def ackley_ref(x):
    n = len(x)
    s1 = sum(v * v for v in x) / n
    s2 = sum(math.cos(2 * math.pi * v) for v in x) / n
    return -20 * math.exp(-0.2 * math.sqrt(s1)) - math.exp(s2) + 20 + math.e


def levy_ref(x):
    w = [1 + (v - 1) / 4 for v in x]
    total = math.sin(math.pi * w[0]) ** 2
    for i in range(len(w) - 1):
        total += (w[i] - 1) ** 2 * (1 + 10 * math.sin(math.pi * w[i] + 1) ** 2)
    return total + (w[-1] - 1) ** 2 * (1 + math.sin(2 * math.pi * w[-1]) ** 2)


def rosenbrock_ref(x):
    return sum(100 * (x[i + 1] - x[i] ** 2) ** 2 + (1 - x[i]) ** 2 for i in range(len(x) - 1))


def sumsquares_ref(x):
    return sum((i + 1) * v * v for i, v in enumerate(x))


REFS = {"ackley": ackley_ref, "levy": levy_ref, "rosenbrock": rosenbrock_ref, "sumsquares": sumsquares_ref}


@pytest.mark.parametrize("d", [1, 2, 5])
def test_known_minima(d):
    assert eval_synthetic("ackley", np.zeros(d)) == pytest.approx(0.0, abs=1e-12)
    assert eval_synthetic("sumsquares", np.zeros(d)) == 0.0
    assert eval_synthetic("levy", np.ones(d)) == pytest.approx(0.0, abs=1e-12)
    assert eval_synthetic("rosenbrock", np.ones(d)) == 0.0


@pytest.mark.parametrize("name", sorted(REFS))
def test_dual_transcription(name):
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.uniform(-15, 15, size=int(rng.integers(1, 9)))
        ref = -REFS[name](list(x))
        assert abs(eval_synthetic(name, x) - ref) <= 1e-12 * max(1.0, abs(ref))


def test_all_functions_covered():
    assert set(SYNTHETIC) == set(REFS)


def test_unknown_name_and_out_of_box():
    with pytest.raises(ConfigError):
        eval_synthetic("branin", [0.0])
    with pytest.raises(ValueError):
        eval_synthetic("ackley", [16.0])
    with pytest.raises(ConfigError):
        make_objective("branin", 2)
    with pytest.raises(ConfigError):
        make_objective("ackley")


def test_make_synthetic_objective():
    obj = make_objective("Sum_Squares", 3)
    assert obj.dim == 3 and obj.y_opt == 0.0
    assert np.all(obj.lb == -15) and np.all(obj.ub == 15)
    assert obj.fn(np.array([1.0, 1.0, 1.0])) == -6.0


def _write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_three_row_parse(tmp_path):
    t = load_hpo_table(_write(tmp_path, "lr,depth,acc\n0.1,3,0.8\n0.01,5,0.9\n0.5,4,0.7\n"))
    assert len(t) == 3 and t.dim == 2
    assert np.array_equal(t.lb, [0.01, 3]) and np.array_equal(t.ub, [0.5, 5])
    assert t.columns == ("lr", "depth", "acc")


def test_tab_delimited(tmp_path):
    t = load_hpo_table(_write(tmp_path, "a\tb\n1\t0.5\n2\t0.6\n", "t.tsv"))
    assert np.array_equal(t.y, [0.5, 0.6])


def test_duplicate_inputs_rejected(tmp_path):
    with pytest.raises(IngestionError, match="row 3"):
        load_hpo_table(_write(tmp_path, "a,b,y\n1,2,0.1\n3,4,0.2\n1,2,0.3\n"))


def test_non_numeric_cell_names_row(tmp_path):
    rows = "".join(f"{i},{i * 2},0.{i}\n" for i in range(1, 7)) + "7,x,0.7\n"
    with pytest.raises(IngestionError, match="row 7"):
        load_hpo_table(_write(tmp_path, "a,b,y\n" + rows))


def test_malformed_row(tmp_path):
    with pytest.raises(IngestionError, match="row 2"):
        load_hpo_table(_write(tmp_path, "a,b,y\n1,2,0.1\n3,0.2\n"))
    with pytest.raises(IngestionError):
        load_hpo_table(_write(tmp_path, ""))


def test_exact_row_lookup_and_linear_scan_oracle(tmp_path):
    rng = np.random.default_rng(1)
    X = rng.uniform([0, 10, -1], [1, 100, 1], size=(40, 3))
    y = rng.uniform(size=40)
    lines = ["p,q,r,acc"] + [",".join(repr(float(v)) for v in (*row, acc)) for row, acc in zip(X, y)]
    t = load_hpo_table(_write(tmp_path, "\n".join(lines) + "\n"))
    for i in (0, 17, 39):
        assert eval_tabular(t, X[i]) == y[i]
    lo, hi = X.min(0), X.max(0)
    for _ in range(200):
        x = rng.uniform(lo, hi)
        best_i, best_d = -1, math.inf
        for i in range(len(X)):
            d = sum(((x[j] - X[i, j]) / (hi[j] - lo[j])) ** 2 for j in range(3))
            if d < best_d:
                best_i, best_d = i, d
        assert eval_tabular(t, x) == y[best_i]


def test_tie_goes_to_lower_row(tmp_path):
    # rows 2 and 5 (1-based data rows) sit at 0.25 and 0.75; 0.5 is equidistant
    t = load_hpo_table(_write(tmp_path, "a,y\n0,1\n0.25,2\n0.9,3\n1,4\n0.75,5\n"))
    assert eval_tabular(t, [0.5]) == 2.0


def test_tabular_objective(tmp_path):
    p = _write(tmp_path, "a,b,y\n0,0,0.5\n1,1,0.9\n")
    obj = make_objective(str(p))
    assert obj.y_opt == 0.9 and obj.dim == 2
    assert obj.fn(np.array([0.9, 0.8])) == 0.9
    with pytest.raises(ConfigError):
        make_objective(str(p), 3)
