import csv
import math
import subprocess
import sys

import numpy as np
import pytest

from calibra import serialize
from calibra.calibrators import MARGIN
from calibra.caltree import PCTCalibrator
from calibra.cli import main
from calibra.data import write_arff, write_csv
from calibra.evaluation import rmse

from conftest import make_dataset
from test_caltree import example_tree


def read_probs(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]]).reshape(len(rows) - 1, len(rows[0]))


@pytest.fixture
def toy_arff(tmp_path):
    rng = np.random.default_rng(3)
    n = 120
    X = np.column_stack([rng.normal(size=n), rng.integers(0, 3, n)])
    y = ((X[:, 0] + (X[:, 1] == 2) + rng.normal(size=n) * 0.7) > 0.4).astype(int)
    X[:4, 0] = np.nan
    d = make_dataset(X, y, kinds=[None, ("r", "g", "b")], name="toy")
    path = tmp_path / "toy.arff"
    write_arff(d, path)
    return path, d


@pytest.mark.parametrize("method", ["pct", "platt", "isotonic"])
def test_fit_then_calibrate(tmp_path, toy_arff, method, capsys):
    path, d = toy_arff
    model = tmp_path / "m.json"
    assert main(["fit", "--method", method, "--base", "nb", "--data", str(path), "--out", str(model),
                 "--seed", "1"]) == 0
    reported = float(capsys.readouterr().out.split("training RMSE ")[1].split()[0])
    out = tmp_path / "p.csv"
    assert main(["calibrate", "--model", str(model), "--data", str(path), "--out", str(out)]) == 0
    header, P = read_probs(out)
    assert header == ["p_neg", "p_pos"] and P.shape == (d.n, 2)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert rmse(P, d.y) == pytest.approx(reported, abs=1e-12)


def test_outputs_byte_deterministic(tmp_path, toy_arff):
    path, _ = toy_arff
    blobs = []
    for k in range(2):
        model, out = tmp_path / f"m{k}.json", tmp_path / f"p{k}.csv"
        main(["fit", "--base", "stumps", "--data", str(path), "--out", str(model), "--seed", "9"])
        main(["calibrate", "--model", str(model), "--data", str(path), "--out", str(out)])
        blobs.append((model.read_bytes(), out.read_bytes()))
    assert blobs[0] == blobs[1]


def test_seed_from_environment(tmp_path, toy_arff, monkeypatch):
    path, _ = toy_arff
    monkeypatch.setenv("CALIBRA_SEED", "9")
    main(["fit", "--data", str(path), "--base", "nb", "--out", str(tmp_path / "a.json")])
    main(["fit", "--data", str(path), "--base", "nb", "--out", str(tmp_path / "b.json"), "--seed", "9"])
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    monkeypatch.setenv("CALIBRA_SEED", "nine")
    assert main(["fit", "--data", str(path), "--base", "nb", "--out", str(tmp_path / "c.json")]) == 2


def test_usage_errors(tmp_path, toy_arff):
    path, _ = toy_arff
    out = str(tmp_path / "m.json")
    assert main(["fit", "--base", "nb", "--data", str(tmp_path / "missing.arff"), "--out", out]) == 2
    assert main(["fit", "--data", str(path), "--out", out]) == 2
    assert main(["fit", "--method", "spline", "--base", "nb", "--data", str(path), "--out", out]) == 2
    assert main(["calibrate", "--model", str(tmp_path / "none.json"), "--data", str(path),
                 "--out", str(tmp_path / "p.csv")]) == 2
    (tmp_path / "junk.json").write_text("{}")
    assert main(["calibrate", "--model", str(tmp_path / "junk.json"), "--data", str(path),
                 "--out", str(tmp_path / "p.csv")]) == 2
    assert main(["benchmark", "--data", str(path), "--folds", "1"]) == 2
    assert main([]) == 2


def test_calibrate_schema_mismatch(tmp_path, toy_arff):
    path, _ = toy_arff
    model = tmp_path / "m.json"
    main(["fit", "--base", "nb", "--data", str(path), "--out", str(model)])
    other = make_dataset(np.zeros((3, 1)), [0, 1, 0])
    write_csv(other, tmp_path / "o.csv")
    assert main(["calibrate", "--model", str(model), "--data", str(tmp_path / "o.csv"),
                 "--out", str(tmp_path / "p.csv")]) == 2


def test_calibrate_empty_and_large(tmp_path, toy_arff):
    path, d = toy_arff
    model = tmp_path / "m.json"
    main(["fit", "--base", "nb", "--data", str(path), "--out", str(model)])
    text = path.read_text()
    head = text[: text.lower().index("@data") + len("@data\n")]
    (tmp_path / "empty.arff").write_text(head)
    out = tmp_path / "e.csv"
    assert main(["calibrate", "--model", str(model), "--data", str(tmp_path / "empty.arff"), "--out", str(out)]) == 0
    assert out.read_text().splitlines() == ["p_neg,p_pos"]
    rows = text[len(head):].strip().splitlines()
    big = head + "\n".join(rows[k % len(rows)] for k in range(1000)) + "\n"
    (tmp_path / "big.arff").write_text(big)
    out = tmp_path / "b.csv"
    assert main(["calibrate", "--model", str(model), "--data", str(tmp_path / "big.arff"), "--out", str(out)]) == 0
    assert read_probs(out)[1].shape == (1000, 2)


def test_external_scores(tmp_path):
    rng = np.random.default_rng(1)
    n = 80
    X = rng.normal(size=(n, 1))
    s = rng.normal(size=n) * 2
    y = (rng.random(n) < 1 / (1 + np.exp(-s))).astype(int)
    write_csv(make_dataset(X, y), tmp_path / "d.csv")
    with open(tmp_path / "s.csv", "w") as fh:
        fh.write("score_0\n" + "".join(f"{float(v)!r}\n" for v in s))
    model = tmp_path / "m.json"
    assert main(["fit", "--method", "platt", "--scores", str(tmp_path / "s.csv"), "--data", str(tmp_path / "d.csv"),
                 "--out", str(model)]) == 0
    out = tmp_path / "p.csv"
    assert main(["calibrate", "--model", str(model), "--data", str(tmp_path / "d.csv"),
                 "--out", str(out)]) == 2  # scores are required
    assert main(["calibrate", "--model", str(model), "--data", str(tmp_path / "d.csv"),
                 "--scores", str(tmp_path / "s.csv"), "--out", str(out)]) == 0
    P = read_probs(out)[1]
    assert np.all(np.diff(P[np.argsort(s), 1]) >= 0)


def test_hand_built_tree_pipeline(tmp_path):
    tree = example_tree()
    cal = PCTCalibrator(tree.attributes, MARGIN)
    cal.tree = tree
    doc = serialize.pipeline_to_dict(("pos", "neg"), tree.attributes, None, None, cal, MARGIN)
    serialize.save(doc, tmp_path / "tree.json")
    X = np.zeros((1, 10))
    X[0, 4] = 1  # x5 true, x8 false
    write_csv(make_dataset(X, [0], kinds=[("false", "true")] * 10, classes=("pos", "neg")), tmp_path / "x.csv")
    (tmp_path / "s.csv").write_text("score_0\n2.389\n")
    out = tmp_path / "p.csv"
    assert main(["calibrate", "--model", str(tmp_path / "tree.json"), "--data", str(tmp_path / "x.csv"),
                 "--scores", str(tmp_path / "s.csv"), "--out", str(out)]) == 0
    header, P = read_probs(out)
    assert header == ["p_pos", "p_neg"]
    assert P[0, 0] == pytest.approx(1 / (1 + math.exp(-2 * (0.54 + 0.27 * 2.389))), abs=1e-12)


def test_reliability_outputs(tmp_path, toy_arff):
    path, _ = toy_arff
    assert main(["reliability", "--data", str(path), "--folds", "3", "--out-dir", str(tmp_path / "r"),
                 "--seed", "2"]) == 0
    names = sorted(p.name for p in (tmp_path / "r").iterdir())
    assert names == ["plot_toy_nb.py", "toy_nb_isotonic.csv", "toy_nb_pct.csv", "toy_nb_platt.csv", "toy_nb_raw.csv"]
    compile((tmp_path / "r" / "plot_toy_nb.py").read_text(), "plot", "exec")
    rows = (tmp_path / "r" / "toy_nb_pct.csv").read_text().splitlines()
    assert sum(int(r.split(",")[2]) for r in rows[1:]) == 120


def test_reliability_multiclass_needs_class(tmp_path):
    d = make_dataset(np.arange(30.0)[:, None], np.arange(30) % 3, classes=("a", "b", "c"))
    write_csv(d, tmp_path / "m.csv")
    args = ["reliability", "--data", str(tmp_path / "m.csv"), "--folds", "2", "--out-dir", str(tmp_path / "o")]
    assert main(args) == 2
    assert main(args + ["--positive-class", "zz"]) == 2
    assert main(args + ["--positive-class", "c", "--methods", "platt"]) == 0


def test_benchmark_command(tmp_path, toy_arff, capsys):
    path, _ = toy_arff
    out = tmp_path / "rep.csv"
    assert main(["benchmark", "--data", str(path), str(tmp_path / "missing.arff"), "--runs", "1", "--folds", "2",
                 "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "toy" in text and "pct" in text
    assert out.read_text().startswith("dataset,method,mean_rmse")


def test_console_module():
    r = subprocess.run([sys.executable, "-m", "calibra", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "calibrate" in r.stdout
