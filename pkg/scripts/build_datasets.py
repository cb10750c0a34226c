"""Regenerate data/*.arff from public copies of the UCI files.

Sources: the kr-vs-kp ARFF shipped with scikit-learn's test data, and the
``voting``, ``crx`` and ``tic_tac_toe`` tables in the Orange 2.7.8 source
distribution on PyPI.  The script downloads the Orange archive when it is
not found locally.

    python3 scripts/build_datasets.py [--orange PATH_TO_TARBALL]
"""

from __future__ import annotations

import argparse
import gzip
import io
import json
import tarfile
import urllib.request
from pathlib import Path

import numpy as np

from calibra.data import Attribute, Dataset, parse_arff, write_arff

ORANGE = "Orange==2.7.8"
OUT = Path(__file__).resolve().parent.parent / "data"


def sklearn_krkp() -> Dataset:
    import sklearn

    p = Path(sklearn.__file__).parent / "datasets/tests/data/openml/id_3/data-v1-dl-3.arff.gz"
    text = gzip.decompress(p.read_bytes()).decode("utf-8")
    d = parse_arff(text, "kr-vs-kp")
    return Dataset(d.attributes, d.X, d.y, d.class_names, "kr-vs-kp")


def orange_tarball(path: str | None) -> tarfile.TarFile:
    if path:
        return tarfile.open(path)
    with urllib.request.urlopen("https://pypi.org/pypi/Orange/2.7.8/json") as r:
        meta = json.load(r)
    url = next(u["url"] for u in meta["urls"] if u["packagetype"] == "sdist")
    with urllib.request.urlopen(url) as r:
        return tarfile.open(fileobj=io.BytesIO(r.read()))


def read_tab(tf: tarfile.TarFile, name: str, relation: str, numeric=()) -> Dataset:
    """Orange .tab: names, types, flags, then tab-separated rows; class flagged."""
    member = next(m for m in tf.getmembers() if m.name.endswith(f"datasets/{name}.tab"))
    lines = tf.extractfile(member).read().decode("utf-8").splitlines()
    names = lines[0].split("\t")
    flags = lines[2].split("\t") + [""] * len(names)
    ci = next(i for i, f in enumerate(flags[: len(names)]) if f.strip() == "class")
    rows = [ln.split("\t") for ln in lines[3:] if ln.strip()]
    rows = [r + [""] * (len(names) - len(r)) for r in rows]
    cols = list(zip(*rows))
    attrs, X = [], []
    for k, nm in enumerate(names):
        if k == ci:
            continue
        cells = [c.strip() for c in cols[k]]
        miss = [c in ("", "?") for c in cells]
        if nm in numeric:
            attrs.append(Attribute(nm))
            X.append([np.nan if m else float(c) for c, m in zip(cells, miss)])
        else:
            vals = tuple(sorted({c for c, m in zip(cells, miss) if not m}))
            attrs.append(Attribute(nm, vals))
            X.append([np.nan if m else float(vals.index(c)) for c, m in zip(cells, miss)])
    labels = [c.strip() for c in cols[ci]]
    classes = tuple(dict.fromkeys(labels))
    y = np.array([classes.index(c) for c in labels])
    return Dataset(tuple(attrs), np.array(X, dtype=float).T, y, classes, relation)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--orange", help="local Orange-2.7.8.tar.gz")
    args = ap.parse_args()
    OUT.mkdir(exist_ok=True)
    write_arff(sklearn_krkp(), OUT / "kr-vs-kp.arff")
    tf = orange_tarball(args.orange)
    write_arff(read_tab(tf, "voting", "vote"), OUT / "vote.arff")
    write_arff(read_tab(tf, "tic_tac_toe", "tic-tac-toe"), OUT / "tic-tac-toe.arff")
    crx = read_tab(tf, "crx", "credit-rating", numeric=("A2", "A3", "A8", "A11", "A14", "A15"))
    write_arff(crx, OUT / "credit-rating.arff")
    for p in sorted(OUT.glob("*.arff")):
        print(p.name)


if __name__ == "__main__":
    main()
