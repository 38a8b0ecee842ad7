"""Macro-F1 against training budget on a synthetic corpus, driven through the CLI.

    python scripts/budget_experiment.py --work /tmp/topseg_budget --budgets 10 50 100 --seeds 0 1 2

Writes ``results.csv`` (budget, seed, macro_f1) in the work directory.
"""
import argparse
import csv
import shutil
from pathlib import Path

import numpy as np

from topseg.cli import main


def run(argv):
    rc = main([str(a) for a in argv])
    if rc != 0:
        raise SystemExit(f"topseg {argv[0]} exited with {rc}")


def main_():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", type=Path, required=True)
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--n-test", type=int, default=10)
    ap.add_argument("--snr", type=float, default=20.0)
    ap.add_argument("--budgets", type=float, nargs="+", default=[10, 50, 100])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--jobs", type=int, default=0)
    a = ap.parse_args()

    train, test, cache = a.work / "train", a.work / "test", a.work / "cache"
    if not train.exists():
        run(["synth", "--out-dir", train, "--n", a.n, "--snr", a.snr])
        test.mkdir(parents=True)
        ids = sorted(p.stem for p in train.glob("*.wav"))
        for rid in ids[a.n - a.n_test:]:
            for ext in (".wav", ".txt"):
                shutil.move(str(train / f"{rid}{ext}"), str(test / f"{rid}{ext}"))
    common = ["--cache-dir", cache, "--jobs", a.jobs]
    for d in (train, test):
        run(["extract", "--data-dir", d, *common])

    rows = []
    for b in a.budgets:
        for s in a.seeds:
            tag = f"b{b:g}_s{s}"
            model = a.work / "models" / f"{tag}.tsegm"
            run(["train", "--data-dir", train, *common, "--model", model, "--budget", b, "--seed", s])
            run(["segment", "--data-dir", test, *common, "--model", model,
                 "--out-dir", a.work / "pred" / tag])
            metrics = a.work / "metrics" / f"{tag}.txt"
            run(["eval", "--pred-dir", a.work / "pred" / tag, "--truth-dir", test,
                 "--metrics-file", metrics])
            kv = dict(line.split("=", 1) for line in metrics.read_text().splitlines())
            rows.append((b, s, float(kv["macro_f1"])))
            print(f"budget={b:g}% seed={s} macro_f1={rows[-1][2]:.4f}", flush=True)

    with (a.work / "results.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["budget", "seed", "macro_f1"])
        w.writerows(rows)
    for b in a.budgets:
        vals = [f for bb, _, f in rows if bb == b]
        print(f"budget={b:g}%  mean={np.mean(vals):.4f}  std={np.std(vals):.4f}")


if __name__ == "__main__":
    main_()
