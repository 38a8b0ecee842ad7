"""``topseg`` command line: synth, extract, train, segment, eval.

Exit codes: 0 success, 1 partial failure (some recordings skipped),
2 configuration or data error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .decoder import load_model, save_model, train
from .errors import ModelInputError, TopSegError
from .evaluation import aggregate, score, split_subjects, subsample_subjects
from .features import cache_write, frame_count
from .labels import STATES, LabelSequence, labels_from_intervals, read_intervals, write_intervals
from .labels import intervals_from_labels
from .pipeline import (PipelineConfig, cache_path, calibrate, featurize_recording, inference_view,
                       load_cached, load_calibration, save_calibration, segment_features,
                       training_chunks, with_grid)
from .signal import load_wav, write_wav
from .synth import SynthConfig, synthesize

log = logging.getLogger("topseg")

EXIT_OK, EXIT_PARTIAL, EXIT_ERROR = 0, 1, 2
LABEL_SUFFIX = ".txt"
MANIFEST = "manifest.csv"


class CliError(Exception):
    """Configuration or data problem that aborts a subcommand with exit 2."""


# --------------------------------------------------------------------------
# helpers


def _wavs(data_dir: Path) -> list[Path]:
    if not data_dir.is_dir():
        raise CliError(f"data directory {data_dir} does not exist")
    return sorted(data_dir.glob("*.wav"))


def read_manifest(data_dir: Path, rec_ids: list[str]) -> dict[str, str]:
    """recording -> subject; without a manifest every recording is its own subject."""
    path = data_dir / MANIFEST
    if not path.exists():
        return {r: r for r in rec_ids}
    with path.open(newline="") as fh:
        rows = {row["recording"]: row["subject"] for row in csv.DictReader(fh)}
    return {r: rows.get(r, r) for r in rec_ids}


def _write_kv(path: Path, kv: dict[str, str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{k}={v}\n" for k, v in kv.items()))


def _ensure_grid(run: RunConfig, wavs: list[Path], cache_dir: Path) -> PipelineConfig:
    """Grid support from the cache directory, calibrating on first use."""
    pipe = run.pipeline
    if pipe.features.grid is not None:
        return pipe
    grid = load_calibration(cache_dir)
    if grid is None:
        raws = []
        for w in wavs:
            try:
                raws.append(load_wav(w))
            except TopSegError:
                continue
        if not raws:
            raise CliError("no readable recordings to calibrate the landscape grid on")
        grid = calibrate(raws, pipe)
        save_calibration(cache_dir, grid)
    return with_grid(pipe, grid)


def _extract_one(args):
    wav, cache_dir, pipe = args
    t0 = time.perf_counter()
    try:
        raw = load_wav(wav)
        fm = featurize_recording(raw, pipe)
        cache_write(fm, cache_path(cache_dir, raw.id))
    except (TopSegError, ValueError, OSError) as exc:
        return wav.stem, None, f"{type(exc).__name__}: {exc}"
    return wav.stem, time.perf_counter() - t0, None


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _features_for(ids, cache_dir, pipe, wav_dir, jobs, dtype=np.float64):
    """Cached matrices for ``ids``, extracting the missing ones."""
    missing = [i for i in ids if load_cached(cache_dir, i, pipe.features) is None]
    if missing:
        todo = [(wav_dir / f"{i}.wav", cache_dir, pipe) for i in missing]
        for rid, _, err in _map(_extract_one, todo, jobs):
            if err:
                log.error("%s: %s", rid, err)
    out = {}
    for i in ids:
        fm = load_cached(cache_dir, i, pipe.features, dtype=dtype)
        if fm is not None:
            out[i] = fm
    return out


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args, run: RunConfig) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lo, hi = args.hr_range
    rng = np.random.default_rng(args.seed)
    rows = []
    for i in range(args.n):
        rid = f"synth{i:03d}"
        cfg = SynthConfig(heart_rate=float(rng.uniform(lo, hi)), noise_snr=args.snr,
                          duration=args.duration, seed=int(rng.integers(2 ** 31)))
        s = synthesize(cfg, rid)
        write_wav(out / f"{rid}.wav", s.recording, pcm16=False)
        write_intervals(out / f"{rid}{LABEL_SUFFIX}", s.intervals)
        rows.append((rid, f"subj{i // args.per_subject:03d}"))
    with (out / MANIFEST).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recording", "subject"])
        w.writerows(rows)
    print(f"wrote {args.n} recordings to {out}")
    return EXIT_OK


def cmd_extract(args, run: RunConfig) -> int:
    data_dir = Path(run.paths.data_dir)
    cache_dir = run.paths.resolved_cache_dir()
    wavs = _wavs(data_dir)
    if not wavs:
        print("0 recordings found; nothing to do")
        return EXIT_OK
    cache_dir.mkdir(parents=True, exist_ok=True)
    pipe = _ensure_grid(run, wavs, cache_dir)
    todo = []
    for w in wavs:
        if load_cached(cache_dir, w.stem, pipe.features) is not None:
            print(f"{w.stem}: cached")
        else:
            todo.append((w, cache_dir, pipe))
    failed = []
    for rid, secs, err in _map(_extract_one, todo, run.paths.n_jobs()):
        if err:
            failed.append((rid, err))
        else:
            print(f"{rid}: {secs:.2f} s")
    for rid, err in failed:
        print(f"error: {rid}: {err}", file=sys.stderr)
    print(f"{len(wavs) - len(failed)} of {len(wavs)} recordings cached in {cache_dir}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_train(args, run: RunConfig) -> int:
    data_dir = Path(run.paths.data_dir)
    cache_dir = run.paths.resolved_cache_dir()
    wavs = _wavs(data_dir)
    if not wavs:
        raise CliError(f"no recordings in {data_dir}")
    ids = [w.stem for w in wavs]
    missing = [i for i in ids if not (data_dir / f"{i}{LABEL_SUFFIX}").exists()]
    if missing:
        raise CliError(f"missing label files for: {', '.join(missing)}")
    pipe = _ensure_grid(run, wavs, cache_dir)
    manifest = read_manifest(data_dir, ids)
    chosen = subsample_subjects(manifest, run.paths.budget / 100.0, run.paths.seed)
    tr, va = split_subjects(chosen, run.paths.val_fraction, run.paths.seed)
    feats = _features_for(list(chosen), cache_dir, pipe, data_dir, run.paths.n_jobs(),
                          dtype=np.float32)

    def pairs(group):
        out = []
        for rid in group:
            if rid in feats:
                out += training_chunks(feats[rid], read_intervals(data_dir / f"{rid}{LABEL_SUFFIX}"))
        return out

    train_set, val_set = pairs(tr), pairs(va)
    if not train_set:
        raise CliError("no usable training recordings")
    dcfg = replace(pipe.decoder, seed=run.paths.seed)
    t0 = time.perf_counter()
    model = train(train_set, dcfg, validation=val_set or None)
    model_path = Path(run.paths.model)
    save_model(model, model_path)
    info = model.info
    lines = [f"budget={run.paths.budget:g} seed={run.paths.seed} subjects={len(set(chosen.values()))} "
             f"train_chunks={len(train_set)} val_chunks={len(val_set)}",
             f"best_epoch={info['best_epoch']} epochs_run={info['epochs_run']}"]
    for e, tl in enumerate(info["train_loss"]):
        vl = info["val_loss"][e] if e < len(info["val_loss"]) else float("nan")
        lines.append(f"epoch {e} train_loss {tl:.6f} val_loss {vl:.6f}")
    model_path.with_suffix(".log").write_text("\n".join(lines) + "\n")
    print(f"trained on {len(train_set)} chunks in {time.perf_counter() - t0:.1f} s; "
          f"best epoch {info['best_epoch']}; model written to {model_path}")
    return EXIT_OK if len(feats) == len(chosen) else EXIT_PARTIAL


def cmd_segment(args, run: RunConfig) -> int:
    model_path = Path(run.paths.model)
    if not model_path.exists():
        raise CliError(f"model file {model_path} not found")
    model = load_model(model_path)
    data_dir = Path(run.paths.data_dir)
    cache_dir = run.paths.resolved_cache_dir()
    out = Path(run.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    wavs = _wavs(data_dir)
    if not wavs:
        print("0 recordings found; nothing to do")
        return EXIT_OK
    pipe = _ensure_grid(run, wavs, cache_dir)
    ids = [w.stem for w in wavs]
    feats = _features_for(ids, cache_dir, pipe, data_dir, run.paths.n_jobs())
    for rid in ids:
        if rid not in feats:
            print(f"error: {rid}: feature extraction failed", file=sys.stderr)
            continue
        X = inference_view(feats[rid])
        if X.shape[1] != model.input_dim:
            raise ModelInputError(
                f"{rid}: features have {X.shape[1]} columns, model expects {model.input_dim}")
        seg = segment_features(model, X, pipe, refine=not args.no_refine)
        write_intervals(out / f"{rid}{LABEL_SUFFIX}", intervals_from_labels(seg.labels))
        cols = [seg.raw.P] + ([seg.refined.P] if seg.refined is not None else [])
        head = " ".join(f"raw_{s}" for s in STATES)
        if seg.refined is not None:
            head += " " + " ".join(f"refined_{s}" for s in STATES)
        np.savetxt(out / f"{rid}.post", np.hstack(cols), fmt="%.8f", header=head)
    done = sum(1 for r in ids if r in feats)
    print(f"segmented {done} of {len(ids)} recordings into {out}")
    return EXIT_OK if done == len(ids) else EXIT_PARTIAL


def cmd_eval(args, run: RunConfig) -> int:
    pred_dir, truth_dir = Path(args.pred_dir), Path(args.truth_dir)
    for d in (pred_dir, truth_dir):
        if not d.is_dir():
            raise CliError(f"directory {d} does not exist")
    rate = run.pipeline.features.frame_rate
    preds = {p.stem: p for p in pred_dir.glob(f"*{LABEL_SUFFIX}")}
    truths = {p.stem: p for p in truth_dir.glob(f"*{LABEL_SUFFIX}")}
    common = sorted(set(preds) & set(truths))
    unmatched = sorted(set(preds) ^ set(truths))
    if not common:
        raise CliError("no recording ids in common between predictions and truth")
    for rid in unmatched:
        print(f"unmatched: {rid}", file=sys.stderr)
    tol = run.paths.tol
    reports = {}
    for rid in common:
        tiv = read_intervals(truths[rid])
        T = frame_count(max(e for _, e, _ in tiv), rate) if tiv else 0
        truth = labels_from_intervals(tiv, rate, T)
        pred = labels_from_intervals(read_intervals(preds[rid]), rate, T)
        reports[rid] = score(pred, truth, tol)
    pooled = aggregate(list(reports.values()))
    print(pooled.to_text())
    kv = pooled.to_keyvalue()
    for rid, rep in reports.items():
        kv[f"recording.{rid}.macro_f1"] = f"{rep.macro_f1:.6f}"
    _write_kv(Path(args.metrics_file or (pred_dir / "metrics.txt")), kv)
    return EXIT_PARTIAL if unmatched else EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _hr_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LOW,HIGH in bpm") from None
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="topseg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, cache=True, model=False, out=False, jobs=True):
        sp.add_argument("--config", help="INI config file")
        if data:
            sp.add_argument("--data-dir")
        if cache:
            sp.add_argument("--cache-dir", help="feature cache (default $TOPSEG_CACHE_DIR)")
        if model:
            sp.add_argument("--model")
        if out:
            sp.add_argument("--out-dir")
        if jobs:
            sp.add_argument("--jobs", type=int, help="worker processes (default: all cores)")

    sp = sub.add_parser("synth", help="write synthetic WAV + label files")
    common(sp, data=False, cache=False, jobs=False)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--n", type=int, default=50)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--snr", type=float, default=20.0)
    sp.add_argument("--duration", type=float, default=10.0)
    sp.add_argument("--hr-range", type=_hr_range, default=(60.0, 100.0))
    sp.add_argument("--per-subject", type=int, default=1, help="recordings per subject")

    sp = sub.add_parser("extract", help="cache topological features for every WAV")
    common(sp)

    sp = sub.add_parser("train", help="fit a decoder on cached features")
    common(sp, model=True)
    sp.add_argument("--budget", type=float, help="percent of subjects to train on")
    sp.add_argument("--seed", type=int)

    sp = sub.add_parser("segment", help="label recordings with a trained model")
    common(sp, model=True, out=True)
    sp.add_argument("--no-refine", action="store_true", help="decode raw posteriors")

    sp = sub.add_parser("eval", help="score predicted against reference label files")
    common(sp, data=False, cache=False, jobs=False)
    sp.add_argument("--pred-dir", required=True)
    sp.add_argument("--truth-dir", required=True)
    sp.add_argument("--tol", type=float, help="boundary tolerance in seconds (default 0.060)")
    sp.add_argument("--metrics-file")
    return p


_FLAG_TO_PATH = {"data_dir": "data_dir", "cache_dir": "cache_dir", "model": "model",
                 "out_dir": "out_dir", "budget": "budget", "seed": "seed", "jobs": "jobs",
                 "tol": "tol"}


def resolve(args) -> RunConfig:
    run = load_config(getattr(args, "config", None))
    updates = {}
    for flag, attr in _FLAG_TO_PATH.items():
        val = getattr(args, flag, None)
        if val is not None and args.command != "synth":
            updates[attr] = val
    if updates:
        run = replace(run, paths=replace(run.paths, **updates))
    if not 0 < run.paths.budget <= 100 or not math.isfinite(run.paths.budget):
        raise CliError(f"budget {run.paths.budget} outside (0, 100]")
    return run


COMMANDS = {"synth": cmd_synth, "extract": cmd_extract, "train": cmd_train,
            "segment": cmd_segment, "eval": cmd_eval}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = resolve(args)
        return COMMANDS[args.command](args, run)
    except (CliError, TopSegError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
