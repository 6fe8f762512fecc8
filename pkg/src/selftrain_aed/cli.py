"""Command-line interface: synth, features, vocab, baseline, selftrain, report.

Exit codes: 0 success, 1 validation error, 2 runtime failure. Each command
prints a one-line summary; details go to a log file in the output directory.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import selftrain, synthetic
from .audio import AudioDecodeError
from .config import ConfigError, load_config
from .evaluation import EvalReport, EvaluationError, diff_reports, format_diff
from .features import DEFAULT_PARAMS
from .ingest import ManifestError, load_clip, load_manifest, segment_clip
from .features import mfcc_cached
from .vocabulary import VocabularyError, train_vocabulary

log = logging.getLogger("selftrain_aed")

CACHE_ENV = "AED_CACHE_DIR"


class ValidationError(Exception):
    pass


def _setup_logging(out_dir, name="run.log"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out_dir / name, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    for h in list(root.handlers):
        if isinstance(h, logging.FileHandler):
            root.removeHandler(h)
            h.close()
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    logging.captureWarnings(True)


def _cache_dir(explicit):
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else None


def _require(path, what):
    if path is None or not Path(path).exists():
        raise ValidationError(f"{what} not found: {path}")


def cmd_synth(args):
    spec_path = Path(args.spec)
    _require(spec_path, "spec file")
    try:
        spec = synthetic.SynthSpec.from_file(spec_path)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid synth spec: {exc}") from None
    if args.seed is not None:
        spec.seed = args.seed
    _setup_logging(args.out_dir, "synth.log")
    corpus = synthetic.generate(spec)
    lab, unl, truth = synthetic.write_corpus(corpus, args.out_dir)
    log.info("matched-filter oracle: %s", corpus.oracle)
    return (f"synth: {len(corpus.labeled)} labeled, {len(corpus.unlabeled)} unlabeled "
            f"-> {Path(args.out_dir)}")


def cmd_features(args):
    _require(args.manifest, "manifest")
    manifest = load_manifest(args.manifest)
    cache = _cache_dir(args.cache)
    if cache is None:
        raise ValidationError(f"no cache directory: pass --cache or set {CACHE_ENV}")
    _setup_logging(cache, "features.log")
    n_clips = n_frames = 0
    for entry in manifest:
        clip = load_clip(entry)
        pieces = [clip] if entry.source == "labeled" else segment_clip(clip, args.segment_seconds)
        for piece in pieces:
            if len(piece.samples) < DEFAULT_PARAMS.frame_len:
                log.warning("skipping %s: shorter than one frame", piece.id)
                continue
            n_frames += mfcc_cached(piece, cache).n_frames
            n_clips += 1
    return f"features: {n_clips} clips, {n_frames} frames cached in {cache}"


def cmd_vocab(args):
    _require(args.manifest, "manifest")
    manifest = load_manifest(args.manifest)
    folds = None
    if args.folds:
        try:
            folds = {int(f) for f in args.folds.split(",")}
        except ValueError:
            raise ValidationError(f"--folds must be comma-separated integers: {args.folds}")
    cache = _cache_dir(args.cache)
    out = Path(args.out)
    _setup_logging(out.parent, "vocab.log")
    frames = []
    for entry in manifest:
        if folds is not None and entry.fold not in folds:
            continue
        clip = load_clip(entry)
        pieces = [clip] if entry.source == "labeled" else segment_clip(clip)
        frames.extend(mfcc_cached(p, cache).frames for p in pieces
                      if len(p.samples) >= DEFAULT_PARAMS.frame_len)
    if not frames:
        raise ValidationError("no frames selected for vocabulary training")
    pooled = np.vstack(frames)
    vocab = train_vocabulary(pooled, M=args.M, seed=args.seed,
                             training_fold_set=sorted(folds) if folds else
                             sorted({e.fold for e in manifest if e.fold is not None}))
    vocab.save(out)
    return (f"vocab: M={args.M} over {pooled.shape[0]} frames, "
            f"{vocab.em['n_iter']} EM iterations -> {out}")


def _prepare(cfg, need_pool):
    _require(cfg.labeled_manifest, "labeled manifest")
    if need_pool:
        _require(cfg.unlabeled_manifest, "unlabeled manifest")
    params = cfg.mfcc_params
    cache = _cache_dir(cfg.cache_dir)
    labeled = selftrain.labeled_set_from_manifest(load_manifest(cfg.labeled_manifest),
                                                  params, cache)
    pool = None
    if need_pool:
        pool = selftrain.pool_from_manifest(load_manifest(cfg.unlabeled_manifest), params,
                                            cache, cfg.segment_seconds)
    hashes = {"labeled": selftrain.manifest_hash(cfg.labeled_manifest)}
    if need_pool:
        hashes["unlabeled"] = selftrain.manifest_hash(cfg.unlabeled_manifest)
    return labeled, pool, hashes


def _load_run_config(args):
    cfg = load_config(args.config, overrides=args.set or ())
    if args.jobs is not None:
        cfg.train.jobs = args.jobs
    return cfg


def cmd_baseline(args):
    cfg = _load_run_config(args)
    _setup_logging(cfg.output_dir)
    labeled, _, hashes = _prepare(cfg, need_pool=False)
    state = selftrain.run_baseline(labeled, cfg.train, dsp=cfg.mfcc_params.to_dict())
    selftrain.write_run(state, cfg.output_dir, cfg.to_dict(), hashes)
    return f"baseline: Mean AP {100 * state.history[0]['mean_ap']:.2f} -> {cfg.output_dir}"


def cmd_selftrain(args):
    cfg = _load_run_config(args)
    _setup_logging(cfg.output_dir)
    labeled, pool, hashes = _prepare(cfg, need_pool=True)
    state = selftrain.run_baseline(labeled, cfg.train, pool=pool, dsp=cfg.mfcc_params.to_dict())
    state = selftrain.run_loop(labeled, pool, cfg.train, state=state)
    selftrain.write_run(state, cfg.output_dir, cfg.to_dict(), hashes)
    h = state.history
    return (f"selftrain: baseline {100 * h[0]['mean_ap']:.2f}, best {100 * h[state.best_iteration]['mean_ap']:.2f} "
            f"at iteration {state.best_iteration} of {len(h) - 1} -> {cfg.output_dir}")


def _read_report(run_dir):
    path = Path(run_dir) / "report.json"
    _require(path, "run report")
    with open(path, encoding="utf-8") as fh:
        return EvalReport.from_dict(json.load(fh))


def cmd_report(args):
    a, b = _read_report(args.run_a), _read_report(args.run_b)
    out = Path(args.out) if args.out else Path(args.run_b)
    out.mkdir(parents=True, exist_ok=True)
    try:
        d = diff_reports(a, b)
    except EvaluationError as exc:
        raise ValidationError(str(exc)) from None
    names = (Path(args.run_a).name or "A", Path(args.run_b).name or "B")
    (out / "diff.txt").write_text(format_diff(a, b, names), encoding="utf-8")
    (out / "diff.json").write_text(json.dumps(d.to_dict(), sort_keys=True, indent=1) + "\n",
                                   encoding="utf-8")
    return (f"report: Mean AP {100 * a.mean_ap:.2f} -> {100 * b.mean_ap:.2f} "
            f"({100 * d.mean_ap:+.2f}), {len(d.regressions)} regressed class(es) -> {out}")


def build_parser():
    p = argparse.ArgumentParser(prog="aed-selftrain", description=__doc__.splitlines()[0])
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default: config)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("spec")
    s.add_argument("out_dir")
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("features", help="extract and cache MFCCs for a manifest")
    s.add_argument("manifest")
    s.add_argument("--cache", default=None, help=f"cache dir (default ${CACHE_ENV})")
    s.add_argument("--segment-seconds", type=float, default=3.5)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("vocab", help="train a GMM vocabulary")
    s.add_argument("manifest")
    s.add_argument("--cache", default=None)
    s.add_argument("--M", type=int, default=128)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--folds", default=None, help="comma-separated training folds")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_vocab)

    for name, func, text in (("baseline", cmd_baseline, "10-fold baseline evaluation"),
                             ("selftrain", cmd_selftrain, "full self-training loop")):
        s = sub.add_parser(name, help=text)
        s.add_argument("config")
        s.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (JSON value)")
        s.set_defaults(func=func)

    s = sub.add_parser("report", help="diff two run reports")
    s.add_argument("run_a")
    s.add_argument("run_b")
    s.add_argument("--out", default=None, help="output dir (default: run_b)")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        summary = args.func(args)
    except (ValidationError, ConfigError, ManifestError, AudioDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (selftrain.SelfTrainError, VocabularyError, Exception) as exc:  # noqa: BLE001
        log.exception("command failed")
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
