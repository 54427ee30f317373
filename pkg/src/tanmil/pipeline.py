"""Stage runner for the end-to-end pipeline.

Output directory layout (all paths relative to ``out_dir``)::

    data/frames/<video>.npy         uint8 frames
    data/flows/<video>/<start>.flow raw block-matching flow per clip
    data/train.txt, data/test.txt   video manifests
    data/truth.txt                  per-frame masks (read only by eval)
    tan/tan.ckpt, tan/losses.txt    autoencoder checkpoint(s) and losses
    features/<video>.feat           one motion feature record per clip
    bags/<split>/<video>.bag        m segment features per video
    bags/train.txt, bags/test.txt   bag manifests
    mil/mil.ckpt, mil/losses.txt    ranking model
    eval/                           frame scores, ROC text, summary, plot
    compare/                        per-mode ROC text, table, plot
    run_manifest.json               config snapshot, timings, digests

``run_manifest.json`` lists, per completed stage, the SHA-256 of every file
the stage wrote. Before a stage runs, every upstream stage (transitively)
must be present in the manifest with unchanged files.
"""

import hashlib
import json
import logging
import os
import shutil
import tempfile
import time
from dataclasses import replace

import filelock
import numpy as np

from . import __version__
from .config import stage_seed
from .evaluate import (
    compare_modes,
    emit_report,
    frame_level_roc,
    read_truth,
    score_videos,
    write_scores,
)
from .mil import build_bag, fuse_features, load_bags, load_mil, save_mil, train_mil, write_bag, write_bag_manifest
from .motiondata import BlockMatcher, generate_dataset, normalize_flow, read_flow_file, video_flow_stacks
from .motiondata.io import ManifestRecord, read_manifest, save_frames, write_manifest, write_truth
from .motiondata.flow import parse_clip_id
from .motiondata.io import write_flow_file
from .nncore import load_checkpoint
from .tan import TemporalAutoencoder, extract_features, read_features, train_tan, write_features

log = logging.getLogger(__name__)

STAGES = ("generate", "train-tan", "extract", "build-bags", "train-mil", "eval", "compare")
RUN_ALL = STAGES[:-1]
UPSTREAM = {
    "generate": (),
    "train-tan": ("generate",),
    "extract": ("generate", "train-tan"),
    "build-bags": ("extract",),
    "train-mil": ("build-bags",),
    "eval": ("build-bags", "train-mil"),
    "compare": ("build-bags",),
}
MANIFEST = "run_manifest.json"
SPLITS = ("train", "test")


class PipelineError(RuntimeError):
    """Failure with a short machine-readable ``code`` and optional stage."""

    def __init__(self, code, message, stage=None):
        super().__init__(message)
        self.code = code
        self.stage = stage

    def as_record(self):
        return {"code": self.code, "stage": self.stage, "message": str(self)}


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def upstream_closure(stage):
    """Every stage ``stage`` depends on, nearest-first and without repeats."""
    seen, order, todo = set(), [], list(UPSTREAM[stage])
    while todo:
        s = todo.pop(0)
        if s not in seen:
            seen.add(s)
            order.append(s)
            todo.extend(UPSTREAM[s])
    return order


def downstream(stage):
    return [s for s in STAGES if stage in upstream_closure(s)]


# -- manifest ---------------------------------------------------------------

def read_run_manifest(out_dir):
    path = os.path.join(out_dir, MANIFEST)
    if not os.path.exists(path):
        return {"tool_version": __version__, "config": None, "stages": {}}
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def write_run_manifest(out_dir, manifest):
    fd, tmp = tempfile.mkstemp(prefix=".manifest-", dir=out_dir)
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, os.path.join(out_dir, MANIFEST))


def check_upstream(out_dir, stage, manifest=None):
    """Raise :class:`PipelineError` naming the first missing or altered upstream stage."""
    manifest = manifest or read_run_manifest(out_dir)
    for up in upstream_closure(stage):
        entry = manifest["stages"].get(up)
        if entry is None:
            raise PipelineError("missing-upstream", f"stage {up!r} has not been run (needed by {stage!r})", up)
        for rel, digest in entry["artifacts"].items():
            path = os.path.join(out_dir, rel)
            if not os.path.exists(path):
                raise PipelineError(
                    "missing-upstream", f"artifact {rel} of stage {up!r} is missing; re-run {up!r}", up
                )
            if sha256_file(path) != digest:
                raise PipelineError(
                    "digest-mismatch", f"artifact {rel} of stage {up!r} changed since it was written", up
                )


# -- helpers ----------------------------------------------------------------

class _Run:
    """Per-stage context: paths plus the files the stage wrote."""

    def __init__(self, config, out_dir, options):
        self.config = config
        self.out_dir = out_dir
        self.options = options
        self.written = []

    def path(self, *parts):
        return os.path.join(self.out_dir, *parts)

    def fresh_dir(self, *parts):
        d = self.path(*parts)
        if os.path.isdir(d):
            shutil.rmtree(d)
        os.makedirs(d)
        return d

    def wrote(self, path):
        self.written.append(path)
        return path


def _flow_paths(data_dir, video_id):
    d = os.path.join(data_dir, "flows", video_id)
    return [os.path.join(d, name) for name in sorted(os.listdir(d))]


def _load_stacks(data_dir, video_id):
    stacks = [read_flow_file(p) for p in _flow_paths(data_dir, video_id)]
    ids = [s.clip_id for s in stacks]
    return ids, np.stack([normalize_flow(s.flow) for s in stacks])


def _load_tan(path, config):
    named = load_checkpoint(path)
    model = TemporalAutoencoder(config.tan)
    missing = sorted(set(model.layers) - set(named))
    if missing:
        raise PipelineError("bad-checkpoint", f"{path} lacks autoencoder layers {missing}", "train-tan")
    model.load_params(named)
    return model


def _write_losses(path, losses):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(f"{float(v)!r}\n" for v in losses)


# -- stages -----------------------------------------------------------------

def _generate(run):
    cfg = run.config
    data = run.path("data")
    for sub in ("frames", "flows"):
        run.fresh_dir("data", sub)
    matcher = BlockMatcher(cfg.data.block, cfg.data.radius)
    truth = []
    for split in SPLITS:
        dataset = cfg.data.dataset(split, stage_seed(cfg.seed, f"generate-{split}"))
        records = []
        for video in generate_dataset(dataset):
            vid = video.video_id
            rel = f"frames/{vid}.npy"
            save_frames(run.wrote(os.path.join(data, rel)), video.frames)
            os.makedirs(os.path.join(data, "flows", vid))
            for stack in video_flow_stacks(video.frames, vid, matcher):
                start = stack.frame_range[0]
                write_flow_file(stack, run.wrote(os.path.join(data, "flows", vid, f"{start:06d}.flow")))
            records.append(ManifestRecord(vid, video.label, video.frame_count, rel))
            truth.append(video)
        write_manifest(run.wrote(os.path.join(data, f"{split}.txt")), records)
        log.info("generated %d %s videos", len(records), split)
    write_truth(run.wrote(os.path.join(data, "truth.txt")), truth)


def _train_tan(run):
    cfg = run.config
    data = run.options.get("data_dir") or run.path("data")
    stacks = []
    for rec in read_manifest(os.path.join(data, "train.txt")):
        stacks.append(_load_stacks(data, rec.video_id)[1])
    stacks = np.concatenate(stacks)
    log.info("training autoencoder on %d clips", len(stacks))
    ckpt_dir = run.fresh_dir("tan")
    result = train_tan(stacks, cfg.tan, seed=stage_seed(cfg.seed, "train-tan"), checkpoint_dir=ckpt_dir)
    run.written.extend(result.checkpoints)
    final = run.options.get("out") or os.path.join(ckpt_dir, "tan.ckpt")
    shutil.copyfile(result.checkpoints[-1], final)
    run.wrote(final)
    _write_losses(run.wrote(os.path.join(ckpt_dir, "losses.txt")), result.losses)


def _extract(run):
    cfg = run.config
    data = run.path("data")
    model = _load_tan(run.path("tan", "tan.ckpt"), cfg)
    out = run.fresh_dir("features")
    for split in SPLITS:
        for rec in read_manifest(os.path.join(data, f"{split}.txt")):
            ids, stacks = _load_stacks(data, rec.video_id)
            feats = extract_features(stacks, model)
            write_features(run.wrote(os.path.join(out, f"{rec.video_id}.feat")), zip(ids, feats))


def _external_features(fuse_dir, video_id, ids):
    records = dict(read_features(os.path.join(fuse_dir, f"{video_id}.feat")))
    missing = [c for c in ids if c not in records]
    if missing:
        raise PipelineError("bad-input", f"external features for {video_id} lack clips {missing[:3]}", "build-bags")
    return np.stack([records[c] for c in ids])


def _build_bags(run):
    cfg = run.config
    data = run.path("data")
    run.fresh_dir("bags")
    for split in SPLITS:
        os.makedirs(run.path("bags", split))
        entries = []
        for rec in read_manifest(os.path.join(data, f"{split}.txt")):
            records = read_features(run.path("features", f"{rec.video_id}.feat"))
            records.sort(key=lambda r: parse_clip_id(r[0])[1])
            ids = [c for c, _ in records]
            feats = np.stack([v for _, v in records])
            if cfg.fuse_dir:
                feats = fuse_features(feats, _external_features(cfg.fuse_dir, rec.video_id, ids))
            bag = build_bag(feats, cfg.mil.segments, rec.video_id, rec.label == "anomalous")
            rel = f"{split}/{rec.video_id}.bag"
            write_bag(run.wrote(run.path("bags", rel)), bag)
            entries.append((rec.video_id, rec.label, rel))
        write_bag_manifest(run.wrote(run.path("bags", f"{split}.txt")), entries)


def _train_mil(run):
    cfg = run.config
    bags = load_bags(run.path("bags", "train.txt"))
    result = train_mil(bags, cfg.mil, seed=stage_seed(cfg.seed, "train-mil"))
    out = run.fresh_dir("mil")
    save_mil(run.wrote(os.path.join(out, "mil.ckpt")), result.model)
    _write_losses(run.wrote(os.path.join(out, "losses.txt")), result.losses)


def _test_truth(run):
    truth = read_truth(run.path("data", "truth.txt"))
    ids = [r.video_id for r in read_manifest(run.path("data", "test.txt"))]
    return {vid: truth[vid] for vid in ids}


def _eval(run):
    cfg = run.config
    model = load_mil(run.path("mil", "mil.ckpt"), cfg.mil)
    bags = load_bags(run.path("bags", "test.txt"))
    truth = _test_truth(run)
    scores = score_videos(model, bags, {vid: len(m) for vid, m in truth.items()})
    out = run.fresh_dir("eval")
    write_scores(run.wrote(os.path.join(out, "scores.txt")), scores)
    curve = frame_level_roc(scores, truth)
    log.info("frame-level AUC (%s): %.4f", cfg.mil.mode, curve.auc)
    run.written.extend(emit_report({cfg.mil.mode: curve}, out, cfg.eval.plot))
    return curve.auc


def _compare(run):
    cfg = run.config
    train = load_bags(run.path("bags", "train.txt"))
    test = load_bags(run.path("bags", "test.txt"))
    configs = [(mode, replace(cfg.mil, mode=mode)) for mode in cfg.eval.compare_modes]
    result = compare_modes(train, test, _test_truth(run), configs, seed=stage_seed(cfg.seed, "train-mil"))
    out = run.fresh_dir("compare")
    with open(run.wrote(os.path.join(out, "comparison.tsv")), "w", encoding="utf-8", newline="\n") as f:
        f.write(result.table())
    run.written.extend(emit_report(result.curves, out, cfg.eval.plot))
    return {r.name: r.auc for r in result.rows}


_RUNNERS = {
    "generate": _generate,
    "train-tan": _train_tan,
    "extract": _extract,
    "build-bags": _build_bags,
    "train-mil": _train_mil,
    "eval": _eval,
    "compare": _compare,
}


# -- public entry points ----------------------------------------------------

def _lock(out_dir):
    lock = filelock.FileLock(os.path.join(out_dir, ".lock"))
    try:
        lock.acquire(timeout=0)
    except filelock.Timeout as exc:
        raise PipelineError("locked", f"output directory {out_dir} is in use by another run") from exc
    return lock


def run_stage(stage, config, out_dir=None, **options):
    """Run one stage after validating its upstream artifacts.

    Returns the stage's result (the AUC for ``eval``, per-mode AUCs for
    ``compare``, otherwise None). Entries of downstream stages are dropped
    from the manifest since their inputs may have changed.
    """
    if stage not in _RUNNERS:
        raise PipelineError("bad-stage", f"unknown stage {stage!r}; choose from {STAGES}")
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    lock = _lock(out_dir)
    try:
        manifest = read_run_manifest(out_dir)
        standalone = stage == "train-tan" and options.get("data_dir")
        if not standalone:
            check_upstream(out_dir, stage, manifest)
        run = _Run(config, out_dir, options)
        t0 = time.perf_counter()
        result = _RUNNERS[stage](run)
        elapsed = time.perf_counter() - t0
        manifest["tool_version"] = __version__
        manifest["config"] = config.snapshot()
        for later in downstream(stage):
            manifest["stages"].pop(later, None)
        manifest["stages"][stage] = {
            "seconds": round(elapsed, 3),
            "artifacts": {_rel(out_dir, p): sha256_file(p) for p in sorted(set(run.written))},
        }
        write_run_manifest(out_dir, manifest)
        log.info("stage %s done in %.1fs", stage, elapsed)
        return result
    finally:
        lock.release()


def _rel(out_dir, path):
    rel = os.path.relpath(os.path.abspath(path), os.path.abspath(out_dir))
    return os.path.abspath(path) if rel.startswith("..") else rel.replace(os.sep, "/")


def run_all(config, out_dir=None):
    """Run generate through eval; returns the final AUC."""
    result = None
    for stage in RUN_ALL:
        result = run_stage(stage, config, out_dir)
    return result
