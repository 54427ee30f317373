"""Frame-level ROC/AUC evaluation, mode comparison, and report files.

This is the only module that reads ground-truth frame masks.
"""

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .mil import MilConfig, train_mil


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    thresholds: np.ndarray = field(default=None, repr=False)


def expand_scores(segment_scores, frame_count, m=None):
    """Per-frame scores: frame ``j`` takes segment ``floor(j * m / frame_count)``."""
    segment_scores = np.asarray(segment_scores, dtype=np.float64)
    m = len(segment_scores) if m is None else m
    if len(segment_scores) != m:
        raise ValueError(f"got {len(segment_scores)} segment scores for m={m}")
    if frame_count < 1:
        raise ValueError("frame_count must be positive")
    idx = np.arange(frame_count) * m // frame_count
    return segment_scores[idx]


def roc_auc(scores, labels):
    """ROC over every distinct score threshold; ties form a single step.

    The trapezoid area over such points equals the pair-counting AUC where
    tied positive/negative pairs count one half.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores vs {labels.size} labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.r_[0, np.cumsum(y)[last]]
    fp = np.r_[0, np.cumsum(~y)[last]]
    # integer trapezoids first, one division at the end
    auc = float(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])) / (2.0 * n_pos * n_neg))
    return RocCurve(fp / n_neg, tp / n_pos, auc, np.r_[np.inf, s[last]])


def trapezoid_area(fpr, tpr):
    fpr = np.asarray(fpr, dtype=np.float64)
    tpr = np.asarray(tpr, dtype=np.float64)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


# -- truth and score files --------------------------------------------------

def read_truth(path):
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if line:
                vid, bits = line.split("\t")
                out[vid] = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) == ord("1")
    return out


def write_scores(path, frame_scores):
    """``id<TAB>s0,s1,...`` per video; floats written in shortest round-trip form."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for vid, sc in frame_scores.items():
            f.write(vid + "\t" + ",".join(repr(float(v)) for v in sc) + "\n")


def read_scores(path):
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if line:
                vid, vals = line.split("\t")
                out[vid] = np.array([float(v) for v in vals.split(",")])
    return out


def frame_level_roc(frame_scores, truth):
    """Pool every video's frames into one ROC."""
    missing = sorted(set(frame_scores) - set(truth))
    if missing:
        raise KeyError(f"no ground truth for videos {missing[:5]}")
    s, y = [], []
    for vid, sc in frame_scores.items():
        mask = truth[vid]
        if len(mask) != len(sc):
            raise ValueError(f"{vid}: {len(sc)} frame scores vs {len(mask)} truth frames")
        s.append(sc)
        y.append(mask)
    return roc_auc(np.concatenate(s), np.concatenate(y))


def score_videos(model, bags, frame_counts):
    """Dropout-free frame scores for each bag's video."""
    out = {}
    for bag in bags:
        seg = model.scores(bag.features, training=False)
        out[bag.video_id] = expand_scores(seg, frame_counts[bag.video_id], bag.m)
    return out


# -- mode comparison --------------------------------------------------------

@dataclass
class ComparisonRow:
    name: str
    mode: str
    auc: float
    delta: float


@dataclass
class Comparison:
    rows: list
    curves: dict

    def table(self):
        lines = ["name\tmode\tauc\tdelta"]
        lines += [f"{r.name}\t{r.mode}\t{r.auc!r}\t{r.delta!r}" for r in self.rows]
        return "\n".join(lines) + "\n"


def compare_modes(train_bags, test_bags, truth, configs, seed=0):
    """Train one model per ``(name, MilConfig)`` under the same data and seed.

    ``delta`` is each row's AUC minus the first row's.
    """
    if not configs:
        raise ValueError("compare_modes needs at least one config")
    counts = {vid: len(mask) for vid, mask in truth.items()}
    rows, curves = [], {}
    for name, cfg in configs:
        model = train_mil(train_bags, cfg, seed=seed, log_every=0).model
        curve = frame_level_roc(score_videos(model, test_bags, counts), truth)
        curves[name] = curve
        rows.append(ComparisonRow(name, cfg.mode, curve.auc, 0.0))
    base = rows[0].auc
    for r in rows:
        r.delta = r.auc - base
    return Comparison(rows, curves)


def mode_configs(base=None):
    base = base or MilConfig()
    from dataclasses import replace
    return [("max", replace(base, mode="max")), ("attention", replace(base, mode="attention"))]


# -- reports ----------------------------------------------------------------

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def roc_text(curve):
    lines = ["fpr,tpr"] + [f"{float(a)!r},{float(b)!r}" for a, b in zip(curve.fpr, curve.tpr)]
    return "\n".join(lines) + "\n"


def parse_roc_text(text):
    lines = text.strip("\n").split("\n")
    if lines[0] != "fpr,tpr":
        raise ValueError(f"bad ROC header {lines[0]!r}")
    pts = [tuple(float(v) for v in ln.split(",")) for ln in lines[1:]]
    arr = np.array(pts, dtype=np.float64).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def summary_text(results):
    return "".join(f"{name}\t{curve.auc!r}\n" for name, curve in results.items())


def svg_plot(results, size=400, margin=50):
    """Standalone SVG with one polyline per curve, diagonal, axes, and legend."""
    inner = size - 2 * margin
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{inner}" height="{inner}" fill="none" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin + inner}" x2="{margin + inner}" y2="{margin}" '
        'stroke="#999999" stroke-dasharray="4 4"/>',
        f'<text x="{size / 2:g}" y="{size - 12}" text-anchor="middle">false positive rate</text>',
        f'<text x="14" y="{size / 2:g}" text-anchor="middle" '
        f'transform="rotate(-90 14 {size / 2:g})">true positive rate</text>',
    ]
    for tick in (0, 0.5, 1):
        x = margin + tick * inner
        y = margin + (1 - tick) * inner
        parts.append(f'<text x="{x:g}" y="{margin + inner + 16}" text-anchor="middle">{tick:g}</text>')
        parts.append(f'<text x="{margin - 6}" y="{y + 4:g}" text-anchor="end">{tick:g}</text>')
    for i, (name, curve) in enumerate(results.items()):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(
            f"{margin + fx * inner:.3f},{margin + (1 - ty) * inner:.3f}" for fx, ty in zip(curve.fpr, curve.tpr)
        )
        parts.append(f'<polyline class="roc" fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = margin + inner - 12 - 16 * (len(results) - 1 - i)
        lx = margin + inner * 0.45
        parts.append(f'<line x1="{lx:g}" y1="{ly - 4:g}" x2="{lx + 20:g}" y2="{ly - 4:g}" stroke="{color}" stroke-width="2"/>')
        label = _xml_escape(f"{name} (AUC {curve.auc:.4f})")
        parts.append(f'<text class="legend" x="{lx + 26:g}" y="{ly:g}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _xml_escape(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _safe_name(name):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def emit_report(results, out_dir, plot_name="roc.svg"):
    """Write ``<name>.roc.csv`` per curve, ``summary.tsv`` and the SVG plot.

    Files are staged in a temporary directory and renamed into place only
    after all of them were written.
    """
    if not results:
        raise ValueError("no results to report")
    os.makedirs(out_dir, exist_ok=True)
    files = {f"{_safe_name(n)}.roc.csv": roc_text(c) for n, c in results.items()}
    files["summary.tsv"] = summary_text(results)
    files[plot_name] = svg_plot(results)
    staging = tempfile.mkdtemp(prefix=".report-", dir=out_dir)
    try:
        for fname, text in files.items():
            with open(os.path.join(staging, fname), "w", encoding="utf-8", newline="\n") as f:
                f.write(text)
        paths = []
        for fname in files:
            dst = os.path.join(out_dir, fname)
            os.replace(os.path.join(staging, fname), dst)
            paths.append(dst)
    finally:
        for leftover in os.listdir(staging):
            os.remove(os.path.join(staging, leftover))
        os.rmdir(staging)
    return paths
