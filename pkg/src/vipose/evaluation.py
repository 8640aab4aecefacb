"""ADD / ADD-S distances, AUC, per-run summaries and the report files."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .geometry import Pose

SUMMARY_COLUMNS = ["object", "auc_add", "auc_adds", "fps", "reinit_count", "frames"]
MAX_THRESHOLD = 0.10


def model_points(vertices, max_points: int = 512, seed: int = 0) -> np.ndarray:
    """Unique model vertices, reduced by farthest-point sampling when there are too many."""
    pts = np.unique(np.asarray(vertices, dtype=np.float64).reshape(-1, 3), axis=0)
    if len(pts) <= max_points:
        return pts
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(len(pts)))]
    dist = np.linalg.norm(pts - pts[chosen[0]], axis=1)
    for _ in range(max_points - 1):
        i = int(np.argmax(dist))
        chosen.append(i)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[i], axis=1))
    return pts[np.array(chosen)]


def _check_points(points):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("empty point set")
    return pts


def add(points, gt: Pose, est: Pose) -> float:
    """Mean distance between corresponding model points under the two poses."""
    pts = _check_points(points)
    return float(np.linalg.norm(gt.apply(pts) - est.apply(pts), axis=1).mean())


def add_s(points, gt: Pose, est: Pose) -> float:
    """Mean distance from each gt-posed point to the closest est-posed point."""
    pts = _check_points(points)
    a, b = gt.apply(pts), est.apply(pts)
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return float(np.sqrt(d2.min(axis=1)).mean())


def auc(distances, max_threshold: float = MAX_THRESHOLD) -> float:
    """Area under accuracy-vs-threshold on [0, T], normalized by T."""
    d = np.asarray(distances, dtype=np.float64).ravel()
    if d.size == 0:
        raise ValueError("no distances")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("distances must be finite and non-negative")
    return float(np.clip((max_threshold - d) / max_threshold, 0.0, 1.0).mean())


def accuracy_curve(distances, max_threshold: float = MAX_THRESHOLD, n: int = 101):
    """(thresholds, fraction of distances below each threshold)."""
    d = np.sort(np.asarray(distances, dtype=np.float64).ravel())
    th = np.linspace(0.0, max_threshold, n)
    acc = np.searchsorted(d, th, side="left") / max(len(d), 1)
    return th, acc


@dataclass
class EvalRecord:
    frame: int
    object: str
    add: float
    add_s: float
    latency: float
    reinit: bool


def evaluate_run(poses, gt_poses, points, latencies=None, reinit_flags=None, object_id: str = "object",
                 max_threshold: float = MAX_THRESHOLD):
    """Per-frame records and a summary dict for one tracked sequence.

    ``latencies`` maps frame -> seconds (tracked frames only). fps is one over
    the mean latency; frames without a latency entry record 0.
    """
    if len(poses) != len(gt_poses):
        raise ValueError("trajectory and ground truth differ in length")
    pts = _check_points(points)
    latencies = latencies or {}
    flags = list(reinit_flags) if reinit_flags is not None else [False] * len(poses)
    records = [EvalRecord(k, object_id, add(pts, g, e), add_s(pts, g, e), float(latencies.get(k, 0.0)), bool(f))
               for k, (e, g, f) in enumerate(zip(poses, gt_poses, flags))]
    return records, summarize(records, object_id, max_threshold)


def summarize(records, object_id: str, max_threshold: float = MAX_THRESHOLD) -> dict:
    lat = [r.latency for r in records if r.latency > 0]
    n_re = sum(r.reinit for r in records)
    return {
        "object": object_id,
        "auc_add": auc([r.add for r in records], max_threshold) if records else float("nan"),
        "auc_adds": auc([r.add_s for r in records], max_threshold) if records else float("nan"),
        "fps": 1.0 / float(np.mean(lat)) if lat else 0.0,
        "reinit_count": int(n_re),
        "frames": len(records),
        "frames_per_reinit": len(records) / n_re if n_re else float("inf"),
    }


def write_records(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "object", "add", "add_s", "latency", "reinit"])
        for r in records:
            w.writerow([r.frame, r.object, repr(r.add), repr(r.add_s), repr(r.latency), int(r.reinit)])


def read_records(path) -> list[EvalRecord]:
    with open(path, newline="") as fh:
        return [EvalRecord(int(r["frame"]), r["object"], float(r["add"]), float(r["add_s"]),
                           float(r["latency"]), bool(int(r["reinit"]))) for r in csv.DictReader(fh)]


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_summary(path, summaries):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            w.writerow([_fmt(s[c]) for c in SUMMARY_COLUMNS])


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_COLUMNS:
            raise ValueError(f"{path}: unexpected summary header")
        return [{"object": r["object"], "auc_add": float(r["auc_add"]), "auc_adds": float(r["auc_adds"]),
                 "fps": float(r["fps"]), "reinit_count": int(r["reinit_count"]), "frames": int(r["frames"])}
                for r in reader]


# ---------------------------------------------------------------- SVG plots

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def svg_plot(series, xlabel: str, ylabel: str, xlim, ylim, width: int = 480, height: int = 320,
             title: str = "") -> str:
    """Line plot of ``series`` (list of (label, xs, ys)) as a standalone SVG string."""
    ml, mr, mt, mb = 60, 20, 30, 45
    pw, ph = width - ml - mr, height - mt - mb
    (x0, x1), (y0, y1) = xlim, ylim
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for i in range(6):
        xv = x0 + (x1 - x0) * i / 5
        yv = y0 + (y1 - y0) * i / 5
        out.append(f'<text x="{sx(xv):.1f}" y="{mt + ph + 15}" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{ml - 5}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {mt + ph / 2})">{ylabel}</text>')
    if title:
        out.append(f'<text x="{ml + pw / 2}" y="18" text-anchor="middle">{title}</text>')
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{ml + 8}" y="{mt + 14 + 13 * i}" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def report(summaries, out_dir, distances=None, loss_logs=None, max_threshold: float = MAX_THRESHOLD) -> list[Path]:
    """Write summary.csv, accuracy-threshold curves and a loss plot into ``out_dir``.

    ``distances`` maps a label to {"add": [...], "add_s": [...]}; ``loss_logs``
    maps a label to train-log rows. Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "summary.csv"]
    write_summary(written[0], summaries)
    if distances:
        for key, name in (("add", "ADD"), ("add_s", "ADD-S")):
            series = []
            for label, d in sorted(distances.items()):
                th, acc = accuracy_curve(d[key], max_threshold)
                series.append((label, th, acc))
            p = out / f"accuracy_{key}.svg"
            p.write_text(svg_plot(series, "threshold (m)", f"accuracy ({name})", (0, max_threshold), (0, 1)))
            written.append(p)
    if loss_logs:
        series = []
        xmax, ymax = 1, 0.0
        for label, rows in sorted(loss_logs.items()):
            xs = list(range(len(rows)))
            ys = [r["loss"] for r in rows]
            series.append((label, xs, ys))
            xmax = max(xmax, len(rows) - 1)
            ymax = max([ymax] + ys)
        p = out / "loss.svg"
        p.write_text(svg_plot(series, "epoch (both steps)", "mean loss", (0, xmax), (0, ymax * 1.05 or 1)))
        written.append(p)
    return written
