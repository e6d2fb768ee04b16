"""Figure rendering from discomm run artifacts.

Input is strictly the documented file formats (metrics CSV, protocol CSV,
histogram JSON); nothing here imports the training package. Rendering is
read-only and deterministic: fixed styling, pinned SVG hash salt, no
timestamps in the output metadata.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "discomm-plots"

import matplotlib.pyplot as plt
import numpy as np

METRICS_COLUMNS = (
    "iteration",
    "mean_eval_return",
    "return_std",
    "comm_amplitude",
    "amplitude_ewma",
)

METHOD_ORDER = ("dru", "ste", "gs", "st-dru", "st-gs")
METHOD_COLORS = {
    "dru": "#1f77b4",
    "ste": "#d62728",
    "gs": "#2ca02c",
    "st-dru": "#9467bd",
    "st-gs": "#ff7f0e",
}


class SchemaError(ValueError):
    """An input file does not match the documented schema."""


def load_metrics(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or ()
        for column in METRICS_COLUMNS:
            if column not in fields:
                raise SchemaError(f"{path}: missing column {column!r}")
        rows = list(reader)
    out: dict[str, np.ndarray] = {}
    for column in METRICS_COLUMNS:
        try:
            out[column] = np.array([float(r[column]) for r in rows])
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: column {column!r} is not numeric ({exc})") from exc
    return out


def load_protocol(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "input_number":
        raise SchemaError(f"{path}: missing column 'input_number'")
    patterns = rows[0][1:]
    try:
        counts = np.array([[int(v) for v in row[1:]] for row in rows[1:]], dtype=np.int64)
    except ValueError as exc:
        raise SchemaError(f"{path}: non-integer count ({exc})") from exc
    return patterns, counts


def group_runs_by_method(run_dirs: list[Path]) -> dict[str, list[Path]]:
    """Run directories are laid out as <experiment>/<method>/<seed>."""
    groups: dict[str, list[Path]] = defaultdict(list)
    for run in run_dirs:
        groups[run.parent.name].append(run)
    order = {m: i for i, m in enumerate(METHOD_ORDER)}
    return dict(sorted(groups.items(), key=lambda kv: order.get(kv[0], len(order))))


def _method_color(method: str) -> str:
    return METHOD_COLORS.get(method, "#7f7f7f")


def _aggregate(groups: dict[str, list[Path]], column: str):
    """Per method: iterations, mean over seeds, min and max bands."""
    out = {}
    for method, runs in groups.items():
        series = [load_metrics(run / "metrics.csv") for run in sorted(runs)]
        series = [s for s in series if s["iteration"].size]
        if not series:
            continue
        n = min(s["iteration"].size for s in series)
        iters = series[0]["iteration"][:n]
        stack = np.stack([s[column][:n] for s in series])
        out[method] = (iters, stack.mean(axis=0), stack.min(axis=0), stack.max(axis=0))
    if not out:
        raise SchemaError("no run directory contained a non-empty metrics.csv")
    return out


# ---------------------------------------------------------------------------
# Figure builders
# ---------------------------------------------------------------------------

def returns_figure(run_dirs: list[Path]):
    groups = group_runs_by_method(run_dirs)
    data = _aggregate(groups, "mean_eval_return")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for method, (iters, mean, lo, hi) in data.items():
        color = _method_color(method)
        ax.plot(iters, mean, label=method, color=color, linewidth=1.6)
        ax.fill_between(iters, lo, hi, color=color, alpha=0.15, linewidth=0)
    ax.set_xlabel("training iteration")
    ax.set_ylabel("mean evaluation return")
    ax.legend(loc="lower right")
    ax.grid(alpha=0.25)
    fig.tight_layout()
    return fig


def amplitude_figure(run_dirs: list[Path]):
    groups = group_runs_by_method(run_dirs)
    raw = _aggregate(groups, "comm_amplitude")
    smooth = _aggregate(groups, "amplitude_ewma")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for method in raw:
        color = _method_color(method)
        iters, mean, _, _ = raw[method]
        ax.plot(iters, mean, color=color, alpha=0.25, linewidth=0.9)
        iters_s, mean_s, _, _ = smooth[method]
        ax.plot(iters_s, mean_s, color=color, label=method, linewidth=1.8)
    ax.set_xlabel("training iteration")
    ax.set_ylabel("communication amplitude (mean |logit|)")
    ax.legend(loc="upper left")
    ax.grid(alpha=0.25)
    fig.tight_layout()
    return fig


def histogram_figure(json_path: Path):
    payload = json.loads(json_path.read_text())
    for key in ("method", "entries"):
        if key not in payload:
            raise SchemaError(f"{json_path}: missing column {key!r}")
    entries = payload["entries"]
    if not entries:
        raise SchemaError(f"{json_path}: no histogram entries")
    modes = sorted({e["mode"] for e in entries}, reverse=True)  # train before eval
    xs = sorted({e["x"] for e in entries})
    fig, axes = plt.subplots(
        len(xs), len(modes), figsize=(4.2 * len(modes), 2.2 * len(xs)), squeeze=False
    )
    by_key = {(e["x"], e["mode"]): e for e in entries}
    for i, x in enumerate(xs):
        for j, mode in enumerate(modes):
            ax = axes[i][j]
            entry = by_key.get((x, mode))
            if entry is None:
                ax.axis("off")
                continue
            edges = np.array(entry["bin_edges"])
            counts = np.array(entry["counts"], dtype=float)
            total = max(entry["samples"], 1)
            ax.bar(
                (edges[:-1] + edges[1:]) / 2,
                counts / total,
                width=np.diff(edges),
                color=_method_color(payload["method"]),
                alpha=0.85,
            )
            ax.set_title(f"x = {x:g}, {mode}", fontsize=9)
            ax.set_xlim(-0.05, 1.05)
    fig.suptitle(f"{payload['method']} response, {entries[0]['samples']} draws", fontsize=11)
    fig.tight_layout()
    return fig


def protocol_figure(run_dir: Path):
    panels = []
    for name, title in (("protocol_pre.csv", "before errors"), ("protocol_post.csv", "after errors")):
        path = run_dir / name
        if not path.exists():
            raise SchemaError(f"{path}: file not found")
        panels.append((title, *load_protocol(path)))
    fig, axes = plt.subplots(1, len(panels), figsize=(5.2 * len(panels), 3.6), squeeze=False)
    for ax, (title, patterns, counts) in zip(axes[0], panels):
        share = counts / np.maximum(counts.sum(axis=1, keepdims=True), 1)
        im = ax.imshow(share, cmap="viridis", aspect="auto", vmin=0.0, vmax=1.0)
        ax.set_title(title)
        ax.set_xlabel("message")
        ax.set_ylabel("input number")
        ax.set_xticks(range(len(patterns)), patterns, rotation=90, fontsize=7)
        ax.set_yticks(range(counts.shape[0]))
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    return fig


def save_figure(fig, out_dir: Path, stem: str) -> list[Path]:
    """Write PNG and SVG with no timestamp metadata."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for ext, metadata in (("png", {"Software": "discomm-plots"}), ("svg", {"Date": None})):
        path = out_dir / f"{stem}.{ext}"
        fig.savefig(path, dpi=120, metadata=metadata)
        written.append(path)
    plt.close(fig)
    return written
