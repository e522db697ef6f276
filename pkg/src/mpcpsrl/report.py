"""Aggregate a finished run directory into plot data and SVG figures.

Training runs give one ``<metric>.csv`` (episode, mean, std, n) and one SVG
per metric, with std taken across trials. Regret runs additionally give a
cumulative-regret-versus-sqrt(T) table.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .runner import Manifest, read_csv, write_csv  # noqa: E402

logger = logging.getLogger(__name__)

TRAIN_METRICS = ("total_reward", "mean_pred_variance")


def aggregate_episodes(path: Path, metric: str, expected_trials: int | None = None):
    """Rows of (episode, mean, std, n) over the trials present in ``path``."""
    header, rows = read_csv(path)
    col, ep_col, trial_col = header.index(metric), header.index("episode"), header.index("trial")
    by_episode = defaultdict(list)
    trials = set()
    for row in rows:
        by_episode[int(row[ep_col])].append(float(row[col]))
        trials.add(int(row[trial_col]))
    if expected_trials is not None and len(trials) < expected_trials:
        logger.warning("only %d of %d trials present; aggregating what is available", len(trials), expected_trials)
    out = []
    for ep in sorted(by_episode):
        vals = np.array(by_episode[ep])
        out.append((ep, float(vals.mean()), float(vals.std()), len(vals)))
    return out


def _plot(path: Path, x, mean, std, xlabel: str, ylabel: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    x, mean, std = map(np.asarray, (x, mean, std))
    ax.plot(x, mean, color="C0")
    ax.fill_between(x, mean - std, mean + std, color="C0", alpha=0.25, linewidth=0)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def report_train(run_dir: Path, out: Path, manifest: Manifest) -> list[Path]:
    written = []
    n = len(manifest.data.get("seeds", [])) or None
    for metric in TRAIN_METRICS:
        rows = aggregate_episodes(run_dir / "episodes.csv", metric, n)
        csv_path = out / f"{metric}.csv"
        write_csv(csv_path, ("episode", "mean", "std", "n"), rows)
        svg_path = out / f"{metric}.svg"
        _plot(svg_path, [r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], "episode", metric)
        written += [csv_path, svg_path]
    return written


def sqrt_table(path: Path) -> list[tuple]:
    """(H, T, sqrt_T, cumulative, cumulative / sqrt_T) from a regret CSV."""
    header, rows = read_csv(path)
    idx = {name: header.index(name) for name in ("H", "T", "cumulative")}
    out = []
    for row in rows:
        T = int(row[idx["T"]])
        cum = float(row[idx["cumulative"]])
        out.append((int(row[idx["H"]]), T, math.sqrt(T), cum, cum / math.sqrt(T)))
    return out


def report_regret(run_dir: Path, out: Path) -> list[Path]:
    written = []
    for path in sorted(run_dir.glob("regret_H*.csv")):
        header, rows = read_csv(path)
        T = [int(r[header.index("T")]) for r in rows]
        cum = [float(r[header.index("cumulative")]) for r in rows]
        se = [float(r[header.index("cumulative_stderr")]) for r in rows]
        stem = path.stem
        table = out / f"{stem}_sqrtT.csv"
        write_csv(table, ("H", "T", "sqrt_T", "cumulative", "cumulative_over_sqrt_T"), sqrt_table(path))
        svg = out / f"{stem}.svg"
        _plot(svg, T, cum, se, "T (steps)", "cumulative Bayesian regret")
        written += [table, svg]
    return written


def report(run_dir: str | Path) -> list[Path]:
    """Write report files under ``<run_dir>/report`` and refresh the manifest."""
    run_dir = Path(run_dir)
    manifest = Manifest.read(run_dir)
    if manifest.data.get("status") != "complete":
        raise RuntimeError(f"run in {run_dir} is not complete (status {manifest.data.get('status')!r})")
    out = run_dir / "report"
    out.mkdir(exist_ok=True)
    kind = manifest.data["kind"]
    if kind == "train":
        written = report_train(run_dir, out, manifest)
    elif kind == "regret":
        written = report_regret(run_dir, out)
    else:
        written = []
    manifest.data["files"] = manifest.inventory()
    manifest.write()
    return written
