"""Learning-curve rendering: per-episode reward marks plus a moving average."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigError

CSV_HEADER = ("wall_clock_ms,worker_id,episode_index,variant,reward,"
              "episode_length,outcome_tag,tp_loss_mean,pi_loss_mean")
CSV_FIELDS = CSV_HEADER.split(",")


def format_row(rec, tag):
    return (f"{rec.wall_ms},{rec.worker_id},{rec.episode_index},{rec.variant},"
            f"{rec.reward},{rec.length},{tag},{rec.tp_loss_mean:.6f},"
            f"{rec.pi_loss_mean:.6f}")


def read_episode_csv(path):
    """Parse an episode log; malformed rows report their line number."""
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise ConfigError(f"{path}:1: unexpected CSV header")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(CSV_FIELDS):
                raise ConfigError(f"{path}:{lineno}: expected "
                                  f"{len(CSV_FIELDS)} fields, got {len(parts)}")
            try:
                rows.append({
                    "wall_clock_ms": int(parts[0]),
                    "worker_id": int(parts[1]),
                    "episode_index": int(parts[2]),
                    "variant": parts[3],
                    "reward": int(parts[4]),
                    "episode_length": int(parts[5]),
                    "outcome_tag": parts[6],
                    "tp_loss_mean": float(parts[7]),
                    "pi_loss_mean": float(parts[8]),
                })
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}")
    return rows


def windowed_mean(values, window):
    """Moving average over full windows only: entry i covers values[i:i+window]."""
    values = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ConfigError("window must be >= 1")
    if values.size < window:
        return np.empty(0)
    csum = np.concatenate(([0.0], np.cumsum(values)))
    return (csum[window:] - csum[:-window]) / window


def plot_learning_curves(csv_paths, window, out_path, exclude_workers=None,
                         title=None):
    """Overlay reward curves from one or more episode CSVs into a vector file.

    Each file contributes faint per-episode reward marks and a moving-average
    line over `window` episodes. exclude_workers drops those worker ids (used
    to keep demonstrator episodes out of planner-imitation curves).
    """
    exclude = set(exclude_workers or ())
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for path in csv_paths:
        rows = [r for r in read_episode_csv(path)
                if r["worker_id"] not in exclude]
        if not rows:
            continue
        rewards = np.array([r["reward"] for r in rows], dtype=np.float64)
        x = np.arange(len(rewards))
        label = rows[0]["variant"]
        if len(csv_paths) > 1:
            label += f" ({os.path.basename(path)})"
        marks = ax.plot(x, rewards, "_", markersize=2, alpha=0.15)[0]
        ma = windowed_mean(rewards, min(window, len(rewards)))
        if ma.size:
            ax.plot(np.arange(len(rewards) - ma.size, len(rewards)), ma,
                    color=marks.get_color(), linewidth=1.8, label=label)
    ax.set_xlabel("episode")
    ax.set_ylabel(f"reward (moving average over {window})")
    ax.set_ylim(-1.1, 1.1)
    ax.axhline(0.0, color="grey", linewidth=0.5)
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
