"""Figures for benchmark reports (PNG files, no display needed)."""

from __future__ import annotations

from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .runner import RunReport  # noqa: E402

AXIS_LABELS = {"send_rate": "send rate (tps)", "clients": "clients",
               "total_txs": "transactions"}


def plot_sweep(rows: list[dict[str, Any]], param: str, out_dir) -> list[Path]:
    """Throughput and latency against the swept parameter."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    xs = [r["value"] for r in rows]
    label = AXIS_LABELS.get(param, param)
    paths = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, [r["throughput"] for r in rows], marker="o", label="achieved")
    if param == "send_rate":
        ax.plot(xs, xs, linestyle="--", color="grey", label="offered")
    ax.set_xlabel(label)
    ax.set_ylabel("throughput (tps)")
    ax.set_title(f"Throughput by {label}")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    paths.append(out_dir / "sweep_throughput.png")
    fig.savefig(paths[-1], dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, [r["avg_latency"] for r in rows], marker="o", label="average")
    ax.plot(xs, [r["p95"] for r in rows], marker="s", linestyle=":", label="p95")
    ax.set_xlabel(label)
    ax.set_ylabel("latency (s)")
    ax.set_title(f"Latency by {label}")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    paths.append(out_dir / "sweep_latency.png")
    fig.savefig(paths[-1], dpi=120)
    plt.close(fig)
    return paths


def plot_run(report: RunReport, out_dir) -> list[Path]:
    """Latency distribution of a single run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(report.latencies, bins=50, color="tab:blue", alpha=0.8)
    ax.axvline(report.latency_avg, color="black", linestyle="--",
               label=f"avg {report.latency_avg:.3f} s")
    ax.axvline(report.latency_p95, color="tab:red", linestyle=":",
               label=f"p95 {report.latency_p95:.3f} s")
    ax.set_xlabel("latency (s)")
    ax.set_ylabel("transactions")
    ax.set_title(f"{report.spec['tx_type']} at {report.spec['send_rate_tps']} tps")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "latency_hist.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]
