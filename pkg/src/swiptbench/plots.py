"""Static SVG charts; matplotlib is imported lazily so the core has no plotting dependency."""
from __future__ import annotations

import os
import tempfile

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "swiptbench"
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".svg.tmp")
    os.close(fd)
    try:
        fig.savefig(tmp, format="svg", metadata={"Date": None})
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def reward_curves(rows, path):
    """Median reward per global iteration for each controller, with task boundaries."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(9, 4))
    controllers = sorted({r.controller for r in rows})
    boundaries = []
    for c in controllers:
        per_seed: dict = {}
        for r in rows:
            if r.controller == c:
                per_seed.setdefault(r.seed, []).append(r)
        series = [[r.avg_reward for r in rs] for rs in per_seed.values()]
        length = min(len(s) for s in series)
        med = np.median(np.array([s[:length] for s in series]), axis=0)
        ax.plot(np.arange(1, length + 1), med, label=c)
        if not boundaries:
            first = next(iter(per_seed.values()))
            boundaries = [i for i in range(1, len(first)) if (first[i].domain, first[i].task) != (first[i - 1].domain, first[i - 1].task)]
    for b in boundaries:
        ax.axvline(b + 0.5, color="grey", lw=0.5, ls="--")
    ax.set_xlabel("iteration (concatenated over tasks)")
    ax.set_ylabel("average reward")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def cdf_chart(curves: dict, path):
    """``curves`` maps a label to [(threshold, probability)]."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in sorted(curves):
        pts = np.array(curves[label])
        ax.step(pts[:, 0], pts[:, 1], where="post", label=label)
    ax.set_xlabel("queue length (bits)")
    ax.set_ylabel("CDF")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def bar_chart(summary, path, xlabel="sweep point", ylabel="energy (mJ/slot)"):
    """``summary`` rows carry controller, point and median keys."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    controllers = sorted({s["controller"] for s in summary})
    points = []
    for s in summary:
        if s["point"] not in points:
            points.append(s["point"])
    width = 0.8 / max(1, len(controllers))
    x = np.arange(len(points))
    for i, c in enumerate(controllers):
        vals = [next((s["median"] for s in summary if s["controller"] == c and s["point"] == p), np.nan) for p in points]
        ax.bar(x + i * width, vals, width, label=c)
    ax.set_xticks(x + width * (len(controllers) - 1) / 2)
    ax.set_xticklabels([str(p) for p in points])
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
