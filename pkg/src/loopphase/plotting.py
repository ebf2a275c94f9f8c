"""Optional PNG quick-looks of exported maps (needs matplotlib).

These are previews only; the CSV/PGM/bin exports are the reference outputs.
"""
from __future__ import annotations

import math
from pathlib import Path


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def save_map_png(map_, path, title: str = "", cmap: str = "inferno", ring_radius=None, lobes=()):
    plt = _pyplot()
    g = map_.grid
    cx, cy = g.center
    extent = (cx - g.half_extent, cx + g.half_extent, cy - g.half_extent, cy + g.half_extent)
    fig, ax = plt.subplots(figsize=(4.2, 3.6), dpi=110)
    im = ax.imshow(map_.values, origin="lower", extent=extent, cmap=cmap)
    fig.colorbar(im, ax=ax, shrink=0.85)
    if ring_radius:
        for angle, kind in lobes:
            ax.plot(cx + ring_radius * math.cos(angle), cy + ring_radius * math.sin(angle),
                    "o" if kind == "max" else "x", color="cyan", ms=5)
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)


def save_sheets_png(surface, path):
    plt = _pyplot()
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2), dpi=110)
    for k, ax in enumerate(axes):
        im = ax.imshow(surface.sheets[k].T, origin="lower", extent=(0, 2 * math.pi, 0, 2 * math.pi),
                       cmap="viridis")
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_xlabel("phi12 + phi23")
        ax.set_ylabel("phi13")
        ax.set_title(f"sheet {k}", fontsize=9)
    if len(surface.zero_set):
        axes[1].plot(surface.zero_set[:, 0], surface.zero_set[:, 1], ",", color="white")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_loops_png(manifold, path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4, 4), dpi=110)
    for loop, phase in zip(manifold.loops, manifold.loop_phases):
        ax.plot(loop[:, 0], loop[:, 1], ".", ms=2, label=f"Phi = {phase:.4f}")
    ax.set_xlim(0, 2 * math.pi)
    ax.set_ylim(0, 2 * math.pi)
    ax.set_xlabel("phi12 + phi23")
    ax.set_ylabel("phi13")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
