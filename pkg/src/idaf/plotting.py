"""Report figures.  Uses the non-interactive Agg backend; every function writes a PNG."""
from __future__ import annotations

from collections import deque
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import networkx as nx  # noqa: E402
import numpy as np  # noqa: E402

from .configuration import Configuration, node_key, to_graph  # noqa: E402
from .locator import hex_to_cartesian  # noqa: E402


def layout(cfg: Configuration) -> dict:
    """Plane positions: lattice coordinates for rigid meshes, spring layout otherwise."""
    g = to_graph(cfg)
    loc = cfg.spec.locator
    if loc is None or not g.nodes:
        return nx.spring_layout(g, seed=0) if g.nodes else {}
    pos: dict = {}
    for start in sorted(g.nodes, key=node_key):
        if start in pos:
            continue
        base = (3 * len(pos), 0)
        pos[start] = loc.zero()
        q = deque([start])
        while q:
            n = q.popleft()
            for t, p in cfg.perspectives(n):
                if p not in pos:
                    pos[p] = pos[n] + loc.step(cfg.spec.connection(t).d)
                    q.append(p)
        for n in list(pos):
            if isinstance(pos[n], tuple):
                continue
            xy = hex_to_cartesian(pos[n]) if loc.name == "hex6" else pos[n].components
            pos[n] = (xy[0] + base[0], xy[1] + base[1])
    return pos


def draw_configuration(cfg: Configuration, path: Path, title: str = "") -> Path:
    g = to_graph(cfg)
    fig, ax = plt.subplots(figsize=(5, 5))
    if g.nodes:
        pos = layout(cfg)
        colors = ["#d62728" if g.nodes[n]["frozen"] else "#1f77b4" for n in g.nodes]
        nx.draw_networkx(g, pos, ax=ax, node_color=colors, font_color="white", font_size=8)
    ax.set_title(title or f"{cfg.ida} ({cfg.spec.name}): {len(g.nodes)} nodes, {len(g.edges)} edges")
    ax.set_axis_off()
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_join_metrics(rows: list, path: Path) -> Path:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    names = [r["node"] for r in rows]
    lat = [r["latency_ms"] if r["latency_ms"] is not None else np.nan for r in rows]
    a1.bar(names, lat)
    a1.set_ylabel("join latency (virtual ms)")
    a2.bar(names, [r["messages"] for r in rows], color="#ff7f0e")
    a2.set_ylabel("messages per join")
    for a in (a1, a2):
        a.tick_params(axis="x", labelrotation=90, labelsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_spectrum(real: np.ndarray, imag: np.ndarray, block: int, path: Path) -> Path:
    mag = np.hypot(real[:block], imag[:block])
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.stem(np.arange(block), mag)
    ax.set_xlabel("bin")
    ax.set_ylabel("|X|")
    ax.set_title("spectrum of block 0")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_block_timeline(per_block: list, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 3))
    leaves = sorted({r["leaf"] for r in per_block}, key=node_key)
    for r in per_block:
        y = leaves.index(r["leaf"])
        ax.barh(y, r["returned_ms"] - r["sent_ms"], left=r["sent_ms"], height=0.6, alpha=0.5, edgecolor="k")
        ax.text(r["returned_ms"], y, f" {r['seq']}", va="center", fontsize=7)
    ax.set_yticks(range(len(leaves)), leaves)
    ax.set_xlabel("virtual ms")
    ax.set_title("block round trips by leaf")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_census(counts: list, path: Path) -> Path:
    """Persons and cookies in the world after each tick."""
    fig, ax = plt.subplots(figsize=(7, 3))
    if counts:
        t, n, c = zip(*counts)
        ax.plot(t, c, label="cookies", lw=0.8)
        ax.plot(t, n, label="persons", lw=0.8)
    ax.set_xlabel("tick")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
