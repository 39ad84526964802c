"""Optional PNG figures for CLI reports.

matplotlib is imported lazily, so the rest of the package works without it.
"""
from __future__ import annotations

import networkx as nx


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError("figures need matplotlib (pip install chaselab[figures])") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def atom_counts(history, path, title="atoms per step"):
    """Line plot of instance size after each chase step."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(len(history)), history, marker="o", markersize=3)
    ax.set_xlabel("step")
    ax.set_ylabel("atoms")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def digraph(g: nx.DiGraph, path, title="", special_edges=()):
    """Draw a directed graph; ``special_edges`` are dashed and red."""
    plt = _pyplot()
    special = set(special_edges)
    fig, ax = plt.subplots(figsize=(6, 5))
    pos = nx.circular_layout(g) if len(g) > 2 else nx.spring_layout(g, seed=0)
    nx.draw_networkx_nodes(g, pos, ax=ax, node_color="#dde7f3", node_size=900)
    nx.draw_networkx_labels(g, pos, ax=ax, labels={v: str(v) for v in g}, font_size=8)
    plain = [e for e in g.edges if e not in special]
    nx.draw_networkx_edges(g, pos, ax=ax, edgelist=plain, arrows=True, node_size=900)
    if special:
        nx.draw_networkx_edges(
            g, pos, ax=ax, edgelist=sorted(special, key=str), arrows=True, style="dashed",
            edge_color="#b22222", node_size=900,
        )
    ax.set_title(title)
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
