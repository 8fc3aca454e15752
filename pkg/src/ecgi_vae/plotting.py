"""Matplotlib figures for experiment cases and generated samples."""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def plot_case(path, case, recons, scars, extras, mesh):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    U = case.tmp_true.U
    healthy = [i for i in range(U.shape[0]) if i not in set(case.scar_true)]
    nodes = [case.origin_true, healthy[len(healthy) // 2]]
    if case.scar_true:
        nodes.append(case.scar_true[len(case.scar_true) // 2])
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    t = np.arange(U.shape[1]) * case.tmp_true.dt_effective
    for node, ls in zip(nodes, ("-", "--", ":")):
        axes[0].plot(t, U[node], "k" + ls, lw=2, label=f"truth node {node}")
        for name, rec in recons.items():
            axes[0].plot(t, rec.U[node], ls, lw=1, label=f"{name} {node}")
    axes[0].set_xlabel("time")
    axes[0].set_ylabel("TMP")
    axes[0].legend(fontsize=6)
    xy = mesh.node_coords[:, :2]
    z = mesh.node_coords[:, 2]
    # show the layer holding most of the true scar (lowest layer if none)
    layers = np.unique(z)
    counts = [np.isin(np.flatnonzero(z == lz), list(case.scar_true)).sum() for lz in layers]
    shown = layers[int(np.argmax(counts))]
    bottom = z == shown
    truth = np.zeros(U.shape[0])
    truth[list(case.scar_true)] = 1
    axes[1].scatter(xy[bottom, 0], xy[bottom, 1], c=truth[bottom], cmap="Reds", s=60,
                    vmin=0, vmax=1, edgecolors="k", label="truth")
    for k, (name, s) in enumerate(scars.items()):
        mark = np.zeros(U.shape[0], bool)
        mark[list(s)] = True
        sel = bottom & mark
        axes[1].scatter(xy[sel, 0] + 0.15 * (k - 1), xy[sel, 1] + 0.2, s=12, marker="x",
                        label=name)
    axes[1].set_title(f"scar (layer z={shown:g})")
    axes[1].legend(fontsize=6)
    prop = extras.get("proposed", {})
    if prop.get("log_marginal"):
        lm = prop["log_marginal"]
        axes[2].plot(np.arange(len(lm)), lm, "o-", ms=3)
        axes[2].set_ylabel("log p(Y, Z)")
    elif prop.get("L_trace"):
        axes[2].plot(np.arange(1, len(prop["L_trace"]) + 1), prop["L_trace"], "o-", ms=3)
        axes[2].set_ylabel("M-step objective")
    axes[2].set_xlabel("EM iteration")
    fig.suptitle(f"{case.case_id} ({case.setting_tag})")
    fig.tight_layout()
    fig.savefig(path, dpi=80)
    plt.close(fig)
    return path


def plot_samples(path, samples, reference=None, n_nodes=6):
    """Traces of a few nodes for each generated sample (and an optional reference)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    samples = np.asarray(samples)
    fig, axes = plt.subplots(1, len(samples), figsize=(3 * len(samples), 2.8), squeeze=False)
    idx = np.linspace(0, samples.shape[1] - 1, n_nodes).astype(int)
    for ax, s in zip(axes[0], samples):
        ax.plot(s[idx].T, lw=1)
        if reference is not None:
            ax.plot(np.asarray(reference)[idx].T, "k:", lw=0.8)
        ax.set_ylim(-0.3, 1.3)
    fig.tight_layout()
    fig.savefig(path, dpi=80)
    plt.close(fig)
    return path
