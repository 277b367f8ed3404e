"""Report rendering: delimited traces plus matplotlib figures beside them.

Every report writes a CSV with the raw numbers and a PNG figure rendered
from the same data, so runs can be compared programmatically or eyeballed.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bank import SampleBank
from .service_io import to_uint8


def write_energy_report(trace, theta_abs: float, out_dir: str, prefix: str = "synth"):
    """Refinement energy trace: <prefix>_energy.csv and <prefix>_energy.png."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{prefix}_energy.csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "energy", "accepted"])
        for step, energy, accepted in trace:
            w.writerow([step, f"{energy:.6f}", int(accepted)])

    steps = [t[0] for t in trace]
    energies = [t[1] for t in trace]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, energies, lw=1.2, color="#27567b")
    if np.isfinite(theta_abs):
        ax.axhline(theta_abs, color="#b04a3a", lw=0.8, ls="--", label="stop threshold")
        ax.legend(frameon=False, fontsize=8)
    ax.set_xlabel("refinement step")
    ax.set_ylabel("field energy")
    ax.set_title("MRF refinement")
    fig.tight_layout()
    png_path = os.path.join(out_dir, f"{prefix}_energy.png")
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return csv_path, png_path


def write_cluster_report(bank: SampleBank, inertia_trace, out_dir: str):
    """k-means inertia curve plus a palette montage of the cluster centers."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "cluster_inertia.csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "inertia"])
        for i, v in enumerate(inertia_trace):
            w.writerow([i, f"{v:.6f}"])

    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(range(len(inertia_trace)), inertia_trace, marker="o", ms=3, lw=1, color="#27567b")
    ax.set_xlabel("Lloyd iteration")
    ax.set_ylabel("inertia")
    ax.set_title("clustering convergence")
    fig.tight_layout()
    curve_path = os.path.join(out_dir, "cluster_inertia.png")
    fig.savefig(curve_path, dpi=120)
    plt.close(fig)

    k = bank.k
    sizes = [len(bank.cluster_members(j)) for j in range(k)]
    fig, axes = plt.subplots(1, max(k, 1), figsize=(1.2 * max(k, 1), 1.8))
    if k == 1:
        axes = [axes]
    for j in range(k):
        thumb = to_uint8(bank.centers[j]).transpose(1, 2, 0)
        axes[j].imshow(thumb)
        axes[j].set_title(f"{j} ({sizes[j]})", fontsize=7)
        axes[j].axis("off")
    fig.suptitle("cluster palette", fontsize=9)
    fig.tight_layout()
    palette_path = os.path.join(out_dir, "cluster_palette.png")
    fig.savefig(palette_path, dpi=120)
    plt.close(fig)
    return csv_path, curve_path, palette_path
