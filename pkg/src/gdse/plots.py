"""Render the emitted plot-data CSVs to PNG files.

Each plot id gets one figure (or one per panel) written next to the CSVs.
Rendering is separate from emission so the delimited output stays the
source of truth; the CLI turns rendering on by default.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ConfigError  # noqa: E402

_DESIGN_COLORS = {
    "gaussian": "tab:blue",
    "rademacher": "tab:orange",
    "std_exponential": "tab:green",
}


def _read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return header, rows


def _color(design):
    return _DESIGN_COLORS.get(design, "tab:gray")


def render_plotdata(plot_id: str, csv_paths: list, out_dir: str) -> list:
    """Render PNGs for one plot id from its emitted CSVs; returns the PNG
    paths."""
    renderers = {
        "fig1": _render_fig1,
        "fig2": _render_fig2,
        "conc": _render_conc,
        "mf": _render_mf,
    }
    if plot_id not in renderers:
        raise ConfigError(f"unknown plot id {plot_id!r}")
    os.makedirs(out_dir, exist_ok=True)
    data_paths = [p for p in csv_paths if p.endswith(".csv")]
    return renderers[plot_id](data_paths, out_dir)


def _render_fig1(paths, out_dir):
    panels = []
    for path in sorted(paths):
        header, rows = _read_csv(path)
        if not rows:
            continue
        series = {}
        for t, design, val in rows:
            series.setdefault(design, []).append((int(t), float(val)))
        label = os.path.splitext(os.path.basename(path))[0]
        panels.append((label, series))
    if not panels:
        return []
    fig, axes = plt.subplots(1, len(panels), figsize=(4.2 * len(panels), 3.4),
                             sharey=True)
    if len(panels) == 1:
        axes = [axes]
    for ax, (label, series) in zip(axes, panels):
        for design in sorted(series):
            pts = sorted(series[design])
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    color=_color(design), label=design)
        ax.set_xlabel("iteration")
        ax.set_title(label.replace("fig1_", ""))
        ax.set_ylim(0, 1.05)
    axes[0].set_ylabel("mean |correlation|")
    axes[-1].legend(fontsize=8)
    fig.tight_layout()
    out = os.path.join(out_dir, "fig1.png")
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return [out]


def _render_fig2(paths, out_dir):
    outs = []
    for path in sorted(paths):
        header, rows = _read_csv(path)
        if not rows:
            continue
        cols = {name: np.array([float(r[i]) for r in rows])
                for i, name in enumerate(header)}
        fig, ax = plt.subplots(figsize=(5.2, 3.6))
        for name in header[1:]:
            if name == "corr_hat":
                ax.plot(cols["t"], cols[name], "k--", label="estimated")
            else:
                design = name.replace("oracle_", "")
                ax.plot(cols["t"], cols[name], color=_color(design),
                        label=f"oracle ({design})")
        ax.set_xlabel("iteration")
        ax.set_ylabel("correlation")
        link = os.path.splitext(os.path.basename(path))[0].replace(
            "fig2_", "")
        ax.set_title(link)
        ax.legend(fontsize=8)
        fig.tight_layout()
        out = os.path.join(out_dir, f"fig2_{link}.png")
        fig.savefig(out, dpi=150)
        plt.close(fig)
        outs.append(out)
    return outs


def _render_conc(paths, out_dir):
    for path in paths:
        header, rows = _read_csv(path)
        if not rows:
            continue
        phis = sorted({float(r[0]) for r in rows})
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
        finals = []
        for phi in phis:
            pts = sorted((int(r[1]), float(r[2])) for r in rows
                         if float(r[0]) == phi)
            ax1.semilogy([p[0] for p in pts], [max(p[1], 1e-300) for p in pts],
                         label=f"phi={phi:g}")
            finals.append(pts[-1][1])
        ax1.set_xlabel("iteration")
        ax1.set_ylabel("median deviation from deterministic path")
        ax1.legend(fontsize=8)
        ax2.loglog(phis, finals, "o-")
        ax2.set_xlabel("aspect ratio phi")
        ax2.set_ylabel("final median deviation")
        fig.tight_layout()
        out = os.path.join(out_dir, "conc.png")
        fig.savefig(out, dpi=150)
        plt.close(fig)
        return [out]
    return []


def _render_mf(paths, out_dir):
    for path in paths:
        header, rows = _read_csv(path)
        if not rows:
            continue
        metrics = ("offdiag_tau", "w_cov_max", "omega_gap_p")
        idx = {name: header.index(name) for name in metrics}
        ts = sorted({int(r[0]) for r in rows})
        fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
        for ax, metric in zip(axes, metrics):
            for t in ts:
                pts = sorted((float(r[1]), float(r[idx[metric]]))
                             for r in rows if int(r[0]) == t)
                ax.loglog([p[0] for p in pts],
                          [max(p[1], 1e-300) for p in pts], "o-",
                          label=f"t={t}")
            ax.set_xlabel("aspect ratio phi")
            ax.set_title(metric)
        axes[0].legend(fontsize=8)
        fig.tight_layout()
        out = os.path.join(out_dir, "mf.png")
        fig.savefig(out, dpi=150)
        plt.close(fig)
        return [out]
    return []
