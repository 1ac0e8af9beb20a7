"""Delimited reports and matplotlib figures for the CLI."""

from __future__ import annotations

import csv
from pathlib import Path


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="ascii") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _axes(figsize=(5.5, 3.5)):
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=figsize, layout="constrained")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    return fig, ax


def save_loss_curve(path, loss, cd=None, mask=None) -> None:
    fig, ax = _axes()
    it = range(len(loss))
    ax.plot(it, loss, "-o", ms=2.5, lw=1.2, label="total")
    if cd is not None:
        ax.plot(it, cd, lw=1.0, label="surface CD")
    if mask is not None:
        ax.plot(it, mask, lw=1.0, label="mask L1")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(frameon=False, fontsize=8)
    fig.savefig(path, dpi=130)
    _close(fig)


def save_metric_curves(path, times, cd, emd_vals=None, cd_label="CD") -> None:
    fig, ax = _axes()
    ax.plot(times, cd, "-o", ms=3, lw=1.2, label=cd_label)
    if emd_vals is not None and any(v is not None for v in emd_vals):
        ax2 = ax.twinx()
        ax2.plot(times, [float("nan") if v is None else v for v in emd_vals],
                 "-s", ms=3, lw=1.2, color="tab:orange", label="EMD")
        ax2.set_ylabel("EMD")
        ax2.spines["top"].set_visible(False)
    ax.set_xlabel("time [s]")
    ax.set_ylabel(cd_label)
    ax.legend(frameon=False, fontsize=8, loc="upper left")
    fig.savefig(path, dpi=130)
    _close(fig)


def _close(fig) -> None:
    import matplotlib.pyplot as plt

    plt.close(fig)


def format_table(header, rows) -> str:
    cols = [len(h) for h in header]
    srows = []
    for row in rows:
        srow = [f"{v:.6g}" if isinstance(v, float) else str(v) for v in row]
        srows.append(srow)
        cols = [max(c, len(s)) for c, s in zip(cols, srow)]
    def fmt(cells):
        return "  ".join(s.rjust(c) for s, c in zip(cells, cols))
    lines = [fmt(header), fmt(["-" * c for c in cols])]
    lines.extend(fmt(r) for r in srows)
    return "\n".join(lines)
