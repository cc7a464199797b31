"""CSV tables and SVG plots for evaluation runs.

Plots go through matplotlib's SVG backend with a fixed hash salt and no
date stamp, so identical inputs give byte-identical files.
"""
import csv
import os

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .state import STATE_NAMES  # noqa: E402

plt.rcParams["svg.hashsalt"] = "optistate"
plt.rcParams["svg.fonttype"] = "none"
plt.rcParams["path.simplify"] = False

MAX_PLOT_POINTS = 600


# -- CSV ---------------------------------------------------------------------

def _cell(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_csv(path):
    """``(header, rows)`` with every row as a list of strings."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], []
    return rows[0], rows[1:]


def read_columns(path):
    """Numeric CSV as ``{column: float array}``."""
    header, rows = read_csv(path)
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return {h: data[:, i] for i, h in enumerate(header)}


def write_loss_csv(path, losses):
    write_csv(path, ["epoch", "loss"], [(i + 1, float(v)) for i, v in enumerate(losses)])


def write_rmse_tables(out_dir, ev, baseline):
    """``rmse.csv`` and ``improvement.csv`` (percent vs ``baseline``)."""
    names = list(STATE_NAMES)
    rows, imp = [], []
    for variant, table in ev.rmse.items():
        for t, r in zip(ev.terrains, table):
            rows.append([variant, t, *r, r.mean()])
        rows.append([variant, "all", *table.mean(0), table.mean()])
        if variant != baseline:
            pct = ev.component_improvement(variant, baseline)
            for t, p in zip(ev.terrains, pct):
                imp.append([variant, baseline, t, *p])
            imp.append([variant, baseline, "all", *pct.mean(0)])
            imp.append([variant, baseline, "mean_rmse", *np.full(len(names), 100.0 * ev.improvement(variant, baseline))])
    write_csv(os.path.join(out_dir, "rmse.csv"), ["variant", "terrain", *names, "mean"], rows)
    write_csv(os.path.join(out_dir, "improvement.csv"), ["variant", "baseline", "terrain", *names], imp)


def estimate_columns(variants):
    cols = ["t"] + [f"truth_{n}" for n in STATE_NAMES]
    for v in variants:
        cols += [f"{v}_{n}" for n in STATE_NAMES]
    for v in variants:
        cols += [f"{v}_mu_{n}" for n in STATE_NAMES]
    return cols


def write_estimates(path, t, truth, estimates):
    """Per-timestep truth, estimates and uncertainties.

    ``estimates`` maps variant -> ``(x, mu or None)``; variants without an
    uncertainty head get no ``mu`` columns.
    """
    variants = list(estimates)
    with_mu = [v for v in variants if estimates[v][1] is not None]
    header = ["t"] + [f"truth_{n}" for n in STATE_NAMES]
    blocks = [t[:, None], truth]
    for v in variants:
        header += [f"{v}_{n}" for n in STATE_NAMES]
        blocks.append(estimates[v][0])
    for v in with_mu:
        header += [f"{v}_mu_{n}" for n in STATE_NAMES]
        blocks.append(estimates[v][1])
    write_csv(path, header, np.hstack(blocks))


# -- plots -------------------------------------------------------------------

def _stride(n):
    return max(1, -(-n // MAX_PLOT_POINTS))


def save_svg(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def loss_figure(curves):
    """Training loss per epoch; ``curves`` maps label -> losses."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, losses in curves.items():
        losses = np.asarray(losses)
        ax.plot(np.arange(1, len(losses) + 1), losses, marker="o", ms=3, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if all(np.all(np.asarray(v) > 0) for v in curves.values()):
        ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    return fig


def overlay_figure(t, truth, series, title=""):
    """Truth and estimator traces per state component."""
    s = _stride(len(t))
    fig, axes = plt.subplots(4, 3, figsize=(12, 10), sharex=True)
    for i, ax in enumerate(axes.flat):
        ax.plot(t[::s], truth[::s, i], color="k", lw=1.2, label="truth")
        for label, x in series.items():
            ax.plot(t[::s], x[::s, i], lw=0.8, label=label)
        ax.set_title(STATE_NAMES[i], fontsize=9)
    axes[0, 0].legend(fontsize=7)
    for ax in axes[-1]:
        ax.set_xlabel("t (s)")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return fig


def band_figure(t, x_bar, mu, truth=None, title=""):
    """Estimate with a shaded band of half-width ``mu`` per component.

    Every sample is drawn (no decimation) so the band can be checked
    against the table it came from.
    """
    fig, axes = plt.subplots(4, 3, figsize=(12, 10), sharex=True)
    for i, ax in enumerate(axes.flat):
        ax.fill_between(t, x_bar[:, i] - mu[:, i], x_bar[:, i] + mu[:, i],
                        color="tab:blue", alpha=0.3, lw=0, label="estimate +- mu")
        ax.plot(t, x_bar[:, i], color="tab:blue", lw=0.8, label="estimate")
        if truth is not None:
            ax.plot(t, truth[:, i], color="k", lw=0.8, label="truth")
        ax.set_title(STATE_NAMES[i], fontsize=9)
    axes[0, 0].legend(fontsize=7)
    for ax in axes[-1]:
        ax.set_xlabel("t (s)")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return fig
