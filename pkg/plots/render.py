#!/usr/bin/env python3
"""Batch figure generation from simulation CSV/JSON outputs.

Reads only the documented result files of a run directory:

    indicators.csv        t,N,rep,i_hat,r_trace
    delta.csv             t,N,rep,delta_l1,delta_l2
    norm_drift.csv        t,N,rep,norm_drift
    h1_moments.csv        t,h1_moment
    picard_residuals.csv  iteration,residual
    manifest.json         (delta-sweep manifests carry the fitted slope)

Usage:
    render.py --kind indicators --in results/<run-id> --out figs/ [--dpi 150]

Figure kinds: indicators, delta_slope, norm_drift, h1_moments,
picard_residuals.  Rendering is read-only and idempotent: embedded metadata
that would change across runs (timestamps, tool versions) is stripped.
"""

import argparse
import csv
import json
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

EXPECTED_HEADERS = {
    "indicators.csv": ["t", "N", "rep", "i_hat", "r_trace"],
    "delta.csv": ["t", "N", "rep", "delta_l1", "delta_l2"],
    "norm_drift.csv": ["t", "N", "rep", "norm_drift"],
    "h1_moments.csv": ["t", "h1_moment"],
    "picard_residuals.csv": ["iteration", "residual"],
}

FIGURE_KINDS = ("indicators", "delta_slope", "norm_drift", "h1_moments",
                "picard_residuals")

# metadata pinned so repeated rendering produces identical bytes
PNG_METADATA = {"Software": "render"}


class RenderError(RuntimeError):
    pass


def read_table(run_dir, name):
    """Rows of a documented CSV as a dict of float columns."""
    path = os.path.join(run_dir, name)
    if not os.path.exists(path):
        raise RenderError(f"missing input file: {path}")
    expected = EXPECTED_HEADERS[name]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise RenderError(f"{name}: empty file")
        if header != expected:
            for got, want in zip(header + [""] * len(expected), expected):
                if got != want:
                    raise RenderError(
                        f"{name}: malformed header, expected column {want!r}, got {got!r}"
                    )
        rows = [row for row in reader if row]
    if not rows:
        raise RenderError(f"{name}: no data rows")
    data = np.array([[float(v) for v in row] for row in rows])
    return {col: data[:, i] for i, col in enumerate(expected)}


def read_manifest(run_dir):
    path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(path):
        raise RenderError(f"missing input file: {path}")
    with open(path) as fh:
        return json.load(fh)


def _mean_band(t, values):
    """Per-time mean and standard error."""
    order = np.argsort(t, kind="stable")
    t_sorted = t[order]
    v_sorted = values[order]
    uniq = np.unique(t_sorted)
    mean = np.empty_like(uniq)
    se = np.empty_like(uniq)
    for i, tt in enumerate(uniq):
        sel = v_sorted[t_sorted == tt]
        mean[i] = sel.mean()
        se[i] = sel.std(ddof=1) / np.sqrt(sel.size) if sel.size > 1 else 0.0
    return uniq, mean, se


def fig_indicators(run_dir):
    tab = read_table(run_dir, "indicators.csv")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for n in sorted(set(tab["N"].astype(int))):
        sel = tab["N"].astype(int) == n
        t, mean, se = _mean_band(tab["t"][sel], tab["i_hat"][sel])
        ax.plot(t, mean, marker="o", ms=3, label=f"N = {n}")
        ax.fill_between(t, mean - se, mean + se, alpha=0.25, lw=0)
    ax.set_xlabel("t")
    ax.set_ylabel(r"mean indicator $\hat I^{N,1}(t)$")
    ax.set_title("first-marginal convergence indicator (band: $\\pm$1 SE)")
    ax.legend()
    return fig


def _delta_fit(tab):
    ns = sorted(set(tab["N"].astype(int)))
    per_n = []
    for n in ns:
        sel = (tab["N"].astype(int) == n) & (tab["t"] > 0.0)
        per_n.append(tab["delta_l2"][sel].mean())
    x = np.log(np.array(ns, dtype=float) - 1.0)
    y = np.log(np.array(per_n))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return np.array(ns), np.array(per_n), float(coef[0]), float(coef[1])


def fig_delta_slope(run_dir):
    tab = read_table(run_dir, "delta.csv")
    manifest = read_manifest(run_dir)
    ns, per_n, slope, intercept = _delta_fit(tab)
    harness_slope = manifest.get("slope")
    ci = manifest.get("slope_ci95", 0.0)
    if harness_slope is not None and abs(slope - harness_slope) > max(ci, 1e-9):
        raise RenderError(
            f"fitted slope {slope:.4f} disagrees with manifest slope "
            f"{harness_slope:.4f} beyond its CI {ci:.4f}"
        )
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.loglog(ns - 1.0, per_n, "o", label=r"$\mathbb{E}|\delta^N|_{L^2}$")
    xs = np.linspace(np.log(ns[0] - 1.0), np.log(ns[-1] - 1.0), 50)
    ax.loglog(np.exp(xs), np.exp(intercept + slope * xs), "-",
              label=f"fit: slope {slope:.3f} $\\pm$ {ci:.3f}")
    ax.set_xlabel("N - 1")
    ax.set_ylabel(r"$\mathbb{E}|\delta^N_t|_{L^2}$ (time mean)")
    ax.set_title("density-fluctuation decay rate")
    ax.legend()
    return fig


def fig_norm_drift(run_dir):
    tab = read_table(run_dir, "norm_drift.csv")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for n in sorted(set(tab["N"].astype(int))):
        sel = tab["N"].astype(int) == n
        t, mean, _ = _mean_band(tab["t"][sel], np.abs(tab["norm_drift"][sel]))
        ax.plot(t, mean, marker="o", ms=3, label=f"N = {n}")
    ax.set_xlabel("t")
    ax.set_ylabel("mean | |u(t)| - 1 |")
    ax.set_yscale("symlog", linthresh=1e-16)
    ax.set_title("norm drift diagnostics")
    ax.legend()
    return fig


def fig_h1_moments(run_dir):
    tab = read_table(run_dir, "h1_moments.csv")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(tab["t"], tab["h1_moment"], marker="o", ms=3)
    ax.set_xlabel("t")
    ax.set_ylabel(r"$\mathbb{E}\,|u(t)|_{H^1}^4$")
    ax.set_title("fourth H1 moment")
    return fig


def fig_picard_residuals(run_dir):
    tab = read_table(run_dir, "picard_residuals.csv")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.semilogy(tab["iteration"].astype(int), tab["residual"], marker="o")
    ax.set_xlabel("iteration")
    ax.set_ylabel(r"$\sup_t |\xi_{k+1} - \xi_k|_{L^1}$")
    ax.set_title("fixed-point iteration residuals")
    return fig


FIGURES = {
    "indicators": fig_indicators,
    "delta_slope": fig_delta_slope,
    "norm_drift": fig_norm_drift,
    "h1_moments": fig_h1_moments,
    "picard_residuals": fig_picard_residuals,
}


def render(kind, run_dir, out_dir, dpi=150):
    """Write <out_dir>/<kind>.png from the run directory; returns the path."""
    if kind not in FIGURES:
        raise RenderError(f"unknown figure kind {kind!r}; pick from {FIGURE_KINDS}")
    fig = FIGURES[kind](run_dir)
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, f"{kind}.png")
    fig.savefig(out_path, dpi=dpi, metadata=PNG_METADATA)
    plt.close(fig)
    if os.path.getsize(out_path) == 0:
        raise RenderError(f"empty image written to {out_path}")
    return out_path


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--kind", required=True, choices=FIGURE_KINDS)
    parser.add_argument("--in", dest="run_dir", required=True,
                        help="run directory with the CSV/JSON outputs")
    parser.add_argument("--out", dest="out_dir", required=True,
                        help="directory for the rendered image")
    parser.add_argument("--dpi", type=int, default=150)
    args = parser.parse_args(argv)
    try:
        path = render(args.kind, args.run_dir, args.out_dir, dpi=args.dpi)
    except RenderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
