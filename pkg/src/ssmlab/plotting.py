"""Minimal SVG plots of memory traces, drawn only from the emitted CSV files."""

from __future__ import annotations

import csv
from collections import defaultdict

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
WIDTH, HEIGHT, PAD = 720, 440, 60


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def memory_plot_svg(traces_csv, envelopes_csv, floor: float = 1e-14) -> str:
    """Log-scale mean memory per family with a +-1 std band over seeds and the median fitted cap line.

    Statistics are taken over ``log10(rho_hat)`` with values at or below
    ``floor`` clipped to it.
    """
    series = defaultdict(lambda: defaultdict(list))
    for row in _read(traces_csv):
        series[row["model_family"]][float(row["t"])].append(max(float(row["rho_hat"]), floor))
    caps = defaultdict(list)
    for row in _read(envelopes_csv):
        c0, b = float(row["c0"]), float(row["intercept"])
        if np.isfinite(c0) and np.isfinite(b):
            caps[row["model_family"]].append((c0, b, float(row["window_lo"]), float(row["window_hi"])))

    curves = {}
    for fam, by_t in sorted(series.items()):
        t = np.array(sorted(by_t))
        logs = [np.log10(by_t[v]) for v in t]
        mean = np.array([v.mean() for v in logs])
        std = np.array([v.std() for v in logs])
        curves[fam] = (t, mean, std)
    if not curves:
        return _svg([], "no data")

    t_all = np.concatenate([c[0] for c in curves.values()])
    lo = min(float((c[1] - c[2]).min()) for c in curves.values())
    hi = max(float((c[1] + c[2]).max()) for c in curves.values())
    t0, t1 = float(t_all.min()), float(t_all.max())
    if t1 == t0:
        t1 = t0 + 1.0
    if hi == lo:
        hi = lo + 1.0

    def sx(t):
        return PAD + (np.asarray(t) - t0) / (t1 - t0) * (WIDTH - 2 * PAD)

    def sy(v):
        return HEIGHT - PAD - (np.asarray(v) - lo) / (hi - lo) * (HEIGHT - 2 * PAD)

    parts = []
    for i, (fam, (t, mean, std)) in enumerate(curves.items()):
        color = _COLORS[i % len(_COLORS)]
        upper = [f"{x:.2f},{y:.2f}" for x, y in zip(sx(t), sy(mean + std))]
        lower = [f"{x:.2f},{y:.2f}" for x, y in zip(sx(t[::-1]), sy((mean - std)[::-1]))]
        parts.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(sx(t), sy(mean)))
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        if caps.get(fam):
            c0, b, wlo, whi = (float(v) for v in np.median(np.array(caps[fam]), axis=0))
            ends = np.array([wlo, whi])
            vals = np.clip((b - c0 * ends) / np.log(10.0), lo, hi)
            parts.append(
                f'<line x1="{sx(ends[0]):.2f}" y1="{sy(vals[0]):.2f}" x2="{sx(ends[1]):.2f}" '
                f'y2="{sy(vals[1]):.2f}" stroke="{color}" stroke-dasharray="6,4" stroke-width="1.5"/>'
            )
        parts.append(f'<text x="{WIDTH - PAD - 120}" y="{PAD + 16 * i}" fill="{color}" '
                     f'font-size="12">{fam}</text>')
    axes = [
        f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 20}" font-size="12" text-anchor="middle">t</text>',
        f'<text x="15" y="{HEIGHT / 2}" font-size="12" transform="rotate(-90 15 {HEIGHT / 2})" '
        f'text-anchor="middle">log10 memory</text>',
    ]
    for v in np.linspace(lo, hi, 5):
        axes.append(f'<text x="{PAD - 6}" y="{sy(v) + 4:.2f}" font-size="10" text-anchor="end">{v:.1f}</text>')
    for v in np.linspace(t0, t1, 5):
        axes.append(f'<text x="{sx(v):.2f}" y="{HEIGHT - PAD + 14}" font-size="10" '
                    f'text-anchor="middle">{v:g}</text>')
    return _svg(axes + parts, "memory functions")


def _svg(body, title: str) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">\n<title>{title}</title>\n'
        f'<rect width="100%" height="100%" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n"
    )
