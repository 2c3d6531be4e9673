"""Static SVG rendering of a coefficient path."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .selector import PathResult

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")

WIDTH, HEIGHT = 720, 420
LEFT, RIGHT, TOP, BOTTOM = 60, 190, 20, 50


def _num(x: float) -> str:
    return f"{x:.2f}"


def path_svg(path: PathResult, raw: bool = False, title: str | None = None) -> str:
    """SVG text with one ``<path>`` per term; lambda decreases left to right.

    Grid points that were not fitted break the curve.  No timestamps are
    written, so equal inputs give identical files.
    """
    lams = path.lambdas
    coef = path.coef_raw if raw else path.coef
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM
    lo, hi = float(lams.min()), float(lams.max())
    span = hi - lo if hi > lo else 1.0
    finite = coef[np.isfinite(coef)]
    ymin = min(0.0, float(finite.min())) if finite.size else -1.0
    ymax = max(0.0, float(finite.max())) if finite.size else 1.0
    if ymax - ymin < 1e-12:
        ymin, ymax = ymin - 1.0, ymax + 1.0
    pad = 0.05 * (ymax - ymin)
    ymin, ymax = ymin - pad, ymax + pad

    def px(lam):
        return LEFT + (hi - lam) / span * pw

    def py(v):
        return TOP + (ymax - v) / (ymax - ymin) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<title>{escape(title)}</title>')
    x0, x1, y1 = LEFT, LEFT + pw, TOP + ph
    out.append(f'<line class="axis" x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>')
    out.append(f'<line class="axis" x1="{x0}" y1="{TOP}" x2="{x0}" y2="{y1}" stroke="black"/>')
    yz = _num(py(0.0))
    out.append(f'<line class="zero" x1="{x0}" y1="{yz}" x2="{x1}" y2="{yz}" '
               'stroke="#555555" stroke-dasharray="4 3"/>')
    for lam in (hi, (hi + lo) / 2, lo):
        out.append(f'<text x="{_num(px(lam))}" y="{y1 + 18}" font-size="11" '
                   f'text-anchor="middle">{lam:.4g}</text>')
    for v in (ymax - pad, 0.0, ymin + pad):
        out.append(f'<text x="{x0 - 6}" y="{_num(py(v) + 4)}" font-size="11" '
                   f'text-anchor="end">{v:.3g}</text>')
    out.append(f'<text x="{x0 + pw / 2:.1f}" y="{HEIGHT - 8}" font-size="12" '
               'text-anchor="middle">lambda (decreasing)</text>')
    for k, label in enumerate(path.labels):
        color = PALETTE[k % len(PALETTE)]
        cmds, pen_down = [], False
        for lam, v in zip(lams, coef[:, k]):
            if not np.isfinite(v):
                pen_down = False
                continue
            cmds.append(f"{'L' if pen_down else 'M'}{_num(px(lam))} {_num(py(v))}")
            pen_down = True
        out.append(f'<path d="{" ".join(cmds)}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5" data-term="{escape(label)}"/>')
        ly = TOP + 14 + 16 * k
        out.append(f'<line x1="{x1 + 12}" y1="{ly}" x2="{x1 + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{x1 + 35}" y="{ly + 4}" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_path_svg(path: PathResult, file, raw: bool = False, title: str | None = None) -> None:
    with open(file, "w", encoding="utf-8") as fh:
        fh.write(path_svg(path, raw, title))
