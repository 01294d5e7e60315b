"""Static SVG scatter-and-line charts of flow against concentration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence
from xml.sax.saxutils import escape

from .experiments import DiagramPoint

WIDTH, HEIGHT = 640, 440
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 30, 50
SAMPLE_COLOR = "#999999"
FREE_FLOW_COLOR = "#2ca02c"
MEAN_COLOR = "#d62728"
DET_COLOR = "#1f77b4"


@dataclass(frozen=True)
class DiagramData:
    samples: tuple[tuple[float, float, bool], ...] = ()  # (k, q, is_free_flow)
    mean: tuple[tuple[float, float], ...] = ()
    deterministic: tuple[tuple[float, float], ...] = ()
    title: str = field(default="")


def diagram_data(points: Sequence[DiagramPoint], title: str = "") -> DiagramData:
    return DiagramData(
        samples=tuple(
            (pt.k, q, ff) for pt in points for q, ff in zip(pt.q_samples, pt.is_free_flow)
        ),
        mean=tuple((pt.k, pt.q_mean) for pt in points),
        deterministic=tuple((pt.k, pt.q_det) for pt in points),
        title=title,
    )


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    span = hi - lo
    raw = span / count
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * span:
        ticks.append(round(t, 10))
        t += step
    return ticks


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _tick_label(x: float) -> str:
    return f"{x:g}"


def render_svg(data: DiagramData) -> bytes:
    """Gray sample dots, green crosses for free-flow samples, red mean and blue noise-free polylines.

    Output depends only on ``data``.  With no finite data the axes are drawn
    over a unit range.
    """
    finite = lambda k, q: math.isfinite(k) and math.isfinite(q)  # noqa: E731
    samples = [s for s in data.samples if finite(s[0], s[1])]
    mean = [p for p in data.mean if finite(*p)]
    det = [p for p in data.deterministic if finite(*p)]
    ks = [s[0] for s in samples] + [p[0] for p in mean + det]
    qs = [s[1] for s in samples] + [p[1] for p in mean + det]
    k_lo, k_hi = (0.0, max(ks)) if ks else (0.0, 1.0)
    q_lo, q_hi = (min(0.0, min(qs)), max(qs)) if qs else (0.0, 1.0)
    if k_hi <= k_lo:
        k_hi = k_lo + 1.0
    if q_hi <= q_lo:
        q_hi = q_lo + 1.0
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def sx(k: float) -> float:
        return MARGIN_L + (k - k_lo) / (k_hi - k_lo) * pw

    def sy(q: float) -> float:
        return MARGIN_T + ph - (q - q_lo) / (q_hi - q_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if data.title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle">{escape(data.title)}</text>')

    # axes
    x0, y0 = MARGIN_L, MARGIN_T + ph
    out.append(f'<g id="axes" stroke="black" fill="none">')
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}"/>')
    out.append(f'<line x1="{x0}" y1="{MARGIN_T}" x2="{x0}" y2="{y0}"/>')
    out.append("</g>")
    out.append('<g id="ticks" fill="black">')
    for t in _nice_ticks(k_lo, k_hi):
        x = _fmt(sx(t))
        out.append(f'<line x1="{x}" y1="{y0}" x2="{x}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{x}" y="{y0 + 18}" text-anchor="middle">{_tick_label(t)}</text>')
    for t in _nice_ticks(q_lo, q_hi):
        y = _fmt(sy(t))
        out.append(f'<line x1="{x0 - 5}" y1="{y}" x2="{x0}" y2="{y}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{y}" text-anchor="end" dominant-baseline="middle">{_tick_label(t)}</text>')
    out.append(f'<text x="{x0 + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">k</text>')
    out.append(f'<text x="16" y="{MARGIN_T + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN_T + ph / 2:.1f})">q</text>')
    out.append("</g>")

    out.append(f'<g id="samples" fill="{SAMPLE_COLOR}">')
    for k, q, ff in samples:
        if not ff:
            out.append(f'<circle cx="{_fmt(sx(k))}" cy="{_fmt(sy(q))}" r="1.5"/>')
    out.append("</g>")
    out.append(f'<g id="free-flow-samples" stroke="{FREE_FLOW_COLOR}" stroke-width="1">')
    for k, q, ff in samples:
        if ff:
            x, y = sx(k), sy(q)
            out.append(
                f'<path d="M{_fmt(x - 2)} {_fmt(y - 2)}L{_fmt(x + 2)} {_fmt(y + 2)}'
                f'M{_fmt(x - 2)} {_fmt(y + 2)}L{_fmt(x + 2)} {_fmt(y - 2)}"/>'
            )
    out.append("</g>")
    for gid, series, color in (("deterministic", det, DET_COLOR), ("mean", mean, MEAN_COLOR)):
        if series:
            pts = " ".join(f"{_fmt(sx(k))},{_fmt(sy(q))}" for k, q in series)
            out.append(
                f'<polyline id="{gid}" points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode("utf-8")
