"""Deterministic SVG reliability diagrams.

Output is plain text with fixed-precision coordinates, so identical tables
render to identical bytes and tests can parse the result as XML.
"""

from __future__ import annotations

from html import escape

from osrcal.metrics import ReliabilityTable

SIZE = 360
MARGIN = 48
STROKE = 1.0


def _fmt(x: float) -> str:
    return f"{x:.3f}"


class _Frame:
    def __init__(self, size: int = SIZE, margin: int = MARGIN):
        self.size = size
        self.margin = margin
        self.span = size - 2 * margin

    def x(self, v: float) -> float:
        return self.margin + v * self.span

    def y(self, v: float) -> float:
        return self.size - self.margin - v * self.span


def render_reliability_svg(table: ReliabilityTable, title: str | None = None) -> str:
    """Render bars of per-bin accuracy, the gap to mean confidence, and the diagonal.

    Each element carries a class (``bar``, ``gap``, ``diagonal``) plus
    ``data-*`` attributes with the bin values so the picture can be checked
    without a renderer.
    """
    f = _Frame()
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{f.size}" height="{f.size}" '
        f'viewBox="0 0 {f.size} {f.size}">',
        f'<rect class="background" x="0" y="0" width="{f.size}" height="{f.size}" fill="white"/>',
    ]
    if title:
        out.append(
            f'<text class="title" x="{_fmt(f.size / 2)}" y="{_fmt(f.margin / 2)}" '
            f'text-anchor="middle" font-size="14">{escape(title)}</text>'
        )
    for b in table.bins:
        if not b.count or b.accuracy is None or b.avg_conf is None:
            continue
        x0, x1 = f.x(b.lo), f.x(b.hi)
        top = f.y(b.accuracy)
        out.append(
            f'<rect class="bar" x="{_fmt(x0)}" y="{_fmt(top)}" width="{_fmt(x1 - x0)}" '
            f'height="{_fmt(f.y(0.0) - top)}" fill="#3465a4" stroke="#1f3d66" stroke-width="{STROKE}" '
            f'data-accuracy="{_fmt(b.accuracy)}" data-count="{b.count}"/>'
        )
        lo_v, hi_v = sorted((b.accuracy, b.avg_conf))
        out.append(
            f'<rect class="gap" x="{_fmt(x0)}" y="{_fmt(f.y(hi_v))}" width="{_fmt(x1 - x0)}" '
            f'height="{_fmt(f.y(lo_v) - f.y(hi_v))}" fill="#cc0000" fill-opacity="0.3" '
            f'data-avg-conf="{_fmt(b.avg_conf)}"/>'
        )
    out.append(
        f'<line class="diagonal" x1="{_fmt(f.x(0))}" y1="{_fmt(f.y(0))}" x2="{_fmt(f.x(1))}" y2="{_fmt(f.y(1))}" '
        f'stroke="black" stroke-dasharray="4 3" stroke-width="{STROKE}"/>'
    )
    out.append(
        f'<polyline class="axes" points="{_fmt(f.x(0))},{_fmt(f.y(1))} {_fmt(f.x(0))},{_fmt(f.y(0))} '
        f'{_fmt(f.x(1))},{_fmt(f.y(0))}" fill="none" stroke="black" stroke-width="{STROKE}"/>'
    )
    for i in range(6):
        v = i / 5
        out.append(
            f'<text class="tick" x="{_fmt(f.x(v))}" y="{_fmt(f.y(0) + 16)}" text-anchor="middle" '
            f'font-size="10">{v:.1f}</text>'
        )
        out.append(
            f'<text class="tick" x="{_fmt(f.x(0) - 6)}" y="{_fmt(f.y(v) + 3)}" text-anchor="end" '
            f'font-size="10">{v:.1f}</text>'
        )
    out.append(
        f'<text class="label" x="{_fmt(f.size / 2)}" y="{_fmt(f.size - 8)}" text-anchor="middle" '
        f'font-size="12">Confidence</text>'
    )
    out.append(
        f'<text class="label" x="12" y="{_fmt(f.size / 2)}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 12 {_fmt(f.size / 2)})">Accuracy</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
