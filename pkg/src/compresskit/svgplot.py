"""Minimal hand-written SVG for precision-recall curves.

The polyline carries the curve points in data coordinates (recall, precision)
formatted exactly as in the CSV export; a group transform maps them onto the
plot area, so the SVG is a pure rendering of the CSV.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

WIDTH, HEIGHT = 480, 400
LEFT, RIGHT, TOP, BOTTOM = 60, 20, 40, 50


def format_point(r: float, p: float) -> str:
    return f"{float(r)!r},{float(p)!r}"


def pr_svg(points, title: str = "") -> str:
    pw = WIDTH - LEFT - RIGHT
    ph = HEIGHT - TOP - BOTTOM
    x0, y0 = LEFT, TOP + ph
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f"<title>{escape(title)}</title>",
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="{TOP - 15}" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for i in range(11):
        t = i / 10
        gx = x0 + t * pw
        gy = y0 - t * ph
        out.append(f'<line x1="{gx}" y1="{TOP}" x2="{gx}" y2="{y0}" stroke="#eee"/>')
        out.append(f'<line x1="{x0}" y1="{gy}" x2="{x0 + pw}" y2="{gy}" stroke="#eee"/>')
        if i % 2 == 0:
            out.append(f'<text x="{gx}" y="{y0 + 16}" text-anchor="middle">{t:.1f}</text>')
            out.append(f'<text x="{x0 - 6}" y="{gy + 4}" text-anchor="end">{t:.1f}</text>')
    out += [
        f'<line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{TOP}" x2="{x0}" y2="{y0}" stroke="black"/>',
        f'<text x="{x0 + pw / 2}" y="{HEIGHT - 12}" text-anchor="middle">Recall</text>',
        f'<text x="16" y="{TOP + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {TOP + ph / 2})">Precision</text>',
        f'<g transform="translate({x0} {y0}) scale({pw} {-ph})">',
        '<polyline class="pr-curve" fill="none" stroke="#1f77b4" stroke-width="2" '
        'vector-effect="non-scaling-stroke" '
        f'points="{" ".join(format_point(r, p) for r, p in points)}"/>',
        "</g>",
        "</svg>",
    ]
    return "\n".join(out) + "\n"


def polyline_points(svg: str) -> list[str]:
    """The ``recall,precision`` tokens of the curve polyline, as written."""
    marker = 'class="pr-curve"'
    start = svg.index(marker)
    attr = svg.index('points="', start) + len('points="')
    end = svg.index('"', attr)
    return svg[attr:end].split()
