"""Minimal deterministic SVG writer.

Numbers are formatted with fixed precision so equal inputs give byte-identical
files; no timestamps or random ids are ever embedded.
"""

from __future__ import annotations

from xml.sax.saxutils import escape


def _f(v: float) -> str:
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


class Svg:
    def __init__(self, width: float, height: float, background: str = "#ffffff"):
        self.width = width
        self.height = height
        self.parts: list[str] = []
        self.rect(0, 0, width, height, fill=background)

    def rect(self, x, y, w, h, fill, stroke=None, title=None):
        extra = f' stroke="{stroke}"' if stroke else ""
        body = f"<title>{escape(title)}</title>" if title else ""
        tag = f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" fill="{fill}"{extra}'
        self.parts.append(f"{tag}>{body}</rect>" if body else f"{tag}/>")

    def line(self, x1, y1, x2, y2, stroke, width=1.0, title=None):
        tag = (
            f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
            f'stroke="{stroke}" stroke-width="{_f(width)}"'
        )
        self.parts.append(f"{tag}><title>{escape(title)}</title></line>" if title else f"{tag}/>")

    def circle(self, cx, cy, r, fill, stroke="#333333", title=None):
        tag = f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(r)}" fill="{fill}" stroke="{stroke}"'
        self.parts.append(f"{tag}><title>{escape(title)}</title></circle>" if title else f"{tag}/>")

    def text(self, x, y, s, size=10, anchor="start", fill="#000000", rotate=None):
        tr = f' transform="rotate({_f(rotate)} {_f(x)} {_f(y)})"' if rotate is not None else ""
        self.parts.append(
            f'<text x="{_f(x)}" y="{_f(y)}" font-family="sans-serif" font-size="{_f(size)}" '
            f'text-anchor="{anchor}" fill="{fill}"{tr}>{escape(str(s))}</text>'
        )

    def render(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(self.width)}" height="{_f(self.height)}" '
            f'viewBox="0 0 {_f(self.width)} {_f(self.height)}">\n'
        )
        return head + "\n".join(self.parts) + "\n</svg>\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.render())


def bar_chart(labels: list[str], values: list[int], title: str, ylabel: str) -> Svg:
    w, h = 80 + 60 * max(len(labels), 1), 320
    svg = Svg(w, h)
    svg.text(w / 2, 20, title, size=14, anchor="middle")
    top, bottom, left = 40, h - 60, 60
    svg.line(left, bottom, w - 20, bottom, "#000000")
    svg.line(left, top, left, bottom, "#000000")
    svg.text(14, (top + bottom) / 2, ylabel, size=10, anchor="middle", rotate=-90)
    vmax = max(values) if values and max(values) > 0 else 1
    for i, (lab, v) in enumerate(zip(labels, values)):
        bh = (bottom - top) * v / vmax
        x = left + 10 + 60 * i
        svg.rect(x, bottom - bh, 40, bh, fill="#4477aa", title=f"{lab}: {v}")
        svg.text(x + 20, bottom - bh - 4, str(v), size=8, anchor="middle")
        svg.text(x + 20, bottom + 14, lab, size=9, anchor="middle")
    return svg


def matrix_heatmap(matrix, title: str, cell: float = 4.0) -> Svg:
    """Source (rows) by destination (columns) heatmap, white to dark red."""
    n = len(matrix)
    cell = max(cell, 320.0 / max(n, 1)) if n < 80 else cell
    side = max(n, 1) * cell
    svg = Svg(side + 80, side + 80)
    svg.text((side + 80) / 2, 20, title, size=14, anchor="middle")
    vmax = max((max(row) for row in matrix), default=0) or 1
    for i, row in enumerate(matrix):
        for j, v in enumerate(row):
            if v == 0:
                continue
            shade = 255 - (255 * int(v)) // int(vmax)
            svg.rect(40 + j * cell, 40 + i * cell, cell, cell, fill=f"#ff{shade:02x}{shade:02x}", title=f"{i}->{j}: {v}")
    svg.rect(40, 40, side, 0.5, fill="#000000")
    svg.text(40 + side / 2, side + 60, "destination rank", size=10, anchor="middle")
    svg.text(20, 40 + side / 2, "source rank", size=10, anchor="middle", rotate=-90)
    return svg
