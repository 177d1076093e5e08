"""Grouped bar chart of run metrics as a standalone SVG 1.1 document."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

from ..metrics import MetricReport

WIDTH = 640
HEIGHT = 400
MARGIN_LEFT = 60
MARGIN_TOP = 40
PLOT_HEIGHT = 300
COLORS = ("#4878a8", "#e0883a", "#5aa05a", "#c04848")


def _value(rep, metric: str) -> float:
    if isinstance(rep, MetricReport):
        return float(getattr(rep, metric))
    return float(rep[metric])


def render_chart(reports, metrics=("accuracy",), title="Classification accuracy by run") -> str:
    """SVG text for ``reports`` (pairs of label and MetricReport or report dict).

    Bars are ordered by label; each bar's ``height`` is ``value * PLOT_HEIGHT``.
    """
    if not reports:
        raise ValueError("need at least one report")
    items = sorted(reports, key=lambda lr: lr[0])
    plot_w = WIDTH - MARGIN_LEFT - 20
    group_w = plot_w / len(items)
    bar_w = group_w * 0.7 / len(metrics)
    base_y = MARGIN_TOP + PLOT_HEIGHT
    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<title>{escape(title)}</title>',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="16">{escape(title)}</text>',
    ]
    for i in range(5):
        v = i / 4
        y = base_y - v * PLOT_HEIGHT
        out.append(f'<line x1="{MARGIN_LEFT}" y1="{y:.4f}" x2="{WIDTH - 20}" y2="{y:.4f}" '
                   'stroke="#dddddd" stroke-width="1"/>')
        out.append(f'<text x="{MARGIN_LEFT - 6}" y="{y + 4:.4f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{v:.2f}</text>')
    for g, (label, rep) in enumerate(items):
        gx = MARGIN_LEFT + g * group_w + group_w * 0.15
        for m, metric in enumerate(metrics):
            value = min(max(_value(rep, metric), 0.0), 1.0)
            h = value * PLOT_HEIGHT
            x = gx + m * bar_w
            out.append(
                f'<rect class="bar" data-label="{escape(label)}" data-metric="{metric}" '
                f'data-value="{value:.6f}" x="{x:.4f}" y="{base_y - h:.4f}" width="{bar_w:.4f}" '
                f'height="{h:.4f}" fill="{COLORS[m % len(COLORS)]}"/>')
            out.append(f'<text x="{x + bar_w / 2:.4f}" y="{base_y - h - 4:.4f}" text-anchor="middle" '
                       f'font-family="sans-serif" font-size="10">{value:.3f}</text>')
        out.append(f'<text class="label" x="{gx + bar_w * len(metrics) / 2:.4f}" y="{base_y + 18}" '
                   f'text-anchor="middle" font-family="sans-serif" font-size="12">{escape(label)}</text>')
    out.append(f'<line x1="{MARGIN_LEFT}" y1="{base_y}" x2="{WIDTH - 20}" y2="{base_y}" '
               'stroke="#000000" stroke-width="1"/>')
    if len(metrics) > 1:
        for m, metric in enumerate(metrics):
            x = MARGIN_LEFT + m * 110
            out.append(f'<rect x="{x}" y="{HEIGHT - 26}" width="12" height="12" '
                       f'fill="{COLORS[m % len(COLORS)]}"/>')
            out.append(f'<text x="{x + 16}" y="{HEIGHT - 16}" font-family="sans-serif" '
                       f'font-size="11">{escape(metric)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_chart(reports, path, metrics=("accuracy",), title="Classification accuracy by run") -> str:
    svg = render_chart(reports, metrics, title)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(svg)
    return svg
