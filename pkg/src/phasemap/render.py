# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:

"""
Render a solution as SVG figures.

Every figure is built by hand from a few primitives (polygon, circle, polyline, line,
text), with coordinates formatted to a fixed precision, so the same solution always
renders to the same bytes.
"""

# The layout is hardcoded: a ternary panel on the left and, for phase figures, a
# pattern panel on the right.  These are diagnostic figures, not publication plots.

import logging
import math
import os
import re
from typing import List, Sequence, Tuple

import numpy as np

from .domain import PrototypeLibrary, embed
from .evaluation import Solution
from .util import atomic_write

log = logging.getLogger(__name__)

_WIDTH = 900
_HEIGHT = 420
_MARGIN = 40
_SIDE = 340  # side of the ternary triangle
_PANEL_LEFT = 440
_PANEL_WIDTH = 420
_PANEL_HEIGHT = 300
_MAX_RADIUS = 7.0

_LOW_COLOR = (49, 54, 149)
_MID_COLOR = (255, 255, 191)
_HIGH_COLOR = (165, 0, 38)


def _color(value: float, low: float, high: float) -> str:
    """Diverging blue-yellow-red color for a value within [low, high]."""
    t = 0.5 if high <= low else min(1.0, max(0.0, (value - low) / (high - low)))
    start, stop, t = (_LOW_COLOR, _MID_COLOR, 2.0 * t) if t < 0.5 else (_MID_COLOR, _HIGH_COLOR, 2.0 * t - 1.0)
    return "#%02x%02x%02x" % tuple(int(round(a + (b - a) * t)) for a, b in zip(start, stop))


def _ternary(points: np.ndarray) -> np.ndarray:
    """Map barycentric points to SVG coordinates in the left panel."""
    embedded = embed(points)
    x = _MARGIN + embedded[:, 0] * _SIDE
    y = _MARGIN + _SIDE * math.sqrt(3.0) / 2.0 - embedded[:, 1] * _SIDE
    return np.stack([x, y], axis=1)


def _triangle() -> List[str]:
    corners = _ternary(np.eye(3))
    path = " ".join("%.2f,%.2f" % (x, y) for x, y in corners)
    labels = [("A", corners[0], -18, 14), ("B", corners[1], 8, 14), ("C", corners[2], -4, -8)]
    result = ['<polygon points="%s" fill="none" stroke="#000000" stroke-width="1"/>' % path]
    result += ['<text x="%.2f" y="%.2f" font-size="12">%s</text>' % (x + dx, y + dy, name) for name, (x, y), dx, dy in labels]
    return result


def _header(title: str) -> List[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" viewBox="0 0 %d %d">' % (_WIDTH, _HEIGHT, _WIDTH, _HEIGHT),
        '<rect x="0" y="0" width="%d" height="%d" fill="#ffffff"/>' % (_WIDTH, _HEIGHT),
        '<text x="%d" y="%d" font-size="14">%s</text>' % (_MARGIN, 20, _escape(title)),
    ]


def _legend(low: float, high: float, label: str) -> List[str]:
    x, y = _MARGIN, _HEIGHT - 40
    result = []
    for step in range(10):
        value = low + (high - low) * step / 9.0
        result.append('<rect x="%d" y="%d" width="16" height="10" fill="%s"/>' % (x + 16 * step, y, _color(value, low, high)))
    result.append('<text x="%d" y="%d" font-size="10">%s %.4f</text>' % (x, y + 22, _escape(label), low))
    result.append('<text x="%d" y="%d" font-size="10">%.4f</text>' % (x + 130, y + 22, high))
    return result


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _pattern_panel(q: np.ndarray, pattern: np.ndarray, sticks: Sequence[Tuple[float, float]]) -> List[str]:
    left, top = _PANEL_LEFT, _MARGIN + 20
    bottom = top + _PANEL_HEIGHT
    span = q[-1] - q[0]
    scale = pattern.max() if pattern.max() > 0.0 else 1.0

    def x(value: float) -> float:
        return left + (value - q[0]) / span * _PANEL_WIDTH

    frame = '<rect x="%d" y="%d" width="%d" height="%d" fill="none" stroke="#000000" stroke-width="1"/>'
    result = [frame % (left, top, _PANEL_WIDTH, _PANEL_HEIGHT)]
    for position, intensity in sticks:
        result.append(
            '<line x1="%.2f" y1="%.2f" x2="%.2f" y2="%.2f" stroke="#d62728" stroke-width="1"/>'
            % (x(position), bottom, x(position), bottom - intensity * _PANEL_HEIGHT)
        )
    points = " ".join("%.2f,%.2f" % (x(value), bottom - level / scale * _PANEL_HEIGHT) for value, level in zip(q, pattern))
    result.append('<polyline points="%s" fill="none" stroke="#1f77b4" stroke-width="1"/>' % points)
    result.append('<text x="%d" y="%d" font-size="10">%.1f</text>' % (left, bottom + 14, q[0]))
    result.append('<text x="%d" y="%d" font-size="10">%.1f</text>' % (left + _PANEL_WIDTH - 24, bottom + 14, q[-1]))
    result.append('<text x="%d" y="%d" font-size="10">Q (nm^-1)</text>' % (left + _PANEL_WIDTH // 2 - 20, bottom + 14))
    return result


def render_phase(solution: Solution, phase: str, library: PrototypeLibrary) -> str:
    """
    Render one phase: its activation map and its demixed pattern.

    The ternary panel has one marker per point where the phase is active, sized by the
    activation and colored by the shift ratio.  The pattern panel shows the demixed
    pattern with the prototype's sticks overlaid.

    Args:
        solution(Solution): The solution
        phase(str): Phase id to render
        library(PrototypeLibrary): Prototypes, for the sticks

    Returns:
        str: SVG document
    """
    entries = [entry for entry in solution.entries if entry.phase == phase]
    low = min([entry.alpha for entry in entries], default=1.0)
    high = max([entry.alpha for entry in entries], default=1.0)
    coordinates = _ternary(solution.compositions)

    lines = _header("Phase %s: activation (size) and shift ratio (color)" % phase)
    lines += _triangle()
    for entry in entries:
        x, y = coordinates[entry.point]
        radius = max(0.5, _MAX_RADIUS * math.sqrt(entry.activation))
        circle = '<circle cx="%.2f" cy="%.2f" r="%.2f" fill="%s" stroke="#333333" stroke-width="0.3"/>'
        lines.append(circle % (x, y, radius, _color(entry.alpha, low, high)))
    lines += _legend(low, high, "alpha")

    prototype = library.prototypes[library.index(phase)]
    demixed = solution.demixed[solution.phase_ids.index(phase)]
    lines += _pattern_panel(solution.grid.values, demixed, [(peak.q, peak.intensity) for peak in prototype.peaks])
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render_reconstruction(solution: Solution) -> str:
    """Render the L1 reconstruction loss of every point as a ternary heatmap."""
    coordinates = _ternary(solution.compositions)
    low = float(np.min(solution.l1)) if solution.size else 0.0
    high = float(np.max(solution.l1)) if solution.size else 0.0
    lines = _header("Reconstruction loss (L1)")
    lines += _triangle()
    for (x, y), loss in zip(coordinates, solution.l1):
        lines.append('<circle cx="%.2f" cy="%.2f" r="%.2f" fill="%s"/>' % (x, y, _MAX_RADIUS * 0.8, _color(float(loss), low, high)))
    lines += _legend(low, high, "L1")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def figure_name(phase: str) -> str:
    """File name of a phase figure, with unsafe characters replaced."""
    return "phase-%s.svg" % re.sub(r"[^A-Za-z0-9_.-]", "_", phase)


def write_report(solution: Solution, library: PrototypeLibrary, out_dir: str) -> List[str]:
    """
    Write one SVG per active phase plus reconstruction.svg into a directory.

    Returns:
        List[str]: Paths of the written files
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    phases = solution.active_phases
    if not phases:
        log.warning("Solution has no active phases; writing only the reconstruction heatmap")
    for phase in phases:
        path = os.path.join(out_dir, figure_name(phase))
        atomic_write(path, render_phase(solution, phase, library))
        written.append(path)
    path = os.path.join(out_dir, "reconstruction.svg")
    atomic_write(path, render_reconstruction(solution))
    written.append(path)
    return written
