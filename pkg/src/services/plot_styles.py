"""
Opciones de estilo de los SVG, para mantener todo ordenadito.
"""

from __future__ import annotations
from typing import Any, Dict, Tuple

# 640 x 480 puntos a 72 dpi -> viewBox "0 0 640 480"
DPI: float = 72.0
FIGURE_SIZE: Tuple[float, float] = (640.0 / DPI, 480.0 / DPI)

AXIS_RANGE: Tuple[float, float] = (0.0, 100.0)

BLUE: str = "#4285f4"
RED: str = "#d93025"
GREY: str = "#5f6368"
BLACK: str = "#000000"

# Hash fijo y texto como <text> para que el SVG no cambie entre corridas
SVG_RC: Dict[str, Any] = {
    "svg.hashsalt": "measurement-agreement",
    "svg.fonttype": "none",
    "font.size": 11.0,
}
SVG_METADATA: Dict[str, Any] = {"Date": None, "Creator": None}

GIDS: Dict[str, str] = {
    "POINTS": "points",
    "MEAN": "hline-mean",
    "UPPER": "hline-upper",
    "LOWER": "hline-lower",
    "DIAGONAL": "diagonal",
}

STYLES: Dict[str, Dict[str, Any]] = {
    "POINTS": {"s": 22.0, "color": BLUE, "alpha": 0.8, "linewidths": 0.0},
    "MEAN": {"color": BLACK, "linestyle": "-", "linewidth": 1.2},
    "LIMIT": {"color": RED, "linestyle": "--", "linewidth": 1.0},
    "DIAGONAL": {"color": GREY, "linestyle": "-", "linewidth": 1.0},
    "GRID": {"color": GREY, "alpha": 0.25, "linewidth": 0.5},
}

LABELS: Dict[str, str] = {
    "BA_X": "Mean of the two measurements",
    "BA_Y": "Difference ({a} - {b})",
    "BA_TITLE": "Bland-Altman: {a} vs {b}",
    "DEV_X": "True value (%)",
    "DEV_Y": "Measured value (%)",
    "DEV_TITLE": "Deviations from reference value{suffix}",
}
