"""
Gráficos SVG: Bland-Altman y desviaciones respecto del valor de referencia.

Usa Figure + canvas SVG directamente (sin pyplot), así no hay estado global.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Union

import matplotlib
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from src.errors import EmptyInput, IoFailure
from src.services.accuracy import DeviationReport
from src.services.agreement import BlandAltmanReport
from src.services.plot_styles import (
    AXIS_RANGE,
    DPI,
    FIGURE_SIZE,
    GIDS,
    LABELS,
    STYLES,
    SVG_METADATA,
    SVG_RC,
)

log: logging.Logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _new_figure() -> Figure:
    figure = Figure(figsize=FIGURE_SIZE, dpi=DPI)
    FigureCanvasSVG(figure)
    return figure


def _save(figure: Figure, path: PathLike) -> Path:
    """
    Guarda la figura como SVG determinista.

    :raises IoFailure: Si no se puede escribir el archivo.
    """
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        figure.savefig(target, format="svg", metadata=SVG_METADATA)
    except OSError as exc:
        raise IoFailure(f"no se pudo escribir {target}: {exc}") from exc
    log.debug("SVG escrito en %s", target)
    return target


def emit_bland_altman_svg(report: BlandAltmanReport, path: PathLike) -> Path:
    """
    Gráfico de Bland-Altman: puntos (media, diferencia) y tres líneas
    horizontales en d_bar y d_bar +/- k s_d.

    :param report: Reporte con al menos un punto.
    :type report: BlandAltmanReport
    :param path: Archivo de salida.
    :type path: PathLike
    :return: ruta escrita.
    :rtype: Path
    :raises IoFailure: Si falla la escritura.
    """
    if not report.points:
        raise EmptyInput("el reporte de Bland-Altman no tiene puntos")

    with matplotlib.rc_context(SVG_RC):
        figure: Figure = _new_figure()
        ax = figure.add_subplot(1, 1, 1)
        ax.scatter(
            [p.pair_mean for p in report.points],
            [p.difference for p in report.points],
            gid=GIDS["POINTS"],
            **STYLES["POINTS"],
        )
        lower, upper = report.limits
        ax.axhline(report.d_bar, gid=GIDS["MEAN"], **STYLES["MEAN"])
        ax.axhline(upper, gid=GIDS["UPPER"], **STYLES["LIMIT"])
        ax.axhline(lower, gid=GIDS["LOWER"], **STYLES["LIMIT"])

        names = {"a": report.instrument_a or "a", "b": report.instrument_b or "b"}
        ax.set_xlabel(LABELS["BA_X"])
        ax.set_ylabel(LABELS["BA_Y"].format(**names))
        ax.set_title(LABELS["BA_TITLE"].format(**names))
        ax.grid(True, **STYLES["GRID"])
        return _save(figure, path)


def emit_deviation_svg(report: DeviationReport, path: PathLike) -> Path:
    """
    Dispersión (verdadero, medido) con la diagonal y = x; ejes en [0, 100].

    :param report: Reporte con al menos un punto.
    :type report: DeviationReport
    :param path: Archivo de salida.
    :type path: PathLike
    :return: ruta escrita.
    :rtype: Path
    :raises IoFailure: Si falla la escritura.
    """
    if not report.points:
        raise EmptyInput("el reporte de desviaciones no tiene puntos")

    with matplotlib.rc_context(SVG_RC):
        figure: Figure = _new_figure()
        ax = figure.add_subplot(1, 1, 1)
        ax.plot(list(AXIS_RANGE), list(AXIS_RANGE), gid=GIDS["DIAGONAL"], **STYLES["DIAGONAL"])
        ax.scatter(
            [p.true_value for p in report.points],
            [p.measured_value for p in report.points],
            gid=GIDS["POINTS"],
            **STYLES["POINTS"],
        )
        ax.set_xlim(*AXIS_RANGE)
        ax.set_ylim(*AXIS_RANGE)
        ax.set_aspect("equal", adjustable="box")

        suffix: str = f" ({report.instrument_id})" if report.instrument_id else ""
        ax.set_xlabel(LABELS["DEV_X"])
        ax.set_ylabel(LABELS["DEV_Y"])
        ax.set_title(LABELS["DEV_TITLE"].format(suffix=suffix))
        ax.grid(True, **STYLES["GRID"])
        return _save(figure, path)
