"""
Concordancia entre dos instrumentos: Bland-Altman e ICC(3,1) a partir de la
ANOVA aditiva de dos factores.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.config import config
from src.errors import (
    AnalysisWarning,
    AmbiguousReplicates,
    DegenerateVariance,
    EmptyInput,
    IncompleteGrid,
    InputError,
    TooFewPairs,
    ZeroDf,
)
from src.services.dataset import AnovaTable, CellKey, MeasurementDataset, PairedMeasurements
from src.services.stats_util import build_anova_table, sample_sd

log: logging.Logger = logging.getLogger(__name__)

INSTRUMENT: str = "Instrument"
PROGRAM: str = "Program"
RESIDUAL: str = "Residual"


# region Bland-Altman
@dataclass(frozen=True, slots=True)
class BlandAltmanPoint:
    pair_mean: float
    difference: float
    object_id: str


@dataclass(frozen=True, slots=True)
class BlandAltmanReport:
    """
    Estadísticos y datos del gráfico de Bland-Altman.

    :param d_bar: Media de las diferencias (a - b).
    :param s_d: Desviación estándar de las diferencias.
    :param k: Multiplicador de los límites.
    :param limits: (inferior, superior) = d_bar -/+ k * s_d.
    :param points: (media del par, diferencia, objeto) en orden de los pares.
    :param outside_count: Puntos fuera de los límites.
    """
    d_bar: float
    s_d: float
    k: float
    limits: Tuple[float, float]
    points: Tuple[BlandAltmanPoint, ...]
    outside_count: int
    instrument_a: str = ""
    instrument_b: str = ""

    @property
    def n_pairs(self) -> int:
        return len(self.points)

    def to_records(self) -> List[Dict[str, object]]:
        return [
            {"pair_mean": p.pair_mean, "difference": p.difference, "object_id": p.object_id}
            for p in self.points
        ]


def bland_altman(pairs: PairedMeasurements, k: Optional[float] = None) -> BlandAltmanReport:
    """
    Diferencias d_i = a_i - b_i, su media, su sd y los límites de concordancia.

    :param pairs: Pares por objeto.
    :type pairs: PairedMeasurements
    :param k: Multiplicador de los límites (default config, 2).
    :type k: Optional[float]
    :return: reporte.
    :rtype: BlandAltmanReport
    :raises TooFewPairs: Con menos de 3 pares.
    """
    k = config.ba_k if k is None else k
    if not (math.isfinite(k) and k > 0):
        raise InputError(f"k debe ser > 0: {k}")
    if len(pairs) < 3:
        raise TooFewPairs(f"Bland-Altman necesita >= 3 pares, hay {len(pairs)}")

    a: np.ndarray = pairs.values_a
    b: np.ndarray = pairs.values_b
    diffs: np.ndarray = a - b
    means: np.ndarray = (a + b) / 2.0

    d_bar: float = float(diffs.mean())
    s_d: float = sample_sd(diffs)
    lower: float = d_bar - k * s_d
    upper: float = d_bar + k * s_d

    points: Tuple[BlandAltmanPoint, ...] = tuple(
        BlandAltmanPoint(pair_mean=float(m), difference=float(d), object_id=obj)
        for m, d, obj in zip(means, diffs, pairs.object_ids)
    )
    outside: int = int(np.sum((diffs < lower) | (diffs > upper)))

    log.debug("Bland-Altman %s - %s: d=%.4f, s_d=%.4f", pairs.instrument_a, pairs.instrument_b, d_bar, s_d)
    return BlandAltmanReport(
        d_bar=d_bar,
        s_d=s_d,
        k=k,
        limits=(lower, upper),
        points=points,
        outside_count=outside,
        instrument_a=pairs.instrument_a,
        instrument_b=pairs.instrument_b,
    )


# region ANOVA de dos factores
def _grid(ds: MeasurementDataset, variable: str) -> Tuple[List[str], List[str], np.ndarray]:
    """
    Matriz objetos x instrumentos con un valor por celda.

    :raises IncompleteGrid: Si falta una celda.
    :raises AmbiguousReplicates: Si una celda tiene repeticiones.
    """
    objects: List[str] = ds.objects(variable)
    instruments: List[str] = ds.instruments(variable)
    if not objects:
        raise EmptyInput(f"no hay registros de la variable {variable}")

    cells: Dict[CellKey, List[float]] = ds.cells(variable)
    grid: np.ndarray = np.empty((len(objects), len(instruments)))
    for i, obj in enumerate(objects):
        for j, inst in enumerate(instruments):
            values: Optional[List[float]] = cells.get((obj, inst))
            if not values:
                raise IncompleteGrid(f"falta la celda ({obj}, {inst}) para {variable}")
            if len(values) > 1:
                raise AmbiguousReplicates(
                    f"{len(values)} repeticiones en ({obj}, {inst}); "
                    "promediar antes con aggregate_replicates"
                )
            grid[i, j] = values[0]
    return objects, instruments, grid


def twoway_anova(ds: MeasurementDataset, variable: str) -> AnovaTable:
    """
    ANOVA aditiva y = Instrument + Program + e, una observación por celda.

    :param ds: Grilla completa objetos x instrumentos.
    :type ds: MeasurementDataset
    :param variable: Variable de respuesta.
    :type variable: str
    :return: filas Instrument, Program y Residual.
    :rtype: AnovaTable
    :raises IncompleteGrid: Si falta una celda.
    """
    objects, instruments, grid = _grid(ds, variable)
    n_obj, n_inst = grid.shape

    grand: float = float(grid.mean())
    row_means: np.ndarray = grid.mean(axis=1)
    col_means: np.ndarray = grid.mean(axis=0)

    ss_instrument: float = float(n_obj * np.sum((col_means - grand) ** 2))
    ss_program: float = float(n_inst * np.sum((row_means - grand) ** 2))
    interaction: np.ndarray = grid - row_means[:, None] - col_means[None, :] + grand
    ss_residual: float = float(np.sum(interaction ** 2))

    return build_anova_table(
        terms=[(INSTRUMENT, n_inst - 1, ss_instrument), (PROGRAM, n_obj - 1, ss_program)],
        residual=((n_obj - 1) * (n_inst - 1), ss_residual),
        n_obs=n_obj * n_inst,
        residual_term=RESIDUAL,
    )


# region ICC
@dataclass(frozen=True, slots=True)
class IccReport:
    """
    Coeficiente de correlación intraclase.

    :param anova: Tabla de twoway_anova.
    :param s2_M: Varianza entre instrumentos, (MS(Instrument) - MS(Residual)) / n_obj.
    :param s2_e: MS(Residual).
    :param rho: s2_M / (s2_M + s2_e).
    :param threshold_verdict: rho >= umbral de buena concordancia.
    :param clamped: s2_M era negativa y se llevó a 0.
    :param icc_consistency: ICC(3,1) clásico entre objetos.
    """
    anova: AnovaTable
    s2_M: float
    s2_e: float
    rho: float
    threshold_verdict: bool
    clamped: bool = False
    icc_consistency: Optional[float] = None
    threshold: float = 0.75
    n_objects: int = 0


def icc3_1(anova: AnovaTable, n_obj: int, threshold: Optional[float] = None) -> IccReport:
    """
    ICC a partir de los cuadrados medios de la ANOVA de dos factores.

    :param anova: Tabla con filas Instrument, Program y Residual.
    :type anova: AnovaTable
    :param n_obj: Número de objetos (programas).
    :type n_obj: int
    :param threshold: Umbral de concordancia (default config).
    :type threshold: Optional[float]
    :return: reporte ICC.
    :rtype: IccReport
    :raises MissingTerm: Si falta alguna fila.
    :raises ZeroDf: Si alguna fila tiene df = 0.
    :raises DegenerateVariance: Si s2_M + s2_e = 0.
    """
    threshold = config.icc_threshold if threshold is None else threshold
    if n_obj < 1:
        raise InputError(f"n_obj debe ser >= 1: {n_obj}")

    instrument = anova.row(INSTRUMENT)
    program = anova.row(PROGRAM)
    residual = anova.row(RESIDUAL)
    for row in (instrument, program, residual):
        if row.df == 0 or row.ms is None:
            raise ZeroDf(f"{row.term} tiene df = 0")

    s2_m: float = (instrument.ms - residual.ms) / n_obj
    clamped: bool = s2_m < 0.0
    if clamped:
        warnings.warn(
            f"icc3_1: componente entre instrumentos negativa ({s2_m:.6g}), se usa 0",
            AnalysisWarning,
            stacklevel=2,
        )
        s2_m = 0.0

    s2_e: float = residual.ms
    if s2_m + s2_e <= 0.0:
        raise DegenerateVariance("s2_M + s2_e = 0: no hay variabilidad entre instrumentos ni residual")
    rho: float = s2_m / (s2_m + s2_e)

    n_inst: int = instrument.df + 1
    consistency_den: float = program.ms + (n_inst - 1) * residual.ms
    consistency: Optional[float] = (
        (program.ms - residual.ms) / consistency_den if consistency_den > 0 else None
    )

    return IccReport(
        anova=anova,
        s2_M=s2_m,
        s2_e=s2_e,
        rho=rho,
        threshold_verdict=rho >= threshold,
        clamped=clamped,
        icc_consistency=consistency,
        threshold=threshold,
        n_objects=n_obj,
    )


def assess_icc(ds: MeasurementDataset, variable: str, threshold: Optional[float] = None) -> IccReport:
    """twoway_anova + icc3_1 sobre un dataset."""
    anova: AnovaTable = twoway_anova(ds, variable)
    report: IccReport = icc3_1(anova, len(ds.objects(variable)), threshold)
    log.info("ICC %s: s2_M=%.4f, rho=%.4f", variable, report.s2_M, report.rho)
    return report
